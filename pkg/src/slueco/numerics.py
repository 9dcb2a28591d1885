"""Dense float64 helpers, a named parameter store, SGD and a gradient checker.

Matrices are plain ``numpy`` float64 arrays; vectors are 1-D arrays.
"""

import math

import numpy as np

from slueco.exceptions import DivergenceError, DomainError, ShapeError

DTYPE = np.float64


def affine(x, W, b):
    """Return ``W @ x + b``."""
    x = np.asarray(x, dtype=DTYPE)
    W = np.asarray(W, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if W.ndim != 2 or x.shape != (W.shape[1],) or b.shape != (W.shape[0],):
        raise ShapeError(f"affine: x{x.shape}, W{W.shape}, b{b.shape} do not conform")
    return W @ x + b


def sigmoid(x):
    # split by sign to avoid overflow in exp
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(v):
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0:
        raise DomainError("softmax of an empty vector")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(v):
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0:
        raise DomainError("log_softmax of an empty vector")
    shifted = v - v.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def logsumexp(v):
    """Stable ``log(sum(exp(v)))``; ``-inf`` entries stand for probability zero."""
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0:
        return -math.inf
    m = v.max()
    if m == -math.inf:
        return -math.inf
    return float(m + np.log(np.exp(v - m).sum()))


def init_uniform(rng, shape, fan_in):
    s = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape).astype(DTYPE)


class ParamStore:
    """Named float64 tensors, each paired with a gradient buffer of the same shape."""

    def __init__(self):
        self._values = {}
        self._grads = {}

    def add(self, name, value):
        if name in self._values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=DTYPE)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def __contains__(self, name):
        return name in self._values

    def __getitem__(self, name):
        return self._values[name]

    def __setitem__(self, name, value):
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self._values[name].shape:
            raise ShapeError(
                f"{name}: expected shape {self._values[name].shape}, got {value.shape}"
            )
        self._values[name][...] = value

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def grad(self, name):
        return self._grads[name]

    def names(self):
        return list(self._values)

    def items(self):
        return self._values.items()

    def zero_grad(self):
        for g in self._grads.values():
            g.fill(0.0)

    def grad_norm(self):
        return math.sqrt(sum(float(np.vdot(g, g)) for g in self._grads.values()))

    def state_dict(self):
        return {k: v.copy() for k, v in self._values.items()}

    def load_state_dict(self, state, strict=True):
        if strict and set(state) != set(self._values):
            missing = set(self._values) - set(state)
            extra = set(state) - set(self._values)
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in state.items():
            if k in self._values:
                self[k] = v

    def copy(self):
        other = ParamStore()
        for k, v in self._values.items():
            other.add(k, v)
        return other


def clip_grad_norm(store, max_norm):
    """Rescale all gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = store.grad_norm()
    if not math.isfinite(norm):
        raise DivergenceError(f"non-finite gradient norm {norm}")
    if norm > max_norm:
        scale = max_norm / norm
        for name in store:
            store.grad(name)[...] *= scale
    return norm


def sgd_step(store, lr):
    if not lr > 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    for name in store:
        g = store.grad(name)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name!r}")
    for name in store:
        store[name] -= lr * store.grad(name)
    store.zero_grad()


def grad_check(f, store, eps=1e-5, n_samples=None, rng=None):
    """Compare analytic gradients with central differences.

    ``f(store)`` must return the scalar loss and accumulate its gradient into
    ``store``. Returns the largest ``|analytic - numeric| / max(1, |analytic|,
    |numeric|)`` over the checked coordinates. When ``n_samples`` is given,
    that many coordinates are drawn per parameter slot; otherwise every
    coordinate is checked.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    store.zero_grad()
    f(store)
    analytic = {name: store.grad(name).copy() for name in store}
    store.zero_grad()

    worst = 0.0
    for name in store:
        value = store[name]
        flat = value.reshape(-1)
        if n_samples is None or n_samples >= flat.size:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=n_samples, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = f(store)
            flat[i] = orig - eps
            down = f(store)
            flat[i] = orig
            store.zero_grad()
            numeric = (up - down) / (2 * eps)
            a = a_flat[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
