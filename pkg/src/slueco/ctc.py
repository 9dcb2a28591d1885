"""Connectionist temporal classification loss and greedy decoding.

Label 0 is the blank. All path sums run in the log domain.
"""

import numpy as np

from slueco.exceptions import InfeasibleAlignmentError, ShapeError
from slueco.numerics import log_softmax

BLANK = 0
NEG_INF = -np.inf


def _extend(target):
    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = target
    # a skip from s-2 to s is allowed when s is a label differing from the label at s-2
    skip = np.zeros(len(ext), dtype=bool)
    if len(target) > 1:
        skip[3::2] = np.asarray(target[1:]) != np.asarray(target[:-1])
    return ext, skip


def min_frames(target):
    """Fewest frames able to carry ``target``: one per label plus a blank between repeats."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _forward(lp, ext, skip):
    M, S = lp.shape[0], len(ext)
    alpha = np.full((M, S), NEG_INF)
    emit = lp[:, ext]
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, M):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]
    return alpha


def _backward(lp, ext, skip):
    # beta[t, s]: log prob of emitting the remaining frames t+1.. given state s at t
    M, S = lp.shape[0], len(ext)
    beta = np.full((M, S), NEG_INF)
    emit = lp[:, ext]
    beta[M - 1, S - 1] = 0.0
    if S > 1:
        beta[M - 1, S - 2] = 0.0
    for t in range(M - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc
    return beta


def ctc_loss(logits, target, blank=BLANK):
    """Negative log-likelihood of ``target`` and its gradient w.r.t. ``logits``.

    ``logits`` is an ``(M, V)`` array of unnormalised scores (already
    log-softmaxed rows are accepted unchanged, since log-softmax is
    idempotent). ``target`` holds labels in ``1..V-1``.

    Returns ``(nll, grad)`` where ``grad`` has the shape of ``logits``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"logits must be (M, V) with V >= 2, got {logits.shape}")
    if blank != BLANK:
        raise ValueError("only blank=0 is supported")
    target = np.asarray(list(target), dtype=np.int64)
    M, V = logits.shape
    if target.size and (target.min() < 1 or target.max() >= V):
        raise ValueError(f"target labels must lie in 1..{V - 1}")
    need = min_frames(target.tolist())
    if need > M:
        raise InfeasibleAlignmentError(
            f"target of length {len(target)} needs {need} frames, only {M} available"
        )

    lp = log_softmax(logits)
    ext, skip = _extend(target)
    alpha = _forward(lp, ext, skip)
    beta = _backward(lp, ext, skip)
    S = len(ext)
    log_z = np.logaddexp(alpha[M - 1, S - 1], alpha[M - 1, S - 2]) if S > 1 else alpha[M - 1, 0]

    occupancy = np.exp(alpha + beta - log_z)
    posterior = np.zeros((M, V))
    for s in range(S):
        posterior[:, ext[s]] += occupancy[:, s]
    grad = np.exp(lp) - posterior
    return float(-log_z), grad


def ctc_greedy_decode(log_probs, blank=BLANK):
    """Best-path decoding: per-frame argmax, merge repeats, drop blanks."""
    log_probs = np.asarray(log_probs)
    if log_probs.shape[0] == 0:
        return []
    path = np.argmax(log_probs, axis=1)
    out = []
    prev = None
    for k in path.tolist():
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out
