"""Pyramidal LSTM encoder and dual-attention LSTM decoder with manual backprop.

The decoder is frame-synchronous: it runs one step per encoder state and
emits one row of logits per step, which the CTC loss aligns to the target.
At step ``t`` the decoder LSTM reads ``[s_{t-1}; h_{t-1}]`` (plus the encoder
state of frame ``t`` when ``DecoderConfig.frame_input`` is set), its new hidden
state queries an attention over the encoder states and a second attention
over embeddings of the labels emitted so far (a start symbol followed by the
greedy argmax of each previous step), and the two contexts are merged into
``s_t = tanh(Ws [ctx_x; ctx_y] + bs)``, then ``logits_t = Wo s_t + bo``.

Parameter names:

* ``enc.{i}.W``, ``enc.{i}.b``: encoder layer ``i``, gates stacked as i, f, g, o
* ``dec.lstm.W``, ``dec.lstm.b``
* ``att_x.Wq``, ``att_x.Wk``, ``att_x.v`` and the same under ``att_y``
* ``dec.embed`` (``V + 1`` rows, the last one is the start symbol)
* ``dec.Ws``, ``dec.bs``, ``dec.Wo``, ``dec.bo``
* ``head.W``, ``head.b``: linear CTC head of encoder-only models
"""

from dataclasses import dataclass

import numpy as np

from slueco.ctc import ctc_loss
from slueco.exceptions import DomainError, InputTooShortError, ShapeError
from slueco.numerics import ParamStore, init_uniform, sigmoid, softmax


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dim: int = 32
    num_layers: int = 2
    pyramid_layers: int = 1
    reduction_mode: str = "concat-pairs"

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1 or self.num_layers < 1:
            raise ValueError("encoder dimensions must be positive")
        if not 0 <= self.pyramid_layers <= self.num_layers:
            raise ValueError("pyramid_layers must lie in [0, num_layers]")
        if self.reduction_mode != "concat-pairs":
            raise ValueError(f"unsupported reduction mode {self.reduction_mode!r}")

    def is_pyramid(self, layer):
        # pyramid layers sit on top of the stack
        return layer >= self.num_layers - self.pyramid_layers

    def layer_input_dim(self, layer):
        base = self.input_dim if layer == 0 else self.hidden_dim
        return 2 * base if self.is_pyramid(layer) else base

    def output_length(self, n_frames):
        for _ in range(self.pyramid_layers):
            n_frames //= 2
        return n_frames

    def min_frames(self):
        return 2 ** self.pyramid_layers


@dataclass(frozen=True)
class DecoderConfig:
    label_vocab_size: int
    embed_dim: int = 16
    hidden_dim: int = 32
    attention_dim: int = 16
    # feed the encoder state of the current frame to the decoder LSTM; without it
    # the decoder can only find its frame through content attention and trains slowly
    frame_input: bool = True
    # let the decoder hidden state enter s_t alongside the two attention contexts
    state_to_output: bool = True

    def __post_init__(self):
        if self.label_vocab_size < 2:
            raise ValueError("label vocabulary needs a blank and at least one label")
        if min(self.embed_dim, self.hidden_dim, self.attention_dim) < 1:
            raise ValueError("decoder dimensions must be positive")

    @property
    def bos(self):
        return self.label_vocab_size


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, dim):
        return cls(np.zeros(dim), np.zeros(dim))


@dataclass
class AttentionResult:
    context: np.ndarray
    weights: np.ndarray


# ------------------------------------------------------------- parameters

def init_params(enc_cfg, dec_cfg=None, head_vocab=None, seed=0, store=None):
    """Create (or extend) a ParamStore with uniform(-1/sqrt(fan_in), +) weights.

    Pass ``dec_cfg`` for the full model or ``head_vocab`` for an encoder
    with a linear CTC head.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore() if store is None else store
    He = enc_cfg.hidden_dim
    for i in range(enc_cfg.num_layers):
        fan_in = enc_cfg.layer_input_dim(i) + He
        store.add(f"enc.{i}.W", init_uniform(rng, (4 * He, fan_in), fan_in))
        store.add(f"enc.{i}.b", init_uniform(rng, (4 * He,), fan_in))
    if dec_cfg is not None:
        Hd, A, Em, V = dec_cfg.hidden_dim, dec_cfg.attention_dim, dec_cfg.embed_dim, dec_cfg.label_vocab_size
        fan_in = 3 * Hd + (He if dec_cfg.frame_input else 0)
        store.add("dec.lstm.W", init_uniform(rng, (4 * Hd, fan_in), fan_in))
        store.add("dec.lstm.b", init_uniform(rng, (4 * Hd,), fan_in))
        for name, key_dim in (("att_x", He), ("att_y", Em)):
            store.add(f"{name}.Wq", init_uniform(rng, (A, Hd), Hd))
            store.add(f"{name}.Wk", init_uniform(rng, (A, key_dim), key_dim))
            store.add(f"{name}.v", init_uniform(rng, (A,), A))
        store.add("dec.embed", init_uniform(rng, (V + 1, Em), Em))
        merged = He + Em + (Hd if dec_cfg.state_to_output else 0)
        store.add("dec.Ws", init_uniform(rng, (Hd, merged), merged))
        store.add("dec.bs", init_uniform(rng, (Hd,), merged))
        store.add("dec.Wo", init_uniform(rng, (V, Hd), Hd))
        store.add("dec.bo", init_uniform(rng, (V,), Hd))
    if head_vocab is not None:
        store.add("head.W", init_uniform(rng, (head_vocab, He), He))
        store.add("head.b", init_uniform(rng, (head_vocab,), He))
    return store


def encoder_param_names(enc_cfg):
    return [f"enc.{i}.{p}" for i in range(enc_cfg.num_layers) for p in ("W", "b")]


# ------------------------------------------------------------------- LSTM

def _lstm_cell(z, c_prev, H):
    i = sigmoid(z[:H])
    f = sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = sigmoid(z[3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return i, f, g, o, c, tc, o * tc


def _lstm_cell_backward(dh, dc, cache):
    i, f, g, o, c_prev, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c_prev * f * (1.0 - f),
        dc * i * (1.0 - g * g),
        do * o * (1.0 - o),
    ])
    return dz, dc * f


def lstm_step(x, prev, W, b):
    """One LSTM step; returns ``(LstmState, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    H = prev.h.shape[0]
    if W.shape != (4 * H, x.shape[0] + H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm_step: x{x.shape}, h{prev.h.shape} vs W{W.shape}, b{b.shape}")
    xh = np.concatenate([x, prev.h])
    i, f, g, o, c, tc, h = _lstm_cell(W @ xh + b, prev.c, H)
    return LstmState(h, c), (xh, (i, f, g, o, prev.c, tc))


def lstm_step_backward(dh, dc, cache, W, dW, db):
    """Backprop one step; accumulates into ``dW``/``db`` and returns ``(dxh, dc_prev)``."""
    xh, cell = cache
    dz, dc_prev = _lstm_cell_backward(dh, dc, cell)
    dW += np.outer(dz, xh)
    db += dz
    return W.T @ dz, dc_prev


def _lstm_sequence(X, W, b, H):
    T, n_in = X.shape
    Wx, Wh = W[:, :n_in], W[:, n_in:]
    Z = X @ Wx.T + b
    h = np.zeros(H)
    c = np.zeros(H)
    hs = np.empty((T, H))
    cells = []
    for t in range(T):
        i, f, g, o, c_new, tc, h = _lstm_cell(Z[t] + Wh @ hs[t - 1] if t else Z[t], c, H)
        cells.append((i, f, g, o, c, tc))
        c = c_new
        hs[t] = h
    return hs, cells


def _lstm_sequence_backward(dHs, X, hs, cells, W, dW, db):
    T, n_in = X.shape
    H = hs.shape[1]
    Wh = W[:, n_in:]
    dZ = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        dz, dc_next = _lstm_cell_backward(dHs[t] + dh_next, dc_next, cells[t])
        dZ[t] = dz
        dh_next = Wh.T @ dz
    dW[:, :n_in] += dZ.T @ X
    if T > 1:
        dW[:, n_in:] += dZ[1:].T @ hs[:-1]
    db += dZ.sum(axis=0)
    return dZ @ W[:, :n_in]


# ---------------------------------------------------------------- encoder

def _pair_frames(X):
    M = X.shape[0] // 2
    return X[:2 * M].reshape(M, 2 * X.shape[1])


def encode(features, cfg, params, return_cache=False):
    """Run the pyramidal encoder over a ``T x F`` feature matrix.

    Returns the ``M x hidden_dim`` encoder states, where ``M`` is ``T``
    halved (floor) once per pyramid layer.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise ShapeError(f"features must be T x {cfg.input_dim}, got {X.shape}")
    if X.shape[0] < cfg.min_frames():
        raise InputTooShortError(
            f"{X.shape[0]} frames cannot pass {cfg.pyramid_layers} pyramid layers"
        )
    layers = []
    for i in range(cfg.num_layers):
        inp = _pair_frames(X) if cfg.is_pyramid(i) else X
        hs, cells = _lstm_sequence(inp, params[f"enc.{i}.W"], params[f"enc.{i}.b"], cfg.hidden_dim)
        layers.append((X.shape[0], inp, hs, cells))
        X = hs
    if return_cache:
        return X, layers
    return X


def encode_backward(dEnc, cfg, params, layers):
    d = dEnc
    for i in range(cfg.num_layers - 1, -1, -1):
        n_prev, inp, hs, cells = layers[i]
        name = f"enc.{i}"
        dinp = _lstm_sequence_backward(
            d, inp, hs, cells, params[f"{name}.W"], params.grad(f"{name}.W"), params.grad(f"{name}.b")
        )
        if cfg.is_pyramid(i):
            width = dinp.shape[1] // 2
            unpaired = np.zeros((n_prev, width))
            unpaired[:2 * dinp.shape[0]] = dinp.reshape(-1, width)
            dinp = unpaired
        d = dinp
    return d


# -------------------------------------------------------------- attention

def _attend(query, keys, key_proj, Wq, v):
    a = Wq @ query
    E = np.tanh(key_proj + a)
    w = softmax(E @ v)
    return w @ keys, w, (query, keys, E, w, a)


def _attend_backward(dctx, cache, Wq, v, dWq, dv):
    """Returns ``(dquery, dkeys, dkey_proj)``; accumulates ``dWq`` and ``dv``."""
    query, keys, E, w, _ = cache
    dw = keys @ dctx
    dkeys = np.outer(w, dctx)
    dscores = w * (dw - w @ dw)
    dv += E.T @ dscores
    dpre = np.outer(dscores, v) * (1.0 - E * E)
    da = dpre.sum(axis=0)
    dWq += np.outer(da, query)
    return Wq.T @ da, dkeys, dpre


def attend(query, keys, Wq, Wk, v):
    """Additive attention: ``score_j = v . tanh(Wq q + Wk k_j)``, weights = softmax(scores)."""
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise DomainError("attention needs at least one key")
    ctx, w, _ = _attend(np.asarray(query, dtype=np.float64), keys, keys @ Wk.T, Wq, v)
    return AttentionResult(ctx, w)


# ---------------------------------------------------------------- decoder

def decode_step(prev_s, prev_state, enc_states, prev_label_embeds, params,
                frame_state=None, _proj=None):
    """One decoder step. Returns ``(logits, s_t, new_state, cache)``.

    ``frame_state`` is the aligned encoder state for decoders built with
    ``frame_input=True``.
    """
    enc_states = np.asarray(enc_states, dtype=np.float64)
    prev_label_embeds = np.asarray(prev_label_embeds, dtype=np.float64)
    if enc_states.shape[0] == 0 or prev_label_embeds.shape[0] == 0:
        raise DomainError("decode_step needs encoder states and a label history")
    if _proj is None:
        kx = enc_states @ params["att_x.Wk"].T
        ky = prev_label_embeds @ params["att_y.Wk"].T
    else:
        kx, ky = _proj
    if frame_state is None:
        x = np.concatenate([prev_s, prev_state.h])
    else:
        x = np.concatenate([prev_s, prev_state.h, frame_state])
    state, lcache = lstm_step(x, prev_state, params["dec.lstm.W"], params["dec.lstm.b"])
    ctx_x, wx, xcache = _attend(state.h, enc_states, kx, params["att_x.Wq"], params["att_x.v"])
    ctx_y, wy, ycache = _attend(state.h, prev_label_embeds, ky, params["att_y.Wq"], params["att_y.v"])
    if params["dec.Ws"].shape[1] > ctx_x.shape[0] + ctx_y.shape[0]:
        u = np.concatenate([ctx_x, ctx_y, state.h])
    else:
        u = np.concatenate([ctx_x, ctx_y])
    s = np.tanh(params["dec.Ws"] @ u + params["dec.bs"])
    logits = params["dec.Wo"] @ s + params["dec.bo"]
    cache = {"lstm": lcache, "att_x": xcache, "att_y": ycache, "u": u, "s": s,
             "wx": wx, "wy": wy}
    return logits, s, state, cache


def _decode(enc, cfg, params):
    E = params["dec.embed"]
    kx = enc @ params["att_x.Wk"].T
    proj_y = E @ params["att_y.Wk"].T
    s = np.zeros(cfg.hidden_dim)
    state = LstmState.zeros(cfg.hidden_dim)
    history = [cfg.bos]
    logits = np.empty((enc.shape[0], cfg.label_vocab_size))
    steps = []
    for t in range(enc.shape[0]):
        hist = np.array(history)
        out, s, state, cache = decode_step(
            s, state, enc, E[hist], params,
            frame_state=enc[t] if cfg.frame_input else None,
            _proj=(kx, proj_y[hist]),
        )
        cache["hist"] = hist
        logits[t] = out
        steps.append(cache)
        history.append(int(np.argmax(out)))
    return logits, steps


def _decode_backward(dlogits, enc, cfg, params, steps):
    Hd = cfg.hidden_dim
    g = params.grad
    E = params["dec.embed"]
    Wo, Ws, Wd = params["dec.Wo"], params["dec.Ws"], params["dec.lstm.W"]
    He = enc.shape[1]
    dEnc = np.zeros_like(enc)
    dKx = np.zeros((enc.shape[0], cfg.attention_dim))
    dProjY = np.zeros((E.shape[0], cfg.attention_dim))
    dE = g("dec.embed")
    ds_next = np.zeros(Hd)
    dh_next = np.zeros(Hd)
    dc_next = np.zeros(Hd)
    for t in range(len(steps) - 1, -1, -1):
        st = steps[t]
        dl = dlogits[t]
        g("dec.Wo")[...] += np.outer(dl, st["s"])
        g("dec.bo")[...] += dl
        ds = Wo.T @ dl + ds_next
        dpre = ds * (1.0 - st["s"] ** 2)
        g("dec.Ws")[...] += np.outer(dpre, st["u"])
        g("dec.bs")[...] += dpre
        du = Ws.T @ dpre
        dq_x, dkeys_x, dkp_x = _attend_backward(
            du[:He], st["att_x"], params["att_x.Wq"], params["att_x.v"], g("att_x.Wq"), g("att_x.v"))
        dEnc += dkeys_x
        dKx += dkp_x
        dq_y, dkeys_y, dkp_y = _attend_backward(
            du[He:He + E.shape[1]], st["att_y"], params["att_y.Wq"], params["att_y.v"], g("att_y.Wq"), g("att_y.v"))
        np.add.at(dE, st["hist"], dkeys_y)
        np.add.at(dProjY, st["hist"], dkp_y)
        dh = dq_x + dq_y + dh_next
        if cfg.state_to_output:
            dh = dh + du[He + E.shape[1]:]
        dxh, dc_next = lstm_step_backward(dh, dc_next, st["lstm"], Wd, g("dec.lstm.W"), g("dec.lstm.b"))
        # xh = [s_{t-1}; h_{t-1} (input copy); enc_t if frame_input; h_{t-1} (recurrent)]
        ds_next = dxh[:Hd]
        dh_next = dxh[Hd:2 * Hd] + dxh[-Hd:]
        if cfg.frame_input:
            dEnc[t] += dxh[2 * Hd:2 * Hd + He]
    g("att_x.Wk")[...] += dKx.T @ enc
    dEnc += dKx @ params["att_x.Wk"]
    g("att_y.Wk")[...] += dProjY.T @ E
    dE += dProjY @ params["att_y.Wk"]
    return dEnc


# ------------------------------------------------------------ full model

def forward(features, enc_cfg, dec_cfg, params, return_cache=False):
    """Logit matrix ``M x V`` for one utterance.

    With ``dec_cfg=None`` the encoder feeds the linear ``head.*`` layer
    instead of the attention decoder.
    """
    enc, layers = encode(features, enc_cfg, params, return_cache=True)
    if dec_cfg is None:
        logits = enc @ params["head.W"].T + params["head.b"]
        steps = None
    else:
        logits, steps = _decode(enc, dec_cfg, params)
    if return_cache:
        return logits, (enc, layers, steps)
    return logits


def backward(dlogits, enc_cfg, dec_cfg, params, cache):
    """Accumulate parameter gradients for ``dlogits`` into ``params``."""
    enc, layers, steps = cache
    if dec_cfg is None:
        params.grad("head.W")[...] += dlogits.T @ enc
        params.grad("head.b")[...] += dlogits.sum(axis=0)
        dEnc = dlogits @ params["head.W"]
    else:
        dEnc = _decode_backward(dlogits, enc, dec_cfg, params, steps)
    return encode_backward(dEnc, enc_cfg, params, layers)


def loss_and_grad(features, target, enc_cfg, dec_cfg, params):
    """CTC loss of one utterance; gradients are accumulated into ``params``."""
    logits, cache = forward(features, enc_cfg, dec_cfg, params, return_cache=True)
    nll, dlogits = ctc_loss(logits, target)
    backward(dlogits, enc_cfg, dec_cfg, params, cache)
    return nll
