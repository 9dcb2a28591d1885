"""scikit-learn style wrapper around the CTC-trained encoder/decoder."""

import logging
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from slueco.checkpoint import Checkpoint
from slueco.ctc import ctc_greedy_decode, min_frames
from slueco.exceptions import DivergenceError, IncompatibleTransferError, ShapeError
from slueco.metrics import corpus_error_rate
from slueco.model import (
    DecoderConfig,
    EncoderConfig,
    encode,
    encoder_param_names,
    forward,
    init_params,
    loss_and_grad,
)
from slueco.numerics import clip_grad_norm, log_softmax, sgd_step
from slueco.selection import best_index

logger = logging.getLogger(__name__)

ARCHITECTURES = ("full", "encoder")
BLANK_TOKEN = "<blank>"

# output rows indexed by label; transfer remaps these by label name
_LABEL_ROWS = ("dec.Wo", "dec.bo", "dec.embed")


def check_sequences(X, n_features=None, min_frames=1):
    """Validate a ragged batch of ``T_i x F`` feature matrices.

    Returns a list of float64 arrays. All matrices must share ``F`` (and match
    ``n_features`` when given) and hold only finite values.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError("X must be a sequence of 2-D arrays, got a single 2-D array")
    out = []
    for i, x in enumerate(X):
        a = np.asarray(x, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"X[{i}] must be 2-D (frames x features), got ndim={a.ndim}")
        if n_features is None:
            n_features = a.shape[1]
        if a.shape[1] != n_features:
            raise ShapeError(f"X[{i}] has {a.shape[1]} features, expected {n_features}")
        if a.shape[0] < min_frames:
            raise ValueError(f"X[{i}] has {a.shape[0]} frames, need at least {min_frames}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"X[{i}] contains non-finite values")
        out.append(a)
    if not out:
        raise ValueError("X is empty")
    return out


def check_targets(y, n_samples):
    y = [list(seq) for seq in y]
    if len(y) != n_samples:
        raise ValueError(f"X has {n_samples} samples but y has {len(y)}")
    return y


class SLUTagger(BaseEstimator):
    """Maps feature sequences to label sequences (concepts or words) with CTC.

    ``architecture="full"`` is the pyramidal encoder plus dual-attention
    decoder; ``"encoder"`` puts a linear CTC head on the encoder states.

    ``fit`` runs ``n_epochs`` of per-utterance SGD. When an ``eval_set`` is
    given, the epoch with the lowest error on it is kept and the learning
    rate is halved after ``lr_patience`` epochs without improvement (counted
    only once the error has started to fall).

    Attributes set by ``fit``: ``classes_``, ``n_features_in_``, ``params_``,
    ``history_``, ``best_epoch_``.
    """

    def __init__(self, architecture="full", hidden_dim=32, embed_dim=16, attention_dim=16,
                 num_layers=2, pyramid_layers=1, frame_input=True, state_to_output=True,
                 n_epochs=30, lr=0.05, lr_patience=3, clip_norm=5.0, random_state=0):
        self.architecture = architecture
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.attention_dim = attention_dim
        self.num_layers = num_layers
        self.pyramid_layers = pyramid_layers
        self.frame_input = frame_input
        self.state_to_output = state_to_output
        self.n_epochs = n_epochs
        self.lr = lr
        self.lr_patience = lr_patience
        self.clip_norm = clip_norm
        self.random_state = random_state

    # ------------------------------------------------------------ configs

    def _configs(self, n_features, n_outputs):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        enc = EncoderConfig(n_features, self.hidden_dim, self.num_layers, self.pyramid_layers)
        dec = None
        if self.architecture == "full":
            dec = DecoderConfig(n_outputs, self.embed_dim, self.hidden_dim, self.attention_dim,
                                self.frame_input, self.state_to_output)
        return enc, dec

    @property
    def _n_outputs(self):
        return len(self.classes_) + 1

    def _init_store(self):
        enc, dec = self._configs(self.n_features_in_, self._n_outputs)
        store = init_params(enc, dec, head_vocab=None if dec else self._n_outputs,
                            seed=self.random_state)
        # a zero output layer makes the untrained model emit only blanks
        for name in ("dec.Wo", "dec.bo", "head.W", "head.b"):
            if name in store:
                store[name] = np.zeros_like(store[name])
        return store, enc, dec

    # ------------------------------------------------------------ encoding

    def _encode_targets(self, y):
        index = {c: i + 1 for i, c in enumerate(self.classes_)}
        out = []
        for seq in y:
            try:
                out.append([index[c] for c in seq])
            except KeyError as exc:
                raise ValueError(f"label {exc.args[0]!r} not in classes_") from None
        return out

    def _decode_labels(self, ids):
        return [self.classes_[i - 1] for i in ids]

    # ----------------------------------------------------------------- fit

    def fit(self, X, y, eval_set=None, classes=None, init_from=None):
        """Train on feature matrices ``X`` and label sequences ``y``.

        ``eval_set`` is an ``(X_dev, y_dev)`` pair used for epoch selection,
        ``classes`` fixes the label inventory (default: labels seen in
        ``y``), and ``init_from`` is a :class:`Checkpoint` whose compatible
        parameters seed the model before training.
        """
        X = check_sequences(X)
        y = check_targets(y, len(X))
        self.n_features_in_ = X[0].shape[1]
        labels = set(c for seq in y for c in seq) if classes is None else set(classes)
        labels.update(c for seq in y for c in seq)
        self.classes_ = sorted(labels)

        store, enc, dec = self._init_store()
        self.transferred_ = []
        if init_from is not None:
            self.transferred_ = transfer_parameters(init_from, store, self.classes_, enc)
        self.params_ = store

        targets = self._encode_targets(y)
        for i, (x, t) in enumerate(zip(X, targets)):
            if enc.output_length(x.shape[0]) < min_frames(t):
                raise ValueError(f"sample {i}: {x.shape[0]} frames too short for its target")
        if eval_set is not None:
            X_dev = check_sequences(eval_set[0], self.n_features_in_)
            y_dev = check_targets(eval_set[1], len(X_dev))

        rng = np.random.default_rng(self.random_state)
        lr = float(self.lr)
        self.history_ = []
        snapshots = []
        best = math.inf
        initial = None
        stale = 0
        for epoch in range(1, self.n_epochs + 1):
            total = 0.0
            for i in rng.permutation(len(X)):
                nll = loss_and_grad(X[i], targets[i], enc, dec, store)
                if not math.isfinite(nll):
                    raise DivergenceError(f"epoch {epoch}, sample {i}: non-finite loss {nll}")
                total += nll
                if self.clip_norm:
                    clip_grad_norm(store, self.clip_norm)
                if lr > 0:
                    sgd_step(store, lr)
                else:
                    store.zero_grad()
            record = {"epoch": epoch, "train_loss": total / len(X), "lr": lr}
            if eval_set is not None:
                err = 100.0 * self._error_rate(X_dev, y_dev)
                record["dev_error"] = err
                snapshots.append(store.state_dict())
                if initial is None:
                    initial = err
                if err < best:
                    best, stale = err, 0
                elif best < initial:
                    stale += 1
                    if self.lr_patience and stale >= self.lr_patience:
                        lr /= 2.0
                        stale = 0
            self.history_.append(record)
            logger.info("epoch %d %s", epoch, record)

        if eval_set is not None and snapshots:
            k = best_index([h["dev_error"] for h in self.history_])
            store.load_state_dict(snapshots[k])
            self.best_epoch_ = k + 1
        else:
            self.best_epoch_ = self.n_epochs
        return self

    def _error_rate(self, X, y):
        refs = [list(seq) for seq in y]
        hyps = self._predict_checked(X)
        return corpus_error_rate(refs, hyps)

    # ------------------------------------------------------------- predict

    def _predict_checked(self, X):
        enc, dec = self._configs(self.n_features_in_, self._n_outputs)
        return [self._decode_labels(ctc_greedy_decode(forward(x, enc, dec, self.params_)))
                for x in X]

    def predict(self, X):
        """Greedy CTC decoding; one label list per input sequence."""
        check_is_fitted(self, "params_")
        return self._predict_checked(check_sequences(X, self.n_features_in_))

    def predict_log_proba(self, X):
        """Per-frame log distributions over ``[blank] + classes_``."""
        check_is_fitted(self, "params_")
        enc, dec = self._configs(self.n_features_in_, self._n_outputs)
        return [log_softmax(forward(x, enc, dec, self.params_))
                for x in check_sequences(X, self.n_features_in_)]

    def transform(self, X):
        """Encoder states (``M_i x hidden_dim``) for each sequence."""
        check_is_fitted(self, "params_")
        enc, _ = self._configs(self.n_features_in_, self._n_outputs)
        return [encode(x, enc, self.params_) for x in check_sequences(X, self.n_features_in_)]

    def score(self, X, y):
        """``1 - error rate`` (higher is better), micro-averaged over ``X``."""
        check_is_fitted(self, "params_")
        X = check_sequences(X, self.n_features_in_)
        return 1.0 - self._error_rate(X, check_targets(y, len(X)))

    # ---------------------------------------------------------- checkpoints

    def to_checkpoint(self, **provenance):
        check_is_fitted(self, "params_")
        config = dict(self.get_params(), n_features_in=self.n_features_in_)
        return Checkpoint(self.params_.state_dict(), config, list(self.classes_), provenance)

    @classmethod
    def from_checkpoint(cls, ckpt):
        config = dict(ckpt.config)
        n_features = config.pop("n_features_in")
        est = cls(**config)
        est.n_features_in_ = n_features
        est.classes_ = list(ckpt.classes)
        store, _, _ = est._init_store()
        store.load_state_dict(ckpt.params)
        est.params_ = store
        est.history_ = []
        est.best_epoch_ = 0
        return est


def transfer_parameters(ckpt, store, classes, enc_cfg):
    """Copy compatible parameters from ``ckpt`` into ``store``.

    Encoder weights must match in shape. Label-indexed rows (output layer,
    label embeddings, linear head) are copied for labels present in both
    inventories; the blank and start-symbol rows always carry over. The
    linear CTC head of an encoder-only model is disposable and never
    copied. Other parameters are copied when present with identical shape.
    Returns the names that received values.
    """
    src = ckpt.params
    for name in encoder_param_names(enc_cfg):
        if name not in src:
            raise IncompatibleTransferError(f"source checkpoint lacks {name}")
        if src[name].shape != store[name].shape:
            raise IncompatibleTransferError(
                f"{name}: source shape {src[name].shape} vs target {store[name].shape} "
                f"(feature dim or encoder size differ)"
            )
    src_index = {c: i + 1 for i, c in enumerate(ckpt.classes)}
    dst_rows, src_rows = [0], [0]
    for j, c in enumerate(classes, start=1):
        if c in src_index:
            dst_rows.append(j)
            src_rows.append(src_index[c])
    done = []
    for name in store.names():
        if name not in src or name.startswith("head."):
            continue
        if name in _LABEL_ROWS:
            value = store[name].copy()
            if value.shape[1:] != src[name].shape[1:]:
                raise IncompatibleTransferError(f"{name}: incompatible width")
            value[dst_rows] = src[name][src_rows]
            if name == "dec.embed":
                value[-1] = src[name][-1]
            store[name] = value
        elif src[name].shape == store[name].shape:
            store[name] = src[name]
        else:
            raise IncompatibleTransferError(
                f"{name}: source shape {src[name].shape} vs target {store[name].shape}"
            )
        done.append(name)
    return done
