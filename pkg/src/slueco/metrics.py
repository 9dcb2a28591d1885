"""Levenshtein alignment counts and corpus-level error rates (CER / WER).

Among minimal-cost alignments the one with the most substitutions is kept.
Once the substitution count is fixed, deletions and insertions follow from
``D - I = len(ref) - len(hyp)``, so the counts are unique.
"""

import itertools
from dataclasses import dataclass

import numba
import numpy as np

from slueco.exceptions import UndefinedRateError


@dataclass(frozen=True)
class AlignmentCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_len: int = 0

    def __post_init__(self):
        if min(self.substitutions, self.deletions, self.insertions, self.ref_len) < 0:
            raise ValueError("alignment counts must be non-negative")
        if self.substitutions + self.deletions > self.ref_len:
            raise ValueError("S + D cannot exceed the reference length")

    def __add__(self, other):
        return AlignmentCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_len + other.ref_len,
        )

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions


# explicit signatures compile (or load from cache) at import time, so the first
# scored epoch does not pay for compilation inside a metered session
_CODES = "int64[::1]"


@numba.njit(f"UniTuple(int64, 3)({_CODES}, {_CODES})", cache=True)
def _align_codes(ref, hyp):
    n = ref.shape[0]
    m = hyp.shape[0]
    # cost and substitutions per cell; ties on cost keep the larger substitution count
    cost = np.empty((n + 1, m + 1), dtype=np.int64)
    subs = np.empty((n + 1, m + 1), dtype=np.int64)
    for i in range(n + 1):
        cost[i, 0] = i
        subs[i, 0] = 0
    for j in range(m + 1):
        cost[0, j] = j
        subs[0, j] = 0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            mismatch = 1 if ref[i - 1] != hyp[j - 1] else 0
            best_c = cost[i - 1, j - 1] + mismatch
            best_s = subs[i - 1, j - 1] + mismatch
            c = cost[i, j - 1] + 1
            s = subs[i, j - 1]
            if c < best_c or (c == best_c and s > best_s):
                best_c = c
                best_s = s
            c = cost[i - 1, j] + 1
            s = subs[i - 1, j]
            if c < best_c or (c == best_c and s > best_s):
                best_c = c
                best_s = s
            cost[i, j] = best_c
            subs[i, j] = best_s
    total = cost[n, m]
    s = subs[n, m]
    d = (total - s + n - m) // 2
    ins = total - s - d
    return s, d, ins


@numba.njit(f"int64[:, ::1]({_CODES}, {_CODES}, {_CODES}, {_CODES})", cache=True)
def _align_batch(ref_flat, ref_off, hyp_flat, hyp_off):
    k = ref_off.shape[0] - 1
    out = np.empty((k, 3), dtype=np.int64)
    for p in range(k):
        s, d, i = _align_codes(
            ref_flat[ref_off[p]:ref_off[p + 1]], hyp_flat[hyp_off[p]:hyp_off[p + 1]]
        )
        out[p, 0] = s
        out[p, 1] = d
        out[p, 2] = i
    return out


def _encode(seqs, codebook):
    lengths = np.fromiter(map(len, seqs), dtype=np.int64, count=len(seqs))
    offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    tokens = list(itertools.chain.from_iterable(seqs))
    for tok in dict.fromkeys(tokens):
        codebook.setdefault(tok, len(codebook))
    flat = np.fromiter(map(codebook.__getitem__, tokens), dtype=np.int64, count=len(tokens))
    return flat, offsets


def align(ref, hyp):
    """Align two label sequences with unit edit costs."""
    codebook = {}
    r = np.fromiter((codebook.setdefault(t, len(codebook)) for t in ref), dtype=np.int64)
    h = np.fromiter((codebook.setdefault(t, len(codebook)) for t in hyp), dtype=np.int64)
    s, d, i = _align_codes(r, h)
    return AlignmentCounts(int(s), int(d), int(i), len(r))


def align_many(refs, hyps):
    """Vectorised :func:`align` over paired lists; returns an ``(n, 4)`` int array of S, D, I, N."""
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references but {len(hyps)} hypotheses")
    codebook = {}
    rf, ro = _encode(refs, codebook)
    hf, ho = _encode(hyps, codebook)
    sdi = _align_batch(rf, ro, hf, ho)
    return np.column_stack([sdi, np.diff(ro)])


def corpus_counts(refs, hyps):
    """Sum alignment counts over a corpus (micro-average numerator and denominator)."""
    if not refs:
        return AlignmentCounts()
    s, d, i, n = align_many(refs, hyps).sum(axis=0).tolist()
    return AlignmentCounts(s, d, i, n)


def error_rate(counts):
    """``(S + D + I) / N`` as a fraction. Not clamped: insertions can push it above 1."""
    if counts.ref_len == 0:
        raise UndefinedRateError("error rate undefined for an empty reference")
    return counts.errors / counts.ref_len


def corpus_error_rate(refs, hyps):
    return error_rate(corpus_counts(refs, hyps))
