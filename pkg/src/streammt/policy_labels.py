"""Read/write pseudo-labels from attention matrices.

A label l[i, j] = 1 marks that target token i may be written once source
tokens 1..j have been read.  A row fires where the cumulative attention
mass reaches the confidence threshold gamma AND the row's attention peak
has already been observed; a final pass forces the label matrix to be
monotone across rows (a later target token never unlocks earlier than its
predecessor).  gamma = 1.0 is, by definition, the non-streaming case: every
row fires only at the last source position, whatever the attention looks
like.  (Evaluating the threshold rule literally at gamma = 1 would also
fire early on degenerate rows whose cumulative mass saturates to exactly
1.0 before the end; the definition wins.)

Cumulative sums and threshold comparisons run in float64 so that the naive
pure-Python oracle (plain floats are IEEE doubles) is bit-identical to the
vectorized path.

Conventions: the peak argmax breaks ties toward the smallest index, the
threshold comparison is >= with no epsilon, and a row that never reaches
gamma (possible within float error for gamma near 1) gets its single 1 at
the last column, since every target token must eventually be writable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError
from .model import AttentionMatrix


@dataclass(frozen=True)
class PolicyLabelMatrix:
    """|y| x |x| binary matrix of read/write pseudo-labels."""
    labels: np.ndarray          # uint8, values 0/1
    gamma: float
    source_len: int
    target_len: int

    def validate(self):
        L = self.labels
        if L.shape != (self.target_len, self.source_len):
            raise ContractError("label shape disagrees with recorded lengths")
        if not np.all((L == 0) | (L == 1)):
            raise ContractError("labels must be 0/1")
        if np.any(np.diff(L.astype(np.int8), axis=1) < 0):
            raise ContractError("label rows must be non-decreasing left to right")
        if not np.all(L[:, -1] == 1):
            raise ContractError("every row must fire at the last column")
        if L.shape[0] > 1 and np.any((np.diff(L.astype(np.int8), axis=0) > 0)):
            raise ContractError("labels must be monotone across rows")


@dataclass(frozen=True)
class ReadOffsets:
    """offsets[i] = 1-based first source position where row i fires."""
    offsets: np.ndarray


def cumulative(attention: AttentionMatrix) -> np.ndarray:
    """Row-wise cumulative attention mass, float64."""
    w = attention.weights
    if np.any(w < 0):
        raise ContractError("attention weights must be non-negative")
    return np.cumsum(w.astype(np.float64), axis=1)


def _gen_labels_batch(weights: np.ndarray, gamma: float) -> np.ndarray:
    """Vectorized label generation for a (batch, |y|, |x|) stack."""
    if not 0.0 < gamma <= 1.0:
        raise ConfigurationError(f"gamma must be in (0, 1], got {gamma}")
    b, ty, tx = weights.shape
    L = np.zeros((b, ty, tx), dtype=np.uint8)
    if gamma == 1.0:
        L[:, :, -1] = 1
        return L
    f = np.cumsum(weights.astype(np.float64), axis=2)
    peak = np.argmax(weights, axis=2)                       # first max per row
    cols = np.arange(tx)
    raw = (f >= gamma) & (cols[None, None, :] >= peak[:, :, None])
    raw[:, :, -1] |= ~raw.any(axis=2)                       # float-error guard
    L[:] = raw
    for i in range(1, ty):                                  # monotonic fix in i
        L[:, i, :] &= L[:, i - 1, :]
    return L


def gen_policy_labels(attention: AttentionMatrix, gamma: float) -> PolicyLabelMatrix:
    """Labels for one attention matrix (wrapper over the batched kernel)."""
    L = _gen_labels_batch(attention.weights[None, :, :], gamma)[0]
    return PolicyLabelMatrix(L, gamma=gamma, source_len=attention.source_len,
                             target_len=attention.target_len)


def brute_force_labels(attention: AttentionMatrix, gamma: float) -> PolicyLabelMatrix:
    """Independent oracle: explicit loops and per-cell re-summation.

    Must equal gen_policy_labels bit-exactly on every input.  Accumulation
    is in plain Python floats, i.e. IEEE doubles, matching the float64
    cumulative sums of the fast path.
    """
    if not 0.0 < gamma <= 1.0:
        raise ConfigurationError(f"gamma must be in (0, 1], got {gamma}")
    A = attention.weights
    ty, tx = A.shape
    L = [[0] * tx for _ in range(ty)]
    if gamma == 1.0:
        for i in range(ty):
            L[i][tx - 1] = 1
    else:
        for i in range(ty):
            peak, peak_val = 0, float(A[i, 0])
            for j in range(1, tx):
                if float(A[i, j]) > peak_val:
                    peak, peak_val = j, float(A[i, j])
            for j in range(tx):
                f_ij = 0.0
                for k in range(j + 1):
                    f_ij += float(A[i, k])
                if f_ij >= gamma and peak <= j:
                    L[i][j] = 1
            if sum(L[i]) == 0:
                L[i][tx - 1] = 1
        for i in range(1, ty):
            for j in range(tx):
                if L[i - 1][j] == 0:
                    L[i][j] = 0
    return PolicyLabelMatrix(np.array(L, dtype=np.uint8), gamma=gamma,
                             source_len=tx, target_len=ty)


def read_offsets(label_matrix: PolicyLabelMatrix) -> ReadOffsets:
    """First firing column per row, 1-based; non-decreasing by construction."""
    L = label_matrix.labels
    if np.any(L.sum(axis=1) == 0):
        raise ContractError("a label row has no firing column")
    return ReadOffsets(np.argmax(L == 1, axis=1) + 1)


def label_density(label_matrix: PolicyLabelMatrix) -> float:
    """Fraction of cells marked writable; a diagnostic for choosing gamma."""
    return float(label_matrix.labels.mean())
