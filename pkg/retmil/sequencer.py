"""
Turning a bag of N instance embeddings into fixed length subsequences.

The sequence is cut into q full blocks of length l. The r = N - q*l
leftover tokens R are extended to a full last row, depending on r:

- r == 0: no last row at all.
- 0 < r < l/2: write l - r = a*r + b, and fill with R repeated a times
  followed by the first b tokens of R.
- r >= l/2: fill with the first l - r tokens of R.

Remainder tokens thus only ever end up in the last row. Every slot
remembers which token it came from (its provenance), so per-slot scores can
be mapped back onto tokens.

Token indices are 0-based.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError


@dataclass(frozen=True)
class FeatureSequence:

    "The N x d instance embeddings of one bag, in crop order."

    features: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features)
        if features.ndim != 2:
            raise InputError(f"Features must be an N x d matrix, got shape {features.shape}")
        if features.shape[0] < 1:
            raise InputError("A feature sequence needs at least one token")
        if features.shape[1] < 1:
            raise InputError("Feature dimension must be at least 1")
        if not np.all(np.isfinite(features)):
            raise InputError("Feature sequence contains non-finite values")
        object.__setattr__(self, "features", features)

    @property
    def n_tokens(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def __len__(self):
        return self.n_tokens


@dataclass(frozen=True)
class SubsequenceBatch:

    "B rows of l token slots, plus which token each slot holds."

    stack: np.ndarray       # B x l x d
    provenance: np.ndarray  # B x l, token indices
    n_tokens: int

    @property
    def n_rows(self):
        return self.provenance.shape[0]

    @property
    def length(self):
        return self.provenance.shape[1]

    def row(self, i):
        return self.stack[i]


def remainder_indices(start, r, l):
    "Slot indices for the last row, given r leftover tokens starting at `start`."
    remainder = np.arange(start, start + r)
    if 2 * r >= l:
        return np.concatenate([remainder, remainder[:l - r]])
    a, b = divmod(l - r, r)
    return np.concatenate([remainder] * (a + 1) + [remainder[:b]])


def split_indices(n_tokens, l):
    "The B x l provenance matrix for a sequence of n_tokens tokens."
    if l < 1:
        raise InputError(f"Subsequence length must be at least 1, got {l}")
    if n_tokens < 1:
        raise InputError("Can't split an empty sequence")
    q, r = divmod(n_tokens, l)
    rows = np.arange(q * l).reshape(q, l)
    if r == 0:
        return rows
    return np.vstack([rows, remainder_indices(q * l, r, l)[np.newaxis, :]])


def split_and_pad(seq, l, with_stack=True):
    """
    Split a FeatureSequence into its SubsequenceBatch. Without `with_stack`
    only the provenance is computed, and rows can be gathered one at a time
    (see `gather_row`).
    """
    if not isinstance(seq, FeatureSequence):
        seq = FeatureSequence(seq)
    provenance = split_indices(seq.n_tokens, l)
    stack = seq.features[provenance] if with_stack else None
    return SubsequenceBatch(stack=stack, provenance=provenance, n_tokens=seq.n_tokens)


def gather_row(seq, batch, i):
    "The features of row i of the batch, without building the whole stack."
    return seq.features[batch.provenance[i]]


def provenance_scatter(batch, per_slot_scores):
    "Sum per-slot scores into per-token scores using the provenance map."
    scores = np.asarray(per_slot_scores, dtype=np.float64)
    if scores.shape != batch.provenance.shape:
        raise DimensionError(f"Scores of shape {scores.shape} don't match the batch "
                             f"{batch.provenance.shape}")
    return np.bincount(batch.provenance.ravel(), weights=scores.ravel(),
                       minlength=batch.n_tokens)
