"""Partial DCT compression operators ``A = S F``.

``F`` is the orthonormal DCT-II matrix and ``S`` keeps a seeded, reordered
subset of its rows.  Forward and adjoint products run through ``scipy.fft``
in O(d log d); the dense matrix is kept only as a cross-check.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.fft
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import as_real_vector, check_length


def dct(x):
    """Orthonormal DCT-II of a real vector (``F @ x``)."""
    x = as_real_vector(x)
    return scipy.fft.dct(x, type=2, norm="ortho")


def idct(y):
    """Inverse of :func:`dct`, equal to ``F.T @ y``."""
    y = as_real_vector(y)
    return scipy.fft.idct(y, type=2, norm="ortho")


def dct_matrix(d):
    """Dense unitary DCT matrix built entry by entry (test oracle)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    k = np.arange(d)[:, None]
    j = np.arange(d)[None, :]
    F = np.sqrt(2.0 / d) * np.cos(k * (2 * j + 1) * np.pi / (2 * d))
    F[0, :] = np.sqrt(1.0 / d)
    return F


@dataclass(frozen=True)
class PartialOrthonormalOperator:
    dim: int
    rows: int
    seed: int
    row_selection: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        sel = np.asarray(self.row_selection, dtype=np.int64)
        if sel.shape != (self.rows,):
            raise ValueError("row_selection length must equal rows")
        if self.rows > self.dim:
            raise ValueError(f"rows ({self.rows}) exceeds dim ({self.dim})")
        if len(np.unique(sel)) != self.rows:
            raise ValueError("row_selection contains duplicates")
        if self.rows and (sel.min() < 0 or sel.max() >= self.dim):
            raise ValueError("row_selection out of range")
        sel.setflags(write=False)
        object.__setattr__(self, "row_selection", sel)

    def __eq__(self, other):
        if not isinstance(other, PartialOrthonormalOperator):
            return NotImplemented
        return (self.dim, self.rows, self.seed) == (other.dim, other.rows, other.seed) and (
            np.array_equal(self.row_selection, other.row_selection)
        )

    def __hash__(self):
        return hash((self.dim, self.rows, self.seed))

    def forward(self, x):
        return forward(self, x)

    def adjoint(self, y):
        return adjoint(self, y)

    def matrix(self):
        """Dense ``S F`` (rows x dim); only meant for small sizes."""
        return dct_matrix(self.dim)[self.row_selection]

    def to_record(self):
        return {"dim": int(self.dim), "rows": int(self.rows), "seed": int(self.seed)}

    @classmethod
    def from_record(cls, record):
        return make_partial_dct(record["dim"], record["rows"], record["seed"])


def make_partial_dct(dim, rows, seed):
    """Draw ``rows`` distinct DCT rows in a seeded random order."""
    dim, rows = int(dim), int(rows)
    if dim < 1 or rows < 1:
        raise ValueError("dim and rows must be >= 1")
    if rows > dim:
        raise ValueError(f"rows ({rows}) exceeds dim ({dim})")
    rng = np.random.default_rng(seed)
    # permutation() is a Fisher-Yates shuffle, so the prefix is both a
    # draw without replacement and its ordering
    selection = rng.permutation(dim)[:rows]
    return PartialOrthonormalOperator(dim=dim, rows=rows, seed=int(seed), row_selection=selection)


def forward(op, x, dense=False):
    x = as_real_vector(x)
    check_length(x, op.dim, "x")
    if dense:
        return op.matrix() @ x
    return scipy.fft.dct(x, type=2, norm="ortho")[op.row_selection]


def adjoint(op, y, dense=False):
    y = as_real_vector(y)
    check_length(y, op.rows, "y")
    if dense:
        return op.matrix().T @ y
    full = np.zeros(op.dim)
    full[op.row_selection] = y
    return scipy.fft.idct(full, type=2, norm="ortho")


class PartialDCT(TransformerMixin, BaseEstimator):
    """Row-wise partial DCT compression as a scikit-learn transformer.

    ``fit`` only records the input width and draws the row selection;
    ``transform`` compresses each sample and ``inverse_transform`` applies
    the adjoint (the minimum-norm lift back to ``dim``).
    """

    def __init__(self, n_rows=None, ratio=0.75, seed=0):
        self.n_rows = n_rows
        self.ratio = ratio
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X)
        dim = X.shape[1]
        rows = self.n_rows if self.n_rows is not None else max(1, int(round(self.ratio * dim)))
        self.operator_ = make_partial_dct(dim, rows, self.seed)
        self.n_features_in_ = dim
        return self

    def transform(self, X):
        check_is_fitted(self, "operator_")
        X = check_array(X)
        if X.shape[1] != self.operator_.dim:
            raise ValueError(f"expected {self.operator_.dim} features, got {X.shape[1]}")
        return scipy.fft.dct(X, type=2, norm="ortho", axis=1)[:, self.operator_.row_selection]

    def inverse_transform(self, Y):
        check_is_fitted(self, "operator_")
        Y = check_array(Y)
        if Y.shape[1] != self.operator_.rows:
            raise ValueError(f"expected {self.operator_.rows} columns, got {Y.shape[1]}")
        full = np.zeros((Y.shape[0], self.operator_.dim))
        full[:, self.operator_.row_selection] = Y
        return scipy.fft.idct(full, type=2, norm="ortho", axis=1)
