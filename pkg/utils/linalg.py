"""
Linear algebra primitives shared by the problem, Lipschitz and solver modules.

Vectors are plain float64 ``numpy`` arrays validated on entry. Sparse matrices
are held in ``CsrMatrix``, which keeps a CSR view for row access and a CSC view
for the column access that incremental operator evaluation needs.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from utils.config import settings
from utils.errors import DenseCapError, DimensionMismatchError, IndexOutOfRangeError, NotPsdError

logger = logging.getLogger(__name__)

ApplyLike = Union[np.ndarray, sp.spmatrix, Callable[[np.ndarray], np.ndarray]]


def as_vector(x, dim: Optional[int] = None, name: str = "x") -> np.ndarray:
    v = np.array(x, dtype=np.float64, copy=True).reshape(-1)
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatchError(f"{name} has length {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise DimensionMismatchError(f"{name} contains non-finite entries")
    return v


def check_dense_cap(dim: int, what: str = "dense matrix"):
    if dim > settings.DENSE_CAP:
        raise DenseCapError(
            f"{what} of dimension {dim} exceeds the dense cap {settings.DENSE_CAP}; use the matrix-free path"
        )


def as_dense(matrix, square: bool = True) -> np.ndarray:
    """Validates a dense matrix (finite values, optional squareness, size cap)."""
    M = np.asarray(matrix.toarray() if sp.issparse(matrix) else matrix, dtype=np.float64)
    if M.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-d matrix, got shape {M.shape}")
    if square and M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {M.shape}")
    check_dense_cap(max(M.shape))
    if not np.all(np.isfinite(M)):
        raise DimensionMismatchError("matrix contains non-finite entries")
    return M


class FlopCounter:
    """Counts multiply-adds spent in sparse products (instrumentation only)."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)

    def reset(self):
        self.count = 0


@dataclass(frozen=True)
class BlockPartition:
    block_sizes: Tuple[int, ...]
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if len(sizes) < 1:
            raise DimensionMismatchError("a partition needs at least one block")
        if any(s <= 0 for s in sizes):
            raise DimensionMismatchError("block sizes must be positive")
        object.__setattr__(self, "block_sizes", sizes)
        offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def unit(cls, dim: int) -> "BlockPartition":
        return cls(tuple([1] * dim))

    @classmethod
    def single(cls, dim: int) -> "BlockPartition":
        return cls((dim,))

    @classmethod
    def uniform(cls, dim: int, size: int) -> "BlockPartition":
        """Blocks of ``size`` coordinates; the last block takes the remainder."""
        if size <= 0:
            raise DimensionMismatchError("block size must be positive")
        full, rest = divmod(dim, size)
        return cls(tuple([size] * full + ([rest] if rest else [])))

    @property
    def m(self) -> int:
        return len(self.block_sizes)

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def block(self, i: int) -> slice:
        if not 0 <= i < self.m:
            raise IndexOutOfRangeError(f"block index {i} outside [0, {self.m})")
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def block_of(self, j: int) -> int:
        if not 0 <= j < self.dim:
            raise IndexOutOfRangeError(f"coordinate {j} outside [0, {self.dim})")
        return int(np.searchsorted(self.offsets, j, side="right") - 1)

    def coordinate_blocks(self) -> np.ndarray:
        """Block index of every coordinate."""
        return np.repeat(np.arange(self.m), self.block_sizes)


class CsrMatrix:
    def __init__(self, n_rows: int, n_cols: int, row_offsets, col_indices, values):
        row_offsets = np.asarray(row_offsets, dtype=np.int64)
        col_indices = np.asarray(col_indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if row_offsets.shape[0] != n_rows + 1 or row_offsets[0] != 0:
            raise DimensionMismatchError("row_offsets must start at 0 and have length n_rows + 1")
        if np.any(np.diff(row_offsets) < 0):
            raise DimensionMismatchError("row_offsets must be non-decreasing")
        if row_offsets[-1] != col_indices.shape[0] or col_indices.shape[0] != values.shape[0]:
            raise DimensionMismatchError("row_offsets, col_indices and values disagree on nnz")
        if col_indices.size and (col_indices.min() < 0 or col_indices.max() >= n_cols):
            raise IndexOutOfRangeError(f"column index outside [0, {n_cols})")
        if not np.all(np.isfinite(values)):
            raise DimensionMismatchError("matrix values must be finite")

        self._csr = sp.csr_matrix((values, col_indices, row_offsets), shape=(n_rows, n_cols))
        self._csr.sort_indices()
        self._csc = self._csr.tocsc()
        self._csc.sort_indices()
        # Owner index per stored entry, for blockwise reductions
        self._csr_rows = np.repeat(np.arange(n_rows), np.diff(self._csr.indptr))
        self._csc_cols = np.repeat(np.arange(n_cols), np.diff(self._csc.indptr))

    @classmethod
    def from_scipy(cls, matrix) -> "CsrMatrix":
        m = sp.csr_matrix(matrix)
        m.sum_duplicates()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, array) -> "CsrMatrix":
        arr = np.atleast_2d(np.asarray(array, dtype=np.float64))
        return cls.from_scipy(sp.csr_matrix(arr))

    @classmethod
    def empty(cls, n_rows: int, n_cols: int) -> "CsrMatrix":
        return cls(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64), [], [])

    @property
    def shape(self) -> Tuple[int, int]:
        return self._csr.shape

    @property
    def n_rows(self) -> int:
        return self._csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self._csr.shape[1]

    @property
    def nnz(self) -> int:
        return int(self._csr.nnz)

    @property
    def row_offsets(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    @property
    def scipy(self) -> sp.csr_matrix:
        return self._csr

    @property
    def csc(self) -> sp.csc_matrix:
        return self._csc

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.n_cols:
            raise DimensionMismatchError(f"matvec: vector length {x.shape[0]} vs {self.n_cols} columns")
        return self._csr @ x

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        if y.shape[0] != self.n_rows:
            raise DimensionMismatchError(f"rmatvec: vector length {y.shape[0]} vs {self.n_rows} rows")
        return self._csc.T @ y

    def col_dot(self, j: int, r: np.ndarray) -> float:
        if not 0 <= j < self.n_cols:
            raise IndexOutOfRangeError(f"column {j} outside [0, {self.n_cols})")
        if r.shape[0] != self.n_rows:
            raise DimensionMismatchError(f"col_dot: vector length {r.shape[0]} vs {self.n_rows} rows")
        p0, p1 = self._csc.indptr[j], self._csc.indptr[j + 1]
        return float(np.dot(self._csc.data[p0:p1], r[self._csc.indices[p0:p1]]))

    # Contiguous column blocks (CSC side)

    def col_block_nnz(self, start: int, stop: int) -> int:
        return int(self._csc.indptr[stop] - self._csc.indptr[start])

    def col_block_rmatvec(self, start: int, stop: int, r: np.ndarray) -> np.ndarray:
        """A[:, start:stop]^T r"""
        p0, p1 = self._csc.indptr[start], self._csc.indptr[stop]
        w = self._csc.data[p0:p1] * r[self._csc.indices[p0:p1]]
        return np.bincount(self._csc_cols[p0:p1] - start, weights=w, minlength=stop - start)

    def col_block_add(self, start: int, stop: int, delta: np.ndarray, out: np.ndarray):
        """out += A[:, start:stop] delta"""
        p0, p1 = self._csc.indptr[start], self._csc.indptr[stop]
        np.add.at(out, self._csc.indices[p0:p1], self._csc.data[p0:p1] * delta[self._csc_cols[p0:p1] - start])

    # Contiguous row blocks (CSR side)

    def row_block_nnz(self, start: int, stop: int) -> int:
        return int(self._csr.indptr[stop] - self._csr.indptr[start])

    def row_block_matvec(self, start: int, stop: int, x: np.ndarray) -> np.ndarray:
        """A[start:stop, :] x"""
        p0, p1 = self._csr.indptr[start], self._csr.indptr[stop]
        w = self._csr.data[p0:p1] * x[self._csr.indices[p0:p1]]
        return np.bincount(self._csr_rows[p0:p1] - start, weights=w, minlength=stop - start)

    def row_block_radd(self, start: int, stop: int, delta: np.ndarray, out: np.ndarray):
        """out += A[start:stop, :]^T delta"""
        p0, p1 = self._csr.indptr[start], self._csr.indptr[stop]
        np.add.at(out, self._csr.indices[p0:p1], self._csr.data[p0:p1] * delta[self._csr_rows[p0:p1] - start])

    def scale_rows(self, scale: np.ndarray) -> "CsrMatrix":
        scale = np.asarray(scale, dtype=np.float64)
        if scale.shape[0] != self.n_rows:
            raise DimensionMismatchError("row scale length must equal the row count")
        return CsrMatrix.from_scipy(sp.diags(scale) @ self._csr)

    def head(self, k: int) -> "CsrMatrix":
        return CsrMatrix.from_scipy(self._csr[:min(k, self.n_rows)])

    def __repr__(self) -> str:
        return f"CsrMatrix(shape={self.shape}, nnz={self.nnz})"


def csr_matvec(A: CsrMatrix, x) -> np.ndarray:
    return A.matvec(as_vector(x, A.n_cols))


def csr_col_dot(A: CsrMatrix, j: int, r) -> float:
    return A.col_dot(j, as_vector(r, A.n_rows, name="r"))


def as_apply(M: ApplyLike) -> Callable[[np.ndarray], np.ndarray]:
    if callable(M) and not isinstance(M, np.ndarray) and not sp.issparse(M):
        return M
    if isinstance(M, CsrMatrix):
        return M.matvec
    return lambda v: M @ v


class SpectralEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def spectral_norm(M: ApplyLike, dim: int, tol: Optional[float] = None,
                  max_iter: Optional[int] = None, seed: Optional[int] = None) -> SpectralEstimate:
    """
    Largest eigenvalue of a symmetric PSD map by power iteration.

    The start vector is drawn from ``default_rng(seed)`` so repeated calls agree
    bit for bit. Stops when the Rayleigh quotient changes by at most
    ``tol`` relative; otherwise the last estimate is returned with
    ``converged=False``.
    """
    tol = settings.POWER_ITER_TOL if tol is None else tol
    max_iter = settings.POWER_ITER_MAX if max_iter is None else max_iter
    seed = settings.POWER_ITER_SEED if seed is None else seed
    if tol <= 0:
        raise ValueError("tol must be positive")
    if dim == 0:
        return SpectralEstimate(0.0, True, 0)

    apply = as_apply(M)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam_old = None
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = apply(v)
        lam = float(v @ w)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return SpectralEstimate(0.0, True, it)
        if lam_old is not None and abs(lam - lam_old) <= tol * abs(lam):
            return SpectralEstimate(lam, True, it)
        lam_old = lam
        v = w / nw

    logger.warning(f"Power iteration unconverged after {max_iter} iterations (estimate {lam:.6e})")
    return SpectralEstimate(lam, False, max_iter)


def quad_form(Q: ApplyLike, v) -> float:
    """v^T Q v, clamped to 0 when within ``TOL_PSD`` below zero."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    shape = getattr(Q, "shape", None)
    if shape is not None and (len(shape) != 2 or shape[1] != v.shape[0]):
        raise DimensionMismatchError(f"quad_form: matrix shape {shape} vs vector length {v.shape[0]}")
    Qv = as_apply(Q)(v)
    if Qv.shape[0] != v.shape[0]:
        raise DimensionMismatchError(f"quad_form: apply returned length {Qv.shape[0]}, expected {v.shape[0]}")
    val = float(v @ Qv)
    if val < 0.0:
        if val >= -settings.TOL_PSD:
            return 0.0
        raise NotPsdError(f"quad_form is negative ({val:.3e}); matrix is not PSD")
    return val


def block_permutation(partition: BlockPartition, ordering: Sequence[int]) -> np.ndarray:
    """Coordinate permutation listing the blocks of ``partition`` in ``ordering``."""
    ordering = list(ordering)
    if sorted(ordering) != list(range(partition.m)):
        raise DimensionMismatchError("ordering must be a permutation of the block indices")
    return np.concatenate([np.arange(partition.offsets[i], partition.offsets[i + 1]) for i in ordering])
