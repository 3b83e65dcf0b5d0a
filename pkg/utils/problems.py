"""
GMVI problem instances: a monotone operator F plus a block-separable g.

Each instance supports the coordinate-friendly evaluation the cyclic solvers
rely on: ``begin_pass`` snapshots the previous iterate together with the
residuals needed to evaluate a block of F, ``block_operator`` reads F^i at the
current mixed point, and ``commit_block`` writes the new block and patches the
residuals in time proportional to the block's nonzeros.
"""
import copy
import hashlib
import logging
import math
import uuid
from abc import ABC, abstractmethod
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from utils.config import settings
from utils.errors import ConfigError, DimensionMismatchError
from utils.linalg import BlockPartition, CsrMatrix, FlopCounter, as_vector
from utils.prox import (
    BoxIndicator, ElasticNetPenalty, L1Norm, Regularizer, SeparableRegularizer, ZeroFunction,
)

logger = logging.getLogger(__name__)


class PassState:
    """Mixed iterate of an in-flight pass plus problem-specific residuals. Single owner."""

    def __init__(self, x: np.ndarray, residuals: Dict[str, np.ndarray]):
        self.x = x
        self.residuals = residuals
        self.age = 0


class GmviProblem(ABC):
    kind: str = "gmvi"

    def __init__(self, dim: int, partition: BlockPartition, regularizer: SeparableRegularizer):
        if partition.dim != dim:
            raise DimensionMismatchError(f"partition covers {partition.dim} coordinates, problem has {dim}")
        if regularizer.dim != dim:
            raise DimensionMismatchError(f"regularizer covers {regularizer.dim} coordinates, problem has {dim}")
        self.dim = dim
        self.partition = partition
        self.regularizer = regularizer
        self.flops = FlopCounter()

    @property
    def gamma(self) -> float:
        return self.regularizer.modulus

    @property
    def n_samples(self) -> int:
        return self.dim

    # Operator

    @abstractmethod
    def full_operator(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _build_residuals(self, x: np.ndarray) -> Dict[str, np.ndarray]:
        ...

    @abstractmethod
    def _block_operator(self, state: PassState, sl: slice) -> np.ndarray:
        ...

    @abstractmethod
    def _commit_residuals(self, state: PassState, sl: slice, delta: np.ndarray):
        ...

    def begin_pass(self, x_prev: np.ndarray, reuse: Optional[PassState] = None) -> PassState:
        """
        Opens a pass at x_prev. A previous pass state whose committed point
        equals x_prev is carried over instead of rebuilding the residuals,
        unless it is due for a from-scratch refresh.
        """
        if reuse is not None and reuse.age < settings.RESIDUAL_REFRESH and np.array_equal(reuse.x, x_prev):
            reuse.age += 1
            return reuse
        return PassState(np.array(x_prev, dtype=np.float64, copy=True), self._build_residuals(x_prev))

    def block_operator(self, state: PassState, i: int) -> np.ndarray:
        return self._block_operator(state, self.partition.block(i))

    def commit_block(self, state: PassState, i: int, new_block: np.ndarray):
        sl = self.partition.block(i)
        delta = new_block - state.x[sl]
        if np.any(delta):
            self._commit_residuals(state, sl, delta)
        state.x[sl] = new_block

    def operator_at_pass(self, state: PassState) -> np.ndarray:
        """F at the committed point of ``state``."""
        return self.full_operator(state.x)

    def scratch_residuals(self, x: np.ndarray) -> Dict[str, np.ndarray]:
        return self._build_residuals(x)

    # Regularizer

    def prox_block(self, i: int, z: np.ndarray, tau: float) -> np.ndarray:
        if tau < 0:
            raise ValueError("prox step must be non-negative")
        sl = self.partition.block(i)
        if z.shape[0] != sl.stop - sl.start:
            raise DimensionMismatchError(f"block {i} has {sl.stop - sl.start} coordinates, got {z.shape[0]}")
        return self.regularizer.prox_range(sl.start, z, tau)

    def prox(self, z: np.ndarray, tau: float) -> np.ndarray:
        return self.regularizer.prox_range(0, z, tau)

    def g_value(self, x: np.ndarray) -> float:
        return self.regularizer.value(x)

    def g_block_value(self, i: int, xi: np.ndarray) -> float:
        return self.regularizer.value_range(self.partition.block(i).start, xi)

    def in_domain(self, x: np.ndarray) -> bool:
        return math.isfinite(self.g_value(x))

    @abstractmethod
    def primal_value(self, x: np.ndarray) -> float:
        ...

    # Structure

    def operator_matrix(self) -> Tuple[sp.csr_matrix, np.ndarray]:
        """(G, c) with F(x) = G x - c, for linear instances."""
        raise NotImplementedError(f"{self.kind} has no explicit linear operator")

    def domain_diameters(self) -> Tuple[float, float]:
        return (math.inf, math.inf)

    def with_partition(self, partition: BlockPartition) -> "GmviProblem":
        if partition.dim != self.dim:
            raise DimensionMismatchError(f"partition covers {partition.dim} coordinates, problem has {self.dim}")
        clone = copy.copy(self)
        clone.partition = partition
        clone.flops = FlopCounter()
        return clone

    def _fingerprint_parts(self) -> Tuple:
        return ()

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        h.update(repr((self.kind, self.dim, self.partition.block_sizes, self.regularizer.params())).encode())
        for part in self._fingerprint_parts():
            if isinstance(part, np.ndarray):
                h.update(np.ascontiguousarray(part).tobytes())
            else:
                h.update(repr(part).encode())
        return h.hexdigest()


class LeastSquaresProblem(GmviProblem):
    """F(x) = A^T (A x - b) with an l1 / elastic-net g. Pass state keeps r = A x - b."""

    def __init__(self, A: CsrMatrix, b: np.ndarray, penalty: Regularizer, partition: BlockPartition, kind: str):
        super().__init__(A.n_cols, partition, SeparableRegularizer([(0, A.n_cols, penalty)]))
        self.A = A
        self.b = b
        self.penalty = penalty
        self.kind = kind

    @property
    def n_samples(self) -> int:
        return self.A.n_rows

    def full_operator(self, x):
        self.flops.add(2 * self.A.nnz)
        return self.A.rmatvec(self.A.matvec(x) - self.b)

    def _build_residuals(self, x):
        self.flops.add(self.A.nnz)
        return {"r": self.A.matvec(x) - self.b}

    def _block_operator(self, state, sl):
        self.flops.add(self.A.col_block_nnz(sl.start, sl.stop))
        return self.A.col_block_rmatvec(sl.start, sl.stop, state.residuals["r"])

    def _commit_residuals(self, state, sl, delta):
        self.flops.add(self.A.col_block_nnz(sl.start, sl.stop))
        self.A.col_block_add(sl.start, sl.stop, delta, state.residuals["r"])

    def operator_at_pass(self, state):
        self.flops.add(self.A.nnz)
        return self.A.rmatvec(state.residuals["r"])

    def primal_value(self, x):
        r = self.A.matvec(x) - self.b
        return 0.5 * float(r @ r) + self.g_value(x)

    def operator_matrix(self):
        At = self.A.csc.T.tocsr()
        return (At @ self.A.scipy).tocsr(), At @ self.b

    def _fingerprint_parts(self):
        return (self.A.row_offsets, self.A.col_indices, self.A.values, self.b)


class L1SvmProblem(GmviProblem):
    """
    l1-regularized hinge loss as a saddle point over z = (x, y), x in R^d, y in [-1, 0]^n:
    F(x, y) = (Abar^T y, 1 - Abar x). Pass state keeps Abar x and Abar^T y.
    Blocks may straddle the primal/dual border.
    """
    kind = "l1-svm"

    def __init__(self, A_bar: CsrMatrix, lam: float, partition: BlockPartition):
        n, d = A_bar.shape
        reg = SeparableRegularizer([(0, d, L1Norm(lam)), (d, d + n, BoxIndicator(-1.0, 0.0))])
        super().__init__(d + n, partition, reg)
        self.A_bar = A_bar
        self.lam = float(lam)
        self.n = n
        self.d = d

    @property
    def n_samples(self) -> int:
        return self.n

    def _split(self, sl: slice) -> Tuple[int, int, int, int]:
        """Primal range [p0, p1) and dual row range [q0, q1) covered by ``sl``."""
        p0, p1 = sl.start, min(sl.stop, self.d)
        q0, q1 = max(sl.start, self.d) - self.d, sl.stop - self.d
        return p0, max(p0, p1), max(q0, 0), max(q1, 0)

    def full_operator(self, z):
        self.flops.add(2 * self.A_bar.nnz)
        x, y = z[:self.d], z[self.d:]
        return np.concatenate((self.A_bar.rmatvec(y), 1.0 - self.A_bar.matvec(x)))

    def _build_residuals(self, z):
        self.flops.add(2 * self.A_bar.nnz)
        return {"ax": self.A_bar.matvec(z[:self.d]), "aty": self.A_bar.rmatvec(z[self.d:])}

    def _block_operator(self, state, sl):
        p0, p1, q0, q1 = self._split(sl)
        return np.concatenate((state.residuals["aty"][p0:p1], 1.0 - state.residuals["ax"][q0:q1]))

    def _commit_residuals(self, state, sl, delta):
        p0, p1, q0, q1 = self._split(sl)
        if p1 > p0:
            self.flops.add(self.A_bar.col_block_nnz(p0, p1))
            self.A_bar.col_block_add(p0, p1, delta[:p1 - p0], state.residuals["ax"])
        if q1 > q0:
            self.flops.add(self.A_bar.row_block_nnz(q0, q1))
            self.A_bar.row_block_radd(q0, q1, delta[p1 - p0:], state.residuals["aty"])

    def operator_at_pass(self, state):
        return np.concatenate((state.residuals["aty"], 1.0 - state.residuals["ax"]))

    def primal_value(self, z):
        x = z[:self.d]
        margins = self.A_bar.matvec(x)
        return float(np.sum(np.maximum(1.0 - margins, 0.0))) + self.lam * float(np.sum(np.abs(x)))

    def operator_matrix(self):
        Ab = self.A_bar.scipy
        G = sp.bmat([[None, Ab.T], [-Ab, None]], format="csr")
        c = np.concatenate((np.zeros(self.d), -np.ones(self.n)))
        return G, c

    def domain_diameters(self):
        return (math.inf, math.sqrt(self.n))

    def _fingerprint_parts(self):
        return (self.A_bar.row_offsets, self.A_bar.col_indices, self.A_bar.values, self.lam)


class BilinearToyProblem(GmviProblem):
    """min_x max_y <x, y> with coordinates interleaved as (x_1, y_1, x_2, y_2, ...)."""
    kind = "bilinear-toy"

    def __init__(self, d: int, partition: Optional[BlockPartition] = None):
        partition = partition or BlockPartition(tuple([2] * d))
        super().__init__(2 * d, partition, SeparableRegularizer([(0, 2 * d, ZeroFunction())]))
        self.d = d
        # F(z)_j = sign_j * z[source_j]
        self._source = np.arange(2 * d) ^ 1
        self._sign = np.tile([1.0, -1.0], d)

    @property
    def n_samples(self) -> int:
        return self.d

    def full_operator(self, z):
        self.flops.add(self.dim)
        return self._sign * z[self._source]

    def _build_residuals(self, z):
        return {}

    def _block_operator(self, state, sl):
        return self._sign[sl] * state.x[self._source[sl]]

    def _commit_residuals(self, state, sl, delta):
        pass

    def primal_value(self, z):
        return float(z[0::2] @ z[1::2])

    def operator_matrix(self):
        G = sp.csr_matrix((self._sign, (np.arange(self.dim), self._source)), shape=(self.dim, self.dim))
        return G, np.zeros(self.dim)


class MinMaxProblem(GmviProblem):
    """
    min_{x1} max_{x2} phi(x1, x2) + g1(x1) - g2(x2) stacked as z = (x1, x2),
    F(z) = (grad_x1 phi, -grad_x2 phi). The oracles carry no incremental
    structure, so each block read evaluates F at the mixed point.
    """
    kind = "min-max"

    def __init__(self, grad_x1: Callable, grad_x2: Callable, g1: Regularizer, g2: Regularizer,
                 d1: int, d2: int, partition: BlockPartition,
                 phi: Optional[Callable] = None,
                 linear_operator: Optional[Tuple[sp.spmatrix, np.ndarray]] = None):
        super().__init__(d1 + d2, partition, SeparableRegularizer([(0, d1, g1), (d1, d1 + d2, g2)]))
        self.grad_x1 = grad_x1
        self.grad_x2 = grad_x2
        self.g1 = g1
        self.g2 = g2
        self.d1 = d1
        self.d2 = d2
        self.phi = phi
        self._linear_operator = linear_operator
        # Oracles are opaque callables; each instance gets its own cache identity
        self._token = uuid.uuid4().hex

    def full_operator(self, z):
        x1, x2 = z[:self.d1], z[self.d1:]
        gx1 = np.asarray(self.grad_x1(x1, x2), dtype=np.float64).reshape(-1)
        gx2 = np.asarray(self.grad_x2(x1, x2), dtype=np.float64).reshape(-1)
        if gx1.shape[0] != self.d1 or gx2.shape[0] != self.d2:
            raise DimensionMismatchError(
                f"gradient oracles returned lengths ({gx1.shape[0]}, {gx2.shape[0]}), expected ({self.d1}, {self.d2})"
            )
        return np.concatenate((gx1, -gx2))

    def _build_residuals(self, z):
        return {}

    def _block_operator(self, state, sl):
        return self.full_operator(state.x)[sl]

    def _commit_residuals(self, state, sl, delta):
        pass

    def primal_value(self, z):
        if self.phi is None:
            return math.nan
        x1, x2 = z[:self.d1], z[self.d1:]
        return float(self.phi(x1, x2)) + self.g1.value(x1) - self.g2.value(x2)

    def operator_matrix(self):
        if self._linear_operator is None:
            return super().operator_matrix()
        G, c = self._linear_operator
        return sp.csr_matrix(G), np.asarray(c, dtype=np.float64)

    def domain_diameters(self):
        diam = []
        for reg, count in ((self.g1, self.d1), (self.g2, self.d2)):
            diam.append(reg.diameter(count) if isinstance(reg, BoxIndicator) else math.inf)
        return tuple(diam)

    def _fingerprint_parts(self):
        return (self._token,)


def _check_least_squares(A: CsrMatrix, b, partition: Optional[BlockPartition]) -> Tuple[np.ndarray, BlockPartition]:
    b = as_vector(b, A.n_rows, name="b")
    partition = partition or BlockPartition.unit(A.n_cols)
    if partition.dim != A.n_cols:
        raise DimensionMismatchError(f"partition covers {partition.dim} coordinates, A has {A.n_cols} columns")
    return b, partition


def make_lasso(A: CsrMatrix, b, lam: float, partition: Optional[BlockPartition] = None) -> LeastSquaresProblem:
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    b, partition = _check_least_squares(A, b, partition)
    return LeastSquaresProblem(A, b, L1Norm(lam), partition, kind="lasso")


def make_elastic_net(A: CsrMatrix, b, lam1: float, lam2: float,
                     partition: Optional[BlockPartition] = None) -> LeastSquaresProblem:
    if lam2 <= 0:
        raise ConfigError("elastic net needs lambda2 > 0; use make_lasso for lambda2 = 0")
    if lam1 < 0:
        raise ConfigError("lambda1 must be non-negative")
    b, partition = _check_least_squares(A, b, partition)
    return LeastSquaresProblem(A, b, ElasticNetPenalty(lam1, lam2), partition, kind="elastic-net")


def make_l1_svm(A_bar: CsrMatrix, lam: float, partition: Optional[BlockPartition] = None) -> L1SvmProblem:
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    n, d = A_bar.shape
    partition = partition or BlockPartition.unit(d + n)
    return L1SvmProblem(A_bar, lam, partition)


def make_bilinear_toy(d: int) -> BilinearToyProblem:
    if d < 1:
        raise ConfigError("bilinear toy needs d >= 1")
    return BilinearToyProblem(d)


def reduce_min_max(grad_x1: Callable, grad_x2: Callable, g1: Regularizer, g2: Regularizer,
                   d1: int, d2: int, partition: Optional[BlockPartition] = None,
                   phi: Optional[Callable] = None,
                   linear_operator: Optional[Tuple[sp.spmatrix, np.ndarray]] = None) -> MinMaxProblem:
    if d1 < 1 or d2 < 1:
        raise DimensionMismatchError("both players need at least one coordinate")
    partition = partition or BlockPartition.unit(d1 + d2)
    problem = MinMaxProblem(grad_x1, grad_x2, g1, g2, d1, d2, partition, phi=phi, linear_operator=linear_operator)
    # Evaluate the oracles once so shape errors surface at construction
    problem.full_operator(np.zeros(d1 + d2))
    return problem
