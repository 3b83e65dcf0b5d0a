"""
Block Lipschitz constants.

For block i with coordinates S^i, Q^i bounds ||F^i(x) - F^i(y)||^2 by
(x - y)^T Q^i (x - y); Q-hat^i zeroes the rows and columns of the blocks
processed before block i. L = sqrt(||sum_i Q-hat^i||) governs the cyclic
methods and M = sqrt(||sum_i Q^i||) is the Euclidean Lipschitz constant.

For a linear operator F(x) = G x - c with Q^i = G[S^i, :]^T G[S^i, :] the sum
of truncations factors as W^T W, where W keeps G[r, c] only when the block of
row r is processed no later than the block of column c. Both the dense and the
matrix-free paths use that factorization.
"""
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from models.schemas import LipschitzReport, SweepRow
from utils.cache import cache_manager
from utils.config import settings
from utils.data_io import gen_gaussian
from utils.errors import DimensionMismatchError
from utils.linalg import BlockPartition, as_dense, check_dense_cap, spectral_norm
from utils.logger import log_event

logger = logging.getLogger(__name__)


def _ordering(partition: BlockPartition, ordering: Optional[Sequence[int]]) -> List[int]:
    order = list(range(partition.m)) if ordering is None else [int(i) for i in ordering]
    if sorted(order) != list(range(partition.m)):
        raise DimensionMismatchError("ordering must be a permutation of the block indices")
    return order


def _coordinate_ranks(partition: BlockPartition, ordering: List[int]) -> np.ndarray:
    """Position in the processing order of each coordinate's block."""
    block_rank = np.empty(partition.m, dtype=np.int64)
    block_rank[ordering] = np.arange(partition.m)
    return block_rank[partition.coordinate_blocks()]


def qhat_truncate(Q, i: int, partition: BlockPartition, ordering: Optional[Sequence[int]] = None) -> np.ndarray:
    """Q with the rows and columns of every block processed before block i set to zero."""
    Q = as_dense(Q)
    if Q.shape[0] != partition.dim:
        raise DimensionMismatchError(f"Q is {Q.shape[0]}x{Q.shape[1]}, partition covers {partition.dim}")
    order = _ordering(partition, ordering)
    out = Q.copy()
    for j in order[:order.index(i)]:
        sl = partition.block(j)
        out[sl, :] = 0.0
        out[:, sl] = 0.0
    return out


def block_q_matrices(G, partition: BlockPartition) -> List[np.ndarray]:
    """Q^i = G[S^i, :]^T G[S^i, :] for each block of a dense linear operator."""
    G = as_dense(G)
    return [G[partition.block(i), :].T @ G[partition.block(i), :] for i in range(partition.m)]


def _root(value: float) -> float:
    return math.sqrt(max(value, 0.0))


def lipschitz_constants_from_blocks(Q_list: Sequence, partition: BlockPartition,
                                    ordering: Optional[Sequence[int]] = None) -> LipschitzReport:
    """L and M from explicit Q^i matrices by summing their truncations."""
    if len(Q_list) != partition.m:
        raise DimensionMismatchError(f"{len(Q_list)} matrices for {partition.m} blocks")
    order = _ordering(partition, ordering)
    check_dense_cap(partition.dim)
    sum_q = np.zeros((partition.dim, partition.dim))
    sum_qhat = np.zeros((partition.dim, partition.dim))
    for i, Q in enumerate(Q_list):
        sum_q += as_dense(Q)
        sum_qhat += qhat_truncate(Q, i, partition, order)
    est_l = spectral_norm(sum_qhat, partition.dim)
    est_m = spectral_norm(sum_q, partition.dim)
    return LipschitzReport(m=partition.m, L=_root(est_l.value), M=_root(est_m.value), ordering=order,
                           method="exact-dense", converged=est_l.converged and est_m.converged)


def sum_qhat_linear(G, partition: BlockPartition, ordering: Optional[Sequence[int]] = None) -> np.ndarray:
    G = as_dense(G)
    if G.shape[0] != partition.dim:
        raise DimensionMismatchError(f"G is {G.shape[0]}x{G.shape[1]}, partition covers {partition.dim}")
    rank = _coordinate_ranks(partition, _ordering(partition, ordering))
    W = np.where(rank[:, None] <= rank[None, :], G, 0.0)
    return W.T @ W


def lipschitz_constants_linear(G, partition: BlockPartition,
                               ordering: Optional[Sequence[int]] = None) -> LipschitzReport:
    """Dense path, d <= DENSE_CAP. G is A^T A for the least-squares family, or the min-max operator matrix."""
    G = as_dense(G)
    order = _ordering(partition, ordering)
    sum_qhat = sum_qhat_linear(G, partition, order)
    est_l = spectral_norm(sum_qhat, partition.dim)
    est_m = spectral_norm(G.T @ G, partition.dim)
    report = LipschitzReport(m=partition.m, L=_root(est_l.value), M=_root(est_m.value), ordering=order,
                             method="exact-dense", converged=est_l.converged and est_m.converged)
    if not report.satisfies_block_bound():
        logger.warning(f"Computed L={report.L:.6e} exceeds sqrt(m) M={math.sqrt(report.m) * report.M:.6e}")
    return report


def lipschitz_constants_sparse(G: sp.spmatrix, partition: BlockPartition,
                               ordering: Optional[Sequence[int]] = None) -> LipschitzReport:
    """Matrix-free path: power iteration on v -> W^T W v with W kept sparse."""
    G = sp.coo_matrix(G)
    if G.shape != (partition.dim, partition.dim):
        raise DimensionMismatchError(f"G is {G.shape}, partition covers {partition.dim}")
    order = _ordering(partition, ordering)
    rank = _coordinate_ranks(partition, order)
    keep = rank[G.row] <= rank[G.col]
    W = sp.csr_matrix((G.data[keep], (G.row[keep], G.col[keep])), shape=G.shape)
    Wt = W.T.tocsr()
    Gc = G.tocsr()
    Gt = Gc.T.tocsr()
    est_l = spectral_norm(lambda v: Wt @ (W @ v), partition.dim)
    est_m = spectral_norm(lambda v: Gt @ (Gc @ v), partition.dim)
    return LipschitzReport(m=partition.m, L=_root(est_l.value), M=_root(est_m.value), ordering=order,
                           method="matrix-free", converged=est_l.converged and est_m.converged)


def lipschitz_report(problem, ordering: Optional[Sequence[int]] = None, method: str = "auto") -> LipschitzReport:
    """Report for a linear problem instance under its own partition; cached per instance and ordering."""
    key_order = None if ordering is None else tuple(int(i) for i in ordering)
    fingerprint = problem.fingerprint()
    cached = cache_manager.get_lipschitz(fingerprint, key_order)
    if cached is not None:
        log_event(logging.DEBUG, "lipschitz_cache_hit", "Reused Lipschitz report", cache_hit=True, problem=problem.kind)
        return cached

    G, _ = problem.operator_matrix()
    if method == "auto":
        method = "exact-dense" if problem.dim <= settings.DENSE_CAP else "matrix-free"
    if method == "exact-dense":
        report = lipschitz_constants_linear(G.toarray(), problem.partition, ordering)
    else:
        report = lipschitz_constants_sparse(G, problem.partition, ordering)

    cache_manager.set_lipschitz(fingerprint, key_order, report)
    log_event(logging.INFO, "lipschitz_computed", f"L={report.L:.6e} M={report.M:.6e}",
              problem=problem.kind, blocks=report.m, L=report.L, status=report.method)
    return report


def worked_example(t: float) -> LipschitzReport:
    """Q^1 = u u^T, Q^2 = v v^T with u = (1/t^2, 1), v = (-t, 1/t); M^2 = t^2 + 1/t^2."""
    if t < 1:
        raise ValueError("the worked example needs t >= 1")
    u = np.array([1.0 / t ** 2, 1.0])
    v = np.array([-t, 1.0 / t])
    return lipschitz_constants_from_blocks([np.outer(u, u), np.outer(v, v)], BlockPartition.unit(2))


@dataclass
class SweepTable:
    rows: List[SweepRow]
    medians: List[SweepRow]


def _pairs(n_list: Sequence[int], d_list: Sequence[int]) -> List[tuple]:
    n_list, d_list = list(n_list), list(d_list)
    if len(n_list) == 1:
        n_list = n_list * len(d_list)
    if len(d_list) == 1:
        d_list = d_list * len(n_list)
    if len(n_list) != len(d_list):
        raise DimensionMismatchError("n_list and d_list must have equal length or length one")
    return list(zip(n_list, d_list))


def _sweep_cell(n: int, d: int, repeat: int, seed: int) -> SweepRow:
    A = gen_gaussian(n, d, seed=[seed, n, d, repeat])
    report = lipschitz_constants_linear(A.T @ A, BlockPartition.unit(d))
    return SweepRow(n=n, d=d, repeat=repeat, L=report.L, M=report.M)


def sweep_experiment(n_list: Sequence[int], d_list: Sequence[int], repeats: int, seed: int,
                       jobs: int = 1) -> SweepTable:
    """
    L and M for standard-Gaussian A with unit blocks in natural order, repeated
    per (n, d) pair. Each repeat draws from its own seed derived from
    (seed, n, d, repeat), so the table does not depend on ``jobs``.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    pairs = _pairs(n_list, d_list)
    for n, d in pairs:
        check_dense_cap(d)
    tasks = [(n, d, r, seed) for n, d in pairs for r in range(repeats)]

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rows = list(pool.map(lambda task: _sweep_cell(*task), tasks))

    medians = []
    for n, d in pairs:
        cell = [row for row in rows if row.n == n and row.d == d]
        medians.append(SweepRow(n=n, d=d, repeat="median",
                                L=float(np.median([row.L for row in cell])),
                                M=float(np.median([row.M for row in cell]))))
    log_event(logging.INFO, "sweep_done", f"{len(pairs)} pairs x {repeats} repeats",
              rows=len(rows), seed=seed)
    return SweepTable(rows=rows, medians=medians)


def sweep_pairs(mode: str, fixed: int, step: int) -> tuple:
    """(n_list, d_list) for the n-fixed ("sweep-d") or d-fixed ("sweep-n") sweep."""
    grid = list(range(step, fixed + 1, step))
    if mode == "sweep-d":
        return [fixed], grid
    if mode == "sweep-n":
        return grid, [fixed]
    raise ValueError(f"unknown sweep mode {mode!r}")
