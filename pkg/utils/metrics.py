"""
Convergence measurement: primal gaps, the restricted gap Gap(x; u), distance to
a reference solution, the two runtime certificates tracked along a run, and
the reference solution itself.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.schemas import BoundRow, ReferenceSummary, SolverConfig, TraceRecord
from utils.cache import cache_manager
from utils.config import settings
from utils.errors import DimensionMismatchError, DivergenceError, DomainError, LipschitzCapError
from utils.linalg import BlockPartition, as_vector
from utils.logger import log_event
from utils.problems import GmviProblem, LeastSquaresProblem

logger = logging.getLogger(__name__)


def _require_domain(problem: GmviProblem, u: np.ndarray, name: str = "u"):
    if not problem.in_domain(u):
        raise DomainError(f"{name} lies outside dom(g)")


def gap_at(problem: GmviProblem, x_hat: np.ndarray, u: np.ndarray, F_u: Optional[np.ndarray] = None) -> float:
    """Gap(x_hat; u) = <F(u), x_hat - u> + g(x_hat) - g(u)."""
    _require_domain(problem, u)
    g_hat = problem.g_value(x_hat)
    if math.isinf(g_hat):
        return math.inf
    if F_u is None:
        F_u = problem.full_operator(u)
    return float(F_u @ (x_hat - u)) + g_hat - problem.g_value(u)


def natural_residual(problem: GmviProblem, x: np.ndarray) -> float:
    """||x - prox_g(x - F(x))||, zero exactly at solutions."""
    return float(np.linalg.norm(x - problem.prox(x - problem.full_operator(x), 1.0)))


def dist_sq(x: np.ndarray, y: np.ndarray) -> float:
    diff = x - y
    return float(diff @ diff)


class CertificateTracker:
    """
    Accumulates the convergence certificate of a run against a fixed u in dom(g):

        sum_j a_j (<F(x_j), x_j - u> + g(x_j) - g(u)) + (1 + gamma A_k)/4 ||u - x_k||^2
            <= 1/2 ||u - x_0||^2

    and evaluates the estimation-sequence bound in closed form from the dual
    accumulator g_k = sum_j a_j q_j:

        <g_k, x_k - u> + A_k (g(x_k) - g(u)) + 1/2 ||x_k - x_0||^2
            <= 1/2 ||u - x_0||^2 - (1 + gamma A_k)/2 ||u - x_k||^2
    """

    def __init__(self, problem: GmviProblem, x0: np.ndarray, u: np.ndarray, gamma: float):
        _require_domain(problem, u)
        self.problem = problem
        self.x0 = x0
        self.u = u
        self.gamma = gamma
        self.g_u = problem.g_value(u)
        self.radius_sq = dist_sq(u, x0)
        self.total = 0.0
        self._F_u: Optional[np.ndarray] = None

    @property
    def F_u(self) -> np.ndarray:
        if self._F_u is None:
            self._F_u = self.problem.full_operator(self.u)
        return self._F_u

    def update(self, a: float, x: np.ndarray, F_x: np.ndarray):
        self.total += a * (float(F_x @ (x - self.u)) + self.problem.g_value(x) - self.g_u)

    def certificate(self, A: float, x: np.ndarray) -> Tuple[float, float]:
        lhs = self.total + 0.25 * (1.0 + self.gamma * A) * dist_sq(self.u, x)
        return lhs, 0.5 * self.radius_sq

    def estimation_bound(self, A: float, x: np.ndarray, dual: np.ndarray) -> Tuple[float, float]:
        lhs = float(dual @ (x - self.u)) + A * (self.problem.g_value(x) - self.g_u) + 0.5 * dist_sq(x, self.x0)
        rhs = 0.5 * self.radius_sq - 0.5 * (1.0 + self.gamma * A) * dist_sq(self.u, x)
        return lhs, rhs

    def slack(self) -> float:
        return 1e-7 * (1.0 + self.radius_sq)


@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    f_star: float
    method: str
    budget: int
    residual: float
    certified: bool
    cross_check: Optional[float] = None

    def to_summary(self) -> ReferenceSummary:
        return ReferenceSummary(x_star=self.x_star.tolist(), f_star=self.f_star, method=self.method,
                                budget=self.budget, residual=self.residual, certified=self.certified,
                                cross_check=self.cross_check)

    @classmethod
    def from_summary(cls, summary: ReferenceSummary, problem: GmviProblem) -> "ReferenceSolution":
        x_star = as_vector(summary.x_star, problem.dim, name="x_star")
        # f_star is recomputed so it always matches primal_value(x_star)
        return cls(x_star=x_star, f_star=problem.primal_value(x_star), method=summary.method,
                   budget=summary.budget, residual=summary.residual, certified=summary.certified,
                   cross_check=summary.cross_check)


def make_trace_records(problem: GmviProblem, state, elapsed: float,
                       reference: Optional[ReferenceSolution] = None,
                       tracker: Optional[CertificateTracker] = None) -> List[TraceRecord]:
    """One record for the last iterate and one for the weighted average."""
    records = []
    cert_lhs = cert_rhs = estimate_lhs = estimate_rhs = math.nan
    if tracker is not None:
        cert_lhs, cert_rhs = tracker.certificate(state.A, state.x)
        estimate_lhs, estimate_rhs = tracker.estimation_bound(state.A, state.x, state.g)

    for label, x in (("last", state.x), ("avg", state.x_avg)):
        fields = dict(k=state.k, passes=state.passes, time_s=elapsed, iterate=label, A_k=state.A,
                      L_k=state.L, norm=float(np.linalg.norm(x)), cert_lhs=cert_lhs, cert_rhs=cert_rhs,
                      estimate_lhs=estimate_lhs, estimate_rhs=estimate_rhs)
        if reference is not None:
            fields["primal_gap"] = problem.primal_value(x) - reference.f_star
            fields["dist_sq"] = dist_sq(x, reference.x_star)
            F_u = tracker.F_u if tracker is not None else None
            fields["gap_at_ref"] = gap_at(problem, x, reference.x_star, F_u=F_u)
        records.append(TraceRecord(**fields))
    return records


def secant_lipschitz_estimate(problem: GmviProblem) -> float:
    """Secant estimate ||F(e) - F(0)|| / ||e|| along a seeded direction; a lower bound on L."""
    rng = np.random.default_rng(settings.POWER_ITER_SEED)
    e = rng.standard_normal(problem.dim)
    e /= np.linalg.norm(e)
    zero = np.zeros(problem.dim)
    estimate = float(np.linalg.norm(problem.full_operator(e) - problem.full_operator(zero)))
    return estimate if estimate > 0.0 and math.isfinite(estimate) else 1.0


def coordinate_descent_reference(problem: LeastSquaresProblem, tol: float, max_sweeps: int) -> Tuple[np.ndarray, bool]:
    """Exact cyclic coordinate minimization for the least-squares family, run to stagnation."""
    A = problem.A.to_dense()
    b = problem.b
    col_sq = np.einsum("ij,ij->j", A, A)
    x = np.zeros(problem.dim)
    r = -b.copy()
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(problem.dim):
            if col_sq[j] == 0.0:
                new = 0.0
            else:
                tau = 1.0 / col_sq[j]
                z = np.array([x[j] - tau * float(A[:, j] @ r)])
                new = float(problem.penalty.prox(z, tau)[0])
            step = new - x[j]
            if step != 0.0:
                r += step * A[:, j]
                x[j] = new
                biggest = max(biggest, abs(step))
        if biggest <= tol * (1.0 + np.linalg.norm(x)):
            return x, True
    return x, False


def compute_reference(problem: GmviProblem, budget: Optional[int] = None, tol: Optional[float] = None,
                      check_every: int = 10) -> ReferenceSolution:
    """
    High-accuracy solution by the parameter-free method on a single-block copy
    of the instance. Stops once the relative natural residual is below ``tol``
    and the primal value has stagnated; an exhausted budget returns the best
    point found with ``certified=False``. Small least-squares instances are
    cross-checked against exact coordinate descent and the better point kept.
    """
    from utils.solvers import iterate

    budget = budget or settings.REFERENCE_MAX_ITER
    tol = tol or settings.REFERENCE_TOL
    fingerprint = problem.fingerprint()
    cached = cache_manager.get_reference(fingerprint, budget, tol)
    if cached is not None:
        log_event(logging.DEBUG, "reference_cache_hit", "Reused reference solution", cache_hit=True, problem=problem.kind)
        return cached

    single = problem.with_partition(BlockPartition.single(problem.dim))
    config = SolverConfig(variant="coder-pf", L0=secant_lipschitz_estimate(single), gamma=problem.gamma,
                          max_iterations=budget)

    def relative_residual(x):
        return natural_residual(single, x) / (1.0 + float(np.linalg.norm(x)))

    best_x, best_res = np.zeros(problem.dim), math.inf
    certified = False
    prev_f = None
    try:
        for state in iterate(single, config, np.zeros(problem.dim)):
            if state.k % check_every and state.k < budget:
                continue
            for x in (state.x, state.x_avg):
                res = relative_residual(x)
                if res < best_res:
                    best_x, best_res = x.copy(), res
            f = single.primal_value(best_x)
            if best_res <= tol and prev_f is not None and abs(f - prev_f) <= tol * (1.0 + abs(f)):
                certified = True
                break
            prev_f = f
    except (DivergenceError, LipschitzCapError) as e:
        logger.warning(f"Reference run stopped early: {e}")

    method = "coder-pf"
    cross_check = None
    if isinstance(problem, LeastSquaresProblem) and problem.dim <= settings.CD_ORACLE_MAX_DIM:
        x_cd, cd_converged = coordinate_descent_reference(problem, tol, max(1, budget // 10))
        cross_check = float(np.linalg.norm(x_cd - best_x))
        cd_res = relative_residual(x_cd)
        if cd_res < best_res:
            best_x, best_res, method = x_cd, cd_res, "coordinate-descent"
            certified = certified or (cd_converged and cd_res <= tol)
        if cross_check > settings.CD_AGREEMENT_TOL:
            log_event(logging.WARNING, "reference_disagreement",
                      f"coordinate descent lands {cross_check:.3e} away from the first-order reference",
                      problem=problem.kind, cross_check=cross_check)
            certified = False

    reference = ReferenceSolution(x_star=best_x, f_star=problem.primal_value(best_x), method=method,
                                  budget=budget, residual=best_res, certified=certified, cross_check=cross_check)
    cache_manager.set_reference(fingerprint, budget, tol, reference)
    level = logging.INFO if certified else logging.WARNING
    log_event(level, "reference_computed", f"f*={reference.f_star:.12e} via {method}",
              problem=problem.kind, residual=best_res, certified=certified)
    return reference


def bound_table(trace: Sequence[TraceRecord], config: SolverConfig, reference: ReferenceSolution,
                     x0: np.ndarray, diameters: Tuple[float, float] = (math.inf, math.inf)) -> List[BoundRow]:
    """
    Theoretical bounds next to the measured quantities for each logged k:
    gap bound ||x* - x0||^2 / (2 A_k), its gamma-free form ||x* - x0||^2 L / k,
    the linear-rate factor (1 + gamma/(2L))^(k-1), the distance bound
    2 ||x0 - x*||^2 / (1 + gamma A_k), and for bounded domains
    (D1^2 + D2^2) / (2 A_k).
    """
    if reference.x_star.shape != x0.shape:
        raise DimensionMismatchError("reference and x0 have different dimensions")
    radius_sq = dist_sq(reference.x_star, x0)
    tolerance = 1e-7 * (1.0 + radius_sq)
    bounded = all(math.isfinite(d) for d in diameters)

    by_k = {}
    for rec in trace:
        by_k.setdefault(rec.k, {})[rec.iterate] = rec

    rows = []
    for k in sorted(by_k):
        last, avg = by_k[k].get("last"), by_k[k].get("avg")
        anchor = last or avg
        A_k = anchor.A_k
        L_k = anchor.L_k if math.isfinite(anchor.L_k) else (config.L or math.nan)
        gap_bound = radius_sq / (2.0 * A_k) if A_k > 0 else math.inf
        sublinear = radius_sq * L_k / k if k > 0 else math.inf
        linear_factor = (1.0 + config.gamma / (2.0 * L_k)) ** (k - 1) if k > 0 else 1.0
        dist_bound = 2.0 * radius_sq / (1.0 + config.gamma * A_k)
        domain = (diameters[0] ** 2 + diameters[1] ** 2) / (2.0 * A_k) if bounded and A_k > 0 else None

        measured_gap = avg.primal_gap if avg is not None else math.nan
        measured_dist = last.dist_sq if last is not None else math.nan
        violated = measured_gap > gap_bound + tolerance or measured_dist > dist_bound + tolerance
        rows.append(BoundRow(k=k, A_k=A_k, measured_gap=measured_gap, gap_bound=gap_bound,
                             sublinear_bound=sublinear, linear_factor=linear_factor,
                             measured_dist_sq=measured_dist, dist_bound=dist_bound,
                             domain_bound=domain, violated=violated))
    if any(row.violated for row in rows):
        logger.warning(f"{sum(row.violated for row in rows)} logged iterations exceed their bound")
    return rows
