"""
Cyclic block-coordinate dual averaging with extrapolation, its parameter-free
(doubling) variant, and the two baselines without extrapolation: the cyclic
PCCM and the randomized PRCM.

All four share one state machine. Iteration k uses

    a_k = (1 + gamma A_{k-1}) / (2 L),  A_k = A_{k-1} + a_k

and for each block i in the pass order

    p_k^i = F^i(x_k^1, ..., x_k^{i-1}, x_{k-1}^i, ..., x_{k-1}^m)
    q_k^i = p_k^i + (a_{k-1} / a_k) (F^i(x_{k-1}) - p_{k-1}^i)
    g_k^i = g_{k-1}^i + a_k q_k^i
    x_k^i = prox_{A_k g^i}(x_0^i - g_k^i)

The baselines drop the correction term (q = p).
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence

import numpy as np

from models.schemas import SolverConfig, TraceRecord
from utils.config import settings
from utils.errors import ConfigError, DivergenceError, DomainError, LipschitzCapError
from utils.linalg import as_vector
from utils.logger import log_event
from utils.metrics import CertificateTracker, ReferenceSolution, make_trace_records
from utils.problems import GmviProblem, PassState

logger = logging.getLogger(__name__)


@dataclass
class SolverState:
    x0: np.ndarray
    x_prev: np.ndarray
    x: np.ndarray
    g: np.ndarray
    # F(x_k); None for baselines that run without operator tracking
    F_x: Optional[np.ndarray]
    p: np.ndarray
    weighted_sum: np.ndarray
    L: float
    a: float = 0.0
    A: float = 0.0
    k: int = 0
    passes: float = 0.0
    doublings: int = 0
    pass_state: Optional[PassState] = field(default=None, repr=False)

    @property
    def x_avg(self) -> np.ndarray:
        if self.A <= 0.0:
            return self.x.copy()
        return self.weighted_sum / self.A

    def copy(self) -> "SolverState":
        # The pass state is shared: begin_pass only reuses it when its point matches
        return replace(self, x_prev=self.x_prev.copy(), x=self.x.copy(), g=self.g.copy(),
                       F_x=None if self.F_x is None else self.F_x.copy(), p=self.p.copy(),
                       weighted_sum=self.weighted_sum.copy())


@dataclass
class SolveResult:
    x_last: np.ndarray
    x_avg: np.ndarray
    iterations: int
    A_K: float
    doubling_count: int
    trace: List[TraceRecord]
    L_final: float
    passes: float
    accepted_L: List[float] = field(default_factory=list)


def init_state(problem: GmviProblem, x0: np.ndarray, L: float, track_operator: bool = True,
               count_pass: bool = True) -> SolverState:
    """x_{-1} = x_0, p_0 = F(x_0), g_0 = 0, a_0 = A_0 = 0."""
    dim = problem.dim
    state = SolverState(x0=x0.copy(), x_prev=x0.copy(), x=x0.copy(), g=np.zeros(dim), F_x=None,
                        p=np.zeros(dim), weighted_sum=np.zeros(dim), L=L)
    if track_operator:
        state.F_x = problem.full_operator(x0)
        state.p = state.F_x.copy()
        state.passes = 1.0 if count_pass else 0.0
    return state


def coder_iteration(state: SolverState, problem: GmviProblem, order: Sequence[int], L: float, gamma: float,
                    extrapolate: bool = True, track_operator: bool = True) -> SolverState:
    """One cyclic pass. Updates ``state`` in place and returns it."""
    a = (1.0 + gamma * state.A) / (2.0 * L)
    A = state.A + a
    ps = problem.begin_pass(state.x, reuse=state.pass_state)
    x_prev = state.x.copy()
    p = np.empty(problem.dim)
    ratio = state.a / a if extrapolate and state.F_x is not None else 0.0

    for i in order:
        sl = problem.partition.block(i)
        p_i = problem.block_operator(ps, i)
        q_i = p_i + ratio * (state.F_x[sl] - state.p[sl]) if ratio else p_i
        state.g[sl] += a * q_i
        problem.commit_block(ps, i, problem.prox_block(i, state.x0[sl] - state.g[sl], A))
        p[sl] = p_i

    state.x_prev = x_prev
    state.x = ps.x.copy()
    state.pass_state = ps
    state.p = p
    state.a, state.A, state.L = a, A, L
    state.weighted_sum += a * state.x
    state.k += 1
    state.passes += 1.0
    if extrapolate or track_operator:
        state.F_x = problem.operator_at_pass(ps)
        if extrapolate:
            state.passes += 1.0
    return state


def pccm_iteration(state: SolverState, problem: GmviProblem, order: Sequence[int], L: float, gamma: float,
                   track_operator: bool = False) -> SolverState:
    """Cyclic pass with q_k^i = p_k^i."""
    return coder_iteration(state, problem, order, L, gamma, extrapolate=False, track_operator=track_operator)


def lipschitz_check(state: SolverState, L: float) -> bool:
    """||F(x_k) - p_k|| <= L ||x_k - x_{k-1}||, with a small absolute slack for roundoff."""
    lhs = float(np.linalg.norm(state.F_x - state.p))
    rhs = L * float(np.linalg.norm(state.x - state.x_prev))
    if not (math.isfinite(lhs) and math.isfinite(rhs)):
        return False
    return lhs <= rhs + settings.PF_CHECK_ATOL * (1.0 + float(np.linalg.norm(state.F_x)))


def coder_pf_iteration(state: SolverState, problem: GmviProblem, order: Sequence[int], gamma: float,
                       L_cap: float) -> SolverState:
    """
    Parameter-free iteration: starting from L_{k-1}/2, double the estimate and
    rerun the pass from the pre-iteration state until the Lipschitz check
    passes. Every trial costs two passes. Returns the accepted state.
    """
    snapshot = state.copy()
    L_k = snapshot.L / 2.0
    attempts = 0
    while True:
        L_k *= 2.0
        if L_k > L_cap:
            raise LipschitzCapError(f"Lipschitz estimate {L_k:.3e} exceeds cap {L_cap:.3e}",
                                    iteration=snapshot.k + 1, L=L_k)
        trial = coder_iteration(snapshot.copy(), problem, order, L_k, gamma)
        attempts += 1
        if lipschitz_check(trial, L_k):
            break
        log_event(logging.DEBUG, "pf_doubling", f"Check failed at L={L_k:.6e}", iteration=trial.k, L=L_k)

    trial.doublings = snapshot.doublings + attempts - 1
    trial.passes = snapshot.passes + 2.0 * attempts
    return trial


def prcm_step(state: SolverState, problem: GmviProblem, ps: PassState, i: int, a: float, A: float):
    """Dual-averaging update of block i alone at the current point."""
    sl = problem.partition.block(i)
    p_i = problem.block_operator(ps, i)
    state.g[sl] += a * p_i
    problem.commit_block(ps, i, problem.prox_block(i, state.x0[sl] - state.g[sl], A))
    state.p[sl] = p_i


def prcm_pass(state: SolverState, problem: GmviProblem, L: float, gamma: float, rng: np.random.Generator,
              track_operator: bool = False) -> SolverState:
    """
    m uniformly sampled block steps, counted as one pass. The (a, A) schedule
    advances once per such virtual pass.
    """
    m = problem.partition.m
    a = (1.0 + gamma * state.A) / (2.0 * L)
    A = state.A + a
    ps = problem.begin_pass(state.x, reuse=state.pass_state)
    x_prev = state.x.copy()
    for i in rng.integers(0, m, size=m):
        prcm_step(state, problem, ps, int(i), a, A)

    state.x_prev = x_prev
    state.x = ps.x.copy()
    state.pass_state = ps
    state.a, state.A, state.L = a, A, L
    state.weighted_sum += a * state.x
    state.k += 1
    state.passes += 1.0
    if track_operator:
        state.F_x = problem.operator_at_pass(ps)
    return state


def block_orders(policy: str, m: int, seed: int) -> Iterator[List[int]]:
    """Pass orders for the fixed, shuffle-once and shuffle-per-iteration policies."""
    rng = np.random.default_rng(seed)
    if policy == "fixed":
        order = list(range(m))
    elif policy == "shuffle-once":
        order = [int(i) for i in rng.permutation(m)]
    elif policy == "shuffle-per-iteration":
        while True:
            yield [int(i) for i in rng.permutation(m)]
    else:
        raise ConfigError(f"unknown permutation policy {policy!r}")
    while True:
        yield order


def _check_divergence(state: SolverState, threshold: float):
    finite = bool(np.all(np.isfinite(state.x)))
    peak = float(np.max(np.abs(state.x))) if finite else math.inf
    if peak > threshold:
        last_norm = float(np.linalg.norm(state.x_prev))
        raise DivergenceError(f"iterate left the finite range at iteration {state.k}",
                              iteration=state.k, last_norm=last_norm)


def _validate_start(problem: GmviProblem, config: SolverConfig, x0) -> np.ndarray:
    x0 = as_vector(x0, problem.dim, name="x0")
    if not problem.in_domain(x0):
        raise DomainError("x0 lies outside dom(g)")
    if config.gamma > problem.gamma:
        raise ConfigError(f"gamma={config.gamma} exceeds the strong convexity modulus {problem.gamma} of g")
    return x0


def iterate(problem: GmviProblem, config: SolverConfig, x0, track_operator: bool = False) -> Iterator[SolverState]:
    """
    Yields the state at k = 0 and after each iteration until
    ``config.max_iterations``. Consumers may stop early; the yielded state is
    mutated by the next step.
    """
    x0 = _validate_start(problem, config, x0)
    variant = config.variant
    L = config.L0 if variant == "coder-pf" else config.L
    extrapolates = variant in ("coder", "coder-pf")
    state = init_state(problem, x0, L, track_operator=extrapolates or track_operator, count_pass=extrapolates)
    yield state

    orders = block_orders(config.permutation, problem.partition.m, config.seed)
    rng = np.random.default_rng(config.seed)
    threshold = config.divergence_threshold or settings.DIVERGENCE_THRESHOLD
    L_cap = (config.pf_cap_factor or settings.PF_CAP_FACTOR) * (config.L0 or 0.0)

    while state.k < config.max_iterations:
        if variant == "coder":
            state = coder_iteration(state, problem, next(orders), config.L, config.gamma)
        elif variant == "coder-pf":
            state = coder_pf_iteration(state, problem, next(orders), config.gamma, L_cap)
        elif variant == "pccm":
            state = pccm_iteration(state, problem, next(orders), config.L, config.gamma, track_operator)
        else:
            state = prcm_pass(state, problem, config.L, config.gamma, rng, track_operator)
        _check_divergence(state, threshold)
        yield state


def _result(state: Optional[SolverState], trace: List[TraceRecord], accepted_L: List[float]) -> Optional[SolveResult]:
    if state is None:
        return None
    return SolveResult(x_last=state.x.copy(), x_avg=state.x_avg, iterations=state.k, A_K=state.A,
                       doubling_count=state.doublings, trace=trace, L_final=state.L, passes=state.passes,
                       accepted_L=accepted_L)


def solve(problem: GmviProblem, config: SolverConfig, x0, reference: Optional[ReferenceSolution] = None,
          run_id: Optional[str] = None) -> SolveResult:
    """
    Runs ``config.variant`` from x0 for ``max_iterations`` iterations or until
    ``budget_passes`` passes are spent, whichever comes first. With a
    reference solution every logged record carries gaps and certificates.
    """
    x0 = _validate_start(problem, config, x0)
    tracker = CertificateTracker(problem, x0, reference.x_star, config.gamma) if reference is not None else None
    trace: List[TraceRecord] = []
    accepted_L: List[float] = []
    state: Optional[SolverState] = None
    start = time.perf_counter()

    log_event(logging.INFO, "solve_started", f"{config.variant} on {problem.kind}", run_id=run_id,
              variant=config.variant, problem=problem.kind, dim=problem.dim, blocks=problem.partition.m,
              L=config.L or config.L0, seed=config.seed)
    try:
        for state in iterate(problem, config, x0, track_operator=tracker is not None):
            if state.k > 0:
                accepted_L.append(state.L)
                if tracker is not None:
                    tracker.update(state.a, state.x, state.F_x)
            done = state.k >= config.max_iterations or (
                config.budget_passes is not None and state.passes >= config.budget_passes
            )
            if done or state.k % config.trace_every == 0:
                trace.extend(make_trace_records(problem, state, time.perf_counter() - start, reference, tracker))
            if done:
                break
    except DivergenceError as e:
        e.result = _result(state, trace, accepted_L)
        log_event(logging.WARNING, "solve_diverged", e.message, run_id=run_id, variant=config.variant,
                  problem=problem.kind, iteration=e.iteration, status="diverged")
        raise

    result = _result(state, trace, accepted_L)
    log_event(logging.INFO, "solve_completed", f"{result.iterations} iterations",
              run_id=run_id, variant=config.variant, problem=problem.kind, iteration=result.iterations,
              passes=result.passes, L=result.L_final, doublings=result.doubling_count, status="ok",
              duration_ms=round((time.perf_counter() - start) * 1000, 3))
    return result
