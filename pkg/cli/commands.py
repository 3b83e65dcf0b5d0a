"""
Command handlers behind ``main.py``. Each takes a validated ``RunConfig`` and
returns a process exit code; structured errors propagate to the entry point.
"""
import asyncio
import logging
import math
import os
import uuid
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from models.schemas import ProblemSpec, ReferenceSpec, RunConfig, SolverConfig, SolverSection, TraceRecord
from utils.data_io import (
    LabeledDataset, build_svm_matrix, format_float, gen_classification_dataset, gen_gaussian, gen_regression_targets,
    load_libsvm, load_reference, normalize_rows, save_libsvm, save_reference, trace_rows, write_csv,
)
from utils.errors import CoderError, ConfigError, DivergenceError, LipschitzCapError
from utils.linalg import BlockPartition, CsrMatrix
from utils.lipschitz import sweep_experiment, sweep_pairs, lipschitz_report, worked_example
from utils.logger import log_event
from utils.metrics import ReferenceSolution, compute_reference, bound_table, secant_lipschitz_estimate
from utils.problems import GmviProblem, make_bilinear_toy, make_elastic_net, make_l1_svm, make_lasso
from utils.solvers import SolveResult, block_orders, solve

logger = logging.getLogger(__name__)


# --- Problem construction ---

class ProblemFactory:
    """Builds problem instances for a [problem] section, loading or generating the data once."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self._dataset: Optional[LabeledDataset] = None
        self._regression = None

    def _load_dataset(self) -> LabeledDataset:
        if self._dataset is None:
            spec = self.spec
            if spec.data:
                dataset = load_libsvm(spec.data, mnist_labels=spec.mnist_labels, max_samples=spec.max_samples)
            else:
                dataset = gen_classification_dataset(spec.n, spec.d, spec.density, spec.data_seed)
            self._dataset = normalize_rows(dataset) if spec.normalize else dataset
        return self._dataset

    def _regression_data(self):
        if self._regression is None:
            spec = self.spec
            if spec.data:
                dataset = self._load_dataset()
                # Regression targets are the raw labels of the file
                self._regression = (dataset.features, dataset.raw_labels)
            else:
                A = gen_gaussian(spec.n, spec.d, seed=[spec.data_seed, 0], density=spec.density)
                b, _ = gen_regression_targets(A, seed=[spec.data_seed, 1])
                self._regression = (CsrMatrix.from_dense(A), b)
        return self._regression

    def build(self, lam: float) -> GmviProblem:
        spec = self.spec
        if spec.kind == "bilinear-toy":
            return make_bilinear_toy(spec.d)
        if spec.kind == "l1-svm":
            A_bar = build_svm_matrix(self._load_dataset())
            n, d = A_bar.shape
            return make_l1_svm(A_bar, lam, BlockPartition.uniform(d + n, spec.block_size))
        A, b = self._regression_data()
        partition = BlockPartition.uniform(A.n_cols, spec.block_size)
        if spec.kind == "elastic-net":
            return make_elastic_net(A, b, lam, spec.lam2, partition)
        return make_lasso(A, b, lam, partition)


def _require_problem(config: RunConfig) -> ProblemSpec:
    if config.problem is None:
        raise ConfigError("this command needs a [problem] section")
    return config.problem


def initial_point(problem: GmviProblem, policy: str) -> np.ndarray:
    return np.ones(problem.dim) if policy == "ones" else np.zeros(problem.dim)


def resolve_reference(problem: GmviProblem, spec: ReferenceSpec, lam: float) -> Optional[ReferenceSolution]:
    """Computes, loads or skips the reference solution. ``path`` may contain ``{lam}``."""
    if spec.policy == "none":
        return None
    path = spec.path.format(lam=lam) if spec.path else None
    if spec.policy == "load":
        if not path:
            raise ConfigError("reference policy 'load' needs a path")
        return ReferenceSolution.from_summary(load_reference(path), problem)
    reference = compute_reference(problem, spec.budget, spec.tol)
    if path:
        save_reference(reference.to_summary(), path)
    return reference


def step_parameters(problem: GmviProblem, section: SolverSection, variants: Sequence[str]) -> Dict[str, float]:
    """gamma, L and (for the parameter-free variant) L0, taken from the section or computed."""
    fill: Dict[str, float] = {"gamma": problem.gamma if section.gamma is None else section.gamma}
    if any(v != "coder-pf" for v in variants):
        if section.L is not None:
            fill["L"] = section.L
        else:
            order = None
            if section.permutation != "fixed":
                order = next(block_orders(section.permutation, problem.partition.m, section.seed))
            fill["L"] = lipschitz_report(problem, ordering=order).L
    if "coder-pf" in variants:
        fill["L0"] = section.L0 if section.L0 is not None else secant_lipschitz_estimate(problem)
    return fill


def grid_configs(problem: GmviProblem, section: SolverSection, variant: str, l_grid: Sequence[int]) -> List[SolverConfig]:
    """One config per point of the tuning grid {10/n * k}."""
    gamma = problem.gamma if section.gamma is None else section.gamma
    key = "L0" if variant == "coder-pf" else "L"
    return [section.build(variant=variant, gamma=gamma, **{key: 10.0 / problem.n_samples * k}) for k in l_grid]


def step_of(config: SolverConfig) -> float:
    return config.L0 if config.variant == "coder-pf" else config.L


# --- Concurrent runs ---

@dataclass
class RunOutcome:
    prefix: List
    config: SolverConfig
    result: Optional[SolveResult]
    status: str
    error: Optional[CoderError] = None


def execute_run(problem: GmviProblem, config: SolverConfig, x0: np.ndarray, reference: Optional[ReferenceSolution],
                prefix: List, run_id: str) -> RunOutcome:
    try:
        result = solve(problem, config, x0, reference=reference, run_id=run_id)
        return RunOutcome(prefix=prefix, config=config, result=result, status="ok")
    except DivergenceError as e:
        return RunOutcome(prefix=prefix, config=config, result=e.result, status="diverged", error=e)
    except LipschitzCapError as e:
        log_event(logging.WARNING, "solve_lipschitz_cap", e.message, run_id=run_id, variant=config.variant,
                  iteration=e.iteration, L=e.L, status="lipschitz-cap")
        return RunOutcome(prefix=prefix, config=config, result=None, status="lipschitz-cap", error=e)


async def _gather_bounded(jobs: int, thunks: Sequence[Callable[[], RunOutcome]]) -> List[RunOutcome]:
    semaphore = asyncio.Semaphore(max(1, jobs))

    async def bounded(thunk):
        async with semaphore:
            return await asyncio.to_thread(thunk)

    return await asyncio.gather(*(bounded(t) for t in thunks))


def run_bounded(jobs: int, thunks: Sequence[Callable[[], RunOutcome]]) -> List[RunOutcome]:
    """Runs independent solver runs with at most ``jobs`` in flight; results keep input order."""
    if jobs <= 1:
        return [thunk() for thunk in thunks]
    return asyncio.run(_gather_bounded(jobs, thunks))


def _records(outcome: RunOutcome, wall_time: bool) -> List[TraceRecord]:
    if outcome.result is None:
        return []
    if wall_time:
        return outcome.result.trace
    return [rec.model_copy(update={"time_s": 0.0}) for rec in outcome.result.trace]


def _final_gap(outcome: RunOutcome) -> float:
    if outcome.result is None:
        return math.nan
    avg = [rec for rec in outcome.result.trace if rec.iterate == "avg"]
    return avg[-1].primal_gap if avg else math.nan


def _summary_line(problem: GmviProblem, lam: float, outcome: RunOutcome,
                  reference: Optional[ReferenceSolution] = None) -> str:
    r = outcome.result
    if r is None:
        return f"{outcome.config.variant} {problem.kind} lam={lam:g} status={outcome.status}"
    line = (f"{outcome.config.variant} {problem.kind} lam={lam:g} L={r.L_final:.6e} iterations={r.iterations} "
            f"passes={r.passes:g} doublings={r.doubling_count} final_gap={_final_gap(outcome):.6e}")
    if reference is not None:
        line += f" ref_residual={reference.residual:.3e} ref_certified={reference.certified}"
    return f"{line} status={outcome.status}"


def tuned_outcomes(outcomes: Sequence[RunOutcome]) -> List[RunOutcome]:
    """Per (lambda, variant), the grid run with the smallest final averaged gap; ties keep the earlier grid point."""
    best: Dict[tuple, tuple] = {}
    for outcome in outcomes:
        key = tuple(outcome.prefix[:2])
        gap = _final_gap(outcome)
        score = gap if math.isfinite(gap) else math.inf
        if key not in best or score < best[key][0]:
            best[key] = (score, outcome)
    return [outcome for _, outcome in best.values()]


def _seed_comments(config: RunConfig, **extra) -> Dict[str, object]:
    comments: Dict[str, object] = {}
    if config.problem is not None:
        comments.update(problem=config.problem.kind, data=config.problem.data or "synthetic",
                        data_seed=config.problem.data_seed)
    comments.update(solver_seed=config.solver.seed, permutation=config.solver.permutation)
    comments.update(extra)
    return comments


# --- Commands ---

def cmd_solve(config: RunConfig) -> int:
    spec = _require_problem(config)
    run_id = uuid.uuid4().hex[:12]
    if len(spec.lam) > 1:
        logger.warning(f"solve uses the first of {len(spec.lam)} lambda values; use bench for sweeps")
    lam = spec.lam[0]
    problem = ProblemFactory(spec).build(lam)
    x0 = initial_point(problem, config.run.x0)
    reference = resolve_reference(problem, config.reference, lam)
    section = config.solver
    variant = section.variant

    if config.run.l_grid:
        configs = [([step_of(cfg)], cfg) for cfg in grid_configs(problem, section, variant, config.run.l_grid)]
    else:
        configs = [([], section.build(**step_parameters(problem, section, [variant])))]

    outcomes = run_bounded(config.run.jobs, [
        (lambda p=prefix, c=cfg: execute_run(problem, c, x0, reference, p, run_id)) for prefix, cfg in configs
    ])

    header = (("L",) if config.run.l_grid else ()) + TraceRecord.CSV_FIELDS
    rows = []
    for outcome in outcomes:
        rows.extend(trace_rows(_records(outcome, config.run.wall_time), outcome.prefix))
    comments = _seed_comments(config, variant=variant, lam=lam)
    if not config.run.l_grid:
        comments.update(L=configs[0][1].L, L0=configs[0][1].L0)
    if reference is not None:
        comments.update(reference_residual=format_float(reference.residual), reference_certified=reference.certified)
    write_csv(config.run.out, header, rows, comments)

    outcome = outcomes[0]
    if reference is not None and not config.run.l_grid and outcome.result is not None:
        bounds = bound_table(outcome.result.trace, outcome.config, reference, x0, problem.domain_diameters())
        root, _ = os.path.splitext(config.run.out)
        fields = list(type(bounds[0]).model_fields) if bounds else []
        write_csv(f"{root}.bounds.csv", fields, ([getattr(b, f) if getattr(b, f) is not None else math.nan
                                                  for f in fields] for b in bounds), comments)

    for outcome in outcomes:
        print(_summary_line(problem, lam, outcome, reference))
    failed = [o for o in outcomes if o.status != "ok"]
    return failed[0].error.exit_code if failed else 0


def cmd_bench(config: RunConfig) -> int:
    """
    CODER, PCCM and PRCM (or the configured variants) per lambda, merged into
    one CSV aligned by passes. With ``[run] l_grid`` every variant is tuned
    over {10/n * k} and only the run with the smallest final averaged gap is
    written.
    """
    spec = _require_problem(config)
    run_id = uuid.uuid4().hex[:12]
    factory = ProblemFactory(spec)
    variants = list(config.run.variants)
    section = config.solver

    thunks = []
    problems = {}
    references = {}
    for lam in spec.lam:
        problem = factory.build(lam)
        problems[lam] = problem
        x0 = initial_point(problem, config.run.x0)
        reference = resolve_reference(problem, config.reference, lam)
        references[lam] = reference
        if config.run.l_grid:
            configs = [cfg for variant in variants
                       for cfg in grid_configs(problem, section, variant, config.run.l_grid)]
        else:
            fill = step_parameters(problem, section, variants)
            configs = [section.build(variant=variant, **fill) for variant in variants]
        for cfg in configs:
            thunks.append(lambda p=problem, c=cfg, x=x0, r=reference, prefix=[lam, cfg.variant]:
                          execute_run(p, c, x, r, prefix, run_id))

    outcomes = run_bounded(config.run.jobs, thunks)
    if config.run.l_grid:
        outcomes = tuned_outcomes(outcomes)

    header = ("lambda", "variant", "status", "L") + TraceRecord.CSV_FIELDS
    rows = []
    for outcome in outcomes:
        prefix = outcome.prefix + [outcome.status, step_of(outcome.config)]
        rows.extend(trace_rows(_records(outcome, config.run.wall_time), prefix))
    residuals = " ".join(f"{lam:g}:{format_float(r.residual)}" for lam, r in references.items() if r is not None)
    comments = _seed_comments(config, variants=" ".join(variants))
    if residuals:
        comments.update(reference_residual=residuals)
    write_csv(config.run.out, header, rows, comments)

    for outcome in outcomes:
        lam = outcome.prefix[0]
        print(_summary_line(problems[lam], lam, outcome, references[lam]))
    return 0


def cmd_lipschitz(config: RunConfig) -> int:
    spec = config.lipschitz
    out = config.run.out
    if spec.mode in ("sweep-d", "sweep-n"):
        n_list, d_list = sweep_pairs(spec.mode, spec.fixed, spec.step)
        table = sweep_experiment(n_list, d_list, spec.repeats, spec.seed, jobs=config.run.jobs)
        rows = [[r.n, r.d, str(r.repeat), r.L, r.M] for r in table.rows + table.medians]
        write_csv(out, ("n", "d", "repeat", "L", "M"), rows,
                  {"mode": spec.mode, "seed": spec.seed, "repeats": spec.repeats})
        below = sum(1 for r in table.medians if r.L < r.M)
        print(f"{spec.mode}: median L < median M for {below} of {len(table.medians)} pairs")
        return 0

    if spec.mode == "worked-example":
        rows = []
        for t in spec.t:
            report = worked_example(t)
            rows.append([t, report.L, report.M, report.L ** 2, report.M ** 2, math.sqrt(report.m) * report.M])
            print(f"t={t:g} L={report.L:.12e} M={report.M:.12e}")
        write_csv(out, ("t", "L", "M", "L_sq", "M_sq", "sqrt_m_M"), rows, {"mode": spec.mode})
        return 0

    problem_spec = _require_problem(config)
    problem = ProblemFactory(problem_spec).build(problem_spec.lam[0])
    report = lipschitz_report(problem)
    write_csv(out, ("m", "L", "M", "sqrt_m_M", "method", "converged"),
              [[report.m, report.L, report.M, math.sqrt(report.m) * report.M, report.method, str(report.converged)]],
              _seed_comments(config, mode=spec.mode))
    print(f"{problem.kind}: m={report.m} L={report.L:.12e} M={report.M:.12e} ({report.method})")
    return 0


def cmd_gen_data(config: RunConfig) -> int:
    spec = _require_problem(config)
    dataset = gen_classification_dataset(spec.n, spec.d, spec.density, spec.data_seed)
    save_libsvm(dataset, config.run.out,
                comments={"n": spec.n, "d": spec.d, "density": spec.density, "seed": spec.data_seed})
    log_event(logging.INFO, "dataset_written", f"Wrote {spec.n}x{spec.d} dataset", path=config.run.out,
              rows=spec.n, dim=spec.d, seed=spec.data_seed)
    print(f"wrote {spec.n} samples with {spec.d} features to {config.run.out}")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "bench": cmd_bench,
    "lipschitz": cmd_lipschitz,
    "gen-data": cmd_gen_data,
}
