import math
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import ClassVar, List, Literal, Optional, Tuple, Union

Variant = Literal["coder", "coder-pf", "pccm", "prcm"]
PermutationPolicy = Literal["fixed", "shuffle-once", "shuffle-per-iteration"]


class SolverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: Variant = "coder"
    L: Optional[float] = Field(default=None, gt=0)
    L0: Optional[float] = Field(default=None, gt=0)
    gamma: float = Field(default=0.0, ge=0)
    max_iterations: Optional[int] = Field(default=None, ge=1)
    budget_passes: Optional[float] = Field(default=None, gt=0)
    permutation: PermutationPolicy = "fixed"
    trace_every: int = Field(default=1, ge=1)
    seed: int = 0
    pf_cap_factor: Optional[float] = Field(default=None, gt=1)
    divergence_threshold: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def check_step_parameters(self):
        if self.variant == "coder-pf":
            if self.L0 is None:
                raise ValueError("coder-pf needs L0")
            if self.permutation == "shuffle-per-iteration":
                raise ValueError("coder-pf supports only fixed or shuffle-once block orders")
        elif self.L is None:
            raise ValueError(f"{self.variant} needs L")
        if self.max_iterations is None:
            # Every iteration costs at least one pass
            self.max_iterations = math.ceil(self.budget_passes) if self.budget_passes else 1000
        return self


class TraceRecord(BaseModel):
    k: int
    passes: float
    time_s: float
    primal_gap: float = math.nan
    dist_sq: float = math.nan
    gap_at_ref: float = math.nan
    cert_lhs: float = math.nan
    cert_rhs: float = math.nan
    iterate: Literal["last", "avg"] = "last"
    # In-memory only; not part of the CSV schema
    A_k: float = 0.0
    L_k: float = math.nan
    estimate_lhs: float = math.nan
    estimate_rhs: float = math.nan
    norm: float = math.nan

    CSV_FIELDS: ClassVar[Tuple[str, ...]] = ("k", "passes", "time_s", "primal_gap", "dist_sq", "gap_at_ref", "cert_lhs", "cert_rhs", "iterate")


class LipschitzReport(BaseModel):
    m: int
    L: float
    M: float
    ordering: List[int]
    method: Literal["exact-dense", "matrix-free"]
    converged: bool = True

    def satisfies_block_bound(self, atol: float = 1e-9) -> bool:
        return self.L <= math.sqrt(self.m) * self.M + atol


class SweepRow(BaseModel):
    n: int
    d: int
    repeat: Union[int, str]
    L: float
    M: float


class ReferenceSummary(BaseModel):
    """Serializable form of a reference solution."""
    x_star: List[float]
    f_star: float
    method: str
    budget: int
    residual: float
    certified: bool
    cross_check: Optional[float] = None


class BoundRow(BaseModel):
    k: int
    A_k: float
    measured_gap: float
    gap_bound: float
    sublinear_bound: float
    linear_factor: float
    measured_dist_sq: float
    dist_bound: float
    domain_bound: Optional[float] = None
    violated: bool = False


# --- Run configuration (INI sections) ---

class SolverSection(BaseModel):
    """The [solver] section. Unset step parameters are filled in per run by the CLI."""
    model_config = ConfigDict(extra="forbid")

    variant: Variant = "coder"
    L: Optional[float] = Field(default=None, gt=0)
    L0: Optional[float] = Field(default=None, gt=0)
    gamma: Optional[float] = Field(default=None, ge=0)
    max_iterations: Optional[int] = Field(default=None, ge=1)
    budget_passes: Optional[float] = Field(default=None, gt=0)
    permutation: PermutationPolicy = "fixed"
    trace_every: int = Field(default=1, ge=1)
    seed: int = 0
    pf_cap_factor: Optional[float] = Field(default=None, gt=1)
    divergence_threshold: Optional[float] = Field(default=None, gt=0)

    def build(self, **fill) -> SolverConfig:
        data = self.model_dump(exclude_none=True)
        data.update({k: v for k, v in fill.items() if v is not None})
        return SolverConfig(**data)


class ProblemSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["lasso", "elastic-net", "l1-svm", "bilinear-toy"]
    data: Optional[str] = None
    n: int = Field(default=100, ge=1)
    d: int = Field(default=50, ge=1)
    density: float = Field(default=1.0, gt=0, le=1)
    data_seed: int = 0
    lam: List[float] = [0.0]
    lam2: float = 0.0
    max_samples: Optional[int] = Field(default=None, ge=1)
    normalize: bool = True
    mnist_labels: bool = False
    block_size: int = Field(default=1, ge=1)

    @field_validator("lam")
    @classmethod
    def non_negative(cls, v):
        if not v or any(x < 0 for x in v):
            raise ValueError("lambda values must be non-negative and at least one must be given")
        return v


class RunSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out: str = "trace.csv"
    jobs: int = Field(default=1, ge=1)
    x0: Literal["zeros", "ones"] = "zeros"
    l_grid: List[int] = []
    wall_time: bool = True
    variants: List[Variant] = ["coder", "pccm", "prcm"]


class ReferenceSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    policy: Literal["compute", "load", "none"] = "compute"
    path: Optional[str] = None
    budget: Optional[int] = Field(default=None, ge=1)
    tol: Optional[float] = Field(default=None, gt=0)


class LipschitzSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["sweep-d", "sweep-n", "worked-example", "problem"] = "sweep-d"
    fixed: int = Field(default=200, ge=1)
    step: int = Field(default=10, ge=1)
    repeats: int = Field(default=20, ge=1)
    seed: int = 0
    t: List[float] = [1.0, 2.0, 10.0]


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: Optional[ProblemSpec] = None
    solver: SolverSection = SolverSection()
    run: RunSpec = RunSpec()
    reference: ReferenceSpec = ReferenceSpec()
    lipschitz: LipschitzSpec = LipschitzSpec()
