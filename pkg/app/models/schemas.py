from pydantic import BaseModel, Field, field_validator
from typing import List, Optional, Union
from enum import Enum


class GammaMode(str, Enum):
    UNIFORM = "uniform"
    NONUNIFORM = "nonuniform"


class AlphaMode(str, Enum):
    FIXED = "fixed"
    OPTIMIZE = "optimize"


class ObjectiveMode(str, Enum):
    EXACT = "exact"
    AGGREGATED = "paper"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value.lower() == "aggregated":
            return cls.AGGREGATED
        return None


class StepRule(str, Enum):
    CONSTANT = "constant"
    DIMINISHING = "diminishing"


class SolverStatus(str, Enum):
    OPTIMAL = "optimal"
    INACCURATE = "inaccurate"  # stalled within a relaxed tolerance
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"


class RunStatus(str, Enum):
    CONVERGED = "converged"
    NOT_CONVERGED = "not_converged"


class SweepParameter(str, Enum):
    SIGMA_FRAC = "sigma_frac"
    ETA_V = "eta_v"
    GAMMA_MODE = "gamma_mode"
    N_STATES = "n_states"
    N_ENSEMBLES = "n_ensembles"


# ---------------------------------------------------------------------------
# Case document
# ---------------------------------------------------------------------------

Profile = Union[float, List[float]]


class CaseHeader(BaseModel):
    name: str = "case"
    base_kva: float = Field(gt=0)
    base_kv: float = Field(gt=0)
    horizon: int = Field(ge=1)
    root: Optional[int] = None  # defaults to the first listed bus
    v0_sq: float = Field(default=1.0, gt=0)
    k_factor: float = 0.0  # reactive/active forecast-error ratio
    lambda_tariff: Optional[Union[float, List[float]]] = None


class BusRecord(BaseModel):
    id: int
    v_min_sq: float
    v_max_sq: float
    load_p: Profile = 0.0
    load_q: Profile = 0.0


class LineRecord(BaseModel):
    id: int
    from_bus: int = Field(alias="from")
    to_bus: int = Field(alias="to")
    r_pu: float
    x_pu: float

    model_config = {"populate_by_name": True}


class GeneratorRecord(BaseModel):
    bus: int
    p_min: Optional[float] = None  # None = unbounded
    p_max: Optional[float] = None
    q_min: Optional[float] = None
    q_max: Optional[float] = None


class PvRecord(BaseModel):
    bus: int
    forecast_p: Profile
    sigma_frac: float = Field(default=0.3, ge=0)
    rating_kw: Optional[float] = None


class TclRecord(BaseModel):
    bus: int
    avg_load_kw: float = Field(gt=0)
    n_states: int = 8
    range_lo_frac: float = 0.10
    range_hi_frac: float = 2.00
    power_factor: float = Field(default=1.0, gt=0, le=1)
    gamma_mode: GammaMode = GammaMode.UNIFORM
    default_transitions: Optional[List[List[float]]] = None  # [to][from], column-stochastic
    rho_init: Optional[List[float]] = None

    @field_validator("n_states")
    @classmethod
    def check_states(cls, v: int) -> int:
        if v < 2:
            raise ValueError("n_states must be at least 2")
        return v


class CaseDocument(BaseModel):
    header: CaseHeader
    buses: List[BusRecord]
    lines: List[LineRecord]
    generators: List[GeneratorRecord] = []
    pv: List[PvRecord] = []
    tcl: List[TclRecord] = []


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

class RunManifest(BaseModel):
    """Resolved configuration of one run; echoed next to every artefact set"""
    case_path: str
    output_dir: str
    delta: float = Field(default=0.1, gt=0)
    zeta: float = Field(default=1e-4, gt=0)
    max_iter: int = Field(default=50, ge=1)
    step_rule: StepRule = StepRule.CONSTANT
    proximal: bool = True  # regularize the network-side TCL copies toward the ensemble injections
    eta_g: float = Field(default=0.05, gt=0, lt=0.5)
    eta_v: float = Field(default=0.05, gt=0, lt=0.5)
    lambda_tariff: Optional[float] = Field(default=None, ge=0)  # None keeps the case tariff
    sigma_frac: Optional[float] = Field(default=None, ge=0)
    gamma_mode: Optional[GammaMode] = None  # None keeps per-ensemble case value
    alpha_mode: AlphaMode = AlphaMode.FIXED
    objective_mode: ObjectiveMode = ObjectiveMode.EXACT
    n_states: Optional[int] = Field(default=None, ge=2)
    n_ensembles: Optional[int] = Field(default=None, ge=0)
    n_samples: int = Field(default=500, ge=1)
    seed: int = 0
    workers: Optional[int] = Field(default=None, ge=1)
    version: str = "1.0.0"

    @field_validator("objective_mode", mode="before")
    @classmethod
    def objective_alias(cls, v):
        return ObjectiveMode(v) if isinstance(v, str) else v
