from pydantic_settings import BaseSettings
from typing import Optional


class Settings(BaseSettings):
    # Data paths
    DEFAULT_CASE_PATH: str = "app/data/cases/ieee33.json"
    OUTPUT_DIR: str = "output"

    # ST-D2 coordinator
    DELTA: float = 0.1
    ZETA: float = 1e-4
    MAX_ITER: int = 50
    STEP_RULE: str = "constant"  # "constant" or "diminishing"
    PROXIMAL: bool = True  # proximal pull of the network-side TCL copies, weight = step size

    # Chance constraints and objective
    ETA_G: float = 0.05
    ETA_V: float = 0.05
    LAMBDA_TARIFF: Optional[float] = None  # $/kWh, None keeps the case tariff (10 if absent)
    SIGMA_FRAC: Optional[float] = None  # None keeps the case value
    GAMMA_MODE: Optional[str] = None  # None keeps each ensemble's case value
    ALPHA_MODE: str = "fixed"
    OBJECTIVE_MODE: str = "exact"

    # Monte Carlo validation
    N_SAMPLES: int = 500
    SEED: int = 0

    # Worker pool (None = available parallelism)
    WORKERS: Optional[int] = None

    # Conic interior-point solver
    SOLVER_TOL_P: float = 1e-8
    SOLVER_TOL_D: float = 1e-8
    SOLVER_TOL_GAP: float = 1e-8
    SOLVER_TOL_INFEAS: float = 1e-8
    SOLVER_MAX_ITER: int = 200
    SOLVER_STEP_FACTOR: float = 0.99

    LOG_LEVEL: str = "INFO"

    class Config:
        env_file = ".env"
        env_prefix = "TCLOPF_"
        extra = "allow"


settings = Settings()
