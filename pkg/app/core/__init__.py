from .network import Network, validate_radial, build_path_incidence
from .tcl_mdp import EnsembleSpec, EnsemblePolicy, backward_forward_solve, ensemble_from_site
from .conic import ConeBlock, ConeKind, StandardConicProgram, InteriorPointSolver, solve
from .ccopf import UncertaintyModel, CcopfConfig, CcopfResult, build_ccopf, solve_interval

__all__ = [
    "Network", "validate_radial", "build_path_incidence",
    "EnsembleSpec", "EnsemblePolicy", "backward_forward_solve", "ensemble_from_site",
    "ConeBlock", "ConeKind", "StandardConicProgram", "InteriorPointSolver", "solve",
    "UncertaintyModel", "CcopfConfig", "CcopfResult", "build_ccopf", "solve_interval",
]
