from .std2 import Std2Coordinator, Std2Config, IntegratedSolution
from .validation import MonteCarloValidator, sample_scenarios
from .result_writer import ResultWriter
from .sweep import SweepRunner

__all__ = [
    "Std2Coordinator", "Std2Config", "IntegratedSolution",
    "MonteCarloValidator", "sample_scenarios", "ResultWriter", "SweepRunner",
]
