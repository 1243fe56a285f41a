"""
Parameter sweeps: one solve (+ validation) per value, collected into tidy
tables. A failing value is recorded and the sweep moves on.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence
import logging

import numpy as np
import pandas as pd

from app.core.exceptions import TclOpfError
from app.models.schemas import GammaMode, RunManifest, SweepParameter
from app.services.pipeline import run_solve, run_validation

logger = logging.getLogger(__name__)

INTERVAL_COLUMNS = [
    "parameter", "value", "t", "expected_loss", "baseline_expected_loss", "mean_loss", "std_loss",
    "q95_loss", "max_voltage_violation_rate",
]
SUMMARY_COLUMNS = [
    "parameter", "value", "status", "iterations", "integrated_objective", "total_expected_loss",
    "baseline_total_expected_loss", "mean_realized_loss", "max_voltage_violation_rate", "wall_seconds",
    "error",
]


def parse_values(parameter: SweepParameter, raw: Sequence[str]) -> List[Any]:
    """Typed sweep values in the order given"""
    if not raw:
        raise ValueError(f"sweep over {parameter.value} needs at least one value")
    if parameter in (SweepParameter.SIGMA_FRAC, SweepParameter.ETA_V):
        return [float(v) for v in raw]
    if parameter in (SweepParameter.N_STATES, SweepParameter.N_ENSEMBLES):
        return [int(v) for v in raw]
    return [GammaMode(v) for v in raw]


@dataclass
class SweepCase:
    parameter: SweepParameter
    value: Any

    @property
    def label(self) -> str:
        return str(self.value.value if isinstance(self.value, GammaMode) else self.value)


@dataclass
class SweepResult:
    case: SweepCase
    status: str = "failed"
    iterations: int = 0
    integrated_objective: Optional[float] = None
    total_expected_loss: Optional[float] = None
    baseline_total_expected_loss: Optional[float] = None
    mean_realized_loss: Optional[float] = None
    max_voltage_violation_rate: Optional[float] = None
    wall_seconds: float = 0.0
    error: Optional[str] = None
    intervals: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "parameter": self.case.parameter.value,
            "value": self.case.label,
            "status": self.status,
            "iterations": self.iterations,
            "integrated_objective": self.integrated_objective,
            "total_expected_loss": self.total_expected_loss,
            "baseline_total_expected_loss": self.baseline_total_expected_loss,
            "mean_realized_loss": self.mean_realized_loss,
            "max_voltage_violation_rate": self.max_voltage_violation_rate,
            "wall_seconds": self.wall_seconds,
            "error": self.error,
        }


class SweepRunner:
    """Runs one parameter sweep against a base manifest"""

    def __init__(self, manifest: RunManifest, validate: bool = True, truncate: bool = False):
        self.manifest = manifest
        self.validate = validate
        self.truncate = truncate
        self.results: List[SweepResult] = []

    def manifest_for(self, case: SweepCase) -> RunManifest:
        values = self.manifest.model_dump()
        values[case.parameter.value] = case.value
        return RunManifest(**values)

    def run_case(self, case: SweepCase) -> SweepResult:
        result = SweepResult(case=case)
        try:
            manifest = self.manifest_for(case)
            run = run_solve(manifest, with_baseline=True)
            solution = run.solution
            result.status = solution.status.value
            result.iterations = solution.iterations
            result.integrated_objective = solution.integrated_objective
            result.total_expected_loss = float(solution.expected_losses.sum())
            result.wall_seconds = solution.wall_seconds
            baseline = [r.expected_loss for r in run.baseline] if run.baseline else None
            if baseline is not None:
                result.baseline_total_expected_loss = float(sum(baseline))

            losses, rates = None, None
            if self.validate:
                report = run_validation(run.network, run.model, solution.setpoints, manifest, self.truncate)
                losses = report.losses.set_index("t")
                result.mean_realized_loss = float(report.loss_samples.sum(axis=1).mean())
                voltage = report.violations.by_element
                voltage = voltage[voltage["constraint_family"].str.startswith("voltage")]
                rates = voltage.groupby("t")["rate"].max() if len(voltage) else None
                result.max_voltage_violation_rate = float(rates.max()) if rates is not None else 0.0

            for t, r in enumerate(solution.results):
                result.intervals.append({
                    "parameter": case.parameter.value,
                    "value": case.label,
                    "t": t,
                    "expected_loss": r.expected_loss,
                    "baseline_expected_loss": baseline[t] if baseline is not None else np.nan,
                    "mean_loss": losses.at[t, "mean_loss"] if losses is not None else np.nan,
                    "std_loss": losses.at[t, "std_loss"] if losses is not None else np.nan,
                    "q95_loss": losses.at[t, "q95_loss"] if losses is not None else np.nan,
                    "max_voltage_violation_rate": (
                        float(rates.get(t, 0.0)) if rates is not None else (0.0 if self.validate else np.nan)
                    ),
                })
            logger.info(f"Sweep {case.parameter.value}={case.label}: {result.status}, "
                        f"expected loss {result.total_expected_loss:.4f} kWh")
        except (TclOpfError, ValueError) as e:
            result.error = str(e)
            logger.error(f"Sweep {case.parameter.value}={case.label} failed: {e}")
        return result

    def run(self, parameter: SweepParameter, values: Sequence[Any]) -> List[SweepResult]:
        if not values:
            raise ValueError("sweep needs at least one value")
        cases = [SweepCase(parameter=parameter, value=v) for v in values]
        logger.info(f"Starting sweep over {parameter.value}: {len(cases)} values")
        self.results = [self.run_case(case) for case in cases]
        return self.results

    def interval_frame(self) -> pd.DataFrame:
        rows = [row for r in self.results for row in r.intervals]
        return pd.DataFrame(rows, columns=INTERVAL_COLUMNS)

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.results], columns=SUMMARY_COLUMNS)

    def generate_statistics(self) -> Dict[str, Any]:
        if not self.results:
            return {}
        ok = [r for r in self.results if r.ok]
        stats: Dict[str, Any] = {
            "total_values": len(self.results),
            "failed_values": len(self.results) - len(ok),
            "converged_values": sum(1 for r in ok if r.status == "converged"),
        }
        if ok:
            frame = self.summary_frame()
            frame = frame[frame["error"].isna()]
            stats["mean_iterations"] = float(frame["iterations"].mean())
            stats["max_iterations"] = int(frame["iterations"].max())
            stats["min_total_expected_loss"] = float(frame["total_expected_loss"].min())
            stats["max_total_expected_loss"] = float(frame["total_expected_loss"].max())
            if self.validate:
                stats["max_voltage_violation_rate"] = float(frame["max_voltage_violation_rate"].max())
        return stats
