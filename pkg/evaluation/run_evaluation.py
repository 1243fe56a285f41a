"""
Evaluation harness for the TCL / CC-OPF studies:
penalty shape, forecast-error spread, violation budget and state count.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.models.schemas import GammaMode, RunManifest, SweepParameter
from app.services.pipeline import resolve_manifest
from app.services.sweep import SweepResult, SweepRunner

logger = logging.getLogger(__name__)


@dataclass
class StudyCase:
    """One parameter study"""
    name: str
    parameter: SweepParameter
    values: List[Any]
    validate: bool = True


@dataclass
class StudyResult:
    case: StudyCase
    results: List[SweepResult] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([r.to_dict() for r in self.results])
        frame.insert(0, "study", self.case.name)
        return frame


DEFAULT_STUDIES = [
    StudyCase("penalty_shape", SweepParameter.GAMMA_MODE, [GammaMode.UNIFORM, GammaMode.NONUNIFORM]),
    StudyCase("forecast_spread", SweepParameter.SIGMA_FRAC, [0.1, 0.2, 0.3]),
    StudyCase("violation_budget", SweepParameter.ETA_V, [0.01, 0.05, 0.10]),
    StudyCase("state_count", SweepParameter.N_STATES, [4, 8, 12, 24], validate=False),
]


class StudyEvaluator:
    """Runs a list of studies against one base manifest and summarizes them"""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        self.results: List[StudyResult] = []

    def run_study(self, case: StudyCase) -> StudyResult:
        logger.info(f"Running study '{case.name}' over {case.parameter.value}: {case.values}")
        runner = SweepRunner(self.manifest, validate=case.validate)
        return StudyResult(case=case, results=runner.run(case.parameter, case.values))

    def run_all(self, studies: Sequence[StudyCase] = DEFAULT_STUDIES) -> List[StudyResult]:
        self.results = [self.run_study(case) for case in studies]
        return self.results

    def to_frame(self) -> pd.DataFrame:
        if not self.results:
            return pd.DataFrame()
        return pd.concat([r.to_frame() for r in self.results], ignore_index=True)

    def generate_statistics(self) -> Dict[str, Any]:
        frame = self.to_frame()
        if frame.empty:
            return {}
        ok = frame[frame["error"].isna()]
        stats: Dict[str, Any] = {
            "total_runs": int(len(frame)),
            "failed_runs": int(len(frame) - len(ok)),
            "timestamp": datetime.now().isoformat(),
            "by_study": {},
        }
        for name, group in ok.groupby("study", sort=False):
            stats["by_study"][name] = {
                "mean_iterations": float(group["iterations"].mean()),
                "max_iterations": int(group["iterations"].max()),
                "mean_total_expected_loss": float(group["total_expected_loss"].mean()),
                "max_total_expected_loss": float(group["total_expected_loss"].max()),
                "max_voltage_violation_rate": (
                    float(group["max_voltage_violation_rate"].max())
                    if group["max_voltage_violation_rate"].notna().any() else None
                ),
            }
        return stats

    def save(self, output_dir: str) -> None:
        os.makedirs(output_dir, exist_ok=True)
        self.to_frame().to_csv(os.path.join(output_dir, "studies.csv"), index=False, float_format="%.17g")
        stats = self.generate_statistics()
        with open(os.path.join(output_dir, "studies_summary.json"), "w") as f:
            json.dump(stats, f, indent=2)

        print(f"\n📊 Results saved to {output_dir}")
        print("\n" + "=" * 60)
        print("📈 STUDY SUMMARY")
        print("=" * 60)
        print(f"Runs: {stats.get('total_runs', 0)} ({stats.get('failed_runs', 0)} failed)")
        for name, s in stats.get("by_study", {}).items():
            print(f"\n--- {name} ---")
            print(f"  Iterations (mean / max): {s['mean_iterations']:.1f} / {s['max_iterations']}")
            print(f"  Expected loss (mean / max): {s['mean_total_expected_loss']:.4f} / "
                  f"{s['max_total_expected_loss']:.4f} kWh")
            if s["max_voltage_violation_rate"] is not None:
                print(f"  Max voltage violation rate: {s['max_voltage_violation_rate']:.4f}")
        print("=" * 60)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Run the standard parameter studies")
    parser.add_argument("--case", dest="case_path")
    parser.add_argument("--out", default="output/evaluation")
    parser.add_argument("--samples", dest="n_samples", type=int)
    parser.add_argument("--seed", type=int)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    manifest = resolve_manifest({"case_path": args.case_path, "output_dir": args.out,
                                 "n_samples": args.n_samples, "seed": args.seed})
    evaluator = StudyEvaluator(manifest)
    evaluator.run_all()
    evaluator.save(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
