"""
CSV / JSON artefacts of solve, validate and sweep runs, plus readers that
rebuild dispatch setpoints for validation from a saved run.

Floats are written with 17 significant digits so saved runs reload exactly.
Timings go to the summary document only; every CSV is reproducible bit for
bit from the same inputs.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
import json
import logging

import numpy as np
import pandas as pd

from app.core.ccopf import CcopfResult, DispatchSetpoints
from app.core.exceptions import ManifestError
from app.core.network import Network
from app.core.tcl_mdp import EnsemblePolicy
from app.services.std2 import IntegratedSolution, convergence_report, iteration_summary
from app.services.validation import ViolationStats

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

BUS_FILE = "dispatch_buses.csv"
GENERATOR_FILE = "dispatch_generators.csv"
LINE_FILE = "dispatch_lines.csv"
INTERVAL_FILE = "dispatch_intervals.csv"
TCL_FILE = "tcl_injections.csv"
RHO_FILE = "policy_rho.csv"
TRANSITION_FILE = "policy_transitions.csv"
TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"
VIOLATION_FILE = "violations.csv"
VIOLATION_ELEMENT_FILE = "violations_by_element.csv"
LOSS_FILE = "losses.csv"


class ResultWriter:
    """Writes run artefacts into one output directory"""

    def __init__(self, output_dir: str):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _csv(self, frame: pd.DataFrame, name: str) -> Path:
        path = self.output_dir / name
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        logger.debug(f"Wrote {len(frame)} rows to {path}")
        return path

    def _json(self, payload: Dict[str, Any], name: str) -> Path:
        path = self.output_dir / name
        try:
            with open(path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True, default=str)
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise
        return path

    # -- dispatch ------------------------------------------------------------

    def write_dispatch(self, results: Sequence[CcopfResult], network: Network) -> None:
        buses, gens, lines, intervals = [], [], [], []
        for r in results:
            sp = r.setpoints
            for b, bus in enumerate(network.buses):
                buses.append({"t": sp.t, "bus": bus.id, "u": sp.u[b]})
            for g, gen in enumerate(network.generators):
                gens.append({"t": sp.t, "index": g, "bus": gen.bus, "pg": sp.pg[g], "qg": sp.qg[g],
                             "alpha": sp.alpha[g]})
            for l, line in enumerate(network.lines):
                lines.append({"t": sp.t, "line": line.id, "fp": sp.fp[l], "fq": sp.fq[l]})
            intervals.append({
                "t": sp.t, "expected_loss": r.expected_loss, "deterministic_loss": r.deterministic_loss,
                "objective": r.objective, "root_p": sp.root_p, "root_q": sp.root_q,
                "solver_iterations": r.solver_stats.get("iterations", 0),
            })
        self._csv(pd.DataFrame(buses, columns=["t", "bus", "u"]), BUS_FILE)
        self._csv(pd.DataFrame(gens, columns=["t", "index", "bus", "pg", "qg", "alpha"]), GENERATOR_FILE)
        self._csv(pd.DataFrame(lines, columns=["t", "line", "fp", "fq"]), LINE_FILE)
        self._csv(pd.DataFrame(intervals, columns=["t", "expected_loss", "deterministic_loss", "objective",
                                                   "root_p", "root_q", "solver_iterations"]), INTERVAL_FILE)

    def write_tcl(self, solution: IntegratedSolution) -> None:
        rows = []
        for t, r in enumerate(solution.results):
            for k, bus in enumerate(solution.tcl_buses):
                rows.append({
                    "t": t, "bus": bus,
                    "mdp_p": solution.mdp_p[t, k], "mdp_q": solution.mdp_q[t, k],
                    "opf_p": r.setpoints.tcl_p[k], "opf_q": r.setpoints.tcl_q[k],
                    "lambda_p": solution.multipliers.lambda_p[t, k],
                    "lambda_q": solution.multipliers.lambda_q[t, k],
                    "dual_p": r.duals_p[k], "dual_q": r.duals_q[k],
                })
        columns = ["t", "bus", "mdp_p", "mdp_q", "opf_p", "opf_q", "lambda_p", "lambda_q", "dual_p", "dual_q"]
        self._csv(pd.DataFrame(rows, columns=columns), TCL_FILE)

    def write_policies(self, policies: Sequence[EnsemblePolicy]) -> None:
        rho_rows, p_rows = [], []
        for policy in policies:
            T1, n = policy.rho.shape
            for t in range(T1):
                for a in range(n):
                    rho_rows.append({"bus": policy.bus, "t": t, "alpha": a, "rho": policy.rho[t, a]})
            for t in range(T1 - 1):
                for a in range(n):
                    for b in range(n):
                        p_rows.append({"bus": policy.bus, "t": t, "alpha": a, "beta": b,
                                       "P": policy.transitions[t, a, b]})
        self._csv(pd.DataFrame(rho_rows, columns=["bus", "t", "alpha", "rho"]), RHO_FILE)
        self._csv(pd.DataFrame(p_rows, columns=["bus", "t", "alpha", "beta", "P"]), TRANSITION_FILE)

    def write_trace(self, solution: IntegratedSolution) -> None:
        self._csv(convergence_report(solution.trace, solution.tcl_buses), TRACE_FILE)

    def write_summary(self, solution: IntegratedSolution, network: Network,
                      baseline: Optional[Sequence[CcopfResult]] = None) -> None:
        payload = {
            "status": solution.status.value,
            "iterations": solution.iterations,
            "integrated_objective": solution.integrated_objective,
            "dual_value": solution.dual_value,
            "discomfort": solution.discomfort,
            "loss_cost": solution.loss_cost,
            "total_expected_loss": float(solution.expected_losses.sum()),
            "max_consensus_gap": solution.trace[-1].max_gap if solution.trace else 0.0,
            "wall_seconds": solution.wall_seconds,
            "network_hash": network.source_hash,
            "case_name": network.name,
            "iteration_log": iteration_summary(solution.trace).to_dict(orient="records"),
        }
        if baseline is not None:
            payload["baseline_total_expected_loss"] = float(sum(r.expected_loss for r in baseline))
        self._json(payload, SUMMARY_FILE)

    def write_solution(self, solution: IntegratedSolution, network: Network,
                       baseline: Optional[Sequence[CcopfResult]] = None) -> None:
        self.write_dispatch(solution.results, network)
        self.write_tcl(solution)
        self.write_policies(solution.policies)
        self.write_trace(solution)
        self.write_summary(solution, network, baseline)
        logger.info(f"Saved solution artefacts to {self.output_dir}")

    def write_manifest(self, manifest: Dict[str, Any]) -> None:
        self._json(manifest, MANIFEST_FILE)

    # -- validation ----------------------------------------------------------

    def write_validation(self, violations: ViolationStats, losses: pd.DataFrame, eta_v: float) -> None:
        family = violations.by_family.copy()
        family.insert(0, "eta", eta_v)
        self._csv(family, VIOLATION_FILE)
        self._csv(violations.by_element, VIOLATION_ELEMENT_FILE)
        self._csv(losses, LOSS_FILE)
        logger.info(f"Saved validation statistics to {self.output_dir}")

    def write_table(self, frame: pd.DataFrame, name: str) -> Path:
        return self._csv(frame, name)


def read_summary(solution_dir: str) -> Dict[str, Any]:
    path = Path(solution_dir) / SUMMARY_FILE
    if not path.exists():
        raise ManifestError(f"no run summary in {solution_dir}")
    with open(path) as f:
        return json.load(f)


def check_network_hash(solution_dir: str, network: Network) -> None:
    saved = read_summary(solution_dir).get("network_hash")
    if saved != network.source_hash:
        raise ManifestError(
            f"solution in {solution_dir} was computed for a different network "
            f"(hash {str(saved)[:12]} vs {network.source_hash[:12]})"
        )


def read_setpoints(solution_dir: str, network: Network) -> List[DispatchSetpoints]:
    """Rebuild per-interval setpoints from saved dispatch CSVs"""
    root = Path(solution_dir)
    try:
        buses = pd.read_csv(root / BUS_FILE, float_precision="round_trip")
        gens = pd.read_csv(root / GENERATOR_FILE, float_precision="round_trip")
        lines = pd.read_csv(root / LINE_FILE, float_precision="round_trip")
        intervals = pd.read_csv(root / INTERVAL_FILE, float_precision="round_trip")
        tcl = pd.read_csv(root / TCL_FILE, float_precision="round_trip")
    except FileNotFoundError as e:
        raise ManifestError(f"missing solution artefact: {e.filename}")

    bus_pos = network.bus_index
    line_pos = {line.id: l for l, line in enumerate(network.lines)}
    tcl_pos = {bus: k for k, bus in enumerate(network.tcl_buses)}
    G, n_tcl = len(network.generators), len(network.tcl)

    setpoints = []
    for _, row in intervals.sort_values("t").iterrows():
        t = int(row["t"])
        u = np.zeros(network.n_buses)
        for _, r in buses[buses["t"] == t].iterrows():
            u[bus_pos[int(r["bus"])]] = r["u"]
        fp = np.zeros(network.n_lines)
        fq = np.zeros(network.n_lines)
        for _, r in lines[lines["t"] == t].iterrows():
            fp[line_pos[int(r["line"])]] = r["fp"]
            fq[line_pos[int(r["line"])]] = r["fq"]
        pg, qg, alpha = np.zeros(G), np.zeros(G), np.zeros(G)
        for _, r in gens[gens["t"] == t].iterrows():
            g = int(r["index"])
            pg[g], qg[g], alpha[g] = r["pg"], r["qg"], r["alpha"]
        tcl_p, tcl_q = np.zeros(n_tcl), np.zeros(n_tcl)
        for _, r in tcl[tcl["t"] == t].iterrows():
            k = tcl_pos[int(r["bus"])]
            tcl_p[k], tcl_q[k] = r["opf_p"], r["opf_q"]
        setpoints.append(DispatchSetpoints(
            t=t, pg=pg, qg=qg, root_p=float(row["root_p"]), root_q=float(row["root_q"]),
            fp=fp, fq=fq, u=u, tcl_p=tcl_p, tcl_q=tcl_q, alpha=alpha,
        ))
    logger.info(f"Loaded {len(setpoints)} interval setpoints from {solution_dir}")
    return setpoints
