"""
Spatio-temporal dual decomposition: per-ensemble MDPs (Step 1) and
per-interval CC-OPFs (Step 2) coupled through price multipliers (Step 3).

Sign convention: the network side is charged -lambda * injection, the
ensembles are offered utilities built from -lambda, and the multipliers move
by delta * (mdp - opf). A positive lambda therefore pulls consumption into
the network copy and pushes it out of the ensembles.

With the proximal option the network copy of each ensemble also pays
delta/2 * (copy - mdp)^2 toward the injections Step 1 just returned, so a
Step 3 move lands near the marginal loss cost instead of a copy bound. The
term vanishes at consensus and is not part of the reported Step 2 objective.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math
import os
import time

import numpy as np
import pandas as pd

from app.core.ccopf import (
    CcopfConfig, CcopfResult, DispatchSetpoints, ProximalAnchor, TclBounds, UncertaintyModel, expected_loss,
    flows_from_injections, solve_interval,
)
from app.core.conic import SolverOptions
from app.core.network import Network
from app.core.tcl_mdp import (
    EnsemblePolicy, EnsembleSpec, backward_forward_solve, discomfort_cost, ensemble_from_site,
    expected_injections, utilities_from_prices,
)
from app.models.schemas import AlphaMode, ObjectiveMode, RunStatus, SolverStatus, StepRule

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class MultiplierState:
    lambda_p: np.ndarray  # (T, n_tcl) $/kW
    lambda_q: np.ndarray  # (T, n_tcl) $/kvar
    iteration: int = 1

    def __post_init__(self):
        if self.lambda_p.shape != self.lambda_q.shape or self.lambda_p.ndim != 2:
            raise ValueError("multiplier arrays must share a (T, n_tcl) shape")
        if not (np.all(np.isfinite(self.lambda_p)) and np.all(np.isfinite(self.lambda_q))):
            raise ValueError("multipliers must be finite")

    @classmethod
    def zeros(cls, horizon: int, n_tcl: int) -> "MultiplierState":
        return cls(np.zeros((horizon, n_tcl)), np.zeros((horizon, n_tcl)))

    def max_change(self, other: "MultiplierState") -> float:
        if self.lambda_p.size == 0:
            return 0.0
        return float(max(np.max(np.abs(self.lambda_p - other.lambda_p)),
                         np.max(np.abs(self.lambda_q - other.lambda_q))))


@dataclass(frozen=True)
class Std2Config:
    delta: float = 0.1
    zeta: float = 1e-4
    max_iter: int = 50
    step_rule: StepRule = StepRule.CONSTANT
    proximal: bool = True
    accept_inaccurate: bool = True  # Step 2 solves that stalled within the relaxed tolerance
    lambda_tariff: float = 10.0
    eta_g: float = 0.05
    eta_v: float = 0.05
    alpha_mode: AlphaMode = AlphaMode.FIXED
    objective_mode: ObjectiveMode = ObjectiveMode.EXACT
    gamma_mode: Optional[str] = None  # None keeps each site's case value
    n_states: Optional[int] = None
    workers: Optional[int] = None
    mdp_method: str = "auto"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.zeta > 0:
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        for name in ("eta_g", "eta_v"):
            value = getattr(self, name)
            if not 0 < value < 0.5:
                raise ValueError(f"{name} must lie in (0, 0.5), got {value}")

    @property
    def ccopf(self) -> CcopfConfig:
        return CcopfConfig(
            eta_g=self.eta_g, eta_v=self.eta_v, lambda_tariff=self.lambda_tariff,
            alpha_mode=self.alpha_mode, objective_mode=self.objective_mode,
            accept_inaccurate=self.accept_inaccurate,
        )

    def step_size(self, iteration: int) -> float:
        if self.step_rule == StepRule.DIMINISHING:
            return self.delta / math.sqrt(iteration)
        return self.delta


@dataclass(eq=False)
class EnsembleOutcome:
    policies: List[EnsemblePolicy]
    p: np.ndarray  # (T, n_tcl) expected consumption, kW
    q: np.ndarray

    @property
    def objective(self) -> float:
        return float(sum(pol.objective_value for pol in self.policies))


@dataclass(eq=False)
class IterationRecord:
    """One pass of Steps 1-3; lambda holds the multipliers after the update"""

    iteration: int
    lambda_p: np.ndarray
    lambda_q: np.ndarray
    gap_p: np.ndarray  # mdp - opf, (T, n_tcl)
    gap_q: np.ndarray
    step: float
    max_change: float
    step1_objective: float
    step2_objective: float
    step1_seconds: float
    step2_seconds: float

    @property
    def dual_value(self) -> float:
        return self.step1_objective + self.step2_objective

    @property
    def max_gap(self) -> float:
        if self.gap_p.size == 0:
            return 0.0
        return float(max(np.max(np.abs(self.gap_p)), np.max(np.abs(self.gap_q))))


@dataclass(eq=False)
class IntegratedSolution:
    status: RunStatus
    multipliers: MultiplierState
    specs: List[EnsembleSpec]
    policies: List[EnsemblePolicy]
    results: List[CcopfResult]
    trace: List[IterationRecord]
    integrated_objective: float
    discomfort: float
    loss_cost: float
    mdp_p: np.ndarray
    mdp_q: np.ndarray
    wall_seconds: float = 0.0
    tcl_buses: List[int] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == RunStatus.CONVERGED

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def setpoints(self) -> List[DispatchSetpoints]:
        return [r.setpoints for r in self.results]

    @property
    def dual_value(self) -> float:
        return self.trace[-1].dual_value if self.trace else math.nan

    @property
    def expected_losses(self) -> np.ndarray:
        return np.array([r.expected_loss for r in self.results])


def step3_update(multipliers: MultiplierState, mdp_injections: Tuple[np.ndarray, np.ndarray],
                 opf_injections: Tuple[np.ndarray, np.ndarray], delta: float) -> MultiplierState:
    """lambda += delta * (mdp - opf), elementwise for both power types"""
    mdp_p, mdp_q = (np.asarray(a, dtype=float) for a in mdp_injections)
    opf_p, opf_q = (np.asarray(a, dtype=float) for a in opf_injections)
    if mdp_p.shape != multipliers.lambda_p.shape or opf_p.shape != multipliers.lambda_p.shape:
        raise ValueError("injection arrays must match the multiplier shape")
    return MultiplierState(
        lambda_p=multipliers.lambda_p + delta * (mdp_p - opf_p),
        lambda_q=multipliers.lambda_q + delta * (mdp_q - opf_q),
        iteration=multipliers.iteration + 1,
    )


class Std2Coordinator:
    """Runs the decomposition for one network, uncertainty model and configuration"""

    def __init__(self, network: Network, model: UncertaintyModel, config: Optional[Std2Config] = None,
                 options: Optional[SolverOptions] = None):
        self.network = network
        self.model = model
        self.config = config or Std2Config()
        self.options = options
        self.specs = [
            ensemble_from_site(site, network.horizon, self.config.gamma_mode, self.config.n_states)
            for site in network.tcl
        ]
        self.bounds = TclBounds.from_states([s.p_states for s in self.specs], [s.q_states for s in self.specs])
        self.workers = self.config.workers or os.cpu_count() or 1
        logger.info(
            f"ST-D2 coordinator ready: {len(self.specs)} ensembles, horizon {network.horizon}, "
            f"{self.workers} workers"
        )

    # -- Step 1 ------------------------------------------------------------

    def _solve_ensemble(self, k: int, lambda_p: np.ndarray, lambda_q: np.ndarray) -> EnsemblePolicy:
        spec = self.specs[k]
        utilities = utilities_from_prices(spec, -lambda_p, -lambda_q)
        return backward_forward_solve(spec, utilities, self.config.mdp_method)

    def step1_solve_ensembles(self, multipliers: MultiplierState) -> EnsembleOutcome:
        T, n = self.network.horizon, len(self.specs)
        if n == 0:
            return EnsembleOutcome(policies=[], p=np.zeros((T, 0)), q=np.zeros((T, 0)))
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            policies = list(pool.map(
                lambda k: self._solve_ensemble(k, multipliers.lambda_p[:, k], multipliers.lambda_q[:, k]),
                range(n),
            ))
        p = np.zeros((T, n))
        q = np.zeros((T, n))
        for k, (policy, spec) in enumerate(zip(policies, self.specs)):
            p[:, k], q[:, k] = expected_injections(policy, spec)
        return EnsembleOutcome(policies=policies, p=p, q=q)

    # -- Step 2 ------------------------------------------------------------

    def _solve_interval(self, t: int, lambda_p: np.ndarray, lambda_q: np.ndarray, bounds: TclBounds,
                        anchor: Optional[ProximalAnchor] = None) -> CcopfResult:
        return solve_interval(self.network, self.model, t, lambda_p, lambda_q, bounds,
                              self.config.ccopf, self.options, anchor)

    def step2_solve_network(self, multipliers: MultiplierState, bounds: Optional[TclBounds] = None,
                            anchors: Optional[EnsembleOutcome] = None, weight: float = 0.0) -> List[CcopfResult]:
        """With anchors, every copy is pulled toward that outcome's injections with the given weight"""
        bounds = bounds or self.bounds
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            futures = [
                pool.submit(
                    self._solve_interval, t, multipliers.lambda_p[t], multipliers.lambda_q[t], bounds,
                    ProximalAnchor(anchors.p[t], anchors.q[t], weight) if anchors is not None else None,
                )
                for t in range(self.network.horizon)
            ]
            # first failure in interval order aborts the iteration
            return [f.result() for f in futures]

    # -- Step 3 ------------------------------------------------------------

    @staticmethod
    def step3_update(multipliers: MultiplierState, mdp_injections, opf_injections, delta: float) -> MultiplierState:
        return step3_update(multipliers, mdp_injections, opf_injections, delta)

    # -- driver ------------------------------------------------------------

    def run(self) -> IntegratedSolution:
        started = time.perf_counter()
        T, n = self.network.horizon, len(self.specs)
        multipliers = MultiplierState.zeros(T, n)
        trace: List[IterationRecord] = []
        status = RunStatus.NOT_CONVERGED
        ensembles: Optional[EnsembleOutcome] = None
        results: List[CcopfResult] = []

        for nu in range(1, self.config.max_iter + 1):
            t0 = time.perf_counter()
            ensembles = self.step1_solve_ensembles(multipliers)
            t1 = time.perf_counter()
            step = self.config.step_size(nu)
            anchors = ensembles if self.config.proximal and n else None
            results = self.step2_solve_network(multipliers, anchors=anchors, weight=step)
            t2 = time.perf_counter()
            stalled = [r.t for r in results if r.solver_stats.get("status") == SolverStatus.INACCURATE.value]
            if stalled:
                logger.warning(f"⚠️ Step 2 accepted stalled solves for intervals {stalled}")

            opf_p = np.array([r.setpoints.tcl_p for r in results]).reshape(T, n)
            opf_q = np.array([r.setpoints.tcl_q for r in results]).reshape(T, n)
            updated = step3_update(multipliers, (ensembles.p, ensembles.q), (opf_p, opf_q), step)
            change = updated.max_change(multipliers)

            record = IterationRecord(
                iteration=nu,
                lambda_p=updated.lambda_p.copy(),
                lambda_q=updated.lambda_q.copy(),
                gap_p=ensembles.p - opf_p,
                gap_q=ensembles.q - opf_q,
                step=step,
                max_change=change,
                step1_objective=ensembles.objective,
                step2_objective=float(sum(r.objective for r in results)),
                step1_seconds=t1 - t0,
                step2_seconds=t2 - t1,
            )
            trace.append(record)
            logger.info(
                f"ST-D2 iteration {nu}: max |dlambda| = {change:.3e}, max gap = {record.max_gap:.3e} kW, "
                f"dual value = {record.dual_value:.4f}, step1 {record.step1_seconds:.2f}s, "
                f"step2 {record.step2_seconds:.2f}s"
            )
            multipliers = updated
            if nu >= 2 and change <= self.config.zeta:
                status = RunStatus.CONVERGED
                break

        if status != RunStatus.CONVERGED:
            logger.warning(f"ST-D2 did not converge within {self.config.max_iter} iterations")
        else:
            logger.info(f"✅ ST-D2 converged after {len(trace)} iterations")

        solution = self._integrate(status, multipliers, ensembles, results, trace)
        solution.wall_seconds = time.perf_counter() - started
        return solution

    def _integrate(self, status: RunStatus, multipliers: MultiplierState, ensembles: EnsembleOutcome,
                   results: List[CcopfResult], trace: List[IterationRecord]) -> IntegratedSolution:
        """Integrated objective at the MDP-side injections: discomfort plus tariff times expected loss"""
        discomfort = float(sum(discomfort_cost(pol, spec) for pol, spec in zip(ensembles.policies, self.specs)))
        loss_cost = 0.0
        for t, result in enumerate(results):
            fp, fq = flows_from_injections(
                self.network, t, ensembles.p[t], ensembles.q[t], result.setpoints.pg, result.setpoints.qg,
            )
            at_mdp = DispatchSetpoints(
                t=t, pg=result.setpoints.pg, qg=result.setpoints.qg, root_p=result.setpoints.root_p,
                root_q=result.setpoints.root_q, fp=fp, fq=fq, u=result.setpoints.u,
                tcl_p=ensembles.p[t], tcl_q=ensembles.q[t], alpha=result.setpoints.alpha,
            )
            tariff = self.network.tariff(t, self.config.lambda_tariff)
            loss_cost += tariff * expected_loss(at_mdp, self.network, self.model, self.config.objective_mode)
        return IntegratedSolution(
            status=status, multipliers=multipliers, specs=self.specs, policies=ensembles.policies,
            results=results, trace=trace, integrated_objective=discomfort + loss_cost,
            discomfort=discomfort, loss_cost=loss_cost, mdp_p=ensembles.p, mdp_q=ensembles.q,
            tcl_buses=list(self.network.tcl_buses),
        )

    # -- reference runs ----------------------------------------------------

    def default_injections(self) -> Tuple[np.ndarray, np.ndarray]:
        """Expected consumption of every ensemble left on its default dynamics (P = P-bar)"""
        zero = MultiplierState.zeros(self.network.horizon, len(self.specs))
        outcome = self.step1_solve_ensembles(zero)
        return outcome.p, outcome.q

    def frozen_default_baseline(self) -> List[CcopfResult]:
        """CC-OPF with every TCL copy pinned to its default-policy consumption and no prices"""
        p, q = self.default_injections()
        T, n = self.network.horizon, len(self.specs)
        zero = MultiplierState.zeros(T, n)
        results = []
        for t in range(T):
            results.append(self._solve_interval(t, zero.lambda_p[t], zero.lambda_q[t], TclBounds.fixed(p[t], q[t])))
        logger.info(f"Frozen-default baseline: total expected loss {sum(r.expected_loss for r in results):.4f} kWh")
        return results


def convergence_report(trace: Sequence[IterationRecord], tcl_buses: Sequence[int]) -> pd.DataFrame:
    """Long table (iteration, t, bus, lambda_p, lambda_q, gap_p, gap_q)"""
    if not trace:
        raise ValueError("trace is empty")
    rows: List[Dict[str, object]] = []
    for record in trace:
        T = record.lambda_p.shape[0]
        for t in range(T):
            for k, bus in enumerate(tcl_buses):
                rows.append({
                    "iteration": record.iteration,
                    "t": t,
                    "bus": bus,
                    "lambda_p": record.lambda_p[t, k],
                    "lambda_q": record.lambda_q[t, k],
                    "gap_p": record.gap_p[t, k],
                    "gap_q": record.gap_q[t, k],
                })
    columns = ["iteration", "t", "bus", "lambda_p", "lambda_q", "gap_p", "gap_q"]
    return pd.DataFrame(rows, columns=columns)


def iteration_summary(trace: Sequence[IterationRecord]) -> pd.DataFrame:
    """One row per iteration with objectives, step and timings"""
    return pd.DataFrame([{
        "iteration": r.iteration,
        "step": r.step,
        "max_change": r.max_change,
        "max_gap": r.max_gap,
        "step1_objective": r.step1_objective,
        "step2_objective": r.step2_objective,
        "dual_value": r.dual_value,
        "step1_seconds": r.step1_seconds,
        "step2_seconds": r.step2_seconds,
    } for r in trace])
