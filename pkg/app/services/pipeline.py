"""
Glue between a RunManifest and the solver library: manifest resolution,
case preparation and the solve / validate runs shared by the CLI and the
evaluation harness.
"""

from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional
import logging
import math

from app.config import Settings, settings
from app.core.ccopf import CcopfResult, UncertaintyModel, build_uncertainty
from app.core.conic import SolverOptions
from app.core.network import Network
from app.data.loaders import CaseLoader
from app.models.schemas import RunManifest
from app.services.std2 import IntegratedSolution, Std2Config, Std2Coordinator
from app.services.validation import MonteCarloValidator, ValidationReport, sample_scenarios

logger = logging.getLogger(__name__)

DEFAULT_TARIFF = 10.0  # $/kWh


def resolve_manifest(overrides: Optional[Dict[str, Any]] = None, source: Optional[Settings] = None) -> RunManifest:
    """Settings (environment, .env, defaults) overlaid with explicit overrides"""
    s = source or settings
    values: Dict[str, Any] = {
        "case_path": s.DEFAULT_CASE_PATH,
        "output_dir": s.OUTPUT_DIR,
        "delta": s.DELTA,
        "zeta": s.ZETA,
        "max_iter": s.MAX_ITER,
        "step_rule": s.STEP_RULE,
        "proximal": s.PROXIMAL,
        "eta_g": s.ETA_G,
        "eta_v": s.ETA_V,
        "lambda_tariff": s.LAMBDA_TARIFF,
        "sigma_frac": s.SIGMA_FRAC,
        "gamma_mode": s.GAMMA_MODE,
        "alpha_mode": s.ALPHA_MODE,
        "objective_mode": s.OBJECTIVE_MODE,
        "n_samples": s.N_SAMPLES,
        "seed": s.SEED,
        "workers": s.WORKERS,
    }
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunManifest(**values)


def keep_ensembles(network: Network, count: int) -> Network:
    """Keep the first `count` ensembles; the rest become fixed loads at their average consumption"""
    if count >= len(network.tcl):
        return network
    buses = list(network.buses)
    for site in network.tcl[count:]:
        b = network.bus_index[site.bus]
        q = site.avg_load_kw * math.tan(math.acos(site.power_factor))
        buses[b] = replace(buses[b], load_p=buses[b].load_p + site.avg_load_kw, load_q=buses[b].load_q + q)
    logger.info(f"Keeping {count} of {len(network.tcl)} TCL ensembles")
    return network.with_resources(buses=tuple(buses), tcl=network.tcl[:count])


def prepare_network(manifest: RunManifest) -> Network:
    network = CaseLoader.load(manifest.case_path)
    if manifest.n_ensembles is not None:
        network = keep_ensembles(network, manifest.n_ensembles)
    if manifest.lambda_tariff is not None:
        network = network.with_resources(lambda_tariff=None)
    return network


def tariff(manifest: RunManifest) -> float:
    return DEFAULT_TARIFF if manifest.lambda_tariff is None else manifest.lambda_tariff


def build_model(network: Network, manifest: RunManifest) -> UncertaintyModel:
    return build_uncertainty(network, manifest.sigma_frac)


def std2_config(manifest: RunManifest) -> Std2Config:
    return Std2Config(
        delta=manifest.delta,
        zeta=manifest.zeta,
        max_iter=manifest.max_iter,
        step_rule=manifest.step_rule,
        proximal=manifest.proximal,
        lambda_tariff=tariff(manifest),
        eta_g=manifest.eta_g,
        eta_v=manifest.eta_v,
        alpha_mode=manifest.alpha_mode,
        objective_mode=manifest.objective_mode,
        gamma_mode=manifest.gamma_mode.value if manifest.gamma_mode is not None else None,
        n_states=manifest.n_states,
        workers=manifest.workers,
    )


def solver_options(source: Optional[Settings] = None) -> SolverOptions:
    return SolverOptions.from_settings(source or settings)


def manifest_echo(manifest: RunManifest, network: Network) -> Dict[str, Any]:
    echo = manifest.model_dump(mode="json")
    echo["network_hash"] = network.source_hash
    echo["resolved_tariff"] = tariff(manifest)
    return echo


@dataclass(eq=False)
class SolveRun:
    network: Network
    model: UncertaintyModel
    coordinator: Std2Coordinator
    solution: IntegratedSolution
    baseline: Optional[List[CcopfResult]] = None


def run_solve(manifest: RunManifest, with_baseline: bool = True) -> SolveRun:
    network = prepare_network(manifest)
    model = build_model(network, manifest)
    coordinator = Std2Coordinator(network, model, std2_config(manifest), solver_options())
    solution = coordinator.run()
    baseline = coordinator.frozen_default_baseline() if with_baseline and network.tcl else None
    return SolveRun(network=network, model=model, coordinator=coordinator, solution=solution, baseline=baseline)


def run_validation(network: Network, model: UncertaintyModel, setpoints, manifest: RunManifest,
                   truncate: bool = False) -> ValidationReport:
    batch = sample_scenarios(model, manifest.n_samples, manifest.seed)
    validator = MonteCarloValidator(network, model, truncate=truncate, workers=manifest.workers)
    return validator.validate(setpoints, batch)
