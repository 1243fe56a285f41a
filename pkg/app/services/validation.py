"""
Out-of-sample validation of dispatch setpoints: sample PV forecast errors,
apply the affine recourse policy, count limit violations and collect the
realized losses.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence
import logging
import os

import numpy as np
import pandas as pd

from app.core.ccopf import (
    DispatchSetpoints, UncertaintyModel, flow_deviation_coeffs, voltage_deviation_coeffs,
)
from app.core.network import Network

logger = logging.getLogger(__name__)

# relative to max(scale, |bound|): the kVA base for powers, 1 for voltages squared
VIOLATION_RTOL = 1e-6
LOSS_QUANTILES = (0.05, 0.50, 0.95)

VIOLATION_COLUMNS = ["t", "constraint_family", "element", "count", "rate"]
FAMILY_COLUMNS = ["t", "constraint_family", "count", "rate"]
LOSS_COLUMNS = ["t", "mean_loss", "std_loss", "q05_loss", "q50_loss", "q95_loss"]


@dataclass(frozen=True, eq=False)
class ScenarioBatch:
    seed: int
    n_samples: int
    sources: np.ndarray  # bus positions carrying PV uncertainty
    draws: np.ndarray  # (n, T, len(sources)) PV output errors, kW


def sample_scenarios(model: UncertaintyModel, n: int, seed: int) -> ScenarioBatch:
    """Independent Gaussian PV errors per (sample, interval, PV bus)"""
    if n < 1:
        raise ValueError("at least one sample is required")
    sources = np.flatnonzero(model.sigma.max(axis=0) > 0) if model.sigma.size else np.zeros(0, dtype=int)
    rng = np.random.default_rng(seed)
    T = model.sigma.shape[0]
    draws = rng.standard_normal((n, T, sources.size)) * model.sigma[None, :, sources]
    return ScenarioBatch(seed=seed, n_samples=n, sources=sources, draws=draws)


def net_load_errors(network: Network, batch: ScenarioBatch, t: int, truncate: bool = False) -> np.ndarray:
    """
    (n, N) net-load errors in kW: more PV than forecast means less net load.
    With truncate, realized PV output is clipped to [0, rating] first.
    """
    pv_err = batch.draws[:, t, :]
    if truncate and batch.sources.size:
        forecast = network.pv_forecast[t, batch.sources]
        rating = np.full(network.n_buses, 0.0)
        for src in network.pv:
            rating[network.bus_index[src.bus]] += np.inf if src.rating_kw is None else src.rating_kw
        realized = np.clip(forecast[None, :] + pv_err, 0.0, rating[batch.sources][None, :])
        pv_err = realized - forecast[None, :]
    errors = np.zeros((batch.n_samples, network.n_buses))
    errors[:, batch.sources] = -pv_err
    return errors


@dataclass(eq=False)
class RealizedState:
    t: int
    pg: np.ndarray  # (n, G) kW
    qg: np.ndarray
    root_p: np.ndarray  # (n,)
    root_q: np.ndarray
    fp: np.ndarray  # (n, E) kW
    fq: np.ndarray
    u: np.ndarray  # (n, N) p.u.^2


def redispatch(setpoints: DispatchSetpoints, network: Network, errors: np.ndarray,
               k_factor: Optional[float] = None) -> RealizedState:
    """Apply the proportional recourse to net-load errors (n, N) in kW"""
    K = network.k_factor if k_factor is None else k_factor
    errors = np.atleast_2d(errors)
    n = errors.shape[0]
    total = errors.sum(axis=1)
    cp, _ = flow_deviation_coeffs(network, setpoints.alpha, K)
    coef = voltage_deviation_coeffs(network, setpoints.alpha, K)
    d_fp = errors @ cp.T
    return RealizedState(
        t=setpoints.t,
        pg=setpoints.pg[None, :] + np.outer(total, setpoints.alpha),
        qg=setpoints.qg[None, :] + K * np.outer(total, setpoints.alpha),
        root_p=np.full(n, setpoints.root_p),
        root_q=np.full(n, setpoints.root_q),
        fp=setpoints.fp[None, :] + d_fp,
        fq=setpoints.fq[None, :] + K * d_fp,
        u=setpoints.u[None, :] + (errors / network.base_kva) @ coef.T,
    )


def realized_losses(state: RealizedState, network: Network) -> np.ndarray:
    """Per-sample active loss in kW"""
    base = network.base_kva
    fp, fq = state.fp / base, state.fq / base
    return base * ((fp ** 2 + fq ** 2) @ network.r) / network.v0_sq


def violation_tolerance(bound: float, scale: float = 1.0) -> float:
    """Slack allowed past a limit before a sample counts as a violation"""
    return VIOLATION_RTOL * max(scale, abs(bound))


def _interval_violations(state: RealizedState, network: Network) -> List[tuple]:
    rows = []
    root = network.root_index
    for b, bus in enumerate(network.buses):
        if b == root:
            continue
        u = state.u[:, b]
        hit = u > bus.v_max_sq + violation_tolerance(bus.v_max_sq)
        rows.append(("voltage_upper", bus.id, int(hit.sum()), hit))
        hit = u < bus.v_min_sq - violation_tolerance(bus.v_min_sq)
        rows.append(("voltage_lower", bus.id, int(hit.sum()), hit))
    base = network.base_kva
    for g, gen in enumerate(network.generators):
        for tag, values, lo, hi in (("p", state.pg[:, g], gen.p_min, gen.p_max),
                                    ("q", state.qg[:, g], gen.q_min, gen.q_max)):
            if np.isfinite(hi):
                hit = values > hi + violation_tolerance(hi, base)
                rows.append((f"gen_{tag}_upper", gen.bus, int(hit.sum()), hit))
            if np.isfinite(lo):
                hit = values < lo - violation_tolerance(lo, base)
                rows.append((f"gen_{tag}_lower", gen.bus, int(hit.sum()), hit))
    return rows


@dataclass(eq=False)
class ViolationStats:
    n_samples: int
    by_element: pd.DataFrame
    by_family: pd.DataFrame

    def max_rate(self, family: Optional[str] = None) -> float:
        frame = self.by_element
        if family is not None:
            frame = frame[frame["constraint_family"] == family]
        return float(frame["rate"].max()) if len(frame) else 0.0


@dataclass(eq=False)
class ValidationReport:
    violations: ViolationStats
    losses: pd.DataFrame
    loss_samples: np.ndarray  # (n, T) kW


class MonteCarloValidator:
    """Evaluates a dispatch against one scenario batch, intervals in parallel"""

    def __init__(self, network: Network, model: UncertaintyModel, truncate: bool = False,
                 workers: Optional[int] = None):
        self.network = network
        self.model = model
        self.truncate = truncate
        self.workers = workers or os.cpu_count() or 1

    def _realize(self, setpoints: DispatchSetpoints, batch: ScenarioBatch) -> RealizedState:
        errors = net_load_errors(self.network, batch, setpoints.t, self.truncate)
        return redispatch(setpoints, self.network, errors, self.model.k_factor)

    def _map(self, setpoints: Sequence[DispatchSetpoints], batch: ScenarioBatch) -> List[RealizedState]:
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(lambda sp: self._realize(sp, batch), setpoints))

    def violation_stats(self, setpoints: Sequence[DispatchSetpoints], batch: ScenarioBatch) -> ViolationStats:
        n = batch.n_samples
        element_rows, family_rows = [], []
        for state in self._map(setpoints, batch):
            any_hit = {}
            for family, element, count, hit in _interval_violations(state, self.network):
                element_rows.append({"t": state.t, "constraint_family": family, "element": element,
                                     "count": count, "rate": count / n})
                any_hit[family] = any_hit.get(family, np.zeros(n, dtype=bool)) | hit
            for family, hit in any_hit.items():
                count = int(hit.sum())
                family_rows.append({"t": state.t, "constraint_family": family, "count": count, "rate": count / n})
        stats = ViolationStats(
            n_samples=n,
            by_element=pd.DataFrame(element_rows, columns=VIOLATION_COLUMNS),
            by_family=pd.DataFrame(family_rows, columns=FAMILY_COLUMNS),
        )
        total = int(stats.by_element["count"].sum()) if len(stats.by_element) else 0
        logger.info(f"Validation over {n} samples: {total} element violations, max rate {stats.max_rate():.4f}")
        return stats

    def loss_samples(self, setpoints: Sequence[DispatchSetpoints], batch: ScenarioBatch) -> np.ndarray:
        states = self._map(setpoints, batch)
        if not states:
            return np.zeros((batch.n_samples, 0))
        return np.stack([realized_losses(s, self.network) for s in states], axis=1)

    def loss_stats(self, setpoints: Sequence[DispatchSetpoints], batch: ScenarioBatch) -> pd.DataFrame:
        samples = self.loss_samples(setpoints, batch)
        return summarize_losses(samples, [sp.t for sp in setpoints])

    def validate(self, setpoints: Sequence[DispatchSetpoints], batch: ScenarioBatch) -> ValidationReport:
        samples = self.loss_samples(setpoints, batch)
        return ValidationReport(
            violations=self.violation_stats(setpoints, batch),
            losses=summarize_losses(samples, [sp.t for sp in setpoints]),
            loss_samples=samples,
        )


def summarize_losses(samples: np.ndarray, intervals: Sequence[int]) -> pd.DataFrame:
    rows = []
    for k, t in enumerate(intervals):
        values = samples[:, k]
        q = np.quantile(values, LOSS_QUANTILES)
        rows.append({
            "t": t,
            "mean_loss": float(values.mean()),
            "std_loss": float(values.std(ddof=1)) if values.size > 1 else 0.0,
            "q05_loss": float(q[0]),
            "q50_loss": float(q[1]),
            "q95_loss": float(q[2]),
        })
    return pd.DataFrame(rows, columns=LOSS_COLUMNS)


def violation_stats(setpoints: Sequence[DispatchSetpoints], network: Network, model: UncertaintyModel,
                    batch: ScenarioBatch, truncate: bool = False, workers: Optional[int] = None) -> ViolationStats:
    return MonteCarloValidator(network, model, truncate, workers).violation_stats(setpoints, batch)


def loss_stats(setpoints: Sequence[DispatchSetpoints], network: Network, model: UncertaintyModel,
               batch: ScenarioBatch, truncate: bool = False, workers: Optional[int] = None) -> pd.DataFrame:
    return MonteCarloValidator(network, model, truncate, workers).loss_stats(setpoints, batch)
