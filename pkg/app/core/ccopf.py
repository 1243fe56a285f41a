"""
Per-interval chance-constrained optimal power flow on the LinDistFlow model.

Powers enter and leave this module in kW / kvar; internally everything is
per unit on the network's kVA base. Flows point away from the root. Forecast
errors are net-load errors: a positive error at bus j adds consumption there,
and every generator k picks up alpha_k of the aggregate error, so the flow on
line l moves by sum_j (a_lj - s_l) eps_j with s_l = sum_k a_{l,bus_k} alpha_k.
Reactive errors are K times the active ones.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from app.core.conic import ConeKind, SolverOptions, StandardConicProgram, solve
from app.core.exceptions import CcopfBuildError, SubproblemError
from app.core.gaussian import chance_quantile
from app.core.network import Network
from app.core.program_builder import ONE, ConicProgramBuilder
from app.models.schemas import AlphaMode, ObjectiveMode

logger = logging.getLogger(__name__)

FIXED_BOUND_TOL = 1e-12


# ---------------------------------------------------------------------------
# Uncertainty
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class UncertaintyModel:
    sigma: np.ndarray  # (T, N) forecast-error std in kW, zero off PV buses
    k_factor: float = 0.0
    independent: bool = True

    def __post_init__(self):
        if np.any(self.sigma < 0) or not np.all(np.isfinite(self.sigma)):
            raise ValueError("forecast-error standard deviations must be finite and nonnegative")

    @classmethod
    def zero(cls, network: Network) -> "UncertaintyModel":
        return cls(sigma=np.zeros((network.horizon, network.n_buses)), k_factor=network.k_factor)

    def sources(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.sigma[t] > 0)


def build_uncertainty(network: Network, sigma_frac: Optional[float] = None,
                      k_factor: Optional[float] = None) -> UncertaintyModel:
    """sigma = frac * forecast at every PV bus; co-located sources add in variance"""
    variance = np.zeros((network.horizon, network.n_buses))
    for src in network.pv:
        frac = src.sigma_frac if sigma_frac is None else sigma_frac
        if frac < 0:
            raise ValueError(f"sigma fraction must be nonnegative, got {frac}")
        variance[:, network.bus_index[src.bus]] += (frac * src.forecast_p) ** 2
    return UncertaintyModel(
        sigma=np.sqrt(variance),
        k_factor=network.k_factor if k_factor is None else k_factor,
    )


def aggregate_error_std(model: UncertaintyModel, t: int) -> Tuple[float, float]:
    """Standard deviation of the aggregate active and reactive error (kW, kvar)"""
    if not model.independent:
        raise ValueError("aggregation assumes independent forecast errors")
    std_p = float(np.sqrt(np.sum(model.sigma[t] ** 2)))
    return std_p, abs(model.k_factor) * std_p


# ---------------------------------------------------------------------------
# Recourse and deviation maps
# ---------------------------------------------------------------------------

def generator_columns(network: Network) -> np.ndarray:
    return np.array([network.bus_index[g.bus] for g in network.generators], dtype=int)


def participation_factors(network: Network) -> np.ndarray:
    """
    Fixed-proportional alpha: a single generator takes everything; several
    share in proportion to active headroom, unlimited units splitting equally.
    """
    G = len(network.generators)
    if G == 0:
        return np.zeros(0)
    if G == 1:
        return np.ones(1)
    headroom = np.array([g.headroom for g in network.generators])
    unlimited = ~np.isfinite(headroom)
    if unlimited.any():
        return unlimited / unlimited.sum()
    if headroom.sum() <= 0:
        return np.full(G, 1.0 / G)
    return headroom / headroom.sum()


def recourse_shares(network: Network, alpha: np.ndarray) -> np.ndarray:
    """s_l: share of the aggregate error carried by generators below line l"""
    if alpha.size == 0:
        return np.zeros(network.n_lines)
    return network.path_incidence[:, generator_columns(network)] @ alpha


def flow_deviation_coeffs(network: Network, alpha: np.ndarray,
                          k_factor: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(E, N) maps from net-load errors to active and reactive flow deviations"""
    K = network.k_factor if k_factor is None else k_factor
    cp = network.path_incidence - recourse_shares(network, np.asarray(alpha, dtype=float))[:, None]
    return cp, K * cp


def voltage_deviation_coeffs(network: Network, alpha: np.ndarray,
                             k_factor: Optional[float] = None) -> np.ndarray:
    """(N, N) map from net-load errors (p.u.) to squared-voltage deviations (p.u.^2)"""
    K = network.k_factor if k_factor is None else k_factor
    cp, _ = flow_deviation_coeffs(network, alpha, K)
    weights = network.r + K * network.x
    return -2.0 * network.path_incidence.T @ (weights[:, None] * cp)


def line_error_variance(network: Network, model: UncertaintyModel, t: int, alpha: np.ndarray,
                        mode: ObjectiveMode, alpha_credit: bool = True) -> np.ndarray:
    """
    Active-flow variance per line in p.u.^2. The reactive part is K^2 times this.

    exact: Var(sum_j (a_lj - s_l) eps_j), cross terms included.
    aggregated: sum_j a_lj (sigma_j^2 - alpha_j^2 sigma_agg^2), optionally without the
    alpha credit.
    """
    sig2 = (model.sigma[t] / network.base_kva) ** 2
    alpha = np.asarray(alpha, dtype=float)
    if mode == ObjectiveMode.EXACT:
        cp, _ = flow_deviation_coeffs(network, alpha, model.k_factor)
        return (cp ** 2) @ sig2
    variance = network.path_incidence @ sig2
    if alpha_credit and alpha.size:
        agg2 = sig2.sum()
        variance = variance - agg2 * (network.path_incidence[:, generator_columns(network)] @ alpha ** 2)
    return variance


# ---------------------------------------------------------------------------
# Chance constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SocConstraint:
    """
    mean'x + z ||S x|| <= bound (upper) or mean'x - z ||S x|| >= bound (lower),
    the deterministic equivalent of P(xi'x > bound) <= eta for Gaussian xi.
    """

    mean: np.ndarray
    std_matrix: np.ndarray
    z: float
    bound: float
    side: str

    @property
    def is_linear(self) -> bool:
        return not np.any(self.std_matrix)

    def lhs(self, x: np.ndarray) -> float:
        spread = self.z * float(np.linalg.norm(self.std_matrix @ x))
        mid = float(self.mean @ x)
        return mid + spread if self.side == "upper" else mid - spread

    def margin(self, x: np.ndarray) -> float:
        """Nonnegative iff x satisfies the constraint"""
        value = self.lhs(x)
        return self.bound - value if self.side == "upper" else value - self.bound

    def emit(self, builder: ConicProgramBuilder, cols: Sequence[int], name: str) -> None:
        cols = np.asarray(cols, dtype=int)
        real = cols != ONE
        sign = 1.0 if self.side == "upper" else -1.0
        s_real = self.std_matrix[:, real]
        s_const = self.std_matrix[:, ~real].sum(axis=1)
        lin_cols = list(cols[real])
        lin_coefs = list(self.mean[real])
        rhs = self.bound - float(self.mean[~real].sum())
        if np.any(s_real):
            rows = np.flatnonzero(np.any(self.std_matrix, axis=1))
            block = builder.add_block(f"{name}:std", ConeKind.SOC, 1 + rows.size)
            for k, r in enumerate(rows):
                builder.add_equality([block[1 + k]] + list(cols[real]), [1.0] + list(-s_real[r]), s_const[r])
            lin_cols.append(block[0])
            lin_coefs.append(sign * self.z)
        else:
            rhs -= sign * self.z * float(np.linalg.norm(s_const))
        builder.add_inequality(lin_cols, lin_coefs, rhs, "le" if sign > 0 else "ge", f"{name}:slack")


def soc_reformulate(mean: Sequence[float], std_coeffs, eta: float, bound: float, side: str) -> SocConstraint:
    if side not in ("upper", "lower"):
        raise ValueError(f"side must be 'upper' or 'lower', got '{side}'")
    z = chance_quantile(eta)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    std = np.asarray(std_coeffs, dtype=float)
    if std.ndim == 1:
        std = std.reshape(1, -1)
    if std.shape[1] != mean.size:
        raise ValueError("std coefficients and mean must have the same number of columns")
    return SocConstraint(mean=mean, std_matrix=std, z=z, bound=float(bound), side=side)


@dataclass(frozen=True, eq=False)
class ChanceConstraint:
    name: str
    constraint: SocConstraint
    cols: np.ndarray


# ---------------------------------------------------------------------------
# Program assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CcopfConfig:
    eta_g: float = 0.05
    eta_v: float = 0.05
    lambda_tariff: float = 10.0  # $/kWh, overridden by a case tariff profile
    alpha_mode: AlphaMode = AlphaMode.FIXED
    objective_mode: ObjectiveMode = ObjectiveMode.EXACT
    interval_hours: float = 1.0
    accept_inaccurate: bool = True  # take solves that stalled within the relaxed tolerance


@dataclass(frozen=True, eq=False)
class TclBounds:
    """Injection intervals (kW, kvar) for the network-side copy of each ensemble"""

    p_lo: np.ndarray
    p_hi: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray

    @classmethod
    def from_states(cls, p_states: Sequence[np.ndarray], q_states: Sequence[np.ndarray]) -> "TclBounds":
        return cls(
            p_lo=np.array([p.min() for p in p_states]), p_hi=np.array([p.max() for p in p_states]),
            q_lo=np.array([q.min() for q in q_states]), q_hi=np.array([q.max() for q in q_states]),
        )

    @classmethod
    def fixed(cls, p: np.ndarray, q: np.ndarray) -> "TclBounds":
        p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
        return cls(p_lo=p, p_hi=p, q_lo=q, q_hi=q)

    def check(self, n: int) -> None:
        for arr in (self.p_lo, self.p_hi, self.q_lo, self.q_hi):
            if arr.shape != (n,):
                raise CcopfBuildError(f"TCL bounds must cover {n} ensembles")
        if np.any(self.p_lo > self.p_hi) or np.any(self.q_lo > self.q_hi):
            raise CcopfBuildError("TCL injection bounds are inverted (lower > upper)")


@dataclass(frozen=True, eq=False)
class ProximalAnchor:
    """Adds weight/2 * ||copy - target||^2 ($, kW) on the network-side TCL copies"""

    p: np.ndarray
    q: np.ndarray
    weight: float  # $/kW^2

    def check(self, n: int) -> None:
        if np.shape(self.p) != (n,) or np.shape(self.q) != (n,):
            raise CcopfBuildError(f"proximal targets must cover {n} ensembles")
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise CcopfBuildError(f"proximal weight must be finite and nonnegative, got {self.weight}")

    def cost(self, tcl_p: np.ndarray, tcl_q: np.ndarray) -> float:
        return 0.5 * self.weight * float(np.sum((tcl_p - self.p) ** 2) + np.sum((tcl_q - self.q) ** 2))


@dataclass(eq=False)
class CcopfIndex:
    """Where each physical quantity lives in the conic program"""

    t: int
    network: Network
    model: UncertaintyModel
    config: CcopfConfig
    variables: Dict[str, np.ndarray]
    rows_p: np.ndarray
    rows_q: np.ndarray
    u_cols: np.ndarray  # ONE at the root
    alpha_fixed: Optional[np.ndarray]
    chance: List[ChanceConstraint] = field(default_factory=list)
    anchor: Optional[ProximalAnchor] = None


@dataclass(eq=False)
class DispatchSetpoints:
    t: int
    pg: np.ndarray  # kW per generator
    qg: np.ndarray
    root_p: float  # substation supply, kW
    root_q: float
    fp: np.ndarray  # kW per line
    fq: np.ndarray
    u: np.ndarray  # p.u.^2 per bus
    tcl_p: np.ndarray  # kW per ensemble
    tcl_q: np.ndarray
    alpha: np.ndarray


@dataclass(eq=False)
class CcopfResult:
    t: int
    setpoints: DispatchSetpoints
    expected_loss: float  # kWh over the interval
    deterministic_loss: float
    objective: float  # $
    duals_p: np.ndarray  # $/kW at each TCL bus
    duals_q: np.ndarray
    chance_margins: Dict[str, float]
    solver_stats: Dict[str, object]
    proximal_cost: float = 0.0  # $, already removed from objective


def build_ccopf(network: Network, model: UncertaintyModel, t: int, lambda_p: Sequence[float],
                lambda_q: Sequence[float], tcl_bounds: TclBounds, config: Optional[CcopfConfig] = None,
                anchor: Optional[ProximalAnchor] = None) -> Tuple[StandardConicProgram, CcopfIndex]:
    """
    Minimize tariff * expected loss - sum_b (lambda_p p_b + lambda_q q_b) for
    interval t subject to LinDistFlow balances, generator and voltage chance
    constraints and the TCL injection bounds. An anchor adds its proximal
    term on the TCL copies.
    """
    config = config or CcopfConfig()
    base = network.base_kva
    A = network.path_incidence
    N, E, G = network.n_buses, network.n_lines, len(network.generators)
    n_tcl = len(network.tcl)
    K = model.k_factor
    v0 = network.v0_sq
    lambda_p = np.asarray(lambda_p, dtype=float)
    lambda_q = np.asarray(lambda_q, dtype=float)
    if lambda_p.shape != (n_tcl,) or lambda_q.shape != (n_tcl,):
        raise CcopfBuildError(f"prices must cover {n_tcl} ensembles")
    tcl_bounds.check(n_tcl)
    if anchor is not None:
        anchor.check(n_tcl)

    std_p, std_q = aggregate_error_std(model, t)
    std_p, std_q = std_p / base, std_q / base
    if G == 0 and std_p > 0:
        raise CcopfBuildError("no controllable generator to absorb forecast errors (participation must sum to 1)")

    optimize = config.alpha_mode == AlphaMode.OPTIMIZE and G > 1
    alpha_fixed = None if optimize else participation_factors(network)
    z_g = chance_quantile(config.eta_g)
    z_v = chance_quantile(config.eta_v)
    tariff = network.tariff(t, config.lambda_tariff)
    loss_weight = tariff * base * config.interval_hours / v0

    builder = ConicProgramBuilder()
    pg = builder.add_free("pg", G)
    qg = builder.add_free("qg", G)
    root_supply = not network.has_root_generator()
    p_root = builder.add_free("p_root", 1) if root_supply else None
    q_root = builder.add_free("q_root", 1) if root_supply else None

    w = np.zeros(E, dtype=int)
    fp = np.zeros(E, dtype=int)
    fq = np.zeros(E, dtype=int)
    for l in range(E):
        block = builder.add_block(f"line:{l}", ConeKind.RSOC, 4)
        w[l], fp[l], fq[l] = block[0], block[2], block[3]
        builder.add_equality([block[1]], [1.0], 0.5)
    for name, cols in (("w", w), ("fp", fp), ("fq", fq)):
        builder.register(name, cols)

    root = network.root_index
    u_free = builder.add_free("u", N - 1)
    u_cols = np.full(N, ONE, dtype=int)
    u_cols[[b for b in range(N) if b != root]] = u_free

    tp = builder.add_free("tcl_p", n_tcl)
    tq = builder.add_free("tcl_q", n_tcl)
    for k in range(n_tcl):
        for col, lo, hi, tag in ((tp[k], tcl_bounds.p_lo[k], tcl_bounds.p_hi[k], "p"),
                                 (tq[k], tcl_bounds.q_lo[k], tcl_bounds.q_hi[k], "q")):
            if hi - lo <= FIXED_BOUND_TOL * max(1.0, abs(hi)):
                builder.add_equality([col], [1.0], lo / base)
            else:
                builder.add_inequality([col], [1.0], hi / base, "le", f"tcl_{tag}:{k}:hi")
                builder.add_inequality([col], [1.0], lo / base, "ge", f"tcl_{tag}:{k}:lo")

    alpha_cols = None
    if optimize:
        alpha_cols = builder.add_nonneg("alpha", G)
        builder.add_equality(alpha_cols, np.ones(G), 1.0)

    # nodal balances at the forecast point
    net_p = (network.load_p[t] - network.pv_forecast[t]) / base
    net_q = network.load_q[t] / base
    tcl_pos = {network.bus_index[bus]: k for k, bus in enumerate(network.tcl_buses)}
    gen_cols = generator_columns(network)
    rows_p = np.zeros(N, dtype=int)
    rows_q = np.zeros(N, dtype=int)
    for b in range(N):
        cols_p, coefs_p, cols_q, coefs_q = [], [], [], []
        for l, line in enumerate(network.lines):
            if network.bus_index[line.to_bus] == b:
                cols_p.append(fp[l]); coefs_p.append(1.0)
                cols_q.append(fq[l]); coefs_q.append(1.0)
            elif network.bus_index[line.from_bus] == b:
                cols_p.append(fp[l]); coefs_p.append(-1.0)
                cols_q.append(fq[l]); coefs_q.append(-1.0)
        for g in np.flatnonzero(gen_cols == b):
            cols_p.append(pg[g]); coefs_p.append(1.0)
            cols_q.append(qg[g]); coefs_q.append(1.0)
        if b == root and root_supply:
            cols_p.append(p_root[0]); coefs_p.append(1.0)
            cols_q.append(q_root[0]); coefs_q.append(1.0)
        if b in tcl_pos:
            cols_p.append(tp[tcl_pos[b]]); coefs_p.append(-1.0)
            cols_q.append(tq[tcl_pos[b]]); coefs_q.append(-1.0)
        rows_p[b] = builder.add_equality(cols_p, coefs_p, net_p[b])
        rows_q[b] = builder.add_equality(cols_q, coefs_q, net_q[b])

    # voltage drop along each line
    for l, line in enumerate(network.lines):
        to_b, from_b = network.bus_index[line.to_bus], network.bus_index[line.from_bus]
        cols = [u_cols[to_b], u_cols[from_b], fp[l], fq[l]]
        coefs = [v0 if to_b == root else 1.0, -v0 if from_b == root else -1.0, 2.0 * line.r, 2.0 * line.x]
        builder.add_equality(cols, coefs, 0.0)

    # objective: tariff * expected loss - prices on the TCL copies
    for l in range(E):
        builder.add_cost(w[l], loss_weight * network.r[l])
    reactive_scale = 1.0 + K * K
    if optimize:
        sig2 = (model.sigma[t] / base) ** 2
        D = A @ sig2
        builder.add_cost(ONE, loss_weight * reactive_scale * float(network.r @ D))
        if config.objective_mode == ObjectiveMode.EXACT:
            total = float(sig2.sum())
            G_share = A[:, gen_cols]
            for l in range(E):
                if not np.any(G_share[l]) or network.r[l] == 0:
                    continue
                block = builder.add_block(f"share:{l}", ConeKind.RSOC, 3)
                builder.add_equality([block[1]], [1.0], 0.5)
                builder.add_equality([block[2]] + list(alpha_cols), [1.0] + list(-G_share[l]), 0.0)
                weight = loss_weight * reactive_scale * network.r[l]
                builder.add_cost(block[0], weight * total)
                builder.add_cost(block[2], -2.0 * weight * D[l])
    else:
        variance = line_error_variance(network, model, t, alpha_fixed, config.objective_mode)
        builder.add_cost(ONE, loss_weight * reactive_scale * float(network.r @ variance))
    for k in range(n_tcl):
        builder.add_cost(tp[k], -lambda_p[k] * base)
        builder.add_cost(tq[k], -lambda_q[k] * base)
    if anchor is not None and anchor.weight > 0:
        # s >= (copy - target)^2 in p.u.
        scale = 0.5 * anchor.weight * base * base
        for k in range(n_tcl):
            for col, target, tag in ((tp[k], anchor.p[k], "p"), (tq[k], anchor.q[k], "q")):
                block = builder.add_block(f"prox_{tag}:{k}", ConeKind.RSOC, 3)
                builder.add_equality([block[1]], [1.0], 0.5)
                builder.add_equality([block[2], col], [1.0, -1.0], -target / base)
                builder.add_cost(block[0], scale)

    chance: List[ChanceConstraint] = []

    def add_chance(name: str, constraint: SocConstraint, cols: Sequence[int]) -> None:
        constraint.emit(builder, cols, name)
        chance.append(ChanceConstraint(name, constraint, np.asarray(cols, dtype=int)))

    # generator recourse limits
    for g, gen in enumerate(network.generators):
        for var, std, lo, hi, tag in ((pg[g], std_p, gen.p_min, gen.p_max, "p"),
                                      (qg[g], std_q, gen.q_min, gen.q_max, "q")):
            if optimize:
                cols, std_row = [var, alpha_cols[g]], [0.0, std]
            else:
                cols, std_row = [var, ONE], [0.0, std * alpha_fixed[g]]
            if math.isfinite(hi):
                add_chance(f"gen_{tag}:{gen.bus}:upper", soc_reformulate([1.0, 0.0], std_row, config.eta_g, hi / base, "upper"), cols)
            if math.isfinite(lo):
                add_chance(f"gen_{tag}:{gen.bus}:lower", soc_reformulate([1.0, 0.0], std_row, config.eta_g, lo / base, "lower"), cols)

    # voltage limits
    sig = model.sigma[t] / base
    sources = model.sources(t)
    if optimize:
        d = voltage_deviation_coeffs(network, np.zeros(G), K)
        weights = network.r + K * network.x
        m = 2.0 * A.T @ (weights[:, None] * A[:, gen_cols])  # (N, G)
    else:
        coef = voltage_deviation_coeffs(network, alpha_fixed if G else np.zeros(0), K)
    for b, bus in enumerate(network.buses):
        if b == root:
            continue
        if optimize and sources.size:
            cols = [u_cols[b]] + list(alpha_cols) + [ONE]
            mean = np.zeros(len(cols))
            mean[0] = 1.0
            std = np.zeros((sources.size, len(cols)))
            std[:, 1:1 + G] = sig[sources, None] * m[b][None, :]
            std[:, -1] = sig[sources] * d[b, sources]
        else:
            spread = 0.0 if optimize else float(np.linalg.norm(coef[b, sources] * sig[sources]))
            cols = [u_cols[b], ONE]
            mean = np.array([1.0, 0.0])
            std = np.array([[0.0, spread]])
        add_chance(f"voltage:{bus.id}:upper", soc_reformulate(mean, std, config.eta_v, bus.v_max_sq, "upper"), cols)
        add_chance(f"voltage:{bus.id}:lower", soc_reformulate(mean, std, config.eta_v, bus.v_min_sq, "lower"), cols)

    logger.debug(f"Interval {t}: z_g={z_g:.4f} z_v={z_v:.4f} aggregate std {std_p * base:.3f} kW")
    program, variables = builder.build()
    index = CcopfIndex(
        t=t, network=network, model=model, config=config, variables=variables,
        rows_p=rows_p, rows_q=rows_q, u_cols=u_cols, alpha_fixed=alpha_fixed, chance=chance, anchor=anchor,
    )
    return program, index


# ---------------------------------------------------------------------------
# Solution recovery and loss evaluation
# ---------------------------------------------------------------------------

def deterministic_loss(setpoints: DispatchSetpoints, network: Network) -> float:
    """Active loss (kW) of the forecast-point flows"""
    base = network.base_kva
    fp, fq = setpoints.fp / base, setpoints.fq / base
    return base * float(network.r @ (fp ** 2 + fq ** 2)) / network.v0_sq


def expected_loss(setpoints: DispatchSetpoints, network: Network, model: UncertaintyModel,
                  mode: ObjectiveMode = ObjectiveMode.EXACT) -> float:
    variance = line_error_variance(network, model, setpoints.t, setpoints.alpha, mode)
    extra = network.base_kva * (1.0 + model.k_factor ** 2) * float(network.r @ variance) / network.v0_sq
    return deterministic_loss(setpoints, network) + extra


def flows_from_injections(network: Network, t: int, tcl_p: np.ndarray, tcl_q: np.ndarray,
                          pg: Optional[np.ndarray] = None, qg: Optional[np.ndarray] = None
                          ) -> Tuple[np.ndarray, np.ndarray]:
    """Forecast-point flows (kW, kvar) implied by nodal injections; the root absorbs the balance"""
    net_p = network.load_p[t] - network.pv_forecast[t]
    net_q = network.load_q[t].copy()
    for k, bus in enumerate(network.tcl_buses):
        net_p[network.bus_index[bus]] += tcl_p[k]
        net_q[network.bus_index[bus]] += tcl_q[k]
    gen_cols = generator_columns(network)
    if pg is not None:
        np.subtract.at(net_p, gen_cols, pg)
    if qg is not None:
        np.subtract.at(net_q, gen_cols, qg)
    A = network.path_incidence
    return A @ net_p, A @ net_q


def solve_ccopf(program: StandardConicProgram, index: CcopfIndex,
                options: Optional[SolverOptions] = None) -> CcopfResult:
    solution = solve(program, options)
    if not (solution.is_optimal or (solution.is_usable and index.config.accept_inaccurate)):
        raise SubproblemError(index.t, solution.status.value,
                              f"primal residual {solution.residuals.primal:.2e}")

    network, x = index.network, solution.x
    base = network.base_kva
    var = index.variables

    def take(name: str) -> np.ndarray:
        return x[var[name]] if name in var else np.zeros(0)

    u = np.where(index.u_cols == ONE, network.v0_sq, x[np.maximum(index.u_cols, 0)])
    alpha = index.alpha_fixed if index.alpha_fixed is not None else take("alpha")
    setpoints = DispatchSetpoints(
        t=index.t,
        pg=take("pg") * base,
        qg=take("qg") * base,
        root_p=float(take("p_root").sum() * base),
        root_q=float(take("q_root").sum() * base),
        fp=x[var["fp"]] * base,
        fq=x[var["fq"]] * base,
        u=u,
        tcl_p=take("tcl_p") * base,
        tcl_q=take("tcl_q") * base,
        alpha=np.asarray(alpha, dtype=float),
    )

    tcl_idx = [network.bus_index[bus] for bus in network.tcl_buses]
    margins = {}
    for cc in index.chance:
        values = np.where(cc.cols == ONE, 1.0, x[np.maximum(cc.cols, 0)])
        margins[cc.name] = cc.constraint.margin(values)

    proximal = index.anchor.cost(setpoints.tcl_p, setpoints.tcl_q) if index.anchor is not None else 0.0

    result = CcopfResult(
        t=index.t,
        setpoints=setpoints,
        expected_loss=expected_loss(setpoints, network, index.model, index.config.objective_mode)
        * index.config.interval_hours,
        deterministic_loss=deterministic_loss(setpoints, network) * index.config.interval_hours,
        objective=solution.objective - proximal,
        duals_p=solution.y[index.rows_p[tcl_idx]] / base if tcl_idx else np.zeros(0),
        duals_q=solution.y[index.rows_q[tcl_idx]] / base if tcl_idx else np.zeros(0),
        chance_margins=margins,
        proximal_cost=proximal,
        solver_stats={
            "status": solution.status.value,
            "iterations": solution.iterations,
            "primal_residual": solution.residuals.primal,
            "dual_residual": solution.residuals.dual,
            "gap": solution.residuals.gap,
            "inaccurate": solution.inaccurate,
            "seconds": solution.solve_seconds,
        },
    )
    logger.debug(
        f"Interval {index.t}: expected loss {result.expected_loss:.4f} kWh, "
        f"{solution.iterations} solver iterations"
    )
    return result


def solve_interval(network: Network, model: UncertaintyModel, t: int, lambda_p: Sequence[float],
                   lambda_q: Sequence[float], tcl_bounds: TclBounds, config: Optional[CcopfConfig] = None,
                   options: Optional[SolverOptions] = None, anchor: Optional[ProximalAnchor] = None) -> CcopfResult:
    program, index = build_ccopf(network, model, t, lambda_p, lambda_q, tcl_bounds, config, anchor)
    return solve_ccopf(program, index, options)
