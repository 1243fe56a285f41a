"""
TCL ensemble as a discrete Markov decision process with a KL discomfort cost.

Time indexing is zero based. For a horizon of T intervals:
  - transitions[t] (t = 0..T-1) maps rho[t] to rho[t+1]
  - utilities[t] (t = 0..T) with utilities[0] = 0
  - the decision at interval t is scored against utilities[t+1]
  - the expected injection of interval t is read from rho[t+1]
Transition matrices are column stochastic: entry [alpha, beta] is the
probability of moving from state beta to state alpha.
"""

from dataclasses import dataclass
from typing import Optional, Tuple
import logging
import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from app.core.exceptions import MdpConvergenceError
from app.core.network import TclSite

logger = logging.getLogger(__name__)

# Default transition profile of an 8-state ensemble, indexed by the forward
# distance (alpha - beta) mod 8 along the consumption cycle.
CYCLE_PROFILE_8 = np.array([0.2, 0.5, 0.1, 0.03, 0.02, 0.03, 0.1, 0.02])

ROOT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    bus: int
    p_states: np.ndarray  # kW
    q_states: np.ndarray  # kvar
    default_transitions: np.ndarray  # (T, n, n)
    gamma: np.ndarray  # (T, n, n), $
    rho_init: np.ndarray

    def __post_init__(self):
        n = self.p_states.size
        T = self.default_transitions.shape[0]
        if self.default_transitions.shape != (T, n, n) or self.gamma.shape != (T, n, n):
            raise ValueError(f"ensemble at bus {self.bus}: transition/penalty arrays must be ({T}, {n}, {n})")
        if np.any(self.default_transitions < 0) or np.any(self.default_transitions > 1):
            raise ValueError(f"ensemble at bus {self.bus}: default transitions outside [0, 1]")
        if np.any(np.abs(self.default_transitions.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError(f"ensemble at bus {self.bus}: default transitions are not column stochastic")
        if np.any((self.default_transitions > 0) & ~(self.gamma > 0)):
            raise ValueError(f"ensemble at bus {self.bus}: gamma must be positive on the transition support")
        if np.any(self.rho_init < 0) or abs(self.rho_init.sum() - 1.0) > 1e-9:
            raise ValueError(f"ensemble at bus {self.bus}: rho_init is not a distribution")

    @property
    def horizon(self) -> int:
        return self.default_transitions.shape[0]

    @property
    def n_states(self) -> int:
        return self.p_states.size


@dataclass(frozen=True, eq=False)
class StateUtilities:
    values: np.ndarray  # (T + 1, n), $


@dataclass(frozen=True, eq=False)
class EnsemblePolicy:
    bus: int
    transitions: np.ndarray  # (T, n, n)
    rho: np.ndarray  # (T + 1, n)
    objective_value: float


def discretize_states(avg_load: float, n_states: int, lo_frac: float, hi_frac: float,
                      power_factor: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform grid of state powers between lo_frac and hi_frac of the average load"""
    if n_states < 2:
        raise ValueError("n_states must be at least 2")
    if not 0 < lo_frac < hi_frac:
        raise ValueError("range must satisfy 0 < lo_frac < hi_frac")
    p = avg_load * np.linspace(lo_frac, hi_frac, n_states)
    q = p * math.tan(math.acos(power_factor))
    return p, q


def cycle_default_transitions(n_states: int) -> np.ndarray:
    """Circulant default dynamics: mostly advance one state along the cycle"""
    if n_states == CYCLE_PROFILE_8.size:
        profile = CYCLE_PROFILE_8
    elif n_states == 2:
        profile = np.array([0.2, 0.8])
    else:
        profile = np.full(n_states, 0.3 / (n_states - 2))
        profile[0] = 0.2
        profile[1] = 0.5
    idx = (np.arange(n_states)[:, None] - np.arange(n_states)[None, :]) % n_states
    return profile[idx]


def build_gamma(n_states: int, mode: str, low: float = 1.0, high: float = 10.0) -> np.ndarray:
    """
    Penalty weights per (alpha, beta).

    uniform: every transition costs `low`.
    nonuniform: moves along the cycle (beta -> beta + 1) and staying put cost
    `low`, every other jump costs `high`.
    """
    if mode == "uniform":
        return np.full((n_states, n_states), low)
    if mode != "nonuniform":
        raise ValueError(f"unknown gamma mode '{mode}'")
    gamma = np.full((n_states, n_states), high)
    for beta in range(n_states):
        gamma[beta, beta] = low
        gamma[(beta + 1) % n_states, beta] = low
    return gamma


def ensemble_from_site(site: TclSite, horizon: int, gamma_mode: Optional[str] = None,
                       n_states: Optional[int] = None) -> EnsembleSpec:
    n = n_states or site.n_states
    p, q = discretize_states(site.avg_load_kw, n, site.range_lo_frac, site.range_hi_frac, site.power_factor)
    if site.default_transitions is not None and site.default_transitions.shape == (n, n):
        base = site.default_transitions
    else:
        base = cycle_default_transitions(n)
    if site.rho_init is not None and site.rho_init.size == n:
        rho = site.rho_init
    else:
        rho = np.full(n, 1.0 / n)
    gamma = build_gamma(n, gamma_mode or site.gamma_mode)
    return EnsembleSpec(
        bus=site.bus,
        p_states=p,
        q_states=q,
        default_transitions=np.repeat(base[None, :, :], horizon, axis=0),
        gamma=np.repeat(gamma[None, :, :], horizon, axis=0),
        rho_init=np.asarray(rho, dtype=float),
    )


def utilities_from_prices(spec: EnsembleSpec, lambda_p: np.ndarray, lambda_q: np.ndarray) -> StateUtilities:
    """U[t+1] = U[t] + lambda_p[t] * p + lambda_q[t] * q, starting from U[0] = 0"""
    lambda_p = np.asarray(lambda_p, dtype=float)
    lambda_q = np.asarray(lambda_q, dtype=float)
    if lambda_p.shape != (spec.horizon,) or lambda_q.shape != (spec.horizon,):
        raise ValueError(f"price sequences must have length {spec.horizon}")
    increments = np.outer(lambda_p, spec.p_states) + np.outer(lambda_q, spec.q_states)
    values = np.zeros((spec.horizon + 1, spec.n_states))
    values[1:] = np.cumsum(increments, axis=0)
    return StateUtilities(values=values)


def _solve_column(pbar: np.ndarray, gamma: np.ndarray, cost: np.ndarray, method: str) -> Tuple[np.ndarray, float]:
    """
    Minimize sum_a P_a (cost_a + gamma_a log(P_a / pbar_a)) over the simplex
    restricted to the support of pbar. Returns the distribution and its value.
    """
    out = np.zeros_like(pbar)
    support = pbar > 0
    ps, gs, cs = pbar[support], gamma[support], cost[support]

    if ps.size == 1:
        out[support] = 1.0
        return out, float(cs[0] - gs[0] * math.log(ps[0]))

    uniform = np.ptp(gs) <= 1e-12 * gs.max()
    if method == "closed_form" and not uniform:
        raise ValueError("closed form requires a uniform penalty over the column")

    if method == "closed_form" or (method == "auto" and uniform):
        logits = np.log(ps) - cs / gs[0]
        log_z = logsumexp(logits)
        out[support] = np.exp(logits - log_z)
        return out, float(-gs[0] * log_z)

    log_ps = np.log(ps)

    def exponents(mu: float) -> np.ndarray:
        return log_ps - (cs + mu) / gs - 1.0

    def normalization(mu: float) -> float:
        return float(logsumexp(exponents(mu)))

    # Each term reaches 1 at its own crossing point, which brackets the root.
    crossings = gs * (log_ps - 1.0) - cs
    lo = float(crossings.min())
    hi = float((crossings + gs * math.log(ps.size)).max())
    try:
        mu = brentq(normalization, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (RuntimeError, ValueError) as e:
        raise MdpConvergenceError(f"normalization root find failed: {e}")

    probs = np.exp(exponents(mu))
    total = probs.sum()
    if not math.isfinite(total) or abs(total - 1.0) > 1e-10:
        raise MdpConvergenceError(f"normalization residual {abs(total - 1.0):.3e} exceeds tolerance")
    probs /= total
    out[support] = probs
    value = float(np.sum(probs * (cs + gs * (np.log(probs, where=probs > 0, out=np.zeros_like(probs)) - log_ps))))
    return out, value


def backward_forward_solve(spec: EnsembleSpec, utilities: StateUtilities, method: str = "auto") -> EnsemblePolicy:
    """
    Backward pass: optimal conditional distributions P(.|beta) from the last
    interval to the first. Forward pass: propagate rho_init through them.

    method: "auto" uses the closed form where the penalty is uniform over a
    column and root finding elsewhere; "closed_form" and "root_find" force one path.
    """
    if method not in ("auto", "closed_form", "root_find"):
        raise ValueError(f"unknown method '{method}'")
    T, n = spec.horizon, spec.n_states
    U = utilities.values
    if U.shape != (T + 1, n):
        raise ValueError(f"utilities must be ({T + 1}, {n})")

    transitions = np.zeros((T, n, n))
    value_next = np.zeros(n)
    for t in range(T - 1, -1, -1):
        cost = -U[t + 1] + value_next
        value_now = np.empty(n)
        for beta in range(n):
            col, val = _solve_column(spec.default_transitions[t, :, beta], spec.gamma[t, :, beta], cost, method)
            transitions[t, :, beta] = col
            value_now[beta] = val
        value_next = value_now

    rho = forward_propagate(transitions, spec.rho_init)
    policy = EnsemblePolicy(bus=spec.bus, transitions=transitions, rho=rho, objective_value=0.0)
    objective = ensemble_objective(policy, spec, utilities)
    return EnsemblePolicy(bus=spec.bus, transitions=transitions, rho=rho, objective_value=objective)


def forward_propagate(transitions: np.ndarray, rho_init: np.ndarray) -> np.ndarray:
    T, n, _ = transitions.shape
    rho = np.zeros((T + 1, n))
    rho[0] = rho_init
    for t in range(T):
        rho[t + 1] = transitions[t] @ rho[t]
    return rho


def expected_injections(policy: EnsemblePolicy, spec: EnsembleSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Per-interval expected consumption (kW, kvar) of the ensemble"""
    occupation = policy.rho[1:]
    return occupation @ spec.p_states, occupation @ spec.q_states


def ensemble_objective(policy: EnsemblePolicy, spec: EnsembleSpec, utilities: StateUtilities) -> float:
    P, Pbar, gamma = policy.transitions, spec.default_transitions, spec.gamma
    if np.any((P > 0) & (Pbar == 0)):
        raise ValueError("log of zero: transition used outside the default support")
    ratio = np.divide(P, Pbar, out=np.ones_like(P), where=P > 0)
    kl = gamma * P * np.log(ratio)
    per_source = (-(utilities.values[1:, :, None]) * P + kl).sum(axis=1)  # (T, n_beta)
    return float(np.sum(policy.rho[:-1] * per_source))


def discomfort_cost(policy: EnsemblePolicy, spec: EnsembleSpec) -> float:
    """Objective with zero utilities: the pure KL discomfort of the policy"""
    zero = StateUtilities(values=np.zeros((spec.horizon + 1, spec.n_states)))
    return ensemble_objective(policy, spec, zero)
