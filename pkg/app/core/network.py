"""
Radial distribution network model.

Buses and lines are stored in the order they were loaded; every matrix built
from a Network (path incidence, voltage and flow sensitivities) is indexed by
that order. Powers are kW / kvar, impedances and voltages are per unit on the
case base.
"""

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import networkx as nx
import numpy as np

from app.core.exceptions import NonRadialNetworkError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Bus:
    id: int
    load_p: np.ndarray
    load_q: np.ndarray
    v_min_sq: float
    v_max_sq: float


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float = -np.inf
    p_max: float = np.inf
    q_min: float = -np.inf
    q_max: float = np.inf

    @property
    def headroom(self) -> float:
        return self.p_max - self.p_min


@dataclass(frozen=True, eq=False)
class PvSource:
    bus: int
    forecast_p: np.ndarray
    sigma_frac: float
    rating_kw: Optional[float] = None


@dataclass(frozen=True, eq=False)
class TclSite:
    """TCL ensemble attachment as declared in the case document"""
    bus: int
    avg_load_kw: float
    n_states: int = 8
    range_lo_frac: float = 0.10
    range_hi_frac: float = 2.00
    power_factor: float = 1.0
    gamma_mode: str = "uniform"
    default_transitions: Optional[np.ndarray] = None
    rho_init: Optional[np.ndarray] = None


@dataclass(frozen=True)
class RadialityReport:
    ok: bool
    cycles: Tuple[Tuple[int, ...], ...] = ()
    disconnected: Tuple[int, ...] = ()

    def messages(self) -> List[str]:
        out = [f"cycle through buses {list(c)}" for c in self.cycles]
        if self.disconnected:
            out.append(f"buses not connected to the root: {list(self.disconnected)}")
        return out


@dataclass(frozen=True, eq=False)
class Network:
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    root: int
    horizon: int
    v0_sq: float = 1.0
    base_kva: float = 1.0
    base_kv: float = 1.0
    k_factor: float = 0.0
    generators: Tuple[Generator, ...] = ()
    pv: Tuple[PvSource, ...] = ()
    tcl: Tuple[TclSite, ...] = ()
    lambda_tariff: Optional[np.ndarray] = None
    name: str = "case"
    source_hash: str = ""

    # -- indexing ---------------------------------------------------------

    @cached_property
    def bus_ids(self) -> List[int]:
        return [b.id for b in self.buses]

    @cached_property
    def bus_index(self) -> Dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def root_index(self) -> int:
        return self.bus_index[self.root]

    @cached_property
    def path_incidence(self) -> np.ndarray:
        return build_path_incidence(self)

    @cached_property
    def r(self) -> np.ndarray:
        return np.array([l.r for l in self.lines], dtype=float)

    @cached_property
    def x(self) -> np.ndarray:
        return np.array([l.x for l in self.lines], dtype=float)

    @cached_property
    def load_p(self) -> np.ndarray:
        """(T, N) active load in kW"""
        return np.stack([b.load_p for b in self.buses], axis=1)

    @cached_property
    def load_q(self) -> np.ndarray:
        return np.stack([b.load_q for b in self.buses], axis=1)

    @cached_property
    def pv_forecast(self) -> np.ndarray:
        """(T, N) forecast PV output in kW"""
        out = np.zeros((self.horizon, self.n_buses))
        for src in self.pv:
            out[:, self.bus_index[src.bus]] += src.forecast_p
        return out

    @property
    def tcl_buses(self) -> List[int]:
        return [site.bus for site in self.tcl]

    def tariff(self, t: int, default: float) -> float:
        if self.lambda_tariff is None:
            return default
        return float(self.lambda_tariff[t])

    def has_root_generator(self) -> bool:
        return any(g.bus == self.root for g in self.generators)

    def with_resources(self, **changes) -> "Network":
        """Copy with replaced fields; derived caches are rebuilt lazily"""
        return replace(self, **changes)


def _graph(bus_ids: Sequence[int], lines: Sequence[Line]) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(bus_ids)
    for line in lines:
        graph.add_edge(line.from_bus, line.to_bus, line=line.id)
    return graph


def validate_radial(network: Network) -> RadialityReport:
    """Check that the line graph is a tree rooted at network.root"""
    bus_ids = [b.id for b in network.buses]
    cycles: List[Tuple[int, ...]] = []

    # Parallel lines collapse in a simple graph, report them as 2-cycles.
    seen: Dict[frozenset, int] = {}
    for line in network.lines:
        key = frozenset((line.from_bus, line.to_bus))
        if key in seen:
            cycles.append(tuple(sorted(key)))
        seen[key] = line.id

    graph = _graph(bus_ids, network.lines)
    for basis in nx.cycle_basis(graph):
        cycles.append(tuple(basis))

    if network.root in graph:
        reachable = nx.node_connected_component(graph, network.root)
    else:
        reachable = set()
    disconnected = tuple(b for b in bus_ids if b not in reachable)

    ok = not cycles and not disconnected and len(network.lines) == len(bus_ids) - 1
    return RadialityReport(ok=ok, cycles=tuple(cycles), disconnected=disconnected)


def build_path_incidence(network: Network) -> np.ndarray:
    """|E| x |N| matrix with a 1 where line l lies on the root -> bus path"""
    report = validate_radial(network)
    if not report.ok:
        raise NonRadialNetworkError("; ".join(report.messages()) or "network is not a tree")

    bus_pos = {b.id: i for i, b in enumerate(network.buses)}
    line_pos = {frozenset((l.from_bus, l.to_bus)): i for i, l in enumerate(network.lines)}
    graph = _graph(bus_pos.keys(), network.lines)

    paths = nx.single_source_shortest_path(graph, network.root)
    incidence = np.zeros((len(network.lines), len(network.buses)))
    for bus_id, path in paths.items():
        col = bus_pos[bus_id]
        for a, b in zip(path[:-1], path[1:]):
            incidence[line_pos[frozenset((a, b))], col] = 1.0
    return incidence


def orient_lines(lines: Sequence[Line], root: int) -> List[Line]:
    """Return lines with from_bus on the root side; requires a tree"""
    graph = _graph({l.from_bus for l in lines} | {l.to_bus for l in lines} | {root}, lines)
    depth = nx.single_source_shortest_path_length(graph, root)
    oriented = []
    for line in lines:
        if depth.get(line.from_bus, 0) > depth.get(line.to_bus, 0):
            logger.debug(f"Reorienting line {line.id} away from the root")
            line = replace(line, from_bus=line.to_bus, to_bus=line.from_bus)
        oriented.append(line)
    return oriented

