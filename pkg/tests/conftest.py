import json
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pytest

from app.data.loaders import CaseLoader, load_case

CASE_33 = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "app", "data", "cases", "ieee33.json")


def case_document(
    n_buses: int = 2,
    horizon: int = 1,
    loads: Optional[Dict[int, float]] = None,
    lines: Optional[List[tuple]] = None,
    generators: Optional[List[Dict[str, Any]]] = None,
    pv: Optional[List[Dict[str, Any]]] = None,
    tcl: Optional[List[Dict[str, Any]]] = None,
    base_kva: float = 1000.0,
    v_min_sq: float = 0.81,
    v_max_sq: float = 1.21,
    **header: Any,
) -> Dict[str, Any]:
    """Chain feeder 1-2-...-n unless lines are given as (id, from, to, r, x)"""
    loads = loads or {}
    if lines is None:
        lines = [(i, i, i + 1, 0.01, 0.01) for i in range(1, n_buses)]
    doc = {
        "header": {"name": "test", "base_kva": base_kva, "base_kv": 12.66, "horizon": horizon, **header},
        "buses": [
            {"id": b, "v_min_sq": v_min_sq, "v_max_sq": v_max_sq, "load_p": loads.get(b, 0.0), "load_q": 0.0}
            for b in range(1, n_buses + 1)
        ],
        "lines": [{"id": i, "from": f, "to": t, "r_pu": r, "x_pu": x} for i, f, t, r, x in lines],
        "generators": generators or [],
        "pv": pv or [],
        "tcl": tcl or [],
    }
    return doc


@pytest.fixture
def make_network():
    def factory(**kwargs):
        return load_case(json.dumps(case_document(**kwargs)).encode())
    return factory


@pytest.fixture
def two_bus(make_network):
    """Root plus one load bus drawing 100 kW over a (0.01, 0.01) p.u. line"""
    return make_network(loads={2: 100.0})


@pytest.fixture
def two_bus_tcl(make_network):
    return make_network(
        loads={2: 100.0},
        tcl=[{"bus": 2, "avg_load_kw": 20.0, "n_states": 4}],
    )


@pytest.fixture
def small_feeder(make_network):
    """Four-bus chain with a generator at bus 2, PV at bus 4 and TCLs at buses 3 and 4"""
    return make_network(
        n_buses=4,
        horizon=2,
        loads={2: 40.0, 3: 60.0, 4: 50.0},
        generators=[{"bus": 2, "p_min": 0.0, "p_max": 100.0, "q_min": -50.0, "q_max": 50.0}],
        pv=[{"bus": 4, "forecast_p": [10.0, 20.0], "sigma_frac": 0.3}],
        tcl=[
            {"bus": 3, "avg_load_kw": 10.0, "n_states": 4},
            {"bus": 4, "avg_load_kw": 15.0, "n_states": 4, "power_factor": 0.95},
        ],
    )


@pytest.fixture(scope="session")
def ieee33():
    return CaseLoader.load(CASE_33)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
