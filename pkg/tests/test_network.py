import json

import numpy as np
import pytest

from app.core.exceptions import CaseValidationError, NonRadialNetworkError
from app.core.network import validate_radial
from app.data.loaders import load_case
from tests.conftest import case_document


def test_chain_path_incidence(make_network):
    network = make_network(n_buses=3)
    expected = np.array([[0, 1, 1], [0, 0, 1]], dtype=float)
    np.testing.assert_array_equal(network.path_incidence, expected)


def test_star_path_incidence(make_network):
    network = make_network(n_buses=3, lines=[(1, 1, 2, 0.01, 0.01), (2, 1, 3, 0.01, 0.01)])
    expected = np.array([[0, 1, 0], [0, 0, 1]], dtype=float)
    np.testing.assert_array_equal(network.path_incidence, expected)


def test_lines_are_oriented_away_from_root(make_network):
    network = make_network(n_buses=3, lines=[(1, 2, 1, 0.01, 0.01), (2, 3, 2, 0.01, 0.01)])
    assert [(l.from_bus, l.to_bus) for l in network.lines] == [(1, 2), (2, 3)]


def test_two_bus_case(two_bus):
    assert two_bus.n_buses == 2
    assert two_bus.n_lines == 1
    assert two_bus.root == 1


def test_ieee33_topology(ieee33):
    assert ieee33.n_buses == 33
    assert ieee33.n_lines == 32
    assert ieee33.horizon == 24
    assert len(ieee33.tcl) == 4
    root_line = [l for l, line in enumerate(ieee33.lines) if line.from_bus == ieee33.root][0]
    assert ieee33.path_incidence[root_line].sum() == 32
    assert validate_radial(ieee33).ok


def test_triangle_is_reported_as_cycle(make_network):
    doc = case_document(n_buses=3, lines=[(1, 1, 2, 0.01, 0.01), (2, 2, 3, 0.01, 0.01), (3, 3, 1, 0.01, 0.01)])
    with pytest.raises(CaseValidationError) as exc:
        load_case(json.dumps(doc).encode())
    assert any("cycle" in m for m in exc.value.messages)


def test_two_components_are_reported(make_network):
    doc = case_document(n_buses=4, lines=[(1, 1, 2, 0.01, 0.01), (2, 3, 4, 0.01, 0.01)])
    with pytest.raises(CaseValidationError) as exc:
        load_case(json.dumps(doc).encode())
    assert any("not connected" in m for m in exc.value.messages)


def test_non_radial_network_cannot_build_incidence(two_bus):
    from app.core.network import Line
    broken = two_bus.with_resources(lines=two_bus.lines + (Line(9, 1, 2, 0.01, 0.01),))
    assert not validate_radial(broken).ok
    with pytest.raises(NonRadialNetworkError):
        broken.path_incidence


def test_derived_profiles(small_feeder):
    assert small_feeder.load_p.shape == (2, 4)
    np.testing.assert_allclose(small_feeder.pv_forecast[:, 3], [10.0, 20.0])
    assert small_feeder.tcl_buses == [3, 4]
    assert small_feeder.tariff(0, 7.5) == 7.5
