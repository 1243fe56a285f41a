import numpy as np
import pytest

from app.core.ccopf import UncertaintyModel
from app.models.schemas import RunStatus, StepRule
from app.services.std2 import (
    MultiplierState, Std2Config, Std2Coordinator, convergence_report, iteration_summary, step3_update,
)


def _state(p, q=None):
    p = np.atleast_2d(np.asarray(p, dtype=float))
    return MultiplierState(p, np.zeros_like(p) if q is None else np.atleast_2d(np.asarray(q, dtype=float)))


def _coordinator(network, **config):
    return Std2Coordinator(network, UncertaintyModel.zero(network), Std2Config(**config))


def test_step3_moves_toward_mdp_side():
    updated = step3_update(_state([[0.0]]), ([[50.0]], [[0.0]]), ([[40.0]], [[0.0]]), 0.1)
    assert updated.lambda_p[0, 0] == pytest.approx(1.0)
    assert updated.lambda_q[0, 0] == 0.0
    assert updated.iteration == 2


def test_step3_keeps_multipliers_at_consensus():
    start = _state([[0.3, -0.2]], [[0.1, 0.0]])
    same = ([[12.0, 7.0]], [[1.0, 2.0]])
    updated = step3_update(start, same, same, 0.1)
    np.testing.assert_array_equal(updated.lambda_p, start.lambda_p)
    np.testing.assert_array_equal(updated.lambda_q, start.lambda_q)


def test_step3_with_zero_step_is_identity():
    start = _state([[0.5]])
    updated = step3_update(start, ([[1.0]], [[0.0]]), ([[3.0]], [[0.0]]), 0.0)
    np.testing.assert_array_equal(updated.lambda_p, start.lambda_p)


def test_step3_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        step3_update(_state([[0.0]]), ([[1.0, 2.0]], [[0.0, 0.0]]), ([[1.0]], [[0.0]]), 0.1)


def test_default_step_settles_on_marginal_loss_cost(two_bus_tcl):
    solution = _coordinator(two_bus_tcl).run()
    assert solution.converged
    assert solution.iterations <= 8
    copy = solution.results[0].setpoints.tcl_p[0]
    assert abs(solution.mdp_p[0, 0] - copy) <= 1e-4 / 0.1 + 1e-9
    # d/dP of 1e-4 * (100 + P)^2 at the settled consumption
    assert solution.multipliers.lambda_p[0, 0] == pytest.approx(2e-4 * (100.0 + copy), abs=3e-4)
    assert solution.multipliers.lambda_p[0, 0] > 0.0204
    assert solution.results[0].proximal_cost == pytest.approx(0.0, abs=1e-6)


def test_plain_dual_ascent_bounces_at_the_default_step(two_bus_tcl):
    solution = _coordinator(two_bus_tcl, proximal=False, max_iter=10).run()
    assert solution.status == RunStatus.NOT_CONVERGED
    copies = [record.gap_p[0, 0] for record in solution.trace[1:]]
    assert min(abs(g) for g in copies) > 1.0


def test_step2_objective_leaves_out_the_proximal_term(small_feeder):
    solution = _coordinator(small_feeder, max_iter=1).run()
    record = solution.trace[0]
    assert record.step2_objective == pytest.approx(sum(r.objective for r in solution.results))
    assert all(r.proximal_cost >= 0 for r in solution.results)


@pytest.mark.parametrize("kwargs", [
    {"delta": 0.0}, {"delta": -1.0}, {"zeta": 0.0}, {"max_iter": 0}, {"eta_g": 0.5}, {"eta_v": 0.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        Std2Config(**kwargs)


def test_diminishing_step():
    config = Std2Config(delta=0.4, step_rule=StepRule.DIMINISHING)
    assert config.step_size(1) == pytest.approx(0.4)
    assert config.step_size(4) == pytest.approx(0.2)
    assert Std2Config(delta=0.4).step_size(9) == pytest.approx(0.4)


def test_network_without_ensembles_converges_immediately(two_bus):
    solution = _coordinator(two_bus).run()
    assert solution.status == RunStatus.CONVERGED
    assert solution.iterations == 2
    assert solution.multipliers.lambda_p.shape == (1, 0)
    assert solution.integrated_objective == pytest.approx(1.0, abs=1e-6)


def test_iteration_limit_reports_not_converged(two_bus_tcl):
    solution = _coordinator(two_bus_tcl, zeta=1e-12, max_iter=1).run()
    assert solution.status == RunStatus.NOT_CONVERGED
    assert not solution.converged
    assert solution.iterations == 1
    assert len(solution.results) == two_bus_tcl.horizon


def test_small_step_reaches_consensus(two_bus_tcl):
    delta, zeta = 3e-4, 1e-5
    solution = _coordinator(two_bus_tcl, delta=delta, zeta=zeta, max_iter=200).run()
    assert solution.converged
    last, previous = solution.trace[-1], solution.trace[-2]
    assert np.max(np.abs(last.lambda_p - previous.lambda_p)) <= zeta
    assert last.max_gap <= zeta / delta + 1e-9
    np.testing.assert_allclose(solution.mdp_p[:, 0], [r.setpoints.tcl_p[0] for r in solution.results], atol=0.1)
    # prices settle where the marginal loss cost exceeds its value at the lowest consumption
    assert solution.multipliers.lambda_p[0, 0] > 0.0204


def test_dual_value_does_not_decrease_for_small_steps(two_bus_tcl):
    solution = _coordinator(two_bus_tcl, delta=1e-5, zeta=1e-12, max_iter=8, proximal=False).run()
    values = [record.dual_value for record in solution.trace]
    assert all(b >= a - 1e-6 for a, b in zip(values, values[1:]))


def test_runs_are_deterministic(small_feeder):
    first = _coordinator(small_feeder, delta=1e-4, max_iter=3, workers=2).run()
    second = _coordinator(small_feeder, delta=1e-4, max_iter=3, workers=1).run()
    for a, b in zip(first.trace, second.trace):
        np.testing.assert_array_equal(a.lambda_p, b.lambda_p)
        np.testing.assert_array_equal(a.lambda_q, b.lambda_q)
    assert first.integrated_objective == second.integrated_objective


def test_convergence_report_and_summary(small_feeder):
    solution = _coordinator(small_feeder, delta=1e-4, max_iter=2).run()
    report = convergence_report(solution.trace, solution.tcl_buses)
    assert list(report.columns) == ["iteration", "t", "bus", "lambda_p", "lambda_q", "gap_p", "gap_q"]
    assert len(report) == 2 * small_feeder.horizon * 2
    assert set(report["bus"]) == {3, 4}
    summary = iteration_summary(solution.trace)
    assert list(summary["iteration"]) == [1, 2]
    assert np.allclose(summary["dual_value"], summary["step1_objective"] + summary["step2_objective"])


def test_convergence_report_needs_a_trace():
    with pytest.raises(ValueError):
        convergence_report([], [3])


def test_frozen_baseline_pins_default_consumption(small_feeder):
    coordinator = _coordinator(small_feeder)
    p, _ = coordinator.default_injections()
    baseline = coordinator.frozen_default_baseline()
    assert len(baseline) == small_feeder.horizon
    for t, result in enumerate(baseline):
        np.testing.assert_allclose(result.setpoints.tcl_p, p[t], atol=1e-5)


def test_multiplier_state_rejects_bad_input():
    with pytest.raises(ValueError):
        MultiplierState(np.zeros((2, 1)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        MultiplierState(np.array([[np.nan]]), np.zeros((1, 1)))
