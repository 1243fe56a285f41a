import io

import numpy as np
import pytest
from scipy.optimize import linprog

from app.core.conic import (
    ConeBlock, ConeKind, ConicSolution, Residuals, SolverOptions, dump_program, kkt_residuals, load_program,
    make_program, solve,
)
from app.core.cones import ConeLayout
from app.core.presolve import apply_rotation, rotate_blocks
from app.models.schemas import SolverStatus


def soc3_program():
    return make_program([1, 0, 0], [[0, 1, 0], [0, 0, 1]], [3, 4], [("soc", 3)])


def test_soc3_norm_of_fixed_vector():
    solution = solve(soc3_program())
    assert solution.status == SolverStatus.OPTIMAL
    assert solution.objective == pytest.approx(5.0, abs=1e-8)
    np.testing.assert_allclose(solution.x, [5.0, 3.0, 4.0], atol=1e-7)


def test_rotated_cone():
    # 2 x0 x1 >= x2^2 with x1 = 0.5, x2 = 3 -> x0 >= 9
    program = make_program([1, 0, 0], [[0, 1, 0], [0, 0, 1]], [0.5, 3], [("rsoc", 3)])
    solution = solve(program)
    assert solution.is_optimal
    assert solution.objective == pytest.approx(9.0, abs=1e-7)


def test_simple_lp_reaches_optimum():
    program = make_program([1, 1], [[1, 1]], [1], [("nonneg", 2)])
    solution = solve(program)
    assert solution.is_optimal
    assert solution.objective == pytest.approx(1.0, abs=1e-8)
    assert np.all(solution.x >= -1e-9)


def test_offset_is_added():
    program = make_program([1, 1], [[1, 1]], [1], [("nonneg", 2)], offset=2.5)
    assert solve(program).objective == pytest.approx(3.5, abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_random_lp_matches_linprog(seed):
    rng = np.random.default_rng(seed)
    m, n = 4, 9
    A = rng.normal(size=(m, n))
    b = A @ rng.uniform(0.5, 1.5, n)
    c = A.T @ rng.normal(size=m) + rng.uniform(0.1, 1.0, n)
    reference = linprog(c, A_eq=A, b_eq=b, bounds=[(0, None)] * n, method="highs")
    solution = solve(make_program(c, A, b, [("nonneg", n)]))
    assert solution.is_optimal
    assert solution.objective == pytest.approx(reference.fun, rel=1e-6, abs=1e-7)


def _in_soc(v, tol):
    return v[0] >= np.linalg.norm(v[1:]) - tol


def _random_socp(rng):
    """Strictly feasible primal and dual by construction, so an optimum exists"""
    blocks = [("free", 2), ("nonneg", 3), ("soc", 4), ("soc", 3), ("rsoc", 3), ("nonneg", 2), ("soc", 3)]
    n = sum(d for _, d in blocks)
    m = 8
    x0, s0 = np.zeros(n), np.zeros(n)
    pos = 0
    for kind, dim in blocks:
        block = slice(pos, pos + dim)
        if kind == "free":
            x0[block] = rng.normal(size=dim)
        elif kind == "nonneg":
            x0[block] = rng.uniform(0.5, 2.0, dim)
            s0[block] = rng.uniform(0.5, 2.0, dim)
        elif kind == "soc":
            for v in (x0, s0):
                tail = rng.normal(size=dim - 1)
                v[block] = np.concatenate([[np.linalg.norm(tail) + rng.uniform(0.5, 1.5)], tail])
        else:
            for v in (x0, s0):
                tail = rng.normal(size=dim - 2)
                head = np.linalg.norm(tail) + 1.0
                v[block] = np.concatenate([[head, head], tail])
        pos += dim
    A = rng.normal(size=(m, n))
    b = A @ x0
    c = A.T @ rng.normal(size=m) + s0
    return make_program(c, A, b, blocks), blocks, float(c @ x0)


@pytest.mark.parametrize("seed", range(20))
def test_random_socp_certified_optimal(seed):
    rng = np.random.default_rng(1000 + seed)
    program, blocks, feasible_value = _random_socp(rng)
    solution = solve(program)
    assert solution.is_optimal

    residuals = kkt_residuals(program, solution)
    assert residuals.primal <= 1e-6
    assert residuals.dual <= 1e-6
    assert residuals.gap <= 1e-6 * (1.0 + abs(solution.objective))
    assert solution.objective <= feasible_value + 1e-7

    pos = 0
    for kind, dim in blocks:
        x, s = solution.x[pos:pos + dim], solution.s[pos:pos + dim]
        if kind == "nonneg":
            assert np.all(x >= -1e-8) and np.all(s >= -1e-8)
        elif kind == "soc":
            assert _in_soc(x, 1e-8) and _in_soc(s, 1e-8)
        elif kind == "rsoc":
            assert x[0] >= -1e-8 and x[1] >= -1e-8
            assert 2 * x[0] * x[1] >= float(x[2:] @ x[2:]) - 1e-6
        else:
            assert np.all(np.abs(s) <= 1e-8)
        pos += dim


def _planted_socp(rng):
    """
    Complementary pair (x*, s*) and multipliers y* chosen first; c and b follow, so c.x* = b.y*
    certifies the optimal value without another solver.
    """
    blocks = [("free", 2), ("nonneg", 4), ("soc", 4), ("soc", 3), ("rsoc", 4), ("soc", 3), ("rsoc", 3)]
    n = sum(d for _, d in blocks)
    m = 9
    x, s = np.zeros(n), np.zeros(n)
    pos = 0
    for kind, dim in blocks:
        block = slice(pos, pos + dim)
        scale = rng.uniform(0.5, 2.0)
        if kind == "free":
            x[block] = rng.normal(size=dim)
        elif kind == "nonneg":
            active = rng.random(dim) < 0.5
            x[block] = np.where(active, rng.uniform(0.5, 2.0, dim), 0.0)
            s[block] = np.where(active, 0.0, rng.uniform(0.5, 2.0, dim))
        elif kind == "soc":
            tail = rng.normal(size=dim - 1)
            radius = np.linalg.norm(tail)
            case = rng.integers(3)
            if case == 0:
                x[block] = np.concatenate([[radius + 1.0], tail])
            elif case == 1:
                s[block] = np.concatenate([[radius + 1.0], tail])
            else:
                x[block] = np.concatenate([[radius], tail])
                s[block] = scale * np.concatenate([[radius], -tail])
        else:
            tail = rng.normal(size=dim - 2)
            x0 = rng.uniform(0.5, 2.0)
            x1 = float(tail @ tail) / (2.0 * x0)
            # boundary pair: 2 x0 x1 = |u|^2 on both sides
            x[block] = np.concatenate([[x0, x1], tail])
            s[block] = scale * np.concatenate([[x1, x0], -tail])
        pos += dim
    A = rng.normal(size=(m, n))
    y = rng.normal(size=m)
    b = A @ x
    c = A.T @ y + s
    return make_program(c, A, b, blocks), float(b @ y)


@pytest.mark.parametrize("seed", range(100))
def test_planted_optimum_is_recovered(seed):
    program, optimal_value = _planted_socp(np.random.default_rng(5000 + seed))
    solution = solve(program)
    assert solution.is_optimal
    assert solution.objective == pytest.approx(optimal_value, rel=1e-6, abs=1e-6)


def test_infeasible_program_has_certificate():
    program = make_program([1, 1], [[1, 1]], [-1], [("nonneg", 2)])
    solution = solve(program)
    assert solution.status == SolverStatus.INFEASIBLE
    y = solution.certificate
    assert float(program.b @ y) > 0
    assert np.all(-(program.A.T @ y) >= -1e-8)


def test_inconsistent_rows_are_caught_in_presolve():
    program = make_program([0, 0], [[1, 1], [2, 2]], [1, 3], [("free", 2)])
    solution = solve(program)
    assert solution.status == SolverStatus.INFEASIBLE
    assert solution.iterations == 0
    assert float(program.b @ solution.certificate) > 0
    np.testing.assert_allclose(program.A.T @ solution.certificate, 0.0, atol=1e-9)


def test_unbounded_program_has_ray():
    program = make_program([-1, 0], [[1, -1]], [0], [("nonneg", 2)])
    solution = solve(program)
    assert solution.status == SolverStatus.UNBOUNDED
    x = solution.certificate
    assert float(program.c @ x) < 0
    np.testing.assert_allclose(program.A @ x, 0.0, atol=1e-8)
    assert np.all(x >= -1e-8)


def test_free_column_without_rows_is_unbounded():
    program = make_program([1, 0], [[0, 1]], [1], [("free", 1), ("nonneg", 1)])
    solution = solve(program)
    assert solution.status == SolverStatus.UNBOUNDED
    assert float(program.c @ solution.certificate) < 0


def test_dependent_rows_are_dropped():
    program = make_program([1, 1], [[1, 1], [2, 2]], [1, 2], [("nonneg", 2)])
    solution = solve(program)
    assert solution.is_optimal
    assert solution.objective == pytest.approx(1.0, abs=1e-8)
    assert solution.y.size == 2


def test_free_singleton_rows_are_substituted():
    program = make_program([0, 1, 0], [[1, 0, 0], [1, 0, -1]], [2, 0], [("free", 1), ("soc", 2)])
    solution = solve(program)
    assert solution.is_optimal
    np.testing.assert_allclose(solution.x, [2.0, 2.0, 2.0], atol=1e-7)


def test_iteration_limit_is_a_status():
    rng = np.random.default_rng(7)
    program, _, _ = _random_socp(rng)
    solution = solve(program, SolverOptions(max_iter=1))
    assert solution.status == SolverStatus.MAX_ITER


def test_kkt_residuals_of_hand_built_pair():
    program = soc3_program()
    pair = ConicSolution(x=np.array([5.0, 3.0, 4.0]), y=np.array([0.6, 0.8]), s=np.array([1.0, -0.6, -0.8]),
                         status=SolverStatus.OPTIMAL, residuals=Residuals(0, 0, 0))
    res = kkt_residuals(program, pair)
    assert res.primal <= 1e-12 and res.dual <= 1e-12 and res.gap <= 1e-12

    pair.x = np.array([5.0, 3.001, 4.0])
    assert kkt_residuals(program, pair).primal == pytest.approx(1e-3)

    zero = ConicSolution(x=np.zeros(3), y=np.zeros(2), s=np.zeros(3), status=SolverStatus.OPTIMAL,
                         residuals=Residuals(0, 0, 0))
    assert kkt_residuals(program, zero).primal == pytest.approx(4.0)


def test_dump_and_load_reproduce_program():
    rng = np.random.default_rng(3)
    program, _, _ = _random_socp(rng)
    buffer = io.StringIO()
    dump_program(program, buffer)
    buffer.seek(0)
    loaded = load_program(buffer)
    np.testing.assert_array_equal(loaded.c, program.c)
    np.testing.assert_array_equal(loaded.b, program.b)
    np.testing.assert_array_equal(loaded.A.toarray(), program.A.toarray())
    assert loaded.cones == program.cones
    assert solve(loaded).objective == pytest.approx(solve(program).objective, abs=1e-12)


def test_malformed_dump_is_rejected():
    from app.core.exceptions import ConicSolverError
    with pytest.raises(ConicSolverError):
        load_program(io.StringIO("dims 1 1\ncones soc:1\n"))
    with pytest.raises(ConicSolverError):
        load_program(io.StringIO("cones free:1\n"))


def test_cone_block_minimum_dimensions():
    with pytest.raises(ValueError):
        ConeBlock(ConeKind.SOC, 1)
    with pytest.raises(ValueError):
        ConeBlock(ConeKind.RSOC, 2)


def test_rotation_is_an_involution():
    heads, blocks = rotate_blocks([("free", 1), ("rsoc", 3)])
    assert blocks == [("free", 1), ("soc", 3)]
    v = np.array([0.3, 1.0, 2.0, 5.0])
    np.testing.assert_allclose(apply_rotation(apply_rotation(v, heads), heads), v)


def test_cone_layout_identity_and_step():
    layout = ConeLayout.from_blocks([("free", 1), ("nonneg", 2), ("soc", 3)])
    e = layout.identity()
    assert layout.degree == 3
    assert layout.is_interior(e)
    step = layout.max_step(e, -np.ones(6))
    assert step == pytest.approx(1.0 / (1.0 + np.sqrt(2.0)))
    # the nonnegative part never binds along +1; the cone boundary is at 1 + sqrt(2)
    assert layout.max_step(e, np.ones(6)) == pytest.approx(1.0 + np.sqrt(2.0))
    assert layout.max_step(e, np.array([0.0, 1.0, 1.0, 1.0, 0.0, 0.0])) == np.inf
