"""
Tests for the fixed-point coupling of density, value and control
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import coupling
from coupling import (
    STATUS_CONVERGED, STATUS_MAX_ITER, STATUS_NON_FINITE, SolverConfig, drift_from_value,
    edge_drift_from_value, iteration_error, solve_equilibrium,
)
from grid import Field, NonFiniteFieldError, build_space_grid, build_time_grid
from model import ConstantPrice, ModelParams, RampPrice, Tent, TruncatedNormal
from validation import adjacent_difference_sign_changes


@pytest.fixture
def params():
    return ModelParams()


def test_drift_from_constant_and_linear_value():
    grid = build_space_grid(16, 1.0, 5.0)
    assert_allclose(drift_from_value(np.full(17, 3.0), grid), 0.0, atol=1e-14)
    assert_allclose(drift_from_value(grid.nodes.copy(), grid), -1.0, rtol=1e-12)
    assert_allclose(edge_drift_from_value(grid.nodes.copy(), grid), -1.0, rtol=1e-12)


def test_drift_from_quadratic_value():
    grid = build_space_grid(128, 1.0, 5.0)
    tau = drift_from_value(grid.nodes ** 2, grid)
    assert_allclose(tau, -2.0 * grid.nodes, atol=1e-3)


def test_drift_from_value_applies_per_level():
    grid = build_space_grid(8, 1.0, 5.0)
    v = np.vstack([grid.nodes, 2.0 * grid.nodes])
    assert_allclose(drift_from_value(v, grid), [[-1.0] * 9, [-2.0] * 9], rtol=1e-12)


def test_iteration_error_examples():
    space = build_space_grid(8, 1.0, 5.0)
    times = build_time_grid(4, 1.0)
    base = Field.filled('tau', space, times, 0.2)
    assert iteration_error(base, base) == 0.0

    bumped = base.values.copy()
    bumped[2, 5] += 0.3
    assert iteration_error(base, bumped) == pytest.approx(0.3)
    assert iteration_error(base, base.values + 0.1) == pytest.approx(0.1)

    with pytest.raises(ValueError):
        iteration_error(base, np.zeros((4, 9)))


@pytest.mark.parametrize('kwargs', [
    {'tol': 0.0},
    {'theta': 0.4},
    {'relaxation': 0.0},
    {'relaxation': 1.5},
    {'max_iter': 0},
    {'boundary': 'dirichlet'},
    {'tau_bounds': (1.0, -1.0)},
])
def test_solver_config_invariants(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_with_size_keeps_other_settings():
    config = SolverConfig(theta=1.0, tol=1e-8).with_size(32, 16)
    assert (config.N, config.K, config.theta, config.tol) == (32, 16, 1.0, 1e-8)


def test_example_one_converges(params):
    solution = solve_equilibrium(SolverConfig(), params, ConstantPrice(0.2), TruncatedNormal())

    assert solution.status == STATUS_CONVERGED
    assert solution.converged
    assert solution.iterations <= 100
    assert solution.errors[-1] <= 1e-6
    assert len(solution.errors) == solution.iterations

    # the tail of the trace decreases
    tail = solution.errors[2:]
    assert all(later < earlier for earlier, later in zip(tail, tail[1:]))

    for field in (solution.m, solution.v, solution.tau):
        assert field.shares_grids(solution.m)

    tally = solution.diagnostics
    assert tally.pass_rate >= 0.95
    assert tally.max_mass_drift <= 1e-10
    masses = solution.m.values @ solution.m.space.cell_widths
    assert np.max(np.abs(masses - 1.0)) <= 1e-10

    # the population spreads over the horizon
    assert solution.m.values[0].max() < solution.m.values[-1].max()
    assert_allclose(solution.v.values[0], 0.0)


def test_example_two_has_no_kink_oscillation(params):
    solution = solve_equilibrium(SolverConfig(), params, RampPrice(), Tent(peak=2.0))
    assert solution.converged
    m_T = solution.m.values[0]
    assert adjacent_difference_sign_changes(m_T, solution.m.space, around=2.0, width=0.5) <= 1


def test_runs_are_bit_identical(params):
    config = SolverConfig(N=16, K=16)
    first = solve_equilibrium(config, params, ConstantPrice(0.2), TruncatedNormal())
    second = solve_equilibrium(config, params, ConstantPrice(0.2), TruncatedNormal())
    assert_array_equal(first.m.values, second.m.values)
    assert_array_equal(first.v.values, second.v.values)
    assert_array_equal(first.tau.values, second.tau.values)
    assert first.errors == second.errors


def test_damped_fixed_point_is_undamped_fixed_point(params):
    omega = 0.7
    config = SolverConfig(N=16, K=16, relaxation=omega, tol=1e-8)
    solution = solve_equilibrium(config, params, ConstantPrice(0.2), TruncatedNormal())
    assert solution.converged
    target = drift_from_value(solution.v.values, solution.v.space)
    assert iteration_error(solution.tau, target) <= config.tol / omega


def test_no_congestion_decouples_density():
    params = ModelParams(c2=0.0)
    config = SolverConfig(N=16, K=16)
    normal = solve_equilibrium(config, params, ConstantPrice(0.2), TruncatedNormal())
    tent = solve_equilibrium(config, params, ConstantPrice(0.2), Tent(peak=2.0))
    assert normal.converged and tent.converged
    assert normal.errors == tent.errors
    assert_array_equal(normal.v.values, tent.v.values)
    assert_array_equal(normal.tau.values, tent.tau.values)
    assert not np.allclose(normal.m.values, tent.m.values)


def test_max_iter_failure_keeps_trace(params):
    config = SolverConfig(N=8, K=8, max_iter=1, tol=1e-14)
    solution = solve_equilibrium(config, params, ConstantPrice(0.2), TruncatedNormal())
    assert solution.status == STATUS_MAX_ITER
    assert not solution.converged
    assert solution.iterations == 1
    assert solution.errors[-1] > config.tol
    assert 'no convergence' in solution.message
    assert solution.tau is not None


def test_tau_bounds_clip_the_control(params):
    config = SolverConfig(N=16, K=16, tau_bounds=(-0.1, 0.1), max_iter=20)
    solution = solve_equilibrium(config, params, ConstantPrice(2.0), TruncatedNormal())
    assert solution.tau.values.max() <= 0.1
    assert solution.tau.values.min() >= -0.1


def test_non_finite_field_reported(params, monkeypatch):
    def broken(*args, **kwargs):
        raise NonFiniteFieldError('v', 3, 7)

    monkeypatch.setattr(coupling, 'solve_hjb', broken)
    solution = solve_equilibrium(SolverConfig(N=8, K=8), params, ConstantPrice(0.2), TruncatedNormal())
    assert solution.status == STATUS_NON_FINITE
    assert 'level 3' in solution.message and 'node 7' in solution.message
    assert solution.tau is None
    assert solution.errors == []


def test_overflowing_control_ends_as_non_finite_with_trace():
    # revenue scaled by 1/c1 makes tau^2 overflow once the first control is applied
    params = ModelParams(c1=1e-155, c2=0.0)
    solution = solve_equilibrium(SolverConfig(N=16, K=16), params, ConstantPrice(0.2), TruncatedNormal())
    assert solution.status == STATUS_NON_FINITE
    assert not solution.converged
    assert len(solution.errors) == 1
    assert np.isfinite(solution.errors[0]) and solution.errors[0] > 1e100
    assert solution.message.startswith('iteration 1:')
    assert 'time level' in solution.message and 'node' in solution.message
    assert solution.tau is None
    assert solution.v is not None


def test_initial_control_field(params):
    config = SolverConfig(N=8, K=4, initial_tau=np.zeros((3, 9)))
    with pytest.raises(ValueError):
        solve_equilibrium(config, params, ConstantPrice(0.2), TruncatedNormal())
