"""
Tests for the space/time meshes and the Field container
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from grid import (
    Field, GridError, NonFiniteFieldError, build_space_grid, build_time_grid, check_finite,
)


def test_space_grid_n4_on_unit_interval():
    grid = build_space_grid(4, 0.0, 1.0)
    assert_allclose(grid.nodes, [0, 0.25, 0.5, 0.75, 1.0])
    assert_allclose(grid.edges, [0, 0.125, 0.375, 0.625, 0.875, 1.0])
    assert_allclose(grid.cell_widths, [0.125, 0.25, 0.25, 0.25, 0.125])
    assert_allclose(grid.steps, np.full(4, 0.25))


def test_space_grid_example_domain():
    grid = build_space_grid(64, 1.0, 5.0)
    assert len(grid.nodes) == 65
    assert len(grid.edges) == 66
    assert grid.nodes[0] == 1.0 and grid.nodes[-1] == 5.0
    assert_allclose(grid.cell_widths.sum(), 4.0, rtol=0, atol=1e-13)
    assert_allclose(grid.cell_widths[0], 0.5 * 4.0 / 64)


def test_space_grid_minimum_size():
    grid = build_space_grid(2, 1.0, 5.0)
    assert_allclose(grid.nodes, [1, 3, 5])
    assert_allclose(grid.cell_widths, [1, 2, 1])


@pytest.mark.parametrize('n_cells', [0, 1, 2.5])
def test_space_grid_rejects_small_or_fractional_n(n_cells):
    with pytest.raises(GridError):
        build_space_grid(n_cells, 0.0, 1.0)


def test_space_grid_rejects_inverted_bounds():
    with pytest.raises(GridError):
        build_space_grid(4, 2.0, 2.0)


def test_space_grid_arrays_are_read_only():
    grid = build_space_grid(4, 0.0, 1.0)
    with pytest.raises(ValueError):
        grid.nodes[0] = 3.0


def test_time_grid_single_step():
    times = build_time_grid(1, 1.0)
    assert_allclose(times.levels, [1.0, 0.0])
    assert_allclose(times.steps, [-1.0])
    assert times.n_steps == 1
    assert times.horizon == 1.0


def test_time_grid_is_strictly_decreasing():
    times = build_time_grid(64, 1.0)
    assert times.levels[0] == 1.0 and times.levels[-1] == 0.0
    assert np.all(np.diff(times.levels) < 0)
    assert np.all(times.steps < 0)
    assert_allclose(times.steps.sum(), -1.0)


@pytest.mark.parametrize('n_steps, horizon', [(0, 1.0), (4, 0.0), (4, -1.0)])
def test_time_grid_rejects_bad_input(n_steps, horizon):
    with pytest.raises(GridError):
        build_time_grid(n_steps, horizon)


def test_field_shape_is_checked():
    space = build_space_grid(4, 0.0, 1.0)
    times = build_time_grid(2, 1.0)
    Field.filled('m', space, times, 1.0)
    with pytest.raises(GridError):
        Field(values=np.zeros((2, 5)), quantity='m', space=space, time=times)


def test_field_rejects_nan_with_location():
    space = build_space_grid(4, 0.0, 1.0)
    times = build_time_grid(2, 1.0)
    values = np.zeros((3, 5))
    values[1, 3] = np.nan
    with pytest.raises(NonFiniteFieldError) as info:
        Field(values=values, quantity='v', space=space, time=times)
    assert info.value.quantity == 'v'
    assert info.value.level == 1
    assert info.value.node == 3


def test_check_finite_on_vector():
    with pytest.raises(NonFiniteFieldError) as info:
        check_finite(np.array([0.0, np.inf]), 'm')
    assert info.value.node == 1
    assert info.value.level is None


def test_shares_grids():
    space = build_space_grid(4, 0.0, 1.0)
    times = build_time_grid(2, 1.0)
    a = Field.filled('m', space, times)
    b = Field.filled('tau', space, times)
    c = Field.filled('tau', build_space_grid(8, 0.0, 1.0), times)
    assert a.shares_grids(b)
    assert not a.shares_grids(c)
