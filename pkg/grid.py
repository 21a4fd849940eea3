"""
Space and time meshes for the fitted finite volume discretization, plus the
Field container shared by the density, value and control solvers
"""
from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Raised for degenerate or inconsistent meshes"""


class NonFiniteFieldError(ValueError):
    """Raised when a field holds NaN or Inf"""

    def __init__(self, quantity, level, node):
        self.quantity = quantity
        self.level = level
        self.node = node
        super().__init__(
            f"non-finite value in field '{quantity}' at time level {level}, node {node}"
        )


@dataclass(frozen=True)
class SpaceGrid:
    """
    Primal nodes E_0..E_N and the dual control volumes around them.

    edges has N+2 entries: E_min, the N interior midpoints, E_max.
    Boundary nodes own half-width cells.
    """
    nodes: np.ndarray
    edges: np.ndarray
    cell_widths: np.ndarray
    steps: np.ndarray

    @property
    def n_cells(self):
        return len(self.nodes) - 1

    @property
    def e_min(self):
        return float(self.nodes[0])

    @property
    def e_max(self):
        return float(self.nodes[-1])


@dataclass(frozen=True)
class TimeGrid:
    """Decreasing partition T = t_0 > t_1 > ... > t_K = 0 with steps dt_k < 0"""
    levels: np.ndarray
    steps: np.ndarray

    @property
    def n_steps(self):
        return len(self.levels) - 1

    @property
    def horizon(self):
        return float(self.levels[0])


def build_space_grid(n_cells, e_min, e_max):
    """
    Build a uniform primal/dual mesh on [e_min, e_max]

    Args:
        n_cells: Number of sub-intervals N (at least 2)
        e_min: Lower emission bound
        e_max: Upper emission bound

    Returns:
        SpaceGrid with N+1 nodes
    """
    if int(n_cells) != n_cells or n_cells < 2:
        raise GridError(f"space grid needs N >= 2 sub-intervals, got {n_cells}")
    if not e_min < e_max:
        raise GridError(f"E_min must be below E_max, got [{e_min}, {e_max}]")

    n_cells = int(n_cells)
    nodes = np.linspace(e_min, e_max, n_cells + 1)
    nodes[0], nodes[-1] = e_min, e_max

    edges = np.empty(n_cells + 2)
    edges[0] = e_min
    edges[1:-1] = 0.5 * (nodes[:-1] + nodes[1:])
    edges[-1] = e_max

    cell_widths = np.diff(edges)
    steps = np.diff(nodes)
    for arr in (nodes, edges, cell_widths, steps):
        arr.setflags(write=False)
    return SpaceGrid(nodes=nodes, edges=edges, cell_widths=cell_widths, steps=steps)


def build_time_grid(n_steps, horizon):
    """
    Build the uniform decreasing time partition from T down to 0

    Args:
        n_steps: Number of steps K (at least 1)
        horizon: Final time T > 0

    Returns:
        TimeGrid with K+1 levels, levels[0] = T and levels[K] = 0
    """
    if int(n_steps) != n_steps or n_steps < 1:
        raise GridError(f"time grid needs K >= 1 steps, got {n_steps}")
    if not horizon > 0:
        raise GridError(f"horizon T must be positive, got {horizon}")

    n_steps = int(n_steps)
    levels = horizon * (1.0 - np.arange(n_steps + 1) / n_steps)
    levels[0], levels[-1] = horizon, 0.0
    steps = np.full(n_steps, -horizon / n_steps)
    levels.setflags(write=False)
    steps.setflags(write=False)
    return TimeGrid(levels=levels, steps=steps)


@dataclass
class Field:
    """
    Samples of m, v or tau on the (time level x node) lattice.

    Row k holds time t_k, so row 0 is t = T and row K is t = 0.
    """
    values: np.ndarray
    quantity: str
    space: SpaceGrid = field(repr=False)
    time: TimeGrid = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.time.n_steps + 1, self.space.n_cells + 1)
        if self.values.shape != expected:
            raise GridError(
                f"field '{self.quantity}' has shape {self.values.shape}, grids require {expected}"
            )
        check_finite(self.values, self.quantity)

    @classmethod
    def filled(cls, quantity, space, time, value=0.0):
        values = np.full((time.n_steps + 1, space.n_cells + 1), float(value))
        return cls(values=values, quantity=quantity, space=space, time=time)

    def at_level(self, k):
        return self.values[k]

    def shares_grids(self, other):
        return (
            np.array_equal(self.space.nodes, other.space.nodes)
            and np.array_equal(self.time.levels, other.time.levels)
        )


def check_finite(values, quantity, level=None):
    """
    Raise NonFiniteFieldError at the first NaN/Inf of a 1-D or 2-D array.

    For a 1-D array `level` names the time level it belongs to.
    """
    values = np.asarray(values)
    bad = ~np.isfinite(values)
    if bad.any():
        location = np.argwhere(bad)[0]
        if values.ndim == 1:
            raise NonFiniteFieldError(quantity, level, int(location[0]))
        raise NonFiniteFieldError(quantity, int(location[0]), int(location[1]))
