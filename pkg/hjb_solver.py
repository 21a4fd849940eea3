"""
Backward theta-scheme for the adjoint (HJB) equation

    v_t + a v_EE - tau v_E - r v + f = 0,    v(T, E) = 0,

written in divergence form with drift b = -tau and reaction c = r - tau_E.
tau_E is the net edge drift out of each dual cell, with zero drift on the
two outer edges, so the assembled operator is the transpose of the
Kolmogorov operator plus r l on the diagonal and the zero-flux rows reduce
to the reflecting condition v_E = 0.
Time runs from t_0 = T down to t_K = 0. G = diag(-l_i / dt_k) is positive
because every dt_k is negative; the code carries |dt| throughout.
"""
import numpy as np

from fitted_fvm import (
    assemble_operator, check_theta, is_m_matrix, solve_tridiagonal,
    theta_step_system,
)
from grid import Field, GridError, check_finite
from logger import get_logger
from model import adjoint_source, prices_on

logger = get_logger(__name__)


def reaction_from_edges(tau_edges, grid, r):
    """c_i = r - (tau_{i+1/2} - tau_{i-1/2}) / l_i with tau = 0 on the outer edges"""
    tau_edges = np.asarray(tau_edges, dtype=float)
    closed = np.concatenate(([0.0], tau_edges, [0.0]))
    return r - np.diff(closed) / grid.cell_widths


def edges_from_nodes(tau_nodes):
    """Average adjacent node values onto the interior edges"""
    tau_nodes = np.asarray(tau_nodes, dtype=float)
    return 0.5 * (tau_nodes[..., :-1] + tau_nodes[..., 1:])


def hjb_operator(tau_edges, grid, params):
    """D with b = -tau at the edges and c = r - tau_E on the dual cells"""
    return assemble_operator(
        drift_edges=-np.asarray(tau_edges, dtype=float),
        reaction_nodes=reaction_from_edges(tau_edges, grid, params.r),
        a=params.diffusion,
        grid=grid,
    )


def hjb_step(v_prev, m_at, tau_at, S_at, theta, dt, grid, params,
             tau_edges_at=None, source=adjoint_source, tally=None, level=None):
    """
    Advance v one step backward in time

    Args:
        v_prev: v at level k (the later time)
        m_at: (m^k, m^{k+1}) node vectors
        tau_at: (tau^k, tau^{k+1}) node vectors
        S_at: (S^k, S^{k+1}) permit prices
        theta: Splitting parameter in [1/2, 1]
        dt: t_{k+1} - t_k, negative
        grid: SpaceGrid
        params: ModelParams
        tau_edges_at: (tau^k, tau^{k+1}) on edges; averaged from nodes if omitted
        source: f(E, tau, m, S, params), adjoint_source by default
        tally: Optional RunDiagnostics collecting M-matrix checks
        level: Index k+1 used in diagnostics

    Returns:
        v at level k+1
    """
    check_theta(theta)
    if not dt < 0:
        raise ValueError(f"HJB steps march backward in time, dt must be negative, got {dt}")

    if tau_edges_at is None:
        tau_edges_at = (edges_from_nodes(tau_at[0]), edges_from_nodes(tau_at[1]))

    E = grid.nodes
    l = grid.cell_widths
    time_weight = l / abs(dt)

    explicit = hjb_operator(tau_edges_at[0], grid, params)
    implicit = hjb_operator(tau_edges_at[1], grid, params)

    f_known = source(E, tau_at[0], m_at[0], S_at[0], params)
    f_new = source(E, tau_at[1], m_at[1], S_at[1], params)
    forcing = (theta * f_new + (1.0 - theta) * f_known) * l

    if tally is not None:
        tally.record(is_m_matrix(implicit, time_weight, theta), 'hjb', level)

    system = theta_step_system(implicit, explicit, time_weight, theta, v_prev, source=forcing)
    v_next = solve_tridiagonal(system, 'v', level)
    check_finite(v_next, 'v', level)
    return v_next


def solve_hjb(m_field, tau_field, schedule, params, theta=0.5, tau_edges=None,
              source=adjoint_source, tally=None, terminal=None):
    """
    March the adjoint equation from t = T down to t = 0

    Args:
        m_field: Density Field
        tau_field: Control Field on the same grids
        schedule: Permit price schedule
        params: ModelParams
        theta: Splitting parameter
        tau_edges: Optional (K+1) x N array of edge controls
        source: Source term, adjoint_source by default
        tally: Optional RunDiagnostics
        terminal: v at t = T, zero by default

    Returns:
        Field of v values
    """
    if not m_field.shares_grids(tau_field):
        raise GridError("density and control fields must live on the same grids")

    grid, times = tau_field.space, tau_field.time
    prices = prices_on(schedule, times)
    m = m_field.values
    tau = tau_field.values

    values = np.zeros_like(tau)
    if terminal is not None:
        values[0] = terminal

    for k in range(times.n_steps):
        edges_at = None if tau_edges is None else (tau_edges[k], tau_edges[k + 1])
        values[k + 1] = hjb_step(
            v_prev=values[k],
            m_at=(m[k], m[k + 1]),
            tau_at=(tau[k], tau[k + 1]),
            S_at=(prices[k], prices[k + 1]),
            theta=theta,
            dt=times.steps[k],
            grid=grid,
            params=params,
            tau_edges_at=edges_at,
            source=source,
            tally=tally,
            level=k + 1,
        )

    logger.debug(f"HJB solve done: max|v| = {np.abs(values).max():.6g}")
    return Field(values=values, quantity='v', space=grid, time=times)
