"""
Forward theta-scheme for the Kolmogorov (Fokker-Planck) equation

    m_t - (a m_E + tau m)_E = 0,    m(0, E) = m_0,

assembled by the same fitted operator with drift tau and zero reaction.
With the zero-flux closure the operator's column sums vanish, so the
cell-weighted mass is conserved step by step.
"""
import numpy as np

from fitted_fvm import (
    assemble_operator, check_theta, is_m_matrix, solve_tridiagonal, theta_step_system,
)
from grid import Field, NonFiniteFieldError, check_finite
from hjb_solver import edges_from_nodes
from logger import get_logger

logger = get_logger(__name__)

NEGATIVE_TOLERANCE = 1e-12
MASS_TOLERANCE = 1e-10


def total_mass(m, grid):
    """Cell-weighted sum of l_i * m_i"""
    return float(np.dot(grid.cell_widths, m))


def kfp_operator(tau_nodes, tau_edges, grid, params, closure='zero_flux'):
    """D-bar with b = tau at the edges and c = 0"""
    tau_nodes = np.asarray(tau_nodes, dtype=float)
    return assemble_operator(
        drift_edges=np.asarray(tau_edges, dtype=float),
        reaction_nodes=np.zeros_like(tau_nodes),
        a=params.diffusion,
        grid=grid,
        closure=closure,
        boundary_drift=(tau_nodes[0], tau_nodes[-1]),
    )


def kfp_step(m_earlier, tau_at, theta, dt, grid, params, tau_edges_at=None,
             closure='zero_flux', tally=None, level=None):
    """
    Advance the density one step forward in time

    Args:
        m_earlier: Density at the earlier time
        tau_at: (tau at the earlier time, tau at the later time)
        theta: Splitting parameter in [1/2, 1]
        dt: Time step; only |dt| is used
        grid: SpaceGrid
        params: ModelParams
        tau_edges_at: Edge controls in the same order; averaged if omitted
        closure: 'zero_flux' or 'neumann'
        tally: Optional RunDiagnostics
        level: Index of the level being computed, for diagnostics

    Returns:
        Density at the later time
    """
    check_theta(theta)
    if dt == 0:
        raise ValueError("time step must be non-zero")

    m_earlier = np.asarray(m_earlier, dtype=float)
    if m_earlier.min() < -NEGATIVE_TOLERANCE:
        logger.warning(f"KFP step {level}: incoming density dips to {m_earlier.min():.3e}")

    if tau_edges_at is None:
        tau_edges_at = (edges_from_nodes(tau_at[0]), edges_from_nodes(tau_at[1]))

    time_weight = grid.cell_widths / abs(dt)
    explicit = kfp_operator(tau_at[0], tau_edges_at[0], grid, params, closure)
    implicit = kfp_operator(tau_at[1], tau_edges_at[1], grid, params, closure)

    if tally is not None:
        tally.record(is_m_matrix(implicit, time_weight, theta), 'kfp', level)

    system = theta_step_system(implicit, explicit, time_weight, theta, m_earlier)
    m_later = solve_tridiagonal(system, 'm', level)
    check_finite(m_later, 'm', level)

    if m_later.min() < -NEGATIVE_TOLERANCE:
        m_later = _clip_undershoot(m_later, grid, level)
        if tally is not None:
            tally.clip_events += 1

    return m_later


def _clip_undershoot(m, grid, level):
    """Zero the negative entries and rescale to the mass held before clipping"""
    node = int(np.argmin(m))
    logger.warning(
        f"KFP step {level}: clipping undershoot {m[node]:.3e} at node {node} and renormalizing"
    )
    mass = total_mass(m, grid)
    clipped = np.clip(m, 0.0, None)
    remaining = total_mass(clipped, grid)
    if not (mass > 0 and remaining > 0 and np.isfinite(mass / remaining)):
        logger.error(
            f"KFP step {level}: cannot renormalize, mass {mass:.3e} before and "
            f"{remaining:.3e} after clipping"
        )
        raise NonFiniteFieldError('m', level, node)
    return clipped * (mass / remaining)


def solve_kfp(tau_field, m0, params, theta=0.5, tau_edges=None, closure='zero_flux',
              tally=None):
    """
    March the density from t = 0 (row K) up to t = T (row 0)

    Args:
        tau_field: Control Field
        m0: Initial density with unit mass
        params: ModelParams
        theta: Splitting parameter
        tau_edges: Optional (K+1) x N array of edge controls
        closure: 'zero_flux' or 'neumann'
        tally: Optional RunDiagnostics

    Returns:
        Field of m values
    """
    grid, times = tau_field.space, tau_field.time
    m0 = np.asarray(m0, dtype=float)
    if abs(total_mass(m0, grid) - 1.0) > 1e-8:
        raise ValueError(f"initial density must have unit mass, got {total_mass(m0, grid)}")

    tau = tau_field.values
    K = times.n_steps
    values = np.empty_like(tau)
    values[K] = m0
    drift = 0.0

    for k in range(K - 1, -1, -1):
        edges_at = None if tau_edges is None else (tau_edges[k + 1], tau_edges[k])
        values[k] = kfp_step(
            m_earlier=values[k + 1],
            tau_at=(tau[k + 1], tau[k]),
            theta=theta,
            dt=times.steps[k],
            grid=grid,
            params=params,
            tau_edges_at=edges_at,
            closure=closure,
            tally=tally,
            level=k,
        )
        drift = max(drift, abs(total_mass(values[k], grid) - 1.0))

    if drift > MASS_TOLERANCE:
        if closure == 'zero_flux':
            logger.warning(f"KFP mass drift {drift:.3e} exceeds {MASS_TOLERANCE:.0e}")
        else:
            logger.info(f"KFP mass drift under {closure} closure: {drift:.3e}")
    if tally is not None:
        tally.max_mass_drift = max(tally.max_mass_drift, drift)

    return Field(values=values, quantity='m', space=grid, time=times)
