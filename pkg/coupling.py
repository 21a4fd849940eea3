"""
Fixed-point coupling of the density, adjoint and control fields.

Each sweep solves the Kolmogorov equation with the current control, the
adjoint equation with the resulting density, then moves the control toward
tau = -dv/dE, stopping when the largest change falls below the tolerance.
"""
import time
from dataclasses import dataclass, field, replace

import numpy as np

from fitted_fvm import CLOSURES, RunDiagnostics, SingularSystemError, check_theta
from grid import Field, NonFiniteFieldError, build_space_grid, build_time_grid
from hjb_solver import edges_from_nodes, solve_hjb
from kfp_solver import solve_kfp
from logger import get_logger
from model import initial_density

logger = get_logger(__name__)

STATUS_CONVERGED = 'converged'
STATUS_MAX_ITER = 'max_iter'
STATUS_NON_FINITE = 'non_finite'
STATUS_SINGULAR = 'singular'


@dataclass(frozen=True)
class SolverConfig:
    """Discretization and iteration settings"""
    N: int = 64
    K: int = 64
    theta: float = 0.5
    tol: float = 1e-6
    max_iter: int = 100
    relaxation: float = 1.0
    initial_tau: object = 0.0
    tau_bounds: tuple = None
    boundary: str = 'zero_flux'

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        check_theta(self.theta)
        if not 0 < self.relaxation <= 1:
            raise ValueError(f"relaxation must lie in (0, 1], got {self.relaxation}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter}")
        if self.boundary not in CLOSURES:
            raise ValueError(f"boundary must be one of {CLOSURES}, got '{self.boundary}'")
        if self.tau_bounds is not None:
            low, high = self.tau_bounds
            if not low < high:
                raise ValueError(f"tau bounds must satisfy low < high, got {self.tau_bounds}")

    def with_size(self, N, K):
        return replace(self, N=N, K=K)


@dataclass
class EquilibriumSolution:
    """Fields of the last sweep, the iteration trace and run diagnostics"""
    m: Field
    v: Field
    tau: Field
    errors: list
    status: str
    diagnostics: RunDiagnostics = field(default_factory=RunDiagnostics)
    message: str = ''
    wall_time: float = 0.0
    tau_edges: np.ndarray = None

    @property
    def iterations(self):
        return len(self.errors)

    @property
    def converged(self):
        return self.status == STATUS_CONVERGED


def drift_from_value(v, grid):
    """tau_i = -dv/dE at the nodes, second order everywhere including the ends"""
    return -np.gradient(np.asarray(v, dtype=float), grid.nodes, edge_order=2, axis=-1)


def edge_drift_from_value(v, grid):
    """tau on the interior edges from the differences -(v_{i+1} - v_i) / h_i"""
    return -np.diff(np.asarray(v, dtype=float), axis=-1) / grid.steps


def iteration_error(tau_old, tau_new):
    """Largest absolute change of tau over all levels and nodes"""
    old = tau_old.values if isinstance(tau_old, Field) else np.asarray(tau_old)
    new = tau_new.values if isinstance(tau_new, Field) else np.asarray(tau_new)
    if old.shape != new.shape:
        raise ValueError(f"control fields differ in shape: {old.shape} vs {new.shape}")
    return float(np.max(np.abs(new - old)))


def _initial_control(config, space, times):
    shape = (times.n_steps + 1, space.n_cells + 1)
    guess = np.asarray(config.initial_tau, dtype=float)
    if guess.ndim == 0:
        nodes = np.full(shape, float(guess))
    elif guess.shape == shape:
        nodes = guess.copy()
    else:
        raise ValueError(f"initial tau must be a scalar or shape {shape}, got {guess.shape}")
    return nodes, edges_from_nodes(nodes)


def solve_equilibrium(config, params, schedule, m0_kind):
    """
    Compute the mean field equilibrium (m, v, tau)

    Args:
        config: SolverConfig
        params: ModelParams
        schedule: Permit price schedule
        m0_kind: Initial density description

    Returns:
        EquilibriumSolution; failures are reported through its status
    """
    started = time.perf_counter()
    schedule.validate(params.T)
    space = build_space_grid(config.N, params.E_min, params.E_max)
    times = build_time_grid(config.K, params.T)
    m0 = initial_density(m0_kind, space)

    tau_nodes, tau_edges = _initial_control(config, space, times)
    omega = config.relaxation
    tally = RunDiagnostics()
    errors = []
    m_field = v_field = None
    status, message = STATUS_MAX_ITER, ''

    logger.info(
        f"Solving equilibrium: N={config.N}, K={config.K}, theta={config.theta}, "
        f"tol={config.tol:g}, relaxation={omega}"
    )

    for n in range(config.max_iter):
        try:
            tau_field = Field(values=tau_nodes, quantity='tau', space=space, time=times)
            m_field = solve_kfp(
                tau_field, m0, params, config.theta, tau_edges=tau_edges,
                closure=config.boundary, tally=tally,
            )
            v_field = solve_hjb(
                m_field, tau_field, schedule, params, config.theta,
                tau_edges=tau_edges, tally=tally,
            )
        except NonFiniteFieldError as e:
            status, message = STATUS_NON_FINITE, f"iteration {n}: {e}"
            logger.error(message)
            break
        except SingularSystemError as e:
            status, message = STATUS_SINGULAR, f"iteration {n}: {e}"
            logger.error(message)
            break

        new_nodes = (1.0 - omega) * tau_nodes + omega * drift_from_value(v_field.values, space)
        new_edges = (1.0 - omega) * tau_edges + omega * edge_drift_from_value(v_field.values, space)
        if config.tau_bounds is not None:
            new_nodes = np.clip(new_nodes, *config.tau_bounds)
            new_edges = np.clip(new_edges, *config.tau_bounds)

        epsilon = iteration_error(tau_nodes, new_nodes)
        errors.append(epsilon)
        tau_nodes, tau_edges = new_nodes, new_edges
        logger.info(f"Iteration {n}: epsilon = {epsilon:.3e}")

        if not np.isfinite(epsilon):
            status, message = STATUS_NON_FINITE, f"iteration {n}: non-finite control update"
            logger.error(message)
            break
        if epsilon <= config.tol:
            status = STATUS_CONVERGED
            break
    else:
        message = f"no convergence after {config.max_iter} iterations (last epsilon {errors[-1]:.3e})"
        logger.warning(message)

    tau_out = None
    if status in (STATUS_CONVERGED, STATUS_MAX_ITER):
        tau_out = Field(values=tau_nodes, quantity='tau', space=space, time=times)

    solution = EquilibriumSolution(
        m=m_field,
        v=v_field,
        tau=tau_out,
        errors=errors,
        status=status,
        diagnostics=tally,
        message=message,
        wall_time=time.perf_counter() - started,
        tau_edges=tau_edges,
    )
    logger.info(
        f"Equilibrium {status} after {solution.iterations} iterations; "
        f"M-matrix pass rate {tally.pass_rate:.3f}, mass drift {tally.max_mass_drift:.2e}"
    )
    return solution
