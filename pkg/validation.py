"""
Independent checks of the equilibrium solver: Monte Carlo simulation of the
reflected emission process, mesh-refinement convergence studies, density
comparisons and the discounted population payoff
"""
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.integrate import trapezoid

from coupling import solve_equilibrium
from grid import Field, build_space_grid, build_time_grid
from hjb_solver import solve_hjb
from logger import get_logger
from model import ConstantPrice, initial_density, prices_on, running_payoff

logger = get_logger(__name__)

DEFAULT_BLOCK_SIZE = 8192


# Monte Carlo simulation of dE = -tau dt + sigma dW + reflection

@dataclass
class ParticleEnsemble:
    """Particle positions at t = T together with how they were produced"""
    positions: np.ndarray
    initial_positions: np.ndarray
    seed: int
    steps: int

    def __post_init__(self):
        if self.positions.size and not np.isfinite(self.positions).all():
            raise ValueError("particle positions must be finite")


def reflect(x, low, high):
    """Mirror positions back into [low, high] until none is left outside"""
    while True:
        below = x < low
        x[below] = 2.0 * low - x[below]
        above = x > high
        x[above] = 2.0 * high - x[above]
        if not (below.any() or above.any()):
            return x


def sample_initial_positions(m0, grid, count, rng):
    """Draw a dual cell with probability l_i m0_i, then a uniform point inside it"""
    weights = grid.cell_widths * np.clip(m0, 0.0, None)
    cells = rng.choice(len(weights), size=count, p=weights / weights.sum())
    low = grid.edges[cells]
    return low + rng.random(count) * (grid.edges[cells + 1] - low)


def _control_at(tau, nodes, k, share, positions):
    """Bilinear control: linear in time between levels k and k-1, linear in E"""
    row = (1.0 - share) * tau[k] + share * tau[k - 1]
    return np.interp(positions, nodes, row)


def _simulate_block(stream, count, tau_field, m0, params, substeps):
    grid, times = tau_field.space, tau_field.time
    rng = np.random.default_rng(stream)
    positions = sample_initial_positions(m0, grid, count, rng)
    initial = positions.copy()
    tau = tau_field.values
    low, high = params.E_min, params.E_max

    for k in range(times.n_steps, 0, -1):
        dt = abs(times.steps[k - 1]) / substeps
        noise_scale = params.sigma * np.sqrt(dt)
        for s in range(substeps):
            drift = -_control_at(tau, grid.nodes, k, s / substeps, positions)
            positions = positions + drift * dt + noise_scale * rng.standard_normal(count)
            reflect(positions, low, high)
            assert positions.min() >= low and positions.max() <= high
    return positions, initial


def simulate_ensemble(tau_field, params, n_particles, substeps_per_level=4, seed=0,
                      m0_kind=None, m0=None, block_size=DEFAULT_BLOCK_SIZE, n_jobs=1):
    """
    Euler-Maruyama paths of the reflected emission process from t = 0 to T

    Particles are split into fixed-size blocks, each with its own stream
    spawned from the seed, so results do not depend on n_jobs.

    Args:
        tau_field: Control Field from the PDE solver
        params: ModelParams
        n_particles: Number of particles (at least 1)
        substeps_per_level: Euler substeps per PDE time step
        seed: Root seed
        m0_kind: Initial density description; ignored when m0 is given
        m0: Optional initial density on the solver grid
        block_size: Particles per random stream
        n_jobs: joblib worker count

    Returns:
        ParticleEnsemble
    """
    if n_particles < 1:
        raise ValueError(f"need at least one particle, got {n_particles}")
    if substeps_per_level < 1:
        raise ValueError(f"need at least one substep per level, got {substeps_per_level}")
    if m0 is None:
        m0 = initial_density(m0_kind, tau_field.space)

    counts = [block_size] * (n_particles // block_size)
    if n_particles % block_size:
        counts.append(n_particles % block_size)
    streams = np.random.SeedSequence(seed).spawn(len(counts))

    blocks = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_simulate_block)(stream, count, tau_field, m0, params, substeps_per_level)
        for stream, count in zip(streams, counts)
    )
    return ParticleEnsemble(
        positions=np.concatenate([b[0] for b in blocks]),
        initial_positions=np.concatenate([b[1] for b in blocks]),
        seed=seed,
        steps=tau_field.time.n_steps * substeps_per_level,
    )


def empirical_density(positions, grid):
    """Histogram over the dual cells, normalized to unit cell-weighted mass"""
    counts, _ = np.histogram(positions, bins=grid.edges)
    return counts / (len(positions) * grid.cell_widths)


def simulate_particles(tau_field, params, n_particles, substeps_per_level=4, seed=0,
                       m0_kind=None, m0=None, block_size=DEFAULT_BLOCK_SIZE, n_jobs=1):
    """Empirical density at t = T of the simulated particles, on the solver grid"""
    ensemble = simulate_ensemble(
        tau_field, params, n_particles, substeps_per_level, seed,
        m0_kind=m0_kind, m0=m0, block_size=block_size, n_jobs=n_jobs,
    )
    return empirical_density(ensemble.positions, tau_field.space)


# Density comparisons

def l1_distance(d1, d2, grid):
    """sum_i l_i |d1_i - d2_i|"""
    d1, d2 = np.asarray(d1, dtype=float), np.asarray(d2, dtype=float)
    if d1.shape != d2.shape or d1.shape != grid.cell_widths.shape:
        raise ValueError(f"density shapes differ: {d1.shape}, {d2.shape}, grid {grid.cell_widths.shape}")
    return float(np.dot(grid.cell_widths, np.abs(d1 - d2)))


def low_emission_mass(m, grid, threshold=None):
    """Mass carried by nodes strictly below threshold, (E_min + E_max)/2 by default"""
    if threshold is None:
        threshold = 0.5 * (grid.e_min + grid.e_max)
    below = grid.nodes < threshold
    return float(np.dot(grid.cell_widths[below], np.asarray(m)[below]))


def density_moments(m, grid):
    """(mean, variance) of a node density"""
    weights = grid.cell_widths * np.asarray(m, dtype=float)
    mass = weights.sum()
    mean = np.dot(weights, grid.nodes) / mass
    variance = np.dot(weights, (grid.nodes - mean) ** 2) / mass
    return float(mean), float(variance)


def adjacent_difference_sign_changes(m, grid, around, width, floor=1e-10):
    """
    Count sign flips of consecutive differences m_{i+1} - m_i for nodes
    within `width` of `around`; differences below `floor` are ignored
    """
    window = np.abs(grid.nodes - around) <= width
    values = np.asarray(m, dtype=float)[window]
    diffs = np.diff(values)
    signs = np.sign(diffs[np.abs(diffs) > floor])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


# Discounted population payoff

def discounted_payoff(m_field, tau_field, schedule, params):
    """
    Trapezoid-in-time, cell-weighted-in-space quadrature of
    exp(-r t) * running_payoff(E, tau, m, S(t)) * m(t, E)
    """
    grid, times = m_field.space, m_field.time
    prices = prices_on(schedule, times)
    E = grid.nodes
    integrand = np.empty(times.n_steps + 1)
    for k, t in enumerate(times.levels):
        m = m_field.values[k]
        payoff = running_payoff(E, tau_field.values[k], m, prices[k], params)
        integrand[k] = np.exp(-params.r * t) * np.dot(grid.cell_widths, payoff * m)
    # levels run from T down to 0
    return float(trapezoid(integrand[::-1], times.levels[::-1]))


# Convergence studies

@dataclass
class ConvergenceLevel:
    n: int
    N: int
    h: float
    error: float
    converged: bool


@dataclass
class ConvergenceReport:
    """Errors of v(., 0) against a fine reference solve on nested dyadic grids"""
    levels: list
    fitted_order: float
    reference_level: int
    failures: list = field(default_factory=list)

    @property
    def complete(self):
        return not self.failures


def fit_order(h, errors):
    """Least-squares slope of log(error) against log(h)"""
    h, errors = np.asarray(h, dtype=float), np.asarray(errors, dtype=float)
    usable = errors > 0
    if usable.sum() < 2:
        return float('nan')
    slope, _ = np.polyfit(np.log(h[usable]), np.log(errors[usable]), 1)
    return float(slope)


def convergence_study(n_min, n_max, n_ref, config_base, params, schedule, m0_kind):
    """
    Refine N = K = 2^n for n in [n_min, n_max] and measure the discrete
    max-norm error of v at t = 0 over interior nodes against N = K = 2^n_ref

    Returns:
        ConvergenceReport; failed levels are listed in `failures`
    """
    if not n_min < n_max < n_ref:
        raise ValueError(f"need n_min < n_max < n_ref, got {n_min}, {n_max}, {n_ref}")

    logger.info(f"Reference solve at N = K = {2 ** n_ref}")
    reference = solve_equilibrium(
        config_base.with_size(2 ** n_ref, 2 ** n_ref), params, schedule, m0_kind
    )
    failures = []
    if not reference.converged:
        failures.append(n_ref)
        logger.warning(f"Reference level {n_ref} ended with status {reference.status}")
    v_ref = reference.v.values[-1] if reference.v is not None else None

    levels = []
    for n in range(n_min, n_max + 1):
        size = 2 ** n
        solution = solve_equilibrium(config_base.with_size(size, size), params, schedule, m0_kind)
        h = (params.E_max - params.E_min) / size
        if solution.v is None or v_ref is None:
            failures.append(n)
            levels.append(ConvergenceLevel(n=n, N=size, h=h, error=float('nan'), converged=False))
            continue
        if not solution.converged:
            failures.append(n)
        stride = 2 ** (n_ref - n)
        restricted = v_ref[::stride]
        error = float(np.max(np.abs(solution.v.values[-1][1:-1] - restricted[1:-1])))
        levels.append(ConvergenceLevel(n=n, N=size, h=h, error=error, converged=solution.converged))
        logger.info(f"n={n}: N=K={size}, error={error:.3e}")

    measured = [lvl for lvl in levels if np.isfinite(lvl.error)]
    order = fit_order([lvl.h for lvl in measured], [lvl.error for lvl in measured])
    return ConvergenceReport(levels=levels, fitted_order=order, reference_level=n_ref, failures=failures)


def uniform_source_value(F, params):
    """Closed form v(0) = (F/r)(1 - exp(-r T)) of v' = r v - F, v(T) = 0"""
    if params.r == 0:
        return F * params.T
    return F / params.r * (1.0 - np.exp(-params.r * params.T))


def solve_uniform_source(K, F, params, theta, N=8):
    """Adjoint solve with tau = 0 and spatially uniform source F"""
    space = build_space_grid(N, params.E_min, params.E_max)
    times = build_time_grid(K, params.T)
    zeros = Field.filled('tau', space, times)
    density = Field.filled('m', space, times)
    prices_free = ConstantPrice(0.0)

    def source(E, tau, m, S, p):
        return np.full_like(E, F)

    return solve_hjb(density, zeros, prices_free, params, theta, source=source)


def time_convergence_study(theta, Ks, params, F=1.0, N=8):
    """
    Order of the theta-scheme on the uniform-source problem

    Returns:
        (errors, fitted_order) with errors measured at t = 0
    """
    exact = uniform_source_value(F, params)
    errors = []
    for K in Ks:
        v = solve_uniform_source(K, F, params, theta, N=N)
        errors.append(float(np.max(np.abs(v.values[-1] - exact))))
    h = params.T / np.asarray(Ks, dtype=float)
    return errors, fit_order(h, errors)

