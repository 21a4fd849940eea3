"""
Economic model of the emission-regulated producers: parameters, permit
price schedules, revenue/cost terms and initial population densities
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from grid import GridError
from logger import get_logger

logger = get_logger(__name__)


class ModelParamsError(ValueError):
    """Raised when model constants violate their invariants"""


class DomainError(ValueError):
    """Raised when a model function is evaluated outside its domain"""


@dataclass(frozen=True)
class ModelParams:
    """
    Economic and noise constants. Defaults reproduce Example 1.

    A defaults to E_max; passing A explicitly is allowed for sensitivity
    runs and is reported by `a_overridden`.
    """
    E_min: float = 1.0
    E_max: float = 5.0
    T: float = 1.0
    sigma: float = 0.3
    r: float = 0.1
    c1: float = 10.0
    c2: float = 0.1
    E0: float = 1.0
    A: float = None
    a_overridden: bool = field(default=False, init=False)

    def __post_init__(self):
        if not self.E_min < self.E_max:
            raise ModelParamsError(f"E_min must be below E_max, got [{self.E_min}, {self.E_max}]")
        if not self.T > 0:
            raise ModelParamsError(f"T must be positive, got {self.T}")
        if not self.sigma > 0:
            raise ModelParamsError(f"sigma must be positive, got {self.sigma}")
        if self.r < 0:
            raise ModelParamsError(f"r must be non-negative, got {self.r}")
        if not self.c1 > 0:
            raise ModelParamsError(f"c1 must be positive, got {self.c1}")
        if self.c2 < 0:
            raise ModelParamsError(f"c2 must be non-negative, got {self.c2}")

        if self.A is None:
            object.__setattr__(self, 'A', float(self.E_max))
        elif self.A != self.E_max:
            object.__setattr__(self, 'a_overridden', True)
            logger.warning(f"Revenue vertex A={self.A} differs from E_max={self.E_max}")

    @property
    def diffusion(self):
        """a = sigma^2 / 2"""
        return 0.5 * self.sigma ** 2


# Price schedules

@dataclass(frozen=True)
class ConstantPrice:
    """Permit price S held fixed over the horizon"""
    S: float = 0.2

    def __post_init__(self):
        if self.S < 0:
            raise ModelParamsError(f"constant price must be non-negative, got {self.S}")

    def validate(self, horizon):
        return True


@dataclass(frozen=True)
class RampPrice:
    """Zero until t_start, linear up to S_max at t_end, flat afterwards"""
    t_start: float = 0.1
    t_end: float = 0.5
    S_max: float = 2.0

    def __post_init__(self):
        if not 0 <= self.t_start < self.t_end:
            raise ModelParamsError(
                f"ramp needs 0 <= t_start < t_end, got t_start={self.t_start}, t_end={self.t_end}"
            )
        if self.S_max < 0:
            raise ModelParamsError(f"S_max must be non-negative, got {self.S_max}")

    def validate(self, horizon):
        if self.t_end > horizon:
            raise ModelParamsError(f"ramp end {self.t_end} lies beyond the horizon T={horizon}")
        return True


def price_at(schedule, t, horizon):
    """
    Evaluate the permit price S(t)

    Args:
        schedule: ConstantPrice or RampPrice
        t: Time in [0, horizon]
        horizon: Game horizon T

    Returns:
        Non-negative price
    """
    slack = 1e-12 * max(1.0, horizon)
    if t < -slack or t > horizon + slack:
        raise DomainError(f"price requested at t={t}, outside [0, {horizon}]")

    if isinstance(schedule, ConstantPrice):
        return float(schedule.S)
    if isinstance(schedule, RampPrice):
        if t < schedule.t_start:
            return 0.0
        if t >= schedule.t_end:
            return float(schedule.S_max)
        share = (t - schedule.t_start) / (schedule.t_end - schedule.t_start)
        return float(schedule.S_max * share)
    raise TypeError(f"unknown price schedule {type(schedule).__name__}")


def prices_on(schedule, time_grid):
    """S(t_k) for every level of a time grid"""
    horizon = time_grid.horizon
    return np.array([price_at(schedule, t, horizon) for t in time_grid.levels])


# Revenue, costs and the adjoint source

def _revenue_numerator(E, p):
    return p.A * E - 0.5 * E ** 2


def revenue(E, m, p):
    """Production revenue (A E - E^2/2) / (c1 + c2 m)"""
    return _revenue_numerator(E, p) / (p.c1 + p.c2 * m)


def abatement_cost(tau):
    """Quadratic mitigation cost tau^2 / 2"""
    return 0.5 * np.square(tau)


def trading_cost(E, S, p):
    """Permit purchases S (E - E0); negative values are sales revenue"""
    return S * (E - p.E0)


def running_payoff(E, tau, m, S, p):
    return revenue(E, m, p) - abatement_cost(tau) - trading_cost(E, S, p)


def adjoint_source(E, tau, m, S, p):
    """
    Source term f of the adjoint equation. Compared with the running payoff
    it carries the congestion correction from differentiating R(E) m in m.
    """
    denominator = p.c1 + p.c2 * m
    numerator = _revenue_numerator(E, p)
    return (
        -abatement_cost(tau)
        - trading_cost(E, S, p)
        + numerator / denominator
        - p.c2 * m * numerator / denominator ** 2
    )


# Initial densities

@dataclass(frozen=True)
class TruncatedNormal:
    """Normal law restricted to [E_min, E_max]; `variance` is a variance, not a std"""
    mean: float = 3.0
    variance: float = 0.35

    def __post_init__(self):
        if not self.variance > 0:
            raise ModelParamsError(f"variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class Tent:
    """Piecewise linear: zero at both ends, kink at `peak`"""
    peak: float = 2.0


def _tent_values(kind, nodes, e_min, e_max):
    if not e_min < kind.peak < e_max:
        raise ModelParamsError(f"tent peak {kind.peak} must lie inside ({e_min}, {e_max})")
    height = 2.0 / (e_max - e_min)
    return np.interp(nodes, [e_min, kind.peak, e_max], [0.0, height, 0.0])


def initial_density(kind, grid):
    """
    Sample an initial density on the nodes and renormalize it to unit mass

    Args:
        kind: TruncatedNormal or Tent
        grid: SpaceGrid

    Returns:
        Node vector m0 with sum(l_i * m0_i) = 1
    """
    if grid.n_cells < 2:
        raise GridError("initial density needs a grid with at least 2 cells")

    if isinstance(kind, TruncatedNormal):
        values = norm.pdf(grid.nodes, loc=kind.mean, scale=np.sqrt(kind.variance))
    elif isinstance(kind, Tent):
        values = _tent_values(kind, grid.nodes, grid.e_min, grid.e_max)
    else:
        raise TypeError(f"unknown initial density {type(kind).__name__}")

    values = np.clip(values, 0.0, None)
    mass = float(np.dot(grid.cell_widths, values))
    if not mass > 0:
        raise ModelParamsError(f"initial density {kind} has no mass on the grid")
    return values / mass
