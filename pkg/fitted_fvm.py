"""
Exponentially fitted finite volume operators.

The edge flux rho = a u' + b u is approximated by the exact solution of the
constant-coefficient two-point problem on each primal interval, which gives
Bernoulli-function weights. Rows are assembled as

    e_{i,i-1} u_{i-1} + e_{i,i} u_i + e_{i,i+1} u_{i+1}
        = -(rho_{i+1/2} - rho_{i-1/2}) + c_i l_i u_i

for every node 0..N, with the flux through the two outer dual edges closed
either to zero (reflection) or to b u (literal Neumann u' = 0).
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.linalg import LinAlgError
from scipy.linalg import solve_banded

from grid import NonFiniteFieldError
from logger import get_logger

logger = get_logger(__name__)

SERIES_CUTOFF = 1e-6
CLOSURES = ('zero_flux', 'neumann')


class SingularSystemError(ArithmeticError):
    """Raised when an implicit step hits a singular tridiagonal matrix"""


@dataclass
class TridiagonalSystem:
    """(N+1)x(N+1) tridiagonal operator on nodes 0..N with its right-hand side"""
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray = None

    def __post_init__(self):
        n = len(self.diag)
        if len(self.sub) != n - 1 or len(self.sup) != n - 1:
            raise ValueError(
                f"off-diagonals must have length {n - 1}, got {len(self.sub)} and {len(self.sup)}"
            )
        if self.rhs is not None and len(self.rhs) != n:
            raise ValueError(f"right-hand side must have length {n}, got {len(self.rhs)}")

    def matvec(self, x):
        """Compute A x"""
        x = np.asarray(x, dtype=float)
        y = self.diag * x
        y[:-1] += self.sup * x[1:]
        y[1:] += self.sub * x[:-1]
        return y

    def rmatvec(self, x):
        """Compute A^T x"""
        x = np.asarray(x, dtype=float)
        y = self.diag * x
        y[1:] += self.sup * x[:-1]
        y[:-1] += self.sub * x[1:]
        return y

    def to_dense(self):
        return np.diag(self.diag) + np.diag(self.sup, 1) + np.diag(self.sub, -1)

    def column_sums(self):
        return self.rmatvec(np.ones_like(self.diag))

    def row_sums(self):
        return self.matvec(np.ones_like(self.diag))

    def non_finite_row(self):
        """Index of the first row with a NaN/Inf coefficient or rhs entry, else None"""
        bad = ~np.isfinite(self.diag)
        bad[1:] |= ~np.isfinite(self.sub)
        bad[:-1] |= ~np.isfinite(self.sup)
        if self.rhs is not None:
            bad |= ~np.isfinite(self.rhs)
        rows = np.flatnonzero(bad)
        return int(rows[0]) if len(rows) else None


@dataclass
class OperatorAssembly:
    """Spatial operator D together with the coefficients it was built from"""
    matrix: TridiagonalSystem
    drift_edges: np.ndarray
    reaction_nodes: np.ndarray
    diffusion: float
    closure: str = 'zero_flux'


@dataclass
class MMatrixReport:
    """Outcome of the sufficient M-matrix checks on theta*D + G"""
    off_diagonal_ok: bool
    diagonal_ok: bool
    column_dominance_ok: bool
    worst_violation: float = 0.0
    worst_location: tuple = None
    negative_reaction_nodes: list = field(default_factory=list)

    @property
    def passed(self):
        return self.off_diagonal_ok and self.diagonal_ok and self.column_dominance_ok


def bernoulli(x):
    """
    B(x) = x / (exp(x) - 1), with B(0) = 1

    Uses expm1 away from zero and the series 1 - x/2 + x^2/12 below 1e-6.
    """
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    with np.errstate(over='ignore', invalid='ignore'):
        direct = safe / np.expm1(safe)
        series = 1.0 - 0.5 * x + x * x / 12.0
    result = np.where(small, series, direct)
    return result if result.ndim else float(result)


def edge_flux_coeffs(b_edge, a, h):
    """
    Fitted flux weights on one edge

    Args:
        b_edge: Drift at the edge (scalar or array)
        a: Diffusion coefficient sigma^2/2, must be positive
        h: Length of the primal interval

    Returns:
        (w_low, w_high) with rho = w_high * u_{i+1} - w_low * u_i
    """
    if not np.all(np.asarray(a) > 0):
        raise ValueError(f"fitted flux needs positive diffusion, got a={a}")
    if not np.all(np.asarray(h) > 0):
        raise ValueError("fitted flux needs positive interval lengths")

    x = np.asarray(b_edge, dtype=float) * h / a
    scale = a / np.asarray(h, dtype=float)
    w_low = scale * bernoulli(x)
    w_high = scale * bernoulli(-x)
    return w_low, w_high


def assemble_operator(drift_edges, reaction_nodes, a, grid, closure='zero_flux',
                      boundary_drift=(0.0, 0.0)):
    """
    Assemble the tridiagonal spatial operator D on all N+1 nodes

    Args:
        drift_edges: b at the N interior edges E_{i+1/2}
        reaction_nodes: c at the N+1 nodes
        a: Diffusion coefficient
        grid: SpaceGrid
        closure: 'zero_flux' or 'neumann'
        boundary_drift: b at E_min and E_max, used by the Neumann closure only

    Returns:
        OperatorAssembly
    """
    drift_edges = np.asarray(drift_edges, dtype=float)
    reaction_nodes = np.asarray(reaction_nodes, dtype=float)
    n_nodes = len(grid.nodes)
    if drift_edges.shape != (n_nodes - 1,):
        raise ValueError(f"expected {n_nodes - 1} edge drifts, got shape {drift_edges.shape}")
    if reaction_nodes.shape != (n_nodes,):
        raise ValueError(f"expected {n_nodes} reaction values, got shape {reaction_nodes.shape}")
    if closure not in CLOSURES:
        raise ValueError(f"closure must be one of {CLOSURES}, got '{closure}'")

    w_low, w_high = edge_flux_coeffs(drift_edges, a, grid.steps)

    diag = reaction_nodes * grid.cell_widths
    diag[:-1] += w_low
    diag[1:] += w_high
    sub = -w_low.copy()
    sup = -w_high.copy()

    if closure == 'neumann':
        b_left, b_right = boundary_drift
        diag[0] += b_left
        diag[-1] -= b_right

    matrix = TridiagonalSystem(sub=sub, diag=diag, sup=sup)
    return OperatorAssembly(
        matrix=matrix,
        drift_edges=drift_edges,
        reaction_nodes=reaction_nodes,
        diffusion=a,
        closure=closure,
    )


def exponential_entries(drift_edges, reaction_nodes, a, grid):
    """
    Interior rows written with global exponentials exp(alpha E), alpha = b/a.

    Overflows for large alpha*E; kept for cross-checking assemble_operator
    on moderate inputs. Drift must be non-zero on every edge.

    Returns:
        (sub, diag, sup) for rows 1..N-1, where sub[i-1] = e_{i,i-1},
        diag[i-1] = e_{i,i} and sup[i-1] = e_{i,i+1}
    """
    E = grid.nodes
    b = np.asarray(drift_edges, dtype=float)
    alpha = b / a
    # edge j joins nodes j and j+1
    lo = np.exp(alpha * E[:-1])
    hi = np.exp(alpha * E[1:])
    denom = hi - lo
    toward_low = b * lo / denom
    toward_high = b * hi / denom

    sub = -toward_low[:-1]
    diag = toward_high[:-1] + toward_low[1:] \
        + np.asarray(reaction_nodes, dtype=float)[1:-1] * grid.cell_widths[1:-1]
    sup = -toward_high[1:]
    return sub, diag, sup


def is_m_matrix(assembly, time_weight, theta):
    """
    Check the sufficient M-matrix conditions for theta*D + G

    Args:
        assembly: OperatorAssembly holding D
        time_weight: Diagonal of G, l_i / |dt|
        theta: Splitting parameter

    Returns:
        MMatrixReport; never raises
    """
    matrix = assembly.matrix
    sub = theta * matrix.sub
    sup = theta * matrix.sup
    diag = theta * matrix.diag + np.asarray(time_weight, dtype=float)

    violations = []

    worst_off = 0.0
    if len(sub):
        i_sub, i_sup = int(np.argmax(sub)), int(np.argmax(sup))
        if sub[i_sub] >= sup[i_sup]:
            worst_off, off_loc = float(sub[i_sub]), ('off_diagonal', i_sub + 1, i_sub)
        else:
            worst_off, off_loc = float(sup[i_sup]), ('off_diagonal', i_sup, i_sup + 1)
    off_ok = worst_off <= 0.0
    if not off_ok:
        violations.append((worst_off, off_loc))

    i_diag = int(np.argmin(diag))
    diag_ok = bool(diag[i_diag] > 0.0)
    if not diag_ok:
        violations.append((-float(diag[i_diag]), ('diagonal', i_diag, i_diag)))

    column_off = np.zeros_like(diag)
    column_off[1:] += np.abs(sup)
    column_off[:-1] += np.abs(sub)
    margin = diag - column_off
    tolerance = 1e-12 * np.maximum(1.0, np.abs(diag))
    i_col = int(np.argmin(margin + tolerance))
    dominance_ok = bool(np.all(margin >= -tolerance))
    if not dominance_ok:
        violations.append((-float(margin[i_col]), ('column_dominance', i_col, i_col)))

    negative = np.flatnonzero(np.asarray(assembly.reaction_nodes) < 0).tolist()

    report = MMatrixReport(
        off_diagonal_ok=off_ok,
        diagonal_ok=diag_ok,
        column_dominance_ok=dominance_ok,
        negative_reaction_nodes=negative,
    )
    if violations:
        report.worst_violation, report.worst_location = max(violations, key=lambda v: v[0])
    return report


def solve_tridiagonal(system, quantity='u', level=None):
    """
    Solve A x = rhs for a tridiagonal system

    Args:
        system: TridiagonalSystem with rhs set
        quantity: Name of the unknown, used in error reports
        level: Time level being solved for, used in error reports

    Returns:
        Solution vector

    Raises:
        NonFiniteFieldError: at the first row holding NaN/Inf in A or rhs
        SingularSystemError: when the factorization hits a zero pivot
    """
    if system.rhs is None:
        raise ValueError("tridiagonal system has no right-hand side")

    bad_row = system.non_finite_row()
    if bad_row is not None:
        raise NonFiniteFieldError(f'{quantity} system', level, bad_row)

    n = len(system.diag)
    if n == 1:
        if system.diag[0] == 0:
            raise SingularSystemError("zero pivot in 1x1 system")
        return np.asarray(system.rhs, dtype=float) / system.diag[0]

    banded = np.zeros((3, n))
    banded[0, 1:] = system.sup
    banded[1, :] = system.diag
    banded[2, :-1] = system.sub
    try:
        return solve_banded((1, 1), banded, system.rhs, check_finite=False)
    except LinAlgError as e:
        raise SingularSystemError(f"singular tridiagonal system of size {n}: {e}") from e


@dataclass
class RunDiagnostics:
    """M-matrix checks, clipping events and mass drift collected over one run"""
    checks: int = 0
    passes: int = 0
    failures: list = field(default_factory=list)
    clip_events: int = 0
    max_mass_drift: float = 0.0

    @property
    def pass_rate(self):
        return self.passes / self.checks if self.checks else 1.0

    def record(self, report, solver, level):
        self.checks += 1
        if report.passed:
            self.passes += 1
            return
        self.failures.append({
            'solver': solver,
            'level': level,
            'location': report.worst_location,
            'violation': report.worst_violation,
            'negative_reaction_nodes': report.negative_reaction_nodes,
        })
        logger.warning(
            f"{solver} step {level}: system is not certified as an M-matrix "
            f"({report.worst_location}, violation {report.worst_violation:.3e}); "
            f"nodes with c < 0: {report.negative_reaction_nodes}"
        )


def theta_step_system(implicit, explicit, time_weight, theta, known, source=None):
    """
    Build (theta*D_new + G) u_new = (G - (1-theta)*D_old) u_old + source

    Args:
        implicit: OperatorAssembly at the level being solved for
        explicit: OperatorAssembly at the known level
        time_weight: Diagonal of G, l_i / |dt|
        theta: Splitting parameter in [1/2, 1]
        known: Solution at the known level
        source: Optional extra right-hand side

    Returns:
        TridiagonalSystem ready for solve_tridiagonal
    """
    rhs = time_weight * known - (1.0 - theta) * explicit.matrix.matvec(known)
    if source is not None:
        rhs = rhs + source
    lhs = implicit.matrix
    return TridiagonalSystem(
        sub=theta * lhs.sub,
        diag=theta * lhs.diag + time_weight,
        sup=theta * lhs.sup,
        rhs=rhs,
    )


def check_theta(theta):
    if not 0.5 <= theta <= 1.0:
        raise ValueError(f"splitting parameter theta must lie in [1/2, 1], got {theta}")
