"""
Discretized A-paths, A0-paths and path families.

A path is sampled at the nodes of a uniform TimeGrid: `base[k]` is the base
point gamma(t_k) and `fiber[k]` the fiber value a(t_k). A family adds a uniform
EpsilonGrid in front: `base[j, k]` = gamma(eps_j, t_k).

Source is gamma(0) and target is gamma(1). concatenate(p, q) traverses q first
and then p, so it needs target(q) == source(p).
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from src.algebroid import torsion, transport
from src.report import CheckReport
from src.utils.integrators import (
    StageData, grid_derivative, resample, rk4_fixed_grid, uniform_nodes,
)

logger = logging.getLogger('apaths')

A_PATH = 'a-path'
A0_PATH = 'a0-path'
INVALID = 'invalid'


class PathError(ValueError):
    pass


class ChartExitError(PathError):
    def __init__(self, message, exit_time):
        super().__init__(message)
        self.exit_time = exit_time


class PathValidationError(PathError):
    pass


class EndpointMismatchError(PathError):
    pass


class EndpointsNotFixedError(PathError):
    pass


class GridTooCoarseError(PathError):
    pass


class HomotopySolverError(PathError):
    pass


class NoDefaultFamilyError(PathError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    n_t: int

    def __post_init__(self):
        if int(self.n_t) != self.n_t or self.n_t < 3:
            raise GridTooCoarseError(f"A time grid needs at least 3 nodes, got {self.n_t}")

    @property
    def step(self):
        return 1.0 / (self.n_t - 1)

    @property
    def nodes(self):
        return uniform_nodes(self.n_t)

    def path_tolerance(self):
        """Default A-path tolerance 10 h^2."""
        return 10.0 * self.step ** 2

    def refined(self):
        """The grid of a concatenation: 2 n_t - 1 nodes."""
        return TimeGrid(2 * self.n_t - 1)


@dataclass(frozen=True)
class EpsilonGrid:
    n_eps: int

    def __post_init__(self):
        if int(self.n_eps) != self.n_eps or self.n_eps < 3:
            raise GridTooCoarseError(f"A family needs at least 3 epsilon nodes, got {self.n_eps}")

    @property
    def step(self):
        return 1.0 / (self.n_eps - 1)

    @property
    def nodes(self):
        return uniform_nodes(self.n_eps)


def _frozen(values):
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


class APath:
    """
    An algebroid path sampled on a time grid.

    Args:
        algebroid: Algebroid the path lives in
        grid: TimeGrid
        base: Base points, shape (n_t, n)
        fiber: Fiber values, shape (n_t, r)
    """

    def __init__(self, algebroid, grid, base, fiber):
        self.algebroid = algebroid
        self.grid = grid
        self.base = _frozen(base).reshape(grid.n_t, algebroid.chart.dim)
        self.fiber = _frozen(fiber)
        if self.fiber.shape != (grid.n_t, algebroid.rank):
            raise PathError(f"Fiber data must have shape {(grid.n_t, algebroid.rank)}, got {self.fiber.shape}")

    @property
    def source(self):
        return self.base[0]

    @property
    def target(self):
        return self.base[-1]

    def __repr__(self):
        return f"{type(self).__name__}(n_t={self.grid.n_t}, source={self.source.tolist()}, target={self.target.tolist()})"


class A0Path(APath):
    """An A-path whose fiber values and their time derivatives vanish at both ends."""

    @classmethod
    def from_path(cls, path, tol=None):
        report = validate_apath(path, tol)
        if report.classification != A0_PATH:
            raise PathValidationError(
                f"Path is not an A0-path ({report.classification}): "
                f"residual {report.residual:.3e}, boundary {report.boundary_residual:.3e}, tol {report.tolerance:.1e}")
        return cls(path.algebroid, path.grid, path.base, path.fiber)


@dataclass
class PathReport(CheckReport):
    classification: str = INVALID
    boundary_residual: float = 0.0
    worst_node: Optional[int] = None


def path_source_target(path):
    return path.source.copy(), path.target.copy()


# ---------------------------------------------------------------------------
# Building paths
# ---------------------------------------------------------------------------

def _integrate_base(algebroid, x0, fiber, step, interpolation):
    """
    RK4 for gamma' = rho(gamma) a with a sampled at nodes.

    x0 has shape (..., n) and fiber shape (n_t, ..., r); returns (n_t, ..., n).
    """
    chart = algebroid.chart
    fiber_stages = StageData(fiber, interpolation=interpolation)
    lower = np.asarray(chart.lower, dtype=float)
    upper = np.asarray(chart.upper, dtype=float)

    def rhs(k, stage, y):
        return algebroid.anchor_apply(y, fiber_stages.at(k, stage))

    def stay_in_chart(k, y):
        if not np.all(np.isfinite(y)):
            raise ChartExitError(f"Base path diverged at t = {(k + 1) * step:.6f}", (k + 1) * step)
        if np.any(y < lower) or np.any(y > upper):
            exit_time = (k + 1) * step
            raise ChartExitError(f"Base path leaves the chart at t = {exit_time:.6f}", exit_time)
        return y

    n_steps = fiber.shape[0] - 1
    return rk4_fixed_grid(rhs, x0, step, n_steps, post_step=stay_in_chart)


def solve_base_path(algebroid, x0, fiber_curve, grid, interpolation='cubic', tol=None):
    """
    Build the A-path over the given fiber curve starting at x0.

    Args:
        algebroid: Algebroid
        x0: Starting base point
        fiber_curve: Fiber values at the grid nodes, shape (n_t, r)
        grid: TimeGrid
        interpolation: 'cubic' or 'linear' off-node fiber values inside RK4 stages
        tol: A-path residual tolerance for the post-check (default 10 h^2)

    Returns:
        APath: The solved path

    Raises:
        ChartExitError: If the base path leaves the chart
    """
    chart = algebroid.chart
    x0 = np.asarray(x0, dtype=float).reshape(chart.dim)
    fiber_curve = np.asarray(fiber_curve, dtype=float)
    if fiber_curve.shape != (grid.n_t, algebroid.rank):
        raise PathError(f"Fiber curve must have shape {(grid.n_t, algebroid.rank)}, got {fiber_curve.shape}")
    if not chart.contains(x0):
        raise ChartExitError(f"Starting point {x0.tolist()} is outside the chart", 0.0)

    base = _integrate_base(algebroid, x0, fiber_curve, grid.step, interpolation)
    path = APath(algebroid, grid, base, fiber_curve)
    report = validate_apath(path, tol)
    if report.classification == INVALID:
        logger.warning(f"Solved base path has residual {report.residual:.3e} above {report.tolerance:.1e}")
    else:
        logger.debug(f"Solved base path: residual {report.residual:.3e}, target {path.target.tolist()}")
    return path


def constant_path(algebroid, x, grid):
    x = np.asarray(x, dtype=float).reshape(algebroid.chart.dim)
    if not algebroid.chart.contains(x):
        raise PathError(f"Point {x.tolist()} is outside the chart")
    base = np.broadcast_to(x, (grid.n_t, algebroid.chart.dim))
    return A0Path(algebroid, grid, base, np.zeros((grid.n_t, algebroid.rank)))


def path_residuals(path):
    """Per-node |rho(gamma_k) a_k - gamma'(t_k)|_inf."""
    if path.algebroid.chart.dim == 0:
        return np.zeros(path.grid.n_t)
    velocity = grid_derivative(path.base, path.grid.step, axis=0)
    image = path.algebroid.anchor_apply(path.base, path.fiber)
    return np.max(np.abs(image - velocity), axis=-1)


def boundary_residual(path):
    """max of |a(0)|, |a(1)|, |a'(0)|, |a'(1)| with second-order one-sided differences."""
    fiber = path.fiber
    if fiber.size == 0:
        return 0.0
    slope = grid_derivative(fiber, path.grid.step, axis=0)
    return float(max(np.max(np.abs(fiber[0])), np.max(np.abs(fiber[-1])),
                     np.max(np.abs(slope[0])), np.max(np.abs(slope[-1]))))


def validate_apath(path, tol=None):
    """
    Classify a discretized path as A0-path, A-path or invalid.

    Returns:
        PathReport: residual is the max A-path residual; classification is
        'a0-path', 'a-path' or 'invalid'
    """
    tol = path.grid.path_tolerance() if tol is None else tol
    residuals = path_residuals(path)
    worst_node = int(np.argmax(residuals))
    residual = float(residuals[worst_node])
    inside = all(path.algebroid.chart.contains(point, tol=1e-12) for point in path.base)
    boundary = boundary_residual(path)

    if not inside or not math.isfinite(residual) or residual >= tol:
        classification = INVALID
    elif boundary < tol:
        classification = A0_PATH
    else:
        classification = A_PATH
    return PathReport(name='a-path', residual=residual, tolerance=float(tol),
                      passed=classification != INVALID,
                      details={'classification': classification, 'boundary': boundary,
                               'worst_node': worst_node, 'inside_chart': inside},
                      classification=classification, boundary_residual=boundary, worst_node=worst_node)


# ---------------------------------------------------------------------------
# Groupoid operations on paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cutoff:
    """Smooth increasing bijection tau of [0, 1] with tau'(0) = tau'(1) = 0."""
    tau: Callable
    dtau: Callable
    name: str = 'cutoff'


DEFAULT_CUTOFF = Cutoff(
    tau=lambda t: t - np.sin(2.0 * np.pi * t) / (2.0 * np.pi),
    dtau=lambda t: 1.0 - np.cos(2.0 * np.pi * t),
    name='sine',
)


def reparametrize_to_a0(path, cutoff=DEFAULT_CUTOFF, tol=None):
    """
    The path t -> tau'(t) a(tau(t)) over gamma(tau(t)).

    Raises:
        PathValidationError: If the result is not an A0-path on this grid
    """
    nodes = path.grid.nodes
    times = np.clip(cutoff.tau(nodes), 0.0, 1.0)
    speed = cutoff.dtau(nodes)
    fiber = speed[:, None] * resample(path.fiber, times, axis=0)
    if path.algebroid.chart.dim:
        base = resample(path.base, times, axis=0)
    else:
        base = path.base
    fiber[0] = 0.0
    fiber[-1] = 0.0
    result = APath(path.algebroid, path.grid, base, fiber)
    return A0Path.from_path(result, tol)


def concatenate(p, q, tol=None):
    """
    Traverse q, then p, on a grid of 2 n_t - 1 nodes.

    Each half runs at double speed, so fiber values are doubled. The junction
    node averages the two meeting samples.

    Raises:
        EndpointMismatchError: If target(q) and source(p) differ
        PathValidationError: If the fiber of p or q does not vanish at both ends
    """
    if p.grid != q.grid:
        raise PathError(f"Cannot concatenate paths on different grids ({p.grid.n_t} vs {q.grid.n_t} nodes)")
    if p.algebroid is not q.algebroid:
        raise PathError("Cannot concatenate paths of different algebroids")
    tol = p.grid.path_tolerance() if tol is None else tol
    _require_flat_ends(q, tol, 'q')
    _require_flat_ends(p, tol, 'p')
    gap = float(np.max(np.abs(q.target - p.source))) if p.base.size else 0.0
    if gap >= tol:
        raise EndpointMismatchError(
            f"target(q) = {q.target.tolist()} does not match source(p) = {p.source.tolist()} (gap {gap:.3e})")

    n = p.grid.n_t
    grid = p.grid.refined()
    base = np.empty((grid.n_t, p.base.shape[1]))
    fiber = np.empty((grid.n_t, p.fiber.shape[1]))
    base[:n] = q.base
    base[n - 1:] = p.base
    base[n - 1] = 0.5 * (q.base[-1] + p.base[0])
    fiber[:n] = 2.0 * q.fiber
    fiber[n - 1:] = 2.0 * p.fiber
    fiber[n - 1] = q.fiber[-1] + p.fiber[0]
    return A0Path(p.algebroid, grid, base, fiber)


def _require_flat_ends(path, tol, label='path'):
    if path.fiber.size == 0:
        return
    ends = float(max(np.max(np.abs(path.fiber[0])), np.max(np.abs(path.fiber[-1]))))
    if ends >= tol:
        raise PathValidationError(
            f"Fiber of {label} does not vanish at the ends (|a| = {ends:.3e}, tol {tol:.1e}); "
            f"reparametrize it to an A0-path first")


def reverse(path, tol=None):
    """
    Run the path backwards: base reversed, fiber reversed and negated.

    Raises:
        PathValidationError: If the fiber does not vanish at both ends
    """
    _require_flat_ends(path, path.grid.path_tolerance() if tol is None else tol)
    return A0Path(path.algebroid, path.grid, path.base[::-1], -path.fiber[::-1])


# ---------------------------------------------------------------------------
# Families and the homotopy equation
# ---------------------------------------------------------------------------

class PathFamily:
    """
    A one-parameter family of A-paths.

    Args:
        algebroid: Algebroid
        time_grid: TimeGrid
        eps_grid: EpsilonGrid
        base: Base points, shape (n_eps, n_t, n)
        fiber: Fiber values, shape (n_eps, n_t, r)
    """

    def __init__(self, algebroid, time_grid, eps_grid, base, fiber):
        self.algebroid = algebroid
        self.time_grid = time_grid
        self.eps_grid = eps_grid
        shape = (eps_grid.n_eps, time_grid.n_t)
        self.base = _frozen(base).reshape(shape + (algebroid.chart.dim,))
        self.fiber = _frozen(fiber)
        if self.fiber.shape != shape + (algebroid.rank,):
            raise PathError(f"Family fiber must have shape {shape + (algebroid.rank,)}, got {self.fiber.shape}")

    @classmethod
    def from_fiber(cls, algebroid, x0, fiber, time_grid, eps_grid, interpolation='cubic'):
        """
        Solve the base of every slice from x0 (one point, or one per slice).
        """
        fiber = np.asarray(fiber, dtype=float)
        n = algebroid.chart.dim
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (eps_grid.n_eps, n))
        if not all(algebroid.chart.contains(point) for point in x0):
            raise ChartExitError("Family starting points are outside the chart", 0.0)
        stacked = np.swapaxes(fiber, 0, 1)
        base = _integrate_base(algebroid, x0, stacked, time_grid.step, interpolation)
        return cls(algebroid, time_grid, eps_grid, np.swapaxes(base, 0, 1), fiber)

    def slice(self, j):
        return APath(self.algebroid, self.time_grid, self.base[j], self.fiber[j])

    @property
    def first(self):
        return self.slice(0)

    @property
    def last(self):
        return self.slice(self.eps_grid.n_eps - 1)

    def endpoint_drift(self):
        """max over eps of the movement of gamma(eps, 0) and gamma(eps, 1)."""
        if self.base.shape[-1] == 0:
            return 0.0
        start = np.max(np.abs(self.base[:, 0] - self.base[0, 0]))
        end = np.max(np.abs(self.base[:, -1] - self.base[0, -1]))
        return float(max(start, end))

    def homotopy_tolerance(self):
        """Default decision tolerance max(1e-6, 50 (h^2 + h_eps^2))."""
        return max(1e-6, 50.0 * (self.time_grid.step ** 2 + self.eps_grid.step ** 2))


@dataclass
class HomotopyField:
    """b(eps_j, t_k), shape (n_eps, n_t, r); b(eps, 0) = 0."""
    values: np.ndarray

    def endpoint_profile(self):
        """eps -> |b(eps, 1)|_inf."""
        if self.values.shape[-1] == 0:
            return np.zeros(self.values.shape[0])
        return np.max(np.abs(self.values[:, -1]), axis=-1)

    def at_end(self):
        return self.values[:, -1]


def _linear_coefficients(algebroid, base, fiber, anchor_image):
    """
    L with L b = T(b, a) - Gamma(rho(gamma) a) b, assembled column by column.
    """
    r = algebroid.rank
    frame = np.eye(r)
    columns = []
    for k in range(r):
        e_k = np.broadcast_to(frame[k], fiber.shape)
        column = torsion(algebroid, e_k, fiber, base) - transport(algebroid, anchor_image, e_k, base)
        columns.append(column)
    return np.stack(columns, axis=-1)


def solve_homotopy_equation(family, interpolation='cubic'):
    """
    Integrate the homotopy equation along every slice of the family.

    In covariant form D_t b - D_eps a = T(b, a) with D = d + Gamma(gamma-dot), i.e.

        d_t b = d_eps a + Gamma(d_eps gamma) a - Gamma(rho(gamma) a) b + T(b, a),
        b(eps, 0) = 0.

    With zero Christoffels this is d_t b = d_eps a - c(a, b). The right-hand side
    is affine in b, so its coefficients are assembled once on the whole grid
    and all slices are stepped together.

    Returns:
        HomotopyField

    Raises:
        HomotopySolverError: On non-finite values during integration
    """
    algebroid = family.algebroid
    h_t = family.time_grid.step
    h_eps = family.eps_grid.step

    d_eps_fiber = grid_derivative(family.fiber, h_eps, axis=0)
    d_eps_base = grid_derivative(family.base, h_eps, axis=0)

    # time axis first: (n_t, n_eps, .)
    fiber = np.swapaxes(family.fiber, 0, 1)
    base = np.swapaxes(family.base, 0, 1)
    forcing = np.swapaxes(d_eps_fiber, 0, 1).copy()
    if algebroid.chart.dim:
        forcing += transport(algebroid, np.swapaxes(d_eps_base, 0, 1), fiber, base)
        anchor_image = algebroid.anchor_apply(base, fiber)
    else:
        anchor_image = np.zeros(base.shape)
    coefficients = _linear_coefficients(algebroid, base, fiber, anchor_image)

    forcing_stages = StageData(forcing, interpolation=interpolation)
    coefficient_stages = StageData(coefficients, interpolation=interpolation)

    def rhs(k, stage, b):
        return forcing_stages.at(k, stage) + np.einsum(
            'ekl,el->ek', coefficient_stages.at(k, stage), b)

    def finite(k, b):
        if not np.all(np.isfinite(b)):
            raise HomotopySolverError(f"Homotopy field became non-finite at t = {(k + 1) * h_t:.6f}")
        return b

    b0 = np.zeros((family.eps_grid.n_eps, algebroid.rank))
    with np.errstate(over='raise', invalid='raise'):
        try:
            trajectory = rk4_fixed_grid(rhs, b0, h_t, family.time_grid.n_t - 1, post_step=finite)
        except FloatingPointError as exc:
            raise HomotopySolverError(f"Overflow while integrating the homotopy equation: {exc}") from exc
    values = np.swapaxes(trajectory, 0, 1).copy()
    values[:, 0] = 0.0
    logger.debug(f"Solved homotopy equation on {family.eps_grid.n_eps}x{family.time_grid.n_t} grid, "
                 f"max |b(eps,1)| = {float(np.max(np.abs(values[:, -1]), initial=0.0)):.3e}")
    return HomotopyField(values)


def is_homotopic_along_family(family, tol=None, endpoint_tol=None, interpolation='cubic'):
    """
    Decide whether the two extreme slices are homotopic through this family.

    Homotopic iff max_eps |b(eps, 1)|_inf < tol. The report's details carry the
    profile eps -> |b(eps, 1)|.

    Raises:
        EndpointsNotFixedError: If the base endpoints move with eps
    """
    tol = family.homotopy_tolerance() if tol is None else tol
    endpoint_tol = family.time_grid.path_tolerance() if endpoint_tol is None else endpoint_tol
    drift = family.endpoint_drift()
    if drift >= endpoint_tol:
        raise EndpointsNotFixedError(
            f"Family endpoints move by {drift:.3e} (tol {endpoint_tol:.1e}); not a homotopy candidate")
    homotopy_field = solve_homotopy_equation(family, interpolation=interpolation)
    profile = homotopy_field.endpoint_profile()
    residual = float(np.max(profile))
    report = CheckReport.from_residual('homotopy', residual, tol, endpoint_drift=drift,
                                       profile=profile, n_t=family.time_grid.n_t,
                                       n_eps=family.eps_grid.n_eps)
    logger.info(f"Homotopy decision: {'homotopic' if report.passed else 'not homotopic'} "
                f"(max |b(eps,1)| = {residual:.3e}, tol {tol:.1e})")
    return report


def anchor_vanishes_along(path, tol=1e-12):
    if path.algebroid.chart.dim == 0:
        return True
    return bool(np.max(np.abs(path.algebroid.anchor_at(path.base)), initial=0.0) <= tol)


def default_family(p, q, n_eps):
    """
    Linear interpolation family from p (eps = 0) to q (eps = 1).

    Only built where interpolated slices stay A-paths with fixed endpoints:
    on the one-point chart or when the anchor vanishes along both paths.

    Raises:
        NoDefaultFamilyError: Otherwise
    """
    if p.grid != q.grid:
        raise PathError("Default family needs paths on the same grid")
    if not (anchor_vanishes_along(p) and anchor_vanishes_along(q)):
        raise NoDefaultFamilyError("No default family: the anchor does not vanish along both paths")
    if p.base.size and float(np.max(np.abs(p.base - q.base))) > p.grid.path_tolerance():
        raise EndpointMismatchError("Default family needs paths over the same base curve")
    eps_grid = EpsilonGrid(n_eps)
    weights = eps_grid.nodes[:, None, None]
    fiber = (1.0 - weights) * p.fiber[None] + weights * q.fiber[None]
    base = np.broadcast_to(p.base, (n_eps,) + p.base.shape)
    return PathFamily(p.algebroid, p.grid, eps_grid, base, fiber)


def validate_family(family, tol=None):
    """Slice A-path residuals and endpoint drift of a family."""
    tol = family.time_grid.path_tolerance() if tol is None else tol
    residuals = [float(np.max(path_residuals(family.slice(j))))
                 for j in range(family.eps_grid.n_eps)]
    worst_slice = int(np.argmax(residuals))
    return CheckReport.from_residual('family', residuals[worst_slice], tol, worst_slice=worst_slice,
                                     endpoint_drift=family.endpoint_drift())


def check_intermediate_slices(family, homotopy_field, tol=None):
    """
    For every t, eps -> b(eps, t) must be an A-path over eps -> gamma(eps, t).
    """
    h_t, h_eps = family.time_grid.step, family.eps_grid.step
    tol = 10.0 * (h_t ** 2 + h_eps ** 2) if tol is None else tol
    if family.algebroid.chart.dim == 0:
        residual = 0.0
    else:
        velocity = grid_derivative(family.base, h_eps, axis=0)
        image = family.algebroid.anchor_apply(family.base, homotopy_field.values)
        residual = float(np.max(np.abs(image - velocity)))
    return CheckReport.from_residual('intermediate-slices', residual, tol)


# ---------------------------------------------------------------------------
# JSON form
# ---------------------------------------------------------------------------

def path_to_json(path):
    return {
        'grid': {'n_t': path.grid.n_t},
        'base': path.base.tolist(),
        'fiber': path.fiber.tolist(),
    }


def path_from_json(algebroid, data):
    try:
        grid = TimeGrid(int(data['grid']['n_t']))
        base = np.asarray(data['base'], dtype=float)
        fiber = np.asarray(data['fiber'], dtype=float)
    except (KeyError, TypeError) as exc:
        raise PathError(f"Malformed path document: {exc}") from exc
    if algebroid.chart.dim == 0:
        base = np.zeros((grid.n_t, 0))
    return APath(algebroid, grid, base, fiber)


def family_to_json(family):
    return {
        'grid': {'n_t': family.time_grid.n_t, 'n_eps': family.eps_grid.n_eps},
        'base': family.base.tolist(),
        'fiber': family.fiber.tolist(),
    }


def family_from_json(algebroid, data):
    try:
        time_grid = TimeGrid(int(data['grid']['n_t']))
        eps_grid = EpsilonGrid(int(data['grid']['n_eps']))
        base = np.asarray(data['base'], dtype=float)
        fiber = np.asarray(data['fiber'], dtype=float)
    except (KeyError, TypeError) as exc:
        raise PathError(f"Malformed family document: {exc}") from exc
    if algebroid.chart.dim == 0:
        base = np.zeros((eps_grid.n_eps, time_grid.n_t, 0))
    return PathFamily(algebroid, time_grid, eps_grid, base, fiber)
