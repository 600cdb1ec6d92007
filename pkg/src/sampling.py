"""
Deterministic scenario generators for checks, suites and tests.

Every generator takes a numpy Generator so a run is reproducible from its seed.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial.transform import Rotation

from src.expr import Var, add, const, mul, power, sum_exprs
from src.path_space import A0Path, PathFamily, solve_base_path

logger = logging.getLogger('apaths')


def flat_profile(t):
    """sin^4(pi t): vanishes to fourth order at both ends."""
    return np.sin(np.pi * np.asarray(t, dtype=float)) ** 4


def flat_fiber_curve(rng, t, rank, amplitude=1.0):
    """
    Random smooth fiber curve that vanishes flatly at t = 0 and t = 1.

    Returns:
        numpy.ndarray: shape (len(t), rank)
    """
    t = np.asarray(t, dtype=float)
    coefficients = amplitude * rng.uniform(-1.0, 1.0, size=(3, rank))
    modes = np.stack([np.ones_like(t), np.cos(np.pi * t), np.sin(2.0 * np.pi * t)], axis=-1)
    return flat_profile(t)[:, None] * (modes @ coefficients)


def smooth_fiber_function(rng, rank, amplitude=1.0, modes=3):
    """A random smooth curve t -> R^rank as a callable (not flat at the ends)."""
    coefficients = amplitude * rng.uniform(-1.0, 1.0, size=(modes, rank)) / np.arange(1, modes + 1)[:, None]
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(modes, rank))

    def curve(t):
        t = np.asarray(t, dtype=float)[..., None, None]
        m = np.arange(1, modes + 1)[:, None]
        return np.sum(coefficients * np.cos(np.pi * m * t + phases), axis=-2)

    return curve


# ---------------------------------------------------------------------------
# Zero Poisson structure
# ---------------------------------------------------------------------------

def zero_poisson_path(rng, algebroid, grid, x=None, amplitude=1.0):
    """A0-path over a constant base point (the anchor vanishes everywhere)."""
    if x is None:
        x = 0.5 * algebroid.chart.sample(rng, 1)[0]
    fiber = flat_fiber_curve(rng, grid.nodes, algebroid.rank, amplitude)
    base = np.broadcast_to(np.asarray(x, dtype=float), (grid.n_t, algebroid.chart.dim))
    return A0Path(algebroid, grid, base, fiber)


def zero_poisson_pair(rng, algebroid, grid, matched=True, amplitude=1.0):
    """
    Two A0-paths over the same base point; with matched=True their
    trapezoid integrals agree exactly, otherwise they differ.
    """
    p = zero_poisson_path(rng, algebroid, grid, amplitude=amplitude)
    q = zero_poisson_path(rng, algebroid, grid, x=p.source, amplitude=amplitude)
    h = grid.step
    weight = flat_profile(grid.nodes)
    gap = trapezoid(p.fiber, dx=h, axis=0) - trapezoid(q.fiber, dx=h, axis=0)
    if matched:
        correction = gap / trapezoid(weight, dx=h)
    else:
        # keep the classes well separated
        offset = np.where(gap >= 0.0, 1.0, -1.0) * amplitude
        correction = (gap + offset) / trapezoid(weight, dx=h)
    fiber = q.fiber + weight[:, None] * correction[None, :]
    return p, A0Path(algebroid, grid, q.base, fiber)


# ---------------------------------------------------------------------------
# Paths with nonzero anchor
# ---------------------------------------------------------------------------

def solved_a0_path(rng, algebroid, grid, x0=None, amplitude=0.5):
    """Solve the base over a random flat fiber curve; flatness makes it an A0-path."""
    if x0 is None:
        x0 = 0.5 * algebroid.chart.sample(rng, 1)[0]
    fiber = flat_fiber_curve(rng, grid.nodes, algebroid.rank, amplitude)
    path = solve_base_path(algebroid, x0, fiber, grid)
    return A0Path(algebroid, grid, path.base, path.fiber)


def composable_pair(rng, algebroid, grid, amplitude=0.5):
    """
    (p, q) with target(q) == source(p), so concatenate(p, q) is defined.
    """
    q = solved_a0_path(rng, algebroid, grid, x0=0.25 * algebroid.chart.sample(rng, 1)[0], amplitude=amplitude)
    p = solved_a0_path(rng, algebroid, grid, x0=q.target, amplitude=amplitude)
    return p, q


def linear_family(algebroid, x0, first_fiber, last_fiber, time_grid, eps_grid):
    """a(eps, t) = (1 - eps) a_0(t) + eps a_1(t), bases solved slice by slice."""
    weights = eps_grid.nodes[:, None, None]
    fiber = (1.0 - weights) * np.asarray(first_fiber)[None] + weights * np.asarray(last_fiber)[None]
    return PathFamily.from_fiber(algebroid, x0, fiber, time_grid, eps_grid)


# ---------------------------------------------------------------------------
# so(3) gauge families with closed-form homotopy fields
# ---------------------------------------------------------------------------

def _bump(t):
    return np.sin(np.pi * t) ** 3


def _bump_slope(t):
    return 3.0 * np.pi * np.sin(np.pi * t) ** 2 * np.cos(np.pi * t)


def _ramp(t):
    return t - np.sin(2.0 * np.pi * t) / (2.0 * np.pi)


def _ramp_slope(t):
    return 1.0 - np.cos(2.0 * np.pi * t)


def _rotations(vectors):
    """exp(hat(v)) for v of shape (..., 3)."""
    vectors = np.array(vectors, dtype=float)
    flat = Rotation.from_rotvec(vectors.reshape(-1, 3)).as_matrix()
    return flat.reshape(vectors.shape[:-1] + (3, 3))


@dataclass
class GaugeFamily:
    """
    g(eps, t) = exp(eps s(t) Y1) exp(tau(t) X) exp(eps u(t) Y2) in SO(3).

    fiber = g^-1 d_t g and homotopy = g^-1 d_eps g, both in closed form and
    as vectors (hat(v) w = v x w).
    """
    fiber: np.ndarray
    homotopy: np.ndarray
    group: np.ndarray
    twisted: bool

    def base_curves(self, x0):
        """gamma = g^T x0, the coadjoint base curves on so(3)*."""
        return np.einsum('etji,j->eti', self.group, np.asarray(x0, dtype=float))


def gauge_family(rng, time_grid, eps_grid, twist=False, x_scale=1.5, y_scale=0.6):
    """
    Random so(3) gauge family with fixed endpoint g(eps, 1) = exp(X).

    With twist=True the last factor uses a ramp instead of a bump, so the
    endpoint moves with eps and b(eps, 1) = Y2 (not a homotopy).
    """
    t = time_grid.nodes[None, :, None]
    eps = eps_grid.nodes[:, None, None]
    x = x_scale * rng.uniform(-1.0, 1.0, size=3)
    y1 = y_scale * rng.uniform(-1.0, 1.0, size=3)
    y2 = y_scale * rng.uniform(-1.0, 1.0, size=3)

    s, ds = _bump(t), _bump_slope(t)
    tau, dtau = _ramp(t), _ramp_slope(t)
    u, du = (_ramp(t), _ramp_slope(t)) if twist else (s, ds)

    shape = (eps_grid.n_eps, time_grid.n_t, 3)
    first = _rotations(np.broadcast_to(eps * s * y1, shape))
    middle = _rotations(np.broadcast_to(tau * x, shape))
    last = _rotations(np.broadcast_to(eps * u * y2, shape))
    tail = middle @ last
    group = first @ tail

    def pull_back(matrix, vector):
        # Ad_{R^-1} hat(v) = hat(R^T v)
        return np.einsum('etji,etj->eti', matrix, np.broadcast_to(vector, shape))

    fiber = (pull_back(tail, eps * ds * y1) + pull_back(last, dtau * x)
             + np.broadcast_to(eps * du * y2, shape))
    homotopy = pull_back(tail, s * y1) + np.broadcast_to(u * y2, shape)
    return GaugeFamily(fiber=fiber, homotopy=homotopy, group=group, twisted=twist)


def gauge_path_family(rng, algebroid, time_grid, eps_grid, x0=None, twist=False, **scales):
    """
    PathFamily of a gauge family over a Lie algebra (point chart) or over the
    so(3)* cotangent algebroid (exact base curves g^T x0).
    """
    gauge = gauge_family(rng, time_grid, eps_grid, twist=twist, **scales)
    if algebroid.chart.dim == 0:
        base = np.zeros(gauge.fiber.shape[:2] + (0,))
    else:
        if x0 is None:
            x0 = np.array([1.0, 0.0, 0.0])
        base = gauge.base_curves(x0)
    return PathFamily(algebroid, time_grid, eps_grid, base, gauge.fiber), gauge


# ---------------------------------------------------------------------------
# Random expressions
# ---------------------------------------------------------------------------

def random_polynomial(rng, dim, degree=2, terms=3, scale=1.0):
    """Random polynomial expression in x1..x<dim> with at most `terms` monomials."""
    monomials = []
    for _ in range(terms):
        coefficient = const(round(float(scale * rng.uniform(-1.0, 1.0)), 6))
        exponents = rng.integers(0, degree + 1, size=dim)
        while exponents.sum() > degree:
            exponents[int(rng.integers(0, dim))] -= 1
            exponents = np.maximum(exponents, 0)
        factors = [power(Var(i + 1), int(k)) for i, k in enumerate(exponents) if k > 0]
        monomial = coefficient
        for factor in factors:
            monomial = mul(monomial, factor)
        monomials.append(monomial)
    return sum_exprs(monomials)


def random_even_polynomial(rng, dim, degree=4, terms=3, scale=1.0):
    """Random polynomial with only even total degrees (invariant under x -> -x)."""
    monomials = []
    while len(monomials) < terms:
        exponents = rng.integers(0, degree + 1, size=dim)
        total = int(exponents.sum())
        if total == 0 or total > degree or total % 2:
            continue
        coefficient = const(round(float(scale * rng.uniform(-1.0, 1.0)), 6))
        monomial = coefficient
        for i, k in enumerate(exponents):
            if k > 0:
                monomial = mul(monomial, power(Var(i + 1), int(k)))
        monomials.append(monomial)
    return sum_exprs(monomials)


def random_christoffels(rng, dim, rank, scale=0.3):
    """Christoffel matrices with random affine entries c0 + sum_m c_m x_m."""
    matrices = []
    for _ in range(dim):
        matrix = []
        for _ in range(rank):
            row = []
            for _ in range(rank):
                entry = const(round(float(scale * rng.uniform(-1.0, 1.0)), 6))
                for m in range(dim):
                    entry = add(entry, mul(const(round(float(scale * rng.uniform(-1.0, 1.0)), 6)), Var(m + 1)))
                row.append(entry)
            matrix.append(row)
        matrices.append(matrix)
    return matrices
