"""
The canonical symplectic form on discretized cotangent path space.

A tangent vector to the path space at an A-path is a PathVariation (d_gamma_k,
d_a_k) per node. The form is the trapezoid sum

    omega(d1, d2) = sum_k w_k (<d1_a_k, d2_gamma_k> - <d2_a_k, d1_gamma_k>).
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.algebroid import DEFAULT_SEED, PoissonBivector
from src.expr import Var, compose_expr, eval_expr_array, eval_gradient_array, eval_many
from src.oracles import PAIR, ZERO_POISSON, DegenerateBivectorError
from src.path_space import concatenate, is_homotopic_along_family
from src.report import CheckReport
from src.sampling import smooth_fiber_function
from src.utils.integrators import StageData, grid_derivative, rk4_fixed_grid

logger = logging.getLogger('apaths')


class SymplecticError(ValueError):
    pass


class GridMismatchError(SymplecticError):
    pass


class NotAHomotopyError(SymplecticError):
    pass


class UnsupportedOracleError(SymplecticError):
    pass


@dataclass(frozen=True, eq=False)
class PathVariation:
    """Per-node base variation (n_t, n) and fiber variation (n_t, r)."""
    base: np.ndarray
    fiber: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        fiber = np.asarray(self.fiber, dtype=float)
        if base.ndim != 2 or fiber.ndim != 2 or base.shape[0] != fiber.shape[0]:
            raise GridMismatchError(f"Variation arrays disagree: base {base.shape}, fiber {fiber.shape}")
        object.__setattr__(self, 'base', base)
        object.__setattr__(self, 'fiber', fiber)

    @property
    def n_t(self):
        return self.base.shape[0]

    @classmethod
    def zeros(cls, n_t, dim, rank=None):
        return cls(np.zeros((n_t, dim)), np.zeros((n_t, dim if rank is None else rank)))

    @classmethod
    def random(cls, rng, n_t, dim):
        return cls(rng.standard_normal((n_t, dim)), rng.standard_normal((n_t, dim)))


class PathSpaceForm:
    """Trapezoid weights of a time grid: h/2 at the two ends, h inside."""

    def __init__(self, grid):
        self.grid = grid
        weights = np.full(grid.n_t, grid.step)
        weights[0] = weights[-1] = 0.5 * grid.step
        self.weights = weights


def eval_path_form(form, d1, d2):
    """
    Raises:
        GridMismatchError: If a variation does not match the form's grid
    """
    for variation in (d1, d2):
        if variation.n_t != form.grid.n_t:
            raise GridMismatchError(f"Variation has {variation.n_t} nodes, form expects {form.grid.n_t}")
        if variation.base.shape[1] != variation.fiber.shape[1]:
            raise GridMismatchError("Cotangent path variations need matching base and fiber dimensions")
    if d1.base.shape != d2.base.shape:
        raise GridMismatchError(f"Variations disagree: {d1.base.shape} vs {d2.base.shape}")
    density = np.sum(d1.fiber * d2.base, axis=1) - np.sum(d2.fiber * d1.base, axis=1)
    return float(np.dot(form.weights, density))


def pairing_matrix(form, dim):
    """
    Dense matrix of the form in the coordinates (all base variations, then all
    fiber variations), node-major.
    """
    diagonal = np.kron(np.diag(form.weights), np.eye(dim))
    size = diagonal.shape[0]
    matrix = np.zeros((2 * size, 2 * size))
    matrix[:size, size:] = -diagonal
    matrix[size:, :size] = diagonal
    return matrix


def check_nondegeneracy(grid, dim, tol=1e-10):
    """Smallest singular value of the pairing matrix must exceed tol."""
    matrix = pairing_matrix(PathSpaceForm(grid), dim)
    singular_values = np.linalg.svd(matrix, compute_uv=False)
    smallest = float(singular_values[-1])
    antisymmetry = float(np.max(np.abs(matrix + matrix.T)))
    passed = smallest > tol and antisymmetry == 0.0
    logger.info(f"Path-space form on {grid.n_t} nodes: smallest singular value {smallest:.3e}")
    return CheckReport(name='nondegeneracy', residual=smallest, tolerance=float(tol), passed=passed,
                       details={'size': matrix.shape[0], 'antisymmetry': antisymmetry})


# ---------------------------------------------------------------------------
# Multiplicativity
# ---------------------------------------------------------------------------

def concatenate_variations(dp, dq):
    """
    Variation of concatenate(p, q) induced by variations of p and q, using
    the same junction rule as concatenate.
    """
    n = dp.n_t
    if dq.n_t != n:
        raise GridMismatchError(f"Variations have {dp.n_t} and {dq.n_t} nodes")
    base = np.concatenate([dq.base, dp.base[1:]])
    fiber = np.concatenate([2.0 * dq.fiber, 2.0 * dp.fiber[1:]])
    base[n - 1] = 0.5 * (dq.base[-1] + dp.base[0])
    fiber[n - 1] = dq.fiber[-1] + dp.fiber[0]
    return PathVariation(base, fiber)


def check_multiplicativity(p, q, trials=100, seed=DEFAULT_SEED, tol=1e-12):
    """
    omega on concatenate(p, q) against omega on q plus omega on p.

    Split trials vanish at the junction node, where the identity is exact.
    Straddling trials carry independent junction values; their defect is
    reported with the bound 3 h n (|a1| |g2| + |a2| |g1|) over the junction
    values, and does not fail the check.

    Raises:
        EndpointMismatchError: If p and q are not composable
    """
    if p.fiber.shape[1] != p.base.shape[1]:
        raise SymplecticError("The path-space form needs a cotangent algebroid (rank equal to dimension)")
    joined = concatenate(p, q)
    rng = np.random.default_rng(seed)
    form, form_joined = PathSpaceForm(p.grid), PathSpaceForm(joined.grid)
    n_t, dim = p.grid.n_t, p.base.shape[1]

    split_defect = 0.0
    for _ in range(trials):
        parts = []
        for _ in range(2):
            dp, dq = (PathVariation.random(rng, n_t, dim) for _ in range(2))
            dp.base[0] = dp.fiber[0] = 0.0
            dq.base[-1] = dq.fiber[-1] = 0.0
            parts.append((dp, dq))
        (dp1, dq1), (dp2, dq2) = parts
        joined_value = eval_path_form(form_joined, concatenate_variations(dp1, dq1),
                                      concatenate_variations(dp2, dq2))
        separate = eval_path_form(form, dq1, dq2) + eval_path_form(form, dp1, dp2)
        split_defect = max(split_defect, abs(joined_value - separate))

    straddle_defect = straddle_bound = 0.0
    within_bound = True
    for _ in range(trials):
        dp1, dq1, dp2, dq2 = (PathVariation.random(rng, n_t, dim) for _ in range(4))
        joined_value = eval_path_form(form_joined, concatenate_variations(dp1, dq1),
                                      concatenate_variations(dp2, dq2))
        separate = eval_path_form(form, dq1, dq2) + eval_path_form(form, dp1, dp2)
        pairs = ((dp1, dq1), (dp2, dq2))
        junction = [np.max(np.abs(np.concatenate([dq.fiber[-1], dp.fiber[0]]))) for dp, dq in pairs]
        junction_base = [np.max(np.abs(np.concatenate([dq.base[-1], dp.base[0]]))) for dp, dq in pairs]
        bound = 3.0 * p.grid.step * dim * (junction[0] * junction_base[1] + junction[1] * junction_base[0])
        defect = abs(joined_value - separate)
        within_bound = within_bound and defect <= bound + 1e-12
        straddle_defect = max(straddle_defect, defect)
        straddle_bound = max(straddle_bound, float(bound))

    logger.info(f"Multiplicativity: split defect {split_defect:.3e}, straddle defect {straddle_defect:.3e} "
                f"(bound {straddle_bound:.3e})")
    return CheckReport.from_residual('multiplicativity', split_defect, tol, trials=trials, seed=seed,
                                     straddle_defect=straddle_defect, straddle_bound=straddle_bound,
                                     straddle_within_bound=bool(within_bound))


# ---------------------------------------------------------------------------
# Kernel containment
# ---------------------------------------------------------------------------

def linearized_base_variation(path, fiber_variation, base_variation0, interpolation='cubic'):
    """
    Tangent to the A-path constraint: RK4 for

        d_gamma' = rho(gamma) d_a + (d/d_gamma rho)(gamma)[d_gamma] a,

    with d_a given at the nodes and d_gamma(0) = base_variation0.

    Returns:
        PathVariation
    """
    algebroid = path.algebroid
    fiber_variation = np.asarray(fiber_variation, dtype=float)
    if fiber_variation.shape != path.fiber.shape:
        raise GridMismatchError(f"Fiber variation must have shape {path.fiber.shape}")
    forcing = algebroid.anchor_apply(path.base, fiber_variation)
    jacobian = np.einsum('klmi,ki->kml', algebroid.anchor_derivatives_at(path.base), path.fiber)
    forcing_stages = StageData(forcing, interpolation=interpolation)
    jacobian_stages = StageData(jacobian, interpolation=interpolation)

    def rhs(k, stage, y):
        return forcing_stages.at(k, stage) + jacobian_stages.at(k, stage) @ y

    base = rk4_fixed_grid(rhs, np.asarray(base_variation0, dtype=float), path.grid.step, path.grid.n_t - 1)
    return PathVariation(base, fiber_variation)


def foliation_direction(family):
    """(d_eps gamma, d_eps a) at eps = 0, by second-order differences in eps."""
    h_eps = family.eps_grid.step
    base = grid_derivative(family.base, h_eps, axis=0)[0]
    fiber = grid_derivative(family.fiber, h_eps, axis=0)[0]
    return PathVariation(base, fiber)


def check_kernel_containment(family, probes=50, seed=DEFAULT_SEED, tol=None, homotopy_tol=None):
    """
    Pair the homotopy direction of a family with constraint-tangent probes.

    Raises:
        NotAHomotopyError: If b(eps, 1) is not small along the family
    """
    h_t, h_eps = family.time_grid.step, family.eps_grid.step
    tol = 100.0 * (h_t ** 2 + h_eps ** 2) if tol is None else tol
    decision = is_homotopic_along_family(family, tol=homotopy_tol)
    if not decision.passed:
        raise NotAHomotopyError(f"Family is not a homotopy: max |b(eps,1)| = {decision.residual:.3e}")

    reference = family.slice(0)
    if reference.fiber.shape[1] != reference.base.shape[1]:
        raise SymplecticError("The path-space form needs a cotangent algebroid (rank equal to dimension)")
    form = PathSpaceForm(family.time_grid)
    direction = foliation_direction(family)
    rng = np.random.default_rng(seed)
    nodes = family.time_grid.nodes
    dim = reference.base.shape[1]

    worst = 0.0
    for _ in range(probes):
        fiber_variation = smooth_fiber_function(rng, dim)(nodes)
        probe = linearized_base_variation(reference, fiber_variation, rng.standard_normal(dim))
        worst = max(worst, abs(eval_path_form(form, direction, probe)))
    logger.info(f"Kernel containment: max pairing {worst:.3e} over {probes} probes (tol {tol:.1e})")
    return CheckReport.from_residual('kernel-containment', worst, tol, probes=probes, seed=seed,
                                     homotopy_residual=decision.residual)


# ---------------------------------------------------------------------------
# Reduced brackets on explicit symplectic groupoids
# ---------------------------------------------------------------------------

@dataclass
class SymplecticGroupoidModel:
    """
    An explicit symplectic groupoid over a chart of dimension n.

    Arrow coordinates are x1..x<2n>; `poisson_at` returns the Poisson matrix of
    the symplectic form at arrow points; `source` and `target` are maps given
    by n expressions in the arrow coordinates.
    """
    name: str
    bivector: PoissonBivector
    source: list
    target: list
    poisson_at: Callable
    sample: Callable

    @property
    def dim(self):
        return self.bivector.chart.dim


def cotangent_bundle_model(chart):
    """T*M with the canonical form, {x_i, xi_j} = delta_ij; source = target = projection."""
    n = chart.dim
    matrix = np.zeros((2 * n, 2 * n))
    matrix[:n, n:] = np.eye(n)
    matrix[n:, :n] = -np.eye(n)
    projection = [Var(i + 1) for i in range(n)]

    def poisson_at(points):
        return np.broadcast_to(matrix, points.shape[:-1] + matrix.shape)

    def sample(rng, count):
        return np.concatenate([chart.sample(rng, count), rng.uniform(-2.0, 2.0, size=(count, n))], axis=1)

    return SymplecticGroupoidModel(ZERO_POISSON, PoissonBivector(chart), projection, projection,
                                   poisson_at, sample)


def pair_groupoid_model(pi):
    """M x M with omega (+) (-omega): Poisson matrix diag(pi(x), -pi(y)); source = first factor."""
    chart = pi.chart
    n = chart.dim
    first = [Var(i + 1) for i in range(n)]
    second = [Var(n + i + 1) for i in range(n)]

    def poisson_at(points):
        points = np.asarray(points, dtype=float)
        matrix = np.zeros(points.shape[:-1] + (2 * n, 2 * n))
        matrix[..., :n, :n] = pi.matrix_at(points[..., :n])
        matrix[..., n:, n:] = -pi.matrix_at(points[..., n:])
        return matrix

    def sample(rng, count):
        return np.concatenate([chart.sample(rng, count), chart.sample(rng, count)], axis=1)

    return SymplecticGroupoidModel(PAIR, pi, first, second, poisson_at, sample)


def groupoid_model(selector, pi):
    if selector == ZERO_POISSON:
        return cotangent_bundle_model(pi.chart)
    if selector == PAIR:
        return pair_groupoid_model(pi)
    raise UnsupportedOracleError(f"No explicit symplectic groupoid for {selector!r}")


def _bracket_defect(model, points, f, g, projection, sign):
    n2 = 2 * model.dim
    lifted_f = compose_expr(f, projection)
    lifted_g = compose_expr(g, projection)
    grad_f = eval_gradient_array(lifted_f, n2, points)
    grad_g = eval_gradient_array(lifted_g, n2, points)
    lifted = np.einsum('si,sij,sj->s', grad_f, model.poisson_at(points), grad_g)
    base_points = eval_many(projection, points)
    expected = eval_expr_array(model.bivector.bracket(f, g), base_points)
    return float(np.max(np.abs(lifted - sign * expected)))


def oracle_reduced_bracket(model, f, g, samples=100, seed=DEFAULT_SEED, tol=1e-12):
    """
    {f o s, g o s} against {f, g} o s on random arrows (the source map is
    Poisson); the target-map defect of {f o t, g o t} = -{f, g} o t is
    reported alongside.
    """
    rng = np.random.default_rng(seed)
    points = model.sample(rng, samples)
    if model.name == PAIR:
        determinants = np.linalg.det(model.bivector.matrix_at(points[:, :model.dim]))
        if np.min(np.abs(determinants)) <= 1e-12:
            raise DegenerateBivectorError("Pair groupoid needs a nondegenerate bivector at every sample")
    source_defect = _bracket_defect(model, points, f, g, model.source, 1.0)
    target_defect = _bracket_defect(model, points, f, g, model.target, -1.0)
    residual = max(source_defect, target_defect)
    return CheckReport.from_residual(f'reduced-bracket-{model.name}', residual, tol, samples=samples, seed=seed,
                                     source_defect=source_defect, target_defect=target_defect)
