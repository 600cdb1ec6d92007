"""
Exactly solvable groupoids used as ground truth for path classes.

Three class maps send an A0-path to its class in a known groupoid:

    development   Lie algebra with a matrix representation: g' = g M(a), g(0) = I
    zero-poisson  cotangent algebroid of pi = 0: (gamma(0), integral of a)
    pair          cotangent algebroid of a constant nondegenerate pi: (gamma(0), gamma(1))

Class composition follows concatenate: class(p).compose(class(q)) is the class
of concatenate(p, q), which runs q first.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from src.algebroid import Chart, PoissonBivector, cotangent_algebroid, lie_algebra_algebroid
from src.expr import is_constant
from src.path_space import (
    EpsilonGrid, PathFamily, TimeGrid, concatenate, constant_path, default_family,
    is_homotopic_along_family, reverse, solve_homotopy_equation,
)
from src.report import CheckReport, convergence_rows
from src.sampling import smooth_fiber_function
from src.utils.integrators import (
    StageData, five_point_derivative, grid_derivative, rk4_fixed_grid,
)

logger = logging.getLogger('apaths')

ZERO_POISSON = 'zero-poisson'
PAIR = 'pair'
DEVELOPMENT = 'development'
ORACLES = (ZERO_POISSON, PAIR, DEVELOPMENT)


class OracleError(ValueError):
    pass


class RepresentationMismatchError(OracleError):
    pass


class WrongAlgebroidError(OracleError):
    pass


class DegenerateBivectorError(OracleError):
    pass


# ---------------------------------------------------------------------------
# so(3)
# ---------------------------------------------------------------------------

def so3_structure_constants():
    """c[i, j, k] = c^k_ij = epsilon_ijk."""
    c = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        c[i, j, k] = 1.0
        c[j, i, k] = -1.0
    return c


def so3_generators():
    """L_i with (L_i)_jk = -epsilon_ijk, so hat(v) w = v x w and [L_1, L_2] = L_3."""
    return -so3_structure_constants()


def so3_algebra():
    return lie_algebra_algebroid(so3_structure_constants(), name='so3')


def so3_coadjoint_bivector(chart=None):
    """Lie-Poisson structure on so(3)*: pi_12 = x3, pi_23 = x1, pi_31 = x2."""
    chart = chart or Chart.box(3)
    return PoissonBivector(chart, {(0, 1): 'x3', (1, 2): 'x1', (2, 0): 'x2'})


def so3_cotangent(chart=None):
    return cotangent_algebroid(so3_coadjoint_bivector(chart), name='so3*')


class MatrixRepresentation:
    """
    Generators M_1..M_r of a matrix representation of the fiber bracket.

    Args:
        generators: Array of shape (r, d, d)
        orthogonal: Whether developments live in SO(d) (enables projection)
    """

    def __init__(self, generators, orthogonal=False, name='representation'):
        generators = np.asarray(generators, dtype=float)
        if generators.ndim != 3 or generators.shape[1] != generators.shape[2]:
            raise RepresentationMismatchError(f"Generators must have shape (r, d, d), got {generators.shape}")
        self.generators = generators
        self.orthogonal = orthogonal
        self.name = name
        self._flat = generators.reshape(generators.shape[0], -1).T

    @property
    def rank(self):
        return self.generators.shape[0]

    @property
    def dimension(self):
        return self.generators.shape[1]

    def matrix_of(self, vectors):
        """M(a) for fiber values of shape (..., r) -> (..., d, d)."""
        return np.einsum('...i,ijk->...jk', np.asarray(vectors, dtype=float), self.generators)

    def coordinates(self, matrices):
        """Least-squares coordinates of (..., d, d) matrices in the generator basis."""
        matrices = np.asarray(matrices, dtype=float)
        flat = matrices.reshape(matrices.shape[:-2] + (-1,))
        solution, _, _, _ = np.linalg.lstsq(self._flat, flat.reshape(-1, flat.shape[-1]).T, rcond=None)
        return solution.T.reshape(matrices.shape[:-2] + (self.rank,))

    def check_against(self, algebroid, tol=1e-10):
        """
        Verify [M_i, M_j] = sum_k c^k_ij M_k with the algebroid's fiber bracket
        at the chart center.

        Raises:
            RepresentationMismatchError: On a rank mismatch or a failed bracket relation
        """
        if algebroid.rank != self.rank:
            raise RepresentationMismatchError(
                f"Representation has {self.rank} generators, algebroid has rank {algebroid.rank}")
        chart = algebroid.chart
        center = 0.5 * (np.asarray(chart.lower, dtype=float) + np.asarray(chart.upper, dtype=float))
        structure = algebroid.structure_at(center)
        m = self.generators
        commutators = np.einsum('iab,jbc->ijac', m, m) - np.einsum('jab,ibc->ijac', m, m)
        images = np.einsum('kij,kac->ijac', structure, m)
        defect = float(np.max(np.abs(commutators - images), initial=0.0))
        if defect > tol:
            raise RepresentationMismatchError(
                f"Generators do not represent the bracket of {algebroid.name} (defect {defect:.3e})")
        return defect


def so3_representation():
    return MatrixRepresentation(so3_generators(), orthogonal=True, name='so3')


# ---------------------------------------------------------------------------
# Development map
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MatrixGroupElement:
    matrix: np.ndarray
    orthogonal: bool = False

    def __matmul__(self, other):
        return MatrixGroupElement(self.matrix @ other.matrix, self.orthogonal and other.orthogonal)

    def inverse(self):
        if self.orthogonal:
            return MatrixGroupElement(self.matrix.T.copy(), True)
        return MatrixGroupElement(np.linalg.inv(self.matrix), False)

    def orthogonality_residual(self):
        if not self.orthogonal:
            return 0.0
        d = self.matrix.shape[0]
        gram = float(np.max(np.abs(self.matrix.T @ self.matrix - np.eye(d))))
        return max(gram, abs(float(np.linalg.det(self.matrix)) - 1.0))

    @classmethod
    def identity(cls, dimension, orthogonal=False):
        return cls(np.eye(dimension), orthogonal)


def _polar_projection(k, g):
    u, _, vt = np.linalg.svd(g)
    return u @ vt


def develop(representation, fiber, step, interpolation='cubic'):
    """
    RK4 trajectory of g' = g M(a), g(0) = I.

    Args:
        representation: MatrixRepresentation
        fiber: Fiber values with the time axis first, shape (n_t, ..., r)
        step: Time step

    Returns:
        numpy.ndarray: Group elements, shape (n_t, ..., d, d)
    """
    fiber = np.asarray(fiber, dtype=float)
    if fiber.shape[-1] != representation.rank:
        raise RepresentationMismatchError(
            f"Fiber rank {fiber.shape[-1]} does not match {representation.rank} generators")
    stages = StageData(representation.matrix_of(fiber), interpolation=interpolation)
    identity = np.broadcast_to(np.eye(representation.dimension),
                               fiber.shape[1:-1] + (representation.dimension,) * 2)
    projection = _polar_projection if representation.orthogonal else None
    return rk4_fixed_grid(lambda k, stage, g: g @ stages.at(k, stage), identity, step,
                          fiber.shape[0] - 1, post_step=projection)


def development_map(path, representation, interpolation='cubic'):
    """The endpoint g(1) of the development of a path's fiber curve."""
    if path.algebroid.rank != representation.rank:
        raise RepresentationMismatchError(
            f"Path rank {path.algebroid.rank} does not match {representation.rank} generators")
    trajectory = develop(representation, path.fiber, path.grid.step, interpolation)
    return MatrixGroupElement(trajectory[-1], representation.orthogonal)


def development_tangent(representation, fiber, variation, step):
    """
    g(1) and g(1)^-1 dg(1) for the variation a -> a + s da, from the joint system

        g' = g M(a),   G' = G M(a) + g M(da),   g(0) = I, G(0) = 0.

    fiber has shape (n_t, ..., r); variation broadcasts against it.
    Returns (g(1), coordinates of g(1)^-1 G(1)).
    """
    fiber = np.asarray(fiber, dtype=float)
    variation = np.broadcast_to(np.asarray(variation, dtype=float), fiber.shape)
    a_stages = StageData(representation.matrix_of(fiber))
    da_stages = StageData(representation.matrix_of(variation))
    d = representation.dimension
    batch = fiber.shape[1:-1]
    start = np.zeros((2,) + batch + (d, d))
    start[0] = np.eye(d)

    def rhs(k, stage, y):
        a, da = a_stages.at(k, stage), da_stages.at(k, stage)
        return np.stack([y[0] @ a, y[1] @ a + y[0] @ da])

    trajectory = rk4_fixed_grid(rhs, start, step, fiber.shape[0] - 1)
    g, tangent = trajectory[-1]
    return g, representation.coordinates(np.linalg.solve(g, tangent))


def development_log_derivative(family, representation, stencil=5, interpolation='cubic'):
    """
    g(eps, 1)^-1 d_eps g(eps, 1) in generator coordinates, shape (n_eps, r).

    The eps-derivative uses five-point (stencil=5) or second-order three-point
    (stencil=3) differences on the family's eps grid.
    """
    if stencil not in (3, 5):
        raise OracleError(f"Stencil must be 3 or 5, got {stencil}")
    fiber = np.swapaxes(family.fiber, 0, 1)
    endpoints = develop(representation, fiber, family.time_grid.step, interpolation)[-1]
    h_eps = family.eps_grid.step
    if stencil == 5:
        derivative = five_point_derivative(endpoints, h_eps)
    else:
        derivative = grid_derivative(endpoints, h_eps, axis=0)
    return representation.coordinates(np.linalg.solve(endpoints, derivative))


def compare_homotopy_with_development(family, representation, tol=1e-4, stencil=5, homotopy_field=None):
    """
    Relative defect between b(eps, 1) and the logarithmic eps-derivative of the
    development endpoint.
    """
    if homotopy_field is None:
        homotopy_field = solve_homotopy_equation(family)
    solved = homotopy_field.at_end()
    expected = development_log_derivative(family, representation, stencil=stencil)
    scale = max(1.0, float(np.max(np.abs(expected))))
    residual = float(np.max(np.abs(solved - expected))) / scale
    logger.debug(f"Homotopy vs development: relative defect {residual:.3e}")
    return CheckReport.from_residual('homotopy-vs-development', residual, tol,
                                     n_t=family.time_grid.n_t, n_eps=family.eps_grid.n_eps,
                                     stencil=stencil)


def development_convergence(rng, n_t_values, n_eps=9, families=3, algebroid=None,
                            representation=None, reference_factor=4):
    """
    Observed time-discretization order of the homotopy solver.

    Linear families a(eps, t) = (1 - eps) a_0(t) + eps a_1(t) are solved on each
    n_t; the reference b(eps, 1) comes from the joint development system on a
    grid `reference_factor` times finer. Linear dependence on eps makes the
    solver's eps-differences exact, so only the time error remains.

    Returns:
        list: Rows {n_t, defect, order}
    """
    algebroid = algebroid or so3_algebra()
    representation = representation or so3_representation()
    representation.check_against(algebroid)
    n_t_values = sorted(int(n) for n in n_t_values)
    eps_grid = EpsilonGrid(n_eps)
    reference_grid = TimeGrid((n_t_values[-1] - 1) * reference_factor + 1)
    weights = eps_grid.nodes[None, :, None]
    x0 = np.zeros(algebroid.chart.dim)

    defects = np.zeros(len(n_t_values))
    for _ in range(families):
        first = smooth_fiber_function(rng, algebroid.rank)
        last = smooth_fiber_function(rng, algebroid.rank)

        t_ref = reference_grid.nodes
        a0, a1 = first(t_ref), last(t_ref)
        reference_fiber = (1.0 - weights) * a0[:, None] + weights * a1[:, None]
        _, reference = development_tangent(representation, reference_fiber, (a1 - a0)[:, None],
                                           reference_grid.step)

        for index, n_t in enumerate(n_t_values):
            grid = TimeGrid(n_t)
            a0, a1 = first(grid.nodes), last(grid.nodes)
            fiber = (1.0 - weights.swapaxes(0, 1)) * a0[None] + weights.swapaxes(0, 1) * a1[None]
            family = PathFamily.from_fiber(algebroid, x0, fiber, grid, eps_grid)
            solved = solve_homotopy_equation(family).at_end()
            defects[index] = max(defects[index], float(np.max(np.abs(solved - reference))))

    rows = convergence_rows(n_t_values, defects)
    for row in rows:
        logger.info(f"Convergence n_t={row['n_t']}: defect {row['defect']:.3e}, order {row['order']}")
    return rows


# ---------------------------------------------------------------------------
# Classes
# ---------------------------------------------------------------------------

class OracleClass(ABC):
    """Element of an oracle groupoid."""
    kind = 'abstract'

    @abstractmethod
    def compose(self, other):
        """Class of concatenate(p, q), with self the class of p and other the class of q."""

    @abstractmethod
    def inverse(self):
        """The class of the reversed path."""

    @abstractmethod
    def distance(self, other):
        """Max-norm distance between two classes of the same kind."""

    def _require_same_kind(self, other):
        if type(other) is not type(self):
            raise OracleError(f"Cannot combine {self.kind} class with {getattr(other, 'kind', other)!r}")


@dataclass(frozen=True, eq=False)
class DevelopmentClass(OracleClass):
    element: MatrixGroupElement
    kind = DEVELOPMENT

    def compose(self, other):
        self._require_same_kind(other)
        return DevelopmentClass(other.element @ self.element)

    def inverse(self):
        return DevelopmentClass(self.element.inverse())

    def distance(self, other):
        self._require_same_kind(other)
        return float(np.max(np.abs(self.element.matrix - other.element.matrix)))

    @classmethod
    def identity(cls, dimension, orthogonal=True):
        return cls(MatrixGroupElement.identity(dimension, orthogonal))


@dataclass(frozen=True, eq=False)
class FiberwiseCotangentClass(OracleClass):
    base_point: np.ndarray
    covector: np.ndarray
    kind = ZERO_POISSON

    def compose(self, other, tol=1e-9):
        self._require_same_kind(other)
        gap = float(np.max(np.abs(self.base_point - other.base_point), initial=0.0))
        if gap > tol:
            raise OracleError(f"Covectors over different base points cannot be added (gap {gap:.3e})")
        return FiberwiseCotangentClass(self.base_point, self.covector + other.covector)

    def inverse(self):
        return FiberwiseCotangentClass(self.base_point, -self.covector)

    def distance(self, other):
        self._require_same_kind(other)
        return float(max(np.max(np.abs(self.base_point - other.base_point), initial=0.0),
                         np.max(np.abs(self.covector - other.covector), initial=0.0)))

    @classmethod
    def identity(cls, base_point):
        base_point = np.asarray(base_point, dtype=float)
        return cls(base_point, np.zeros_like(base_point))


@dataclass(frozen=True, eq=False)
class PairGroupoidClass(OracleClass):
    source: np.ndarray
    target: np.ndarray
    kind = PAIR

    def compose(self, other, tol=1e-9):
        self._require_same_kind(other)
        gap = float(np.max(np.abs(other.target - self.source)))
        if gap > tol:
            raise OracleError(f"Pairs are not composable (gap {gap:.3e})")
        return PairGroupoidClass(other.source, self.target)

    def inverse(self):
        return PairGroupoidClass(self.target, self.source)

    def distance(self, other):
        self._require_same_kind(other)
        return float(max(np.max(np.abs(self.source - other.source)),
                         np.max(np.abs(self.target - other.target))))

    @classmethod
    def identity(cls, point):
        point = np.asarray(point, dtype=float)
        return cls(point, point)


def _is_zero_poisson(algebroid):
    return (algebroid.chart.dim > 0 and algebroid.rank == algebroid.chart.dim
            and algebroid.has_zero_anchor() and not algebroid.structure)


def zero_poisson_class(path):
    """(gamma(0), trapezoid integral of a) in T*M with fiberwise addition."""
    if not _is_zero_poisson(path.algebroid):
        raise WrongAlgebroidError(f"{path.algebroid.name} is not the cotangent algebroid of the zero bivector")
    covector = trapezoid(path.fiber, dx=path.grid.step, axis=0)
    return FiberwiseCotangentClass(path.source.copy(), covector)


def check_pair_algebroid(algebroid, tol=1e-12):
    """
    Raises unless the algebroid is the cotangent algebroid of a constant
    nondegenerate bivector.
    """
    if algebroid.chart.dim == 0 or algebroid.rank != algebroid.chart.dim or algebroid.structure:
        raise WrongAlgebroidError(f"{algebroid.name} is not the cotangent algebroid of a constant bivector")
    if not all(is_constant(e) for row in algebroid.anchor for e in row):
        raise WrongAlgebroidError(f"{algebroid.name} has a non-constant anchor")
    matrix = algebroid.anchor_at(np.zeros(algebroid.chart.dim))
    if abs(float(np.linalg.det(matrix))) <= tol:
        raise DegenerateBivectorError(f"Bivector of {algebroid.name} is degenerate")
    return matrix


def pair_groupoid_class(path):
    check_pair_algebroid(path.algebroid)
    return PairGroupoidClass(path.source.copy(), path.target.copy())


def development_class(path, representation):
    return DevelopmentClass(development_map(path, representation))


def oracle_class_map(selector, representation=None):
    """Callable path -> OracleClass for an oracle selector."""
    if selector == ZERO_POISSON:
        return zero_poisson_class
    if selector == PAIR:
        return pair_groupoid_class
    if selector == DEVELOPMENT:
        representation = representation or so3_representation()
        return lambda path: development_class(path, representation)
    raise OracleError(f"Unknown oracle {selector!r}; expected one of {', '.join(ORACLES)}")


def _identity_class(selector, point, representation):
    if selector == ZERO_POISSON:
        return FiberwiseCotangentClass.identity(point)
    if selector == PAIR:
        return PairGroupoidClass.identity(point)
    representation = representation or so3_representation()
    return DevelopmentClass.identity(representation.dimension, representation.orthogonal)


def _class_drift(family, selector, class_of, representation):
    """max over eps of the distance between the class of slice eps and of slice 0."""
    if selector == DEVELOPMENT:
        representation = representation or so3_representation()
        endpoints = develop(representation, np.swapaxes(family.fiber, 0, 1), family.time_grid.step)[-1]
        return float(np.max(np.abs(endpoints - endpoints[0])))
    first = class_of(family.slice(0))
    return max(class_of(family.slice(j)).distance(first) for j in range(family.eps_grid.n_eps))


def check_oracle_functoriality(pairs, selector, representation=None, families=(), tol=1e-6,
                               n_eps=None):
    """
    Groupoid laws in an oracle codomain, plus agreement of homotopy decisions
    with equality of classes.

    Args:
        pairs: Sequence of (p, q) with target(q) == source(p)
        selector: 'zero-poisson', 'pair' or 'development'
        representation: MatrixRepresentation for the development oracle
        families: Extra PathFamily objects whose decision is compared with the
            development endpoints along the family
        tol: Class defect tolerance
        n_eps: Epsilon nodes of default families (default: n_t)

    Returns:
        CheckReport: residual is the worst law defect; fails on any disagreement
    """
    class_of = oracle_class_map(selector, representation)
    compose_defect = inverse_defect = identity_defect = 0.0
    decisions = agreements = 0

    for p, q in pairs:
        class_p, class_q = class_of(p), class_of(q)
        compose_defect = max(compose_defect, class_of(concatenate(p, q)).distance(class_p.compose(class_q)))
        inverse_defect = max(inverse_defect, class_of(reverse(p)).distance(class_p.inverse()))
        unit = class_of(constant_path(p.algebroid, p.source, p.grid))
        identity_defect = max(identity_defect, unit.distance(_identity_class(selector, p.source, representation)))

        if selector == ZERO_POISSON and np.allclose(p.source, q.source):
            family = default_family(p, q, n_eps or p.grid.n_t)
            homotopic = is_homotopic_along_family(family).passed
            decisions += 1
            agreements += homotopic == (class_p.distance(class_q) < tol)

    family_tol = 1e-4
    for family in families:
        homotopic = is_homotopic_along_family(family).passed
        drift = _class_drift(family, selector, class_of, representation)
        decisions += 1
        agreements += homotopic == (drift < family_tol)

    residual = max(compose_defect, inverse_defect, identity_defect)
    agreement = agreements / decisions if decisions else 1.0
    report = CheckReport.from_residual(f'functoriality-{selector}', residual, tol,
                                       pairs=len(pairs), compose=compose_defect, inverse=inverse_defect,
                                       identity=identity_defect, decisions=decisions, agreement=agreement)
    if agreements != decisions:
        report.passed = False
        logger.warning(f"Homotopy decisions disagree with {selector} classes in "
                       f"{decisions - agreements} of {decisions} cases")
    return report
