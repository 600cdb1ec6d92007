"""
Chart-local Lie algebroids.

An algebroid lives on one box chart with a trivialized bundle of rank r:
the anchor is an n x r matrix of expressions (column i is rho(e_i)), the
bracket is given by structure functions c^k_ij with [e_i, e_j] = sum_k c^k_ij e_k
(stored for i < j only), and an optional connection is given by Christoffel
matrices Gamma_m (one r x r matrix per base coordinate, nabla_X s = X(s) + Gamma(X) s).

Sign convention: {f, g} = sum_ij pi_ij d_i f d_j g and rho(dx_i) = sum_j pi_ij d_j,
so rho(dx_i) is the Hamiltonian vector field of x_i.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from src.expr import (
    ONE, ZERO, add, as_expr, diff_expr, eval_expr_array, is_constant, mul, neg,
    print_expr, sub, sum_exprs,
)
from src.report import CheckReport

logger = logging.getLogger('apaths')

DEFAULT_SEED = 1729


class AlgebroidError(ValueError):
    pass


class JacobiViolationError(AlgebroidError):
    pass


@dataclass(frozen=True)
class Chart:
    """Axis-aligned box chart; dim 0 is the one-point chart."""
    dim: int
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        if self.dim < 0:
            raise AlgebroidError(f"Chart dimension must be non-negative, got {self.dim}")
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise AlgebroidError(f"Chart bounds must have {self.dim} entries")
        for axis, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if not lo < hi:
                raise AlgebroidError(f"Chart axis {axis + 1}: lower bound {lo} is not below upper bound {hi}")

    @classmethod
    def box(cls, dim, half_width=2.0):
        return cls(dim, tuple([-float(half_width)] * dim), tuple([float(half_width)] * dim))

    @classmethod
    def from_bounds(cls, bounds):
        bounds = [tuple(float(v) for v in pair) for pair in bounds]
        return cls(len(bounds), tuple(b[0] for b in bounds), tuple(b[1] for b in bounds))

    @classmethod
    def point(cls):
        return cls(0, (), ())

    def contains(self, point, tol=0.0):
        point = np.asarray(point, dtype=float)
        if point.shape[-1] != self.dim:
            return False
        return bool(np.all(point >= np.asarray(self.lower) - tol)
                    and np.all(point <= np.asarray(self.upper) + tol))

    def sample(self, rng, count):
        """Uniform random points, shape (count, dim)."""
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        return lower + (upper - lower) * rng.random((count, self.dim))


def _expr_grid(exprs, dim):
    return tuple(tuple(as_expr(e, dim) for e in row) for row in exprs)


def _evaluate_tensor(exprs, points, shape):
    """Evaluate a flat list of expressions at points -> (..., *shape)."""
    points = np.asarray(points, dtype=float)
    batch = points.shape[:-1]
    if not exprs:
        return np.zeros(batch + shape)
    values = np.empty(batch + (len(exprs),))
    for index, e in enumerate(exprs):
        if e == ZERO:
            values[..., index] = 0.0
        else:
            values[..., index] = eval_expr_array(e, points)
    return values.reshape(batch + shape)


@dataclass(frozen=True)
class Section:
    """Coefficients of a section in the frame e_1..e_r."""
    components: Tuple

    def __post_init__(self):
        object.__setattr__(self, 'components', tuple(self.components))

    @property
    def rank(self):
        return len(self.components)

    @classmethod
    def frame(cls, rank, index):
        """The constant frame section e_<index> (0-based)."""
        return cls(tuple(ONE if i == index else ZERO for i in range(rank)))

    def evaluate(self, points):
        return _evaluate_tensor(list(self.components), points, (self.rank,))

    def __str__(self):
        return '(' + ', '.join(print_expr(c) for c in self.components) + ')'


class Algebroid:
    """
    A Lie algebroid on a single chart with trivialized bundle.

    Args:
        chart: Base chart
        rank: Fiber rank r
        anchor: n x r expressions, anchor[m][i] = m-th component of rho(e_i)
        structure: Mapping (i, j) -> r expressions c^k_ij, 0-based with i < j.
            Pairs with i > j are stored negated; missing pairs are zero.
        connection: Optional n matrices of r x r expressions, connection[m][k][l]
        name: Label used in logs and reports
    """

    def __init__(self, chart, rank, anchor, structure=None, connection=None, name='algebroid'):
        if rank < 1:
            raise AlgebroidError(f"Rank must be positive, got {rank}")
        n = chart.dim
        self.chart = chart
        self.rank = rank
        self.name = name

        anchor = _expr_grid(anchor, n) if n else ()
        if len(anchor) != n or any(len(row) != rank for row in anchor):
            raise AlgebroidError(f"Anchor must be a {n} x {rank} matrix")
        self.anchor = anchor

        self.structure = self._normalize_structure(structure or {})

        if connection is None:
            connection = [[[ZERO] * rank for _ in range(rank)] for _ in range(n)]
        if len(connection) != n:
            raise AlgebroidError(f"Connection needs {n} Christoffel matrices, got {len(connection)}")
        self.connection = tuple(_expr_grid(matrix, n) for matrix in connection)
        for matrix in self.connection:
            if len(matrix) != rank or any(len(row) != rank for row in matrix):
                raise AlgebroidError(f"Christoffel matrices must be {rank} x {rank}")

        self._anchor_flat = [e for row in self.anchor for e in row]
        self._christoffel_flat = [e for matrix in self.connection for row in matrix for e in row]
        self._anchor_derivatives = None

    def _normalize_structure(self, structure):
        rank, n = self.rank, self.chart.dim
        stored: Dict[Tuple[int, int], Tuple] = {}
        for (i, j), components in structure.items():
            if not (0 <= i < rank and 0 <= j < rank):
                raise AlgebroidError(f"Structure index ({i}, {j}) out of range for rank {rank}")
            if i == j:
                raise AlgebroidError(f"Structure functions c^k_ii are zero by antisymmetry; got pair ({i}, {j})")
            components = [as_expr(c, n) for c in components]
            if len(components) != rank:
                raise AlgebroidError(f"Structure pair ({i}, {j}) needs {rank} components")
            if i > j:
                i, j = j, i
                components = [neg(c) for c in components]
            if (i, j) in stored:
                raise AlgebroidError(f"Structure pair ({i}, {j}) given twice")
            stored[(i, j)] = tuple(components)
        return stored

    # -- symbolic access -------------------------------------------------------

    def structure_function(self, k, i, j):
        """c^k_ij as an expression (antisymmetric in i, j)."""
        if i == j:
            return ZERO
        if i < j:
            return self.structure.get((i, j), (ZERO,) * self.rank)[k]
        return neg(self.structure.get((j, i), (ZERO,) * self.rank)[k])

    def anchor_of(self, section):
        """rho(s) as n expressions."""
        return [sum_exprs(mul(self.anchor[m][i], section.components[i]) for i in range(self.rank))
                for m in range(self.chart.dim)]

    def apply_vector_field(self, components, f):
        """X(f) for a vector field given by n expressions."""
        return sum_exprs(mul(components[m], diff_expr(f, m + 1)) for m in range(self.chart.dim))

    def anchor_derivatives(self):
        """d_l rho_{m i} as a nested tuple [l][m][i] (cached)."""
        if self._anchor_derivatives is None:
            n = self.chart.dim
            self._anchor_derivatives = tuple(
                tuple(tuple(diff_expr(self.anchor[m][i], l + 1) for i in range(self.rank)) for m in range(n))
                for l in range(n))
        return self._anchor_derivatives

    def anchor_derivatives_at(self, points):
        """d_l rho_{m i} at points -> (..., n, n, r) indexed [l, m, i]."""
        n, r = self.chart.dim, self.rank
        derivatives = self.anchor_derivatives()
        flat = [derivatives[l][m][i] for l in range(n) for m in range(n) for i in range(r)]
        return _evaluate_tensor(flat, points, (n, n, r))

    def with_connection(self, connection, name=None):
        structure = dict(self.structure)
        return Algebroid(self.chart, self.rank, self.anchor, structure, connection,
                         name=name or f"{self.name}+connection")

    def has_zero_anchor(self):
        return all(e == ZERO for e in self._anchor_flat)

    def has_constant_fields(self):
        return all(is_constant(e) for e in self._anchor_flat) and all(
            is_constant(c) for comps in self.structure.values() for c in comps)

    # -- numeric access ----------------------------------------------------------

    def anchor_at(self, points):
        """Anchor matrices at points (..., n) -> (..., n, r)."""
        return _evaluate_tensor(self._anchor_flat, points, (self.chart.dim, self.rank))

    def structure_at(self, points):
        """Structure functions at points -> (..., r, r, r) indexed [k, i, j]."""
        points = np.asarray(points, dtype=float)
        r = self.rank
        values = np.zeros(points.shape[:-1] + (r, r, r))
        for (i, j), components in self.structure.items():
            block = _evaluate_tensor(list(components), points, (r,))
            values[..., :, i, j] = block
            values[..., :, j, i] = -block
        return values

    def christoffel_at(self, points):
        """Christoffel matrices at points -> (..., n, r, r) indexed [m, k, l]."""
        n, r = self.chart.dim, self.rank
        return _evaluate_tensor(self._christoffel_flat, points, (n, r, r))

    def anchor_apply(self, points, fiber):
        """rho(a) at points; fiber has shape (..., r) -> (..., n)."""
        return np.einsum('...mi,...i->...m', self.anchor_at(points), fiber)

    def __repr__(self):
        return f"Algebroid(name={self.name!r}, dim={self.chart.dim}, rank={self.rank})"


@dataclass
class PoissonBivector:
    """
    Antisymmetric bivector with {x_i, x_j} = pi_ij, stored for i < j (0-based).
    """
    chart: Chart
    entries: Dict[Tuple[int, int], object] = field(default_factory=dict)

    def __post_init__(self):
        n = self.chart.dim
        stored = {}
        for (i, j), value in dict(self.entries).items():
            if not (0 <= i < n and 0 <= j < n):
                raise AlgebroidError(f"Bivector index ({i + 1}, {j + 1}) out of range for dimension {n}")
            if i == j:
                raise AlgebroidError(f"Diagonal bivector entry ({i + 1}, {j + 1}) must vanish")
            e = as_expr(value, n)
            if i > j:
                i, j, e = j, i, neg(e)
            if (i, j) in stored:
                raise AlgebroidError(f"Bivector entry ({i + 1}, {j + 1}) given twice")
            stored[(i, j)] = e
        self.entries = stored

    @classmethod
    def from_entries(cls, chart, entries):
        """Build from 1-based {'i', 'j', 'expr'} records (configuration format)."""
        return cls(chart, {(int(e['i']) - 1, int(e['j']) - 1): e['expr'] for e in entries})

    def entry(self, i, j):
        if i == j:
            return ZERO
        if i < j:
            return self.entries.get((i, j), ZERO)
        return neg(self.entries.get((j, i), ZERO))

    def matrix(self):
        n = self.chart.dim
        return [[self.entry(i, j) for j in range(n)] for i in range(n)]

    def matrix_at(self, points):
        flat = [self.entry(i, j) for i in range(self.chart.dim) for j in range(self.chart.dim)]
        return _evaluate_tensor(flat, points, (self.chart.dim, self.chart.dim))

    def bracket(self, f, g):
        """{f, g} = sum_ij pi_ij d_i f d_j g."""
        n = self.chart.dim
        terms = []
        for (i, j), pij in self.entries.items():
            terms.append(mul(pij, sub(mul(diff_expr(f, i + 1), diff_expr(g, j + 1)),
                                      mul(diff_expr(f, j + 1), diff_expr(g, i + 1)))))
        return sum_exprs(terms) if n else ZERO

    def is_zero(self):
        return all(e == ZERO for e in self.entries.values())


# ---------------------------------------------------------------------------
# Constructions
# ---------------------------------------------------------------------------

def cotangent_algebroid(pi, name=None):
    """
    The cotangent algebroid T*M of a Poisson bivector.

    Rank n, anchor rho_ji = pi_ij (rho(dx_i) = sum_j pi_ij d_j) and structure
    functions c^k_ij = d_k pi_ij, from [dx_i, dx_j] = d{x_i, x_j}. The connection
    is zero.
    """
    n = pi.chart.dim
    if n == 0:
        raise AlgebroidError("The cotangent algebroid needs a chart of positive dimension")
    anchor = [[pi.entry(i, j) for i in range(n)] for j in range(n)]
    structure = {}
    for (i, j), pij in pi.entries.items():
        components = [diff_expr(pij, k + 1) for k in range(n)]
        if any(c != ZERO for c in components):
            structure[(i, j)] = components
    algebroid = Algebroid(pi.chart, n, anchor, structure, name=name or 'cotangent')
    logger.debug(f"Built cotangent algebroid of rank {n} with {len(structure)} nonzero bracket pairs")
    return algebroid


def _jacobiator(constants):
    """J[i, j, k, l]: l-th component of [[e_i,e_j],e_k] + cyclic, constants[i, j, k] = c^k_ij."""
    c = np.asarray(constants, dtype=float)
    first = np.einsum('ijm,mkl->ijkl', c, c)
    return first + np.transpose(first, (1, 2, 0, 3)) + np.transpose(first, (2, 0, 1, 3))


def lie_algebra_algebroid(structure_constants, tol=1e-12, name='lie-algebra'):
    """
    A Lie algebra as an algebroid over the one-point chart.

    Args:
        structure_constants: Array with structure_constants[i][j][k] = c^k_ij
        tol: Tolerance for antisymmetry and the Jacobi identity

    Raises:
        JacobiViolationError: If the constants are not antisymmetric or fail Jacobi
    """
    c = np.asarray(structure_constants, dtype=float)
    if c.ndim != 3 or c.shape[0] != c.shape[1] or c.shape[1] != c.shape[2]:
        raise AlgebroidError(f"Structure constants must be an r x r x r tensor, got shape {c.shape}")
    antisymmetry = float(np.max(np.abs(c + np.transpose(c, (1, 0, 2))))) if c.size else 0.0
    if antisymmetry > tol:
        raise JacobiViolationError(f"Structure constants are not antisymmetric (defect {antisymmetry:.3e})")
    jacobi = float(np.max(np.abs(_jacobiator(c)))) if c.size else 0.0
    if jacobi > tol:
        logger.error(f"Jacobi identity fails for {name}: jacobiator {jacobi:.3e}")
        raise JacobiViolationError(f"Jacobi identity fails: jacobiator {jacobi:.3e} exceeds {tol:.1e}")
    rank = c.shape[0]
    structure = {}
    for i, j in itertools.combinations(range(rank), 2):
        if np.any(c[i, j] != 0.0):
            structure[(i, j)] = [float(v) for v in c[i, j]]
    return Algebroid(Chart.point(), rank, [], structure, name=name)


# ---------------------------------------------------------------------------
# Bracket and torsion
# ---------------------------------------------------------------------------

def bracket_of_sections(algebroid, s1, s2):
    """
    [s1, s2]^k = sum_ij c^k_ij s1^i s2^j + rho(s1)(s2^k) - rho(s2)(s1^k).
    """
    r = algebroid.rank
    if s1.rank != r or s2.rank != r:
        raise AlgebroidError(f"Sections must have rank {r}")
    rho1 = algebroid.anchor_of(s1)
    rho2 = algebroid.anchor_of(s2)
    components = []
    for k in range(r):
        algebraic = sum_exprs(
            mul(algebroid.structure_function(k, i, j), mul(s1.components[i], s2.components[j]))
            for i in range(r) for j in range(r) if i != j)
        derivative = sub(algebroid.apply_vector_field(rho1, s2.components[k]),
                         algebroid.apply_vector_field(rho2, s1.components[k]))
        components.append(add(algebraic, derivative))
    return Section(tuple(components))


def torsion(algebroid, a, b, base):
    """
    T(a, b) = Gamma(rho(b)) a - Gamma(rho(a)) b + c(a, b) at base points.

    The torsion is tensorial, so a and b enter only through their values;
    spatial dependence comes through Gamma and c evaluated at `base`.

    Args:
        algebroid: Algebroid
        a, b: Fiber values, shape (..., r)
        base: Base points, shape (..., n)

    Returns:
        numpy.ndarray: Fiber values, shape (..., r)
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    base = np.asarray(base, dtype=float)
    r, n = algebroid.rank, algebroid.chart.dim
    if a.shape[-1] != r or b.shape[-1] != r:
        raise AlgebroidError(f"Fiber values must have {r} components")
    if base.shape[-1] != n:
        raise AlgebroidError(f"Base points must have {n} coordinates")
    c = algebroid.structure_at(base)
    result = np.einsum('...kij,...i,...j->...k', c, a, b)
    if n:
        anchor = algebroid.anchor_at(base)
        gamma = algebroid.christoffel_at(base)
        rho_a = np.einsum('...mi,...i->...m', anchor, a)
        rho_b = np.einsum('...mi,...i->...m', anchor, b)
        result = (result
                  + np.einsum('...m,...mkl,...l->...k', rho_b, gamma, a)
                  - np.einsum('...m,...mkl,...l->...k', rho_a, gamma, b))
    return result


def transport(algebroid, direction, fiber, base):
    """Gamma(X) v = sum_m X^m Gamma_m v at base points."""
    if algebroid.chart.dim == 0:
        return np.zeros_like(np.asarray(fiber, dtype=float))
    gamma = algebroid.christoffel_at(base)
    return np.einsum('...m,...mkl,...l->...k', direction, gamma, fiber)


# ---------------------------------------------------------------------------
# Axiom checks
# ---------------------------------------------------------------------------

def _sample_points(chart, samples, seed):
    rng = np.random.default_rng(seed)
    return chart.sample(rng, samples)


def check_anchor_homomorphism(algebroid, samples=100, tol=1e-9, seed=DEFAULT_SEED):
    """
    Compare rho([e_i, e_j]) with the commutator [rho(e_i), rho(e_j)] at random points.

    Returns:
        CheckReport: Max residual over frame pairs and sample points
    """
    if samples < 1:
        raise AlgebroidError("samples must be at least 1")
    n, r = algebroid.chart.dim, algebroid.rank
    points = _sample_points(algebroid.chart, samples, seed)
    if n == 0 or r < 2:
        return CheckReport.from_residual('anchor-homomorphism', 0.0, tol, samples=samples, seed=seed)
    anchor = algebroid.anchor_at(points)  # (s, n, r)
    structure = algebroid.structure_at(points)  # (s, r, r, r)
    d_anchor = algebroid.anchor_derivatives_at(points)  # (s, l, m, i)

    worst = 0.0
    worst_point = None
    for i, j in itertools.combinations(range(r), 2):
        image = np.einsum('sk,smk->sm', structure[:, :, i, j], anchor)
        commutator = (np.einsum('sl,slm->sm', anchor[:, :, i], d_anchor[:, :, :, j])
                      - np.einsum('sl,slm->sm', anchor[:, :, j], d_anchor[:, :, :, i]))
        defect = np.max(np.abs(image - commutator), axis=1)
        index = int(np.argmax(defect))
        if defect[index] > worst:
            worst = float(defect[index])
            worst_point = points[index]
    logger.info(f"Anchor homomorphism check on {algebroid.name}: residual {worst:.3e} (tol {tol:.1e})")
    return CheckReport.from_residual('anchor-homomorphism', worst, tol, samples=samples, seed=seed,
                                     worst_point=worst_point)


def check_section_jacobi(algebroid, samples=100, tol=1e-9, seed=DEFAULT_SEED):
    """
    Evaluate [[e_i, e_j], e_k] + cyclic on frame sections at random points.
    """
    r = algebroid.rank
    points = _sample_points(algebroid.chart, samples, seed)
    frame = [Section.frame(r, i) for i in range(r)]
    worst = 0.0
    for i, j, k in itertools.combinations(range(r), 3):
        terms = [
            bracket_of_sections(algebroid, bracket_of_sections(algebroid, frame[i], frame[j]), frame[k]),
            bracket_of_sections(algebroid, bracket_of_sections(algebroid, frame[j], frame[k]), frame[i]),
            bracket_of_sections(algebroid, bracket_of_sections(algebroid, frame[k], frame[i]), frame[j]),
        ]
        total = sum(term.evaluate(points) for term in terms)
        worst = max(worst, float(np.max(np.abs(total))))
    logger.info(f"Section Jacobi check on {algebroid.name}: residual {worst:.3e} (tol {tol:.1e})")
    return CheckReport.from_residual('section-jacobi', worst, tol, samples=samples, seed=seed)


def poisson_jacobiator(pi):
    """
    Symbolic Jacobiator J_ijk = sum_l pi_il d_l pi_jk + pi_jl d_l pi_ki + pi_kl d_l pi_ij
    for i < j < k.
    """
    n = pi.chart.dim

    def cyclic_term(i, j, k):
        return sum_exprs(mul(pi.entry(i, l), diff_expr(pi.entry(j, k), l + 1)) for l in range(n))

    return {
        (i, j, k): add(add(cyclic_term(i, j, k), cyclic_term(j, k, i)), cyclic_term(k, i, j))
        for i, j, k in itertools.combinations(range(n), 3)
    }


def check_poisson_jacobi(pi, samples=100, tol=1e-9, seed=DEFAULT_SEED, points=None):
    """
    Evaluate the Jacobiator of pi at random chart points (or at given points).
    """
    if points is None:
        points = _sample_points(pi.chart, samples, seed)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    jacobiator = poisson_jacobiator(pi)
    worst = 0.0
    worst_entry = None
    for key, e in jacobiator.items():
        value = float(np.max(np.abs(eval_expr_array(e, points)))) if e != ZERO else 0.0
        if value > worst:
            worst, worst_entry = value, key
    logger.info(f"Poisson Jacobi check: residual {worst:.3e} (tol {tol:.1e})")
    detail = {'samples': len(points), 'seed': seed}
    if worst_entry is not None:
        detail['worst_entry'] = [v + 1 for v in worst_entry]
    return CheckReport.from_residual('poisson-jacobi', worst, tol, **detail)


def check_leibniz(algebroid, f, samples=100, tol=1e-9, seed=DEFAULT_SEED):
    """
    [s1, f s2] - f [s1, s2] - (rho(s1) f) s2 on frame sections at random points.
    """
    r = algebroid.rank
    points = _sample_points(algebroid.chart, samples, seed)
    frame = [Section.frame(r, i) for i in range(r)]
    worst = 0.0
    for i, j in itertools.product(range(r), repeat=2):
        s1, s2 = frame[i], frame[j]
        scaled = Section(tuple(mul(f, c) for c in s2.components))
        lhs = bracket_of_sections(algebroid, s1, scaled).evaluate(points)
        plain = bracket_of_sections(algebroid, s1, s2).evaluate(points)
        rho_f = eval_expr_array(algebroid.apply_vector_field(algebroid.anchor_of(s1), f), points) \
            if algebroid.chart.dim else np.zeros(len(points))
        f_values = eval_expr_array(f, points)
        residual = lhs - f_values[:, None] * plain - rho_f[:, None] * s2.evaluate(points)
        worst = max(worst, float(np.max(np.abs(residual))))
    return CheckReport.from_residual('leibniz', worst, tol, samples=samples, seed=seed)


def sections_antisymmetry_defect(algebroid, s1, s2, points):
    """max |[s1,s2] + [s2,s1]| at points."""
    forward = bracket_of_sections(algebroid, s1, s2).evaluate(points)
    backward = bracket_of_sections(algebroid, s2, s1).evaluate(points)
    return float(np.max(np.abs(forward + backward)))
