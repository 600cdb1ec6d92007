"""
Finite models of etale groupoids: a finite group acting on a chart.

Arrows of the action groupoid are pairs (g, x) with source x and target g.x.
A form omega is invariant when s*omega = t*omega on every arrow component; for an
action groupoid this is the same as g*omega = omega for every group element.
Invariant symplectic forms give a Poisson bracket on invariant functions,
{f, g} = sum_ij P_ij d_i f d_j g with P = -Omega^-1, so dx1^dx2 gives {x1, x2} = 1.
"""

import itertools
import logging
from dataclasses import dataclass, field
from math import comb
from typing import Dict, List, Tuple

import numpy as np

from src.algebroid import DEFAULT_SEED, Chart
from src.expr import (
    ONE, ZERO, Neg, Var, as_expr, compose_expr, const, coordinates, diff_expr, div, eval_expr_array,
    eval_many, mul, neg, sub, sum_exprs,
)
from src.report import CheckReport

logger = logging.getLogger('apaths')


class EtaleError(ValueError):
    pass


class ActionCompositionError(EtaleError):
    pass


class NonInvariantFunctionError(EtaleError):
    pass


class NonInvariantFormError(EtaleError):
    pass


class DegenerateFormError(EtaleError):
    pass


def _max_defect(exprs_a, exprs_b, points):
    worst = 0.0
    for a, b in zip(exprs_a, exprs_b):
        worst = max(worst, float(np.max(np.abs(eval_expr_array(a, points) - eval_expr_array(b, points)))))
    return worst


class FiniteActionGroupoid:
    """
    Action groupoid of a finite group acting on a chart.

    Args:
        chart: Chart
        elements: Element labels
        table: table[i][j] = index of elements[i] * elements[j]
        action: One list of `chart.dim` expressions per element (coordinates of x -> g.x)
        validate: Check the composition law and the identity at random points

    Raises:
        ActionCompositionError: If the action does not respect the table
    """

    def __init__(self, chart, elements, table, action, name='action-groupoid', validate=True,
                 samples=50, tol=1e-9, seed=DEFAULT_SEED):
        self.chart = chart
        self.elements = list(elements)
        self.name = name
        order = len(self.elements)
        self.table = [[int(v) for v in row] for row in table]
        if order == 0 or len(self.table) != order or any(len(row) != order for row in self.table):
            raise EtaleError(f"Multiplication table must be {order} x {order}")
        if any(not 0 <= v < order for row in self.table for v in row):
            raise EtaleError("Multiplication table refers to unknown elements")
        if len(action) != order:
            raise EtaleError(f"Need one action map per element, got {len(action)} for {order} elements")
        self.action = [[as_expr(e, chart.dim) for e in coords] for coords in action]
        if any(len(coords) != chart.dim for coords in self.action):
            raise EtaleError(f"Every action map needs {chart.dim} coordinates")
        self.identity = self._find_identity()
        if validate:
            self.check_composition(samples=samples, tol=tol, seed=seed, raise_on_failure=True)

    @property
    def order(self):
        return len(self.elements)

    def _find_identity(self):
        for index, row in enumerate(self.table):
            if row == list(range(self.order)):
                return index
        raise EtaleError("Multiplication table has no identity element")

    def non_identity(self):
        return [index for index in range(self.order) if index != self.identity]

    def act(self, index, points):
        """g.x for points of shape (..., n)."""
        return eval_many(self.action[index], points)

    def check_composition(self, samples=50, tol=1e-9, seed=DEFAULT_SEED, raise_on_failure=False):
        """action(g) o action(h) == action(gh), and the identity acts trivially."""
        points = self.chart.sample(np.random.default_rng(seed), samples)
        worst = _max_defect(self.action[self.identity], coordinates(self.chart.dim), points)
        for g, h in itertools.product(range(self.order), repeat=2):
            composed = [compose_expr(e, self.action[h]) for e in self.action[g]]
            worst = max(worst, _max_defect(composed, self.action[self.table[g][h]], points))
        if raise_on_failure and worst >= tol:
            raise ActionCompositionError(f"Action of {self.name} violates the multiplication table "
                                         f"(defect {worst:.3e})")
        return CheckReport.from_residual('action-composition', worst, tol, samples=samples, seed=seed)

    def __repr__(self):
        return f"FiniteActionGroupoid(name={self.name!r}, order={self.order}, dim={self.chart.dim})"


def _rotation_coordinate(cos_value, sin_value, first, second):
    def scaled(c, var):
        if c == 0.0:
            return ZERO
        if c == 1.0:
            return var
        if c == -1.0:
            return neg(var)
        return mul(const(c), var)

    a, b = scaled(cos_value, first), scaled(sin_value, second)
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(b, Neg):
        return sub(a, b.operand)
    return sum_exprs([a, b])


def cyclic_rotation_groupoid(order, chart=None):
    """
    Z/order acting on R^2 by rotations through multiples of 2 pi / order.
    Order 2 is the central inversion, order 4 the quarter turn.
    """
    if order < 1:
        raise EtaleError(f"Group order must be positive, got {order}")
    chart = chart or Chart.box(2)
    x1, x2 = Var(1), Var(2)
    action = []
    for m in range(order):
        angle = 2.0 * np.pi * m / order
        c, s = np.cos(angle), np.sin(angle)
        c = 0.0 if abs(c) < 1e-15 else float(np.round(c, 15))
        s = 0.0 if abs(s) < 1e-15 else float(np.round(s, 15))
        action.append([_rotation_coordinate(c, -s, x1, x2), _rotation_coordinate(s, c, x1, x2)])
    table = [[(i + j) % order for j in range(order)] for i in range(order)]
    return FiniteActionGroupoid(chart, [f'r{m}' for m in range(order)], table, action,
                                name=f'Z/{order}')


# ---------------------------------------------------------------------------
# Forms
# ---------------------------------------------------------------------------

@dataclass
class CoordForm:
    """
    A k-form sum_I w_I dx_I over increasing multi-indices I (0-based).
    Missing coefficients are zero.
    """
    dim: int
    degree: int
    coefficients: Dict[Tuple[int, ...], object] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.degree <= self.dim:
            raise EtaleError(f"Degree {self.degree} is impossible on a {self.dim}-dimensional chart")
        normalized = {}
        for index, value in dict(self.coefficients).items():
            index = tuple(int(i) for i in index)
            if len(index) != self.degree or len(set(index)) != self.degree:
                raise EtaleError(f"Multi-index {index} is not valid for a {self.degree}-form")
            if any(not 0 <= i < self.dim for i in index):
                raise EtaleError(f"Multi-index {index} out of range for dimension {self.dim}")
            order = sorted(range(self.degree), key=lambda position: index[position])
            sign = _permutation_sign(order)
            e = as_expr(value, self.dim)
            key = tuple(sorted(index))
            if key in normalized:
                raise EtaleError(f"Coefficient {key} given twice")
            normalized[key] = e if sign > 0 else neg(e)
        self.coefficients = {index: normalized.get(index, ZERO) for index in self.indices()}

    def indices(self):
        return list(itertools.combinations(range(self.dim), self.degree))

    @property
    def size(self):
        return comb(self.dim, self.degree)

    def coefficient(self, index):
        return self.coefficients[tuple(index)]

    def evaluate(self, points):
        """Coefficients at points -> (..., binomial(dim, degree)) in indices() order."""
        return eval_many([self.coefficients[i] for i in self.indices()], points)

    def matrix_at(self, points):
        """Antisymmetric coefficient matrix of a 2-form at points -> (..., n, n)."""
        if self.degree != 2:
            raise EtaleError("Only 2-forms have a coefficient matrix")
        points = np.asarray(points, dtype=float)
        matrix = np.zeros(points.shape[:-1] + (self.dim, self.dim))
        for (i, j), e in self.coefficients.items():
            values = eval_expr_array(e, points)
            matrix[..., i, j] = values
            matrix[..., j, i] = -values
        return matrix

    @classmethod
    def from_entries(cls, dim, degree, entries):
        """Configuration form: [{'indices': [1, 2], 'expr': '...'}] with 1-based indices."""
        return cls(dim, degree, {tuple(int(i) - 1 for i in entry['indices']): entry['expr'] for entry in entries})


def _permutation_sign(order):
    sign = 1
    order = list(order)
    for i in range(len(order)):
        for j in range(i + 1, len(order)):
            if order[i] > order[j]:
                sign = -sign
    return sign


def determinant_expr(matrix):
    """Leibniz expansion of a square matrix of expressions."""
    size = len(matrix)
    if size == 0:
        return ONE
    terms = []
    for permutation in itertools.permutations(range(size)):
        term = ONE
        for row, column in enumerate(permutation):
            term = mul(term, matrix[row][column])
        terms.append(term if _permutation_sign(permutation) > 0 else neg(term))
    return sum_exprs(terms)


def pullback_form(form, mapping):
    """
    phi*omega for phi given by `form.dim` coordinate expressions:
    (phi*omega)_J = sum_I (omega_I o phi) det(d phi_I / d x_J).

    Raises:
        EtaleError: If the map does not have form.dim coordinates
    """
    mapping = [as_expr(e, form.dim) for e in mapping]
    if len(mapping) != form.dim:
        raise EtaleError(f"Map has {len(mapping)} coordinates, form lives in dimension {form.dim}")
    jacobian = [[diff_expr(component, b + 1) for b in range(form.dim)] for component in mapping]
    pulled = {}
    for target_index in form.indices():
        terms = []
        for source_index, coefficient in form.coefficients.items():
            if coefficient == ZERO:
                continue
            minor = [[jacobian[a][b] for b in target_index] for a in source_index]
            terms.append(mul(compose_expr(coefficient, mapping), determinant_expr(minor)))
        pulled[target_index] = sum_exprs(terms)
    return CoordForm(form.dim, form.degree, pulled)


def _form_defect(first, second, points):
    return float(np.max(np.abs(first.evaluate(points) - second.evaluate(points)), initial=0.0))


def check_invariance(groupoid, form, tol=1e-9, samples=100, seed=DEFAULT_SEED):
    """g*omega against omega for every non-identity element at random points."""
    points = groupoid.chart.sample(np.random.default_rng(seed), samples)
    defects = {}
    for index in groupoid.non_identity():
        defects[groupoid.elements[index]] = _form_defect(pullback_form(form, groupoid.action[index]), form, points)
    worst = max(defects.values(), default=0.0)
    return CheckReport.from_residual('form-invariance', worst, tol, samples=samples, seed=seed, defects=defects)


def check_arrow_invariance(groupoid, form, tol=1e-9, samples=100, seed=DEFAULT_SEED):
    """s*omega against t*omega on every arrow component (g, x) -> (x, g.x)."""
    points = groupoid.chart.sample(np.random.default_rng(seed), samples)
    source = coordinates(groupoid.chart.dim)
    pulled_source = pullback_form(form, source)
    worst = 0.0
    for index in range(groupoid.order):
        pulled_target = pullback_form(form, groupoid.action[index])
        worst = max(worst, _form_defect(pulled_source, pulled_target, points))
    return CheckReport.from_residual('arrow-invariance', worst, tol, samples=samples, seed=seed)


def function_invariance_defect(groupoid, f, points):
    return max((_max_defect([compose_expr(f, groupoid.action[index])], [f], points)
                for index in groupoid.non_identity()), default=0.0)


def bracket_from_form(form, f, g):
    """
    {f, g} = sum_ij P_ij d_i f d_j g with P = -Omega^-1, assembled symbolically
    through the adjugate: Omega^-1 = adj(Omega) / det(Omega).
    """
    if form.degree != 2:
        raise EtaleError("A Poisson bracket needs a 2-form")
    n = form.dim
    omega = [[ZERO] * n for _ in range(n)]
    for (i, j), e in form.coefficients.items():
        omega[i][j] = e
        omega[j][i] = neg(e)
    determinant = determinant_expr(omega)
    if determinant == ZERO:
        raise DegenerateFormError("Form is identically degenerate")

    def cofactor(row, column):
        minor = [[omega[a][b] for b in range(n) if b != column] for a in range(n) if a != row]
        value = determinant_expr(minor)
        return value if (row + column) % 2 == 0 else neg(value)

    grad_f = [diff_expr(f, i + 1) for i in range(n)]
    grad_g = [diff_expr(g, j + 1) for j in range(n)]
    terms = []
    for i, j in itertools.product(range(n), repeat=2):
        if grad_f[i] == ZERO or grad_g[j] == ZERO:
            continue
        # (Omega^-1)_ij = cofactor(j, i) / det
        coefficient = neg(cofactor(j, i))
        if coefficient == ZERO:
            continue
        terms.append(mul(coefficient, mul(grad_f[i], grad_g[j])))
    return div(sum_exprs(terms), determinant)


def invariant_poisson_bracket(groupoid, form, f, g, samples=100, tol=1e-9, seed=DEFAULT_SEED,
                              condition_limit=1e12):
    """
    Bracket of two invariant functions for an invariant symplectic form.

    Raises:
        NonInvariantFunctionError: If f or g is not invariant
        NonInvariantFormError: If the form is not invariant
        DegenerateFormError: If the form is degenerate at a sample point
    """
    dim = groupoid.chart.dim
    f, g = as_expr(f, dim), as_expr(g, dim)
    points = groupoid.chart.sample(np.random.default_rng(seed), samples)
    for label, function in (('f', f), ('g', g)):
        defect = function_invariance_defect(groupoid, function, points)
        if defect >= tol:
            raise NonInvariantFunctionError(f"{label} is not invariant under {groupoid.name} (defect {defect:.3e})")
    invariance = check_invariance(groupoid, form, tol=tol, samples=samples, seed=seed)
    if not invariance.passed:
        raise NonInvariantFormError(f"Form is not invariant under {groupoid.name} "
                                    f"(defect {invariance.residual:.3e})")
    conditions = np.linalg.cond(form.matrix_at(points))
    if not np.all(np.isfinite(conditions)) or np.max(conditions) > condition_limit:
        raise DegenerateFormError(f"Form is degenerate at a sample point (condition {np.max(conditions):.3e})")
    return bracket_from_form(form, f, g)


# ---------------------------------------------------------------------------
# Refinements
# ---------------------------------------------------------------------------

@dataclass
class RefinedAtlas:
    """
    `copies` identical copies of the chart, each mapped identically onto the
    original. Arrow components (i, j, g) go from copy i at x to copy j at g.x.
    """
    groupoid: FiniteActionGroupoid
    copies: int
    components: List[Tuple[int, int, int]] = field(default_factory=list)

    def refinement_map(self, copy):
        """phi on copy `copy`: the identity coordinates."""
        if not 0 <= copy < self.copies:
            raise EtaleError(f"Copy {copy} out of range for {self.copies} copies")
        return coordinates(self.groupoid.chart.dim)

    def arrow_image(self, component):
        """phi on arrows: (i, j, g) -> g."""
        return component[2]

    def identity_components(self):
        return [(i, i, self.groupoid.identity) for i in range(self.copies)]

    def transport_form(self, form, copy):
        return pullback_form(form, self.refinement_map(copy))

    def transport_function(self, f, copy):
        return compose_expr(f, self.refinement_map(copy))

    def compose_components(self, second, first):
        """(j, k, h) o (i, j, g) = (i, k, hg)."""
        if first[1] != second[0]:
            raise EtaleError(f"Components {first} and {second} are not composable")
        return first[0], second[1], self.groupoid.table[second[2]][first[2]]

    def check_composition(self, samples=50, tol=1e-9, seed=DEFAULT_SEED):
        """Composition law of the induced groupoid, component by component."""
        group = self.groupoid
        points = group.chart.sample(np.random.default_rng(seed), samples)
        worst = 0.0
        for first in self.components:
            for second in self.components:
                if first[1] != second[0]:
                    continue
                composed = self.compose_components(second, first)
                chained = [compose_expr(e, group.action[first[2]]) for e in group.action[second[2]]]
                worst = max(worst, _max_defect(chained, group.action[composed[2]], points))
        return CheckReport.from_residual('refined-composition', worst, tol, samples=samples, seed=seed,
                                         components=len(self.components))

    def bracket_on_copy(self, form, f, g, copy, samples=100, tol=1e-9, seed=DEFAULT_SEED):
        """
        Bracket computed in the refined presentation on one copy, after checking
        that the transported data is invariant along every component into it.
        """
        group = self.groupoid
        points = group.chart.sample(np.random.default_rng(seed), samples)
        local_form = self.transport_form(form, copy)
        local_f = self.transport_function(f, copy)
        local_g = self.transport_function(g, copy)
        for i, j, element in self.components:
            if j != copy:
                continue
            source_form = self.transport_form(form, i)
            target_form = pullback_form(local_form, group.action[element])
            if _form_defect(source_form, target_form, points) >= tol:
                raise NonInvariantFormError(f"Transported form is not invariant along component {(i, j, element)}")
            for function, local in ((f, local_f), (g, local_g)):
                moved = compose_expr(local, group.action[element])
                if _max_defect([moved], [self.transport_function(function, i)], points) >= tol:
                    raise NonInvariantFunctionError(f"Function is not invariant along component {(i, j, element)}")
        return bracket_from_form(local_form, local_f, local_g)


def refine_atlas(groupoid, copies):
    if copies < 2:
        raise EtaleError(f"A refinement needs at least 2 copies, got {copies}")
    components = [(i, j, g) for i in range(copies) for j in range(copies) for g in range(groupoid.order)]
    logger.debug(f"Refined {groupoid.name} into {copies} copies with {len(components)} arrow components")
    return RefinedAtlas(groupoid, copies, components)


def check_presentation_independence(groupoid, refined, form, f, g, tol=1e-12, samples=100, seed=DEFAULT_SEED):
    """
    The bracket on the original atlas against the bracket on every copy of a
    refinement, pulled back through the refinement map.
    """
    original = invariant_poisson_bracket(groupoid, form, f, g, samples=samples, seed=seed)
    points = groupoid.chart.sample(np.random.default_rng(seed), samples)
    worst = 0.0
    for copy in range(refined.copies):
        local = refined.bracket_on_copy(form, f, g, copy, samples=samples, seed=seed)
        transported = compose_expr(original, refined.refinement_map(copy))
        worst = max(worst, _max_defect([local], [transported], points))
    logger.info(f"Presentation independence over {refined.copies} copies: defect {worst:.3e}")
    return CheckReport.from_residual('presentation-independence', worst, tol, copies=refined.copies,
                                     samples=samples, seed=seed)
