import numpy as np
import pytest

from src.algebroid import Chart
from src.etale import (
    ActionCompositionError, CoordForm, DegenerateFormError, EtaleError, FiniteActionGroupoid,
    NonInvariantFormError, NonInvariantFunctionError, bracket_from_form, check_arrow_invariance,
    check_invariance, check_presentation_independence, cyclic_rotation_groupoid, determinant_expr,
    invariant_poisson_bracket, pullback_form, refine_atlas,
)
from src.expr import eval_expr, eval_expr_array, parse_expr
from src.sampling import random_even_polynomial, random_polynomial


@pytest.fixture
def inversion():
    return cyclic_rotation_groupoid(2)


@pytest.fixture
def area_form():
    return CoordForm(2, 2, {(0, 1): '1'})


def test_inversion_acts_by_negation(inversion, rng):
    points = rng.uniform(-1.0, 1.0, size=(5, 2))
    assert np.array_equal(inversion.act(1, points), -points)
    assert inversion.identity == 0
    assert inversion.check_composition().passed


def test_quarter_turn_composes(rng):
    groupoid = cyclic_rotation_groupoid(4)
    point = np.array([0.3, 1.2])
    assert np.allclose(groupoid.act(1, point), [-1.2, 0.3])
    assert groupoid.check_composition().residual < 1e-12


def test_action_must_follow_table():
    with pytest.raises(ActionCompositionError):
        FiniteActionGroupoid(Chart.box(2), ['e', 'r'], [[0, 1], [1, 0]],
                             [['x1', 'x2'], ['x1 + 1', 'x2']])
    with pytest.raises(EtaleError):
        FiniteActionGroupoid(Chart.box(2), ['e', 'r'], [[1, 0], [0, 1]],
                             [['x1', 'x2'], ['-x1', '-x2']])


def test_form_indices_are_normalized():
    form = CoordForm(2, 2, {(1, 0): 'x1'})
    assert eval_expr(form.coefficient((0, 1)), [2.0, 0.0]) == -2.0
    with pytest.raises(EtaleError):
        CoordForm(2, 2, {(0, 1): '1', (1, 0): '1'})
    with pytest.raises(EtaleError):
        CoordForm(2, 3)


def test_pullback_by_linear_map():
    form = CoordForm(2, 2, {(0, 1): 'x1'})
    pulled = pullback_form(form, [parse_expr("2*x1", 2), parse_expr("3*x2", 2)])
    assert eval_expr(pulled.coefficient((0, 1)), [1.0, 5.0]) == 12.0


def test_determinant_expr():
    matrix = [[parse_expr("x1", 2), parse_expr("1", 2)], [parse_expr("2", 2), parse_expr("x2", 2)]]
    assert eval_expr(determinant_expr(matrix), [3.0, 4.0]) == 10.0


def test_area_form_is_rotation_invariant(area_form):
    for order in (2, 3, 4):
        groupoid = cyclic_rotation_groupoid(order)
        assert check_invariance(groupoid, area_form).passed
        assert check_arrow_invariance(groupoid, area_form).passed


def test_odd_coefficient_breaks_inversion_invariance(inversion):
    form = CoordForm(2, 2, {(0, 1): 'x1'})
    report = check_invariance(inversion, form)
    assert not report.passed
    assert not check_arrow_invariance(inversion, form).passed


def test_invariant_bracket_on_inversion(inversion, area_form, rng):
    f, g = parse_expr("x1^2", 2), parse_expr("x2^2", 2)
    bracket = invariant_poisson_bracket(inversion, area_form, f, g)
    points = rng.uniform(-2.0, 2.0, size=(20, 2))
    assert np.allclose(eval_expr_array(bracket, points), 4.0 * points[:, 0] * points[:, 1], atol=1e-13)


def test_coordinate_bracket_sign(area_form):
    bracket = bracket_from_form(area_form, parse_expr("x1", 2), parse_expr("x2", 2))
    assert eval_expr(bracket, [0.7, -0.2]) == 1.0


def test_bracket_rejects_non_invariant_function(area_form):
    with pytest.raises(NonInvariantFunctionError):
        invariant_poisson_bracket(cyclic_rotation_groupoid(4), area_form, "x1^2", "x1^2 + x2^2")


def test_bracket_rejects_non_invariant_form(inversion):
    form = CoordForm(2, 2, {(0, 1): 'x1'})
    with pytest.raises(NonInvariantFormError):
        invariant_poisson_bracket(inversion, form, "x1^2", "x2^2")


def test_bracket_rejects_degenerate_form(inversion):
    with pytest.raises(DegenerateFormError):
        bracket_from_form(CoordForm(2, 2), parse_expr("x1^2", 2), parse_expr("x2^2", 2))


def test_refinement_components(inversion):
    refined = refine_atlas(inversion, 2)
    assert len(refined.components) == 8
    assert refined.compose_components((1, 0, 1), (0, 1, 1)) == (0, 0, 0)
    assert refined.identity_components() == [(0, 0, 0), (1, 1, 0)]
    with pytest.raises(EtaleError):
        refined.compose_components((0, 1, 1), (0, 1, 1))
    with pytest.raises(EtaleError):
        refine_atlas(inversion, 1)


def test_refined_composition(inversion):
    for copies in (2, 3):
        assert refine_atlas(inversion, copies).check_composition().passed


def test_bracket_does_not_depend_on_presentation(inversion, area_form):
    f, g = parse_expr("x1^2", 2), parse_expr("x1*x2", 2)
    for copies in (2, 3):
        report = check_presentation_independence(inversion, refine_atlas(inversion, copies), area_form, f, g)
        assert report.passed
        assert report.details['copies'] == copies


def test_object_and_arrow_invariance_agree_on_random_forms(rng):
    groupoids = [cyclic_rotation_groupoid(order) for order in (2, 3, 4)]
    invariant_under_inversion = 0
    for index in range(20):
        if index % 2 == 0:
            coefficient = random_even_polynomial(rng, 2)
        else:
            coefficient = random_polynomial(rng, 2, degree=3)
        form = CoordForm(2, 2, {(0, 1): coefficient})
        for groupoid in groupoids:
            invariant = check_invariance(groupoid, form, samples=30).passed
            assert invariant == check_arrow_invariance(groupoid, form, samples=30).passed
            if groupoid.order == 2 and index % 2 == 0:
                invariant_under_inversion += invariant
    assert invariant_under_inversion == 10
