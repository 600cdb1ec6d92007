import numpy as np
import pytest

from src.algebroid import Chart, PoissonBivector
from src.expr import parse_expr
from src.oracles import DEVELOPMENT, DegenerateBivectorError, so3_coadjoint_bivector
from src.path_space import EpsilonGrid, TimeGrid, default_family
from src.path_symplectic import (
    GridMismatchError, NotAHomotopyError, PathSpaceForm, PathVariation, UnsupportedOracleError,
    check_kernel_containment, check_multiplicativity, check_nondegeneracy, cotangent_bundle_model,
    eval_path_form, groupoid_model, oracle_reduced_bracket, pair_groupoid_model, pairing_matrix,
)
from src.sampling import composable_pair, gauge_path_family, random_polynomial, zero_poisson_pair


def test_trapezoid_weights():
    form = PathSpaceForm(TimeGrid(5))
    assert np.allclose(form.weights, [0.125, 0.25, 0.25, 0.25, 0.125])
    assert form.weights.sum() == pytest.approx(1.0)


def test_form_is_antisymmetric(rng):
    form = PathSpaceForm(TimeGrid(17))
    d1, d2 = PathVariation.random(rng, 17, 2), PathVariation.random(rng, 17, 2)
    assert eval_path_form(form, d1, d2) == pytest.approx(-eval_path_form(form, d2, d1), abs=1e-14)
    assert eval_path_form(form, d1, d1) == 0.0


def test_form_pairs_fiber_with_base():
    form = PathSpaceForm(TimeGrid(3))
    d1 = PathVariation(np.zeros((3, 1)), np.ones((3, 1)))
    d2 = PathVariation(np.ones((3, 1)), np.zeros((3, 1)))
    assert eval_path_form(form, d1, d2) == pytest.approx(1.0)


def test_form_rejects_wrong_grid(rng):
    form = PathSpaceForm(TimeGrid(9))
    with pytest.raises(GridMismatchError):
        eval_path_form(form, PathVariation.zeros(9, 2), PathVariation.zeros(17, 2))
    with pytest.raises(GridMismatchError):
        PathVariation(np.zeros((9, 2)), np.zeros((8, 2)))


def test_pairing_matrix_matches_form(rng):
    grid = TimeGrid(9)
    form = PathSpaceForm(grid)
    matrix = pairing_matrix(form, 2)
    assert np.array_equal(matrix, -matrix.T)
    d1, d2 = PathVariation.random(rng, 9, 2), PathVariation.random(rng, 9, 2)
    v1 = np.concatenate([d1.base.ravel(), d1.fiber.ravel()])
    v2 = np.concatenate([d2.base.ravel(), d2.fiber.ravel()])
    assert v1 @ matrix @ v2 == pytest.approx(eval_path_form(form, d1, d2), abs=1e-13)


def test_form_is_nondegenerate():
    report = check_nondegeneracy(TimeGrid(33), 2)
    assert report.passed
    # smallest weight sits at the two end nodes
    assert report.residual == pytest.approx(0.5 / 32)
    assert report.details['antisymmetry'] == 0.0


def test_multiplicativity_on_zero_bivector(rng, zero_plane):
    p, q = zero_poisson_pair(rng, zero_plane, TimeGrid(33))
    report = check_multiplicativity(p, q, trials=20)
    assert report.passed
    assert report.details['straddle_within_bound']


def test_multiplicativity_on_symplectic_plane(rng, symplectic_plane):
    p, q = composable_pair(rng, symplectic_plane, TimeGrid(33))
    report = check_multiplicativity(p, q, trials=20)
    assert report.passed
    assert report.residual < 1e-12


def test_kernel_containment_for_zero_bivector(rng, zero_plane):
    p, q = zero_poisson_pair(rng, zero_plane, TimeGrid(33), matched=True)
    report = check_kernel_containment(default_family(p, q, 9), probes=10)
    assert report.passed
    assert report.residual < 1e-12


def test_kernel_containment_on_coadjoint_orbit(rng, so3_dual):
    family, _ = gauge_path_family(rng, so3_dual, TimeGrid(65), EpsilonGrid(33))
    assert check_kernel_containment(family, probes=10).passed


def test_kernel_containment_needs_a_homotopy(rng, zero_plane):
    p, q = zero_poisson_pair(rng, zero_plane, TimeGrid(65), matched=False)
    with pytest.raises(NotAHomotopyError):
        check_kernel_containment(default_family(p, q, 17))


def test_reduced_bracket_on_cotangent_bundle(rng):
    chart = Chart.box(2)
    model = cotangent_bundle_model(chart)
    f, g = random_polynomial(rng, 2), random_polynomial(rng, 2)
    report = oracle_reduced_bracket(model, f, g, samples=30)
    assert report.passed
    assert report.name == 'reduced-bracket-zero-poisson'


def test_reduced_bracket_on_pair_groupoid(symplectic_plane_bivector):
    model = pair_groupoid_model(symplectic_plane_bivector)
    f, g = parse_expr("x1^2", 2), parse_expr("x1*x2", 2)
    report = oracle_reduced_bracket(model, f, g, samples=30)
    assert report.passed
    assert report.details['target_defect'] < 1e-12


def test_pair_model_rejects_degenerate_bivector(rng):
    model = pair_groupoid_model(so3_coadjoint_bivector())
    f, g = random_polynomial(rng, 3), random_polynomial(rng, 3)
    with pytest.raises(DegenerateBivectorError):
        oracle_reduced_bracket(model, f, g, samples=10)


def test_no_explicit_groupoid_for_development(symplectic_plane_bivector):
    with pytest.raises(UnsupportedOracleError):
        groupoid_model(DEVELOPMENT, symplectic_plane_bivector)


@pytest.fixture
def symplectic_plane_bivector():
    return PoissonBivector(Chart.box(2), {(0, 1): '1'})
