import numpy as np
import pytest
from scipy.linalg import expm

from src.oracles import development_map, zero_poisson_class
from src.path_space import (
    A0_PATH, A_PATH, INVALID, A0Path, APath, ChartExitError, EndpointMismatchError, EndpointsNotFixedError,
    EpsilonGrid, GridTooCoarseError, NoDefaultFamilyError, PathError, PathFamily, PathValidationError,
    TimeGrid, check_intermediate_slices, concatenate, constant_path, default_family, is_homotopic_along_family,
    path_from_json, reparametrize_to_a0, reverse, solve_base_path, solve_homotopy_equation, validate_apath,
    validate_family,
)
from src.sampling import (
    composable_pair, flat_fiber_curve, gauge_family, gauge_path_family, linear_family, random_christoffels,
    zero_poisson_pair, zero_poisson_path,
)


def test_grids_need_three_nodes():
    with pytest.raises(GridTooCoarseError):
        TimeGrid(2)
    with pytest.raises(GridTooCoarseError):
        EpsilonGrid(1)
    grid = TimeGrid(65)
    assert grid.step == 1.0 / 64
    assert grid.refined().n_t == 129
    assert grid.path_tolerance() == pytest.approx(10.0 / 64 ** 2)


def test_constant_fiber_on_symplectic_plane_gives_straight_line(symplectic_plane):
    grid = TimeGrid(33)
    fiber = np.tile([1.0, 0.0], (grid.n_t, 1))
    path = solve_base_path(symplectic_plane, [0.0, -0.5], fiber, grid)
    expected = np.stack([np.zeros(grid.n_t), -0.5 + grid.nodes], axis=-1)
    assert np.allclose(path.base, expected, atol=1e-14)

    report = validate_apath(path)
    assert report.classification == A_PATH
    assert report.passed
    assert report.residual < 1e-12


def test_base_path_leaving_the_chart(symplectic_plane):
    grid = TimeGrid(33)
    fiber = np.tile([10.0, 0.0], (grid.n_t, 1))
    with pytest.raises(ChartExitError) as info:
        solve_base_path(symplectic_plane, [0.0, 0.0], fiber, grid)
    assert 0.2 <= info.value.exit_time <= 0.2 + grid.step


def test_start_outside_chart(symplectic_plane):
    grid = TimeGrid(9)
    with pytest.raises(ChartExitError):
        solve_base_path(symplectic_plane, [3.0, 0.0], np.zeros((9, 2)), grid)


def test_tampered_node_makes_path_invalid(symplectic_plane):
    grid = TimeGrid(33)
    fiber = np.tile([1.0, 0.0], (grid.n_t, 1))
    path = solve_base_path(symplectic_plane, [0.0, -0.5], fiber, grid)
    base = path.base.copy()
    base[10, 0] += 0.1
    report = validate_apath(APath(symplectic_plane, grid, base, path.fiber))
    assert report.classification == INVALID
    assert not report.passed
    assert abs(report.worst_node - 10) == 1


def test_constant_path_is_a0(so3_dual):
    path = constant_path(so3_dual, [0.5, 0.5, 0.5], TimeGrid(17))
    report = validate_apath(path)
    assert report.classification == A0_PATH
    assert report.residual == 0.0


def test_solved_path_stays_on_coadjoint_sphere(rng, so3_dual):
    grid = TimeGrid(257)
    fiber = flat_fiber_curve(rng, grid.nodes, 3, amplitude=0.3)
    path = solve_base_path(so3_dual, [1.0, 0.0, 0.0], fiber, grid)
    radii = np.linalg.norm(path.base, axis=1)
    assert np.allclose(radii, 1.0, atol=1e-7)
    report = validate_apath(path)
    assert report.classification == A0_PATH


def test_non_flat_path_is_not_a0(symplectic_plane):
    grid = TimeGrid(33)
    fiber = np.tile([1.0, 0.0], (grid.n_t, 1))
    path = solve_base_path(symplectic_plane, [0.0, -0.5], fiber, grid)
    with pytest.raises(PathValidationError):
        A0Path.from_path(path)


def test_reparametrized_constant_curve_keeps_development(so3, representation):
    grid = TimeGrid(129)
    x = np.array([0.4, -1.1, 0.7])
    path = APath(so3, grid, np.zeros((grid.n_t, 0)), np.tile(x, (grid.n_t, 1)))
    a0 = reparametrize_to_a0(path)
    assert isinstance(a0, A0Path)
    expected = expm(representation.matrix_of(x))
    assert np.allclose(development_map(path, representation).matrix, expected, atol=1e-6)
    assert np.allclose(development_map(a0, representation).matrix, expected, atol=1e-6)


def test_reparametrization_keeps_zero_poisson_class(rng, zero_plane):
    path = zero_poisson_path(rng, zero_plane, TimeGrid(129))
    reparametrized = reparametrize_to_a0(path)
    assert zero_poisson_class(reparametrized).distance(zero_poisson_class(path)) < 1e-6


def test_concatenation_runs_second_path_first(rng, so3_dual):
    grid = TimeGrid(65)
    p, q = composable_pair(rng, so3_dual, grid)
    joined = concatenate(p, q)
    assert joined.grid.n_t == 129
    assert np.allclose(joined.source, q.source)
    assert np.allclose(joined.target, p.target)
    assert np.allclose(joined.fiber[:grid.n_t - 1], 2.0 * q.fiber[:-1])
    with pytest.raises(EndpointMismatchError):
        concatenate(q, p)


def test_reverse_swaps_endpoints(rng, so3_dual):
    path = composable_pair(rng, so3_dual, TimeGrid(33))[0]
    backwards = reverse(path)
    assert np.array_equal(backwards.source, path.target)
    assert np.array_equal(backwards.target, path.source)
    assert np.array_equal(backwards.fiber, -path.fiber[::-1])


def test_concatenation_and_reverse_need_flat_ends(symplectic_plane):
    grid = TimeGrid(33)
    fiber = np.tile([1.0, 0.0], (grid.n_t, 1))
    q = solve_base_path(symplectic_plane, [0.0, -0.5], fiber, grid)
    p = solve_base_path(symplectic_plane, q.target, fiber, grid)
    assert validate_apath(p).classification == A_PATH
    with pytest.raises(PathValidationError):
        concatenate(p, q)
    with pytest.raises(PathValidationError):
        reverse(p)


def test_gauge_family_fixes_both_endpoints(rng):
    family = gauge_family(rng, TimeGrid(17), EpsilonGrid(5))
    group = family.group
    assert group.shape == (5, 17, 3, 3)
    assert np.allclose(group @ np.swapaxes(group, -1, -2), np.eye(3), atol=1e-12)
    assert np.allclose(group[:, 0], np.eye(3), atol=1e-12)
    assert np.allclose(group[:, -1], group[0, -1], atol=1e-12)


def test_constant_in_eps_family_is_homotopic(rng, so3):
    time_grid, eps_grid = TimeGrid(33), EpsilonGrid(9)
    fiber = flat_fiber_curve(rng, time_grid.nodes, 3)
    family = linear_family(so3, np.zeros(0), fiber, fiber, time_grid, eps_grid)
    report = is_homotopic_along_family(family)
    assert report.passed
    assert report.residual < 1e-12
    assert validate_family(family).passed


def test_matched_zero_poisson_pair_is_homotopic(rng, zero_plane):
    grid = TimeGrid(65)
    p, q = zero_poisson_pair(rng, zero_plane, grid, matched=True)
    assert is_homotopic_along_family(default_family(p, q, 17)).passed

    p, q = zero_poisson_pair(rng, zero_plane, grid, matched=False)
    report = is_homotopic_along_family(default_family(p, q, 17))
    assert not report.passed
    assert report.residual > 0.1


def test_moving_endpoints_are_rejected(zero_plane):
    time_grid, eps_grid = TimeGrid(17), EpsilonGrid(5)
    base = np.zeros((5, 17, 2))
    base[:, :, 0] = 0.5 * eps_grid.nodes[:, None]
    family = PathFamily(zero_plane, time_grid, eps_grid, base, np.zeros((5, 17, 2)))
    with pytest.raises(EndpointsNotFixedError):
        is_homotopic_along_family(family)


def test_default_family_needs_vanishing_anchor(rng, so3_dual):
    p, q = composable_pair(rng, so3_dual, TimeGrid(33))
    with pytest.raises(NoDefaultFamilyError):
        default_family(p, q, 9)


def test_solver_reproduces_closed_form_gauge_field(rng, so3):
    time_grid, eps_grid = TimeGrid(65), EpsilonGrid(33)
    family, gauge = gauge_path_family(rng, so3, time_grid, eps_grid)
    field = solve_homotopy_equation(family)
    assert np.max(np.abs(field.values - gauge.homotopy)) < 1e-2
    assert is_homotopic_along_family(family).passed


def test_twisted_gauge_family_is_not_a_homotopy(rng, so3):
    time_grid, eps_grid = TimeGrid(65), EpsilonGrid(33)
    family, gauge = gauge_path_family(rng, so3, time_grid, eps_grid, twist=True)
    report = is_homotopic_along_family(family)
    expected = float(np.max(np.abs(gauge.homotopy[:, -1])))
    assert abs(report.residual - expected) < 1e-2


def test_intermediate_slices_on_coadjoint_orbit(rng, so3_dual):
    time_grid, eps_grid = TimeGrid(65), EpsilonGrid(33)
    family, _ = gauge_path_family(rng, so3_dual, time_grid, eps_grid)
    field = solve_homotopy_equation(family)
    assert check_intermediate_slices(family, field).passed


def test_homotopy_field_does_not_depend_on_connection(rng, so3_dual):
    time_grid, eps_grid = TimeGrid(129), EpsilonGrid(129)
    family, _ = gauge_path_family(rng, so3_dual, time_grid, eps_grid)
    connected = PathFamily(so3_dual.with_connection(random_christoffels(rng, 3, 3)),
                           time_grid, eps_grid, family.base, family.fiber)
    plain = solve_homotopy_equation(family).values
    covariant = solve_homotopy_equation(connected).values
    assert np.max(np.abs(plain - covariant)) < 1e-4


def test_malformed_path_document(so3_dual):
    with pytest.raises(PathError):
        path_from_json(so3_dual, {'base': []})
