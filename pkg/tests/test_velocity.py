import numpy as np
import pytest

from hilbertlayers.velocity import (
    MacroState,
    build_grid,
    burnett,
    chi_basis,
    infinitesimal_maxwellian,
    maxwellian,
    moments,
    project_null,
    reflect,
)


def test_grid_shape_and_mass(grid24):
    assert grid24.size == 24**3
    assert np.all(grid24.weights > 0)
    assert abs(np.sum(grid24.weights * grid24.mu) - 1.0) < 1e-8


def test_odd_moments_vanish(grid24):
    for i in range(3):
        assert abs(np.sum(grid24.weights * grid24.nodes[:, i] * grid24.mu)) < 1e-15


def test_second_moment(grid24):
    assert abs(np.sum(grid24.weights * grid24.speed2 * grid24.mu) - 3.0) < 1e-8


def test_fourth_moment(grid24):
    assert abs(np.sum(grid24.weights * grid24.speed2**2 * grid24.mu) - 15.0) < 1e-7


def test_no_node_on_wall_plane(grid24):
    assert np.min(np.abs(grid24.nodes[:, 2])) > 0


def test_reflection_closure(grid24):
    r = grid24.reflection
    np.testing.assert_array_equal(grid24.nodes[r][:, :2], grid24.nodes[:, :2])
    np.testing.assert_array_equal(grid24.nodes[r][:, 2], -grid24.nodes[:, 2])
    np.testing.assert_array_equal(grid24.weights[r], grid24.weights)


@pytest.mark.parametrize("n", [9, 11, 25])
def test_odd_resolution_rejected(n):
    with pytest.raises(ValueError, match="even"):
        build_grid(8.0, n)


def test_small_inputs_rejected():
    with pytest.raises(ValueError):
        build_grid(8.0, 6)
    with pytest.raises(ValueError):
        build_grid(4.0, 24)


def test_underresolved_moments_rejected():
    with pytest.raises(ValueError, match="moments"):
        build_grid(5.0, 8)


def test_global_maxwellian(grid24):
    np.testing.assert_allclose(maxwellian(grid24, MacroState.rest()), grid24.mu, rtol=1e-14)


def test_shifted_maxwellian_mean(grid24):
    F = maxwellian(grid24, MacroState(1.0, [0.1, 0.0, 0.0], 1.0))
    mass = np.sum(grid24.weights * F)
    mean = np.sum(grid24.weights * F * grid24.nodes[:, 0]) / mass
    assert abs(mean - 0.1) < 1e-7


def test_maxwellian_moments(grid24):
    state = MacroState(1.3, [0.2, -0.1, 0.05], 0.8)
    F = maxwellian(grid24, state)
    w = grid24.weights
    assert abs(np.sum(w * F) - 1.3) < 1e-7
    np.testing.assert_allclose(w * F @ grid24.nodes, 1.3 * state.u, atol=1e-7)
    energy = np.sum(w * F * grid24.speed2)
    assert abs(energy - 1.3 * (np.sum(state.u**2) + 3 * 0.8)) < 1e-7


def test_local_maxwellian_collapses_at_zero_eps(grid24):
    eps = 0.0
    state = MacroState(1 + eps * 0.3, eps * np.array([1.0, 0.0, 0.0]), 1 + eps * -0.3)
    np.testing.assert_allclose(maxwellian(grid24, state), grid24.mu, rtol=1e-14)


@pytest.mark.parametrize("rho,theta", [(0.0, 1.0), (1.0, -0.5)])
def test_maxwellian_rejects_nonpositive(grid24, rho, theta):
    with pytest.raises(ValueError):
        maxwellian(grid24, MacroState(rho, np.zeros(3), theta))


def test_macrostate_rejects_nonfinite():
    with pytest.raises(ValueError):
        MacroState(np.nan, np.zeros(3), 1.0)


def test_chi_gram(grid24):
    np.testing.assert_allclose(grid24.chi.gram, np.diag([1, 1, 1, 1, 1.5]), atol=1e-10)


def test_project_chi1(grid24):
    chi = grid24.chi
    _, (a, b, c) = project_null(chi.chi[1], chi)
    assert abs(a) < 1e-12 and abs(c) < 1e-12
    np.testing.assert_allclose(b, [1, 0, 0], atol=1e-12)


def test_project_burnett_is_zero(grid24):
    A = burnett(grid24).A
    proj, _ = project_null(A[0, 1], grid24.chi)
    assert np.max(np.abs(proj)) < 1e-12


def test_projection_idempotent_and_orthogonal(grid24, rng):
    g = rng.normal(size=grid24.size) * grid24.sqrt_mu ** 0.5
    p1, _ = project_null(g, grid24.chi)
    p2, _ = project_null(p1, grid24.chi)
    assert np.max(np.abs(p2 - p1)) < 1e-12
    resid = grid24.inner(grid24.chi.chi, g - p1)
    assert np.max(np.abs(resid)) < 1e-12


def test_projection_local_basis(grid24, rng):
    basis = chi_basis(grid24, MacroState(1.05, [0.05, 0.0, -0.02], 0.97))
    g = rng.normal(size=grid24.size) * grid24.sqrt_mu
    p1, _ = project_null(g, basis)
    p2, _ = project_null(p1, basis)
    assert np.max(np.abs(p2 - p1)) < 1e-12


def test_projection_grid_mismatch(grid24, grid16):
    with pytest.raises(ValueError):
        project_null(np.zeros(grid16.size), grid24.chi)


def test_infinitesimal_maxwellian_coordinates(grid24):
    g = infinitesimal_maxwellian(grid24, 0.3, [0.1, -0.2, 0.4], -0.5)
    rho, u, theta = moments(grid24, g)
    assert abs(rho - 0.3) < 1e-12 and abs(theta + 0.5) < 1e-12
    np.testing.assert_allclose(u, [0.1, -0.2, 0.4], atol=1e-12)


def test_burnett_gram_examples(grid24):
    b = burnett(grid24)
    ip = grid24.inner
    assert abs(ip(b.A[0, 1], b.A[0, 1]) - 1.0) < 1e-6
    assert abs(ip(b.A[0, 0], b.A[0, 0]) - 4.0 / 3.0) < 1e-6
    assert abs(ip(b.B[2], b.B[2]) - 2.5) < 1e-6


def test_burnett_orthogonal_to_null(grid24):
    b = burnett(grid24)
    funcs = np.concatenate([b.A.reshape(9, -1), b.B, b.C[None]])
    assert np.max(np.abs(grid24.null_coefficients(funcs))) < 1e-10


def test_burnett_symmetric_trace_free(grid24):
    A = burnett(grid24).A
    np.testing.assert_array_equal(A, np.swapaxes(A, 0, 1))
    assert np.max(np.abs(A[0, 0] + A[1, 1] + A[2, 2])) < 1e-15


def test_centered_burnett_matches_global_at_rest(grid24):
    np.testing.assert_allclose(burnett(grid24, MacroState.rest()).A, burnett(grid24).A)


def test_reflect_involution(grid24, rng):
    g = rng.normal(size=grid24.size)
    np.testing.assert_array_equal(reflect(grid24, reflect(grid24, g)), g)


def test_reflect_mu(grid24):
    np.testing.assert_array_equal(reflect(grid24, grid24.mu), grid24.mu)


def test_reflect_chi3(grid24):
    chi3 = grid24.chi.chi[3]
    np.testing.assert_array_equal(reflect(grid24, chi3), -chi3)
