import numpy as np
import pytest
from scipy.special import erfc

from hilbertlayers import fd
from hilbertlayers.collision import TransportCoefficients
from hilbertlayers.fluid import (
    Profile,
    ShearData,
    ShearHierarchy,
    ShearProfile,
    WallTrace,
    assemble_sources,
    build_meshes,
    default_shear_data,
    diffuse,
    divergence_residual,
    initial_layer,
    linear_euler_residual,
    prandtl_residual,
    solve_euler_shear,
    solve_linear_prandtl,
    solve_nonlinear_prandtl,
)
from hilbertlayers.knudsen import FluidTraces, SlipCoefficients, chain_boundary_conditions, slip_coefficients
from hilbertlayers.velocity import burnett

UNIT = TransportCoefficients(1.0, 1.0, 1.0)


def phi(bur, a_u, a_t, b_u, b_t):
    """Closed form of (1/2)P⊥[p_a p_b √μ] for BGK: symmetric in a and b."""
    out = 0.5 * np.einsum("...i,...j,ijm->...m", a_u, b_u, bur.A)
    out += 0.5 * np.einsum("...,...i,im->...m", a_t, b_u, bur.B)
    out += 0.5 * np.einsum("...,...i,im->...m", b_t, a_u, bur.B)
    out += 0.5 * (a_t * b_t)[..., None] * bur.C
    return out


@pytest.fixture(scope="module")
def slip16(bgk16):
    return slip_coefficients(bgk16, 1.0)[0]


@pytest.fixture(scope="module")
def meshes():
    return build_meshes(n_x=100, n_zeta=80, n_t=20)


@pytest.fixture(scope="module")
def hier(bgk16, slip16, meshes):
    return ShearHierarchy(bgk16, default_shear_data(), meshes, order=3, slip=slip16).solve()


def test_profile_derivatives():
    x = np.linspace(-1, 2, 301)
    for p in (Profile("tanh", 0.8, 1.3, -1.0), Profile("sin", 0.3, 2.0, 0.2), Profile("exp", 0.3, 0.7)):
        for order in range(3):
            num = np.gradient(p(x, order), x, edge_order=2)
            assert np.max(np.abs(num - p(x, order + 1))[2:-2]) < 2e-4
    assert np.all(Profile("const", 2.0)(x, 1) == 0)
    with pytest.raises(ValueError):
        Profile("cosh", 1.0)


def test_shear_profile_rejects_normal_velocity():
    with pytest.raises(ValueError):
        ShearProfile(U3=Profile("const", 0.1))


def test_euler_shear_is_steady():
    t = np.linspace(0, 0.1, 5)
    x = np.linspace(0, 2, 41)
    sol = solve_euler_shear(default_shear_data().order0, t, x)
    assert np.all(sol.u == sol.u[0])
    assert np.max(np.abs(sol.divergence())) == 0.0
    assert sol.boussinesq_defect() == 0.0
    with pytest.raises(TypeError):
        solve_euler_shear({"U1": 1.0}, t, x)


def test_leading_layer_matches_erfc():
    m = build_meshes(n_zeta=160, n_t=50)
    init = initial_layer(m.zeta, (-0.6, 0.2), 0.3, UNIT)
    st = solve_nonlinear_prandtl(init, WallTrace((0.6, -0.2), -0.3), UNIT, m.times, m.zeta)
    tt = 1.0 + m.times[:, None]
    ref = erfc(m.zeta / (2 * np.sqrt(tt)))
    err = max(
        np.max(np.abs(st.ub1 + 0.6 * ref)), np.max(np.abs(st.ub2 - 0.2 * ref)), np.max(np.abs(st.thetab - 0.3 * ref))
    )
    assert err <= 1e-4
    assert np.all(st.pb == 0.0)
    assert np.all(st.ub_next3 == 0.0)


def test_leading_layer_richardson_order():
    sols = []
    for n in (40, 80, 160):
        m = build_meshes(n_zeta=n, n_t=n // 2)
        init = initial_layer(m.zeta, (1.0, 0.0), 0.0, UNIT)
        st = solve_nonlinear_prandtl(init, WallTrace((-1.0, 0.0), 0.0), UNIT, m.times, m.zeta)
        sols.append(st.ub1[-1])
    coarse, mid, fine = sols[0], sols[1][::2], sols[2][::4]
    ratio = np.max(np.abs(coarse - mid)) / np.max(np.abs(mid - fine))
    assert 3.5 <= ratio <= 4.5


def test_diffusion_energy_decays():
    z = fd.stretched_mesh(20.0, 80)
    t = np.linspace(0, 1.0, 41)
    U, _ = diffuse(z, t, 1.0, np.exp(-((z - 3) ** 2)), 0.0)
    energy = (U**2) @ fd.trapezoid_weights(z)
    assert np.all(np.diff(energy) < 0)


def test_diffuse_blowup_detected():
    z = fd.stretched_mesh(20.0, 40)
    t = np.linspace(0, 1.0, 11)
    with pytest.raises(RuntimeError, match="blew up"):
        diffuse(z, t, 1.0, np.zeros_like(z), 0.0, source=np.full((11, 41), 1e3), bound=1.0)


def test_prandtl_discrete_residual_and_drift():
    m = build_meshes(n_zeta=80, n_t=20)
    init = initial_layer(m.zeta, (1.0, 0.5), -0.2, UNIT)
    drift = 0.1 + 0.05 * m.zeta / 20
    U, _ = diffuse(m.zeta, m.times, 1.0, init[0][:, 0], 1.0, drift=drift)
    from hilbertlayers.fluid import PrandtlState

    z = np.zeros_like(U)
    st = PrandtlState(0, m.times, m.zeta, np.stack([U, U], -1), U, z, z, z, z, z)
    assert prandtl_residual(st, UNIT, drift=drift) < 1e-10


def test_structural_identities(hier):
    lay0 = hier.layer[0]
    assert np.all(lay0.pressure == 0.0)
    assert np.all(lay0.u[..., 2] == 0.0)
    assert np.all(hier.layer[1].u[..., 2] == 0.0)
    st = hier.prandtl_state(0)
    assert st.far_field() < 1e-8


def test_divergence_constraint(hier):
    for k in (2, 3):
        st = hier.prandtl_state(k)
        assert divergence_residual(st, hier.layer[k - 2].rho_t) <= 1e-8


def test_layer_equation_residual(hier):
    for k in range(4):
        st = hier.prandtl_state(k)
        assert prandtl_residual(st, hier.kappa, hier.f_b[k], hier.g_b[k]) < 1e-9


def test_interior_second_order_closed_form(hier):
    bur = burnett(hier.grid)
    it0 = hier.interior[0]
    for m in (0, len(hier.times) - 1):
        snap = hier.snapshot(m)
        ref = phi(bur, it0.u[m], it0.theta[m], it0.u[m], it0.theta[m])
        assert np.max(np.abs(snap.iperp(2) - ref)) < 1e-6  # grid quadrature error of the Burnett functions


def test_layer_micro_closed_forms(hier):
    bur = burnett(hier.grid)
    x, z = hier.x, hier.zeta
    i0, i1, b0, b1 = hier.interior[0], hier.interior[1], hier.layer[0], hier.layer[1]
    m = len(hier.times) // 2
    snap = hier.snapshot(m)
    T0u, T0t = i0.u[m, 0], i0.theta[m, 0]
    U0, Th0 = T0u + b0.u[m], T0t + b0.theta[m]
    ref2 = phi(bur, U0, Th0, U0, Th0) - phi(bur, T0u, T0t, T0u, T0t)
    assert np.max(np.abs(snap.bperp(2) - ref2)) < 1e-6

    du0 = fd.wall_derivatives(i0.u[m], x, 1)[1]
    dt0 = fd.wall_derivatives(i0.theta[m], x, 1)[1]
    T1u = i1.u[m, 0] + z[:, None] * du0
    T1t = i1.theta[m, 0] + z * dt0
    U1, Th1 = T1u + b1.u[m], T1t + b1.theta[m]
    gu = fd.d1(b0.u[m], z)
    gt = fd.d1(b0.theta[m], z)
    stream = -(np.einsum("ni,im->nm", gu, bur.A[2]) + gt[:, None] * bur.B[2])
    ref3 = stream + 2 * phi(bur, U0, Th0, U1, Th1) - 2 * phi(bur, T0u, T0t, T1u, T1t)
    assert np.max(np.abs(snap.bperp(3) - ref3)) < 1e-6


def test_interior_viscous_correction(hier):
    # u_2 starts at zero and is driven by κ1 u0''
    u0pp = default_shear_data().order0.evaluate(hier.x, 2)[0]
    t = hier.times
    expect = t[:, None, None] * hier.kappa.kappa1 * u0pp[None, :, :2]
    err = np.abs(hier.interior[2].u[..., :2] - expect)[:, 3:-3]
    assert np.max(err) < 2e-3 * np.max(np.abs(u0pp))


def test_third_order_pressure_relation(hier):
    it3 = hier.interior[3]
    u0, u1 = hier.interior[0].u, hier.interior[1].u
    ref = (2.0 / 3.0) * np.sum(u0 * u1, axis=-1)
    assert np.max(np.abs(it3.rho + it3.theta - ref)) < 1e-6


def test_linear_euler_discrete_residual(hier):
    for k in (1, 2, 3):
        fu, fe = hier._euler_forces[k]
        res = linear_euler_residual(hier.euler_solution(k), fu, fe, hier.interior[k - 2].rho_t if k >= 2 else None)
        assert max(res.values()) < 1e-12


def test_zeroed_unknowns_only_remove_diffusion(hier):
    k, m = 1, len(hier.times) - 1
    full = hier.snapshot(m).bperp(k + 3)
    masked = hier.snapshot(m, mask={"layer": (k,)}).bperp(k + 3)
    lay = hier.layer[k]
    dS = (full - masked) @ hier.A3w[:2].T
    dT = (full - masked) @ hier.B3w
    assert np.max(np.abs(dS + hier.kappa.kappa1 * fd.d1(lay.u[m, :, :2], hier.zeta))) < 1e-12
    assert np.max(np.abs(0.4 * dT + hier.kappa.kappa2 * fd.d1(lay.theta[m], hier.zeta))) < 1e-12


def test_sources_bookkeeping(hier):
    src = assemble_sources(hier, 1, 5)
    assert np.array_equal(src.f_b, hier.f_b[1][5])
    # J and I have the order-k unknowns removed: for k = 0 both vanish identically
    src0 = assemble_sources(hier, 0, 5)
    assert np.max(np.abs(src0.J)) == 0.0 and np.max(np.abs(src0.I)) == 0.0
    with pytest.raises(ValueError):
        assemble_sources(hier, 4, 0)


def test_zero_data_gives_zero(bgk16, meshes):
    h = ShearHierarchy(bgk16, ShearData(), meshes, order=2).solve()
    for k in range(3):
        for f in (h.interior[k], h.layer[k]):
            assert np.max(np.abs(f.u)) == 0.0 and np.max(np.abs(f.theta)) == 0.0 and np.max(np.abs(f.rho)) == 0.0


def test_lower_orders_independent_of_truncation(bgk16, slip16, meshes, hier):
    h2 = ShearHierarchy(bgk16, default_shear_data(), meshes, order=2).solve()
    for k in range(3):
        assert np.array_equal(h2.layer[k].u, hier.layer[k].u)
        assert np.array_equal(h2.interior[k].theta, hier.interior[k].theta)


def test_hierarchy_validation(bgk16, meshes, hs_small):
    with pytest.raises(ValueError):
        ShearHierarchy(bgk16, default_shear_data(), meshes, order=4)
    with pytest.raises(ValueError, match="slip"):
        ShearHierarchy(bgk16, default_shear_data(), meshes, order=3)
    with pytest.raises(NotImplementedError):
        ShearHierarchy(hs_small, default_shear_data(), meshes, order=1)


def test_third_order_wall_data_uses_slip(hier, slip16):
    lay3, it3 = hier.layer[3], hier.interior[3]
    grad = hier.prandtl_state(0).wall_gradient()
    assert np.allclose(lay3.u[:, 0, :2] + it3.u[:, 0, :2], slip16.b1 * grad[:, :2], atol=1e-14)
    assert np.allclose(lay3.theta[:, 0] + it3.theta[:, 0], slip16.c1 * grad[:, 2], atol=1e-14)


def test_chain_boundary_conditions():
    tr = FluidTraces(np.array([[0.1, 0.2]]), np.array([0.3]), np.array([[1.0, 2.0, 3.0]]))
    for k in (0, 1, 2):
        u, th = chain_boundary_conditions(k, tr)
        assert np.array_equal(u, -tr.u) and np.array_equal(th, -tr.theta)
    s = SlipCoefficients(2.0, 0.5, 2.0)
    u, th = chain_boundary_conditions(3, tr, s)
    assert np.allclose(u, [[1.9, 3.8]]) and np.allclose(th, [1.2])
    with pytest.raises(ValueError):
        chain_boundary_conditions(3, tr)
    with pytest.raises(ValueError):
        chain_boundary_conditions(3, FluidTraces(tr.u, tr.theta), s)
    with pytest.raises(NotImplementedError):
        chain_boundary_conditions(4, tr, s)


def test_linear_prandtl_with_forcing():
    # U = t·e^{-ζ} solves U_t = U'' + f with f = e^{-ζ}(1 - t); U(0) = t
    m = build_meshes(n_zeta=160, n_t=40, z_max=30.0)
    z, t = m.zeta, m.times
    f = np.exp(-z)[None, :] * (1 - t)[:, None]
    f_u = np.stack([f, 2 * f], -1)
    st = solve_linear_prandtl(
        2, f_u, f, np.stack([t, 2 * t], -1), t, UNIT, t, z, init=(np.zeros((len(z), 2)), np.zeros(len(z)))
    )
    exact = t[:, None] * np.exp(-z)[None]
    assert np.max(np.abs(st.thetab - exact)) < 5e-4
    assert np.max(np.abs(st.ub2 - 2 * exact)) < 1e-3
