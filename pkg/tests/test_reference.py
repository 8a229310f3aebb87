import csv

import numpy as np
import pytest

from hilbertlayers import reference as rf
from hilbertlayers.velocity import infinitesimal_maxwellian


def uniform(grid, n, g=None, eps=0.1):
    F = grid.mu if g is None else grid.mu + eps * grid.sqrt_mu * g
    return np.tile(F, (n, 1))


def shear_state(grid, n, amp=0.3, eps=0.1):
    return uniform(grid, n, infinitesimal_maxwellian(grid, 0.0, [amp, 0.0, 0.0], 0.0), eps)


def test_config_validation(grid16):
    with pytest.raises(ValueError):
        rf.SlabConfig(0.0)
    with pytest.raises(ValueError):
        rf.SlabConfig(0.1, alpha=1.5)
    with pytest.raises(ValueError):
        rf.SlabConfig(0.1, scheme="weno")
    cfg = rf.SlabConfig(0.1, dt=1.0)
    with pytest.raises(ValueError, match="CFL"):
        cfg.time_step(grid16)


def test_time_step_lands_on_final_time(grid16):
    cfg = rf.SlabConfig(0.07, n_x=64, t_final=0.013)
    dt, n = cfg.time_step(grid16)
    assert dt <= cfg.max_dt(grid16) and abs(n * dt - 0.013) < 1e-15


# ---- wall ----


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_wall_fixes_mu(grid16, alpha):
    wall = rf.WallOperator(grid16, alpha)
    out = np.where(grid16.incoming, 0.0, grid16.mu)
    inc = rf.apply_wall(out, wall)
    np.testing.assert_allclose(inc, grid16.mu, rtol=1e-13, atol=0)


def test_specular_wall(grid16, rng):
    trace = rng.random(grid16.size) * grid16.mu
    inc = rf.WallOperator(grid16, 0.0).apply(trace)
    R = grid16.reflection
    assert np.array_equal(inc[grid16.incoming], trace[R][grid16.incoming])
    assert np.array_equal(inc[~grid16.incoming], trace[~grid16.incoming])


@pytest.mark.parametrize("alpha", [0.3, 1.0])
def test_wall_zero_mass_flux(grid16, rng, alpha):
    trace = rng.random((4, grid16.size)) * grid16.mu
    inc = rf.WallOperator(grid16, alpha).apply(trace)
    flux = inc @ (grid16.weights * grid16.nodes[:, 2])
    scale = np.abs(inc) @ (grid16.weights * np.abs(grid16.nodes[:, 2]))
    assert np.max(np.abs(flux) / scale) <= 1e-12


def test_diffuse_wall_shape(grid16, rng):
    trace = rng.random(grid16.size) * grid16.mu
    inc = rf.WallOperator(grid16, 1.0).apply(trace)[grid16.incoming]
    ratio = inc / grid16.mu[grid16.incoming]
    assert np.ptp(ratio) <= 1e-12 * ratio.max()


# ---- relaxation ----


def test_discrete_maxwellian_matches_moments(grid16, rng):
    cfg = rf.SlabConfig(0.1, n_x=4)
    F = shear_state(grid16, 4) * (1 + 0.2 * rng.random((4, grid16.size)))
    slab = rf.BGKSlab(cfg, grid16, F[-1])
    M = slab.maxwellian(F)
    np.testing.assert_allclose(slab.moments(M), slab.moments(F), rtol=1e-13, atol=1e-15)
    assert np.all(M > 0)


def test_discrete_maxwellian_of_mu_is_mu(grid16):
    cfg = rf.SlabConfig(0.1, n_x=4)
    slab = rf.BGKSlab(cfg, grid16, grid16.mu)
    M = slab.maxwellian(uniform(grid16, 4))
    assert np.max(np.abs(M - grid16.mu)) <= 1e-15


def test_relaxation_entropy_decreases(grid16, rng):
    cfg = rf.SlabConfig(0.3, n_x=4)
    F = uniform(grid16, 4) * (0.5 + rng.random((4, grid16.size)))
    slab = rf.BGKSlab(cfg, grid16, F[-1])
    H = lambda f: np.sum(f * np.log(f) * grid16.weights, axis=1)
    h_prev = H(F)
    for _ in range(5):
        F = slab.relax(F, slab.dt)
        h = H(F)
        assert np.all(h <= h_prev + 1e-14)
        h_prev = h


# ---- steps ----


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_equilibrium_fixed_point(grid16, alpha):
    cfg = rf.SlabConfig(0.1, alpha, n_x=16, t_final=0.002)
    F0 = uniform(grid16, 16)
    traj = rf.run(cfg, grid16, rf.KineticState(F0))
    for s in traj.states:
        assert np.max(np.abs(s.F - F0)) <= 1e-13


def test_uniform_shear_conserves_mass(grid16):
    cfg = rf.SlabConfig(0.1, 1.0, n_x=16)
    F0 = shear_state(grid16, 16)
    slab = rf.BGKSlab(cfg, grid16, F0[-1])
    new, row = rf.step(rf.KineticState(F0), slab)
    assert abs(rf.totals(slab, new.F)[0] - rf.totals(slab, F0)[0]) <= 1e-12


def test_conservation_ledger(grid16, rng):
    cfg = rf.SlabConfig(0.1, 0.7, n_x=32, t_final=0.01)
    F0 = shear_state(grid16, 32) * (1 + 0.1 * np.sin(3 * cfg.centers)[:, None] * rng.random(grid16.size))
    traj = rf.run(cfg, grid16, rf.KineticState(F0))
    assert max(r.drift for r in traj.ledger) <= 1e-10
    assert max(abs(r.wall_flux[0]) for r in traj.ledger) <= 1e-12


def test_tangential_momentum_only_through_fluxes(grid16):
    cfg = rf.SlabConfig(0.1, 1.0, n_x=32, t_final=0.1)
    F0 = shear_state(grid16, 32)
    traj = rf.run(cfg, grid16, rf.KineticState(F0))
    slab = rf.BGKSlab(cfg, grid16, F0[-1])
    change = rf.totals(slab, traj.final.F)[1] - rf.totals(slab, F0)[1]
    booked = sum(r.wall_flux[1] - r.far_flux[1] for r in traj.ledger)
    assert abs(change - booked) <= 1e-9
    assert change < 0  # the diffuse wall drags the gas


def test_zero_perturbation_constant(grid16):
    cfg = rf.SlabConfig(0.2, 1.0, n_x=8, t_final=0.01)
    traj = rf.run(cfg, grid16, rf.KineticState(uniform(grid16, 8)), samples=4)
    assert len(traj.states) >= 3
    for s in traj.states[1:]:
        assert np.max(np.abs(s.F - traj.states[0].F)) <= 1e-13


def test_relaxation_stronger_for_small_eps(grid16):
    g = infinitesimal_maxwellian(grid16, 0.0, [0.2, 0, 0], 0.0) + 0.1 * grid16.sqrt_mu * grid16.nodes[:, 0] * grid16.nodes[:, 2]
    dist = []
    for eps in (0.4, 0.2, 0.1, 0.05):
        cfg = rf.SlabConfig(eps, 1.0, n_x=8)
        F0 = uniform(grid16, 8, g, 0.1)
        slab = rf.BGKSlab(cfg, grid16, F0[-1])
        new, _ = rf.step(rf.KineticState(F0), slab)
        M = slab.maxwellian(new.F)
        dist.append(np.sqrt(np.sum((new.F - M) ** 2 * grid16.weights)))
    assert all(b < a for a, b in zip(dist, dist[1:]))


def test_negative_state_aborts(grid16):
    cfg = rf.SlabConfig(0.1, 1.0, n_x=8)
    F0 = uniform(grid16, 8)
    F0[3, 100] = -1e-3
    slab = rf.BGKSlab(cfg, grid16, grid16.mu)
    with pytest.raises((RuntimeError, ValueError)):
        rf.step(rf.KineticState(F0), slab, relax=False)


def test_positivity_preserved(grid16, rng):
    cfg = rf.SlabConfig(0.1, 0.5, n_x=16, t_final=0.005)
    F0 = uniform(grid16, 16) * rng.random((16, grid16.size))
    traj = rf.run(cfg, grid16, rf.KineticState(F0))
    assert traj.final.F.min() >= 0


def test_specular_step_commutes_with_tangential_shift(grid16, rng):
    # rolling the v1 axis is an exact tangential shift of the lattice
    n = grid16.resolution
    cfg = rf.SlabConfig(0.1, 0.0, n_x=12)
    F0 = shear_state(grid16, 12) * (1 + 0.2 * rng.random((12, grid16.size)))

    def roll(F):
        return np.roll(F.reshape(F.shape[:-1] + (n, n, n)), 1, axis=-3).reshape(F.shape)

    a = rf.BGKSlab(cfg, grid16, F0[-1]).transport(F0, 1e-4)[0]
    b = rf.BGKSlab(cfg, grid16, roll(F0[-1])).transport(roll(F0), 1e-4)[0]
    assert np.array_equal(roll(a), b)
    slab = rf.BGKSlab(cfg, grid16, F0[-1])
    ma, mb = slab.moments(roll(a)), slab.moments(b)
    assert np.max(np.abs(ma - mb)) <= 1e-12


def test_self_convergence_in_dt(grid16):
    sols = []
    for dt in (4e-4, 2e-4, 1e-4):
        cfg = rf.SlabConfig(0.2, 1.0, n_x=16, t_final=0.008, dt=dt, scheme="upwind")
        x = cfg.centers
        u1 = 0.1 * np.cos(np.pi * x / 2)[:, None]
        F0 = grid16.mu * np.exp(u1 * grid16.nodes[:, 0] - 0.5 * u1**2)
        sols.append(rf.run(cfg, grid16, rf.KineticState(F0)).final.F)
    d1 = np.max(np.abs(sols[0] - sols[1]))
    d2 = np.max(np.abs(sols[1] - sols[2]))
    assert 1.6 <= d1 / d2 <= 2.5


def test_remainder_norm(grid16, rng):
    F = uniform(grid16, 8)
    w = np.sqrt(F)
    assert rf.remainder_norm(F, F, w, 0.1, grid16) == 0.0
    assert rf.remainder_norm(F * 1.01, F, w, 0.1, grid16) > 0
    with pytest.raises(ValueError):
        rf.remainder_norm(F[:4], F, w, 0.1, grid16)


def test_write_ledger(grid16, tmp_path):
    cfg = rf.SlabConfig(0.2, 1.0, n_x=8, t_final=0.004)
    traj = rf.run(cfg, grid16, rf.KineticState(uniform(grid16, 8)))
    path = tmp_path / "ledger.csv"
    rf.write_ledger(path, traj)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["step", "t", "mass"]
    assert len(rows) == len(traj.ledger) + 1
