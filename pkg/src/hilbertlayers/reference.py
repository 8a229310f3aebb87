"""Discrete-velocity BGK reference solver on the slab [0, X] with a Maxwell wall at x = 0.

    ε ∂_t F + v3 ∂_x F = ε⁻² (M[F] - F)

Lie splitting: explicit finite-volume transport at speed v3/ε (MUSCL with a
van Leer limiter, or first-order upwind), then exact relaxation
F ← M + (F - M) exp(-dt/ε³).  M[F] is the discrete Maxwellian exp(a + b·v + c|v|²)
whose grid moments match those of F (Newton per cell), so relaxation is
conservative to round-off and μ is an exact fixed point.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SlabConfig:
    epsilon: float
    alpha: float = 1.0
    x_max: float = 2.0
    n_x: int = 256
    t_final: float = 0.1
    cfl: float = 0.5
    dt: float = None
    scheme: str = "muscl"

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.n_x < 4 or self.x_max <= 0:
            raise ValueError("slab needs x_max > 0 and at least 4 cells")
        if self.scheme not in ("muscl", "upwind"):
            raise ValueError(f"unknown transport scheme {self.scheme!r}")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl number must lie in (0, 1]")

    @property
    def dx(self):
        return self.x_max / self.n_x

    @property
    def centers(self):
        return (np.arange(self.n_x) + 0.5) * self.dx

    def max_dt(self, grid):
        return self.cfl * self.epsilon * self.dx / np.max(np.abs(grid.nodes[:, 2]))

    def time_step(self, grid):
        """(dt, number of steps) landing exactly on t_final."""
        limit = self.max_dt(grid)
        if self.dt is not None:
            if self.dt > limit * (1 + 1e-12):
                raise ValueError(f"CFL violated: dt = {self.dt:.3e} > {limit:.3e}")
            n = int(np.ceil(self.t_final / self.dt - 1e-9))
        else:
            n = int(np.ceil(self.t_final / limit))
        return self.t_final / n, n


@dataclass(eq=False)
class KineticState:
    F: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.F)):
            raise ValueError("non-finite distribution")


class WallOperator:
    """Maxwell reflection γ₋F = (1-α) F(Rv) + α σ M_w, wall at rest with θ_w = 1.

    σ = Σ_{v3<0} w|v3|F / Σ_{v3>0} w v3 M_w with M_w = μ, so the net mass flux
    through the wall vanishes on the grid.
    """

    def __init__(self, grid, alpha):
        self.grid = grid
        self.alpha = float(alpha)
        self.inc = grid.incoming
        self.v3 = grid.nodes[:, 2]
        self.row = grid.mu / np.sum(grid.weights * np.where(self.inc, self.v3, 0.0) * grid.mu)
        self.out_w = grid.weights * np.where(self.inc, 0.0, -self.v3)
        self.perm = grid.reflection

    def apply(self, trace):
        """Incoming values (on v3 > 0; outgoing entries are returned unchanged)."""
        trace = np.asarray(trace, float)
        sigma = trace @ self.out_w
        inc = (1.0 - self.alpha) * trace[..., self.perm] + self.alpha * np.multiply.outer(sigma, self.row)
        return np.where(self.inc, inc, trace)


def apply_wall(trace, wall):
    return wall.apply(trace)


def _van_leer(a, b):
    prod = a * b
    np.maximum(prod, 0.0, out=prod)
    den = a + b
    den[prod == 0] = 1.0
    return 2 * prod / den


class BGKSlab:
    """Precomputed operators of the reference solver for one (config, grid, far field)."""

    def __init__(self, config, grid, far_field):
        self.cfg = config
        self.grid = grid
        self.wall = WallOperator(grid, config.alpha)
        self.far = np.asarray(far_field, float)
        v = grid.nodes
        self.v3 = v[:, 2]
        self.pos = self.v3 > 0
        self.psi = np.stack([np.ones(grid.size), v[:, 0], v[:, 1], v[:, 2], 0.5 * grid.speed2])
        self.psi_w = self.psi * grid.weights
        self.basis = np.stack([np.ones(grid.size), v[:, 0], v[:, 1], v[:, 2], grid.speed2])
        # Newton Jacobian J_ab = Σ_m M_m w_m ψ_a φ_b as one matrix product
        self.jac_rows = np.einsum("am,bm->mab", self.psi_w, self.basis).reshape(grid.size, 25)
        self.dt, self.n_steps = config.time_step(grid)
        self._params = None

    # ---- transport ----
    def face_values(self, F):
        """Upwind face states (n_x + 1, M) including the wall and far-end faces."""
        n = F.shape[0]
        if self.cfg.scheme == "muscl":
            s = np.zeros_like(F)
            s[1:-1] = _van_leer(F[1:-1] - F[:-2], F[2:] - F[1:-1])
        else:
            s = np.zeros_like(F)
        right = F + 0.5 * s  # state at the right face of each cell
        left = F - 0.5 * s
        faces = np.empty((n + 1, F.shape[1]))
        faces[1:-1] = np.where(self.pos, right[:-1], left[1:])
        faces[-1] = np.where(self.pos, right[-1], self.far)
        wall_out = np.where(self.pos, 0.0, left[0])
        faces[0] = self.wall.apply(wall_out)
        return faces

    def transport(self, F, dt):
        faces = self.face_values(F)
        flux = faces * self.v3
        Fn = F - dt / (self.cfg.epsilon * self.cfg.dx) * (flux[1:] - flux[:-1])
        return Fn, flux[0], flux[-1]

    # ---- relaxation ----
    def moments(self, F):
        return F @ self.psi_w.T

    def maxwellian(self, F, tol=1e-14, maxiter=30):
        """Discrete Maxwellian with the grid moments of F (per row)."""
        target = self.moments(F)
        basis = self.basis
        if self._params is None or self._params.shape[0] != F.shape[0]:
            rho = target[:, 0]
            u = target[:, 1:4] / rho[:, None]
            e = target[:, 4] / rho - 0.5 * np.sum(u**2, axis=1)
            th = e / 1.5
            if np.any(rho <= 0) or np.any(th <= 0):
                raise ValueError("non-physical moments in relaxation")
            a = np.log(rho / (2 * np.pi * th) ** 1.5) - 0.5 * np.sum(u**2, axis=1) / th
            p = np.column_stack([a, u / th[:, None], -0.5 / th])
        else:
            p = self._params.copy()
        for _ in range(maxiter):
            M = np.exp(p @ basis)
            mom = M @ self.psi_w.T
            r = mom - target
            if np.max(np.abs(r) / np.maximum(np.abs(target[:, :1]), 1e-300)) <= tol:
                break
            J = (M @ self.jac_rows).reshape(-1, 5, 5)
            p -= np.linalg.solve(J, r[..., None])[..., 0]
        else:
            raise RuntimeError("discrete Maxwellian did not converge")
        self._params = p
        return M

    def relax(self, F, dt):
        M = self.maxwellian(F)
        return M + (F - M) * np.exp(-dt / self.cfg.epsilon**3)


@dataclass
class LedgerRow:
    step: int
    t: float
    mass: float
    momentum1: float
    momentum2: float
    energy: float
    wall_flux: np.ndarray
    far_flux: np.ndarray
    drift: float


def totals(slab, F):
    """(mass, momentum 1, momentum 2, normal momentum, energy) integrated over the slab."""
    return slab.cfg.dx * np.sum(slab.moments(F), axis=0)


def step(state, slab, relax=True):
    """One Lie step; returns the new state and its ledger entry."""
    dt = slab.dt
    before = totals(slab, state.F)
    F, wall_flux, far_flux = slab.transport(state.F, dt)
    if relax:
        F = slab.relax(F, dt)
    if F.min() < 0:
        i, j = np.unravel_index(np.argmin(F), F.shape)
        raise RuntimeError(f"negative distribution {F[i, j]:.3e} at cell {i}, velocity {j}, t = {state.t + dt:.4g}")
    after = totals(slab, F)
    # fluxes are per unit time in the scaled variable: d/dt Σ = (flux_wall - flux_far)/ε
    wf = dt / slab.cfg.epsilon * (slab.psi_w @ wall_flux)
    ff = dt / slab.cfg.epsilon * (slab.psi_w @ far_flux)
    idx = [0, 1, 2, 4]
    drift = float(np.max(np.abs((after - before - wf + ff)[idx]) / np.maximum(np.abs(before[idx]), 1.0)))
    new = KineticState(F, state.t + dt)
    return new, LedgerRow(0, new.t, after[0], after[1], after[2], after[4], wf, ff, drift)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    ledger: list = field(default_factory=list)

    @property
    def final(self):
        return self.states[-1]


def run(config, grid, init, far_field=None, samples=2, relax=True, progress=None):
    """Advance init to t_final; keeps ``samples`` evenly spaced states (first and last included)."""
    far = init.F[-1] if far_field is None else far_field
    slab = BGKSlab(config, grid, far)
    keep = set(np.linspace(0, slab.n_steps, max(samples, 2)).round().astype(int))
    traj = Trajectory()
    state = init
    traj.times.append(state.t)
    traj.states.append(state)
    for n in range(1, slab.n_steps + 1):
        state, row = step(state, slab, relax)
        row.step = n
        traj.ledger.append(row)
        if n in keep:
            traj.times.append(state.t)
            traj.states.append(state)
        if progress and n % progress == 0:
            log.info("step %d/%d t=%.4f drift=%.2e", n, slab.n_steps, state.t, row.drift)
    return traj


def remainder_norm(F_state, F_ansatz, sqrt_mu_eps, dx, grid):
    """‖(F_state - F_ansatz)/√μ_ε‖ in L²(dx dv) over the slab cells."""
    F_state = np.asarray(F_state)
    F_ansatz = np.asarray(F_ansatz)
    if F_state.shape != F_ansatz.shape or F_state.shape != np.shape(sqrt_mu_eps):
        raise ValueError(f"grid mismatch: {F_state.shape} vs {F_ansatz.shape}")
    d = (F_state - F_ansatz) / sqrt_mu_eps
    return float(np.sqrt(dx * np.sum(d**2 * grid.weights)))


def write_ledger(path, traj):
    from .io import write_csv

    rows = [
        [r.step, r.t, r.mass, r.momentum1, r.momentum2, r.energy, float(r.wall_flux[0]), float(r.wall_flux[1]), r.drift]
        for r in traj.ledger
    ]
    write_csv(path, ["step", "t", "mass", "momentum1", "momentum2", "energy", "wall_mass_flux", "wall_momentum1_flux", "drift"], rows)
