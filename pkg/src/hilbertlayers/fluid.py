"""Interior (Euler) and viscous-layer (Prandtl) hierarchies for shear flow.

Everything here is restricted to shear data: fields depend on the normal
coordinate only (x3 in the interior, ζ = x3/√ε in the viscous layer) and
the leading normal velocity vanishes.  The hierarchy is solved order by
order.  For each order the macroscopic part is advanced with its moment
equations and the microscopic part P⊥g is rebuilt from the order balance

    𝓛 g_m = -P⊥(∂_t g_{m-6} + v3 ∂_3 g_{m-4}) + Σ_{i+j=m-2} Γ(g_i, g_j)          (interior)
    𝓛 g^b_m = -P⊥(∂_t g^b_{m-6} + v3 ∂_ζ g^b_{m-3}) + [layer and Taylor couplings]  (layer)

so the closed forms of the low orders come out of the same code path.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from numpy.polynomial import Polynomial
from scipy import linalg
from scipy.special import erfc

from . import fd
from .collision import transport_coefficients
from .velocity import burnett, infinitesimal_maxwellian

PROFILE_KINDS = ("zero", "const", "tanh", "exp", "sin")


@dataclass(frozen=True)
class Profile:
    """A·f((x - offset)/scale) for f in {tanh, exp(-·), sin}, with exact derivatives."""

    kind: str = "zero"
    amplitude: float = 0.0
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}; expected one of {PROFILE_KINDS}")
        if self.scale <= 0:
            raise ValueError("profile scale must be positive")

    @property
    def is_zero(self):
        return self.kind == "zero" or self.amplitude == 0.0

    def __call__(self, x, order=0):
        x = np.asarray(x, dtype=float)
        s = (x - self.offset) / self.scale
        a = self.amplitude / self.scale**order
        if self.is_zero:
            return np.zeros_like(x)
        if self.kind == "const":
            return np.full_like(x, self.amplitude) if order == 0 else np.zeros_like(x)
        if self.kind == "exp":
            return a * (-1.0) ** order * np.exp(-s)
        if self.kind == "sin":
            return a * np.sin(s + 0.5 * np.pi * order)
        # d^n tanh = P_n(tanh) with P_{n+1} = P_n' (1 - t²)
        p = Polynomial([0.0, 1.0])
        for _ in range(order):
            p = p.deriv() * Polynomial([1.0, 0.0, -1.0])
        return a * p(np.tanh(s))


@dataclass(frozen=True)
class ShearProfile:
    """Tangential velocity and temperature of one interior order; ρ = -θ + p."""

    U1: Profile = Profile()
    U2: Profile = Profile()
    Theta: Profile = Profile()
    U3: Profile = Profile()

    def __post_init__(self):
        if not self.U3.is_zero:
            raise ValueError("shear data must have zero normal velocity (u3 ≡ 0, div u = 0)")

    def evaluate(self, x, order=0):
        """(u (n, 3), θ (n,)) and their x-derivatives of the given order."""
        u = np.stack([self.U1(x, order), self.U2(x, order), np.zeros_like(np.asarray(x, float))], axis=-1)
        return u, self.Theta(x, order)

    @property
    def is_zero(self):
        return self.U1.is_zero and self.U2.is_zero and self.Theta.is_zero


@dataclass(frozen=True)
class ShearData:
    """Initial interior data for orders 0 and 1 (higher orders start from zero)."""

    order0: ShearProfile = ShearProfile()
    order1: ShearProfile = ShearProfile()

    def profile(self, k):
        return (self.order0, self.order1)[k] if k < 2 else ShearProfile()


def default_shear_data():
    """The study configuration: nonzero wall slip at orders 0 and 1."""
    return ShearData(
        ShearProfile(U1=Profile("tanh", 0.8, 1.0, -1.0), U2=Profile("sin", 0.3, 2.0, -1.0), Theta=Profile("exp", 0.3)),
        ShearProfile(U1=Profile("sin", 0.4, 1.0, -0.5), Theta=Profile("tanh", 0.2, 1.0, -1.0)),
    )


# ---- meshes ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Meshes:
    x: np.ndarray
    zeta: np.ndarray
    times: np.ndarray

    @property
    def dt(self):
        return self.times[1] - self.times[0]


def build_meshes(x_max=2.0, n_x=200, z_max=20.0, n_zeta=160, stretch=4.0, t_final=0.1, n_t=50):
    if n_t < 2:
        raise ValueError("need at least two time steps")
    x = np.linspace(0.0, x_max, n_x + 1)
    zeta = fd.stretched_mesh(z_max, n_zeta, stretch)
    times = np.linspace(0.0, t_final, n_t + 1)
    return Meshes(x, zeta, times)


# ---- Euler ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EulerShear:
    """Leading-order interior solution on (times × x)."""

    times: np.ndarray
    x: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    pressure: float = 0.0

    def divergence(self):
        return fd.d1(self.u[..., 2], self.x, axis=1)

    def boussinesq_defect(self):
        return np.max(np.abs(fd.d1(self.rho + self.theta, self.x, axis=1)))


def solve_euler_shear(init, times, x):
    """Incompressible Euler for shear data: u0·∇u0 = 0, so the solution is steady."""
    if not isinstance(init, ShearProfile):
        raise TypeError("init must be a ShearProfile")
    u, theta = init.evaluate(x)
    nt = len(times)
    return EulerShear(
        np.asarray(times, float),
        np.asarray(x, float),
        np.broadcast_to(-theta, (nt,) + theta.shape).copy(),
        np.broadcast_to(u, (nt,) + u.shape).copy(),
        np.broadcast_to(theta, (nt,) + theta.shape).copy(),
    )


# ---- Prandtl solvers ------------------------------------------------------------------


@dataclass(frozen=True)
class WallTrace:
    """Interior data entering the leading layer: wall values of u0, θ0 and the drift.

    The drift is w(ζ) = u^0_{1,3} + ζ ∂_3 u_{0,3}(0); both vanish for shear data.
    """

    u0: tuple = (0.0, 0.0)
    theta0: float = 0.0
    u1_3: float = 0.0
    du0_3: float = 0.0


@dataclass(frozen=True, eq=False)
class PrandtlState:
    """Layer macro fields of one order on (times × ζ).

    ``ub_next3`` is the normal velocity u^b_{k+1,3} recovered from the
    divergence constraint; ``pb`` the layer pressure p^b_k.
    """

    order: int
    times: np.ndarray
    zeta: np.ndarray
    ub: np.ndarray
    thetab: np.ndarray
    ub_t: np.ndarray
    thetab_t: np.ndarray
    ub_next3: np.ndarray
    pb: np.ndarray
    rhob: np.ndarray

    @property
    def ub1(self):
        return self.ub[..., 0]

    @property
    def ub2(self):
        return self.ub[..., 1]

    def far_field(self):
        return max(np.max(np.abs(self.ub[:, -1])), np.max(np.abs(self.thetab[:, -1])))

    def wall_gradient(self):
        """∂_ζ(u^b_1, u^b_2, θ^b) at the wall for every time level."""
        g = fd.d1(np.concatenate([self.ub, self.thetab[..., None]], axis=-1), self.zeta, axis=1)
        return g[:, 0]


def diffuse(zeta, times, kappa, init, wall, source=None, drift=None, bound=1e6):
    """Solve ∂_t U = κ ∂²_ζ U - ∂_ζ(wU) + f on [0, Z], U(0) = wall(t), U(Z) = 0.

    BDF2 in time (backward Euler for the first step), implicit conservative
    diffusion, drift explicit with second-order extrapolation.  Returns U and
    the time derivative evaluated from the right-hand side.
    """
    n = len(zeta)
    nt = len(times)
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-10, atol=0.0):
        raise ValueError("diffuse expects a uniform time grid")
    dt = dt[0]
    source = np.zeros((nt, n)) if source is None else np.asarray(source, float)
    wall = np.broadcast_to(np.asarray(wall, float), (nt,))
    lower, diag, upper = fd.second_difference_matrix(zeta)

    def transport(U):
        return np.zeros(n) if drift is None else fd.d1(drift * U, zeta)

    U = np.empty((nt, n))
    U[0] = init
    U[0, 0] = wall[0]
    U[0, -1] = 0.0
    for m in range(nt - 1):
        if m == 0:
            c = 1.0 / dt
            rhs = U[0] / dt + source[1] - transport(U[0])
        else:
            c = 1.5 / dt
            rhs = (2.0 * U[m] - 0.5 * U[m - 1]) / dt + source[m + 1]
            if drift is not None:
                rhs -= 2.0 * transport(U[m]) - transport(U[m - 1])
        ab = np.zeros((3, n))
        ab[1] = c
        ab[1, 1:-1] -= kappa * diag
        ab[0, 2:] = -kappa * upper
        ab[2, :-2] = -kappa * lower
        ab[1, 0] = ab[1, -1] = 1.0
        ab[0, 1] = 0.0
        ab[2, -2] = 0.0
        b = rhs.copy()
        b[0] = wall[m + 1]
        b[-1] = 0.0
        U[m + 1] = linalg.solve_banded((1, 1), ab, b)
        if not np.all(np.isfinite(U[m + 1])) or np.max(np.abs(U[m + 1])) > bound:
            raise RuntimeError(f"layer solution blew up at t = {times[m + 1]:.4g}")
    Ut = np.empty_like(U)
    for k in range(nt):
        Ut[k] = kappa * fd.d2(U[k], zeta) + source[k] - transport(U[k])
    Ut[:, 0] = np.gradient(wall, times) if nt > 2 else np.diff(wall)[0] / dt
    Ut[:, -1] = 0.0
    return U, Ut


def _erfc_profile(zeta, wall_value, kappa, t0=1.0):
    return wall_value * erfc(zeta / (2.0 * np.sqrt(kappa * t0)))


def initial_layer(zeta, wall_u, wall_theta, kappa, t0=1.0):
    """Self-similar initial layer w·erfc(ζ/(2√(κ t0))) matching given wall values."""
    ub = np.stack([_erfc_profile(zeta, w, kappa.kappa1, t0) for w in wall_u], axis=-1)
    return ub, _erfc_profile(zeta, wall_theta, kappa.kappa2, t0)


def _layer_solve(order, times, zeta, kappa, init, wall_u, wall_theta, f_u, f_theta, drift, bound):
    nt, n = len(times), len(zeta)
    ub = np.empty((nt, n, 2))
    ub_t = np.empty_like(ub)
    for i in range(2):
        ub[..., i], ub_t[..., i] = diffuse(zeta, times, kappa.kappa1, init[0][:, i], wall_u[:, i], f_u[..., i], drift, bound)
    th, th_t = diffuse(zeta, times, kappa.kappa2, init[1], wall_theta, f_theta, drift, bound)
    return ub, ub_t, th, th_t


def solve_nonlinear_prandtl(init, trace, kappa, times, zeta, bound=1e6):
    """Leading viscous layer for shear data.

    ∂_t u^b_0 - κ1 ∂²u^b_0 + ∂_ζ[u^b_0 w] = 0 (tangential), same for θ^b_0 with κ2,
    wall values -(u0, θ0)(0), far-field zero, u^b_{1,3} ≡ 0 and p^b_0 ≡ 0.
    ``init`` is (ub (n, 2), thetab (n,)).
    """
    times = np.asarray(times, float)
    zeta = np.asarray(zeta, float)
    nt, n = len(times), len(zeta)
    drift = trace.u1_3 + zeta * trace.du0_3
    drift = None if not np.any(drift) else drift
    wall_u = np.broadcast_to(-np.asarray(trace.u0, float), (nt, 2))
    wall_t = np.full(nt, -float(trace.theta0))
    zeros = np.zeros((nt, n))
    ub, ub_t, th, th_t = _layer_solve(
        0, times, zeta, kappa, init, wall_u, wall_t, np.zeros((nt, n, 2)), zeros, drift, bound
    )
    return PrandtlState(0, times, zeta, ub, th, ub_t, th_t, zeros.copy(), zeros.copy(), -th)


def solve_linear_prandtl(k, f_b, g_b, wall_u, wall_theta, kappa, times, zeta, init=None, pressure=None, rho_t_lower=None, bound=1e6):
    """Order-k viscous layer: ∂_t u^b_k - κ1 ∂²u^b_k = f_b, then ∂_t θ^b_k - κ2 ∂²θ^b_k = g_b.

    ``f_b`` (nt, n, 2) and ``g_b`` (nt, n) are the complete known right-hand
    sides; ``rho_t_lower`` is ∂_t ρ^b_{k-2}, from which u^b_{k+1,3} follows by the
    divergence constraint ∂_ζ u^b_{k+1,3} = -∂_t ρ^b_{k-2} with far-field zero.
    """
    times = np.asarray(times, float)
    zeta = np.asarray(zeta, float)
    nt, n = len(times), len(zeta)
    wall_u = np.broadcast_to(np.asarray(wall_u, float), (nt, 2))
    wall_theta = np.broadcast_to(np.asarray(wall_theta, float), (nt,))
    if init is None:
        init = initial_layer(zeta, wall_u[0], wall_theta[0], kappa)
    ub, ub_t, th, th_t = _layer_solve(k, times, zeta, kappa, init, wall_u, wall_theta, f_b, g_b, None, bound)
    pb = np.zeros((nt, n)) if pressure is None else np.asarray(pressure, float)
    nxt = np.zeros((nt, n)) if rho_t_lower is None else fd.integral_to_far(rho_t_lower, zeta, axis=1)
    return PrandtlState(k, times, zeta, ub, th, ub_t, th_t, nxt, pb, pb - th)


def divergence_residual(state, rho_t_lower):
    """Max of |∂_ζ u^b_{k+1,3} + ∂_t ρ^b_{k-2}| with the trapezoid-consistent difference."""
    dz = np.diff(state.zeta)
    du = np.diff(state.ub_next3, axis=1) / dz
    avg = 0.5 * (rho_t_lower[:, 1:] + rho_t_lower[:, :-1])
    return float(np.max(np.abs(du + avg)))


def prandtl_residual(state, kappa, f_b=None, g_b=None, drift=None):
    """Max residual of the discrete BDF2 layer equations on interior nodes (steps ≥ 2)."""
    t = state.times
    dt = t[1] - t[0]
    nt, n = state.thetab.shape
    f_b = np.zeros((nt, n, 2)) if f_b is None else f_b
    g_b = np.zeros((nt, n)) if g_b is None else g_b
    worst = 0.0
    for comp, kap, src in (
        (state.ub[..., 0], kappa.kappa1, f_b[..., 0]),
        (state.ub[..., 1], kappa.kappa1, f_b[..., 1]),
        (state.thetab, kappa.kappa2, g_b),
    ):
        for m in range(2, nt):
            lhs = (1.5 * comp[m] - 2.0 * comp[m - 1] + 0.5 * comp[m - 2]) / dt
            rhs = kap * fd.d2(comp[m], state.zeta) + src[m]
            if drift is not None:
                rhs = rhs - (2.0 * fd.d1(drift * comp[m - 1], state.zeta) - fd.d1(drift * comp[m - 2], state.zeta))
            r = (lhs - rhs)[1:-1]
            scale = max(np.max(np.abs(comp)), 1.0)
            worst = max(worst, float(np.max(np.abs(r))) / scale)
    return worst


# ---- linear Euler ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearEulerSolution:
    order: int
    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    rho: np.ndarray
    pressure: np.ndarray
    u_t: np.ndarray
    theta_t: np.ndarray
    rho_t: np.ndarray


def solve_linear_euler(k, times, x, force_u, force_theta, pressure, d, rho_t_lower=None, init=None):
    """Order-k interior system for shear data.

    ∂_t u_{k,i} = force_u_i (i = 1, 2), (5/2)∂_t θ_k - ∂_t p_k = force_theta,
    ∂_3 u_{k,3} = -∂_t ρ_{k-2} with u_{k,3}(0) = d_k, ρ_k = p_k - θ_k.
    Time integration is the trapezoid rule on the given levels.
    """
    times = np.asarray(times, float)
    x = np.asarray(x, float)
    nt, nx = len(times), len(x)
    force_u = np.asarray(force_u, float)
    force_theta = np.asarray(force_theta, float)
    pressure = np.asarray(pressure, float)
    d = np.broadcast_to(np.asarray(d, float), (nt,))
    if init is None:
        init = (np.zeros((nx, 2)), np.zeros(nx))
    p_t = np.gradient(pressure, times, axis=0)
    theta_t = 0.4 * (force_theta + p_t)
    u = np.empty((nt, nx, 3))
    u[..., :2] = init[0] + fd.integral_from_wall(force_u, times, axis=0)
    theta = init[1] + fd.integral_from_wall(theta_t, times, axis=0)
    if rho_t_lower is None:
        u[..., 2] = d[:, None]
    else:
        u[..., 2] = d[:, None] - fd.integral_from_wall(rho_t_lower, x, axis=1)
    u_t = np.empty_like(u)
    u_t[..., :2] = force_u
    u_t[..., 2] = np.gradient(u[..., 2], times, axis=0)
    rho = pressure - theta
    return LinearEulerSolution(k, times, x, u, theta, rho, pressure, u_t, theta_t, p_t - theta_t)


def linear_euler_residual(sol, force_u, force_theta, rho_t_lower=None):
    """Residuals of the discrete order-k system (trapezoid in time, trapezoid in x)."""
    t = sol.times
    dt = np.diff(t)[:, None]
    r_u = np.diff(sol.u[..., :2], axis=0) - 0.5 * dt[..., None] * (force_u[1:] + force_u[:-1])
    e = 2.5 * sol.theta - sol.pressure
    r_e = np.diff(e, axis=0) - 0.5 * dt * (force_theta[1:] + force_theta[:-1])
    out = {"momentum": float(np.max(np.abs(r_u))), "energy": float(np.max(np.abs(r_e)))}
    if rho_t_lower is not None:
        dx = np.diff(sol.x)
        r_m = np.diff(sol.u[..., 2], axis=1) / dx + 0.5 * (rho_t_lower[:, 1:] + rho_t_lower[:, :-1])
        out["mass"] = float(np.max(np.abs(r_m)))
    out["state"] = float(np.max(np.abs(sol.rho + sol.theta - sol.pressure)))
    return out


# ---- the coupled hierarchy --------------------------------------------------------------


@dataclass(eq=False)
class OrderFields:
    """Macro fields of one order on (times × mesh) with their time derivatives."""

    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    rho_t: np.ndarray
    u_t: np.ndarray
    theta_t: np.ndarray
    pressure: np.ndarray
    solved: bool = False

    @classmethod
    def zeros(cls, nt, n):
        z = np.zeros((nt, n))
        v = np.zeros((nt, n, 3))
        return cls(z.copy(), v.copy(), z.copy(), z.copy(), v.copy(), z.copy(), z.copy())

    def at(self, m, delta=0.0):
        if delta == 0.0:
            return self.rho[m], self.u[m], self.theta[m]
        return (
            self.rho[m] + delta * self.rho_t[m],
            self.u[m] + delta * self.u_t[m],
            self.theta[m] + delta * self.theta_t[m],
        )

    def dt_at(self, m):
        return self.rho_t[m], self.u_t[m], self.theta_t[m]


@dataclass(frozen=True, eq=False)
class HierarchySources:
    """Known data of layer order k at one time level.

    ``f_b`` and ``g_b`` are the complete right-hand sides of the tangential and
    temperature equations; ``J`` = P⊥g^b_{k+2} and ``I`` = P⊥g^b_{k+3} with the
    infinitesimal Maxwellians of the unknown orders removed; ``W_b`` = ∂_ζ H_b and
    ``H_b`` the pressure part p^b_{k+2} - (2/3)u^b_k·(u^b_0 + u^0_0).
    """

    order: int
    f_b: np.ndarray
    g_b: np.ndarray
    J: np.ndarray
    I: np.ndarray
    W_b: np.ndarray
    H_b: np.ndarray


def _poly(grid, rho, u, theta):
    """Macro polynomial ρ + u·v + θ(|v|²-3)/2 (the infinitesimal Maxwellian over √μ)."""
    rho = np.asarray(rho, float)
    return rho[..., None] + np.asarray(u) @ grid.nodes.T + 0.5 * np.asarray(theta)[..., None] * (grid.speed2 - 3.0)


class _Snapshot:
    """All orders at one instant; builds the micro parts on demand (BGK collision)."""

    def __init__(self, hier, m, delta=0.0, mask=None):
        self.h = hier
        self.grid = hier.grid
        mask = mask or {}
        skip_i = mask.get("interior", ())
        skip_b = mask.get("layer", ())
        zero_i = (np.zeros(len(hier.x)), np.zeros((len(hier.x), 3)), np.zeros(len(hier.x)))
        zero_b = (np.zeros(len(hier.zeta)), np.zeros((len(hier.zeta), 3)), np.zeros(len(hier.zeta)))
        self.imac = [zero_i if k in skip_i else o.at(m, delta) for k, o in enumerate(hier.interior)]
        self.bmac = [zero_b if k in skip_b else o.at(m, delta) for k, o in enumerate(hier.layer)]
        self.bdt = [o.dt_at(m) for o in hier.layer]
        self.idt = [o.dt_at(m) for o in hier.interior]
        self._c = {}

    def _memo(self, key, fn):
        if key not in self._c:
            self._c[key] = fn()
        return self._c[key]

    # interior
    def ipoly(self, k):
        if k < 0 or k >= len(self.imac):
            return None
        return self._memo(("ip", k), lambda: _poly(self.grid, *self.imac[k]))

    def ig(self, k):
        def make():
            p = self.ipoly(k)
            return p * self.grid.sqrt_mu + self.iperp(k)

        return self._memo(("ig", k), make)

    def iperp(self, m):
        return self._memo(("iq", m), lambda: self._iperp(m))

    def _iperp(self, m):
        g = self.grid
        nx = len(self.h.x)
        if m < 2:
            return np.zeros((nx, g.size))
        acc = np.zeros((nx, g.size))
        if m - 6 >= 0:
            if m - 6 > 1:
                raise NotImplementedError("time derivative of interior micro parts beyond order 1")
            acc -= _poly(g, *self.idt[m - 6]) * g.sqrt_mu
        if m - 4 >= 0:
            acc -= g.nodes[:, 2] * fd.d1(self.ig(m - 4), self.h.x)
        prod = np.zeros((nx, g.size))
        for i in range(m - 1):
            a, b = self.ipoly(i), self.ipoly(m - 2 - i)
            if a is not None and b is not None:
                prod += a * b
        acc += 0.5 * prod * g.sqrt_mu
        return self.h.L.solve(acc)

    def itaylor(self, i, l):
        """Macro polynomial of ∂^l g_i at the wall."""

        def make():
            if i >= len(self.imac):
                return None
            rho, u, theta = self.imac[i]
            x = self.h.x
            dr = fd.wall_derivatives(rho, x, l)[l]
            du = fd.wall_derivatives(u, x, l)[l]
            dth = fd.wall_derivatives(theta, x, l)[l]
            return _poly(self.grid, dr, du, dth)

        return self._memo(("it", i, l), make)

    # layer
    def bpoly(self, k):
        if k < 0 or k >= len(self.bmac):
            return None
        return self._memo(("bp", k), lambda: _poly(self.grid, *self.bmac[k]))

    def bg(self, k):
        def make():
            return self.bpoly(k) * self.grid.sqrt_mu + self.bperp(k)

        return self._memo(("bg", k), make)

    def bperp(self, m):
        return self._memo(("bq", m), lambda: self._bperp(m))

    def _bperp(self, m):
        g = self.grid
        z = self.h.zeta
        nz = len(z)
        if m < 2:
            return np.zeros((nz, g.size))
        acc = np.zeros((nz, g.size))
        if m - 6 >= 0:
            if m - 6 > 1:
                raise NotImplementedError("time derivative of layer micro parts beyond order 1")
            acc -= _poly(g, *self.bdt[m - 6]) * g.sqrt_mu
        if m - 3 >= 0 and m - 3 < len(self.bmac):
            acc -= g.nodes[:, 2] * fd.d1(self.bg(m - 3), z)
        s = m - 2
        prod = np.zeros((nz, g.size))
        for j in range(s + 1):
            bj = self.bpoly(j)
            if bj is None:
                continue
            bi = self.bpoly(s - j)
            if bi is not None:
                prod += bi * bj
            # interior couplings: Taylor terms ζ^l/l! ∂^l g_i(0), l = 0..N
            for l in range(0, min(self.h.taylor_depth, s - j) + 1):
                t = self.itaylor(s - j - l, l)
                if t is not None:
                    prod += 2.0 * (z[:, None] ** l / factorial(l)) * t * bj
        acc += 0.5 * prod * g.sqrt_mu
        return self.h.L.solve(acc)


class ShearHierarchy:
    """Orders 0..K of the interior and viscous-layer expansions for shear data.

    Solve order: interior k, then layer k, for k = 0..K.  Before each step the
    normal velocities and pressures of the order are recovered from lower orders
    (u^b_{k,3} = ∫_ζ^∞ ∂_t ρ^b_{k-3}, u_{k,3} = -u^b_{k,3}(0) - ∫_0^x ∂_t ρ_{k-2},
    p_k = -<𝔸33, P⊥g_k> - ∫_0^x ∂_t u_{k-2,3}, p^b_k = ∫_ζ^∞ ∂_t u^b_{k-3,3} - <𝔸33, P⊥g^b_k>).
    """

    def __init__(self, L, data, meshes, order=3, taylor_depth=None, slip=None, t0=1.0):
        if L.kernel.kind != "bgk":
            raise NotImplementedError("the hierarchy engine uses the BGK collision model")
        if order < 0 or order > 3:
            raise ValueError(f"truncation order must be in 0..3, got {order}")
        self.L = L
        self.grid = L.grid
        self.data = data
        self.x = meshes.x
        self.zeta = meshes.zeta
        self.times = meshes.times
        self.meshes = meshes
        self.K = order
        self.taylor_depth = order + 1 if taylor_depth is None else int(taylor_depth)
        if self.taylor_depth < order + 1:
            raise ValueError(f"taylor depth {self.taylor_depth} too small for order {order} (need {order + 1})")
        self.slip = slip
        if order >= 3 and slip is None:
            raise ValueError("order 3 needs the slip coefficients (b1, c1)")
        self.t0 = t0
        bur = burnett(self.grid)
        self.kappa = transport_coefficients(L, bur)
        w = self.grid.weights
        self.A3w = bur.A[2] * w  # (3, M): 𝔸31, 𝔸32, 𝔸33
        self.B3w = bur.B[2] * w
        nt = len(self.times)
        self.interior = [OrderFields.zeros(nt, len(self.x)) for _ in range(order + 2)]
        self.layer = [OrderFields.zeros(nt, len(self.zeta)) for _ in range(order + 2)]
        self.f_b = {}
        self.g_b = {}
        self._normal_done = set()
        self.solved = False

    def snapshot(self, m, delta=0.0, mask=None):
        return _Snapshot(self, m, delta, mask)

    # ---- derived normal components ----
    def _prep_normal(self, k):
        if k in self._normal_done or k >= len(self.layer):
            return
        t = self.times
        lay = self.layer[k]
        if k >= 3:
            lay.u[..., 2] = fd.integral_to_far(self.layer[k - 3].rho_t, self.zeta, axis=1)
            lay.u_t[..., 2] = np.gradient(lay.u[..., 2], t, axis=0)
        d = -lay.u[:, 0, 2]
        it = self.interior[k]
        it.u[..., 2] = d[:, None]
        if k >= 2:
            it.u[..., 2] -= fd.integral_from_wall(self.interior[k - 2].rho_t, self.x, axis=1)
        it.u_t[..., 2] = np.gradient(it.u[..., 2], t, axis=0)
        self._normal_done.add(k)

    def wall_normal_velocity(self, k):
        """d_k = u_{k,3}(0) = -u^b_{k,3}(0)."""
        return self.interior[k].u[:, 0, 2].copy()

    # ---- interior ----
    def _solve_interior(self, k):
        self._prep_normal(k)
        t, x = self.times, self.x
        nt, nx = len(t), len(x)
        it = self.interior[k]
        pressure = np.empty((nt, nx))
        force_u = np.empty((nt, nx, 2))
        flux_e = np.empty((nt, nx))
        back = (
            fd.integral_from_wall(self.interior[k - 2].u_t[..., 2], x, axis=1) if k >= 2 else np.zeros((nt, nx))
        )
        for m in range(nt):
            snap = self.snapshot(m)
            pressure[m] = -snap.iperp(k) @ self.A3w[2] - back[m]
            q = snap.iperp(k + 2)
            force_u[m] = -fd.d1(q @ self.A3w[:2].T, x)
            flux_e[m] = -fd.d1(q @ self.B3w, x)
        prof = self.data.profile(k)
        u0, th0 = prof.evaluate(x)
        sol = solve_linear_euler(
            k, t, x, force_u, flux_e, pressure, it.u[:, 0, 2],
            self.interior[k - 2].rho_t if k >= 2 else None, (u0[:, :2], th0),
        )
        it.u[..., :2] = sol.u[..., :2]
        it.u_t[..., :2] = sol.u_t[..., :2]
        it.theta[:] = sol.theta
        it.theta_t[:] = sol.theta_t
        it.pressure[:] = pressure
        it.rho[:] = sol.rho
        it.rho_t[:] = sol.rho_t
        it.solved = True
        self._euler_forces = getattr(self, "_euler_forces", {})
        self._euler_forces[k] = (force_u, flux_e)

    # ---- layer ----
    def _layer_moments(self, k):
        t, z = self.times, self.zeta
        nt, nz = len(t), len(z)
        pb = np.empty((nt, nz))
        S = np.empty((nt, nz, 2))
        T = np.empty((nt, nz))
        back = (
            fd.integral_to_far(self.layer[k - 3].u_t[..., 2], z, axis=1) if k >= 3 else np.zeros((nt, nz))
        )
        for m in range(nt):
            snap = self.snapshot(m)
            pb[m] = back[m] - snap.bperp(k) @ self.A3w[2]
            q = snap.bperp(k + 3)
            S[m] = q @ self.A3w[:2].T
            T[m] = q @ self.B3w
        return pb, S, T

    def _wall_data(self, k):
        from .knudsen import chain_boundary_conditions, FluidTraces

        it = self.interior[k]
        grad = None
        if k == 3:
            lay0 = self.layer[0]
            grad = fd.d1(np.concatenate([lay0.u[..., :2], lay0.theta[..., None]], axis=-1), self.zeta, axis=1)[:, 0]
        traces = FluidTraces(it.u[:, 0, :2], it.theta[:, 0], grad)
        return chain_boundary_conditions(k, traces, self.slip)

    def _solve_layer(self, k):
        self._prep_normal(k + 1)
        if k == 0:
            w = self.interior[1].u[:, 0, 2]
            dw = fd.d1(self.interior[0].u[..., 2], self.x, axis=1)[:, 0]
            if np.max(np.abs(w)) > 1e-12 or np.max(np.abs(dw)) > 1e-12:
                raise RuntimeError("nonzero layer drift; shear data required")
        t, z = self.times, self.zeta
        pb, S, T = self._layer_moments(k)
        pb_t = np.gradient(pb, t, axis=0)
        f_b = -fd.d1(S, z, axis=1)
        g_b = 0.4 * (pb_t - fd.d1(T, z, axis=1))
        wall_u, wall_t = self._wall_data(k)
        init = initial_layer(z, wall_u[0], wall_t[0], self.kappa, self.t0)
        rho_lower = self.layer[k - 2].rho_t if k >= 2 else None
        st = solve_linear_prandtl(k, f_b, g_b, wall_u, wall_t, self.kappa, t, z, init, pb, rho_lower)
        lay = self.layer[k]
        lay.u[..., :2] = st.ub
        lay.u_t[..., :2] = st.ub_t
        lay.theta[:] = st.thetab
        lay.theta_t[:] = st.thetab_t
        lay.pressure[:] = pb
        lay.rho[:] = pb - st.thetab
        lay.rho_t[:] = pb_t - st.thetab_t
        lay.solved = True
        self.f_b[k] = f_b
        self.g_b[k] = g_b

    def solve(self):
        for k in range(self.K + 1):
            self._solve_interior(k)
            self._solve_layer(k)
        self.solved = True
        return self

    # ---- views ----
    def prandtl_state(self, k):
        lay = self.layer[k]
        nxt = self.layer[k + 1].u[..., 2] if k + 1 < len(self.layer) else np.zeros_like(lay.theta)
        return PrandtlState(
            k, self.times, self.zeta, lay.u[..., :2], lay.theta, lay.u_t[..., :2], lay.theta_t, nxt, lay.pressure, lay.rho
        )

    def euler_solution(self, k):
        it = self.interior[k]
        return LinearEulerSolution(
            k, self.times, self.x, it.u, it.theta, it.rho, it.pressure, it.u_t, it.theta_t, it.rho_t
        )


def assemble_sources(hier, k, m):
    """HierarchySources of layer order k at time level m of a solved (or partially solved) hierarchy."""
    if k >= len(hier.layer) - 1:
        raise ValueError(f"order {k} sources need layer order {k + 1}, not present")
    for j in range(k):
        if not hier.layer[j].solved or not hier.interior[j].solved:
            raise ValueError(f"missing lower-order input: order {j} not solved")
    snapJ = hier.snapshot(m, mask={"layer": (k,)})
    J = snapJ.bperp(k + 2)
    snapI = hier.snapshot(m, mask={"layer": (k, k + 1), "interior": (k + 1,)})
    I = snapI.bperp(k + 3)
    back = np.zeros(len(hier.zeta))
    if k >= 1:
        back = fd.integral_to_far(hier.layer[k - 1].u_t[m, :, 2], hier.zeta)
    H_b = back - J @ hier.A3w[2]
    W_b = fd.d1(H_b, hier.zeta)
    f_b = hier.f_b.get(k)
    g_b = hier.g_b.get(k)
    return HierarchySources(
        k,
        None if f_b is None else f_b[m],
        None if g_b is None else g_b[m],
        J,
        I,
        W_b,
        H_b,
    )


@dataclass(frozen=True, eq=False)
class MicroFields:
    order: int
    interior: np.ndarray
    layer: np.ndarray
    layer_next: np.ndarray
    interior_next: np.ndarray


def reconstruct_micro(hier, k, m):
    """P⊥g_k, P⊥g_{k+1} (interior) and P⊥g^b_{k+2}, P⊥g^b_{k+3} (layer) at time level m."""
    snap = hier.snapshot(m)
    return MicroFields(k, snap.iperp(k), snap.bperp(k + 2), snap.bperp(k + 3), snap.iperp(k + 1))
