"""Exponent lattice, composite ansatz assembly and the Boltzmann residual.

The composite fluctuation is

    g = Σ_k √ε^k (g_k(x) + g^b_k(x/√ε) + g^bb_k(x/ε²)),    F = μ + ε √μ g,

and its residual in fluctuation form (BGK, q = 2) is

    r = ε² ∂_t g + ε v3 ∂_x g + ε⁻¹ 𝓛 g - Γ(g, g).

Each chart is evaluated on its own mesh with its own derivatives and merged
onto the union of all chart nodes mapped to x.  The merge uses cubic-spline
interpolation, which is linear in the data, so cancellations between the
charts survive it.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from math import floor

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from . import fd
from .collision import bgk_gamma
from .fluid import _poly
from .knudsen import boundary_operator

log = logging.getLogger(__name__)


# ---- exponent lattice -------------------------------------------------------------------


def as_exponent(q):
    """Exact Fraction for rational input (int, Fraction, 'b/a' string, short float), else float."""
    if isinstance(q, Fraction):
        return q
    if isinstance(q, (int, np.integer)):
        return Fraction(int(q))
    if isinstance(q, str):
        return Fraction(q)
    fr = Fraction(float(q)).limit_denominator(1000)
    return fr if abs(float(fr) - float(q)) < 1e-12 else float(q)


@dataclass(frozen=True)
class LatticePoint:
    exponent: object
    m: int
    n: int


@dataclass(frozen=True)
class ExpansionPlan:
    q: object
    cutoff: object
    lattice: tuple
    case: str
    rows: int
    taylor_depth: int

    @property
    def exponents(self):
        return [p.exponent for p in self.lattice]

    @property
    def truncation(self):
        """Number of half-orders kept beyond the leading one (q = 2 reading)."""
        return len(self.lattice) - 1


def lattice_case(q):
    """(case name, number of distinct rows) of m + n(q-1)/2 for the given q."""
    q = as_exponent(q)
    if not isinstance(q, Fraction):
        return "irrational", None
    b, a = q.numerator, q.denominator
    if a == 1:
        return ("integer-odd", 1) if b % 2 else ("integer-even", 2)
    return ("rational-even", a) if (b - a) % 2 == 0 else ("rational-odd", 2 * a)


def lattice_bruteforce(q, cutoff):
    """Sorted distinct {m + n(q-1)/2 <= cutoff : m, n >= 0}."""
    q = as_exponent(q)
    s = (q - 1) / 2
    out = set()
    nmax = int(floor(float(cutoff) / float(s))) + 1
    for n in range(nmax + 1):
        for m in range(int(floor(float(cutoff))) + 1):
            e = m + n * s
            if e <= cutoff + (0 if isinstance(e, Fraction) else 1e-12):
                out.add(e)
    return sorted(out)


def exponent_lattice(q, cutoff, taylor_depth=None):
    """Expansion plan from the case formulas: rows n = 0..rows-1, each m + n(q-1)/2."""
    q = as_exponent(q)
    if q <= 1:
        raise ValueError(f"q must exceed 1, got {q}")
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    cutoff = as_exponent(cutoff)
    s = (q - 1) / 2
    case, rows = lattice_case(q)
    if rows is None:
        rows = int(floor(float(cutoff) / float(s))) + 1
    pts = {}
    for n in range(rows):
        for m in range(int(floor(float(cutoff))) + 1):
            e = m + n * s
            if float(e) <= float(cutoff) + 1e-12 and e not in pts:
                pts[e] = LatticePoint(e, m, n)
    lattice = tuple(pts[e] for e in sorted(pts))
    depth = len(lattice) if taylor_depth is None else int(taylor_depth)
    return ExpansionPlan(q, cutoff, lattice, case, rows, depth)


# ---- composite ansatz -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KnudsenTerm:
    """g^bb_3 = Σ_i G_i(t) φ_i(ξ, v) with G = ∂_ζ(u^b_{0,1}, u^b_{0,2}, θ^b_0)(t, 0)."""

    xi: np.ndarray
    shapes: np.ndarray  # (3, n_xi, M)
    gradient: np.ndarray  # (nt, 3)
    gradient_t: np.ndarray  # (nt, 3)
    order: int = 3

    def values(self, m):
        return np.tensordot(self.gradient[m], self.shapes, axes=(0, 0))

    def time_derivative(self, m):
        return np.tensordot(self.gradient_t[m], self.shapes, axes=(0, 0))

    def xi_derivative(self, grid, m):
        # from the layer equation v3 ∂_ξ g = -𝓛g
        g = self.values(m)
        return -grid.P_perp(g) / grid.nodes[:, 2]


def knudsen_term(hier, layers):
    """Order-3 Knudsen term from the canonical layers returned by slip_coefficients."""
    lay0 = hier.layer[0]
    z = hier.zeta
    fields = np.concatenate([lay0.u[..., :2], lay0.theta[..., None]], axis=-1)
    rates = np.concatenate([lay0.u_t[..., :2], lay0.theta_t[..., None]], axis=-1)
    grad = fd.d1(fields, z, axis=1)[:, 0]
    grad_t = fd.d1(rates, z, axis=1)[:, 0]
    shapes = np.stack([layers["shear1"].values, layers["shear2"].values, layers["heat"].values])
    return KnudsenTerm(layers["shear1"].xi, shapes, grad, grad_t)


@dataclass(eq=False)
class CompositeAnsatz:
    hier: object
    plan: ExpansionPlan
    knudsen: KnudsenTerm = None

    def __post_init__(self):
        K = self.hier.K
        if self.plan.q != 2:
            raise ValueError("the composite is assembled for q = 2")
        if self.plan.truncation < K:
            raise ValueError(f"plan keeps {self.plan.truncation} half-orders, hierarchy has {K}")
        if not self.hier.solved:
            raise ValueError("hierarchy not solved")
        if self.knudsen is not None and K < self.knudsen.order:
            raise ValueError("Knudsen term of order 3 needs truncation K >= 3")

    @property
    def grid(self):
        return self.hier.grid

    @property
    def K(self):
        return self.hier.K


def build_ansatz(hier, layers=None, include_knudsen=True):
    plan = exponent_lattice(2, Fraction(hier.K, 2) if hier.K else Fraction(1, 2), hier.taylor_depth)
    kn = None
    if include_knudsen and hier.K >= 3:
        if layers is None:
            raise ValueError("order-3 composite needs the canonical Knudsen layers")
        kn = knudsen_term(hier, layers)
    return CompositeAnsatz(hier, plan, kn)


def taylor_traces(values, mesh, depth, accuracy=4):
    """∂^l of a field at the wall for l = 0..depth (l = 0 is the wall trace)."""
    return fd.wall_derivatives(values, mesh, depth, accuracy)


# ---- chart evaluation -------------------------------------------------------------------


def _chart_fields(ansatz, m, max_order, delta):
    """Per-order (value, mesh-derivative, time-derivative) on the interior and layer meshes."""
    h = ansatz.hier
    grid = h.grid
    sq = grid.sqrt_mu
    s0 = h.snapshot(m)
    sp = h.snapshot(m, delta)
    sm = h.snapshot(m, -delta)
    out = []
    for k in range(max_order + 1):
        it, lay = h.interior[k], h.layer[k]
        gi = s0.ig(k)
        gi_t = _poly(grid, it.rho_t[m], it.u_t[m], it.theta_t[m]) * sq
        gi_t += (sp.iperp(k) - sm.iperp(k)) / (2 * delta)
        gb = s0.bg(k)
        gb_t = _poly(grid, lay.rho_t[m], lay.u_t[m], lay.theta_t[m]) * sq
        gb_t += (sp.bperp(k) - sm.bperp(k)) / (2 * delta)
        out.append(((gi, fd.d1(gi, h.x), gi_t), (gb, fd.d1(gb, h.zeta), gb_t)))
    return out


def evaluation_points(ansatz, eps, x=None):
    h = ansatz.hier
    x = h.x if x is None else np.asarray(x, float)
    pts = [x, np.sqrt(eps) * h.zeta]
    if ansatz.knudsen is not None:
        pts.append(eps**2 * ansatz.knudsen.xi)
    allp = np.concatenate(pts)
    allp = np.unique(allp[allp <= x[-1] * (1 + 1e-12)])
    keep = np.concatenate([[True], np.diff(allp) > 1e-13])
    return allp[keep]


def _merge(nodes, arrays, pts):
    """Cubic-spline transfer of (n_nodes, M) arrays to pts; zero beyond the chart."""
    inside = pts <= nodes[-1] * (1 + 1e-12)
    out = []
    for a in arrays:
        res = np.zeros((len(pts), a.shape[1]))
        if np.any(inside):
            res[inside] = CubicSpline(nodes, a, axis=0)(pts[inside])
        out.append(res)
    return out


@dataclass(frozen=True, eq=False)
class CompositeField:
    eps: float
    x: np.ndarray
    g: np.ndarray
    g_x: np.ndarray
    g_t: np.ndarray
    time: float


def composite_field(ansatz, eps, time_index=-1, max_order=None, x=None, knudsen=True, delta=1e-3):
    """Composite fluctuation with its x and t derivatives on the merged points."""
    if not 0 < eps < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps}")
    h = ansatz.hier
    K = h.K if max_order is None else int(max_order)
    if K > h.K:
        raise ValueError(f"order {K} not in the hierarchy (K = {h.K})")
    m = time_index % len(h.times)
    pts = evaluation_points(ansatz, eps, x)
    M = h.grid.size
    g = np.zeros((len(pts), M))
    gx = np.zeros_like(g)
    gt = np.zeros_like(g)
    re = np.sqrt(eps)
    I = [np.zeros((len(h.x), M)) for _ in range(3)]
    B = [np.zeros((len(h.zeta), M)) for _ in range(3)]
    for k, (ci, cb) in enumerate(_chart_fields(ansatz, m, K, delta)):
        w = re**k
        for acc, val in zip(I, ci):
            acc += w * val
        for acc, val, s in zip(B, cb, (1.0, 1.0 / re, 1.0)):
            acc += w * s * val
    for nodes, arrays in ((h.x, I), (re * h.zeta, B)):
        v, d, t = _merge(nodes, arrays, pts)
        g += v
        gx += d
        gt += t
    kn = ansatz.knudsen
    if knudsen and kn is not None and K >= kn.order:
        w = re**kn.order
        arrays = (w * kn.values(m), w * kn.xi_derivative(h.grid, m) / eps**2, w * kn.time_derivative(m))
        v, d, t = _merge(eps**2 * kn.xi, arrays, pts)
        g += v
        gx += d
        gt += t
    return CompositeField(eps, pts, g, gx, gt, float(h.times[m]))


def residual_field(grid, field):
    eps = field.eps
    g = field.g
    return eps**2 * field.g_t + eps * grid.nodes[:, 2] * field.g_x + grid.P_perp(g) / eps - bgk_gamma(grid, g, g)


def slab_norm(grid, x, values):
    """Weighted L²(dx dv) norm of a (points, M) array (trapezoid in x)."""
    per = np.sum(values**2 * grid.weights, axis=1)
    return float(np.sqrt(max(trapezoid(per, x), 0.0))) if len(x) > 1 else 0.0


def bc_defect(grid, field, alpha):
    """ε·‖𝔅g(0)‖ on incoming velocities, flux weighted (F-level defect over √μ)."""
    b = boundary_operator(grid, field.g[0], alpha)
    return float(field.eps * np.sqrt(np.sum(grid.weights * np.abs(grid.nodes[:, 2]) * b**2)))


@dataclass(frozen=True)
class ResidualReport:
    eps: float
    norm: float
    wall_norm: float
    bc_defect: float
    min_F: float
    time: float


def boltzmann_residual(ansatz, eps, alpha=1.0, time_index=-1, max_order=None, knudsen=True, wall_width=None):
    """Residual field and its norms; wall_norm combines the residual near the wall and the BC defect."""
    grid = ansatz.grid
    f = composite_field(ansatz, eps, time_index, max_order, knudsen=knudsen)
    r = residual_field(grid, f)
    norm = slab_norm(grid, f.x, r)
    width = 3.0 * np.sqrt(eps) if wall_width is None else wall_width
    sel = f.x <= width
    bc = bc_defect(grid, f, alpha)
    wall = float(np.hypot(slab_norm(grid, f.x[sel], r[sel]), bc))
    F = grid.mu + eps * grid.sqrt_mu * f.g
    min_F = float(F.min())
    if min_F < 0:
        log.warning("truncated composite is negative (min F = %.3e) at eps = %g", min_F, eps)
    return r, ResidualReport(float(eps), norm, wall, bc, min_F, f.time)


def assemble(ansatz, eps, remainder=None, time_index=-1, max_order=None, x=None, knudsen=True):
    """Absolute F_ε = μ + ε√μ g (+ √μ_ε ε⁴ g_R) on the merged points, and min F."""
    f = composite_field(ansatz, eps, time_index, max_order, x, knudsen)
    grid = ansatz.grid
    F = grid.mu + eps * grid.sqrt_mu * f.g
    if remainder is not None:
        lm = local_maxwellian_field(ansatz.hier, eps, f.x, time_index)
        F = F + eps**4 * lm.sqrt_maxwellian(grid) * remainder
    if F.min() < 0:
        log.warning("assembled F has negative values (min %.3e)", F.min())
    return f.x, F, float(F.min())


def assemble_at(ansatz, eps, x, time_index=-1, max_order=None, knudsen=True):
    """F_ε at arbitrary points x (cubic transfer from the merged points)."""
    pts, F, _ = assemble(ansatz, eps, None, time_index, max_order, None, knudsen)
    x = np.asarray(x, float)
    if x.min() < 0 or x.max() > pts[-1] * (1 + 1e-12):
        raise ValueError("requested points outside the slab")
    return CubicSpline(pts, F, axis=0)(x)


# ---- local Maxwellian -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LocalMaxwellianField:
    x: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray

    def maxwellian(self, grid):
        c2 = np.sum((grid.nodes[None] - self.u[:, None, :]) ** 2, axis=-1)
        th = self.theta[:, None]
        return self.rho[:, None] / (2 * np.pi * th) ** 1.5 * np.exp(-0.5 * c2 / th)

    def sqrt_maxwellian(self, grid):
        return np.sqrt(self.maxwellian(grid))


def local_maxwellian_field(hier, eps, x=None, time_index=-1):
    """(1 + ε(ρ0 + ρ^b_0), ε(u0 + u^b_0), 1 + ε(θ0 + θ^b_0)) at x."""
    x = hier.x if x is None else np.asarray(x, float)
    m = time_index % len(hier.times)
    it, lay = hier.interior[0], hier.layer[0]
    if eps == 0:
        return LocalMaxwellianField(x, np.ones(len(x)), np.zeros((len(x), 3)), np.ones(len(x)))
    zeta = x / np.sqrt(eps)
    inside = zeta <= hier.zeta[-1]

    def both(a_int, a_lay):
        out = CubicSpline(hier.x, a_int, axis=0)(x)
        extra = np.zeros_like(out)
        extra[inside] = CubicSpline(hier.zeta, a_lay, axis=0)(zeta[inside])
        return out + extra

    rho = 1.0 + eps * both(it.rho[m], lay.rho[m])
    u = eps * both(it.u[m], lay.u[m])
    theta = 1.0 + eps * both(it.theta[m], lay.theta[m])
    bad = np.flatnonzero((rho <= 0) | (theta <= 0))
    if len(bad):
        raise ValueError(f"local Maxwellian not positive at x = {x[bad[0]]:.4g} for eps = {eps}")
    return LocalMaxwellianField(x, rho, u, theta)


# ---- slopes -----------------------------------------------------------------------------


def fit_slope(eps, values):
    """Least-squares slope of log(values) against log(eps) and its standard error."""
    le, lv = np.log(np.asarray(eps, float)), np.log(np.asarray(values, float))
    A = np.vstack([le, np.ones_like(le)]).T
    coef, res, *_ = np.linalg.lstsq(A, lv, rcond=None)
    n = len(le)
    if n > 2:
        sigma2 = float(np.sum((lv - A @ coef) ** 2)) / (n - 2)
        se = float(np.sqrt(sigma2 / np.sum((le - le.mean()) ** 2)))
    else:
        se = float("nan")
    return float(coef[0]), se


def expected_residual_slope(K):
    """Leading ε-power of the residual norm for truncation K (missing order-(K+1) micro balance)."""
    return 0.5 * (K - 1)
