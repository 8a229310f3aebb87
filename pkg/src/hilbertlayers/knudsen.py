"""Half-space kinetic layers v3 ∂_ξ g + 𝓛g = S with Maxwell reflection at ξ = 0.

The BGK operator 𝓛 = I - P couples velocities only through the five null
moments, so the layer is solved exactly: for given moments m(ξ) every velocity
obeys a scalar transport equation (diamond difference, marched from the wall
for v3 > 0 and from the far end for v3 < 0), and the moments themselves solve
a dense 5n × 5n linear system.  The kernel of the march depends on the
velocity only through v3, which keeps the assembly cheap.

Wall operator (incoming v3 > 0):
    𝔅g = g(v) - (1-α) g(Rv) - α P_γ g,    P_γ g = √μ Σ_{v3<0} w|v3|√μ g / Σ_{v3>0} w v3 μ.
The far end ξ = Ξ has zero incoming data.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import fd

SOLVABILITY_NAMES = ("u1", "u2", "mass_flux", "theta")


class KnudsenError(RuntimeError):
    """Raised with ``kind`` UNSOLVABLE or NO_DECAY."""

    def __init__(self, kind, message, residual=None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.residual = residual


@dataclass(frozen=True, eq=False)
class HalfSpaceProblem:
    source: np.ndarray
    boundary_defect: np.ndarray
    alpha: float
    xi: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"accommodation must lie in (0, 1], got {self.alpha}")
        xi = np.asarray(self.xi, float)
        if xi[0] != 0.0 or np.any(np.diff(xi) <= 0):
            raise ValueError("xi mesh must start at 0 and increase")


@dataclass(frozen=True, eq=False)
class LayerSolution:
    xi: np.ndarray
    values: np.ndarray
    moments: np.ndarray
    fluxes: np.ndarray
    sup: np.ndarray
    plateau: np.ndarray
    tail: float
    fitted_decay: float
    fit_residual: float
    residual: float

    def is_zero(self, tol=1e-14):
        return float(np.max(np.abs(self.values), initial=0.0)) <= tol


@dataclass(frozen=True)
class SlipCoefficients:
    b1: float
    c1: float
    b1_second: float
    alpha: float = 1.0


@dataclass(frozen=True, eq=False)
class FluidTraces:
    """Wall traces for the chaining of boundary data (per time level)."""

    u: np.ndarray
    theta: np.ndarray
    layer_gradient: np.ndarray = None


def chain_boundary_conditions(k, traces, slip=None):
    """Dirichlet data (u^b_k(0) tangential, θ^b_k(0)) for the order-k layer.

    Orders 0, 1, 2: u_k + u^b_k = 0 and θ_k + θ^b_k = 0 at the wall.
    Order 3: u_3 + u^b_3 = b1 ∂_ζ u^b_0 and θ_3 + θ^b_3 = c1 ∂_ζ θ^b_0.
    """
    u = np.asarray(traces.u, float)
    th = np.asarray(traces.theta, float)
    if k < 0:
        raise ValueError("order must be nonnegative")
    if k <= 2:
        return -u, -th
    if k == 3:
        if slip is None:
            raise ValueError("order 3 boundary data need the slip coefficients")
        if traces.layer_gradient is None:
            raise ValueError("order 3 boundary data need the leading layer wall gradient")
        grad = np.asarray(traces.layer_gradient, float)
        return -u + slip.b1 * grad[..., :2], -th + slip.c1 * grad[..., 2]
    raise NotImplementedError("boundary data above order 3 need higher Knudsen layers")


def default_xi_mesh(xi_max=60.0, n=240, stretch=4.0):
    return fd.stretched_mesh(xi_max, n, stretch)


class HalfSpaceSolver:
    """Prefactored solver for one (grid, α, ξ mesh); BGK collision only."""

    def __init__(self, L, xi, alpha):
        if L.kernel.kind != "bgk":
            raise NotImplementedError("half-space layers are solved for the BGK collision model")
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"accommodation must lie in (0, 1], got {alpha}")
        self.L = L
        self.grid = grid = L.grid
        self.alpha = float(alpha)
        self.xi = xi = np.asarray(xi, float)
        self.h = np.diff(xi)
        N = grid.resolution
        self.N = N
        self.v3 = grid.axis
        E = grid.null_basis  # (5, M), weighted orthonormal
        self.E = E
        w = grid.weights
        sq = grid.sqrt_mu
        self.D = float(np.sum(w * np.where(grid.incoming, grid.nodes[:, 2], 0.0) * grid.mu))
        Eq = E.reshape(5, N * N, N)
        wq = w.reshape(N * N, N)
        sqq = sq.reshape(N * N, N)
        self.W = np.einsum("apq,bpq,pq->qab", Eq, Eq, wq)
        self.Wr = np.einsum("bpq,apq,pq->qab", Eq, Eq[:, :, ::-1], wq)
        self.F = np.einsum("apq,pq,pq->qa", Eq, wq * np.abs(self.v3)[None, :], sqq)
        self.Ev = np.einsum("bpq,pq,pq->qb", Eq, wq, sqq)
        n = len(xi)
        self.n = n
        self.G = np.empty((N, n, n))
        self.H = np.zeros((N, n))
        for q in range(N):
            self.G[q], self.H[q] = self._green(self.v3[q])
        self._assemble()

    def _coeffs(self, speed):
        r = speed / self.h
        return (r - 0.5) / (r + 0.5), 0.5 / (r + 0.5)

    def _green(self, v):
        n = self.n
        a, b = self._coeffs(abs(v))
        G = np.zeros((n, n))
        H = np.zeros(n)
        I = np.eye(n)
        if v > 0:
            H[0] = 1.0
            for c in range(n - 1):
                G[c + 1] = a[c] * G[c] + b[c] * (I[c] + I[c + 1])
                H[c + 1] = a[c] * H[c]
        else:
            for c in range(n - 2, -1, -1):
                G[c] = a[c] * G[c + 1] + b[c] * (I[c] + I[c + 1])
        return G, H

    def _assemble(self):
        n, N, al = self.n, self.N, self.alpha
        K = np.zeros((5 * n, 5 * n))
        for q in range(N):
            K += np.kron(self.G[q], self.W[q].T)
        s = np.zeros(5 * n)
        t = np.zeros(5 * n)
        for q in range(N):
            if self.v3[q] > 0:
                qr = N - 1 - q
                if al < 1.0:
                    K += (1.0 - al) * np.kron(np.outer(self.H[q], self.G[qr][0]), self.Wr[q].T)
                t += np.kron(self.H[q], self.Ev[q])
            else:
                s += np.kron(self.G[q][0], self.F[q]) / self.D
        K += al * np.outer(t, s)
        self.K = K
        self.lu = linalg.lu_factor(np.eye(5 * n) - K)

    # ---- marching on full velocity fields ----
    def _march(self, r, defect):
        """Transport with right-hand side r (n, M) and wall defect on the incoming set."""
        grid = self.grid
        n = self.n
        M = grid.size
        v3 = grid.nodes[:, 2]
        inc = grid.incoming
        out = ~inc
        g = np.zeros((n, M))
        s_out = np.abs(v3[out])
        r_out = r[:, out]
        go = np.zeros((n, out.sum()))
        for c in range(n - 2, -1, -1):
            ratio = s_out / self.h[c]
            a = (ratio - 0.5) / (ratio + 0.5)
            b = 0.5 / (ratio + 0.5)
            go[c] = a * go[c + 1] + b * (r_out[c] + r_out[c + 1])
        g[:, out] = go
        wall = g[0]
        refl = wall[grid.reflection]
        sigma = np.sum(grid.weights[out] * s_out * grid.sqrt_mu[out] * wall[out]) / self.D
        inflow = (1.0 - self.alpha) * refl + self.alpha * sigma * grid.sqrt_mu + defect
        s_in = v3[inc]
        r_in = r[:, inc]
        gi = np.zeros((n, inc.sum()))
        gi[0] = inflow[inc]
        for c in range(n - 1):
            ratio = s_in / self.h[c]
            a = (ratio - 0.5) / (ratio + 0.5)
            b = 0.5 / (ratio + 0.5)
            gi[c + 1] = a * gi[c] + b * (r_in[c] + r_in[c + 1])
        g[:, inc] = gi
        return g

    def _moments(self, g):
        return (g * self.grid.weights) @ self.E.T

    def solve(self, source, defect):
        grid = self.grid
        n, M = self.n, grid.size
        source = np.zeros((n, M)) if source is None else np.asarray(source, float)
        defect = np.where(grid.incoming, np.asarray(defect, float), 0.0)
        g0 = self._march(source, defect)
        b0 = self._moments(g0).ravel()
        m = linalg.lu_solve(self.lu, b0).reshape(n, 5)
        g = self._march(source + m @ self.E, defect)
        return g, m

    def residual(self, g, source):
        grid = self.grid
        v3 = grid.nodes[:, 2]
        Lg = grid.P_perp(g)
        src = np.zeros_like(g) if source is None else source
        r = v3 * np.diff(g, axis=0) / self.h[:, None] + 0.5 * (Lg[1:] + Lg[:-1]) - 0.5 * (src[1:] + src[:-1])
        scale = max(np.max(np.abs(g)), 1e-300)
        return float(np.max(np.abs(r))) / scale

    def wall_defect(self, g):
        """𝔅g at ξ = 0 on the incoming set."""
        grid = self.grid
        wall = g[0]
        out = ~grid.incoming
        sigma = np.sum(grid.weights[out] * np.abs(grid.nodes[out, 2]) * grid.sqrt_mu[out] * wall[out]) / self.D
        b = wall - (1.0 - self.alpha) * wall[grid.reflection] - self.alpha * sigma * grid.sqrt_mu
        return np.where(grid.incoming, b, 0.0)


def boundary_operator(grid, g, alpha):
    """𝔅g on the incoming set for a wall trace g (M,) or batch (..., M)."""
    g = np.asarray(g, float)
    out = ~grid.incoming
    D = np.sum(grid.weights * np.where(grid.incoming, grid.nodes[:, 2], 0.0) * grid.mu)
    sigma = np.sum((grid.weights * np.abs(grid.nodes[:, 2]) * grid.sqrt_mu * out) * g, axis=-1) / D
    b = g - (1.0 - alpha) * g[..., grid.reflection] - alpha * sigma[..., None] * grid.sqrt_mu
    return np.where(grid.incoming, b, 0.0)


def _analyse(solver, g, source, plateau_window=(0.6, 0.8), tail_fraction=0.05):
    grid = solver.grid
    xi = solver.xi
    w = grid.weights
    v3 = grid.nodes[:, 2]
    sq = grid.sqrt_mu
    chi = grid.chi
    _, (a, b, c) = _coords(g, chi)
    mom = np.column_stack([a, b, c])
    flux = np.column_stack(
        [
            (g * (w * v3 * sq)).sum(axis=1),
            (g * (w * v3 * grid.nodes[:, 0] * sq)).sum(axis=1),
            (g * (w * v3 * grid.nodes[:, 1] * sq)).sum(axis=1),
            (g * (w * v3 * v3 * sq)).sum(axis=1),
            (g * (w * v3 * 0.5 * (grid.speed2 - 5.0) * sq)).sum(axis=1),
        ]
    )
    sup = np.max(np.abs(g), axis=1)
    top = max(np.max(sup), 1e-300)
    lo, hi = plateau_window
    sel = (xi >= lo * xi[-1]) & (xi <= hi * xi[-1])
    plateau = np.array([np.mean(b[sel, 0]), np.mean(b[sel, 1]), np.mean(flux[:, 0]), np.mean(c[sel])])
    ntail = max(2, int(round(tail_fraction * len(xi))))
    tail = float(np.max(sup[-ntail:])) / top
    third = xi >= (2.0 / 3.0) * xi[-1]
    y = np.log(np.maximum(sup[third], 1e-300))
    if np.all(sup[third] > 0):
        coef = np.polyfit(xi[third], y, 1)
        fit = np.polyval(coef, xi[third])
        rng = max(np.ptp(y), 1e-300)
        fit_res = float(np.sqrt(np.mean((y - fit) ** 2)) / rng)
        decay = float(-coef[0])
    else:
        fit_res, decay = 0.0, np.inf
    res = solver.residual(g, source)
    return LayerSolution(xi, g, mom, flux, sup, plateau, tail, decay, fit_res, res)


def _coords(g, chi):
    from .velocity import project_null

    return project_null(g, chi)


def solve_halfspace(problem, L, solver=None, solvability_tol=1e-6, decay_tol=1e-6, check=True):
    """Solve the layer; raise UNSOLVABLE / NO_DECAY unless ``check`` is False."""
    solver = solver or HalfSpaceSolver(L, problem.xi, problem.alpha)
    if solver.alpha != problem.alpha or len(solver.xi) != len(problem.xi) or np.any(solver.xi != problem.xi):
        raise ValueError("solver was prepared for a different α or ξ mesh")
    g, _ = solver.solve(problem.source, problem.boundary_defect)
    sol = _analyse(solver, g, problem.source)
    if check:
        scale = max(float(np.max(np.abs(problem.boundary_defect), initial=0.0)), 1e-300)
        if problem.source is not None:
            scale = max(scale, float(np.max(np.abs(problem.source))))
        if np.max(np.abs(sol.plateau)) > solvability_tol * scale:
            raise KnudsenError("UNSOLVABLE", f"non-decaying component {sol.plateau}", sol.plateau)
        if sol.tail > decay_tol and np.max(sol.sup) > 0:
            raise KnudsenError("NO_DECAY", f"tail {sol.tail:.2e} above {decay_tol:.1e}; enlarge the xi domain")
    return sol


def solvability_residual(problem, L, solver=None):
    """(u1, u2, mass flux, θ) of the non-decaying part of the truncated solution."""
    sol = solve_halfspace(problem, L, solver, check=False)
    return sol.plateau


def canonical_defects(L, alpha):
    """Wall data of the order-3 Knudsen layer per unit layer gradient.

    Returns (shear1_A, shear1_V, shear2_A, shear2_V, heat_A, heat_V): the layer
    defect is -𝔅(b V - A) for shear (V = v_i √μ, A = 𝔸̂_{3i}) and -𝔅(c V - A)
    for heat (V = (|v|²-3)/2 √μ, A = 𝔹̂_3).
    """
    from .velocity import burnett

    grid = L.grid
    bur = burnett(grid)
    sq = grid.sqrt_mu
    out = []
    for i in range(2):
        A = L.solve(bur.A[2, i])
        out += [boundary_operator(grid, A, alpha), -boundary_operator(grid, grid.nodes[:, i] * sq, alpha)]
    A = L.solve(bur.B[2])
    out += [boundary_operator(grid, A, alpha), -boundary_operator(grid, 0.5 * (grid.speed2 - 3.0) * sq, alpha)]
    return out


def _secant(fn, x0=0.0, x1=1.0, tol=1e-8, maxiter=30):
    f0, f1 = fn(x0), fn(x1)
    scale = max(abs(f0), abs(f1), 1e-300)
    for _ in range(maxiter):
        if f1 == f0:
            break
        x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
        x0, f0 = x1, f1
        x1, f1 = x2, fn(x2)
        if abs(f1) <= tol * scale:
            return x1
    raise RuntimeError("slip root find did not converge")


def slip_coefficients(L, alpha=1.0, xi=None, solver=None):
    """Slip coefficients and the canonical layer solutions at the root.

    b1 (resp. c1) is the value that removes the non-decaying tangential velocity
    (resp. temperature) of the unit shear (resp. heat) layer.
    """
    xi = default_xi_mesh() if xi is None else np.asarray(xi, float)
    solver = solver or HalfSpaceSolver(L, xi, alpha)
    s1A, s1V, s2A, s2V, hA, hV = canonical_defects(L, alpha)
    # the problems are linear in the unknown, so each needs two solves
    solA1 = solver.solve(None, s1A)[0]
    solV1 = solver.solve(None, s1V)[0]
    solA2 = solver.solve(None, s2A)[0]
    solV2 = solver.solve(None, s2V)[0]
    solAh = solver.solve(None, hA)[0]
    solVh = solver.solve(None, hV)[0]

    def plateau(g, j):
        return _analyse(solver, g, None).plateau[j]

    pA1, pV1 = plateau(solA1, 0), plateau(solV1, 0)
    pA2, pV2 = plateau(solA2, 1), plateau(solV2, 1)
    pAh, pVh = plateau(solAh, 3), plateau(solVh, 3)
    b1 = _secant(lambda b: pA1 + b * pV1)
    b1b = _secant(lambda b: pA2 + b * pV2)
    c1 = _secant(lambda c: pAh + c * pVh)
    layers = {
        "shear1": _analyse(solver, solA1 + b1 * solV1, None),
        "shear2": _analyse(solver, solA2 + b1b * solV2, None),
        "heat": _analyse(solver, solAh + c1 * solVh, None),
    }
    return SlipCoefficients(float(b1), float(c1), float(b1b), float(alpha)), layers


def export_profiles(solution, path):
    """Write (ξ, ρ, u1, u2, u3, θ, sup|g|) rows of a layer solution as CSV."""
    import csv

    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["xi", "rho", "u1", "u2", "u3", "theta", "sup"])
        for i, x in enumerate(solution.xi):
            out.writerow([f"{x:.10g}"] + [f"{v:.10g}" for v in solution.moments[i]] + [f"{solution.sup[i]:.10g}"])
