"""Linearized collision operators, Γ, pseudo-inverse and transport coefficients.

Two kernels are provided.  The BGK surrogate has 𝓛 = I - P with ν ≡ 1 and
Γ(f, g) = ½ P⊥[(Pf)(Pg)/√μ], the quadratic part of the BGK local-Maxwellian
expansion.  The hard-sphere cutoff kernel is assembled from the K2 - K1
decomposition of the linearized operator.  Since 𝓛 commutes with the
coordinate reflections, it is stored as eight dense blocks, one per parity
sector, each acting on the octant v > 0.
"""

import itertools
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, linalg
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import erf

from .io import ContainerError, read_container, write_container
from .velocity import chi_basis, maxwellian, project_null

SIGNS = np.array(list(itertools.product((1, -1), repeat=3)))
C3 = (2.0 * np.pi) ** -1.5


@dataclass(frozen=True)
class CollisionKernel:
    """kind is "bgk" or "cutoff"; cutoff uses B = |v - v*|^γ b0 |cos θ|."""

    kind: str = "bgk"
    gamma: float = 1.0
    b0: float = 1.0 / (2.0 * np.pi)
    angular_nodes: int = 32
    correction_width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bgk", "cutoff"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not (-3.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (-3, 1], got {self.gamma}")
        if self.kind == "cutoff" and self.b0 <= 0:
            raise ValueError("angular constant b0 must be positive")
        if self.angular_nodes < 4:
            raise ValueError("angular_nodes must be >= 4")

    @property
    def cache_key(self):
        return f"{self.kind}_g{self.gamma:g}_b{self.b0:.6g}_a{self.angular_nodes}_s{self.correction_width:g}"


@dataclass(frozen=True)
class TransportCoefficients:
    kappa1: float
    kappa2: float
    kappa1_23: float

    def __post_init__(self):
        if not (self.kappa1 > 0 and self.kappa2 > 0):
            raise ValueError(f"non-positive transport coefficient ({self.kappa1}, {self.kappa2})")


def hard_sphere_frequency(r):
    """E|v - Z| for Z standard normal, as a function of r = |v|."""
    r = np.asarray(r, dtype=float)
    rr = np.where(r < 1e-8, 1.0, r)
    out = np.sqrt(2.0 / np.pi) * np.exp(-0.5 * rr**2) + (rr + 1.0 / rr) * erf(rr / np.sqrt(2.0))
    return np.where(r < 1e-8, 2.0 * np.sqrt(2.0 / np.pi), out)


def _frequency_radial(r, gamma):
    # E|v - Z|^γ written as an integral over ρ = |v - Z| (noncentral chi, 3 dof)
    def density(rho):
        if r < 1e-10:
            return np.sqrt(2.0 / np.pi) * rho**2 * np.exp(-0.5 * rho**2)
        diff = np.exp(-0.5 * (rho - r) ** 2) - np.exp(-0.5 * (rho + r) ** 2)
        return np.sqrt(2.0 / np.pi) * rho / (2.0 * r) * diff

    upper = r + 14.0
    val, _ = integrate.quad(lambda p: p**gamma * density(p), 0.0, upper, limit=200, points=[r] if r > 0 else None)
    return val


def collision_frequency(kernel, grid):
    """ν(v) = ∫∫ B(v - v*, ω) μ(v*) dω dv*; constant 1 for BGK."""
    if kernel.kind == "bgk":
        return np.ones(grid.size)
    ang = 2.0 * np.pi * kernel.b0
    r = np.sqrt(grid.speed2)
    if kernel.gamma == 1.0:
        return ang * hard_sphere_frequency(r)
    radii, inv = np.unique(np.round(r, 12), return_inverse=True)
    vals = np.array([_frequency_radial(x, kernel.gamma) for x in radii])
    return ang * vals[inv]


def hard_sphere_kernel(v, w, b0=1.0 / (2.0 * np.pi)):
    """k2(v, w) - k1(v, w) for hard spheres; the diagonal v = w is left finite."""
    eta = w - v
    d = np.sqrt(np.sum(eta * eta, axis=-1))
    dd = np.where(d == 0, 1.0, d)
    s = np.sum(v * eta, axis=-1) / dd
    scale = 2.0 * np.pi * b0
    k2 = 4.0 * C3 / dd * np.exp(-0.5 * (s + 0.5 * dd) ** 2 - 0.125 * dd**2)
    k1 = d * C3 * np.exp(-0.25 * (np.sum(v * v, -1) + np.sum(w * w, -1)))
    return scale * (k2 - k1)


def _sector_character(sigma, s):
    return np.prod(np.where(s == -1, sigma, 1))


class LinearizedCollision:
    """Linearized operator 𝓛 on a velocity grid.

    ``apply`` acts along the last axis.  ``solve`` is the pseudo-inverse on
    𝒩⊥.  For the cutoff kernel the parity blocks are assembled lazily and,
    when ``cache_dir`` is set, stored in the binary container format.
    """

    def __init__(self, kernel, grid, cache_dir=None, null_tol=5e-2):
        self.kernel = kernel
        self.null_tol = null_tol
        self.raw_null_residual = {}
        self.grid = grid
        self.cache_dir = cache_dir
        self.nu = collision_frequency(kernel, grid)
        self._blocks = {}
        self._factors = {}
        if kernel.kind == "cutoff":
            if kernel.gamma != 1.0:
                raise NotImplementedError("operator assembly is implemented for hard spheres (gamma = 1) only")
            self._setup_sectors()

    @property
    def nullspace(self):
        return self.grid.null_basis

    # ---- parity-sector bookkeeping -------------------------------------------------
    def _setup_sectors(self):
        g = self.grid
        n = g.resolution
        half = np.arange(n // 2, n)
        idx = np.arange(g.size).reshape(n, n, n)
        images = []
        for s in SIGNS:
            ax = [half if si == 1 else n - 1 - half for si in s]
            images.append(idx[np.ix_(*ax)].ravel())
        self.images = np.array(images)
        self.octant = g.nodes[self.images[0]]
        self.char = np.array([[_sector_character(sig, s) for s in SIGNS] for sig in SIGNS], dtype=float)
        self.sector_weight = 8.0 * g.weights[0]
        self.nu_oct = self.nu[self.images[0]]
        null_sec = self.decompose(self.grid.null_basis)
        self.sector_null = {}
        scale = np.max(np.linalg.norm(null_sec, axis=-1))
        for k in range(8):
            vecs = null_sec[:, k, :]
            keep = np.linalg.norm(vecs, axis=1) > 1e-8 * scale
            vecs = vecs[keep]
            if len(vecs):
                q, _ = np.linalg.qr(vecs.T * np.sqrt(self.sector_weight))
                vecs = q.T / np.sqrt(self.sector_weight)
            self.sector_null[k] = vecs

    def decompose(self, g):
        """(..., M) -> (..., 8, n) parity components on the octant."""
        vals = g[..., self.images]
        return np.einsum("ks,...sn->...kn", self.char, vals) / 8.0

    def compose(self, parts):
        out = np.empty(parts.shape[:-2] + (self.grid.size,))
        vals = np.einsum("ks,...kn->...sn", self.char, parts)
        for s in range(8):
            out[..., self.images[s]] = vals[..., s, :]
        return out

    def _cache_path(self, k):
        if self.cache_dir is None:
            return None
        tag = "".join("+" if x > 0 else "-" for x in SIGNS[k])
        g = self.grid
        return os.path.join(self.cache_dir, f"{self.kernel.cache_key}_N{g.resolution}_R{g.extent:g}_{tag}.hlc")

    def _load_cached(self, k):
        path = self._cache_path(k)
        if path is None or not os.path.exists(path):
            return None
        try:
            arrays, _ = read_container(path)
        except ContainerError:
            return None
        return arrays.get("block")

    @cached_property
    def _singular_correction(self):
        """Diagonal weight restoring the integral of k(v, ·) near its 1/|v - w| singularity."""
        g = self.grid
        h = g.spacing
        sig = self.kernel.correction_width
        nrad = 48
        npol = self.kernel.angular_nodes
        nazi = 2 * npol
        reach = 8.0 * sig
        mmax = int(np.ceil(reach / h))
        m = np.arange(-mmax, mmax + 1)
        lat = np.stack(np.meshgrid(m, m, m, indexing="ij"), -1).reshape(-1, 3)
        lat = lat[np.any(lat != 0, axis=1)]
        lat = lat[np.linalg.norm(lat, axis=1) * h < reach] * h
        phi = np.exp(-np.sum(lat**2, 1) / (2.0 * sig**2))
        rg, rw = np.polynomial.legendre.leggauss(nrad)
        rg = 0.5 * (rg + 1.0) * reach
        rw = 0.5 * rw * reach
        cg_, cw = np.polynomial.legendre.leggauss(npol)
        ph = np.arange(nazi) * 2.0 * np.pi / nazi
        st = np.sqrt(1.0 - cg_**2)
        dirs = np.stack(
            [st[:, None] * np.cos(ph)[None], st[:, None] * np.sin(ph)[None], np.repeat(cg_[:, None], nazi, 1)], -1
        ).reshape(-1, 3)
        dw = (cw[:, None] * np.full(nazi, 2.0 * np.pi / nazi)[None]).ravel()
        pts = (rg[:, None, None] * dirs[None]).reshape(-1, 3)
        wts = ((rw * rg**2 * np.exp(-(rg**2) / (2.0 * sig**2)))[:, None] * dw[None]).ravel()
        b0 = self.kernel.b0
        corr = np.empty(len(self.octant))
        chunk = max(1, 4_000_000 // len(pts))
        for i0 in range(0, len(self.octant), chunk):
            v = self.octant[i0 : i0 + chunk, None, :]
            exact = hard_sphere_kernel(v, v + pts[None], b0) @ wts
            lattice = h**3 * (hard_sphere_kernel(v, v + lat[None], b0) @ phi)
            corr[i0 : i0 + chunk] = exact - lattice
        return corr

    def _assemble(self, sectors):
        g = self.grid
        h3 = g.weights[0]
        n = len(self.octant)
        V = self.octant
        blocks = {k: np.zeros((n, n)) for k in sectors}
        rows = max(1, 2_000_000 // n)
        for j, s in enumerate(SIGNS):
            K = np.empty((n, n))
            W = V * s
            for i0 in range(0, n, rows):
                K[i0 : i0 + rows] = h3 * hard_sphere_kernel(V[i0 : i0 + rows, None, :], W[None], self.kernel.b0)
            if np.all(s == 1):
                K[np.arange(n), np.arange(n)] = self._singular_correction
            for k in sectors:
                blocks[k] -= self.char[k, j] * K
            del K
        for k in sectors:
            B = blocks[k]
            B[np.arange(n), np.arange(n)] += self.nu_oct
            B = 0.5 * (B + B.T)
            E = self.sector_null[k]
            if len(E):
                # relative residual of the raw quadrature on the collision invariants
                res = np.linalg.norm(E @ B, axis=1) / np.linalg.norm(E * self.nu_oct, axis=1)
                self.raw_null_residual[k] = float(np.max(res))
                if self.raw_null_residual[k] > self.null_tol:
                    raise ValueError(
                        f"null-function residual {self.raw_null_residual[k]:.2e} exceeds {self.null_tol:.1e}; "
                        "kernel quadrature underresolved"
                    )
                Q = np.eye(n) - self.sector_weight * E.T @ E
                B = Q @ B @ Q
                B = 0.5 * (B + B.T)
            blocks[k] = B
        return blocks

    def block(self, k):
        return self.blocks([k])[k]

    def blocks(self, sectors=range(8)):
        missing = []
        for k in sectors:
            if k in self._blocks:
                continue
            cached = self._load_cached(k)
            if cached is not None:
                self._blocks[k] = cached
            else:
                missing.append(k)
        if missing:
            fresh = self._assemble(missing)
            for k, B in fresh.items():
                self._blocks[k] = B
                path = self._cache_path(k)
                if path is not None:
                    os.makedirs(self.cache_dir, exist_ok=True)
                    write_container(path, {"block": B}, {"kernel": self.kernel.cache_key, "grid": list(self.grid.key)})
        return {k: self._blocks[k] for k in sectors}

    def _factor(self, k):
        if k not in self._factors:
            B = self.block(k)
            E = self.sector_null[k]
            A = B + self.sector_weight * E.T @ E if len(E) else B
            self._factors[k] = linalg.cho_factor(A)
        return self._factors[k]

    def _active_sectors(self, parts):
        scale = np.max(np.abs(parts)) if parts.size else 0.0
        return [k for k in range(8) if np.max(np.abs(parts[..., k, :]), initial=0.0) > 1e-14 * scale]

    # ---- public operations ------------------------------------------------------------
    def apply(self, g, around=None):
        """𝓛g (or 𝓛_ε g around a local Maxwellian state for BGK)."""
        g = np.asarray(g, dtype=float)
        if self.kernel.kind == "bgk":
            if around is None:
                return self.grid.P_perp(g)
            basis = chi_basis(self.grid, around)
            return g - project_null(g, basis)[0]
        if around is not None:
            raise NotImplementedError("local-Maxwellian operator is provided for the BGK kernel only")
        parts = self.decompose(g)
        out = np.zeros_like(parts)
        for k in self._active_sectors(parts):
            out[..., k, :] = parts[..., k, :] @ self.block(k)
        return self.compose(out)

    def solve(self, rhs, method="direct", tol=1e-10, maxiter=10_000):
        """Pseudo-inverse on 𝒩⊥ (the null component of rhs is discarded)."""
        rhs = self.grid.P_perp(np.asarray(rhs, dtype=float))
        if self.kernel.kind == "bgk":
            return rhs
        if method == "cg":
            return self._solve_cg(rhs, tol, maxiter)
        parts = self.decompose(rhs)
        out = np.zeros_like(parts)
        for k in self._active_sectors(parts):
            x = linalg.cho_solve(self._factor(k), np.moveaxis(parts[..., k, :], -1, 0))
            x = np.moveaxis(x, 0, -1)
            E = self.sector_null[k]
            if len(E):
                x = x - (x @ E.T * self.sector_weight) @ E
            out[..., k, :] = x
        return self.compose(out)

    def _solve_cg(self, rhs, tol, maxiter):
        flat = rhs.reshape(-1, self.grid.size)
        out = np.empty_like(flat)
        M = self.grid.size
        op = LinearOperator((M, M), matvec=lambda x: self.grid.P_perp(self.apply(self.grid.P_perp(x))))
        pre = LinearOperator((M, M), matvec=lambda x: self.grid.P_perp(x / self.nu))
        for i, b in enumerate(flat):
            x, info = cg(op, b, rtol=tol, atol=0.0, maxiter=maxiter, M=pre)
            if info != 0:
                raise RuntimeError(f"conjugate gradient did not converge (info={info})")
            out[i] = self.grid.P_perp(x)
        return out.reshape(rhs.shape)

    def gamma(self, f, g, around=None):
        """Γ(f, g); around a local Maxwellian state for the modified operator Γ_ε (BGK)."""
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        if self.kernel.kind == "bgk":
            return bgk_gamma(self.grid, f, g, around)
        if around is not None:
            raise NotImplementedError("local-Maxwellian Γ is provided for the BGK kernel only")
        return self.grid.P_perp(cutoff_gamma_raw(self.kernel, self.grid, f, g))

    @cached_property
    def spectrum(self):
        """Generalized eigenvalues of 𝓛g = λνg, sorted, per parity sector merged."""
        if self.kernel.kind == "bgk":
            nperp = self.grid.size - 5
            return np.concatenate([np.zeros(5), np.ones(nperp)])
        vals = []
        for k, B in self.blocks().items():
            vals.append(linalg.eigh(B, np.diag(self.nu_oct), eigvals_only=True))
        return np.sort(np.concatenate(vals))

    @cached_property
    def coercivity(self):
        """Spectral gap c0: smallest generalized eigenvalue on 𝒩⊥."""
        lam = self.spectrum
        return float(lam[5])

    def null_dimension(self, rel=1e-6):
        lam = self.spectrum
        return int(np.sum(np.abs(lam) < rel * np.max(np.abs(lam))))

    def symmetry_defect(self, f, g):
        a = self.grid.inner(self.apply(f), g)
        b = self.grid.inner(f, self.apply(g))
        return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300)


def assemble_linearized(kernel, grid, cache_dir=None, null_tol=5e-2, eager=False):
    """Build 𝓛.

    Cutoff blocks are assembled on first use (or now with ``eager``); a block
    whose raw quadrature leaves a relative null-function residual above
    ``null_tol`` is rejected as underresolved.
    """
    L = LinearizedCollision(kernel, grid, cache_dir, null_tol)
    if eager and kernel.kind == "cutoff":
        L.blocks()
    return L


def pseudo_inverse(L, rhs, method="direct"):
    """Return (𝓛⁻¹P⊥rhs, norm of the discarded null-space component)."""
    rhs = np.asarray(rhs, dtype=float)
    discarded = L.grid.norm(L.grid.P(rhs))
    return L.solve(rhs, method=method), discarded


def bgk_gamma(grid, f, g, around=None):
    """½P⊥[(Pf)(Pg)/√μ], around μ or around a local Maxwellian state."""
    if around is None:
        E = grid.null_basis
        poly = E / grid.sqrt_mu
        pf = grid.null_coefficients(f) @ poly
        pg = grid.null_coefficients(g) @ poly
        return 0.5 * grid.P_perp(pf * pg * grid.sqrt_mu)
    basis = chi_basis(grid, around)
    sq = np.sqrt(maxwellian(grid, around))
    pf = project_null(f, basis)[0] / sq
    pg = project_null(g, basis)[0] / sq
    prod = 0.5 * pf * pg * sq
    return prod - project_null(prod, basis)[0]


def gamma_bilinear(f, g, L, around=None):
    return L.gamma(f, g, around)


def transport_coefficients(L, burnett, method="direct"):
    """κ1 = <𝓛⁻¹𝔸13, 𝔸13>, κ2 = (2/5)<𝓛⁻¹𝔹3, 𝔹3>, with κ1 from (2,3) as isotropy check."""
    grid = L.grid
    A13, A23, B3 = burnett.A[0, 2], burnett.A[1, 2], burnett.B[2]
    k1 = float(grid.inner(L.solve(A13, method=method), A13))
    k1b = float(grid.inner(L.solve(A23, method=method), A23))
    k2 = 0.4 * float(grid.inner(L.solve(B3, method=method), B3))
    if abs(k1 - k1b) > 1e-8 * max(abs(k1), 1.0):
        raise ValueError(f"isotropy check failed: kappa1 {k1} vs {k1b}")
    return TransportCoefficients(k1, k2, k1b)


def cutoff_gamma_raw(kernel, grid, f, g, n_polar=None):
    """Direct quadrature of (1/√μ) Q(√μf, √μg) for the cutoff kernel, without projection.

    Energy conservation gives μ(v')μ(v*') = μ(v)μ(v*), so only the ratios
    f/√μ are interpolated (trilinearly, extrapolated at the edges) at the
    post-collision velocities.  Meant for small grids.
    """
    n_polar = n_polar or max(4, kernel.angular_nodes // 4)
    cg_, cw = np.polynomial.legendre.leggauss(n_polar)
    nazi = 2 * n_polar
    ph = np.arange(nazi) * 2.0 * np.pi / nazi
    st = np.sqrt(1.0 - cg_**2)
    om = np.stack([st[:, None] * np.cos(ph), st[:, None] * np.sin(ph), np.repeat(cg_[:, None], nazi, 1)], -1).reshape(-1, 3)
    ow = (cw[:, None] * np.full(nazi, 2.0 * np.pi / nazi)).ravel()
    n = grid.resolution
    ax = grid.axis
    phi_f = f / grid.sqrt_mu
    phi_g = g / grid.sqrt_mu
    iF = RegularGridInterpolator((ax, ax, ax), phi_f.reshape(n, n, n), bounds_error=False, fill_value=None)
    iG = RegularGridInterpolator((ax, ax, ax), phi_g.reshape(n, n, n), bounds_error=False, fill_value=None)
    V = grid.nodes
    wmu = grid.weights * grid.mu
    out = np.empty(grid.size)
    for i, v in enumerate(V):
        rel = v - V
        d = np.linalg.norm(rel, axis=1)
        proj = rel @ om.T
        B = d[:, None] ** (kernel.gamma - 1.0) * kernel.b0 * np.abs(proj)
        B[d == 0] = 0.0
        vp = v[None, None, :] - proj[..., None] * om[None]
        vsp = V[:, None, :] + proj[..., None] * om[None]
        gain = iF(vp.reshape(-1, 3)).reshape(proj.shape) * iG(vsp.reshape(-1, 3)).reshape(proj.shape)
        loss = phi_f[i] * phi_g[:, None]
        out[i] = np.sum(wmu[:, None] * ow[None] * B * (gain - loss))
    return out * grid.sqrt_mu
