"""Discrete velocity grid, Maxwellians, null-space projections and Burnett functions.

Distributions are stored as arrays whose last axis runs over the velocity
nodes, so a field over a spatial mesh is simply an array of shape
``(n_points, grid.size)``.  All inner products use the quadrature weights.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    """Tensor midpoint grid on [-R, R]^3.

    Nodes sit at ``-R + h(k + 1/2)`` in every axis, so no node lies on a
    coordinate plane and every reflection maps the node set onto itself.
    Flattening is C-order: ``index = (i*N + j)*N + k`` with ``k`` along v3.
    """

    extent: float
    resolution: int
    axis: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    moment_tol: float = 1e-7

    @property
    def size(self):
        return self.nodes.shape[0]

    @property
    def spacing(self):
        return self.axis[1] - self.axis[0]

    @property
    def key(self):
        return ("midpoint", float(self.extent), int(self.resolution))

    @cached_property
    def speed2(self):
        return np.sum(self.nodes**2, axis=1)

    @cached_property
    def mu(self):
        return np.exp(-0.5 * self.speed2) / (2.0 * np.pi) ** 1.5

    @cached_property
    def sqrt_mu(self):
        return np.sqrt(self.mu)

    @cached_property
    def reflection(self):
        """Index map v -> (v1, v2, -v3)."""
        n = self.resolution
        idx = np.arange(self.size).reshape(n, n, n)
        return idx[:, :, ::-1].ravel()

    def axis_flip(self, axes):
        """Index map for the reflection that negates the listed axes."""
        n = self.resolution
        idx = np.arange(self.size).reshape(n, n, n)
        sl = tuple(slice(None, None, -1) if a in axes else slice(None) for a in range(3))
        return idx[sl].ravel()

    @cached_property
    def incoming(self):
        """Mask of velocities entering the half-space x3 > 0 through the wall."""
        return self.nodes[:, 2] > 0

    @cached_property
    def chi(self):
        return chi_basis(self)

    @cached_property
    def null_basis(self):
        """Weighted-orthonormal basis (5, M) of the null space around the global μ."""
        c = self.chi.chi
        sw = np.sqrt(self.weights)
        q, _ = np.linalg.qr((c * sw).T)
        return (q / sw[:, None]).T

    @cached_property
    def moment_error(self):
        v2 = self.speed2
        m0 = np.sum(self.weights * self.mu)
        m2 = np.sum(self.weights * v2 * self.mu)
        m4 = np.sum(self.weights * v2**2 * self.mu)
        return max(abs(m0 - 1.0), abs(m2 - 3.0) / 3.0, abs(m4 - 15.0) / 15.0)

    def inner(self, f, g):
        """Discrete L2(dv) inner product along the last axis."""
        return np.sum(f * g * self.weights, axis=-1)

    def norm(self, f):
        return np.sqrt(self.inner(f, f))

    def null_coefficients(self, g):
        return (g * self.weights) @ self.null_basis.T

    def P(self, g):
        """Orthogonal projection onto the null space of the global linearized operator."""
        return self.null_coefficients(g) @ self.null_basis

    def P_perp(self, g):
        return g - self.P(g)

    def check_same(self, other):
        if other.key != self.key:
            raise ValueError(f"velocity grid mismatch: {self.key} vs {other.key}")


def build_grid(extent=8.0, resolution=24, moment_tol=1e-7):
    """Build the midpoint velocity grid and verify the Gaussian moments.

    Odd resolutions are rejected: they would put a node on v3 = 0, where the
    incoming/outgoing split of the wall condition is ambiguous.
    """
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    if resolution % 2:
        raise ValueError(f"resolution must be even so that no node lies on v3 = 0, got {resolution}")
    if extent < 5:
        raise ValueError(f"extent must be >= 5 thermal speeds, got {extent}")
    h = 2.0 * extent / resolution
    pos = h * (np.arange(resolution // 2) + 0.5)
    axis = np.concatenate([-pos[::-1], pos])
    v1, v2, v3 = np.meshgrid(axis, axis, axis, indexing="ij")
    nodes = np.stack([v1.ravel(), v2.ravel(), v3.ravel()], axis=1)
    weights = np.full(nodes.shape[0], h**3)
    grid = VelocityGrid(float(extent), int(resolution), axis, nodes, weights, float(moment_tol))
    if grid.moment_error > moment_tol:
        raise ValueError(
            f"Gaussian moments off by {grid.moment_error:.2e} > {moment_tol:.1e}; "
            "increase resolution or extent"
        )
    return grid


@dataclass(frozen=True, eq=False)
class MacroState:
    """Density, velocity and temperature fields (perturbations or absolute values)."""

    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        for name in ("rho", "u", "theta"):
            val = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(val)):
                raise ValueError(f"non-finite {name}")
            object.__setattr__(self, name, val)
        if self.u.shape[-1:] != (3,):
            raise ValueError("u must have a trailing axis of length 3")

    @classmethod
    def zero(cls, shape=()):
        return cls(np.zeros(shape), np.zeros(shape + (3,)), np.zeros(shape))

    @classmethod
    def rest(cls):
        """The wall state ρ = 1, u = 0, θ = 1."""
        return cls(1.0, np.zeros(3), 1.0)

    def boussinesq_defect(self):
        return np.max(np.abs(self.rho + self.theta))


def maxwellian(grid, state):
    """Local Maxwellian with absolute (ρ, u, θ); batched over leading axes."""
    rho = np.asarray(state.rho, dtype=float)
    theta = np.asarray(state.theta, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("density must be positive")
    if np.any(theta <= 0):
        raise ValueError("temperature must be positive")
    c = grid.nodes - state.u[..., None, :]
    c2 = np.sum(c * c, axis=-1)
    th = theta[..., None]
    return rho[..., None] / (2.0 * np.pi * th) ** 1.5 * np.exp(-0.5 * c2 / th)


def infinitesimal_maxwellian(grid, rho, u, theta):
    """(ρ + u·v + θ(|v|²-3)/2)√μ, batched over leading axes of the inputs."""
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    poly = rho[..., None] + u @ grid.nodes.T + 0.5 * theta[..., None] * (grid.speed2 - 3.0)
    return poly * grid.sqrt_mu


def moments(grid, g):
    """Infinitesimal-Maxwellian coordinates (ρ, u, θ) of g around the global μ."""
    _, (a, b, c) = project_null(g, grid.chi)
    return a, b, c


@dataclass(frozen=True, eq=False)
class ChiBasis:
    """Null-space basis χ0..χ4 around a Maxwellian with absolute (ρ, u, θ).

    χ4 is normalized so that <χ4, χ4> = 3/2, which makes c = (2/3)<g, χ4>.
    """

    chi: np.ndarray
    gram: np.ndarray
    state: MacroState
    weights: np.ndarray

    @cached_property
    def gram_inv(self):
        return np.linalg.inv(self.gram)


def chi_basis(grid, state=None):
    if state is None:
        state = MacroState.rest()
    rho = float(state.rho)
    theta = float(state.theta)
    u = np.asarray(state.u, dtype=float)
    sq = np.sqrt(maxwellian(grid, state))
    c = grid.nodes - u
    c2 = np.sum(c * c, axis=1)
    chi = np.empty((5, grid.size))
    chi[0] = sq / np.sqrt(rho)
    chi[1:4] = (c / np.sqrt(rho * theta)).T * sq
    chi[4] = (0.5 * c2 / theta - 1.5) * sq / np.sqrt(rho)
    gram = (chi * grid.weights) @ chi.T
    return ChiBasis(chi, gram, state, grid.weights)


def project_null(g, basis):
    """Split off the null-space part of g.

    Returns the projection and the coordinates (a, b, c) of
    ``a χ0 + b·(χ1, χ2, χ3) + c χ4``.  The discrete Gram inverse is used so the
    map is an exact orthogonal projector on the grid.
    """
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != basis.chi.shape[1]:
        raise ValueError("distribution and basis live on different grids")
    rhs = g @ (basis.chi * basis.weights).T
    coef = rhs @ basis.gram_inv.T
    proj = coef @ basis.chi
    return proj, (coef[..., 0], coef[..., 1:4], coef[..., 4])


@dataclass(frozen=True, eq=False)
class BurnettSet:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


def burnett(grid, state=None):
    """Burnett functions 𝔸_ij, 𝔹_i, ℂ.

    With a state the centered variable (v - u)/√θ is used in place of v.
    """
    if state is None:
        c = grid.nodes
    else:
        c = (grid.nodes - np.asarray(state.u)) / np.sqrt(float(state.theta))
    c2 = np.sum(c * c, axis=1)
    sq = np.exp(-0.25 * c2) / (2.0 * np.pi) ** 0.75
    A = np.einsum("mi,mj->ijm", c, c)
    A[[0, 1, 2], [0, 1, 2]] -= c2 / 3.0
    A *= sq
    B = (0.5 * (c2 - 5.0) * sq) * c.T
    C = (0.25 * c2**2 - 2.5 * c2 + 3.75) * sq
    return BurnettSet(A, B, C)


def reflect(grid, g):
    """Values of g at (v1, v2, -v3)."""
    return np.asarray(g)[..., grid.reflection]
