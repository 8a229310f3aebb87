"""Finite-difference helpers on one-dimensional (possibly stretched) meshes."""

import numpy as np
from scipy.integrate import cumulative_trapezoid


def fornberg_weights(x0, x, m):
    """Weights of the m-th derivative at x0 from values at nodes x (Fornberg's recursion)."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def wall_derivatives(values, mesh, depth, accuracy=4):
    """∂^l f(mesh[0]) for l = 0..depth from one-sided stencils of the given accuracy.

    ``values`` has the mesh along axis 0; the result has shape (depth + 1, ...).
    """
    values = np.asarray(values)
    need = depth + accuracy
    if need > len(mesh):
        raise ValueError(f"derivative depth {depth} needs {need} mesh points, mesh has {len(mesh)}")
    out = np.empty((depth + 1,) + values.shape[1:])
    for l in range(depth + 1):
        npts = l + accuracy
        w = fornberg_weights(mesh[0], mesh[:npts], l)
        out[l] = np.tensordot(w, values[:npts], axes=(0, 0))
    return out


def d1(values, mesh, axis=0):
    """Second-order first derivative along an axis (one-sided at the ends)."""
    return np.gradient(values, mesh, axis=axis, edge_order=2)


def second_difference_matrix(mesh):
    """Tridiagonal coefficients (lower, diag, upper) of the conservative 3-point ∂² on interior nodes."""
    h = np.diff(mesh)
    hl = h[:-1]
    hr = h[1:]
    den = 0.5 * (hl + hr)
    lower = 1.0 / (hl * den)
    upper = 1.0 / (hr * den)
    diag = -(lower + upper)
    return lower, diag, upper


def d2(values, mesh):
    """Conservative 3-point second derivative on interior nodes; ends set to zero."""
    lower, diag, upper = second_difference_matrix(mesh)
    out = np.zeros_like(values)
    sh = (-1,) + (1,) * (values.ndim - 1)
    out[1:-1] = (
        lower.reshape(sh) * values[:-2] + diag.reshape(sh) * values[1:-1] + upper.reshape(sh) * values[2:]
    )
    return out


def integral_from_wall(values, mesh, axis=0):
    """∫_0^s f along an axis (trapezoid)."""
    return cumulative_trapezoid(values, mesh, axis=axis, initial=0.0)


def integral_to_far(values, mesh, axis=0):
    """∫_s^{end} f along an axis (trapezoid)."""
    total = np.moveaxis(integral_from_wall(values, mesh, axis), axis, 0)
    return np.moveaxis(total[-1] - total, 0, axis)


def stretched_mesh(z_max, n, stretch=4.0):
    """Nodes ζ(s) = Z (s + λ s²)/(1 + λ) for uniform s in [0, 1]; clustered at the wall."""
    s = np.linspace(0.0, 1.0, n + 1)
    return z_max * (s + stretch * s**2) / (1.0 + stretch)


def trapezoid_weights(mesh):
    w = np.zeros(len(mesh))
    h = np.diff(mesh)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w
