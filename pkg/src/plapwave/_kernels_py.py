"""Pure numpy implementations of the element kernels.

Every function works on nodal values ``U`` of a piecewise-linear field on a
1D mesh with element sizes ``h``; the gradient is constant on each element,
so all volume integrals are evaluated exactly.  The compiled module
``plapwave._kernels`` exposes the same functions with the same signatures.
"""

import numpy as np


def _signed_power(x, q):
    # |x|^q * sign(x), with 0 -> 0 even for q < 0
    ax = np.abs(x)
    out = np.zeros_like(ax)
    nz = ax > 0.0
    out[nz] = ax[nz] ** q * np.sign(x[nz])
    return out


def _abs_power(x, q):
    ax = np.abs(x)
    out = np.zeros_like(ax)
    nz = ax > 0.0
    out[nz] = ax[nz] ** q
    return out


def plap_energy(U, h, p):
    """Return int |u'|^p dx + |u(0)|^p + |u(1)|^p."""
    U = np.asarray(U, dtype=float)
    g = np.diff(U) / h
    return float(np.dot(h, np.abs(g) ** p) + abs(U[0]) ** p + abs(U[-1]) ** p)


def plap_residual(U, h, p):
    """Nodal load of the Robin p-Laplacian form against each hat function."""
    U = np.asarray(U, dtype=float)
    g = np.diff(U) / h
    flux = _signed_power(g, p - 1.0)
    R = np.zeros_like(U)
    R[:-1] -= flux
    R[1:] += flux
    R[0] += _signed_power(U[:1], p - 1.0)[0]
    R[-1] += _signed_power(U[-1:], p - 1.0)[0]
    return R


def plap_tangent(U, h, p):
    """Tridiagonal derivative of :func:`plap_residual`.

    Returns ``(diag, off)`` where ``off[e]`` couples nodes ``e`` and ``e+1``.
    """
    U = np.asarray(U, dtype=float)
    g = np.diff(U) / h
    k = (p - 1.0) * _abs_power(g, p - 2.0) / h
    diag = np.zeros_like(U)
    diag[:-1] += k
    diag[1:] += k
    diag[0] += (p - 1.0) * _abs_power(U[:1], p - 2.0)[0]
    diag[-1] += (p - 1.0) * _abs_power(U[-1:], p - 2.0)[0]
    return diag, -k


def plap_residual_tangent(U, h, p):
    R = plap_residual(U, h, p)
    diag, off = plap_tangent(U, h, p)
    return R, diag, off
