"""Galerkin simulation of the strongly damped p-Laplacian wave equation.

    u_tt - Δp u - Δ u_t = 0            in (0, 1)
    |u'|^(p-2) ∂n u + |u|^(p-2) u + ∂n u_t + u_t = f(u)   at x = 0, 1
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
