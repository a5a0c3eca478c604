"""Weak-form operators: the Robin p-Laplacian and the Kelvin-Voigt damping form.

Pairings are computed in the coefficient space of a :class:`BasisSet`:
``apply_p_laplacian(form, u)[j]`` is the action of the operator on ``w_j``,
so ``apply_p_laplacian(form, u) @ phi.coeffs`` is the pairing with ``phi``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.optimize

from . import kernels
from .errors import InvalidArgument
from .geometry import BasisSet, FieldCoeffs, norm_w1p


@dataclass(frozen=True, eq=False)
class PLaplacianForm:
    p: float
    basis: BasisSet

    def __post_init__(self):
        if not self.p > 1.0:
            raise InvalidArgument(f"p-Laplacian exponent must exceed 1, got {self.p}")


@dataclass(frozen=True, eq=False)
class DampingForm:
    basis: BasisSet

    @property
    def matrix(self):
        return self.basis.damping


def _check(form, *fields):
    for f in fields:
        if f.basis is not form.basis:
            raise InvalidArgument("field and form are defined on different bases")


def apply_p_laplacian(form: PLaplacianForm, u: FieldCoeffs) -> np.ndarray:
    _check(form, u)
    b = form.basis
    return b.to_dual(kernels.plap_residual(u.nodal, b.mesh.h, float(form.p)))


def p_laplacian_jacobian(form: PLaplacianForm, c) -> np.ndarray:
    """Dense derivative of :func:`apply_p_laplacian` w.r.t. the coefficients."""
    b = form.basis
    diag, off = kernels.plap_tangent(b.nodal(c), b.mesh.h, float(form.p))
    T = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    if b.modes is None:
        return T
    return b.modes.T @ T @ b.modes


def apply_p_laplacian_quadrature(form: PLaplacianForm, u: FieldCoeffs) -> np.ndarray:
    """Same action as :func:`apply_p_laplacian`, assembled by Gauss quadrature.

    Slower, and independent of the kernels; used as a cross-check.
    """
    _check(form, u)
    b = form.basis
    mesh = b.mesh
    p = form.p
    U = u.nodal
    h = mesh.h
    dphi = np.stack([-1.0 / h, 1.0 / h], axis=-1)
    # u' at every quadrature point, from the local hat derivatives
    gq = np.broadcast_to((dphi[:, 0] * U[:-1] + dphi[:, 1] * U[1:])[:, None],
                         mesh.quad_points.shape)
    ag = np.abs(gq)
    flux = np.where(ag > 0.0, ag ** (p - 2.0) * gq, 0.0)
    loc = np.einsum("eq,ea->ea", mesh.quad_weights * flux, dphi)
    R = np.zeros(mesh.n_nodes)
    R[:-1] += loc[:, 0]
    R[1:] += loc[:, 1]
    for k in (0, -1):
        s = U[k]
        if s != 0.0:
            R[k] += abs(s) ** (p - 2.0) * s
    return b.to_dual(R)


def apply_damping(form: DampingForm, v: FieldCoeffs) -> np.ndarray:
    _check(form, v)
    return form.matrix @ v.coeffs


def pairing(form: PLaplacianForm, u: FieldCoeffs, phi: FieldCoeffs) -> float:
    _check(form, u, phi)
    return float(apply_p_laplacian(form, u) @ phi.coeffs)


@dataclass
class DualNormReport:
    lhs_estimate: float
    rhs: float
    passed: bool
    probes: int

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _random_unit_fields(basis, p, count, rng):
    out = []
    while len(out) < count:
        c = rng.standard_normal(basis.N)
        nrm = norm_w1p(FieldCoeffs(c, basis), p)
        if nrm > 0.0:
            out.append(c / nrm)
    return out


def dual_norm_bound_check(form: PLaplacianForm, u: FieldCoeffs, probes: int, rng=None,
                          tol=1e-9, ascent=True) -> DualNormReport:
    """Probe the operator norm of the p-Laplacian at ``u`` against 2 ||u||^(p-1).

    Random unit probes are complemented by ``u / ||u||`` and the normalized
    Riesz-like direction of the dual vector itself, which are the natural
    near-maximizers; with ``ascent`` the best probe is then refined by a
    quasi-Newton ascent of the ratio.  The estimate is a lower bound on the
    true dual norm, so a failure is always a genuine violation.
    """
    if probes < 1:
        raise InvalidArgument("probes must be >= 1")
    _check(form, u)
    rng = np.random.default_rng(rng)
    p = form.p
    F = apply_p_laplacian(form, u)
    nu = norm_w1p(u, p)
    rhs = 2.0 * nu ** (p - 1.0)
    candidates = _random_unit_fields(form.basis, p, probes, rng)
    for c in (u.coeffs, np.linalg.solve(form.basis.mass, F)):
        n = norm_w1p(FieldCoeffs(c, form.basis), p)
        if n > 0.0:
            candidates.append(c / n)
    lhs = max(abs(float(F @ c)) for c in candidates)
    if ascent and nu > 0.0:
        best = max(candidates, key=lambda c: abs(float(F @ c)))
        lhs = max(lhs, _ascend_ratio(form, F, best * np.sign(F @ best)))
    return DualNormReport(lhs, rhs, bool(lhs <= rhs + tol), len(candidates))


def _ascend_ratio(form, F, c0):
    # maximize F.c / ||c||_{1,p}; the norm gradient is P(c) / ||c||^(p-1)
    p = form.p
    b = form.basis

    def neg_ratio(c):
        U = b.nodal(c)
        nrm_p = kernels.plap_energy(U, b.mesh.h, p)
        if nrm_p <= 0.0:
            return 0.0, np.zeros_like(c)
        nrm = nrm_p ** (1.0 / p)
        P = b.to_dual(kernels.plap_residual(U, b.mesh.h, p))
        val = F @ c
        grad = F / nrm - val * P / (nrm_p * nrm)
        return -val / nrm, -grad

    res = scipy.optimize.minimize(neg_ratio, c0, jac=True, method="BFGS",
                                  options={"maxiter": 200, "gtol": 1e-12})
    return float(-res.fun)


def monotonicity_check(form: PLaplacianForm, u: FieldCoeffs, v: FieldCoeffs) -> float:
    """Pairing of (-Δp u) - (-Δp v) with u - v."""
    _check(form, u, v)
    d = apply_p_laplacian(form, u) - apply_p_laplacian(form, v)
    return float(d @ (u.coeffs - v.coeffs))


def hemicontinuity_probe(form: PLaplacianForm, u: FieldCoeffs, v: FieldCoeffs,
                         phi: FieldCoeffs, lambdas) -> np.ndarray:
    """Pairings of -Δp(u + λ v) with phi for each λ."""
    _check(form, u, v, phi)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas <= 0.0) or np.any(lambdas > 1.0):
        raise InvalidArgument("lambdas must lie in (0, 1]")
    return np.array([
        pairing(form, FieldCoeffs(u.coeffs + lam * v.coeffs, form.basis), phi)
        for lam in lambdas
    ])
