"""1D mesh, Galerkin bases, projections and discrete norms on (0, 1).

The domain is the unit interval, so the boundary consists of the two
endpoints and every boundary integral is a sum of two point values.  Both
basis kinds live on the piecewise-linear finite element space of a mesh:

* ``FEM_HAT``: the nodal hat functions themselves.
* ``ROBIN_EIGEN``: discrete eigenfunctions of the Laplacian with the
  Robin condition ``dw/dn + w = 0``, stored as a matrix of nodal values.

Any field expanded in either basis is therefore piecewise linear on the
mesh, which is what makes the kernels in :mod:`plapwave.kernels` exact.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import kernels
from .errors import InvalidArgument, NumericalFailure, UnsupportedOperation

DEFAULT_QUAD_ORDER = 8


class BasisKind(str, enum.Enum):
    FEM_HAT = "FEM_HAT"
    ROBIN_EIGEN = "ROBIN_EIGEN"


def required_quad_order(p):
    """Smallest Gauss order that resolves the p-integrands on one element."""
    return int(math.ceil((p + 2.0) / 2.0))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Partition of [0, 1] with a per-element Gauss-Legendre rule."""

    node_coords: np.ndarray
    quad_order: int = DEFAULT_QUAD_ORDER
    quad_points: np.ndarray = field(init=False, repr=False)
    quad_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.node_coords, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise InvalidArgument("mesh needs at least two nodes")
        if x[0] != 0.0 or x[-1] != 1.0:
            raise InvalidArgument("mesh must start at 0 and end at 1")
        if np.any(np.diff(x) <= 0.0):
            raise InvalidArgument("node coordinates must be strictly increasing")
        if self.quad_order < 1:
            raise InvalidArgument("quad_order must be a positive integer")
        x.setflags(write=False)
        object.__setattr__(self, "node_coords", x)
        xi, wi = np.polynomial.legendre.leggauss(self.quad_order)
        h = np.diff(x)
        qp = x[:-1, None] + 0.5 * h[:, None] * (xi[None, :] + 1.0)
        qw = 0.5 * h[:, None] * wi[None, :]
        qp.setflags(write=False)
        qw.setflags(write=False)
        object.__setattr__(self, "quad_points", qp)
        object.__setattr__(self, "quad_weights", qw)

    @property
    def n_elements(self):
        return self.node_coords.size - 1

    @property
    def n_nodes(self):
        return self.node_coords.size

    @property
    def h(self):
        return np.diff(self.node_coords)

    def integrate(self, g):
        """Gauss quadrature of a vectorized callable over (0, 1)."""
        return float(np.sum(self.quad_weights * g(self.quad_points)))


def build_mesh(n_elements, quad_order=DEFAULT_QUAD_ORDER):
    if int(n_elements) != n_elements or n_elements < 1:
        raise InvalidArgument(f"n_elements must be a positive integer, got {n_elements!r}")
    if int(quad_order) != quad_order or quad_order < 1:
        raise InvalidArgument(f"quad_order must be a positive integer, got {quad_order!r}")
    return Mesh(np.linspace(0.0, 1.0, int(n_elements) + 1), int(quad_order))


def _fem_matrices(mesh):
    h = mesh.h
    n = mesh.n_nodes
    mass = np.zeros((n, n))
    stiff = np.zeros((n, n))
    idx = np.arange(n - 1)
    # element matrices: h/6 [[2,1],[1,2]] and 1/h [[1,-1],[-1,1]]
    np.add.at(mass, (idx, idx), h / 3.0)
    np.add.at(mass, (idx + 1, idx + 1), h / 3.0)
    mass[idx, idx + 1] = h / 6.0
    mass[idx + 1, idx] = h / 6.0
    np.add.at(stiff, (idx, idx), 1.0 / h)
    np.add.at(stiff, (idx + 1, idx + 1), 1.0 / h)
    stiff[idx, idx + 1] = -1.0 / h
    stiff[idx + 1, idx] = -1.0 / h
    bmass = np.zeros((n, n))
    bmass[0, 0] = 1.0
    bmass[-1, -1] = 1.0
    return mass, stiff, bmass


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Galerkin basis with its mass, stiffness and boundary-mass matrices.

    ``modes`` holds the nodal values of each basis function (one column per
    function) for ``ROBIN_EIGEN``; it is ``None`` for hat functions, whose
    coefficients already are nodal values.
    """

    kind: BasisKind
    mesh: Mesh
    mass: np.ndarray
    stiffness: np.ndarray
    boundary_mass: np.ndarray
    modes: Optional[np.ndarray] = None
    eigvals: Optional[np.ndarray] = None

    @property
    def N(self):
        return self.mass.shape[0]

    @property
    def is_fem(self):
        return self.kind == BasisKind.FEM_HAT

    @property
    def damping(self):
        return self.stiffness + self.boundary_mass

    def nodal(self, c):
        """Nodal values on the mesh of the field with coefficients ``c``."""
        c = np.asarray(c, dtype=float)
        if self.modes is None:
            return c
        return self.modes @ c

    def to_dual(self, r_nodal):
        """Map a nodal load vector to the basis: entries (., w_j)."""
        if self.modes is None:
            return r_nodal
        return self.modes.T @ r_nodal

    def boundary_values(self):
        """Array of shape (2, N): w_j(0) and w_j(1)."""
        if self.modes is None:
            out = np.zeros((2, self.N))
            out[0, 0] = 1.0
            out[1, -1] = 1.0
            return out
        return self.modes[[0, -1], :]

    def to_dict(self):
        """JSON-ready description: node coordinates, matrix triplets, eigvals."""

        def triplets(a):
            i, j = np.nonzero(a)
            return {"shape": list(a.shape), "row": i.tolist(), "col": j.tolist(),
                    "val": a[i, j].tolist()}

        doc = {
            "kind": self.kind.value,
            "node_coords": self.mesh.node_coords.tolist(),
            "quad_order": self.mesh.quad_order,
            "N": self.N,
            "mass": triplets(self.mass),
            "stiffness": triplets(self.stiffness),
            "boundary_mass": triplets(self.boundary_mass),
            "eigvals": None if self.eigvals is None else self.eigvals.tolist(),
        }
        if self.modes is not None:
            doc["modes"] = self.modes.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc):
        def dense(t):
            a = np.zeros(t["shape"])
            a[t["row"], t["col"]] = t["val"]
            return a

        mesh = Mesh(np.asarray(doc["node_coords"], dtype=float), int(doc["quad_order"]))
        modes = doc.get("modes")
        eig = doc.get("eigvals")
        return cls(
            kind=BasisKind(doc["kind"]),
            mesh=mesh,
            mass=dense(doc["mass"]),
            stiffness=dense(doc["stiffness"]),
            boundary_mass=dense(doc["boundary_mass"]),
            modes=None if modes is None else np.asarray(modes, dtype=float),
            eigvals=None if eig is None else np.asarray(eig, dtype=float),
        )


@dataclass(frozen=True, eq=False)
class FieldCoeffs:
    """Coefficient vector of a field expanded in ``basis``."""

    coeffs: np.ndarray
    basis: BasisSet

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.basis.N,):
            raise InvalidArgument(
                f"coefficient length {c.shape} does not match basis dimension {self.basis.N}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def nodal(self):
        return self.basis.nodal(self.coeffs)

    def __add__(self, other):
        _same_basis(self, other)
        return FieldCoeffs(self.coeffs + other.coeffs, self.basis)

    def __sub__(self, other):
        _same_basis(self, other)
        return FieldCoeffs(self.coeffs - other.coeffs, self.basis)

    def __mul__(self, alpha):
        return FieldCoeffs(alpha * self.coeffs, self.basis)

    __rmul__ = __mul__


def _same_basis(*fields):
    b = fields[0].basis
    for f in fields[1:]:
        if f.basis is not b:
            raise InvalidArgument("fields are expanded in different bases")
    return b


def build_fem_basis(mesh):
    mass, stiff, bmass = _fem_matrices(mesh)
    return BasisSet(BasisKind.FEM_HAT, mesh, mass, stiff, bmass)


def build_robin_eigenbasis(mesh, count):
    """Lowest ``count`` discrete Robin eigenpairs, mass-orthonormalized."""
    n = mesh.n_nodes
    if int(count) != count or count < 1:
        raise InvalidArgument(f"count must be a positive integer, got {count!r}")
    if count > n:
        raise InvalidArgument(f"count={count} exceeds the FEM dimension {n}")
    mass, stiff, bmass = _fem_matrices(mesh)
    try:
        lam, vec = scipy.linalg.eigh(stiff + bmass, mass, subset_by_index=[0, int(count) - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure("generalized eigensolver failed",
                               {"count": count, "n_nodes": n, "error": str(exc)}) from exc
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0.0):
        raise NumericalFailure("non-positive or non-finite Robin eigenvalue",
                               {"eigvals": lam.tolist()})
    if np.any(np.diff(lam) <= 0.0):
        raise NumericalFailure("Robin eigenvalues are not simple", {"eigvals": lam.tolist()})
    # deterministic sign: positive value at x = 0
    sgn = np.where(vec[0, :] < 0.0, -1.0, 1.0)
    vec = vec * sgn
    return BasisSet(
        kind=BasisKind.ROBIN_EIGEN,
        mesh=mesh,
        mass=vec.T @ mass @ vec,
        stiffness=vec.T @ stiff @ vec,
        boundary_mass=vec.T @ bmass @ vec,
        modes=vec,
        eigvals=lam,
    )


def _hat_values(mesh):
    # values of the two local hats at every quadrature point: shape (ne, q, 2)
    x0 = mesh.node_coords[:-1, None]
    t = (mesh.quad_points - x0) / mesh.h[:, None]
    return np.stack([1.0 - t, t], axis=-1)


def load_vector(basis, g):
    """Entries int g w_j dx by element quadrature."""
    mesh = basis.mesh
    gq = np.asarray(g(mesh.quad_points), dtype=float) * np.ones_like(mesh.quad_points)
    phi = _hat_values(mesh)
    loc = np.einsum("eq,eqa->ea", mesh.quad_weights * gq, phi)
    nodal = np.zeros(mesh.n_nodes)
    nodal[:-1] += loc[:, 0]
    nodal[1:] += loc[:, 1]
    return basis.to_dual(nodal)


def project_L2(basis, g: Callable) -> FieldCoeffs:
    """L2-orthogonal projection of ``g`` onto the span of the basis."""
    rhs = load_vector(basis, g)
    c = scipy.linalg.cho_solve(scipy.linalg.cho_factor(basis.mass), rhs)
    return FieldCoeffs(c, basis)


def interpolate(basis, g: Callable) -> FieldCoeffs:
    """Nodal interpolant (hat basis only)."""
    if not basis.is_fem:
        raise UnsupportedOperation("interpolation is only defined for FEM_HAT; use project_L2")
    vals = np.asarray(g(basis.mesh.node_coords), dtype=float) * np.ones(basis.mesh.n_nodes)
    return FieldCoeffs(vals, basis)


def zero_field(basis):
    return FieldCoeffs(np.zeros(basis.N), basis)


def norm_w1p(u: FieldCoeffs, p) -> float:
    """(int |u'|^p + |u(0)|^p + |u(1)|^p)^(1/p)."""
    if p < 1:
        raise InvalidArgument(f"p must be >= 1, got {p}")
    U = u.nodal
    return kernels.plap_energy(U, u.basis.mesh.h, float(p)) ** (1.0 / p)


def norm_l2(u: FieldCoeffs) -> float:
    mesh = u.basis.mesh
    U = u.nodal
    phi = _hat_values(mesh)
    uq = phi[..., 0] * U[:-1, None] + phi[..., 1] * U[1:, None]
    return math.sqrt(float(np.sum(mesh.quad_weights * uq**2)))


def boundary_lq(u: FieldCoeffs, q) -> float:
    """(|u(0)|^q + |u(1)|^q)^(1/q)."""
    if q < 1:
        raise InvalidArgument(f"q must be >= 1, got {q}")
    U = u.nodal
    return (abs(U[0]) ** q + abs(U[-1]) ** q) ** (1.0 / q)


def _check_points(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0) or np.any(~np.isfinite(x)):
        raise InvalidArgument("evaluation points must lie in [0, 1]")
    return x


def eval(u: FieldCoeffs, x):
    x = _check_points(x)
    out = np.interp(x, u.basis.mesh.node_coords, u.nodal)
    return float(out) if out.ndim == 0 else out


def eval_grad(u: FieldCoeffs, x):
    """Derivative at ``x``; at interior nodes the right element is used."""
    x = _check_points(x)
    mesh = u.basis.mesh
    e = np.clip(np.searchsorted(mesh.node_coords, x, side="right") - 1, 0, mesh.n_elements - 1)
    g = np.diff(u.nodal) / mesh.h
    out = g[e]
    return float(out) if np.ndim(out) == 0 else out
