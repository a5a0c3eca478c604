"""Time integration of the Galerkin system and its energy audits.

The semidiscrete system in coefficient space is

    M u'' + P(u) + D u' = S(u),

with ``M`` the mass matrix, ``P`` the Robin p-Laplacian action, ``D`` the
damping matrix (stiffness + boundary mass) and ``S`` the boundary source
vector.  It is integrated in first-order form ``(u, v)`` either by the
implicit midpoint rule (Newton on the velocity update) or by classical RK4.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg

from . import kernels
from .errors import InvalidArgument
from .geometry import BasisSet, FieldCoeffs, required_quad_order
from .sources import (
    NO_TRUNCATION,
    ZERO_SOURCE,
    BoundarySource,
    F_primitive,
    SourceSpec,
    TruncationSpec,
    ValidationMode,
    f_eval,
    lipschitz_probe,
)

ENERGY_COLUMNS = ("t", "kinetic", "potential", "script_E", "E", "dissipation_cum",
                  "work_cum", "balance_residual")


class Scheme(str, enum.Enum):
    IMPLICIT_MIDPOINT = "IMPLICIT_MIDPOINT"
    EXPLICIT_RK4 = "EXPLICIT_RK4"


class Termination(str, enum.Enum):
    COMPLETED = "COMPLETED"
    BLOWUP_DETECTED = "BLOWUP_DETECTED"
    NEWTON_FAILURE = "NEWTON_FAILURE"


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    p: float
    basis: BasisSet
    u0: FieldCoeffs
    u1: FieldCoeffs
    T: float
    dt: float
    src: SourceSpec = ZERO_SOURCE
    trunc: TruncationSpec = NO_TRUNCATION
    scheme: Scheme = Scheme.IMPLICIT_MIDPOINT
    newton_tol: float = 1e-12
    newton_max_iter: int = 30
    blowup_threshold: float = 1e12
    validation: ValidationMode = ValidationMode.STRICT

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "validation", ValidationMode(self.validation))
        if not self.dt > 0:
            raise InvalidArgument(f"dt must be positive, got {self.dt}")
        if not self.T >= self.dt:
            raise InvalidArgument(f"horizon T={self.T} is shorter than dt={self.dt}")
        if not self.newton_tol > 0:
            raise InvalidArgument("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise InvalidArgument("newton_max_iter must be >= 1")
        if not self.blowup_threshold > 0:
            raise InvalidArgument("blowup_threshold must be positive")
        if self.validation == ValidationMode.STRICT and not self.p > 2.0:
            raise InvalidArgument(f"strict validation requires p > 2, got p={self.p}")
        if not self.p >= 2.0:
            raise InvalidArgument(f"the solver requires p >= 2, got p={self.p}")
        if self.basis.mesh.quad_order < required_quad_order(self.p):
            raise InvalidArgument(
                f"quad_order {self.basis.mesh.quad_order} < {required_quad_order(self.p)} "
                f"required for p={self.p}")
        for name in ("u0", "u1"):
            if getattr(self, name).basis is not self.basis:
                raise InvalidArgument(f"{name} is not expanded in the problem basis")

    def replace(self, **changes):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return ProblemSpec(**d)

    def to_dict(self):
        b = self.basis
        return {
            "p": self.p,
            "basis": {"kind": b.kind.value, "N": b.N, "n_elements": b.mesh.n_elements,
                      "quad_order": b.mesh.quad_order},
            "source": self.src.to_dict(),
            "truncation": self.trunc.to_dict(),
            "u0": self.u0.coeffs.tolist(),
            "u1": self.u1.coeffs.tolist(),
            "T": self.T,
            "dt": self.dt,
            "scheme": self.scheme.value,
            "newton_tol": self.newton_tol,
            "newton_max_iter": self.newton_max_iter,
            "blowup_threshold": self.blowup_threshold,
            "validation": self.validation.value,
        }


@dataclass(frozen=True, eq=False)
class State:
    t: float
    u: FieldCoeffs
    v: FieldCoeffs


@dataclass(frozen=True)
class EnergyRecord:
    t: float
    kinetic: float
    potential: float
    script_E: float
    E: float
    dissipation_cum: float
    work_cum: float
    balance_residual: float


@dataclass(eq=False)
class Trajectory:
    """Stored times, coefficients and energy columns of one integration."""

    problem: ProblemSpec
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    energy: dict
    termination: Termination
    newton_iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    message: str = ""

    @property
    def states(self):
        b = self.problem.basis
        return [State(float(t), FieldCoeffs(u, b), FieldCoeffs(v, b))
                for t, u, v in zip(self.t, self.u, self.v)]

    @property
    def records(self):
        cols = [self.energy[c] for c in ENERGY_COLUMNS[1:]]
        return [EnergyRecord(float(t), *map(float, row)) for t, *row in zip(self.t, *cols)]

    def __len__(self):
        return len(self.t)

    def field_at(self, k):
        return FieldCoeffs(self.u[k], self.problem.basis)

    def velocity_at(self, k):
        return FieldCoeffs(self.v[k], self.problem.basis)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter=",", lineterminator="\n")
            w.writerow(ENERGY_COLUMNS)
            cols = [self.t] + [self.energy[c] for c in ENERGY_COLUMNS[1:]]
            for row in zip(*cols):
                w.writerow([repr(float(x)) for x in row])

    def sidecar(self, validation_flags=None):
        return {
            "problem": self.problem.to_dict(),
            "validation": validation_flags,
            "termination": self.termination.value,
            "message": self.message,
            "steps": len(self.t) - 1,
            "t_final": float(self.t[-1]),
        }


class _System:
    """Matrices and closures shared by the steppers of one problem."""

    def __init__(self, problem: ProblemSpec):
        b = problem.basis
        self.problem = problem
        self.basis = b
        self.p = float(problem.p)
        self.h = b.mesh.h
        self.M = b.mass
        self.D = b.damping
        self.M_cho = scipy.linalg.cho_factor(self.M)
        self.modes = b.modes
        self.G = None if b.modes is None else np.diff(b.modes, axis=0)
        self.B = b.boundary_values()
        self.source = BoundarySource(b, problem.src, problem.trunc, self.p)

    def nodal(self, c):
        return c if self.modes is None else self.modes @ c

    def P(self, c):
        r = kernels.plap_residual(self.nodal(c), self.h, self.p)
        return r if self.modes is None else self.modes.T @ r

    def P_and_J(self, c):
        U = self.nodal(c)
        r, diag, off = kernels.plap_residual_tangent(U, self.h, self.p)
        if self.modes is None:
            J = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
            return r, J
        k = -off
        bd0 = diag[0] - k[0]
        bd1 = diag[-1] - k[-1]
        J = (self.G.T * k) @ self.G
        J += bd0 * np.outer(self.B[0], self.B[0]) + bd1 * np.outer(self.B[1], self.B[1])
        return self.modes.T @ r, J

    def S(self, c):
        return self.source.vector(c)

    def accel(self, u, v):
        rhs = -self.P(u) - self.D @ v + self.S(u)
        return scipy.linalg.cho_solve(self.M_cho, rhs)

    def potential(self, c):
        return kernels.plap_energy(self.nodal(c), self.h, self.p) / self.p

    def energies(self, u, v):
        U = self.nodal(u)
        kin = 0.5 * float(v @ self.M @ v)
        pot = kernels.plap_energy(U, self.h, self.p) / self.p
        Fb = float(np.sum(F_primitive(self.problem.src, np.array([U[0], U[-1]]))))
        diss = float(v @ self.D @ v)
        work = float(self.S(u) @ v)
        return kin, pot, Fb, diss, work


class NewtonFailure(Exception):
    def __init__(self, iterations, residual):
        super().__init__(f"Newton did not converge in {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


def _midpoint(sys: _System, u0, v0, dt, tol, max_iter):
    M, D = sys.M, sys.D
    src_active = not sys.source.inactive
    v1 = v0 + dt * sys.accel(u0, v0)
    if not np.all(np.isfinite(v1)):
        v1 = v0.copy()
    res = math.inf
    for it in range(1, max_iter + 1):
        vm = 0.5 * (v0 + v1)
        um = u0 + 0.5 * dt * vm
        Pm, JP = sys.P_and_J(um)
        R = M @ (v1 - v0) + dt * (Pm + D @ vm)
        J = M + dt * (0.25 * dt * JP + 0.5 * D)
        if src_active:
            R -= dt * sys.S(um)
            J -= 0.25 * dt * dt * sys.source.jacobian(um)
        res = float(np.max(np.abs(R)))
        if not math.isfinite(res):
            break
        if res < tol:
            return u0 + dt * vm, v1, it
        delta = np.linalg.solve(J, -R)
        v1 = v1 + delta
        # step at roundoff level: the residual cannot be reduced further
        if np.max(np.abs(delta)) <= 8.0 * np.finfo(float).eps * (1.0 + np.max(np.abs(v1))):
            vm = 0.5 * (v0 + v1)
            return u0 + dt * vm, v1, it
    raise NewtonFailure(max_iter, res)


def _rk4(sys: _System, u, v, dt):
    k1u, k1v = v, sys.accel(u, v)
    k2u = v + 0.5 * dt * k1v
    k2v = sys.accel(u + 0.5 * dt * k1u, k2u)
    k3u = v + 0.5 * dt * k2v
    k3v = sys.accel(u + 0.5 * dt * k2u, k3u)
    k4u = v + dt * k3v
    k4v = sys.accel(u + dt * k3u, k4u)
    u1 = u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
    v1 = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return u1, v1


def rhs(problem: ProblemSpec, state: State) -> np.ndarray:
    """Acceleration coefficients solving M a = -P(u) - D v + S(u)."""
    if state.u.basis is not problem.basis or state.v.basis is not problem.basis:
        raise InvalidArgument("state is not expanded in the problem basis")
    return _System(problem).accel(state.u.coeffs, state.v.coeffs)


def step_implicit_midpoint(problem: ProblemSpec, state: State, dt=None) -> State:
    """One implicit midpoint step; raises :class:`NewtonFailure` on divergence."""
    dt = problem.dt if dt is None else dt
    sys = _System(problem)
    u1, v1, _ = _midpoint(sys, state.u.coeffs, state.v.coeffs, dt,
                          problem.newton_tol, problem.newton_max_iter)
    b = problem.basis
    return State(state.t + dt, FieldCoeffs(u1, b), FieldCoeffs(v1, b))


def step_rk4(problem: ProblemSpec, state: State, dt=None) -> State:
    dt = problem.dt if dt is None else dt
    u1, v1 = _rk4(_System(problem), state.u.coeffs, state.v.coeffs, dt)
    b = problem.basis
    return State(state.t + dt, FieldCoeffs(u1, b), FieldCoeffs(v1, b))


def _time_grid(T, dt):
    n = int(math.ceil(T / dt - 1e-9))
    t = dt * np.arange(n + 1)
    t[-1] = T
    return t


def integrate(problem: ProblemSpec) -> Trajectory:
    """Integrate to ``problem.T``, recording energies after every step.

    Dissipation and boundary work are accumulated with the trapezoidal
    rule, and ``balance_residual = E(t) + dissipation - E(0) - work`` in terms
    of the unmodified energy ``script_E``.
    """
    sys = _System(problem)
    grid = _time_grid(problem.T, problem.dt)
    n = len(grid) - 1
    N = problem.basis.N
    us = np.empty((n + 1, N))
    vs = np.empty((n + 1, N))
    cols = {c: np.empty(n + 1) for c in ENERGY_COLUMNS[1:]}
    iters = np.zeros(n, dtype=int)

    u = problem.u0.coeffs.copy()
    v = problem.u1.coeffs.copy()
    us[0], vs[0] = u, v
    kin, pot, Fb, diss, work = sys.energies(u, v)
    e0 = kin + pot
    diss_cum = work_cum = 0.0

    def store(k, kin, pot, Fb):
        cols["kinetic"][k] = kin
        cols["potential"][k] = pot
        cols["script_E"][k] = kin + pot
        cols["E"][k] = kin + pot - Fb
        cols["dissipation_cum"][k] = diss_cum
        cols["work_cum"][k] = work_cum
        cols["balance_residual"][k] = kin + pot + diss_cum - e0 - work_cum

    store(0, kin, pot, Fb)
    termination = Termination.COMPLETED
    message = ""
    last = 0
    if not (math.isfinite(e0) and e0 <= problem.blowup_threshold):
        termination = Termination.BLOWUP_DETECTED
        message = "initial energy exceeds the blow-up threshold"
    else:
        for k in range(n):
            dt = grid[k + 1] - grid[k]
            try:
                if problem.scheme == Scheme.IMPLICIT_MIDPOINT:
                    u1, v1, iters[k] = _midpoint(sys, u, v, dt, problem.newton_tol,
                                                 problem.newton_max_iter)
                else:
                    with np.errstate(all="ignore"):
                        u1, v1 = _rk4(sys, u, v, dt)
            except NewtonFailure as exc:
                termination = Termination.NEWTON_FAILURE
                message = f"t={grid[k]:.6g}: {exc}"
                break
            except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
                termination = Termination.NEWTON_FAILURE
                message = f"t={grid[k]:.6g}: {exc}"
                break
            with np.errstate(all="ignore"):
                kin1, pot1, Fb1, diss1, work1 = sys.energies(u1, v1)
            diss_cum += 0.5 * dt * (diss + diss1)
            work_cum += 0.5 * dt * (work + work1)
            u, v = u1, v1
            diss, work = diss1, work1
            us[k + 1], vs[k + 1] = u, v
            store(k + 1, kin1, pot1, Fb1)
            last = k + 1
            monitor = kin1 + pot1 + diss_cum
            if not math.isfinite(monitor) or not np.all(np.isfinite(u)) \
                    or monitor > problem.blowup_threshold:
                termination = Termination.BLOWUP_DETECTED
                message = f"energy monitor {monitor:.6g} at t={grid[k + 1]:.6g}"
                break
    m = last + 1
    return Trajectory(problem, grid[:m].copy(), us[:m].copy(), vs[:m].copy(),
                      {c: a[:m].copy() for c, a in cols.items()}, termination,
                      iters[:last].copy(), message)


def _trapz(values, t):
    if len(t) < 2:
        return 0.0
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(t)))


def weak_form_residual(traj: Trajectory, phi, phi_t, upto=None) -> float:
    """LHS - RHS of the integrated weak-solution identity at ``t[upto]``.

    ``phi`` and ``phi_t`` are arrays of coefficients (one row per stored
    time) of the test field and its time derivative.  Time integrals use
    the trapezoidal rule on the stored grid.
    """
    phi = np.asarray(phi, dtype=float)
    phi_t = np.asarray(phi_t, dtype=float)
    shape = traj.u.shape
    if phi.shape != shape or phi_t.shape != shape:
        raise InvalidArgument(f"test field arrays must have shape {shape}, "
                              f"got {phi.shape} and {phi_t.shape}")
    k = len(traj.t) - 1 if upto is None else int(upto)
    sys = _System(traj.problem)
    M, D = sys.M, sys.D
    t = traj.t[: k + 1]
    u, v = traj.u[: k + 1], traj.v[: k + 1]
    ph, pht = phi[: k + 1], phi_t[: k + 1]
    inertia = np.einsum("ki,ij,kj->k", v, M, pht)
    elastic = np.array([sys.P(uk) @ pk for uk, pk in zip(u, ph)])
    damping = np.einsum("ki,ij,kj->k", v, D, ph)
    source = np.array([sys.S(uk) @ pk for uk, pk in zip(u, ph)])
    lhs = (v[k] @ M @ ph[k] - v[0] @ M @ ph[0] - _trapz(inertia, t)
           + _trapz(elastic, t) + _trapz(damping, t))
    return float(lhs - _trapz(source, t))


# -- existence horizon and global bounds -----------------------------------

@dataclass
class HorizonEstimate:
    K: float
    T0: float
    C_K: float
    branch: str

    def to_dict(self):
        return {"K": self.K, "T0": self.T0, "C_K": self.C_K, "branch": self.branch}


def local_horizon_estimate(p, script_E0, C_K: Union[float, Callable[[float], float]]):
    """Radius ``K = 2^m`` and horizon ``T0`` on which the energy stays below K^p/p.

    ``K`` is the smallest power of two with ``K^(p/2) > sqrt(2p) E(0)`` and
    ``K^p > 2p``.  ``C_K`` may be a number or a callable evaluated at the
    chosen ``K`` (the source constant on the ball of radius K).
    """
    if script_E0 < 0:
        raise InvalidArgument("initial energy must be non-negative")
    s = math.sqrt(2.0 * p)
    m = 0
    while True:
        K = 2.0**m
        if K ** (p / 2.0) > s * script_E0 and K**p > 2.0 * p:
            break
        m += 1
    c = float(C_K(K)) if callable(C_K) else float(C_K)
    if not c > 0:
        raise InvalidArgument("C_K must be positive")
    t1 = (K ** (p / 2.0) - s * script_E0) / (s * c)
    t2 = (p * math.log(K) - math.log(2.0 * p)) / (2.0 * p * c)
    return HorizonEstimate(K, min(t1, t2), c, "energy" if t1 <= t2 else "exponential")


def horizon_source_constant(local_lipschitz, f0=0.0):
    """Constant in  int f_K(u) u' <= C_K (1 + p E) + 1/2 ||u'||^2_{1,2}.

    On (0, 1): |v|_4 <= |v|_2 <= ||v||_{1,2}; the truncated source is globally
    Lipschitz with constant L = 2 * local_lipschitz into L^{4/3} of the
    boundary; |f_K(u)|_{4/3} <= |f(0)|_{4/3} + L ||u||; and ||u||^2 <= 1 + ||u||^p
    for p > 2.  Young's inequality then gives C_K = |f(0)|_{4/3}^2 + L^2.
    """
    L = 2.0 * float(local_lipschitz)
    f0_norm = (2.0 * abs(f0) ** (4.0 / 3.0)) ** 0.75
    return f0_norm**2 + L**2


def empirical_horizon_constant(src, p, samples=2000, rng=None):
    """Callable K -> C_K built on the sampled local Lipschitz constant."""
    def C(K):
        rep = lipschitz_probe(src, NO_TRUNCATION, K, samples, p, 4.0 / 3.0, rng=rng)
        return max(horizon_source_constant(rep.empirical_constant, f_eval(src, 0.0)), 1e-300)

    return C


def global_source_constant(src: SourceSpec, p):
    """Gronwall constant for sources with r <= p/2.

    With |f(s)| <= C_f (|s|^r + 1) and 2r <= p:  int f(u) u' <= 1/2 |f(u)|_2^2
    + 1/2 ||u'||^2_{1,2}, and 1/2 |f(u)|_2^2 <= C_f^2 (4 + |u|_p^p)
    <= C_f^2 max(4, p) (1 + E).
    """
    return src.growth_constant**2 * max(4.0, float(p))


def gronwall_envelope(script_E0, C, t):
    """(E(0) + C t) exp(C t)."""
    if C < 0:
        raise InvalidArgument("C must be non-negative")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidArgument("t must be non-negative")
    out = (script_E0 + C * t) * np.exp(C * t)
    return float(out) if out.ndim == 0 else out


@dataclass
class BlowupReport:
    flagged: bool
    t_flag: Optional[float]

    def to_dict(self):
        return {"flagged": self.flagged, "t_flag": self.t_flag}


def blowup_monitor(traj: Trajectory, threshold) -> BlowupReport:
    """First time E(t) + int ||u'||^2 exceeds ``threshold`` or is not finite."""
    if not threshold > 0:
        raise InvalidArgument("threshold must be positive")
    mon = traj.energy["script_E"] + traj.energy["dissipation_cum"]
    bad = ~np.isfinite(mon) | (mon > threshold)
    if traj.termination == Termination.BLOWUP_DETECTED and not bad.any():
        return BlowupReport(True, float(traj.t[-1]))
    if bad.any():
        return BlowupReport(True, float(traj.t[int(np.argmax(bad))]))
    return BlowupReport(False, None)
