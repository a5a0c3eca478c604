"""Boundary source terms, their truncations, and empirical Lipschitz probes.

A source ``f`` acts on boundary traces only, so on (0, 1) it is evaluated at
``u(0)`` and ``u(1)``.  Two truncations make a locally Lipschitz source
globally Lipschitz:

* radial retraction: ``f(K u / ||u||)`` once ``||u||_{1,p}`` exceeds ``K``;
* smooth cutoff: ``f(s) * eta_n(s)`` with ``eta_n`` a quintic smoothstep
  bridge from 1 on ``|s| <= n`` to 0 on ``|s| >= 2n``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import InvalidArgument
from .geometry import BasisSet, FieldCoeffs, build_fem_basis, build_mesh

# sup |d/dt (1 - (6t^5 - 15t^4 + 10t^3))| = 30 t^2 (1-t)^2 at t = 1/2
ETA_SLOPE = 15.0 / 8.0


class SourceKind(str, enum.Enum):
    POWER = "POWER"
    POWER_PLUS_LINEAR = "POWER_PLUS_LINEAR"
    CUSTOM = "CUSTOM"


class TruncationMode(str, enum.Enum):
    NONE = "NONE"
    RADIAL_K = "RADIAL_K"
    CUTOFF_N = "CUTOFF_N"


@dataclass(frozen=True)
class SourceSpec:
    """``f(s) = a |s|^(r-1) s + b s`` for the power kinds.

    ``CUSTOM`` sources must provide ``func``, ``deriv`` and ``primitive``
    (vectorized callables with ``primitive(0) == 0``) and the constant
    ``growth_c`` in ``|f(s)| <= C (|s|^r + 1)``.
    """

    kind: SourceKind = SourceKind.POWER
    r: float = 1.0
    a: float = 0.0
    b: float = 0.0
    func: Optional[Callable] = field(default=None, compare=False)
    deriv: Optional[Callable] = field(default=None, compare=False)
    primitive: Optional[Callable] = field(default=None, compare=False)
    growth_c: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SourceKind(self.kind))
        if not self.r >= 1.0:
            raise InvalidArgument(f"growth exponent r must be >= 1, got {self.r}")
        if self.kind == SourceKind.CUSTOM:
            missing = [n for n in ("func", "deriv", "primitive") if getattr(self, n) is None]
            if missing:
                raise InvalidArgument(f"CUSTOM source is missing {', '.join(missing)}")
            if self.growth_c is None:
                raise InvalidArgument("CUSTOM source needs growth_c")

    @property
    def derivative_constant(self):
        """Tightest C with |f'(s)| <= C (|s|^(r-1) + 1), power kinds."""
        self._power_only()
        if self.r == 1.0:
            return abs(self.a + self.b) / 2.0
        # |a r t + b| / (t + 1) is monotone in t = |s|^(r-1) >= 0
        return max(abs(self.a) * self.r, abs(self.b))

    @property
    def growth_constant(self):
        """A constant C with |f(s)| <= C (|s|^r + 1)."""
        if self.kind == SourceKind.CUSTOM:
            return float(self.growth_c)
        # |s| <= |s|^r + 1 for r >= 1
        return abs(self.a) + abs(self.b)

    def max_abs_derivative(self, K):
        """max |f'(s)| over |s| <= K (power kinds)."""
        self._power_only()
        return max(abs(self.a * self.r * K ** (self.r - 1.0) + self.b), abs(self.b))

    def _power_only(self):
        if self.kind == SourceKind.CUSTOM:
            raise InvalidArgument("analytic constants are only available for power sources")

    def to_dict(self):
        if self.kind == SourceKind.CUSTOM:
            raise InvalidArgument("CUSTOM sources are not serializable")
        return {"kind": self.kind.value, "r": self.r, "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=SourceKind(str(d.get("kind", "POWER")).upper()), r=float(d.get("r", 1.0)),
                   a=float(d.get("a", 0.0)), b=float(d.get("b", 0.0)))


ZERO_SOURCE = SourceSpec(SourceKind.POWER, r=1.0, a=0.0, b=0.0)


@dataclass(frozen=True)
class TruncationSpec:
    mode: TruncationMode = TruncationMode.NONE
    K: Optional[float] = None
    n: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", TruncationMode(self.mode))
        if self.mode == TruncationMode.RADIAL_K and not (self.K is not None and self.K > 0):
            raise InvalidArgument("RADIAL_K truncation needs K > 0")
        if self.mode == TruncationMode.CUTOFF_N and not (self.n is not None and self.n >= 1):
            raise InvalidArgument("CUTOFF_N truncation needs n >= 1")

    def to_dict(self):
        return {"mode": self.mode.value, "K": self.K, "n": self.n}

    @classmethod
    def from_dict(cls, d):
        return cls(mode=TruncationMode(str(d.get("mode", "NONE")).upper()), K=d.get("K"), n=d.get("n"))


NO_TRUNCATION = TruncationSpec()


# -- pointwise source evaluation -------------------------------------------

def f_eval(src: SourceSpec, s):
    if src.kind == SourceKind.CUSTOM:
        return src.func(s)
    s = np.asarray(s, dtype=float)
    out = src.a * np.abs(s) ** (src.r - 1.0) * s + src.b * s
    return float(out) if out.ndim == 0 else out


def f_prime(src: SourceSpec, s):
    if src.kind == SourceKind.CUSTOM:
        return src.deriv(s)
    s = np.asarray(s, dtype=float)
    if src.r == 1.0:
        out = np.full_like(s, src.a + src.b)
    else:
        out = src.a * src.r * np.abs(s) ** (src.r - 1.0) + src.b
    return float(out) if out.ndim == 0 else out


def F_primitive(src: SourceSpec, s):
    """Antiderivative of f with F(0) = 0."""
    if src.kind == SourceKind.CUSTOM:
        return src.primitive(s)
    s = np.asarray(s, dtype=float)
    out = src.a / (src.r + 1.0) * np.abs(s) ** (src.r + 1.0) + 0.5 * src.b * s * s
    return float(out) if out.ndim == 0 else out


# -- smooth cutoff ---------------------------------------------------------

def _cutoff_n(spec):
    if spec.mode != TruncationMode.CUTOFF_N:
        raise InvalidArgument("cutoff evaluation needs a CUTOFF_N truncation spec")
    return float(spec.n)


def cutoff_eta(spec: TruncationSpec, s):
    n = _cutoff_n(spec)
    s = np.asarray(s, dtype=float)
    t = np.clip((np.abs(s) - n) / n, 0.0, 1.0)
    out = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
    return float(out) if out.ndim == 0 else out


def cutoff_eta_prime(spec: TruncationSpec, s):
    n = _cutoff_n(spec)
    s = np.asarray(s, dtype=float)
    t = np.clip((np.abs(s) - n) / n, 0.0, 1.0)
    out = -30.0 * t * t * (1.0 - t) ** 2 / n * np.sign(s)
    return float(out) if out.ndim == 0 else out


def f_n_eval(src: SourceSpec, spec: TruncationSpec, s):
    return f_eval(src, s) * cutoff_eta(spec, s)


def f_n_prime(src: SourceSpec, spec: TruncationSpec, s):
    return f_prime(src, s) * cutoff_eta(spec, s) + f_eval(src, s) * cutoff_eta_prime(spec, s)


# -- radial truncation -----------------------------------------------------

def _w1p_norm_nodal(U, basis, p):
    return kernels.plap_energy(U, basis.mesh.h, float(p)) ** (1.0 / p)


def truncate_radial(src: SourceSpec, K, u: FieldCoeffs, p) -> np.ndarray:
    """Source values at x = 0 and x = 1 under the radial retraction."""
    if not K > 0:
        raise InvalidArgument("K must be positive")
    U = u.nodal
    trace = np.array([U[0], U[-1]])
    nrm = _w1p_norm_nodal(U, u.basis, p)
    if nrm > K:
        trace = trace * (K / nrm)
    return np.asarray(f_eval(src, trace), dtype=float)


def boundary_values(src, spec, u: FieldCoeffs, p) -> np.ndarray:
    """g(0), g(1) for the selected truncation mode."""
    if spec.mode == TruncationMode.RADIAL_K:
        return truncate_radial(src, spec.K, u, p)
    U = u.nodal
    trace = np.array([U[0], U[-1]])
    if spec.mode == TruncationMode.CUTOFF_N:
        return np.asarray(f_n_eval(src, spec, trace), dtype=float)
    return np.asarray(f_eval(src, trace), dtype=float)


def boundary_source_vector(basis: BasisSet, src: SourceSpec, spec: TruncationSpec,
                           u: FieldCoeffs, p) -> np.ndarray:
    """Entries (g, w_j) on the boundary: g(0) w_j(0) + g(1) w_j(1)."""
    if u.basis is not basis:
        raise InvalidArgument("field is not expanded in the given basis")
    return boundary_values(src, spec, u, p) @ basis.boundary_values()


class BoundarySource:
    """Source term and its coefficient Jacobian, prepared for a solver."""

    def __init__(self, basis, src, spec, p):
        self.basis = basis
        self.src = src
        self.spec = spec
        self.p = float(p)
        self.W = basis.boundary_values()
        self.inactive = (src.kind != SourceKind.CUSTOM and src.a == 0.0 and src.b == 0.0)

    def values(self, c):
        if self.inactive:
            return np.zeros(2)
        U = self.basis.nodal(c)
        trace = np.array([U[0], U[-1]])
        mode = self.spec.mode
        if mode == TruncationMode.RADIAL_K:
            nrm = _w1p_norm_nodal(U, self.basis, self.p)
            if nrm > self.spec.K:
                trace = trace * (self.spec.K / nrm)
            return np.asarray(f_eval(self.src, trace), dtype=float)
        if mode == TruncationMode.CUTOFF_N:
            return np.asarray(f_n_eval(self.src, self.spec, trace), dtype=float)
        return np.asarray(f_eval(self.src, trace), dtype=float)

    def vector(self, c):
        return self.values(c) @ self.W

    def jacobian(self, c):
        N = self.basis.N
        if self.inactive:
            return np.zeros((N, N))
        U = self.basis.nodal(c)
        trace = np.array([U[0], U[-1]])
        mode = self.spec.mode
        if mode == TruncationMode.CUTOFF_N:
            d = np.asarray(f_n_prime(self.src, self.spec, trace), dtype=float)
            return self.W.T @ (d[:, None] * self.W)
        if mode == TruncationMode.RADIAL_K:
            h = self.basis.mesh.h
            nrm_p = kernels.plap_energy(U, h, self.p)
            nrm = nrm_p ** (1.0 / self.p)
            K = self.spec.K
            if nrm > K:
                s = trace * (K / nrm)
                d = np.asarray(f_prime(self.src, s), dtype=float)
                # d||u||/dc = P(u) / ||u||^(p-1)
                dnrm = self.basis.to_dual(kernels.plap_residual(U, h, self.p)) / nrm ** (self.p - 1.0)
                ds = (K / nrm) * self.W - np.outer(trace * K / nrm**2, dnrm)
                return self.W.T @ (d[:, None] * ds)
        d = np.asarray(f_prime(self.src, trace), dtype=float)
        return self.W.T @ (d[:, None] * self.W)


# -- Lipschitz probing -----------------------------------------------------

@dataclass
class LipschitzReport:
    empirical_constant: float
    max_ratio_pair: tuple
    samples: int
    radius: float

    def to_dict(self):
        u, v = self.max_ratio_pair
        return {"empirical_constant": self.empirical_constant,
                "max_ratio_pair": [list(map(float, u)), list(map(float, v))],
                "samples": self.samples, "radius": self.radius}


def default_probe_basis():
    """Single-element hat basis.

    The ratio depends on a field only through its two traces, and among all
    fields with given traces the linear one has the smallest W^{1,p} norm, so
    the supremum over W^{1,p} is attained on this two-dimensional space.
    """
    return build_fem_basis(build_mesh(1, 2))


def lipschitz_probe(src: SourceSpec, spec: TruncationSpec, R, samples, p, q_target=4.0 / 3.0,
                    basis: Optional[BasisSet] = None, rng=None) -> LipschitzReport:
    """Largest sampled |f(u) - f(v)|_{q,boundary} / ||u - v||_{1,p}.

    Pairs are drawn from the ball of radius ``R`` (for ``RADIAL_K`` from the
    ball of radius ``max(R, 4K)``, since that claim is global).  Half the
    budget goes to independent pairs, the rest to nearby pairs, first around
    random centers and then around the best pairs found so far.
    """
    if not R > 0:
        raise InvalidArgument("radius must be positive")
    if samples < 2:
        raise InvalidArgument("need at least 2 samples")
    if q_target < 1:
        raise InvalidArgument("q_target must be >= 1")
    rng = np.random.default_rng(rng)
    basis = basis or default_probe_basis()
    radius = float(R)
    if spec.mode == TruncationMode.RADIAL_K:
        radius = max(radius, 4.0 * spec.K)
    src_eval = BoundarySource(basis, src, spec, p)
    N = basis.N
    h = basis.mesh.h

    def norm(c):
        return kernels.plap_energy(basis.nodal(c), h, float(p)) ** (1.0 / p)

    def in_ball(count):
        d = rng.standard_normal((count, N))
        out = np.empty_like(d)
        for i in range(count):
            rad = radius * rng.random() ** (1.0 / N)
            out[i] = d[i] * (rad / norm(d[i]))
        return out

    def clip(c):
        n = norm(c)
        return c * (radius / n) if n > radius else c

    best = (0.0, np.zeros(N), np.zeros(N))
    ratios = []

    def score(cu, cv):
        nonlocal best
        dn = norm(cu - cv)
        if dn <= 0.0:
            return 0.0
        diff = src_eval.values(cu) - src_eval.values(cv)
        ratio = float(np.sum(np.abs(diff) ** q_target) ** (1.0 / q_target) / dn)
        if ratio > best[0]:
            best = (ratio, cu.copy(), cv.copy())
        ratios.append((ratio, cu, cv))
        return ratio

    n_far = samples // 2
    n_near = (samples - n_far) // 2
    n_refine = samples - n_far - n_near
    A, B = in_ball(n_far), in_ball(n_far)
    for cu, cv in zip(A, B):
        score(cu, cv)
    centers = in_ball(n_near)
    for cu in centers:
        step = radius * 10.0 ** rng.uniform(-6, -2)
        d = rng.standard_normal(N)
        score(cu, clip(cu + step * d / norm(d)))
    ratios.sort(key=lambda t: -t[0])
    seeds = ratios[: max(1, min(20, len(ratios)))]
    for k in range(n_refine):
        _, cu, cv = seeds[k % len(seeds)]
        mid = clip(0.5 * (cu + cv) + radius * 1e-3 * rng.standard_normal(N))
        step = radius * 10.0 ** rng.uniform(-7, -3)
        d = rng.standard_normal(N)
        score(mid, clip(mid + step * d / norm(d)))
    return LipschitzReport(best[0], (best[1], best[2]), samples, radius)


def analytic_local_lipschitz(src: SourceSpec, R, p, q_target=4.0 / 3.0):
    """Upper bound for the Lipschitz constant of f on the W^{1,p} ball of radius R.

    Each trace satisfies |u(x)| <= ||u||_{1,p}, the discrete norm comparison
    on two points gives |w|_q <= 2^(1/q - 1/p) |w|_p for q < p, and
    |w|_p <= ||w||_{1,p}.
    """
    factor = 2.0 ** max(0.0, 1.0 / q_target - 1.0 / p)
    return factor * src.max_abs_derivative(R)


# -- parameter regimes -----------------------------------------------------

class ValidationMode(str, enum.Enum):
    STRICT = "STRICT"
    PERMISSIVE = "PERMISSIVE"


ANCHOR_P_RANGE = "exponent range 2 < p < 3"
ANCHOR_GROWTH = "growth assumption 1 <= r < 4p/(3(3-p))"
ANCHOR_GLOBAL = "global regime r <= p/2"


def growth_bound(p):
    """Upper limit 4p/(3(3-p)) for r (infinite for p >= 3)."""
    return math.inf if p >= 3.0 else 4.0 * p / (3.0 * (3.0 - p))


@dataclass
class ParameterCheck:
    p: float
    r: float
    mode: ValidationMode
    accepted: bool
    p_in_range: bool
    growth_ok: bool
    global_regime: bool
    r_upper: float
    violations: list
    notes: list

    def to_dict(self):
        return {"p": self.p, "r": self.r, "mode": self.mode.value, "accepted": self.accepted,
                "p_in_range": self.p_in_range, "growth_ok": self.growth_ok,
                "global_regime": self.global_regime,
                "r_upper": None if math.isinf(self.r_upper) else self.r_upper,
                "violations": list(self.violations), "notes": list(self.notes)}


def validate_parameters(p, r, mode=ValidationMode.STRICT, require_global=False) -> ParameterCheck:
    """Classify (p, r).

    STRICT accepts exactly 2 < p < 3, 1 <= r < 4p/(3(3-p)), and additionally
    r <= p/2 when ``require_global``.  PERMISSIVE accepts any p >= 2, r >= 1 and
    records what the strict checks would have rejected.
    """
    mode = ValidationMode(mode)
    upper = growth_bound(p)
    p_ok = 2.0 < p < 3.0
    growth_ok = 1.0 <= r < upper
    glob = r <= p / 2.0
    violations = []
    if not p_ok:
        violations.append(f"{ANCHOR_P_RANGE}: p={p}")
    if not growth_ok:
        violations.append(f"{ANCHOR_GROWTH}: r={r}, bound={upper:.6g}")
    if require_global and not glob:
        violations.append(f"{ANCHOR_GLOBAL}: r={r}, p/2={p / 2.0:.6g}")
    notes = []
    if glob:
        notes.append(f"{ANCHOR_GLOBAL} holds (global existence regime)")
    if mode == ValidationMode.STRICT:
        accepted = not violations
    else:
        # p = 2 is the linear limit; kept for oracle runs
        accepted = p >= 2.0 and r >= 1.0
        if not accepted:
            violations.append(f"permissive mode requires p >= 2 and r >= 1: p={p}, r={r}")
    return ParameterCheck(p, r, mode, accepted, p_ok, growth_ok, glob, upper, violations, notes)
