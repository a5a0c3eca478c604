"""Batch experiments: config parsing, run orchestration and report emission."""

from __future__ import annotations

import copy
import datetime as _dt
import enum
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import operators as ops
from . import solver as sol
from . import sources as srcs
from .errors import ConfigError

SCHEMA_VERSION = "1.0"


class Experiment(str, enum.Enum):
    SINGLE = "SINGLE"
    N_REFINEMENT = "N_REFINEMENT"
    DT_REFINEMENT = "DT_REFINEMENT"
    TRUNCATION_COMPARE = "TRUNCATION_COMPARE"
    HORIZON_CHECK = "HORIZON_CHECK"
    GLOBAL_REGIME = "GLOBAL_REGIME"
    PROPERTY_SUITE = "PROPERTY_SUITE"


DEFAULT_PROBLEM = {
    "p": 2.5,
    "basis": {"kind": "FEM_HAT", "n_elements": 16, "quad_order": 8},
    "source": {"kind": "POWER", "r": 1.5, "a": 1.0, "b": 0.0},
    "truncation": {"mode": "NONE"},
    "u0": {"profile": "sine", "amplitude": 0.5, "mode": 1, "offset": 0.5},
    "u1": {"profile": "bump", "amplitude": 0.25},
    "T": 1.0,
    "dt": 1e-3,
    "scheme": "IMPLICIT_MIDPOINT",
    "newton_tol": 1e-12,
    "newton_max_iter": 30,
    "blowup_threshold": 1e12,
}

DEFAULT_STUDY = {
    "N_values": [8, 16, 32, 64],
    "dt_values": None,
    "dt_halvings": 4,
    "order_window": [1.8, 2.2],
    "K": None,
    "cutoff_n": None,
    "horizon_steps": 200,
    "lipschitz_samples": 2000,
    "suite_N": 16,
    "suite_trials": 200,
    "suite_p_values": [2.1, 2.5, 2.9],
    "balance_rtol": 1e-2,
    "workers": 1,
}


@dataclass
class RunConfig:
    problem: dict
    experiments: list
    seed: int = 0
    output_dir: str = "plapwave_out"
    validation: srcs.ValidationMode = srcs.ValidationMode.STRICT
    study: dict = field(default_factory=dict)
    source_path: str = ""

    def echo(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment": [e.value for e in self.experiments],
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "validation": self.validation.value,
            "problem": self.problem,
            "study": self.study,
        }


# -- config parsing --------------------------------------------------------

def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in (given or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def _number(d, key, where, positive=False, integer=False):
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{where}.{key}: must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _enum(cls, value, where):
    try:
        return cls(str(value).upper())
    except ValueError:
        options = ", ".join(m.value for m in cls)
        raise ConfigError(f"{where}: {value!r} is not one of {options}") from None


def config_from_dict(doc, source_path="") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    exp = doc.get("experiment", "SINGLE")
    exp_list = exp if isinstance(exp, list) else [exp]
    experiments = [_enum(Experiment, e, "experiment") for e in exp_list]
    problem = _merge(DEFAULT_PROBLEM, doc.get("problem"))
    study = _merge(DEFAULT_STUDY, doc.get("study"))
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    cfg = RunConfig(
        problem=problem,
        experiments=experiments,
        seed=seed,
        output_dir=str(doc.get("output_dir", "plapwave_out")),
        validation=_enum(srcs.ValidationMode, doc.get("validation", "STRICT"), "validation"),
        study=study,
        source_path=source_path,
    )
    check_config(cfg)
    return cfg


def check_config(cfg: RunConfig):
    """Field-level validation plus the (p, r) regime checks."""
    pr = cfg.problem
    p = _number(pr, "p", "problem", positive=True)
    for key in ("T", "dt", "newton_tol", "blowup_threshold"):
        _number(pr, key, "problem", positive=True)
    _number(pr, "newton_max_iter", "problem", positive=True, integer=True)
    if pr["T"] < pr["dt"]:
        raise ConfigError(f"problem.T: horizon {pr['T']} is shorter than dt {pr['dt']}")
    _enum(sol.Scheme, pr["scheme"], "problem.scheme")
    b = pr["basis"]
    kind = _enum(geo.BasisKind, b.get("kind", "FEM_HAT"), "problem.basis.kind")
    _number(b, "n_elements", "problem.basis", positive=True, integer=True)
    if "quad_order" in b:
        q = _number(b, "quad_order", "problem.basis", positive=True, integer=True)
        if q < geo.required_quad_order(p):
            raise ConfigError(f"problem.basis.quad_order: {q} is below the "
                              f"{geo.required_quad_order(p)} needed for p={p}")
    if kind == geo.BasisKind.ROBIN_EIGEN:
        count = _number(b, "count", "problem.basis", positive=True, integer=True)
        if count > b["n_elements"] + 1:
            raise ConfigError("problem.basis.count: exceeds the FEM dimension n_elements + 1")
    s = pr["source"]
    _enum(srcs.SourceKind, s.get("kind", "POWER"), "problem.source.kind")
    if srcs.SourceKind(str(s.get("kind", "POWER")).upper()) == srcs.SourceKind.CUSTOM:
        raise ConfigError("problem.source.kind: CUSTOM sources cannot be given in a config file")
    r = _number(s, "r", "problem.source")
    for key in ("a", "b"):
        if key in s:
            _number(s, key, "problem.source")
    t = pr["truncation"]
    mode = _enum(srcs.TruncationMode, t.get("mode", "NONE"), "problem.truncation.mode")
    if mode == srcs.TruncationMode.RADIAL_K:
        _number(t, "K", "problem.truncation", positive=True)
    if mode == srcs.TruncationMode.CUTOFF_N:
        _number(t, "n", "problem.truncation", positive=True, integer=True)
    for name in ("u0", "u1"):
        make_profile(pr[name], f"problem.{name}")
    need_global = Experiment.GLOBAL_REGIME in cfg.experiments
    check = srcs.validate_parameters(p, r, cfg.validation, require_global=need_global)
    if not check.accepted:
        raise ConfigError("parameter validation failed: " + "; ".join(check.violations))
    return check


def parse_config(path, overrides=None) -> RunConfig:
    """Read and validate a JSON config; ``overrides`` replace top-level keys first."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if isinstance(doc, dict) and overrides:
        doc.update(overrides)
    try:
        return config_from_dict(doc, str(path))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# -- problem construction --------------------------------------------------

def make_profile(desc, where="profile"):
    """Vectorized callable for a named initial-data profile."""
    if not isinstance(desc, dict) or "profile" not in desc:
        raise ConfigError(f"{where}: expected an object with a 'profile' field")
    kind = desc["profile"]
    g = desc.get
    if kind == "zero":
        return lambda x: np.zeros_like(x)
    if kind == "constant":
        c = float(g("value", 0.0))
        return lambda x: np.full_like(x, c)
    if kind == "linear":
        a, b = float(g("a", 0.0)), float(g("b", 1.0))
        return lambda x: a + b * x
    if kind == "sine":
        A, k, c = float(g("amplitude", 1.0)), float(g("mode", 1)), float(g("offset", 0.0))
        return lambda x: c + A * np.sin(k * np.pi * x)
    if kind == "cosine":
        A, k, c = float(g("amplitude", 1.0)), float(g("mode", 1)), float(g("offset", 0.0))
        return lambda x: c + A * np.cos(k * np.pi * x)
    if kind == "bump":
        A = float(g("amplitude", 1.0))
        return lambda x: 16.0 * A * x**2 * (1.0 - x) ** 2
    if kind == "polynomial":
        coeffs = [float(c) for c in g("coeffs", [0.0])]
        return lambda x: np.polynomial.polynomial.polyval(x, coeffs)
    raise ConfigError(f"{where}.profile: unknown profile {kind!r}")


def build_basis(desc):
    mesh = geo.build_mesh(int(desc["n_elements"]), int(desc.get("quad_order", geo.DEFAULT_QUAD_ORDER)))
    if geo.BasisKind(str(desc.get("kind", "FEM_HAT")).upper()) == geo.BasisKind.ROBIN_EIGEN:
        return geo.build_robin_eigenbasis(mesh, int(desc["count"]))
    return geo.build_fem_basis(mesh)


def initial_data(basis, pr):
    f0, f1 = make_profile(pr["u0"]), make_profile(pr["u1"])
    # eigenbasis: L2 projection coincides with the Robin energy projection
    u0 = geo.interpolate(basis, f0) if basis.is_fem else geo.project_L2(basis, f0)
    return u0, geo.project_L2(basis, f1)


def build_problem(pr, validation, basis=None) -> sol.ProblemSpec:
    basis = basis or build_basis(pr["basis"])
    u0, u1 = initial_data(basis, pr)
    return sol.ProblemSpec(
        p=float(pr["p"]), basis=basis, u0=u0, u1=u1, T=float(pr["T"]), dt=float(pr["dt"]),
        src=srcs.SourceSpec.from_dict(pr["source"]),
        trunc=srcs.TruncationSpec.from_dict(pr["truncation"]),
        scheme=sol.Scheme(str(pr["scheme"]).upper()),
        newton_tol=float(pr["newton_tol"]), newton_max_iter=int(pr["newton_max_iter"]),
        blowup_threshold=float(pr["blowup_threshold"]), validation=validation,
    )


# -- reports ---------------------------------------------------------------

@dataclass
class Audit:
    name: str
    anchor: str
    passed: bool
    tolerance: object
    value: object
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "anchor": self.anchor, "passed": bool(self.passed),
                "tolerance": self.tolerance, "value": self.value, "detail": self.detail}


@dataclass
class ExperimentResult:
    experiment: Experiment
    audits: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    runs: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)
    error: str = ""

    @property
    def passed(self):
        return not self.error and all(a.passed for a in self.audits)

    def to_dict(self):
        return {"experiment": self.experiment.value, "passed": self.passed,
                "error": self.error, "metrics": self.metrics,
                "audits": [a.to_dict() for a in self.audits], "runs": self.runs}


@dataclass
class RunReport:
    config: RunConfig
    validation: dict
    results: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.results)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def _write_table(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)
                              for x in row) + "\n")


def emit_report(report: RunReport, out_dir) -> list:
    """Write CSV trajectories, data tables and ``report.json``; return the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    manifest = []
    try:
        for res in report.results:
            prefix = "" if res.experiment == Experiment.SINGLE else res.experiment.value.lower() + "_"
            for name, traj in sorted(res.trajectories.items()):
                traj.to_csv(out / (prefix + name))
                manifest.append(prefix + name)
            for name, (header, rows) in sorted(res.tables.items()):
                _write_table(out / (prefix + name), header, rows)
                manifest.append(prefix + name)
        manifest.append("report.json")
        doc = {
            "schema_version": SCHEMA_VERSION,
            "config": report.config.echo(),
            "validation": report.validation,
            "experiments": [r.to_dict() for r in report.results],
            "all_passed": report.passed,
            "manifest": manifest,
            "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }
        (out / "report.json").write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing report files under {out}: {exc}") from exc
    return manifest


# -- experiments -----------------------------------------------------------

def _map(fn, items, workers):
    items = list(items)
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _completion_audit(traj, label=""):
    ok = traj.termination == sol.Termination.COMPLETED
    return Audit(f"run_completed{label}", "existence of the Galerkin solution on [0, T]", ok,
                 "COMPLETED", traj.termination.value, traj.message)


def _norms(traj):
    p = traj.problem.p
    return np.array([geo.norm_w1p(traj.field_at(k), p) for k in range(len(traj))])


def run_single(cfg, problem):
    res = ExperimentResult(Experiment.SINGLE)
    traj = sol.integrate(problem)
    res.trajectories["trajectory.csv"] = traj
    res.runs.append(traj.sidecar())
    res.audits.append(_completion_audit(traj))
    e = traj.energy
    scale = 1.0 + float(np.max(np.abs(e["script_E"]) + e["dissipation_cum"] + np.abs(e["work_cum"])))
    tol = cfg.study["balance_rtol"] * scale
    bal = float(np.max(np.abs(e["balance_residual"])))
    res.audits.append(Audit("energy_balance", "energy identity for Galerkin approximants",
                            bal <= tol, tol, bal))
    if problem.src.a == 0.0 and problem.src.b == 0.0:
        inc = float(np.max(np.diff(e["script_E"]), initial=0.0))
        tol_m = 1e-12 * scale
        res.audits.append(Audit("energy_nonincreasing", "energy inequality without source",
                                inc <= tol_m, tol_m, inc))
    blow = sol.blowup_monitor(traj, problem.blowup_threshold)
    res.metrics.update({
        "termination": traj.termination.value,
        "steps": len(traj) - 1,
        "script_E_initial": float(e["script_E"][0]),
        "script_E_final": float(e["script_E"][-1]),
        "max_abs_balance_residual": bal,
        "blowup": blow.to_dict(),
        "mean_newton_iterations": float(np.mean(traj.newton_iterations)) if len(traj.newton_iterations) else 0.0,
    })
    return res


def _refine_basis(pr, N):
    b = dict(pr["basis"])
    if str(b.get("kind", "FEM_HAT")).upper() == "ROBIN_EIGEN":
        b["count"] = int(N)
    else:
        b["n_elements"] = int(N)
    return build_basis(b)


def run_n_refinement(cfg, problem):
    res = ExperimentResult(Experiment.N_REFINEMENT)
    pr = cfg.problem
    Ns = [int(n) for n in cfg.study["N_values"]]
    fine = geo.build_mesh(int(np.lcm.reduce(Ns + [pr["basis"]["n_elements"]]))
                          if str(pr["basis"].get("kind", "FEM_HAT")).upper() == "FEM_HAT"
                          else pr["basis"]["n_elements"])
    fine_basis = geo.build_fem_basis(fine)

    def one(N):
        return sol.integrate(build_problem(pr, cfg.validation, _refine_basis(pr, N)))

    trajs = _map(one, Ns, cfg.study["workers"])
    finals = []
    for N, traj in zip(Ns, trajs):
        res.trajectories[f"trajectory_N{N}.csv"] = traj
        res.runs.append(traj.sidecar())
        res.audits.append(_completion_audit(traj, f"_N{N}"))
        b = traj.problem.basis
        finals.append(np.interp(fine.node_coords, b.mesh.node_coords, b.nodal(traj.u[-1])))
    p = problem.p
    dists = [geo.norm_w1p(geo.FieldCoeffs(finals[i + 1] - finals[i], fine_basis), p)
             for i in range(len(Ns) - 1)]
    decreasing = all(d1 < d0 for d0, d1 in zip(dists, dists[1:]))
    res.audits.append(Audit("self_convergence", "boundedness and convergence of Galerkin approximants",
                            decreasing, "strictly decreasing", dists))
    res.metrics["successive_w1p_distances"] = dists
    res.tables["table.csv"] = (("N", "N_next", "w1p_distance"),
                                      [(Ns[i], Ns[i + 1], dists[i]) for i in range(len(dists))])
    return res


def _slopes(values):
    v = np.abs(np.asarray(values, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log2(v[:-1] / v[1:])


def run_dt_refinement(cfg, problem):
    res = ExperimentResult(Experiment.DT_REFINEMENT)
    dts = cfg.study["dt_values"] or [problem.dt / 2**k for k in range(cfg.study["dt_halvings"] + 1)]
    trajs = _map(lambda dt: sol.integrate(problem.replace(dt=float(dt))), dts, cfg.study["workers"])
    resid = []
    for dt, traj in zip(dts, trajs):
        res.trajectories[f"trajectory_dt{len(resid)}.csv"] = traj
        res.runs.append(traj.sidecar())
        res.audits.append(_completion_audit(traj, f"_dt{len(resid)}"))
        resid.append(float(traj.energy["balance_residual"][-1]))
    slopes = _slopes(resid)
    lo, hi = cfg.study["order_window"]
    ok = bool(np.all((slopes >= lo) & (slopes <= hi)))
    res.audits.append(Audit("balance_residual_order", "energy identity for Galerkin approximants",
                            ok, [lo, hi], slopes.tolist()))
    diffs = [float(np.max(np.abs(trajs[i].u[-1] - trajs[i + 1].u[-1]))) for i in range(len(dts) - 1)]
    res.metrics.update({"dt_values": list(map(float, dts)), "balance_residual": resid,
                        "residual_slopes": slopes.tolist(),
                        "terminal_state_differences": diffs,
                        "terminal_state_slopes": _slopes(diffs).tolist()})
    res.tables["table.csv"] = (("dt", "balance_residual"), list(zip(dts, resid)))
    return res


def run_truncation_compare(cfg, problem):
    res = ExperimentResult(Experiment.TRUNCATION_COMPARE)
    base = problem.replace(trunc=srcs.NO_TRUNCATION)
    ref = sol.integrate(base)
    norms = _norms(ref)
    traces = np.abs(np.stack([ref.problem.basis.nodal(u)[[0, -1]] for u in ref.u]))
    K = cfg.study["K"] or problem.trunc.K or 2.0 * float(norms.max())
    n = cfg.study["cutoff_n"] or problem.trunc.n or int(math.ceil(traces.max())) + 1
    variants = {
        "NONE": ref,
        "RADIAL_K": sol.integrate(base.replace(trunc=srcs.TruncationSpec("RADIAL_K", K=float(K)))),
        "CUTOFF_N": sol.integrate(base.replace(trunc=srcs.TruncationSpec("CUTOFF_N", n=int(n)))),
    }
    for name, traj in variants.items():
        res.trajectories[f"trajectory_{name}.csv"] = traj
        res.runs.append(traj.sidecar())
        res.audits.append(_completion_audit(traj, f"_{name}"))
    diffs = {}
    for name in ("RADIAL_K", "CUTOFF_N"):
        t = variants[name]
        m = min(len(t), len(ref))
        diffs[name] = float(max(np.max(np.abs(t.u[:m] - ref.u[:m])), np.max(np.abs(t.v[:m] - ref.v[:m]))))
    if norms.max() < K:
        res.audits.append(Audit("radial_truncation_inactive", "f_K = f inside the ball of radius K",
                                diffs["RADIAL_K"] <= 1e-12, 1e-12, diffs["RADIAL_K"]))
    if traces.max() <= n:
        res.audits.append(Audit("cutoff_inactive", "eta_n = 1 on |s| <= n",
                                diffs["CUTOFF_N"] <= 1e-12, 1e-12, diffs["CUTOFF_N"]))
    res.metrics.update({"K": float(K), "n": int(n), "max_norm_untruncated": float(norms.max()),
                        "max_trace_untruncated": float(traces.max()),
                        "max_difference_from_untruncated": diffs})
    return res


def run_horizon_check(cfg, problem):
    res = ExperimentResult(Experiment.HORIZON_CHECK)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    p = problem.p
    sys0 = sol._System(problem)
    kin, pot, *_ = sys0.energies(problem.u0.coeffs, problem.u1.coeffs)
    E0 = kin + pot
    C = sol.empirical_horizon_constant(problem.src, p, cfg.study["lipschitz_samples"], rng)
    est = sol.local_horizon_estimate(p, E0, C)
    dt = est.T0 / int(cfg.study["horizon_steps"])
    base = problem.replace(T=est.T0, dt=dt, trunc=srcs.NO_TRUNCATION)
    ref = sol.integrate(base)
    trunc = sol.integrate(base.replace(trunc=srcs.TruncationSpec("RADIAL_K", K=est.K)))
    res.trajectories["trajectory_NONE.csv"] = ref
    res.trajectories["trajectory_RADIAL_K.csv"] = trunc
    for name, t in (("NONE", ref), ("RADIAL_K", trunc)):
        res.runs.append(t.sidecar())
        res.audits.append(_completion_audit(t, f"_{name}"))
    norms = _norms(trunc)
    res.audits.append(Audit("norm_containment", "||u(t)||_{1,p} <= K on [0, T0]",
                            bool(norms.max() <= est.K), est.K, float(norms.max())))
    m = min(len(ref), len(trunc))
    diff = float(max(np.max(np.abs(ref.u[:m] - trunc.u[:m])), np.max(np.abs(ref.v[:m] - trunc.v[:m]))))
    res.audits.append(Audit("truncated_equals_untruncated", "f_K = f on [0, T0]",
                            diff <= 1e-12, 1e-12, diff))
    energy_cap = est.K**p / p
    emax = float(np.max(trunc.energy["script_E"]))
    res.audits.append(Audit("energy_cap", "E(t) <= K^p / p on [0, T0]", emax <= energy_cap,
                            energy_cap, emax))
    res.metrics.update({"script_E0": E0, **est.to_dict(), "max_norm": float(norms.max())})
    return res


def run_global_regime(cfg, problem):
    res = ExperimentResult(Experiment.GLOBAL_REGIME)
    traj = sol.integrate(problem)
    res.trajectories["trajectory.csv"] = traj
    res.runs.append(traj.sidecar())
    res.audits.append(_completion_audit(traj))
    C = sol.global_source_constant(problem.src, problem.p)
    E = traj.energy["script_E"]
    env = sol.gronwall_envelope(float(E[0]), C, traj.t)
    margin = float(np.min(env - E))
    res.audits.append(Audit("gronwall_envelope", "(E(0) + C t) exp(C t) bound for r <= p/2",
                            bool(np.all(E <= env)), "E(t) <= envelope(t)", margin))
    res.metrics.update({"C": C, "script_E_final": float(E[-1]), "envelope_final": float(env[-1]),
                        "min_envelope_margin": margin})
    res.tables["envelope.csv"] = (("t", "script_E", "envelope"), list(zip(traj.t, E, env)))
    return res


def property_suite(seed=0, N=16, trials=200, p_values=(2.1, 2.5, 2.9), samples=2000):
    """Randomized operator and source invariants; returns a list of audits."""
    rng = np.random.Generator(np.random.Philox(seed))
    basis = geo.build_fem_basis(geo.build_mesh(N - 1))
    audits = []

    def field(scale=1.0):
        return geo.FieldCoeffs(scale * rng.standard_normal(basis.N), basis)

    for p in p_values:
        form = ops.PLaplacianForm(p, basis)
        worst_dual = worst_mono = worst_young = worst_hom = 0.0
        for _ in range(trials):
            u, v = field(10.0 ** rng.uniform(-1, 1)), field(10.0 ** rng.uniform(-1, 1))
            nu, nv = geo.norm_w1p(u, p), geo.norm_w1p(v, p)
            pair = ops.pairing(form, u, u)
            worst_dual = max(worst_dual, abs(pair - nu**p) / nu**p)
            m = ops.monotonicity_check(form, u, v)
            worst_mono = min(worst_mono, m / (1.0 + nu**p + nv**p))
            young = ops.pairing(form, u, v) - ((p - 1) / p * nu**p + nv**p / p)
            worst_young = max(worst_young, young)
            alpha = 10.0 ** rng.uniform(-1, 1)
            a1 = ops.apply_p_laplacian(form, alpha * u)
            a0 = alpha ** (p - 1) * ops.apply_p_laplacian(form, u)
            worst_hom = max(worst_hom, float(np.max(np.abs(a1 - a0)) / np.max(np.abs(a0))))
        audits += [
            Audit(f"duality_identity_p{p}", "<-Δp u, u> = ||u||_{1,p}^p", worst_dual <= 1e-10,
                  1e-10, worst_dual),
            Audit(f"monotonicity_p{p}", "monotonicity of -Δp", worst_mono >= -1e-10, -1e-10,
                  worst_mono),
            Audit(f"young_bound_p{p}", "<-Δp u, v> <= (p-1)/p ||u||^p + 1/p ||v||^p",
                  worst_young <= 1e-10, 1e-10, worst_young),
            Audit(f"homogeneity_p{p}", "degree p-1 homogeneity of -Δp", worst_hom <= 1e-10,
                  1e-10, worst_hom),
        ]
        fails = 0
        for _ in range(max(1, trials // 10)):
            rep = ops.dual_norm_bound_check(form, field(10.0 ** rng.uniform(-1, 1)), 50, rng)
            fails += not rep.passed
        audits.append(Audit(f"operator_norm_bound_p{p}", "||-Δp u||_* <= 2 ||u||^(p-1)",
                            fails == 0, 0, fails))
    p2 = ops.PLaplacianForm(2.0, basis)
    damp = ops.DampingForm(basis)
    worst = 0.0
    for _ in range(trials):
        u = field()
        worst = max(worst, float(np.max(np.abs(ops.apply_p_laplacian(p2, u) - ops.apply_damping(damp, u)))))
    audits.append(Audit("p2_consistency", "p = 2 form equals the damping form", worst <= 1e-12,
                        1e-12, worst))
    eta_worst = 0.0
    for n in (1, 2, 4, 8, 16):
        spec = srcs.TruncationSpec("CUTOFF_N", n=n)
        s = np.linspace(-3 * n, 3 * n, 100001)
        eta = srcs.cutoff_eta(spec, s)
        ok_range = bool(np.all((eta >= 0) & (eta <= 1)))
        slope = float(np.max(np.abs(np.diff(eta) / np.diff(s))))
        eta_worst = max(eta_worst, slope * n)
        audits.append(Audit(f"cutoff_shape_n{n}", "0 <= eta_n <= 1, plateau and support",
                            ok_range and bool(np.all(eta[np.abs(s) <= n] == 1.0))
                            and bool(np.all(eta[np.abs(s) >= 2 * n] == 0.0)), "exact", ok_range))
    audits.append(Audit("cutoff_slope", "|eta_n'| <= C/n", eta_worst <= srcs.ETA_SLOPE,
                        srcs.ETA_SLOPE, eta_worst))
    src = srcs.SourceSpec("POWER", r=1.5, a=1.0)
    for K in (1.0, 2.0):
        loc = srcs.lipschitz_probe(src, srcs.NO_TRUNCATION, K, samples, 2.5, rng=rng).empirical_constant
        glob = srcs.lipschitz_probe(src, srcs.TruncationSpec("RADIAL_K", K=K), K, samples, 2.5,
                                    rng=rng).empirical_constant
        audits.append(Audit(f"radial_truncation_lipschitz_K{K}",
                            "global constant of f_K <= 2 x local constant of f",
                            glob <= 2 * loc + 1e-9, 2 * loc + 1e-9, glob))
    return audits


def run_property_suite(cfg, problem=None):
    res = ExperimentResult(Experiment.PROPERTY_SUITE)
    st = cfg.study
    res.audits = property_suite(cfg.seed, int(st["suite_N"]), int(st["suite_trials"]),
                                tuple(st["suite_p_values"]), int(st["lipschitz_samples"]))
    res.metrics["audit_count"] = len(res.audits)
    return res


RUNNERS = {
    Experiment.SINGLE: run_single,
    Experiment.N_REFINEMENT: run_n_refinement,
    Experiment.DT_REFINEMENT: run_dt_refinement,
    Experiment.TRUNCATION_COMPARE: run_truncation_compare,
    Experiment.HORIZON_CHECK: run_horizon_check,
    Experiment.GLOBAL_REGIME: run_global_regime,
    Experiment.PROPERTY_SUITE: run_property_suite,
}


def run_experiment(cfg: RunConfig) -> RunReport:
    """Run every experiment in ``cfg``; failures are captured in the report."""
    need_global = Experiment.GLOBAL_REGIME in cfg.experiments
    check = srcs.validate_parameters(float(cfg.problem["p"]), float(cfg.problem["source"]["r"]),
                                     cfg.validation, require_global=need_global)
    report = RunReport(cfg, check.to_dict())
    problem = None
    for exp in cfg.experiments:
        try:
            if problem is None and exp != Experiment.PROPERTY_SUITE:
                problem = build_problem(cfg.problem, cfg.validation)
            report.results.append(RUNNERS[exp](cfg, problem))
        except Exception as exc:  # reported, not raised
            report.results.append(ExperimentResult(exp, error=f"{type(exc).__name__}: {exc}"))
    return report


def default_suite_config(seed=0, output_dir="plapwave_suite", N=16):
    return config_from_dict({"experiment": "PROPERTY_SUITE", "seed": seed,
                             "output_dir": output_dir, "study": {"suite_N": N}})


def resolve_output_dir(cfg: RunConfig, override=None):
    if override:
        return Path(override)
    out = Path(cfg.output_dir)
    if not out.is_absolute() and cfg.source_path:
        out = Path(os.path.dirname(os.path.abspath(cfg.source_path))) / out
    return out
