import json
import os
import subprocess
import sys

import pytest

from plapwave import cli, lab
from plapwave.errors import ConfigError

FAST = {"T": 0.2, "dt": 0.005}


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return path


def cfg(experiment, problem=None, study=None, **top):
    doc = {"schema_version": "1.0", "experiment": experiment,
           "problem": {**FAST, **(problem or {})}, "study": study or {}}
    doc.update(top)
    return lab.config_from_dict(doc)


def test_accepts_default_regime():
    c = cfg("SINGLE", {"p": 2.5, "source": {"r": 1.5}})
    assert c.experiments == [lab.Experiment.SINGLE]


def test_rejects_growth_violation_naming_condition():
    with pytest.raises(ConfigError, match="growth assumption 1 <= r < 4p/\\(3\\(3-p\\)\\)"):
        cfg("SINGLE", {"source": {"r": 7.0}})


def test_global_regime_flag(tmp_path):
    report = lab.run_experiment(cfg([], {"source": {"r": 1.25}}))
    assert report.validation["global_regime"]
    assert any("global regime" in n for n in report.validation["notes"])
    with pytest.raises(ConfigError, match="global regime"):
        cfg("GLOBAL_REGIME", {"source": {"r": 1.5}})


def test_permissive_allows_linear_limit():
    with pytest.raises(ConfigError):
        cfg("SINGLE", {"p": 2.0})
    c = cfg("SINGLE", {"p": 2.0}, validation="PERMISSIVE")
    assert lab.run_experiment(c).passed


def test_parse_error_reports_position(tmp_path):
    path = write(tmp_path, '{\n  "experiment": "SINGLE",\n  "seed": ,\n}')
    with pytest.raises(ConfigError, match=r"cfg\.json:3:\d+:"):
        lab.parse_config(path)


def test_field_errors_name_the_field(tmp_path):
    cases = [({"problem": {"dt": -1}}, "problem.dt"),
             ({"problem": {"basis": {"kind": "SPLINE"}}}, "problem.basis.kind"),
             ({"problem": {"u0": {"profile": "gauss"}}}, "problem.u0.profile"),
             ({"problem": {"truncation": {"mode": "RADIAL_K"}}}, "problem.truncation.K"),
             ({"problem": {"basis": {"kind": "ROBIN_EIGEN", "n_elements": 4, "count": 9}}},
              "problem.basis.count"),
             ({"experiment": "NOPE"}, "experiment"),
             ({"seed": -3}, "seed")]
    for doc, field in cases:
        with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
            lab.parse_config(write(tmp_path, doc))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        lab.parse_config(tmp_path / "absent.json")


@pytest.mark.parametrize("name", ["zero", "constant", "linear", "sine", "cosine", "bump", "polynomial"])
def test_profiles(name):
    import numpy as np
    f = lab.make_profile({"profile": name, "coeffs": [1, 2]})
    x = np.linspace(0, 1, 5)
    assert f(x).shape == x.shape


def test_property_suite_seed42():
    c = cfg("PROPERTY_SUITE", seed=42, study={"suite_N": 16, "suite_trials": 100})
    rep = lab.run_experiment(c)
    assert rep.passed
    names = [a.name for a in rep.results[0].audits]
    for key in ("monotonicity", "duality_identity", "homogeneity"):
        assert any(n.startswith(key) for n in names)


def test_dt_refinement_order():
    c = cfg("DT_REFINEMENT", {"source": {"a": 0.0}, "T": 0.5, "dt": 0.02})
    res = lab.run_experiment(c).results[0]
    assert res.passed, res.to_dict()
    assert all(1.8 <= s <= 2.2 for s in res.metrics["residual_slopes"])


def test_truncation_compare_inactive():
    c = cfg("TRUNCATION_COMPARE", study={"K": 100.0, "cutoff_n": 100})
    res = lab.run_experiment(c).results[0]
    assert res.passed
    diffs = res.metrics["max_difference_from_untruncated"]
    assert diffs["RADIAL_K"] <= 1e-12 and diffs["CUTOFF_N"] <= 1e-12


def test_every_audit_has_tolerance_and_anchor():
    c = cfg(["SINGLE", "N_REFINEMENT"], study={"N_values": [4, 8]})
    for res in lab.run_experiment(c).results:
        for a in res.to_dict()["audits"]:
            assert a["anchor"] and "tolerance" in a and isinstance(a["passed"], bool)


def test_empty_experiment_list_writes_echo_only(tmp_path):
    rep = lab.run_experiment(cfg([]))
    manifest = lab.emit_report(rep, tmp_path)
    assert manifest == ["report.json"] and os.listdir(tmp_path) == ["report.json"]
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["config"]["problem"]["p"] == 2.5 and doc["experiments"] == []
    assert doc["schema_version"] == lab.SCHEMA_VERSION


def test_single_writes_one_csv_and_json(tmp_path):
    manifest = lab.emit_report(lab.run_experiment(cfg("SINGLE")), tmp_path)
    assert sorted(manifest) == ["report.json", "trajectory.csv"]
    assert sorted(os.listdir(tmp_path)) == ["report.json", "trajectory.csv"]


def _strip(path):
    doc = json.loads(path.read_text())
    doc.pop("generated_at")
    return json.dumps(doc, sort_keys=True)


def test_rerun_is_identical(tmp_path):
    c = cfg(["SINGLE", "PROPERTY_SUITE", "HORIZON_CHECK"], seed=5,
            study={"suite_trials": 20, "lipschitz_samples": 300})
    a, b = tmp_path / "a", tmp_path / "b"
    lab.emit_report(lab.run_experiment(c), a)
    lab.emit_report(lab.run_experiment(c), b)
    assert _strip(a / "report.json") == _strip(b / "report.json")
    for name in os.listdir(a):
        if name.endswith(".csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


def test_parallel_sweep_matches_serial(tmp_path):
    runs = []
    for workers in (1, 4):
        c = cfg("N_REFINEMENT", study={"N_values": [4, 8, 16], "workers": workers})
        runs.append(lab.run_experiment(c).results[0].metrics)
    assert runs[0] == runs[1]


def test_downstream_error_is_captured(monkeypatch):
    def boom(cfg, problem):
        raise RuntimeError("kaput")
    monkeypatch.setitem(lab.RUNNERS, lab.Experiment.SINGLE, boom)
    rep = lab.run_experiment(cfg("SINGLE"))
    assert not rep.passed and "kaput" in rep.results[0].error


def test_io_failure_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        lab.emit_report(lab.run_experiment(cfg([])), blocker / "sub")


# -- command line ------------------------------------------------------------

def test_cli_check_params(capsys):
    assert cli.main(["check-params", "--p", "2.5", "--r", "1.5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["r_upper"] == pytest.approx(10 / 1.5)
    assert cli.main(["check-params", "--p", "2.5", "--r", "7"]) == 1


def test_cli_run_exit_codes(tmp_path, capsys):
    good = write(tmp_path, {"experiment": "SINGLE", "problem": FAST}, "good.json")
    assert cli.main(["run", str(good), "--out", str(tmp_path / "o1"), "--seed", "3"]) == 0
    doc = json.loads((tmp_path / "o1" / "report.json").read_text())
    assert doc["config"]["seed"] == 3 and doc["all_passed"]
    failing = write(tmp_path, {"experiment": "SINGLE", "problem": FAST,
                               "study": {"balance_rtol": 1e-15}}, "fail.json")
    assert cli.main(["run", str(failing), "--out", str(tmp_path / "o2")]) == 1
    bad = write(tmp_path, '{"experiment": ', "bad.json")
    assert cli.main(["run", str(bad)]) == 2
    assert "bad.json:1:" in capsys.readouterr().err


def test_cli_validation_override(tmp_path):
    lin = write(tmp_path, {"experiment": "SINGLE", "problem": {**FAST, "p": 2.0}})
    assert cli.main(["run", str(lin), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["run", str(lin), "--out", str(tmp_path / "o"), "--validation", "permissive"]) == 0


def test_cli_output_dir_relative_to_config(tmp_path):
    path = write(tmp_path, {"experiment": [], "output_dir": "results"})
    assert cli.main(["run", str(path)]) == 0
    assert (tmp_path / "results" / "report.json").exists()


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "plapwave", "suite", "--out", str(tmp_path / "s"),
                          "--seed", "42"], capture_output=True, text=True)
    assert out.returncode == 0, out.stdout + out.stderr
    doc = json.loads((tmp_path / "s" / "report.json").read_text())
    assert doc["all_passed"] and doc["experiments"][0]["experiment"] == "PROPERTY_SUITE"
