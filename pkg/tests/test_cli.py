import json
import subprocess
import sys

import numpy as np
import pytest

from dempc import scenario as scn
from dempc.cli import main
from dempc.sim import metrics
from dempc.traceio import TraceFormatError, format_metrics, read_csv, write_csv

SHORT = ["--override", "simulation.t_end=0.3", "--override", "flow.alpha=1000"]


def write_doc(path, doc):
    path.write_text(json.dumps(doc))
    return path


def test_list_bundled(capsys):
    assert main(["list"]) == 0
    names = capsys.readouterr().out.split()
    assert "hcw_rendezvous" in names and "double_integrator_numin4_noerg" in names


def test_short_run_writes_csv_and_metrics(tmp_path, capsys):
    assert main(["run", "double_integrator_numin10", "--out", str(tmp_path), *SHORT]) == 0
    out = capsys.readouterr().out
    csv = tmp_path / "double_integrator_numin10.csv"
    assert csv.exists() and (tmp_path / "double_integrator_numin10.metrics.json").exists()
    assert "max_constraint_value: " in out
    header = csv.read_text().splitlines()[0]
    assert header == "t,xi_1,xi_2,nu_1,r_1,psi_1,kkt_res,term_margin,max_cviol,rdot_norm"


def test_round_trip_metrics(tmp_path, capsys):
    assert main(["run", "double_integrator_numin10", "--out", str(tmp_path), *SHORT]) == 0
    printed = capsys.readouterr().out.split("\n", 1)[1].strip()
    sc = scn.load("double_integrator_numin10", ["simulation.t_end=0.3", "flow.alpha=1000"])
    again = metrics(read_csv(tmp_path / "double_integrator_numin10.csv"), sc)
    assert format_metrics(again) == printed
    stored = json.loads((tmp_path / "double_integrator_numin10.metrics.json").read_text())
    assert stored == json.loads(json.dumps(again))


def test_csv_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "double_integrator_numin10", "--out", str(a), *SHORT]) == 0
    assert main(["run", "double_integrator_numin10", "--out", str(b), *SHORT]) == 0
    name = "double_integrator_numin10.csv"
    assert (a / name).read_bytes() == (b / name).read_bytes()


def test_csv_full_precision(tmp_path):
    sc = scn.load("double_integrator_numin10", ["simulation.t_end=0.1", "flow.alpha=1000"])
    from dempc.sim import run

    tr = run(sc)
    back = read_csv(write_csv(tr, tmp_path / "t.csv"))
    assert np.array_equal(back.matrix(), tr.matrix())


def test_override_coercion_and_nesting():
    doc = scn.apply_overrides({"flow": {"alpha": 1.0}}, ["flow.alpha=2e3", "name=abc", "gamma=[1, 2]", "a.b.c=true"])
    assert doc["flow"]["alpha"] == 2000.0 and doc["name"] == "abc" and doc["gamma"] == [1, 2]
    assert doc["a"]["b"]["c"] is True
    with pytest.raises(scn.ScenarioError):
        scn.apply_overrides({}, ["novalue"])


def test_unknown_key_rejected(tmp_path, capsys):
    doc = scn.load_document("double_integrator_numin10")
    doc["flow"]["speed"] = 3
    assert main(["run", str(write_doc(tmp_path / "s.json", doc))]) == 2
    assert "flow" in capsys.readouterr().err


def test_bad_json_reports_position(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "name": "x",\n  "plant": [1,,2]\n}\n')
    assert main(["run", str(p)]) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "column" in err


def test_missing_file_and_bad_override(tmp_path, capsys):
    assert main(["run", str(tmp_path / "none.json")]) == 2
    assert main(["run", "double_integrator_numin10", "--override", "flow.alpha=-1"]) == 2
    assert main(["run", "double_integrator_numin10", "--override", "erg.delta=[0.1, 0.1]"]) == 2
    assert main(["run", "double_integrator_numin10", "--override", "r0=[20.49]", *SHORT]) == 2
    assert main(["bogus"]) == 2
    assert main([]) == 2


def test_schema_requires_explicit_physics():
    doc = scn.load_document("double_integrator_numin10")
    for path in (("flow", "alpha"), ("erg", "kappa"), ("horizon", "tau"), ("horizon", "N")):
        d = json.loads(json.dumps(doc))
        del d[path[0]][path[1]]
        with pytest.raises(scn.ScenarioError):
            scn.to_scenario(d)


def test_dimension_mismatch_message():
    doc = scn.load_document("double_integrator_numin10")
    doc["constraints"]["state_upper"] = [1.0]
    with pytest.raises(scn.ScenarioError, match="state_upper"):
        scn.to_scenario(doc)


def test_extra_rows_and_null_bounds():
    doc = scn.load_document("double_integrator_numin10")
    doc["constraints"]["state_lower"] = [0, None]
    doc["constraints"]["state_upper"] = [20.5, None]
    doc["constraints"]["state_rows"] = [{"a": [0, 1], "b": -10}]
    sc = scn.to_scenario(doc)
    assert sc.constraints.c_xi == 3 and sc.constraints.n_h == 5


def test_erg_disabled_uses_gamma():
    sc = scn.load("double_integrator_numin10_noerg")
    assert sc.erg is None


def test_divergence_exit_code(tmp_path, capsys):
    code = main(["run", "double_integrator_numin10_noerg", "--out", str(tmp_path),
                 "--override", "simulation.t_end=0.3", "--override", "flow.step=0.002"])
    assert code == 1
    assert "diverged" in capsys.readouterr().err


def test_plot_three_files(tmp_path, capsys):
    assert main(["run", "double_integrator_numin10", "--out", str(tmp_path), *SHORT, "--plot"]) == 0
    stems = sorted(p.name for p in tmp_path.glob("*.svg"))
    assert stems == [f"double_integrator_numin10_{k}.svg" for k in ("inputs", "output", "states")]
    out = tmp_path / "again"
    assert main(["plot", str(tmp_path / "double_integrator_numin10.csv"), "--out", str(out)]) == 0
    assert len(list(out.glob("*.svg"))) == 3


def test_plot_empty_trace(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text("t,xi_1,xi_2,nu_1,r_1,psi_1,kkt_res,term_margin,max_cviol,rdot_norm\n")
    assert main(["plot", str(p), "--out", str(tmp_path / "plots")]) == 2
    assert not (tmp_path / "plots").exists() or not list((tmp_path / "plots").iterdir())


def test_plot_schema_mismatch(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,x,y\n0,1,2\n")
    with pytest.raises(TraceFormatError):
        read_csv(p)
    assert main(["plot", str(p)]) == 2


def test_plot_is_deterministic(tmp_path):
    assert main(["run", "double_integrator_numin10", "--out", str(tmp_path), *SHORT]) == 0
    csv = tmp_path / "double_integrator_numin10.csv"
    main(["plot", str(csv), "--out", str(tmp_path / "a")])
    main(["plot", str(csv), "--out", str(tmp_path / "b")])
    for f in (tmp_path / "a").glob("*.svg"):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "dempc.cli", "list"], capture_output=True, text=True)
    assert res.returncode == 0 and "hcw_rendezvous" in res.stdout


def test_log_level_env(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "dempc.cli", "run", "double_integrator_numin10", "--out", str(tmp_path), *SHORT],
        capture_output=True, text=True, env={"DEMPC_LOG": "INFO", "PATH": "/usr/bin:/bin"},
    )
    assert res.returncode == 0
    assert "INFO dempc.sim" in res.stderr


@pytest.mark.slow
def test_bundled_double_integrator(cli_run):
    r = cli_run("double_integrator_numin10")
    assert r.code == 0
    tr = read_csv(r.csv)
    assert abs(tr.psi[-1, 0] - 20.0) < 0.1


@pytest.mark.slow
def test_bundled_violation_strict(cli_run):
    r = cli_run("double_integrator_numin4_noerg", "--strict")
    assert r.code == 3
    assert "exceeds tolerance" in r.err


@pytest.mark.slow
def test_bundled_spacecraft_with_dashed_references(cli_run, tmp_path):
    r = cli_run("hcw_rendezvous")
    assert r.code == 0
    tr = read_csv(r.csv)
    assert np.abs(tr.psi[-1] - [60, 0, -10]).max() < 0.1
    assert main(["plot", str(r.csv), "--out", str(tmp_path), "--scenario", "hcw_rendezvous"]) == 0
    svg = (tmp_path / "hcw_rendezvous_output.svg").read_text()
    assert svg.count("stroke-dasharray") >= 3
