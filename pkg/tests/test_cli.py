import json
import subprocess
import sys

CLI = [sys.executable, "-m", "odrs_lab.cli"]


def run(*args, **kw):
    return subprocess.run(CLI + list(args), capture_output=True, text=True, **kw)


def test_unknown_flag_exits_1():
    r = run("round", "--bogus")
    assert r.returncode == 1
    assert "usage error" in r.stderr


def test_validate_ok_and_failure(tmp_path):
    star = tmp_path / "star.json"
    assert run("gen", "--kind", "star", "--n", "6", "--out", str(star)).returncode == 0
    r = run("validate", str(star))
    assert r.returncode == 0
    assert json.loads(r.stdout)["valid"] is True

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({
        "n_offline": 1, "capacities": [1],
        "arrivals": [{"edges": [{"i": 0, "x": 0.6}]},
                     {"edges": [{"i": 0, "x": 0.6}]}]}))
    r2 = run("validate", str(bad))
    assert r2.returncode == 2
    assert json.loads(r2.stdout)["valid"] is False


def test_round_exact_star(tmp_path):
    star = tmp_path / "star.json"
    run("gen", "--kind", "star", "--n", "10", "--out", str(star))
    r = run("round", "--alg", "warmup", "--instance", str(star), "--exact")
    doc = json.loads(r.stdout)
    assert abs(doc["min_ratio"] - (1 - 0.9 ** 10)) < 1e-9


def test_round_reports_byte_identical(tmp_path):
    inst = tmp_path / "inst.json"
    run("gen", "--kind", "random", "--n", "5", "--t", "5", "--seed", "3",
        "--out", str(inst))
    a = run("round", "--alg", "odrs", "--instance", str(inst), "--seed", "9",
            "--n-runs", "20000")
    b = run("round", "--alg", "odrs", "--instance", str(inst), "--seed", "9",
            "--n-runs", "20000")
    assert a.returncode == b.returncode == 0
    assert a.stdout == b.stdout


def test_optimize_params_cli():
    r = run("optimize-params", "--variant", "matching")
    doc = json.loads(r.stdout)
    assert doc["alpha"] >= 0.6519


def test_crs_cli(tmp_path):
    dist = tmp_path / "dist.json"
    dist.write_text(json.dumps({
        "elements": [0, 1],
        "atoms": [{"set": [], "p": 0.25}, {"set": [0], "p": 0.25},
                  {"set": [1], "p": 0.25}, {"set": [0, 1], "p": 0.25}]}))
    vfile = tmp_path / "v.json"
    vfile.write_text("[0.5, 0.5]")
    r = run("crs", "--dist", str(dist), "--v", str(vfile))
    doc = json.loads(r.stdout)
    assert abs(doc["alpha"] - 0.75) < 1e-12
    assert doc["max_error"] < 1e-9


def test_color_and_cover_cli(tmp_path):
    mg = tmp_path / "mg.json"
    run("gen", "--kind", "multigraph", "--n", "8", "--delta", "12", "--out", str(mg))
    r = run("color", "--instance", str(mg), "--c", "4")
    doc = json.loads(r.stdout)
    assert doc["proper"] and doc["all_colored"]

    cov = tmp_path / "cov.json"
    run("gen", "--kind", "cover", "--n", "8", "--out", str(cov))
    r2 = run("cover", "--instance", str(cov), "--trials", "3000")
    doc2 = json.loads(r2.stdout)
    assert doc2["violations"] == 0


def test_report_csv_roundtrip(tmp_path):
    star = tmp_path / "star.json"
    run("gen", "--kind", "star", "--n", "4", "--out", str(star))
    r = run("round", "--alg", "warmup", "--instance", str(star), "--exact")
    rep = tmp_path / "rep.json"
    rep.write_text(r.stdout)
    r2 = run("report", "--infile", str(rep))
    lines = r2.stdout.strip().splitlines()
    assert lines[0].startswith("offline,arrival,x,prob")
    assert len(lines) == 5


def test_stochastic_cli(tmp_path):
    inst = tmp_path / "st.json"
    run("gen", "--kind", "stochastic", "--n", "4", "--t", "4", "--seed", "2",
        "--out", str(inst))
    r = run("round", "--alg", "stochastic", "--instance", str(inst),
            "--n-runs", "20000")
    doc = json.loads(r.stdout)
    assert doc["ratio"] >= 0.652 - 3 * doc["ratio_ci95"]


def test_exit_code_mapping(monkeypatch):
    import click
    import odrs_lab.cli as cli_mod
    from odrs_lab.errors import InvariantBreach, ValidationFailure

    class Boom:
        def __init__(self, exc):
            self.exc = exc
        def main(self, standalone_mode=False):
            raise self.exc

    monkeypatch.setattr(cli_mod, "cli", Boom(InvariantBreach("x")))
    assert cli_mod.main() == 3
    monkeypatch.setattr(cli_mod, "cli", Boom(ValidationFailure("y")))
    assert cli_mod.main() == 2
    monkeypatch.setattr(cli_mod, "cli", Boom(click.UsageError("z")))
    assert cli_mod.main() == 1


def test_round_sample_emits_matching(tmp_path):
    inst = tmp_path / "i.json"
    run("gen", "--kind", "random", "--n", "5", "--t", "5", "--seed", "8",
        "--out", str(inst))
    r = run("round", "--alg", "odrs", "--instance", str(inst), "--seed", "2",
            "--sample")
    doc = json.loads(r.stdout)
    assert isinstance(doc, list)
    assert all(set(d) == {"arrival", "offline"} for d in doc)
