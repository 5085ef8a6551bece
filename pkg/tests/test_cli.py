import csv
import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from importlib import resources

import numpy as np
import pytest

from shrinkchoice.cli import main, parse_grid
from shrinkchoice.errors import ConfigurationError

SYNTH = str(resources.files("shrinkchoice.data").joinpath("synthetic_subgroups.csv"))
DATA_ARGS = ["--data", SYNTH, "--outcome", "earnings", "--treatment", "treated",
             "--keys", "race,sex,married,worked", "--cost-offset", "774"]


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, *argv, json_out=False):
    args = ["--out-dir", str(tmp_path)] + (["--json"] if json_out else []) + list(argv)
    return main(args)


def test_parse_grid():
    assert parse_grid("0:1:0.25").tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_grid("0.1,0.5").tolist() == [0.1, 0.5]
    for bad in ("1:0:0.1", "0:1:0", "a:b:c", "", "0:1"):
        with pytest.raises(ConfigurationError):
            parse_grid(bad)


def test_eta_single(capsys):
    assert main(["eta", "--a", "0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"a", "t_star", "eta", "eta_prime"}
    assert out["eta"] == pytest.approx(0.17, abs=0.005)


def test_eta_grid(tmp_path):
    assert run(tmp_path, "eta", "--grid", "0:3:0.01") == 0
    rows = read_csv(tmp_path / "eta.csv")
    assert len(rows) == 301
    assert list(rows[0]) == ["a", "eta", "t_star", "eta_prime"]
    eta = np.array([float(r["eta"]) for r in rows])
    assert eta[0] == pytest.approx(0.17, abs=0.005)
    assert np.all(np.diff(eta) > 0)
    plot = read_csv(tmp_path / "eta_plot.csv")
    lo = np.array([float(r["lower_envelope"]) for r in plot])
    hi = np.array([float(r["upper_envelope"]) for r in plot])
    assert np.all(lo <= eta + 1e-9) and np.all(eta <= hi + 1e-9)
    ET.parse(tmp_path / "eta_plot.svg")
    cfg = json.loads((tmp_path / "eta.config.json").read_text())
    assert cfg["seed"] == 0 and cfg["command"] == "eta"


def test_factors(tmp_path):
    assert run(tmp_path, "factors", "--kappa-grid", "0:1:0.01") == 0
    rows = read_csv(tmp_path / "factors.csv")
    for k in ("2", "5", "100"):
        w = np.array([float(r["w_star"]) for r in rows if r["K"] == k])
        kap = np.array([float(r["kappa"]) for r in rows if r["K"] == k])
        assert w[0] == 0.0
        assert np.all(np.diff(w) >= -1e-9)
    w100 = np.array([float(r["w_star"]) for r in rows if r["K"] == "100"])
    assert abs(kap[np.argmax(w100 == 1.0)] - 0.752) <= 0.05


def test_factors_problem_json(tmp_path):
    problem = tmp_path / "problem.json"
    problem.write_text(json.dumps({"sigma": [0.75, 1.25], "p": [0.75, 0.25]}))
    assert run(tmp_path, "factors", "--problem", str(problem), "--kappa-grid", "0:0.5:0.1", json_out=True) == 0
    rows = read_csv(tmp_path / "factors.csv")
    assert len(rows) == 12
    assert not (tmp_path / "factors.svg").exists()


def test_regret_compare_schema_and_claims(tmp_path):
    assert run(tmp_path, "regret-compare", "--sigma", "1,1", "--p", "0.5,0.5",
               "--kappa-grid", "0.1,0.7,1.5", "--starts", "16", "--refine", "3") == 0
    rows = read_csv(tmp_path / "regret_compare.csv")
    assert list(rows[0]) == ["kappa", "kappa_prime", "rule", "max_regret", "method",
                             "thm1", "thm2", "thm3", "thm4"]
    by = {(r["kappa"], r["rule"]): float(r["max_regret"]) for r in rows}
    for k in ("0.1", "0.7", "1.5"):
        assert by[(k, "shrinkage")] <= by[(k, "ces")] + 1e-6
    assert by[("1.5", "shrinkage")] == pytest.approx(by[("1.5", "ces")], abs=1e-9)
    assert by[("1.5", "pooling")] > by[("1.5", "shrinkage")]
    twin = read_csv(tmp_path / "regret_compare_plot.csv")
    assert len(twin) == 9
    svg = (tmp_path / "regret_compare_plot.svg").read_text()
    assert svg.count("<polyline") == 3
    assert 'stroke-dasharray="2,3"' in svg and 'stroke-dasharray="8,4"' in svg


def test_regret_compare_bad_rule(tmp_path, capsys):
    assert run(tmp_path, "regret-compare", "--sigma", "1,1", "--kappa-prime-rule", "2k") == 2
    assert "kappa' rule" in capsys.readouterr().err


def test_bounds(tmp_path, capsys):
    assert run(tmp_path, "bounds", "--sigma", "1,1", "--kappa", "0.3", "--kappa-prime", "0.36", json_out=True) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["thm3"]["inflation"] == 1.0
    assert out["thm1"]["ratio"] <= 1.0


def test_estimate_and_decide_from_json(tmp_path, capsys):
    assert run(tmp_path, "estimate", *DATA_ARGS, "--draws", "20000", json_out=True) == 0
    est = json.loads((tmp_path / "estimates.json").read_text())
    assert len(est["theta_hat"]) == 24
    assert est["dispersion"]["below_null_median"] is True
    capsys.readouterr()
    assert run(tmp_path, "decide", "--estimates", str(tmp_path / "estimates.json"), "--kappa", "500") == 0
    rows = read_csv(tmp_path / "decide.csv")
    assert len(rows) == 24
    assert {r["pooling_decision"] for r in rows} == {"1"}


def test_decide_outputs_and_twins(tmp_path):
    assert run(tmp_path, "decide", *DATA_ARGS, "--kappa", "500") == 0
    rows = read_csv(tmp_path / "decide.csv")
    assert list(rows[0]) == ["group", "theta_hat", "sigma_hat", "w_star", "shrinkage_estimate",
                             "ces_decision", "pooling_decision", "shrinkage_decision"]
    assert any(r["ces_decision"] != r["shrinkage_decision"] for r in rows)
    twin = read_csv(tmp_path / "decide_factors.csv")
    svg = (tmp_path / "decide_factors.svg").read_text()
    # one circle per plotted point plus the legend marker
    assert svg.count("<circle") == len(twin) + 1
    twin = read_csv(tmp_path / "decide_estimates.csv")
    svg = (tmp_path / "decide_estimates.svg").read_text()
    assert svg.count("<circle") == 2 * len(twin) + 2


def test_decide_regression_variant(tmp_path):
    assert run(tmp_path, "decide", *DATA_ARGS, "--kappa", "500", "--variant", "regression", json_out=True) == 0
    rows = read_csv(tmp_path / "decide.csv")
    w = np.array([float(r["w_star"]) for r in rows])
    assert np.all((w >= 0) & (w <= 1))


def test_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["--out-dir", str(d), "--seed", "3", "regret-compare", "--sigma", "0.75,1.25",
                     "--p", "0.75,0.25", "--kappa-grid", "0.2,0.8", "--starts", "8", "--refine", "2"]) == 0
        assert main(["--out-dir", str(d), "estimate", *DATA_ARGS, "--draws", "5000"]) == 0
    for name in sorted(p.name for p in a.iterdir()):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_flag_after_command(tmp_path):
    assert main(["estimate", *DATA_ARGS, "--draws", "1000", "--seed", "5", "--out-dir", str(tmp_path), "--json"]) == 0
    assert json.loads((tmp_path / "estimates.config.json").read_text())["seed"] == 5


def test_exit_codes(tmp_path, capsys):
    assert main(["eta", "--a", "-1"]) == 2
    assert run(tmp_path, "estimate", "--data", str(tmp_path / "missing.csv")) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("y,d,group\n1,3,a\n")
    assert run(tmp_path, "estimate", "--data", str(bad)) == 3
    assert run(tmp_path, "bounds", "--sigma", "1,-1", "--kappa", "0.1") == 2
    with pytest.raises(SystemExit) as exc:
        main(["factors", "--nope"])
    assert exc.value.code == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "shrinkchoice", "eta", "--a", "1"], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["a"] == 1.0
