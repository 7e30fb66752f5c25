import json
from pathlib import Path

import numpy as np
import pytest

from ruinvest.cli import main, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _read_csv_column(path, name):
    lines = [l for l in Path(path).read_text().splitlines()
             if l and not l.startswith("#")]
    header = lines[0].split(",")
    i = header.index(name)
    return [row.split(",")[i] for row in lines[1:]]


def test_parse_config_example1():
    cfg = parse_config(CONFIGS / "example1.cfg")
    assert cfg["c"] == "0.02"
    assert cfg["claim.kind"] == "exponential"


def test_parse_config_rejects_unknown_key(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("c = 0.02\nbogus = 1\n")
    with pytest.raises(ValueError):
        parse_config(bad)


def test_parse_config_rejects_missing_keys(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("c = 0.02\n")
    with pytest.raises(ValueError):
        parse_config(bad)


def test_solve_writes_artifacts(tmp_path):
    rc = main(["solve", "--config", str(CONFIGS / "example1.cfg"),
               "--out-dir", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "curve.csv").exists()
    sidecar = json.loads((tmp_path / "curve.json").read_text())
    assert [s["regime"] for s in sidecar["segments"]] == ["A", "B", "A", "INT"]
    assert "manifest" in sidecar
    header = [l for l in (tmp_path / "curve.csv").read_text().splitlines()
              if not l.startswith("#")][0]
    assert header == "x,V,Vp,Vpp,J,phi,theta_star,regime"


def test_solve_deterministic_bytes(tmp_path):
    d1, d2 = tmp_path / "one", tmp_path / "two"
    for d in (d1, d2):
        assert main(["solve", "--config", str(CONFIGS / "example3.cfg"),
                     "--out-dir", str(d)]) == 0
    assert (d1 / "curve.csv").read_bytes() == (d2 / "curve.csv").read_bytes()


def test_policy_roundtrip_no_drift(tmp_path):
    # cmd_policy re-reads cmd_solve's CSV: identical theta_star columns
    assert main(["solve", "--config", str(CONFIGS / "example1.cfg"),
                 "--out-dir", str(tmp_path)]) == 0
    assert main(["policy", "--config", str(CONFIGS / "example1.cfg"),
                 "--out-dir", str(tmp_path)]) == 0
    th_curve = _read_csv_column(tmp_path / "curve.csv", "theta_star")
    th_policy = _read_csv_column(tmp_path / "policy.csv", "theta_star")
    assert th_curve == th_policy


def test_policy_thresholds_example1(tmp_path):
    assert main(["policy", "--config", str(CONFIGS / "example1.cfg"),
                 "--out-dir", str(tmp_path)]) == 0
    text = (tmp_path / "policy.csv").read_text()
    assert f"# threshold extreme_bound = {40.0/19.0:.17g}" in text
    meta = json.loads((tmp_path / "policy.json").read_text())
    assert len(meta["switch_points"]) == 3


def test_policy_thresholds_omitted_for_equal_bounds(tmp_path):
    cfg = tmp_path / "ab.cfg"
    cfg.write_text("c = 0.02\nlambda = 0.09\nmu = 0.02\nr = 0.015\nsigma = 0.1\n"
                   "a = 2\nb = 2\nclaim.kind = exponential\nclaim.mean = 1\n")
    assert main(["policy", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
    assert "extreme_bound" not in (tmp_path / "policy.csv").read_text()


def test_policy_equal_rates_emits_bang_bang(tmp_path):
    cfg = tmp_path / "eq.cfg"
    cfg.write_text("c = 0.02\nlambda = 0.09\nmu = 0.015\nr = 0.015\nsigma = 0.1\n"
                   "a = 1\nb = 20\nclaim.kind = exponential\nclaim.mean = 1\n")
    assert main(["policy", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
    thetas = {float(v) for v in _read_csv_column(tmp_path / "policy.csv", "theta_star")}
    assert thetas <= {0.0, 1.0, -20.0}


def test_validation_exit_code(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("c = 0.02\nlambda = 0.09\nmu = 0.02\nr = 0.015\nsigma = 0.1\n"
                   "a = 1\nb = 0\nclaim.kind = exponential\nclaim.mean = 1\n")
    assert main(["solve", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 1


def test_oracle_mode_verify(tmp_path):
    rc = main(["verify", "--config", str(CONFIGS / "oracle.cfg"),
               "--out-dir", str(tmp_path), "--oracle-mode",
               "--n-paths", "20000", "--seed", "77"])
    assert rc == 0
    lines = [l for l in (tmp_path / "verify.csv").read_text().splitlines()
             if l and not l.startswith("#")]
    assert lines[0] == "x0,expected,p_hat,ci_half,pass"
    assert all(row.split(",")[-1] == "1" for row in lines[1:])


def test_oracle_mode_noisy_gate_scales(tmp_path):
    # few paths widen the interval; the 2-CI gate still passes
    rc = main(["verify", "--config", str(CONFIGS / "oracle.cfg"),
               "--out-dir", str(tmp_path), "--oracle-mode",
               "--n-paths", "400", "--seed", "77"])
    assert rc == 0


def test_solve_refuses_oracle_mode(tmp_path):
    rc = main(["solve", "--config", str(CONFIGS / "oracle.cfg"),
               "--out-dir", str(tmp_path), "--oracle-mode"])
    assert rc == 1


def test_verify_example1_small_sample(tmp_path):
    rc = main(["verify", "--config", str(CONFIGS / "example1.cfg"),
               "--out-dir", str(tmp_path), "--n-paths", "3000", "--seed", "77"])
    assert rc == 0
    lines = [l for l in (tmp_path / "verify.csv").read_text().splitlines()
             if l and not l.startswith("#")]
    assert [row.split(",")[0] for row in lines[1:]] == ["1", "5", "10"]


def test_compare_emits_all_policies(tmp_path):
    rc = main(["compare", "--config", str(CONFIGS / "example1.cfg"),
               "--out-dir", str(tmp_path), "--n-paths", "1000", "--seed", "7"])
    assert rc == 0
    policies = set(_read_csv_column(tmp_path / "compare.csv", "policy"))
    assert {"feedback-optimal", "const(a)", "const(-b)", "const(0)",
            "noshort-clamped", "noshort-resolved"} <= policies
