import io
import json
import math
import subprocess
import sys

import pytest
import yaml

from gsplab.cli import run


def invoke(tmp_path, command, cfg=None, *extra):
    argv = [command, *extra]
    if cfg is not None:
        path = tmp_path / f"{command}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        argv += ["--config", str(path)]
    out, err = io.StringIO(), io.StringIO()
    code = run(argv, out, err)
    return code, out.getvalue(), err.getvalue()


def test_measure_info(tmp_path):
    code, out, _ = invoke(tmp_path, "measure-info", {"measure": {"catalog": "uniform"}})
    doc = json.loads(out)
    assert code == 0
    assert doc["total_mass"] == pytest.approx(1.0)


def test_estimate_iid_exact(tmp_path):
    cfg = {"measure": {"catalog": "uniform"}, "params": {"N": 5}}
    code, out, _ = invoke(tmp_path, "estimate", cfg)
    assert code == 0
    assert json.loads(out)["log_p"] == pytest.approx(-5 * math.log(2), abs=1e-9)


def test_curve_csv_and_report(tmp_path):
    curve_cfg = {"measure": {"catalog": "power", "args": {"alpha": -0.5}},
                 "params": {"N_range": {"start": 4, "stop": 12, "step": 2}, "method": "orthant",
                            "n_samples": 4096}}
    curve_path = tmp_path / "curve.csv"
    code, _, _ = invoke(tmp_path, "curve", curve_cfg, "--format", "csv", "--out", str(curve_path))
    assert code == 0
    assert curve_path.read_text().splitlines()[0] == "N,log_p,se_log,method,grid_step,n_samples,seed"
    bounds_path = tmp_path / "bounds.csv"
    bounds_cfg = {"measure": curve_cfg["measure"], "params": {"N_list": [4, 6, 8, 10, 12]}}
    assert invoke(tmp_path, "bounds", bounds_cfg, "--format", "csv", "--out", str(bounds_path))[0] == 0
    code, out, _ = invoke(tmp_path, "report", None, str(curve_path), str(bounds_path))
    doc = json.loads(out)
    assert code == 0
    assert len(doc["ordering"]) == 5
    assert all(row["lower_le_estimate"] for row in doc["ordering"])
    assert "PowerOfN" in doc["slope_fits"]


def test_regimes(tmp_path):
    cfg = {"params": {"features": {"alpha_at_zero": "gap", "tail": "power(3)"}, "domain": "continuous"}}
    code, out, _ = invoke(tmp_path, "regimes", cfg)
    classes = [c["class"] for c in json.loads(out)["classes"]]
    assert code == 0 and classes == ["Quadratic", "ExpExp", "PowerLog"]


def test_cheby_scaled_chebyshev(tmp_path):
    code, out, _ = invoke(tmp_path, "cheby", {"params": {"k_list": [2, 3], "N": 20}})
    assert code == 0
    assert "implied_c0" in out


def test_verify_small(tmp_path):
    cfg = {"params": {"checks": ["tail_bounds", "iid_average", "min_norm"],
                      "iid_average": {"n_pairs": 50}, "min_norm": {"n_polys": 50}}}
    code, out, _ = invoke(tmp_path, "verify", cfg, "--seed", "3")
    assert code == 0 and json.loads(out)["all_passed"]


def test_exit_codes(tmp_path):
    bad = {"measure": {"segments": [{"form": "power", "support": [0, 1], "params": {"c": 1, "alpha": -1.5}}]}}
    code, _, err = invoke(tmp_path, "measure-info", bad)
    assert code == 2 and json.loads(err)["error"] == "validation" and "power" in json.loads(err)["message"]
    code, _, err = invoke(tmp_path, "bounds", {"measure": {"catalog": "uniform", "domain": "continuous"},
                                               "params": {"N_list": [5]}})
    assert code in (0, 3)
    code, _, _ = invoke(tmp_path, "report", None)
    assert code == 2
    code, _, _ = invoke(tmp_path, "estimate", {"measure": {"catalog": "uniform"}, "params": {"N": 3}},
                        "--threads", "0")
    assert code == 2
    code, _, _ = invoke(tmp_path, "regimes", {"params": {"features": {"alpha_at_zero": 0.0, "tail": "power(2)"},
                                                         "domain": "integer"}})
    assert code == 2


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"measure": {"catalog": "gap"}, "params": {"N": 2}}))
    proc = subprocess.run([sys.executable, "-m", "gsplab", "estimate", "--config", str(cfg)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["method"] == "ExactSmall"
