import csv
import json
import subprocess
import sys

import pytest
import yaml

from logbsde.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERDICT, main
from logbsde.config import DEFAULTS, ExperimentConfig, load_config, validate
from logbsde.errors import ConfigError
from logbsde.runner import SCHEMA_VERSION, classify


def write_cfg(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return str(path)


ZERO_NOISE = {"kind": "forward", "seed": 1, "n_paths": 20, "grid": {"T": 1.0, "n_steps": 4}, "x0": [2.5],
              "coefficients": {"sigma": 0.0}}
SMALL_SOLVE = {"kind": "solve", "seed": 5, "n_paths": 2000, "grid": {"T": 1.0, "n_steps": 10},
               "marks": {"rate": 1.0, "mark": 1.0}, "coefficients": {"sigma": 1.0, "gamma": 1.0},
               "generator": {"name": "log_growth_envelope", "params": {}},
               "solver": {"n_schedule": [4, 8]}, "output": {"csv_paths": 50}}


# -- config -----------------------------------------------------------------------------


def test_defaults_validate_cleanly():
    assert validate(ExperimentConfig.from_dict({})) == []


def test_unknown_key_is_rejected_with_its_path():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"solver": {"betta": 3}})
    assert err.value.field == "solver.betta"


def test_digest_is_stable_and_seed_sensitive():
    a = ExperimentConfig.from_dict({"seed": 3})
    b = ExperimentConfig.from_dict({"seed": 3, "n_paths": DEFAULTS["n_paths"]})
    assert a.digest() == b.digest()
    assert a.with_seed(4).digest() != a.digest()
    assert len(a.digest()) == 64


def test_band_and_kappa_diagnostics():
    low_beta = validate(ExperimentConfig.from_dict({"solver": {"beta": 1.5}}))
    assert any("outside admissible band" in m for m in low_beta) and classify(low_beta) == "band"
    big_kappa = validate(ExperimentConfig.from_dict({"solver": {"kappa": 0.8}}))
    assert any("violates the constraint 0 < kappa < 2 - alpha_bar" in m for m in big_kappa)


def test_registry_diagnostics():
    diags = validate(ExperimentConfig.from_dict({"generator": {"name": "cubic"}}))
    assert diags and "unknown generator" in diags[0] and classify(diags) == "registry"
    diags = validate(ExperimentConfig.from_dict({"coefficients": {"gamma": 1.0}}))
    assert any("mark measure" in m for m in diags)


def test_shipped_configs_validate():
    import pathlib
    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.yaml"))
    assert files
    for f in files:
        assert validate(load_config(f)) == [], f.name


# -- cli ----------------------------------------------------------------------------------


def test_forward_zero_noise_run(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", write_cfg(tmp_path, ZERO_NOISE), "--out-dir", str(out)]) == EXIT_OK
    rows = list(csv.DictReader((out / "paths.csv").open()))
    assert len(rows) == 20 * 5
    assert all(float(r["x_0"]) == 2.5 for r in rows)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["schema_version"] == SCHEMA_VERSION
    assert manifest["outputs"] == ["paths.csv", "summary.json"]
    assert manifest["verdict"] == "pass" and manifest["seed"] == 1


def test_solve_run_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SOLVE)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out-dir", str(a)]) == EXIT_OK
    assert main(["run", "--config", cfg, "--out-dir", str(b)]) == EXIT_OK
    for name in ("solution.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma, mb = (json.loads((p / "manifest.json").read_text()) for p in (a, b))
    assert ma["config_hash"] == mb["config_hash"]
    summary = json.loads((a / "summary.json").read_text())
    assert [r["n"] for r in summary["outer"]["table"]] == [4, 8]
    assert summary["schema_version"] == SCHEMA_VERSION


def test_seed_override_changes_outputs(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SOLVE)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", cfg, "--out-dir", str(a)])
    main(["run", "--config", cfg, "--seed", "6", "--out-dir", str(b)])
    assert (a / "solution.csv").read_bytes() != (b / "solution.csv").read_bytes()
    assert json.loads((b / "manifest.json").read_text())["seed"] == 6


def test_validate_command(tmp_path, capsys):
    assert main(["validate", "--config", write_cfg(tmp_path, ZERO_NOISE)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "ok"
    bad = dict(ZERO_NOISE, solver={"beta": 1.5})
    assert main(["validate", "--config", write_cfg(tmp_path, bad, "bad.yaml")]) == EXIT_CONFIG
    assert "outside admissible band" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", write_cfg(tmp_path, {"kind": "forward", "nonsense": 1})]) == EXIT_CONFIG
    assert "error[" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    # a singular diffusion fails the sampled coefficient conditions: the verdict fails
    failing = {"kind": "assumptions", "seed": 2, "n_paths": 200, "grid": {"T": 1.0, "n_steps": 5},
               "coefficients": {"sigma": 0.0}, "assumptions": {"count": 256, "schedule": [4, 8]}}
    out = tmp_path / "fail"
    assert main(["run", "--config", write_cfg(tmp_path, failing, "f.yaml"), "--out-dir", str(out)]) == EXIT_VERDICT
    report = json.loads((out / "assumptions.json").read_text())
    assert report["verdict"] == "fail"
    assert report["checks"]["coefficients"]["hard_violations"][0]["condition"] == "sigma_invertible"


def test_unwritable_output_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = main(["run", "--config", write_cfg(tmp_path, ZERO_NOISE), "--out-dir", str(blocker / "sub")])
    assert code == EXIT_CONFIG
    assert "error[io]" in capsys.readouterr().err


def test_control_run_writes_policy_and_passes(tmp_path):
    cfg = {"kind": "control", "seed": 2, "n_paths": 10_000, "grid": {"T": 1.0, "n_steps": 10},
           "problem": {"name": "bang_bang", "params": {}}, "control": {"n_random": 5, "reweight": True}}
    out = tmp_path / "ctl"
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--out-dir", str(out)]) == EXIT_OK
    report = json.loads((out / "optimality.json").read_text())
    assert report["verdict"] == "pass" and report["reweighting_agrees"]
    assert len(report["optimality"]["challengers"]) == 4 + 5 - 2  # D2 has one point: two distinct corners
    assert (out / "policy.csv").read_text().startswith("step,t,x_lo,x_hi,ubar_0,ucheck_0")
    assert "verdict: pass" in (out / "optimality.txt").read_text()


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "logbsde.cli", "validate", "--config", write_cfg(tmp_path, ZERO_NOISE)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "ok"
