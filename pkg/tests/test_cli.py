import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from effdyn import cli, io
from effdyn.checks import CheckResult
from effdyn.cli import COMMANDS, main
from effdyn.config import CONFIG_SCHEMA, config_hash, default_config_path, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def bd3_config():
    return json.loads((CONFIGS / "bd3.json").read_text())


# -- exit codes ------------------------------------------------------------------------


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 64


def test_unknown_subcommand(tmp_path, capsys):
    assert main(["frobnicate", "--out", str(tmp_path / "o")]) == 64
    assert "unknown subcommand" in capsys.readouterr().err


def test_missing_config_exits_2_without_artifacts(tmp_path):
    out = tmp_path / "o"
    assert main(["spectrum", "--config", str(tmp_path / "nope.json"), "--out", str(out)]) == 2
    assert not out.exists()


def test_invalid_config_exits_2(tmp_path):
    cfg = bd3_config()
    cfg["spectrum"] = {"m": -1}
    assert main(["spectrum", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    cfg = bd3_config()
    cfg["bogus"] = 1
    assert main(["spectrum", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_underscore_keys_are_comments(tmp_path):
    cfg = bd3_config()
    cfg["_note"] = "ignored"
    assert main(["spectrum", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0


def test_bad_option_exits_2(tmp_path):
    assert main(["spectrum", "--seed", "abc"]) == 2


def test_missing_block_exits_2(tmp_path):
    cfg = bd3_config()
    cfg.pop("sets", None)
    assert main(["committor", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_spectrum_of_nonreversible_model_exits_2(tmp_path):
    cfg = {"seed": 0, "system": {"fixture": "3cycle-biased"}}
    assert main(["spectrum", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_failed_invariant_exits_3(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        return [CheckResult("forced", 1.0, 1e-12, False)]

    monkeypatch.setattr(cli, "run_all", broken)
    assert main(["verify-all", "--out", str(tmp_path / "o")]) == 3


# -- outputs --------------------------------------------------------------------------------


def test_spectrum_csv_for_bd3(tmp_path):
    out = tmp_path / "o"
    assert main(["spectrum", "--config", str(CONFIGS / "bd3.json"), "--out", str(out)]) == 0
    rows = io.read_csv(out / "spectrum.csv")
    assert np.allclose([float(r["eigenvalue"]) for r in rows], [1.0, 0.5, 0.0], atol=1e-12)
    manifest = io.read_json(out / "manifest.json")
    assert manifest["command"] == "spectrum"
    assert "spectrum.csv" in manifest["files"]


def test_every_subcommand_on_default_config(tmp_path):
    out = tmp_path / "o"
    for cmd in COMMANDS:
        assert main([cmd, "--out", str(out), "--seed", "3"]) == 0, cmd
    names = {p.name for p in out.iterdir()}
    expected = {
        "operator.json",
        "operator.bin",
        "mu.csv",
        "spectrum.csv",
        "committor.json",
        "rates.csv",
        "effective.json",
        "compare.json",
        "scan.csv",
        "langevin.json",
        "verify.csv",
        "manifest.json",
    }
    assert expected <= names
    rates = io.read_json(out / "rates.json")
    assert abs(rates["k_flux_A"] - 1 / 48) < 1e-15
    model = io.read_model(out / "operator.json")
    assert model.n == 4
    scan = io.read_json(out / "scan.json")
    assert scan["argmin"] == 1.0


def test_manifest_records_hashes(tmp_path):
    out = tmp_path / "o"
    assert main(["committor", "--out", str(out)]) == 0
    m = io.read_json(out / "manifest.json")
    cfg = load_config(None)
    assert m["config_sha256"] == config_hash(cfg)
    assert m["seed"] == cfg["seed"]
    for name, digest in m["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest


def test_verify_all_default_is_green_and_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["verify-all", "--out", str(a), "--seed", "11"]) == 0
    assert main(["verify-all", "--out", str(b), "--seed", "11", "--threads", "2"]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rows = io.read_csv(a / "verify.csv")
    assert rows and all(r["passed"] == "pass" for r in rows)


def test_shipped_configs_validate():
    assert load_config(None)["seed"] >= 0
    for path in sorted(CONFIGS.glob("*.json")):
        load_config(path)
    assert json.loads(default_config_path().read_text()) == json.loads((CONFIGS / "default.json").read_text())
    assert CONFIG_SCHEMA["additionalProperties"] is False


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "effdyn.cli", "spectrum", "--config", str(CONFIGS / "bd3.json"), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "effdyn.cli"], capture_output=True, text=True)
    assert proc.returncode == 64


@pytest.mark.parametrize("value", ["0", "1", "3"])
def test_threads_environment_fallback(tmp_path, monkeypatch, value):
    monkeypatch.setenv("EFFDYN_THREADS", value)
    code = main(["spectrum", "--config", str(CONFIGS / "bd3.json"), "--out", str(tmp_path / "o")])
    assert code == (2 if value == "0" else 0)
