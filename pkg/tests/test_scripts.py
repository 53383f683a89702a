from __future__ import annotations

import importlib.util
import json
from pathlib import Path

import numpy as np
import pandas as pd

from proxsurv.cli import build_parser, build_run_config
from proxsurv.cli import main as cli_main

SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"


def load(name):
    spec = importlib.util.spec_from_file_location(name, SCRIPTS / f"{name}.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def fake_rhc(n=300, seed=0):
    """Synthetic frame with the raw RHC layout (values are made up)."""
    rng = np.random.default_rng(seed)
    adm = rng.integers(11000, 12000, n)
    died = rng.uniform(size=n) < 0.6
    frame = pd.DataFrame({
        "Unnamed: 0": np.arange(1, n + 1),
        "cat1": rng.choice(["ARF", "CHF", "COPD"], n),
        "cat2": rng.choice(["Cirrhosis", None], n),
        "sadmdte": adm,
        "dthdte": np.where(died, adm + rng.integers(1, 400, n), np.nan),
        "lstctdte": adm + rng.integers(1, 400, n),
        "death": np.where(died, "Yes", "No"),
        "age": rng.uniform(20, 90, n),
        "sex": rng.choice(["Male", "Female"], n),
        "aps1": rng.normal(50, 10, n),
        "pafi1": rng.normal(220, 50, n),
        "paco21": rng.normal(38, 5, n),
        "ph1": rng.normal(7.4, 0.1, n),
        "hema1": rng.normal(31, 5, n),
        "swang1": rng.choice(["RHC", "No RHC"], n),
        "adld3p": np.where(rng.uniform(size=n) < 0.5, np.nan, 1.0),
        "dth30": rng.choice(["Yes", "No"], n),
        "ptid": np.arange(n),
    })
    return frame, died


def test_prepare_rhc_roles():
    mod = load("prepare_rhc")
    raw, died = fake_rhc()
    frame, schema, ncos, dropped = mod.prepare(raw)
    assert dropped == ["adld3p"]
    assert schema["exposure"] == ["rhc"] and schema["nce"] == ["pafi1", "paco21"]
    assert [d["name"] for d in ncos] == ["ph1", "hema1"]
    assert "ptid" not in frame and "dth30" not in frame and "Unnamed: 0" not in frame
    assert {"age", "aps1", "cat1_COPD", "cat2_missing", "sex_Male"} <= set(schema["covariates"])
    np.testing.assert_array_equal(frame["status"], died.astype(int))
    expect = np.where(died, raw["dthdte"], raw["lstctdte"]) - raw["sadmdte"]
    np.testing.assert_allclose(frame["time"], expect / 365.25)
    assert not frame.isna().any().any()


def test_prepare_rhc_end_to_end(tmp_path, capsys):
    mod = load("prepare_rhc")
    raw, _ = fake_rhc()
    raw.to_csv(tmp_path / "rhc.csv", index=False)
    assert mod.main([str(tmp_path / "rhc.csv"), "--out-dir", str(tmp_path / "out")]) == 0
    capsys.readouterr()
    code = cli_main(["fit", "--config", str(tmp_path / "out" / "rhc_fit.yaml")])
    doc = json.loads(capsys.readouterr().out)
    assert code == 0
    assert set(doc["methods"]) == {"p2sls", "unadjusted", "adjusted_x", "adjusted_xzw"}


def test_run_study_script(tmp_path, capsys):
    mod = load("run_study")
    out = tmp_path / "s.csv"
    assert mod.main(["--output", str(out), "--n", "150", "--reps", "2", "--beta-u", "0", "1",
                     "--c-u", "1", "--ncos", "w1"]) == 0
    assert "coverage" in capsys.readouterr().out
    assert len(pd.read_csv(out)) == 6
    assert json.loads(out.with_suffix(".manifest.json").read_text())["ncos"] == ["w1"]


def test_shipped_configs_parse():
    configs = sorted((SCRIPTS.parent / "configs").glob("*.yaml"))
    assert len(configs) >= 3
    for path in configs:
        command = "simulate" if path.name.startswith("simulate") else "fit"
        cfg = build_run_config(build_parser().parse_args([command, "--config", str(path)]))
        assert cfg.command == command
        if command == "simulate":
            assert cfg.grid["reps"] == 1000 and len(cfg.grid["beta_U"]) == 9
        else:
            assert cfg.input.name == "example_data.csv" and cfg.nco_specs
