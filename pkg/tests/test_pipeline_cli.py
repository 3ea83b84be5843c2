import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from reachsyn.cli import main
from reachsyn.config import load_config
from reachsyn.kernels import BACKEND
from reachsyn.pipeline import Pipeline, load_action_table, save_action_table

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _toy_config(tmp_path, name="run", seed=7):
    cfg = load_config(CONFIGS / "steer_toy.toml",
                      output_override=str(tmp_path / name), seed_override=seed)
    return cfg


def _strip_timings(manifest: dict) -> dict:
    out = json.loads(json.dumps(manifest))
    out.pop("timings_sec", None)
    return out


def test_full_pipeline_artifacts(tmp_path):
    cfg = _toy_config(tmp_path)
    manifest = Pipeline(cfg).run()
    out = tmp_path / "run"
    for name in ("manifest.json", "imdp.npz", "actions.jsonl", "scheduler.npz",
                 "values.csv", "heatmap.csv", "imdp.tra", "imdp.lab",
                 "validation.json"):
        assert (out / name).exists(), name
    assert (out / "trajectories" / "traj_000.csv").exists()
    assert manifest["imdp"]["states"] == 18  # 16 cells + absorbing + sink
    assert manifest["stages"]["dataset"]["triples"] == 16 * 9 * 64
    assert 0.0 <= manifest["imdp"]["initial_value"] <= 1.0
    assert manifest["stages"]["simulation"]["passed"]


def test_pipeline_deterministic_across_runs_and_threads(tmp_path):
    if BACKEND == "numba":
        import numba
    cfg_a = _toy_config(tmp_path, "a")
    if BACKEND == "numba":
        numba.set_num_threads(1)
    man_a = Pipeline(cfg_a).run()
    cfg_b = _toy_config(tmp_path, "b")
    if BACKEND == "numba":
        numba.set_num_threads(min(2, numba.config.NUMBA_NUM_THREADS))
    man_b = Pipeline(cfg_b).run()

    a_cfg, b_cfg = man_a["config"], man_b["config"]
    a_cfg["run"]["output"] = b_cfg["run"]["output"] = "X"
    assert _strip_timings(man_a) != {} and a_cfg == b_cfg
    for key in ("imdp", "stages"):
        assert _strip_timings(man_a)[key] == _strip_timings(man_b)[key]
    for name in ("imdp.tra", "imdp.lab", "values.csv", "heatmap.csv",
                 "validation.json"):
        assert ((tmp_path / "a" / name).read_bytes()
                == (tmp_path / "b" / name).read_bytes()), name
    for t in range(3):
        name = f"trajectories/traj_{t:03d}.csv"
        assert ((tmp_path / "a" / name).read_bytes()
                == (tmp_path / "b" / name).read_bytes())


def test_manifest_config_roundtrip(tmp_path):
    from reachsyn.config import config_from_dict

    cfg = _toy_config(tmp_path, "first")
    man = Pipeline(cfg).run()
    cfg2 = config_from_dict(man["config"], output_override=str(tmp_path / "second"))
    man2 = Pipeline(cfg2).run()
    assert _strip_timings(man)["imdp"] == _strip_timings(man2)["imdp"]
    assert ((tmp_path / "first" / "values.csv").read_bytes()
            == (tmp_path / "second" / "values.csv").read_bytes())


def test_action_table_cache_reused(tmp_path, caplog):
    cfg = _toy_config(tmp_path)
    pipe = Pipeline(cfg)
    t1 = pipe.actions()
    t2 = pipe.actions()
    assert t1.lam == t2.lam
    cache_files = list((tmp_path / "run" / "cache").glob("actions_*.npz"))
    assert len(cache_files) == 1


def test_action_table_save_load_roundtrip(tmp_path):
    cfg = _toy_config(tmp_path)
    pipe = Pipeline(cfg)
    table = pipe.actions()
    save_action_table(table, tmp_path / "t.npz")
    loaded = load_action_table(tmp_path / "t.npz")
    assert loaded.Lambda == table.Lambda
    assert loaded.lam == table.lam
    assert set(loaded.controls) == set(table.controls)
    for key in table.controls:
        assert np.array_equal(loaded.controls[key][0], table.controls[key][0])
        assert np.array_equal(loaded.controls[key][1], table.controls[key][1])


def test_staged_cli_invocation(tmp_path):
    out = str(tmp_path / "staged")
    base = ["--config", str(CONFIGS / "steer_toy.toml"), "--output", out, "-q"]
    assert main(["abstract", *base]) == 0
    assert (Path(out) / "imdp.npz").exists()
    assert main(["synthesize", *base]) == 0
    assert (Path(out) / "values.csv").exists()
    assert main(["export", *base]) == 0
    assert (Path(out) / "imdp.tra").exists()
    assert main(["simulate", *base, "--runs", "200"]) == 0
    report = json.loads((Path(out) / "validation.json").read_text())
    assert report["runs"] == 200 and report["passed"]


def test_cli_simulate_deterministic(tmp_path):
    outs = []
    for name in ("s1", "s2"):
        out = str(tmp_path / name)
        base = ["--config", str(CONFIGS / "steer_toy.toml"), "--output", out,
                "--seed", "7", "-q"]
        assert main(["run", *base]) == 0
        outs.append(json.loads((Path(out) / "validation.json").read_text()))
    assert outs[0] == outs[1]


def test_cli_sweep_value_monotone_in_cap(tmp_path):
    out = str(tmp_path / "sweep")
    base = ["--config", str(CONFIGS / "steer_toy.toml"), "--output", out, "-q"]
    assert main(["sweep", *base, "--lambda", "0.5,1.5"]) == 0
    summary = json.loads((Path(out) / "sweep.json").read_text())
    assert set(summary) == {"0.5", "1.5"}
    assert summary["0.5"]["enabled_actions"] <= summary["1.5"]["enabled_actions"]
    assert summary["0.5"]["initial_value"] <= summary["1.5"]["initial_value"] + 1e-9
    assert (Path(out) / "values_lambda0p5.csv").exists()
    assert (Path(out) / "values_lambda1p5.csv").exists()


def test_cli_sweep_rejects_cap_above_build(tmp_path):
    out = str(tmp_path / "sweepbad")
    base = ["--config", str(CONFIGS / "steer_toy.toml"), "--output", out, "-q"]
    with pytest.raises(ValueError):
        main(["sweep", *base, "--lambda", "2.5"])


def test_cli_rejects_unknown_flags():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--config", "x.toml", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_cli_help_mentions_all_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for sub in ("run", "abstract", "synthesize", "simulate", "export", "sweep"):
        assert sub in text


def test_config_validation(tmp_path):
    bad = tmp_path / "bad.toml"
    src = (CONFIGS / "steer_toy.toml").read_text()
    bad.write_text(src.replace("max_scaling = 1.5", "max_scaling = -1.0"))
    with pytest.raises(ValueError):
        load_config(bad)
    missing = tmp_path / "missing.toml"
    missing.write_text(src.replace("noise_samples = 500\n", ""))
    with pytest.raises(KeyError):
        load_config(missing)


def test_config_defaults_documented():
    cfg = load_config(CONFIGS / "steer_toy.toml")
    assert cfg.vi_tol == 1e-6
    assert cfg.vi_max_iter == 10_000
    assert math.isinf(cfg.horizon)
    assert cfg.beta_mode == "transitions"
