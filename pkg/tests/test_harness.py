"""Harness tests: config validation, run artifacts, resumability, CLI, plots."""

import json
import os

import numpy as np
import pytest

from smrl.episodes import read_episode_log
from smrl.errors import ConfigError
from smrl.harness.cli import main as cli_main
from smrl.harness.config import (
    ExperimentConfig,
    load_config,
    make_smoother,
    parse_config,
    serialize_config,
    set_config_path,
)
from smrl.harness.run import run, sweep
from smrl.kernels import Kernel
from smrl.episodes import EmaParams
from smrl.metrics import read_metrics_csv


def base_config_dict(out_dir, **overrides):
    data = {
        "env_id": "dense_reach",
        "out_dir": str(out_dir),
        "seeds": [0],
        "total_env_steps": 400,
        "smoothing": {"kind": "gaussian", "sigma": 2.0},
        "model": {"latent_dim": 6, "hidden_layers": 2, "hidden_units": 16,
                  "history_stack": 2, "learning_rate": 1e-3, "momentum": 0.9,
                  "batch": 4, "seq_len": 6, "grad_clip": 100.0},
        "planner": {"horizon": 5, "population": 8, "elites": 2, "iterations": 2,
                    "gamma": 0.99, "action_noise_floor": 0.05, "seed": 0},
        "train_ratio": 30,
        "eval_every": 200,
        "checkpoint_every_episodes": 2,
    }
    data.update(overrides)
    return data


class TestConfig:
    def test_roundtrip(self, tmp_path):
        cfg = parse_config(base_config_dict(tmp_path))
        assert parse_config(serialize_config(cfg)) == cfg

    def test_unknown_top_level_key(self, tmp_path):
        data = base_config_dict(tmp_path)
        data["train_ration"] = 16
        with pytest.raises(ConfigError, match="train_ration"):
            parse_config(data)

    def test_unknown_nested_key_reports_path(self, tmp_path):
        data = base_config_dict(tmp_path)
        data["model"]["hiden_units"] = 3
        with pytest.raises(ConfigError, match="model.hiden_units"):
            parse_config(data)

    def test_smoothing_requires_matching_param(self, tmp_path):
        data = base_config_dict(tmp_path, smoothing={"kind": "gaussian"})
        with pytest.raises(ConfigError, match="sigma"):
            parse_config(data)
        data = base_config_dict(tmp_path, smoothing={"kind": "none", "sigma": 1.0})
        with pytest.raises(ConfigError, match="sigma"):
            parse_config(data)
        data = base_config_dict(tmp_path, smoothing={"kind": "ema", "alpha": 0.3, "delta": 3})
        with pytest.raises(ConfigError, match="delta"):
            parse_config(data)

    def test_unknown_env_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="env_id"):
            parse_config(base_config_dict(tmp_path, env_id="atari"))

    def test_make_smoother_kinds(self):
        gauss = make_smoother(parse_config(base_config_dict("/tmp/x")).smoothing)
        assert isinstance(gauss, Kernel) and gauss.kind == "gaussian"
        cfg = parse_config(base_config_dict("/tmp/x", smoothing={"kind": "ema", "alpha": 0.3}))
        assert make_smoother(cfg.smoothing) == EmaParams(alpha=0.3)
        cfg = parse_config(base_config_dict("/tmp/x", smoothing={"kind": "none"}))
        assert make_smoother(cfg.smoothing) is None

    def test_set_config_path_for_sweeps(self, tmp_path):
        cfg = parse_config(base_config_dict(tmp_path))
        swept = set_config_path(cfg, "smoothing.sigma", 5.0)
        assert swept.smoothing.sigma == 5.0
        swept = set_config_path(cfg, "planner.horizon", 7)
        assert swept.planner.horizon == 7
        with pytest.raises(ConfigError):
            set_config_path(cfg, "nope.nope", 1)

    def test_load_config_with_seed_offset(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(base_config_dict(tmp_path, seeds=[0, 1])))
        cfg = load_config(path, seed_offset=100)
        assert cfg.seeds == (100, 101)


class TestRun:
    def test_zero_steps_writes_manifest_and_empty_csv(self, tmp_path):
        cfg = parse_config(base_config_dict(tmp_path / "z", total_env_steps=0))
        result = run(cfg)
        manifest = json.loads((tmp_path / "z" / "manifest.json").read_text())
        assert manifest["config"]["env_id"] == "dense_reach"
        csv = (tmp_path / "z" / "metrics.csv").read_text()
        assert csv.startswith("env_steps,")
        assert len(csv.strip().splitlines()) == 1
        assert result["seeds"][0]["env_steps"] == 0

    def test_artifacts_written(self, tmp_path):
        cfg = parse_config(base_config_dict(tmp_path / "a"))
        run(cfg)
        seed_dir = tmp_path / "a" / "seed_0"
        for name in ("metrics.csv", "model.smrl", "checkpoint.pkl",
                     "eval_episodes.jsonl", "summary.json"):
            assert (seed_dir / name).exists(), name
        rows = read_metrics_csv(seed_dir / "metrics.csv")
        assert len(rows) == 2  # evals at 200 and 400
        eval_eps = read_episode_log(seed_dir / "eval_episodes.jsonl")
        assert len(eval_eps) == 2

    def test_metrics_csv_bytes_reproducible(self, tmp_path):
        cfg_a = parse_config(base_config_dict(tmp_path / "r1"))
        cfg_b = parse_config(base_config_dict(tmp_path / "r2"))
        run(cfg_a)
        run(cfg_b)
        a = (tmp_path / "r1" / "seed_0" / "metrics.csv").read_bytes()
        b = (tmp_path / "r2" / "seed_0" / "metrics.csv").read_bytes()
        assert a == b
        assert (tmp_path / "r1" / "metrics.csv").read_bytes() == \
            (tmp_path / "r2" / "metrics.csv").read_bytes()

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg_full = parse_config(base_config_dict(tmp_path / "full"))
        run(cfg_full)
        full_csv = (tmp_path / "full" / "seed_0" / "metrics.csv").read_bytes()

        cfg_int = parse_config(base_config_dict(tmp_path / "int"))
        with pytest.raises(KeyboardInterrupt):
            run(cfg_int, interrupt_after=3)
        run(cfg_int, resume=True)
        resumed_csv = (tmp_path / "int" / "seed_0" / "metrics.csv").read_bytes()
        assert resumed_csv == full_csv

    def test_reusing_out_dir_with_other_config_rejected(self, tmp_path):
        run(parse_config(base_config_dict(tmp_path / "d", total_env_steps=0)))
        other = parse_config(base_config_dict(tmp_path / "d", total_env_steps=200))
        with pytest.raises(ConfigError, match="different experiment"):
            run(other)

    def test_smoothing_changes_only_reward_streams(self, tmp_path):
        # with a pinned exploration policy the two arms collect identical
        # episodes; only the smoothed stream may differ
        import pickle

        results = {}
        for kind, out in (("none", "n"), ("gaussian", "g")):
            smoothing = {"kind": kind} if kind == "none" else {"kind": kind, "sigma": 2.0}
            cfg = parse_config(base_config_dict(
                tmp_path / out, env_id="ambiguous_delay", smoothing=smoothing,
                total_env_steps=600, eval_every=10_000,
                epsilon={"start": 1.0, "final": 1.0, "anneal_frac": 0.3},
            ))
            run(cfg)
            ck = tmp_path / out / "seed_0" / "checkpoint.pkl"
            results[kind] = pickle.loads(ck.read_bytes())["buffer"]["episodes"]
        assert len(results["none"]) == len(results["gaussian"])
        with_event = 0
        for none_ep, gauss_ep in zip(results["none"], results["gaussian"]):
            np.testing.assert_array_equal(none_ep.obs, gauss_ep.obs)
            np.testing.assert_array_equal(none_ep.actions, gauss_ep.actions)
            np.testing.assert_array_equal(none_ep.reward_raw, gauss_ep.reward_raw)
            if none_ep.event_times:
                with_event += 1
                assert not np.array_equal(none_ep.reward_smoothed, gauss_ep.reward_smoothed)
        assert with_event > 0, "no collected episode contained a sparse event"


class TestSweep:
    def test_fanout_artifacts(self, tmp_path):
        cfg = parse_config(base_config_dict(tmp_path / "sw", total_env_steps=120,
                                            eval_every=60))
        results = sweep(cfg, "smoothing.sigma", [1.0, 2.0])
        assert set(results) == {"1.0", "2.0"}
        for v in ("1.0", "2.0"):
            arm_dir = tmp_path / "sw" / f"smoothing_sigma={v}"
            assert (arm_dir / "manifest.json").exists()
            assert (arm_dir / "metrics.csv").exists()
            manifest = json.loads((arm_dir / "manifest.json").read_text())
            assert manifest["config"]["smoothing"]["sigma"] == float(v)

    def test_single_value_matches_plain_run(self, tmp_path):
        cfg = parse_config(base_config_dict(tmp_path / "s1", total_env_steps=120,
                                            eval_every=60))
        sweep(cfg, "smoothing.sigma", [2.0])
        plain = parse_config(base_config_dict(tmp_path / "p1", total_env_steps=120,
                                              eval_every=60))
        run(plain)
        a = (tmp_path / "s1" / "smoothing_sigma=2.0" / "seed_0" / "metrics.csv").read_bytes()
        b = (tmp_path / "p1" / "seed_0" / "metrics.csv").read_bytes()
        assert a == b


class TestCli:
    def test_run_and_exit_codes(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(base_config_dict(tmp_path / "cli", total_env_steps=0)))
        assert cli_main(["run", "--config", str(cfg_path)]) == 0

    def test_usage_error_is_exit_1(self):
        assert cli_main(["run"]) == 1
        assert cli_main(["bogus"]) == 1

    def test_config_error_is_exit_1(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"env_id": "nope", "out_dir": str(tmp_path)}))
        assert cli_main(["run", "--config", str(bad)]) == 1

    def test_verify_exit_zero_and_report(self, tmp_path, capsys):
        report = tmp_path / "report.json"
        assert cli_main(["verify", "--report", str(report)]) == 0
        data = json.loads(report.read_text())
        assert data["all_pass"] is True
        out = capsys.readouterr().out
        assert "[PASS]" in out

    def test_roll_scripted_episodes(self, tmp_path):
        out = tmp_path / "eps.jsonl"
        assert cli_main(["roll", "--env", "two_stage_grid", "--policy", "scripted",
                         "--out", str(out), "--episodes", "2"]) == 0
        eps = read_episode_log(out)
        assert len(eps) == 2
        assert max(eps[0]["reward_raw"]) >= 300.0

    def test_seed_offset_env_var(self, tmp_path, monkeypatch):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(base_config_dict(tmp_path / "off", total_env_steps=0,
                                                        seeds=[0])))
        monkeypatch.setenv("SMRL_SEED_OFFSET", "50")
        assert cli_main(["run", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "off" / "seed_50").exists()

    def test_plot_command(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(base_config_dict(tmp_path / "pr", total_env_steps=120,
                                                        eval_every=60)))
        assert cli_main(["run", "--config", str(cfg_path)]) == 0
        out_dir = tmp_path / "charts"
        assert cli_main(["plot", "--in", str(tmp_path / "pr"), "--out", str(out_dir)]) == 0
        svgs = sorted(p.name for p in out_dir.glob("*.svg"))
        assert "return.svg" in svgs and "pred_rate.svg" in svgs


class TestPlots:
    def test_empty_csv_renders_empty_axes(self, tmp_path):
        from smrl.harness.plots import plot_metrics

        arm = tmp_path / "arm"
        arm.mkdir()
        (arm / "metrics.csv").write_text(
            "env_steps,return_raw_median,return_raw_min,return_raw_max,"
            "subtasks_median,pred_rate_median,dyn_mse,rew_mse\n"
        )
        written = plot_metrics(str(tmp_path), str(tmp_path / "out"))
        assert all(os.path.exists(p) for p in written)

    def test_svg_bytes_deterministic(self, tmp_path):
        from smrl.harness.plots import plot_metrics

        arm = tmp_path / "arm"
        arm.mkdir()
        (arm / "metrics.csv").write_text(
            "env_steps,return_raw_median,return_raw_min,return_raw_max,"
            "subtasks_median,pred_rate_median,dyn_mse,rew_mse\n"
            "100,1.0,0.5,1.5,0.0,,0.1,0.2\n"
            "200,2.0,1.5,2.5,1.0,0.5,0.05,0.1\n"
        )
        out1 = plot_metrics(str(tmp_path), str(tmp_path / "o1"))
        out2 = plot_metrics(str(tmp_path), str(tmp_path / "o2"))
        for p1, p2 in zip(out1, out2):
            assert open(p1, "rb").read() == open(p2, "rb").read()
