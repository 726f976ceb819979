import json
from pathlib import Path

import pytest

from prefgame.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    ConfigError,
    ExperimentConfig,
    build_game,
    main,
    manifest_verifies,
    run_counterexample,
    run_pipeline,
    run_sweep,
)

TINY = dict(
    game={"builder": "grid_spread", "n_agents": 2, "grid_size": 3, "horizon": 4},
    total_trajectories=40,
    epochs=4,
    episodes=200,
    seeds=[0, 1],
)


def tiny_config(out_dir, **overrides) -> ExperimentConfig:
    doc = {**TINY, "out_dir": str(out_dir), **overrides}
    return ExperimentConfig.from_dict(doc)


class TestConfig:
    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"nonsense": 1})

    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"steepness": -1.0})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"mixture": "Everything"})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"seeds": []})

    def test_hash_stable_and_sensitive(self, tmp_path):
        a = tiny_config(tmp_path)
        b = tiny_config(tmp_path)
        c = tiny_config(tmp_path, alpha=2.0)
        assert a.hash() == b.hash() != c.hash()

    def test_missing_game_file_rejected(self):
        with pytest.raises(ConfigError):
            build_game({"path": "/nonexistent/game.json"})

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"steepness": -3}')
        assert main(["--config", str(bad), "pipeline"]) == EXIT_CONFIG


@pytest.mark.filterwarnings("ignore:zero return variance")
class TestPipeline:
    def test_run_writes_all_artifacts(self, tmp_path):
        config = tiny_config(tmp_path)
        root = run_pipeline(config, echo=lambda *_: None)
        for name in ("config.json", "game.json", "metrics.csv", "manifest.json"):
            assert (root / name).exists()
        for seed in (0, 1):
            for name in ("dataset.jsonl", "reward_model.json", "reference.json", "policy.json"):
                assert (root / f"seed_{seed}" / name).exists()

    def test_metrics_has_summary_row(self, tmp_path):
        config = tiny_config(tmp_path)
        root = run_pipeline(config, echo=lambda *_: None)
        lines = (root / "metrics.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + len(config.seeds) + 1
        assert lines[-1].startswith("summary,")

    def test_manifest_covers_every_file(self, tmp_path):
        config = tiny_config(tmp_path)
        root = run_pipeline(config, echo=lambda *_: None)
        manifest = json.loads((root / "manifest.json").read_text())
        files = {
            str(p.relative_to(root))
            for p in root.rglob("*")
            if p.is_file() and p.name != "manifest.json"
        }
        assert files == set(manifest["artifacts"])
        assert manifest_verifies(root)

    def test_cache_hit_skips(self, tmp_path):
        config = tiny_config(tmp_path)
        root = run_pipeline(config, echo=lambda *_: None)
        stamp = (root / "metrics.csv").stat().st_mtime_ns
        messages = []
        again = run_pipeline(config, echo=messages.append)
        assert again == root
        assert (root / "metrics.csv").stat().st_mtime_ns == stamp
        assert any("cache hit" in m for m in messages)

    def test_byte_reproducibility(self, tmp_path):
        root_a = run_pipeline(tiny_config(tmp_path / "a"), echo=lambda *_: None)
        root_b = run_pipeline(tiny_config(tmp_path / "b"), echo=lambda *_: None)
        for rel in ("metrics.csv", "manifest.json", "seed_0/dataset.jsonl",
                    "seed_0/reward_model.json", "seed_0/policy.json"):
            assert (root_a / rel).read_bytes() == (root_b / rel).read_bytes(), rel


class TestStagedCommands:
    def test_full_staged_round_trip(self, tmp_path):
        game_path = tmp_path / "game.json"
        assert main(["make-game", "--builder", "grid_spread", "--grid-size", "3",
                     "--horizon", "4", "--out", str(game_path)]) == EXIT_OK

        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({**TINY, "out_dir": str(tmp_path), "seeds": [0]}))
        base = ["--config", str(cfg_path)]

        pool_path = tmp_path / "pool.jsonl"
        assert main(base + ["gen-data", "--game", str(game_path),
                            "--out", str(pool_path)]) == EXIT_OK
        ds_path = tmp_path / "dataset.jsonl"
        assert main(base + ["label", "--game", str(game_path), "--pool", str(pool_path),
                            "--out", str(ds_path)]) == EXIT_OK
        rm_path = tmp_path / "reward.json"
        assert main(base + ["fit-reward", "--dataset", str(ds_path),
                            "--out", str(rm_path)]) == EXIT_OK
        ref_path = tmp_path / "ref.json"
        assert main(base + ["fit-ref", "--dataset", str(ds_path),
                            "--out", str(ref_path)]) == EXIT_OK
        pol_path = tmp_path / "policy.json"
        assert main(base + ["train", "--game", str(game_path), "--dataset", str(ds_path),
                            "--reward-model", str(rm_path), "--reference", str(ref_path),
                            "--out", str(pol_path)]) == EXIT_OK
        eval_path = tmp_path / "eval.json"
        assert main(base + ["eval", "--game", str(game_path), "--policy", str(pol_path),
                            "--out", str(eval_path)]) == EXIT_OK
        doc = json.loads(eval_path.read_text())
        assert "nash_gap" in doc and len(doc["exact_returns"]) == 2

    def test_theory_command(self, tmp_path):
        game_path = tmp_path / "game.json"
        assert main(["make-game", "--builder", "random_linear", "--num-states", "2",
                     "--horizon", "2", "--d", "4", "--game-seed", "13",
                     "--out", str(game_path)]) == EXIT_OK
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "game": {"path": str(game_path)}, "total_trajectories": 40,
            "label_mode": "raw-return", "steepness": 1.0,
            "seeds": [0], "out_dir": str(tmp_path),
        }))
        pool_path, ds_path = tmp_path / "pool.jsonl", tmp_path / "ds.jsonl"
        base = ["--config", str(cfg_path)]
        assert main(base + ["gen-data", "--game", str(game_path), "--out", str(pool_path)]) == EXIT_OK
        assert main(base + ["label", "--game", str(game_path), "--pool", str(pool_path),
                            "--out", str(ds_path)]) == EXIT_OK
        out_path = tmp_path / "theory.json"
        assert main(base + ["theory", "--game", str(game_path), "--dataset", str(ds_path),
                            "--out", str(out_path)]) == EXIT_OK
        doc = json.loads(out_path.read_text())
        assert set(doc) == {"surrogate", "nash_gap"}

    def test_report_command(self, tmp_path, capsys):
        run_pipeline(tiny_config(tmp_path), echo=lambda *_: None)
        assert main(["--out-dir", str(tmp_path), "report"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "verified=True" in out


class TestCounterexampleCommand:
    def test_verdict_structure(self, tmp_path):
        verdict = run_counterexample(n_pairs=200, seeds=(0, 1), out_dir=tmp_path,
                                     echo=lambda *_: None)
        assert verdict["fraction_gap_at_least_0.45"] == 1.0
        assert verdict["single_coverage_monotone"] is True
        assert (Path(tmp_path) / "counterexample.json").exists()

    def test_too_few_pairs_rejected(self):
        with pytest.raises(ConfigError):
            run_counterexample(n_pairs=10, seeds=(0,))


@pytest.mark.filterwarnings("ignore:zero return variance")
class TestSweep:
    def test_beta_sweep_csv_and_plots(self, tmp_path):
        config = tiny_config(tmp_path, seeds=[0])
        root = run_sweep(config, "beta", values=[0.0, 1.0], echo=lambda *_: None)
        lines = (root / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 2  # header + 2 grid points x 1 seed
        assert (root / "team_return.png").exists()

    def test_unknown_axis_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            run_sweep(tiny_config(tmp_path), "gamma")

    def test_parallel_matches_serial_bytes(self, tmp_path):
        serial = run_sweep(tiny_config(tmp_path / "s", seeds=[0]), "beta",
                           values=[0.0, 1.0], echo=lambda *_: None, workers=1)
        parallel = run_sweep(tiny_config(tmp_path / "p", seeds=[0]), "beta",
                             values=[0.0, 1.0], echo=lambda *_: None, workers=2)
        assert (serial / "sweep.csv").read_bytes() == (parallel / "sweep.csv").read_bytes()
