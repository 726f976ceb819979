"""Acceptance criteria, one test per criterion, printed as pass/fail lines.

Criteria 1-5 are the exactly-checkable ones and also back the CLI `verify`
subcommand; 6-8 are the qualitative trend criteria on the grid analog; 9 is
the determinism contract. Heavy artifacts (trained reward models) are built
once per session and shared across criteria.
"""

import time
import warnings

import numpy as np
import pytest

from prefgame.cli import ExperimentConfig, main, run_pipeline
from prefgame.datasets import make_dataset
from prefgame.games import build_grid_spread
from prefgame.marl import (
    ReferencePolicy,
    VdnConfig,
    fit_reference,
    fitted_q_vdn,
    kl_bonus_table,
    shaped_reward_table,
)
from prefgame.rewards import RewardTrainConfig, smoothness_metric, train_practical_reward
from prefgame.verify import (
    criterion_1_counterexample,
    criterion_2_pessimism_sandwich,
    criterion_3_unilateral_sufficiency,
    criterion_4_mle_calibration,
    criterion_5_coverage_functional,
)

GRID_TOTAL = 400
GRID_SEEDS = (0, 1, 2, 3, 4)


class GridLab:
    """Session cache of datasets and trained reward models on the grid analog."""

    def __init__(self):
        self.game = build_grid_spread(2, 3, 5)
        self._datasets = {}
        self._models = {}

    def dataset(self, mixture: str, seed: int):
        key = (mixture, seed)
        if key not in self._datasets:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self._datasets[key] = make_dataset(
                    self.game, mixture, GRID_TOTAL, steepness=5.0, seed=seed
                )
        return self._datasets[key]

    def model(self, mixture: str, alpha: float, seed: int):
        key = (mixture, alpha, seed)
        if key not in self._models:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self._models[key] = train_practical_reward(
                    self.dataset(mixture, seed), alpha=alpha,
                    config=RewardTrainConfig(alpha=alpha, seed=seed),
                )
        return self._models[key]


@pytest.fixture(scope="session")
def lab():
    return GridLab()


def _report(result):
    print()
    print(result.line())
    assert result.passed, result.detail


class TestTheoryCriteria:
    def test_criterion_1_counterexample(self):
        _report(criterion_1_counterexample())

    def test_criterion_2_pessimism_sandwich(self):
        _report(criterion_2_pessimism_sandwich())

    def test_criterion_3_unilateral_sufficiency(self):
        _report(criterion_3_unilateral_sufficiency())

    def test_criterion_4_mle_calibration(self):
        _report(criterion_4_mle_calibration())

    def test_criterion_5_coverage_functional(self):
        _report(criterion_5_coverage_functional())


class TestCriterion6MseRegularization:
    def test_regularization_effect(self, lab):
        start = time.time()
        smooth_ok, acc_ok = 0, 0
        for seed in GRID_SEEDS:
            ds = lab.dataset("Diversified", seed)
            m0 = lab.model("Diversified", 0.0, seed)
            m1 = lab.model("Diversified", 1.0, seed)
            smooth_ok += smoothness_metric(m1, ds.pool) < smoothness_metric(m0, ds.pool)
            acc0 = m0.history["holdout_accuracy"]
            acc1 = m1.history["holdout_accuracy"]
            acc_ok += acc1 >= acc0 - 0.05
        nlls = [
            lab.model("Diversified", alpha, 0).history["train_nll"][-1]
            for alpha in (0.0, 1.0, 100.0, 1000.0)
        ]
        trend_ok = all(nlls[k] <= nlls[k + 1] + 1e-9 for k in range(3))
        elapsed = time.time() - start
        passed = smooth_ok == 5 and acc_ok == 5 and trend_ok and elapsed <= 600
        mark = "PASS" if passed else "FAIL"
        print(f"\n[{mark}] criterion 6 (MSE regularization): smoothness 5/5={smooth_ok == 5}, "
              f"accuracy within 5pts {acc_ok}/5, NLL trend {[round(v, 3) for v in nlls]} "
              f"non-decreasing={trend_ok} [{elapsed:.0f}s / limit 600s]")
        assert passed

    def test_alpha_zero_loss_decreases(self, lab):
        nll = np.array(lab.model("Diversified", 0.0, 0).history["train_nll"])
        smoothed = np.convolve(nll, np.ones(5) / 5, mode="valid")
        assert smoothed[-1] < smoothed[0]


class TestCriterion7KlShaping:
    def test_kl_shaping_behavior(self, lab):
        start = time.time()
        game = lab.game
        # Exact-zero check for a uniform reference.
        uniform_ref = ReferencePolicy(
            counts=tuple(
                np.zeros((game.horizon, game.num_states, a)) for a in game.action_counts
            ),
            kappa=1.0,
        )
        zero_exact = bool((kl_bonus_table(uniform_ref, game) == 0.0).all())

        betas = (0.0, 1.0, 10.0, 100.0)
        counts = {b: [] for b in betas}
        for seed in GRID_SEEDS:
            ds = lab.dataset("Diversified", seed)
            model = lab.model("Diversified", 1.0, seed)
            ref = fit_reference(ds)
            rstd = model.r_std_table(game)
            ref_joint = np.stack(
                [ref.factor_argmax(i) for i in range(game.num_players)], axis=-1
            )
            for beta in betas:
                shaped = shaped_reward_table(rstd, ref, beta, game)
                vdn = fitted_q_vdn(ds, shaped, game, VdnConfig())
                greedy_joint = np.stack(
                    [vdn.q[i].argmax(axis=-1) for i in range(game.num_players)], axis=-1
                )
                counts[beta].append(int((greedy_joint == ref_joint).all(axis=-1).sum()))
        medians = [float(np.median(counts[b])) for b in betas]
        monotone = all(medians[k] <= medians[k + 1] + 1e-9 for k in range(3))
        elapsed = time.time() - start
        passed = zero_exact and monotone and elapsed <= 600
        mark = "PASS" if passed else "FAIL"
        print(f"\n[{mark}] criterion 7 (KL shaping): uniform-reference term exactly zero="
              f"{zero_exact}, median match counts {medians} non-decreasing={monotone} "
              f"[{elapsed:.0f}s / limit 600s]")
        assert passed


class TestCriterion8MixtureTrend:
    def test_mixture_trend(self, lab):
        start = time.time()
        game = lab.game
        returns = {}
        flags = {}
        for mixture in ("Diversified", "Mix-Unilateral", "Mix-Expert", "Pure-Expert"):
            rets = []
            degenerate = []
            for seed in GRID_SEEDS:
                ds = lab.dataset(mixture, seed)
                model = lab.model(mixture, 1.0, seed)
                ref = fit_reference(ds)
                shaped = shaped_reward_table(model.r_std_table(game), ref, 1.0, game)
                vdn = fitted_q_vdn(ds, shaped, game, VdnConfig())
                from prefgame.games import exact_returns

                rets.append(float(exact_returns(game, vdn.greedy_policy(game)).mean()))
                degenerate.append(model.degenerate)
            returns[mixture] = np.array(rets)
            flags[mixture] = degenerate
        pe_flagged = any(flags["Pure-Expert"])
        others_max = max(
            returns[m].mean() for m in ("Diversified", "Mix-Unilateral", "Mix-Expert")
        )
        order_ok = (not pe_flagged) or returns["Pure-Expert"].mean() <= others_max + 1e-9
        variances = {m: float(r.var()) for m, r in returns.items()}
        div_var_ok = variances["Diversified"] <= min(
            variances[m] for m in ("Mix-Unilateral", "Mix-Expert", "Pure-Expert")
        ) + 1e-12
        elapsed = time.time() - start
        passed = pe_flagged and order_ok and div_var_ok and elapsed <= 1200
        mark = "PASS" if passed else "FAIL"
        means = {m: round(float(r.mean()), 3) for m, r in returns.items()}
        print(f"\n[{mark}] criterion 8 (mixture trend): means {means}, "
              f"Pure-Expert degeneracy flagged={pe_flagged}, ordering={order_ok}, "
              f"Diversified min variance={div_var_ok} (vars "
              f"{ {m: round(v, 5) for m, v in variances.items()} }) "
              f"[{elapsed:.0f}s / limit 1200s]")
        assert passed


class TestCriterion9Determinism:
    def test_pipeline_byte_reproducible(self, tmp_path):
        start = time.time()
        base = dict(
            game={"builder": "grid_spread", "n_agents": 2, "grid_size": 3, "horizon": 4},
            total_trajectories=40, epochs=4, episodes=200, seeds=[0],
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            root_a = run_pipeline(
                ExperimentConfig.from_dict({**base, "out_dir": str(tmp_path / "a")}),
                echo=lambda *_: None,
            )
            root_b = run_pipeline(
                ExperimentConfig.from_dict({**base, "out_dir": str(tmp_path / "b")}),
                echo=lambda *_: None,
            )
        identical = all(
            (root_a / rel).read_bytes() == (root_b / rel).read_bytes()
            for rel in ("metrics.csv", "manifest.json", "config.json",
                        "seed_0/dataset.jsonl", "seed_0/reward_model.json",
                        "seed_0/reference.json", "seed_0/policy.json")
        )
        elapsed = time.time() - start
        mark = "PASS" if identical else "FAIL"
        print(f"\n[{mark}] criterion 9a (byte reproducibility): identical={identical} "
              f"[{elapsed:.0f}s]")
        assert identical

    def test_verify_subcommand_exits_zero(self, capsys):
        start = time.time()
        code = main(["verify"])
        out = capsys.readouterr().out
        elapsed = time.time() - start
        passed = code == 0 and out.count("[PASS]") == 5
        mark = "PASS" if passed else "FAIL"
        print(f"\n[{mark}] criterion 9b (verify subcommand): exit={code}, "
              f"criteria passed={out.count('[PASS]')}/5 [{elapsed:.0f}s]")
        assert passed
