import dataclasses

import numpy as np
import pytest

from prefgame.coverage import build_covariances, max_policy_uncertainty
from prefgame.datasets import collect_pool, draw_pairs, label_preferences
from prefgame.equilibrium import nash_gap
from prefgame.games import JointPolicy, exact_values
from prefgame.rewards import MleConfig, fit_linear_mle
from prefgame.theory import (
    PolicyClassTooLarge,
    TheoryConfig,
    deterministic_policy_count,
    optimistic_best_response,
    pessimistic_value,
    surrogate_minimize,
    surrogate_value,
)
from prefgame.verify import convergence_game, unilateral_dataset


@pytest.fixture(scope="module")
def theory_setup():
    """Frozen convergence game with a mid-sized unilateral dataset."""
    game, star = convergence_game()
    dataset = unilateral_dataset(game, star, n_pairs=2000, seed=0)
    cov = build_covariances(dataset, game.features, lam=1.0)
    est = fit_linear_mle(dataset, game.features, MleConfig(C=0.1, lam=1.0), cov=cov)
    return game, star, dataset, cov, est


def empty_dataset_like(dataset):
    return dataclasses.replace(
        dataset,
        pair_indices=np.zeros((0, 2), dtype=np.int64),
        labels=np.zeros((0, dataset.num_players), dtype=np.int8),
    )


class TestValueEstimates:
    def test_empty_dataset_pessimistic_is_zero(self, theory_setup):
        game, star, dataset, _, est = theory_setup
        empty = empty_dataset_like(dataset)
        cov0 = build_covariances(empty, game.features, lam=1.0)
        est0 = dataclasses.replace(est, cov=cov0)
        pes = pessimistic_value(game, empty, cov0, est0, star, 0, TheoryConfig(C=0.1))
        assert np.allclose(pes.q, 0.0)
        assert np.allclose(pes.v, 0.0)

    def test_empty_dataset_optimistic_clips_at_horizon(self, theory_setup):
        game, star, dataset, _, est = theory_setup
        empty = empty_dataset_like(dataset)
        cov0 = build_covariances(empty, game.features, lam=1.0)
        est0 = dataclasses.replace(est, cov=cov0)
        # C large enough that the lambda-only bonus exceeds H everywhere.
        opt = optimistic_best_response(game, empty, cov0, est0, star, 0, TheoryConfig(C=1.0))
        assert np.allclose(opt.q, game.horizon)
        assert np.allclose(opt.v[: game.horizon], game.horizon)

    def test_clipping_bounds_always(self, theory_setup):
        game, star, dataset, cov, est = theory_setup
        cfg = TheoryConfig(C=0.1)
        for i in range(2):
            pes = pessimistic_value(game, dataset, cov, est, star, i, cfg)
            opt = optimistic_best_response(game, dataset, cov, est, star, i, cfg)
            for q in (pes.q, opt.q):
                assert q.min() >= 0.0 and q.max() <= game.horizon

    def test_v_consistent_with_q(self, theory_setup):
        game, star, dataset, cov, est = theory_setup
        cfg = TheoryConfig(C=0.1)
        probs = star.joint_probs(game)
        pes = pessimistic_value(game, dataset, cov, est, star, 0, cfg)
        for h in range(game.horizon):
            expected = (probs[h] * pes.q[h]).sum(axis=1)
            assert np.allclose(pes.v[h], expected, atol=1e-9)
        opt = optimistic_best_response(game, dataset, cov, est, star, 0, cfg)
        from prefgame.equilibrium import _contract_others

        for h in range(game.horizon):
            qi = _contract_others(opt.q[h], star.factors, h, 0, game.action_counts)
            assert np.allclose(opt.v[h], qi.max(axis=1), atol=1e-9)

    def test_sandwich_on_seeded_runs(self, theory_setup):
        game, star, _, _, _ = theory_setup
        cfg = TheoryConfig(C=4.0)
        hits = 0
        runs = 20
        for seed in range(runs):
            dataset = unilateral_dataset(game, star, n_pairs=1500, seed=300 + seed)
            cov = build_covariances(dataset, game.features, lam=1.0)
            est = fit_linear_mle(dataset, game.features, MleConfig(C=4.0, lam=1.0), cov=cov)
            ok = True
            v_true = exact_values(game, star)[0, game.initial_state]
            from prefgame.equilibrium import best_response_value

            for i in range(2):
                pes = pessimistic_value(game, dataset, cov, est, star, i, cfg)
                opt = optimistic_best_response(game, dataset, cov, est, star, i, cfg)
                br, _ = best_response_value(game, star, i)
                ok &= pes.initial_value(game) <= v_true[i] + 1e-9
                ok &= opt.initial_value(game) >= br - 1e-9
            hits += ok
        assert hits >= int(0.95 * runs)

    def test_monotone_pessimism_on_nested_data(self, theory_setup):
        # Fixed reward estimate, deterministic-transition game, recomputed
        # covariance bonuses: Q_lower can only rise as pairs are appended.
        game, star, dataset, cov, est = theory_setup
        cfg = TheoryConfig(C=0.1)
        prev_q = None
        for n in (200, 800, 2000):
            sub = dataclasses.replace(
                dataset, pair_indices=dataset.pair_indices[:n], labels=dataset.labels[:n]
            )
            cov_n = build_covariances(sub, game.features, lam=1.0)
            est_n = dataclasses.replace(est, cov=cov_n)
            pes = pessimistic_value(game, sub, cov_n, est_n, star, 0, cfg)
            if prev_q is not None:
                assert (pes.q >= prev_q - 1e-9).all()
            prev_q = pes.q


class TestSurrogate:
    def test_policy_count_and_cap(self, theory_setup):
        game, _, dataset, cov, est = theory_setup
        assert deterministic_policy_count(game) == 2 ** (2 * 2) * 2 ** (2 * 2)
        with pytest.raises(PolicyClassTooLarge):
            surrogate_minimize(game, dataset, cov, est, candidate_cap=10)

    def test_explicit_candidate_list(self, theory_setup):
        game, star, dataset, cov, est = theory_setup
        uniform = JointPolicy.uniform(game)
        policy, value = surrogate_minimize(
            game, dataset, cov, est, policy_class=[star, uniform], config=TheoryConfig(C=0.1)
        )
        assert value == pytest.approx(
            surrogate_value(game, dataset, cov, est, policy, TheoryConfig(C=0.1))
        )

    def test_surrogate_upper_bounds_gap_on_event(self, theory_setup):
        game, star, _, _, _ = theory_setup
        cfg = TheoryConfig(C=4.0)
        hits = 0
        runs = 20
        rng = np.random.default_rng(1)
        for seed in range(runs):
            dataset = unilateral_dataset(game, star, n_pairs=1500, seed=600 + seed)
            cov = build_covariances(dataset, game.features, lam=1.0)
            est = fit_linear_mle(dataset, game.features, MleConfig(C=4.0, lam=1.0), cov=cov)
            factors = []
            for a in game.action_counts:
                raw = rng.random((2, 2, a)) + 0.05
                factors.append(raw / raw.sum(axis=-1, keepdims=True))
            policy = JointPolicy(factors=tuple(factors))
            s_val = surrogate_value(game, dataset, cov, est, policy, cfg)
            hits += s_val >= nash_gap(game, policy).total_gap - 1e-6
        assert hits >= int(0.95 * runs)

    def test_theorem_bound_shape_at_equilibrium(self, theory_setup):
        # surrogate(pi*) <= 4 * (C_P + C_r) * unilateral-coverage value, the
        # shape of the guarantee with the configured constants.
        game, star, _, _, _ = theory_setup
        cfg = TheoryConfig(C=4.0)
        dataset = unilateral_dataset(game, star, n_pairs=1500, seed=999)
        cov = build_covariances(dataset, game.features, lam=1.0)
        est = fit_linear_mle(dataset, game.features, MleConfig(C=4.0, lam=1.0), cov=cov)
        s_val = surrogate_value(game, dataset, cov, est, star, cfg)
        unilateral = max(
            max_policy_uncertainty(game, cov, fixed_others=(i, star))[0] for i in range(2)
        )
        c_p = cfg.c_p(cov.d, cov.num_transition_samples, game.horizon)
        bound = 4.0 * (c_p + est.confidence_radius) * unilateral + 1e-6
        assert s_val <= bound

    def test_output_surrogate_decreases_with_data(self, theory_setup):
        game, star, _, _, _ = theory_setup
        medians = []
        for n in (100, 1000, 10000):
            vals = []
            for seed in range(5):
                dataset = unilateral_dataset(game, star, n_pairs=n, seed=seed * 50 + n)
                cov = build_covariances(dataset, game.features, lam=1.0)
                est = fit_linear_mle(dataset, game.features, MleConfig(C=0.1, lam=1.0), cov=cov)
                _, value = surrogate_minimize(game, dataset, cov, est, config=TheoryConfig(C=0.1))
                vals.append(value)
            medians.append(float(np.median(vals)))
        assert medians[0] >= medians[1] >= medians[2]

    def test_trace_file(self, theory_setup, tmp_path):
        game, _, dataset, cov, est = theory_setup
        trace = tmp_path / "trace.csv"
        surrogate_minimize(game, dataset, cov, est, config=TheoryConfig(C=0.1), trace_path=trace)
        lines = trace.read_text().strip().splitlines()
        assert lines[0] == "policy_id,pessimistic_0,pessimistic_1,optimistic_br_0,optimistic_br_1,surrogate"
        assert len(lines) == 1 + deterministic_policy_count(game)

    def test_counterexample_forced_failure(self, counterexample_pair):
        m1, m2, pi_b = counterexample_pair
        pool = collect_pool(m1, [("b", pi_b, 400)], seed=0)
        pairs = draw_pairs(2000, len(pool), seed=1)
        dataset = label_preferences(pool, pairs, m1, steepness=1.0, seed=2, mode="raw-return")
        for game in (m1, m2):
            cov = build_covariances(dataset, game.features, lam=1.0)
            est = fit_linear_mle(dataset, game.features, MleConfig(C=0.1, lam=1.0), cov=cov)
            policy, _ = surrogate_minimize(game, dataset, cov, est, config=TheoryConfig(C=0.1))
            worst = max(nash_gap(m1, policy).total_gap, nash_gap(m2, policy).total_gap)
            assert worst >= 0.45
