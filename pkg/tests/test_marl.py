import numpy as np
import pytest

from prefgame.datasets import (
    collect_pool,
    draw_pairs,
    label_preferences,
    make_dataset,
)
from prefgame.equilibrium import nash_gap
from prefgame.games import (
    JointPolicy,
    MarkovGame,
    build_counterexample,
    exact_returns,
)
from prefgame.marl import (
    ReferencePolicy,
    VdnConfig,
    evaluate_policy,
    fit_reference,
    fitted_q_vdn,
    kl_bonus_table,
    load_reference,
    load_vdn,
    save_reference,
    shaped_reward,
    shaped_reward_table,
)


@pytest.fixture(scope="module")
def grid_setup(grid_game):
    ds = make_dataset(grid_game, "Diversified", 240, steepness=5.0, seed=0)
    return grid_game, ds


class TestReference:
    def test_laplace_counting(self):
        counts = (np.zeros((1, 1, 3)),)
        counts[0][0, 0, 1] = 100.0
        ref = ReferencePolicy(counts=counts, kappa=1.0)
        assert ref.probs(0)[0, 0, 1] == pytest.approx(101.0 / 103.0)

    def test_unvisited_state_is_uniform(self, grid_setup):
        game, ds = grid_setup
        ref = fit_reference(ds)
        visited = set()
        for t in ds.pool:
            for h in range(game.horizon):
                visited.add((h, int(t.states[h])))
        unvisited = [
            (h, s) for h in range(game.horizon) for s in range(game.num_states)
            if (h, s) not in visited
        ]
        assert unvisited, "test needs at least one unvisited state"
        h, s = unvisited[0]
        assert np.allclose(ref.probs(0)[h, s], 0.2)

    def test_counterexample_reference_recovers_marginal(self):
        m1, _, pi_b = build_counterexample()
        pool = collect_pool(m1, [("b", pi_b, 10_000)], seed=0)
        pairs = draw_pairs(100, len(pool), seed=1)
        ds = label_preferences(pool, pairs, m1, steepness=1.0, seed=2, mode="raw-return")
        ref = fit_reference(ds)
        assert abs(ref.probs(0)[0, 0, 0] - 0.5) <= 0.02

    def test_counts_equal_visit_tallies(self, grid_setup):
        game, ds = grid_setup
        ref = fit_reference(ds)
        total = sum(c.sum() for c in ref.counts)
        assert total == len(ds.pool) * game.horizon * game.num_players

    def test_round_trip(self, grid_setup, tmp_path):
        _, ds = grid_setup
        ref = fit_reference(ds)
        save_reference(ref, tmp_path / "ref.json")
        again = load_reference(tmp_path / "ref.json")
        for a, b in zip(ref.counts, again.counts):
            assert np.array_equal(a, b)


class TestShapedReward:
    def test_uniform_reference_gives_exact_zero(self, grid_game):
        counts = tuple(
            np.zeros((grid_game.horizon, grid_game.num_states, a))
            for a in grid_game.action_counts
        )
        ref = ReferencePolicy(counts=counts, kappa=1.0)
        table = kl_bonus_table(ref, grid_game)
        assert (table == 0.0).all()

    def test_beta_zero_is_identity(self, grid_setup):
        game, ds = grid_setup
        ref = fit_reference(ds)
        r_std = np.arange(game.num_states * game.num_joint_actions, dtype=np.float64)
        r_std = r_std.reshape(game.num_states, game.num_joint_actions)
        shaped = shaped_reward_table(r_std, ref, 0.0, game)
        assert np.array_equal(shaped, np.broadcast_to(r_std, shaped.shape))

    def test_closed_form_bonus(self, grid_game):
        # One player at probability 0.9 with two actions: log(2 * 0.9).
        counts = (np.zeros((1, 1, 2)), np.zeros((1, 1, 2)))
        simple = MarkovGame(
            num_players=2, horizon=1, num_states=1, action_counts=(2, 2),
            initial_state=0, transition=np.zeros((1, 1, 4), dtype=np.int64),
            reward_mean=np.zeros((1, 1, 4, 2)),
        )
        counts[0][0, 0] = (17.0, 1.0)   # Laplace -> (18/20, 2/20) = (0.9, 0.1)
        counts[1][0, 0] = (0.0, 0.0)    # uniform, contributes zero
        ref = ReferencePolicy(counts=counts, kappa=1.0)
        value = shaped_reward(0.0, ref, 1.0, 0, 0, (0, 0), simple)
        assert value == pytest.approx(np.log(1.8))

    def test_negative_beta_rejected(self, grid_setup):
        game, ds = grid_setup
        ref = fit_reference(ds)
        with pytest.raises(ValueError):
            shaped_reward(0.0, ref, -1.0, 0, 0, (0, 0), game)


class TestFittedQ:
    def test_single_agent_recovers_shaped_optimum(self):
        # m=1 chain MDP with full coverage: fitted-Q equals exact DP on the
        # shaped rewards and the greedy policy is optimal for them.
        cells, moves, H = 4, 3, 3
        next_cell = np.zeros((1, cells, moves), dtype=np.int64)
        for s in range(cells):
            for a in range(moves):
                next_cell[0, s, a] = min(max(s + a - 1, 0), cells - 1)
        rewards = np.zeros((1, cells, moves, 1))
        game = MarkovGame(
            num_players=1, horizon=H, num_states=cells, action_counts=(moves,),
            initial_state=0, transition=next_cell, reward_mean=rewards,
        )
        pool = collect_pool(game, [("u", JointPolicy.uniform(game), 600)], seed=0)
        pairs = draw_pairs(100, len(pool), seed=1)
        ds = label_preferences(pool, pairs, game, steepness=1.0, seed=2, mode="raw-return")
        rng = np.random.default_rng(3)
        shaped = np.broadcast_to(
            rng.uniform(0, 1, size=(cells, moves)), (H, cells, moves)
        ).copy()
        vdn = fitted_q_vdn(ds, shaped, game, VdnConfig())
        # Exact DP on the shaped MDP; fitted-Q matches at every observed cell
        # (cells unreachable from the fixed initial state keep the floor).
        V = np.zeros((H + 1, cells))
        for h in range(H - 1, -1, -1):
            q = shaped[h] + V[h + 1][next_cell[0]]
            V[h] = q.max(axis=1)
            observed = np.zeros((cells, moves), dtype=bool)
            for t in ds.pool:
                observed[t.states[h], t.actions[h, 0]] = True
            assert np.allclose(vdn.q[0][h][observed], q[observed], atol=1e-9)
        # The greedy policy is optimal for the shaped MDP from the start state.
        greedy = vdn.greedy_policy(game)
        choice = np.array([greedy.factors[0][h].argmax(axis=-1) for h in range(H)])
        value, state = 0.0, 0
        for h in range(H):
            value += shaped[h, state, choice[h, state]]
            state = next_cell[0, state, choice[h, state]]
        assert value == pytest.approx(V[0, 0], abs=1e-9)

    def test_additive_team_reward_zero_residual(self, chain_pair_game):
        game = chain_pair_game
        pool = collect_pool(game, [("u", JointPolicy.uniform(game), 2000)], seed=0)
        pairs = draw_pairs(100, len(pool), seed=1)
        ds = label_preferences(pool, pairs, game, steepness=1.0, seed=2, mode="raw-return")
        team = 2.0 * game.reward_at(0)[:, :, 0]  # identical rewards, additive
        shaped = np.broadcast_to(team, (game.horizon, *team.shape)).copy()
        vdn = fitted_q_vdn(ds, shaped, game, VdnConfig())
        # The decomposition reproduces the team targets exactly at observed cells.
        pool_states = np.stack([t.states for t in ds.pool])
        pool_joints = np.stack([game.joint_index(t.actions) for t in ds.pool])
        V = np.zeros((game.horizon + 1, game.num_states))
        for h in range(game.horizon - 1, -1, -1):
            q_true = shaped[h] + V[h + 1][np.asarray(game.transition)[0]]
            V[h] = q_true.max(axis=1)
            observed = np.zeros((game.num_states, game.num_joint_actions), dtype=bool)
            observed[pool_states[:, h], pool_joints[:, h]] = True
            team_q = vdn.team_q(game, h)
            assert np.allclose(team_q[observed], q_true[observed], atol=1e-8)

    def test_full_coverage_truth_reaches_equilibrium(self, chain_pair_game):
        game = chain_pair_game
        pool = collect_pool(game, [("u", JointPolicy.uniform(game), 2000)], seed=0)
        pairs = draw_pairs(100, len(pool), seed=1)
        ds = label_preferences(pool, pairs, game, steepness=1.0, seed=2, mode="raw-return")
        team = game.reward_at(0).sum(axis=-1)
        shaped = np.broadcast_to(team, (game.horizon, *team.shape)).copy()
        vdn = fitted_q_vdn(ds, shaped, game, VdnConfig())
        policy = vdn.greedy_policy(game)
        assert nash_gap(game, policy).total_gap <= 1e-6

    def test_empty_dataset_rejected(self, grid_setup):
        game, ds = grid_setup
        import dataclasses

        empty = dataclasses.replace(ds, pool=(), pool_tags=())
        shaped = np.zeros((game.horizon, game.num_states, game.num_joint_actions))
        with pytest.raises(ValueError):
            fitted_q_vdn(empty, shaped, game, VdnConfig())

    def test_deterministic_given_inputs(self, grid_setup):
        game, ds = grid_setup
        shaped = np.zeros((game.horizon, game.num_states, game.num_joint_actions))
        a = fitted_q_vdn(ds, shaped, game, VdnConfig())
        b = fitted_q_vdn(ds, shaped, game, VdnConfig())
        for qa, qb in zip(a.q, b.q):
            assert np.array_equal(qa, qb)

    def test_policy_round_trip(self, grid_setup, tmp_path):
        game, ds = grid_setup
        shaped = np.zeros((game.horizon, game.num_states, game.num_joint_actions))
        vdn = fitted_q_vdn(ds, shaped, game, VdnConfig())
        vdn.save(tmp_path / "pol.json")
        again = load_vdn(tmp_path / "pol.json")
        for qa, qb in zip(vdn.q, again.q):
            assert np.array_equal(qa, qb)


class TestEvaluate:
    def test_trivial_policy_matches_dp(self, grid_game):
        pol = JointPolicy.uniform(grid_game)
        report = evaluate_policy(grid_game, pol, episodes=200, seed=0)
        assert np.allclose(report.exact_returns, exact_returns(grid_game, pol), atol=1e-9)

    def test_stderr_scales_with_episodes(self, grid_game):
        pol = JointPolicy.uniform(grid_game)
        small = evaluate_policy(grid_game, pol, episodes=100, seed=0)
        large = evaluate_policy(grid_game, pol, episodes=10_000, seed=0)
        ratio = small.mc_stderr.mean() / large.mc_stderr.mean()
        assert ratio == pytest.approx(np.sqrt(100.0), rel=0.25)

    def test_mc_confirms_exact(self, grid_game):
        pol = JointPolicy.uniform(grid_game)
        report = evaluate_policy(grid_game, pol, episodes=10_000, seed=1)
        for i in range(2):
            assert abs(report.mc_returns[i] - report.exact_returns[i]) <= 4 * report.mc_stderr[i]
