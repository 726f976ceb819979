import numpy as np
import pytest

from prefgame.datasets import collect_pool, draw_pairs, label_preferences
from prefgame.games import (
    JointPolicy,
    build_counterexample,
    build_grid_spread,
    build_random_linear_game,
)


@pytest.fixture(scope="session")
def counterexample_pair():
    return build_counterexample()


@pytest.fixture(scope="session")
def grid_game():
    return build_grid_spread(2, 3, 5)


@pytest.fixture(scope="session")
def linear_game():
    return build_random_linear_game(2, 2, 2, (2, 2), 4, seed=3)


@pytest.fixture(scope="session")
def linear_dataset(linear_game):
    """Small raw-labeled dataset under the uniform behavior policy."""
    behavior = JointPolicy.uniform(linear_game)
    pool = collect_pool(linear_game, [("u", behavior, 200)], seed=0)
    pairs = draw_pairs(1000, len(pool), seed=1)
    return label_preferences(pool, pairs, linear_game, steepness=1.0, seed=2, mode="raw-return")


def make_chain_pair_game():
    """Two independent 3-cell chains with a shared additive reward.

    Per-agent dynamics are deterministic moves (left, stay, right) on a chain;
    both agents receive the identical reward (g(p0, a0) + g(p1, a1)) / 2, so
    the team action value decomposes exactly into per-agent terms and the
    cooperative optimum is a Nash equilibrium.
    """
    from prefgame.games import MarkovGame

    cells, moves = 3, 3
    g = np.linspace(0.1, 0.9, cells * moves).reshape(cells, moves)
    S, A = cells * cells, moves * moves

    def step(p, a):
        return min(max(p + a - 1, 0), cells - 1)

    next_state = np.zeros((1, S, A), dtype=np.int64)
    rewards = np.zeros((1, S, A, 2))
    for s in range(S):
        p0, p1 = s // cells, s % cells
        for a in range(A):
            a0, a1 = a // moves, a % moves
            next_state[0, s, a] = step(p0, a0) * cells + step(p1, a1)
            shared = (g[p0, a0] + g[p1, a1]) / 2.0
            rewards[0, s, a] = shared
    return MarkovGame(
        num_players=2,
        horizon=3,
        num_states=S,
        action_counts=(moves, moves),
        initial_state=0,
        transition=next_state,
        reward_mean=rewards,
        metadata={"name": "chain-pair"},
    )


@pytest.fixture(scope="session")
def chain_pair_game():
    return make_chain_pair_game()
