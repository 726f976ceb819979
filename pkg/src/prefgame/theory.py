"""Pessimistic evaluation, optimistic best response, surrogate minimization.

The statistical machinery behind the unilateral-coverage guarantee: value
estimates are ridge regressions on dataset transitions with covariance
bonuses subtracted (pessimism, for the evaluated policy) or added (optimism,
for the best response), and the surrogate of a policy sums the optimistic
best-response values minus the pessimistic own values. Minimizing the
surrogate over a finite policy class upper-bounds the Nash gap on the
high-probability event where the bonuses are valid.

Bonus constants: the reward radius comes from the MLE estimate; the
transition bonus uses C_P = C * d * H * sqrt(log(2 d N H / delta)) with N
counting both trajectories of every pair.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .coverage import CovarianceSet
from .datasets import PreferenceDataset
from .equilibrium import _contract_others
from .games import JointPolicy, MarkovGame
from .rewards import RewardEstimate, reward_bound_tables


class PolicyClassTooLarge(ValueError):
    """Enumeration would exceed the configured candidate cap."""


@dataclass(frozen=True)
class TheoryConfig:
    delta: float = 0.05
    lam: float = 1.0
    C: float = 0.1

    def __post_init__(self):
        if not (0 < self.delta < 1) or self.lam <= 0 or self.C <= 0:
            raise ValueError("delta in (0,1), lambda > 0, C > 0 required")

    def c_p(self, d: int, n_samples: int, H: int) -> float:
        n = max(n_samples, 1)
        return self.C * d * H * np.sqrt(np.log(2.0 * d * n * H / self.delta))


@dataclass(frozen=True)
class ValueEstimate:
    """Backward-recursion tables: V is (H+1, S), Q is (H, S, A_joint).

    kind is "pessimistic" (V follows the evaluated policy) or
    "optimistic-best-response" (V maximizes player i's action against the
    frozen others). Q values are clipped into [0, H]; clipping only deepens
    pessimism / optimism, so the high-probability orderings survive it.
    """

    kind: str
    player: int
    v: np.ndarray
    q: np.ndarray
    weights: np.ndarray  # (H, d)

    def initial_value(self, game: MarkovGame) -> float:
        return float(self.v[0, game.initial_state])


@dataclass(frozen=True)
class PreparedTheoryData:
    """Dataset tensors shared across every policy evaluation.

    Holding these fixed makes surrogate minimization a pure DP loop per
    candidate: feature matrices and pessimistic/optimistic reward targets at
    the dataset points do not depend on the policy being scored.
    """

    psi_data: np.ndarray      # (H, N, d) features of dataset transition samples
    next_states: np.ndarray   # (H, N)
    r_lo_data: np.ndarray     # (H, N, m) pessimistic rewards at sample points
    r_hi_data: np.ndarray     # (H, N, m)
    psi_table: np.ndarray     # (S, A, d)
    bonus_p: np.ndarray       # (H, S, A): C_P * ||psi||_{sigma_p^{-1}}
    sigma_p_inv: np.ndarray   # (H, d, d)
    c_p: float
    horizon: int

    @staticmethod
    def build(
        game: MarkovGame,
        dataset: PreferenceDataset,
        cov: CovarianceSet,
        estimate: RewardEstimate,
        config: TheoryConfig,
    ) -> "PreparedTheoryData":
        if game.features is None:
            raise ValueError("theory solver requires a linearly parameterized game")
        psi = game.features.psi
        if psi.shape[2] != cov.d or game.horizon != cov.horizon:
            raise ValueError("covariance/feature dimension mismatch")
        H, d = game.horizon, cov.d
        idx = dataset.pair_indices
        pool_states = np.stack([t.states for t in dataset.pool])       # (n_pool, H+1)
        pool_joints = np.stack(
            [game.joint_index(t.actions) for t in dataset.pool]
        )                                                              # (n_pool, H)
        sample_pool = np.concatenate([idx[:, 0], idx[:, 1]])           # (N,)
        N = len(sample_pool)  # both trajectories of every pair
        states = pool_states[sample_pool].T                            # (H+1, N)
        joints = pool_joints[sample_pool].T                            # (H, N)
        psi_data = psi[states[:H], joints]                             # (H, N, d)
        lo, hi = reward_bound_tables(estimate, game)                   # (H, S, A, m)
        h_idx = np.arange(H)[:, None]
        r_lo_data = lo[h_idx, states[:H], joints]                      # (H, N, m)
        r_hi_data = hi[h_idx, states[:H], joints]
        c_p = config.c_p(d, N, H)
        bonus_p = c_p * cov.transition_bonus_table(game)
        return PreparedTheoryData(
            psi_data=psi_data,
            next_states=states[1:],
            r_lo_data=r_lo_data,
            r_hi_data=r_hi_data,
            psi_table=psi,
            bonus_p=bonus_p,
            sigma_p_inv=cov.sigma_p_inv,
            c_p=float(c_p),
            horizon=H,
        )


def _prepare(game, dataset, cov, estimate, config, prepared):
    if prepared is not None:
        return prepared
    return PreparedTheoryData.build(game, dataset, cov, estimate, config)


def _regression_weights(prep: PreparedTheoryData, h: int, targets: np.ndarray) -> np.ndarray:
    return prep.sigma_p_inv[h] @ (prep.psi_data[h].T @ targets)


def pessimistic_value(
    game: MarkovGame,
    dataset: PreferenceDataset,
    cov: CovarianceSet,
    estimate: RewardEstimate,
    policy: JointPolicy,
    i: int,
    config: TheoryConfig = TheoryConfig(),
    prepared: PreparedTheoryData | None = None,
) -> ValueEstimate:
    """Lower-bounding value of `policy` for player i.

    Backward from h = H: regress pessimistic targets on dataset features,
    subtract the covariance bonus, clip into [0, H], and average under the
    policy's joint action law.
    """
    prep = _prepare(game, dataset, cov, estimate, config, prepared)
    H, S = game.horizon, game.num_states
    probs = policy.joint_probs(game)
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, game.num_joint_actions))
    W = np.zeros((H, cov.d))
    for h in range(H - 1, -1, -1):
        targets = prep.r_lo_data[h, :, i] + V[h + 1][prep.next_states[h]]
        w = _regression_weights(prep, h, targets)
        W[h] = w
        Q[h] = np.clip(prep.psi_table @ w - prep.bonus_p[h], 0.0, H)
        V[h] = (probs[h] * Q[h]).sum(axis=1)
    return ValueEstimate(kind="pessimistic", player=i, v=V, q=Q, weights=W)


def optimistic_best_response(
    game: MarkovGame,
    dataset: PreferenceDataset,
    cov: CovarianceSet,
    estimate: RewardEstimate,
    policy_minus_i: JointPolicy,
    i: int,
    config: TheoryConfig = TheoryConfig(),
    prepared: PreparedTheoryData | None = None,
) -> ValueEstimate:
    """Upper-bounding best-response value for player i against frozen others.

    Same recursion with optimistic targets and an added bonus; the step value
    maximizes over player i's actions of the expectation over the others.
    """
    prep = _prepare(game, dataset, cov, estimate, config, prepared)
    factors = policy_minus_i.require_product()
    H, S = game.horizon, game.num_states
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, game.num_joint_actions))
    W = np.zeros((H, cov.d))
    for h in range(H - 1, -1, -1):
        targets = prep.r_hi_data[h, :, i] + V[h + 1][prep.next_states[h]]
        w = _regression_weights(prep, h, targets)
        W[h] = w
        Q[h] = np.clip(prep.psi_table @ w + prep.bonus_p[h], 0.0, H)
        qi = _contract_others(Q[h], factors, h, i, game.action_counts)
        V[h] = qi.max(axis=1)
    return ValueEstimate(kind="optimistic-best-response", player=i, v=V, q=Q, weights=W)


def surrogate_value(
    game: MarkovGame,
    dataset: PreferenceDataset,
    cov: CovarianceSet,
    estimate: RewardEstimate,
    policy: JointPolicy,
    config: TheoryConfig = TheoryConfig(),
    prepared: PreparedTheoryData | None = None,
) -> float:
    """Sum over players of optimistic best response minus pessimistic value."""
    prep = _prepare(game, dataset, cov, estimate, config, prepared)
    total = 0.0
    for i in range(game.num_players):
        lo = pessimistic_value(game, dataset, cov, estimate, policy, i, config, prep)
        hi = optimistic_best_response(game, dataset, cov, estimate, policy, i, config, prep)
        total += hi.initial_value(game) - lo.initial_value(game)
    return float(total)


def deterministic_policy_count(game: MarkovGame) -> int:
    HS = game.horizon * game.num_states
    count = 1
    for a in game.action_counts:
        count *= a**HS
    return count


def enumerate_deterministic_policies(game: MarkovGame):
    """All deterministic Markov product policies, lexicographic order.

    Assignment slots are ordered (player, step, state) with the last slot
    varying fastest; each yields the joint choice table for
    `JointPolicy.from_deterministic`.
    """
    H, S = game.horizon, game.num_states
    slots = [range(a) for a in game.action_counts for _ in range(H * S)]
    for assignment in itertools.product(*slots):
        choices = np.asarray(assignment, dtype=np.int64).reshape(
            game.num_players, H, S
        ).transpose(1, 2, 0)
        yield JointPolicy.from_deterministic(game, choices)


def surrogate_minimize(
    game: MarkovGame,
    dataset: PreferenceDataset,
    cov: CovarianceSet,
    estimate: RewardEstimate,
    policy_class=None,
    config: TheoryConfig = TheoryConfig(),
    candidate_cap: int = 10**6,
    trace_path=None,
) -> tuple[JointPolicy, float]:
    """Argmin of the surrogate over a finite policy class.

    The default class is every deterministic Markov product policy; an
    explicit iterable of JointPolicy candidates may be passed instead. Ties
    break toward the earliest candidate. With `trace_path`, one CSV row per
    candidate records the per-player value estimates and the surrogate.
    """
    if policy_class is None:
        count = deterministic_policy_count(game)
        if count > candidate_cap:
            raise PolicyClassTooLarge(
                f"{count} deterministic policies exceed the cap of {candidate_cap}"
            )
        policy_class = enumerate_deterministic_policies(game)
    prep = PreparedTheoryData.build(game, dataset, cov, estimate, config)
    best_policy, best_value = None, np.inf
    trace_rows = []
    for k, policy in enumerate(policy_class):
        los, his = [], []
        for i in range(game.num_players):
            lo = pessimistic_value(game, dataset, cov, estimate, policy, i, config, prep)
            hi = optimistic_best_response(game, dataset, cov, estimate, policy, i, config, prep)
            los.append(lo.initial_value(game))
            his.append(hi.initial_value(game))
        value = float(sum(his) - sum(los))
        if trace_path is not None:
            trace_rows.append(
                [k] + [repr(v) for v in los] + [repr(v) for v in his] + [repr(value)]
            )
        if value < best_value:
            best_policy, best_value = policy, value
    if trace_path is not None:
        m = game.num_players
        header = (
            ["policy_id"]
            + [f"pessimistic_{i}" for i in range(m)]
            + [f"optimistic_br_{i}" for i in range(m)]
            + ["surrogate"]
        )
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in trace_rows:
                fh.write(",".join(str(c) for c in row) + "\n")
    if best_policy is None:
        raise ValueError("empty policy class")
    return best_policy, best_value
