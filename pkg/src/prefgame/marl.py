"""Practical offline pipeline: imitation reference, KL shaping, VDN fitted-Q.

The reference policy is the exact tabular behavior-cloning MLE with Laplace
smoothing. Shaped rewards add the deterministic-learner KL surrogate
beta * sum_i log(|A_i| * pi_ref_i(a_i | s)) to the standardized reward, which
vanishes identically for a uniform reference and otherwise pulls greedy
choices toward the reference's modal actions. The learner is a backward
fitted-Q iteration whose team value is represented, exactly, as a sum of
per-agent action values (least-squares decomposition per state).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import PreferenceDataset
from .equilibrium import NashGapReport, nash_gap
from .games import JointPolicy, MarkovGame, exact_returns, rollout_batch
from .serialize import canonical_dumps, canonical_hash


@dataclass(frozen=True)
class ReferencePolicy:
    """Per-(h, i, s) action counts and Laplace-smoothed distributions."""

    counts: tuple[np.ndarray, ...]  # per player: (H, S, A_i) visit tallies
    kappa: float

    @property
    def num_players(self) -> int:
        return len(self.counts)

    def probs(self, i: int) -> np.ndarray:
        c = self.counts[i] + self.kappa
        return c / c.sum(axis=-1, keepdims=True)

    def factor_argmax(self, i: int) -> np.ndarray:
        """Modal action per (h, s), ties to the lowest index."""
        return self.probs(i).argmax(axis=-1)

    def as_policy(self) -> JointPolicy:
        return JointPolicy(factors=tuple(self.probs(i) for i in range(self.num_players)))


def save_reference(reference: ReferencePolicy, path) -> None:
    doc = {
        "schema": "reference-policy-v1",
        "kappa": reference.kappa,
        "counts": [c.tolist() for c in reference.counts],
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_dumps(doc))
        fh.write("\n")


def load_reference(path) -> ReferencePolicy:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != "reference-policy-v1":
        raise ValueError(f"unknown reference schema: {doc.get('schema')!r}")
    return ReferencePolicy(
        counts=tuple(np.asarray(c) for c in doc["counts"]), kappa=doc["kappa"]
    )


def load_vdn(path) -> VdnQ:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != "vdn-policy-v1":
        raise ValueError(f"unknown policy schema: {doc.get('schema')!r}")
    return VdnQ(q=tuple(np.asarray(t) for t in doc["tables"]), config=VdnConfig())


def fit_reference(dataset: PreferenceDataset, kappa: float = 1.0) -> ReferencePolicy:
    """Exact behavior-cloning counts over the trajectory pool.

    Laplace smoothing keeps every distribution strictly positive; an
    unvisited state yields the uniform distribution.
    """
    dims = dataset.meta.dims
    H, S = dims["horizon"], dims["num_states"]
    action_counts = dims["action_counts"]
    counts = [np.zeros((H, S, a)) for a in action_counts]
    hs = np.arange(H)
    for t in dataset.pool:
        for i in range(len(action_counts)):
            np.add.at(counts[i], (hs, t.states[:H], t.actions[:, i]), 1.0)
    return ReferencePolicy(counts=tuple(counts), kappa=float(kappa))


def kl_bonus_table(reference: ReferencePolicy, game: MarkovGame) -> np.ndarray:
    """sum_i [log pi_ref_i(a_i|s) - log(1/|A_i|)] per (h, s, joint a).

    Written as a difference of logs so a uniform reference gives exactly 0.0
    (identical floats cancel) rather than log of a rounded product.
    """
    H, S = game.horizon, game.num_states
    tuples = game.joint_action_tuples()
    out = np.zeros((H, S, game.num_joint_actions))
    for i in range(game.num_players):
        p = reference.probs(i)  # (H, S, A_i)
        log_unif = np.log(1.0 / game.action_counts[i])
        out += np.log(p[:, :, tuples[:, i]]) - log_unif
    return out


def shaped_reward(
    r_std: float, reference: ReferencePolicy, beta: float, h: int, s: int, a, game: MarkovGame
) -> float:
    """Single shaped value: r_std(s,a) + beta * sum_i log(|A_i| pi_ref_i(a_i|s)).

    `a` is the per-player action tuple. This is the 1/|A| substitution of the
    KL objective for learners without an explicit policy density.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    a = np.asarray(a, dtype=np.int64)
    bonus = 0.0
    for i in range(game.num_players):
        p = reference.probs(i)[h, s, a[i]]
        bonus += float(np.log(p) - np.log(1.0 / game.action_counts[i]))
    return float(r_std) + beta * bonus


def shaped_reward_table(
    r_std_table: np.ndarray, reference: ReferencePolicy, beta: float, game: MarkovGame
) -> np.ndarray:
    """Shaped rewards for all (h, s, joint a); r_std_table is (S, A_joint)."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return r_std_table[None, :, :] + beta * kl_bonus_table(reference, game)


@dataclass(frozen=True)
class VdnConfig:
    unseen_floor: float = 0.0  # per-agent value of (s, a_i) cells with no data
    seed: int = 0


@dataclass(frozen=True)
class VdnQ:
    """Per-agent action-value tables; the team value is their exact sum."""

    q: tuple[np.ndarray, ...]  # per player: (H, S, A_i)
    config: VdnConfig

    @property
    def num_players(self) -> int:
        return len(self.q)

    def team_q(self, game: MarkovGame, h: int) -> np.ndarray:
        """Summed table over joint actions, shape (S, A_joint)."""
        tuples = game.joint_action_tuples()
        out = np.zeros((game.num_states, game.num_joint_actions))
        for i in range(self.num_players):
            out += self.q[i][h][:, tuples[:, i]]
        return out

    def greedy_policy(self, game: MarkovGame) -> JointPolicy:
        """Deterministic per-agent argmax policy, ties to the lowest index."""
        H, S = game.horizon, game.num_states
        choices = np.empty((H, S, self.num_players), dtype=np.int64)
        for i in range(self.num_players):
            choices[:, :, i] = self.q[i].argmax(axis=-1)
        return JointPolicy.from_deterministic(game, choices)

    def to_dict(self) -> dict:
        return {
            "schema": "vdn-policy-v1",
            "tables": [q.tolist() for q in self.q],
            "config_hash": canonical_hash(vars(self.config).copy()),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_dumps(self.to_dict()))
            fh.write("\n")


def fitted_q_vdn(
    dataset: PreferenceDataset,
    shaped_rewards: np.ndarray,
    game: MarkovGame,
    config: VdnConfig = VdnConfig(),
) -> VdnQ:
    """Backward offline fitted-Q with an exact per-state sum decomposition.

    At each step the target of an observed (s, joint a) is the dataset
    average of [shaped reward + max_{a'} sum_i Q_{h+1,i}(s', a'_i)]; the
    per-agent tables then solve the count-weighted least-squares fit of those
    targets across the observed joint actions of each state (minimum-norm
    solution, deterministic). Per-agent cells never seen at (h, s) fall back
    to the configured pessimistic floor.
    """
    if len(dataset.pool) == 0:
        raise ValueError("cannot fit on an empty dataset")
    H, S, m = game.horizon, game.num_states, game.num_players
    action_counts = game.action_counts
    tuples = game.joint_action_tuples()

    pool_states = np.stack([t.states for t in dataset.pool])
    pool_joints = np.stack([game.joint_index(t.actions) for t in dataset.pool])

    q_tables = [np.full((H, S, a), config.unseen_floor) for a in action_counts]
    for h in range(H - 1, -1, -1):
        s_h = pool_states[:, h]
        a_h = pool_joints[:, h]
        s_next = pool_states[:, h + 1]
        if h == H - 1:
            future = np.zeros(len(s_h))
        else:
            next_best = sum(q_tables[i][h + 1].max(axis=-1) for i in range(m))  # (S,)
            future = next_best[s_next]
        targets = shaped_rewards[h, s_h, a_h] + future

        # Count-weighted average target per observed (s, joint a).
        flat = s_h * game.num_joint_actions + a_h
        sums = np.bincount(flat, weights=targets, minlength=S * game.num_joint_actions)
        counts = np.bincount(flat, minlength=S * game.num_joint_actions)
        observed = counts > 0
        y_bar = np.zeros(S * game.num_joint_actions)
        y_bar[observed] = sums[observed] / counts[observed]

        for s in range(S):
            mask = observed[s * game.num_joint_actions:(s + 1) * game.num_joint_actions]
            if not mask.any():
                continue
            acts = np.nonzero(mask)[0]
            w = counts[s * game.num_joint_actions + acts].astype(np.float64)
            y = y_bar[s * game.num_joint_actions + acts]
            # Design matrix over per-agent one-hots for the observed joints.
            cols = []
            offsets = np.cumsum([0] + [a for a in action_counts])
            X = np.zeros((len(acts), offsets[-1]))
            for r, a_joint in enumerate(acts):
                for i in range(m):
                    X[r, offsets[i] + tuples[a_joint, i]] = 1.0
            sw = np.sqrt(w)
            beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
            for i in range(m):
                seen_ai = np.unique(tuples[acts, i])
                q_tables[i][h, s, seen_ai] = beta[offsets[i] + seen_ai]
    return VdnQ(q=tuple(q_tables), config=config)


@dataclass(frozen=True)
class EvalReport:
    """Exact and Monte-Carlo returns plus the equilibrium-gap score."""

    exact_returns: np.ndarray       # (m,)
    mc_returns: np.ndarray          # (m,)
    mc_stderr: np.ndarray           # (m,)
    episodes: int
    gap_report: NashGapReport

    @property
    def nash_gap(self) -> float:
        return self.gap_report.total_gap

    @property
    def team_return(self) -> float:
        return float(self.exact_returns.mean())


def evaluate_policy(
    game: MarkovGame, policy: JointPolicy, episodes: int = 2000, seed: int = 0
) -> EvalReport:
    """Exact DP return (the reported number) with a Monte-Carlo confirmation."""
    exact = exact_returns(game, policy)
    rng = np.random.default_rng(seed)
    _, _, rewards = rollout_batch(game, policy, episodes, rng)
    totals = rewards.sum(axis=1)  # (episodes, m)
    mc = totals.mean(axis=0)
    se = totals.std(axis=0) / np.sqrt(episodes)
    report = nash_gap(game, policy)
    return EvalReport(
        exact_returns=exact,
        mc_returns=mc,
        mc_stderr=se,
        episodes=episodes,
        gap_report=report,
    )
