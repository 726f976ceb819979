"""Behavior-policy mixtures, trajectory pools, and Bradley-Terry labeling.

The preference dataset is the only thing learners may see: pairs of
reward-stripped trajectories plus per-player binary labels. Ground-truth
returns enter exactly once, inside `label_preferences`, and are discarded
afterwards.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .equilibrium import NonConstantSumError, solve_matrix_nash_2x2
from .games import (
    JointPolicy,
    MarkovGame,
    Trajectory,
    rollout,
    stable_sigmoid,
)
from .serialize import canonical_dumps

DATASET_SCHEMA = "preference-dataset-v1"

# Mixture ratio order follows (expert, unilateral, rookie, trivial).
MIXTURES = {
    "Diversified": (1, 1, 1, 1),
    "Mix-Unilateral": (2, 1, 0, 1),
    "Mix-Expert": (3, 0, 0, 1),
    "Pure-Expert": (4, 0, 0, 0),
}
COMPONENT_ORDER = ("expert", "unilateral", "rookie", "trivial")


class DatasetSizeError(ValueError):
    """Allocation request cannot cover all nonzero mixture components."""


class LabelModeError(ValueError):
    """Unknown labeling mode."""


@dataclass(frozen=True)
class BehaviorSuite:
    """Expert / rookie / trivial policies plus the m unilateral swaps.

    `unilateral[i]` is the expert with player i's component replaced by the
    unilateral-rookie factor; `trivial` is exactly uniform.
    """

    expert: JointPolicy
    rookie: JointPolicy
    trivial: JointPolicy
    unilateral: tuple[JointPolicy, ...]


@dataclass(frozen=True)
class TrajectoryPool:
    """Raw collected trajectories with their mixture-component tags."""

    trajectories: tuple[Trajectory, ...]
    tags: tuple[str, ...]
    component_counts: dict

    def __len__(self) -> int:
        return len(self.trajectories)

    def save(self, path, pairs: np.ndarray | None = None) -> None:
        """Unlabeled pool file: meta, one trajectory record each, pair indices."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_dumps({
                "kind": "meta",
                "schema": "trajectory-pool-v1",
                "component_counts": self.component_counts,
                "pool_size": len(self),
            }) + "\n")
            for k, t in enumerate(self.trajectories):
                fh.write(canonical_dumps({
                    "kind": "trajectory", "index": k, "tag": self.tags[k],
                    "states": t.states.tolist(), "actions": t.actions.tolist(),
                }) + "\n")
            if pairs is not None:
                for a, b in np.asarray(pairs, dtype=np.int64):
                    fh.write(canonical_dumps({"kind": "pairidx", "a": int(a), "b": int(b)}) + "\n")

    @staticmethod
    def load(path) -> tuple["TrajectoryPool", np.ndarray]:
        with open(path, "r", encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        meta = records[0]
        if meta.get("schema") != "trajectory-pool-v1":
            raise ValueError(f"unknown pool schema: {meta.get('schema')!r}")
        trajectories: list[Trajectory | None] = [None] * meta["pool_size"]
        tags: list[str | None] = [None] * meta["pool_size"]
        pairs = []
        for rec in records[1:]:
            if rec["kind"] == "trajectory":
                trajectories[rec["index"]] = Trajectory(
                    np.asarray(rec["states"]), np.asarray(rec["actions"])
                )
                tags[rec["index"]] = rec["tag"]
            elif rec["kind"] == "pairidx":
                pairs.append([rec["a"], rec["b"]])
        pool = TrajectoryPool(tuple(trajectories), tuple(tags), meta["component_counts"])
        return pool, np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class PreferencePair:
    """One labeled comparison; trajectories are reward-stripped views."""

    tau_a: Trajectory
    tau_b: Trajectory
    labels: np.ndarray      # (m,) in {+1, -1}; +1 means tau_a preferred
    source_tags: tuple[str, str]


@dataclass(frozen=True)
class DatasetMeta:
    game_id: str
    mixture: str
    steepness: float
    seed: int
    label_mode: str
    component_counts: dict
    dims: dict  # players, horizon, num_states, action_counts
    warnings: tuple[str, ...] = ()
    schema: str = DATASET_SCHEMA


@dataclass(frozen=True)
class PreferenceDataset:
    """Learner-facing dataset: stripped pool, pair indices, labels, meta.

    No accessor reachable from here exposes realized rewards; stripping
    happens at construction and is audited by tests.
    """

    pool: tuple[Trajectory, ...]
    pool_tags: tuple[str, ...]
    pair_indices: np.ndarray  # (n_pairs, 2) into pool
    labels: np.ndarray        # (n_pairs, m) in {+1, -1}
    meta: DatasetMeta

    def __post_init__(self):
        for t in self.pool:
            if t.realized_rewards is not None:
                raise ValueError("dataset pool must be reward-stripped")
        idx = np.asarray(self.pair_indices, dtype=np.int64)
        lab = np.asarray(self.labels, dtype=np.int8)
        idx.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "pair_indices", idx)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.pair_indices)

    @property
    def num_players(self) -> int:
        return self.labels.shape[1]

    def pair(self, k: int) -> PreferencePair:
        i, j = self.pair_indices[k]
        return PreferencePair(
            tau_a=self.pool[i],
            tau_b=self.pool[j],
            labels=self.labels[k],
            source_tags=(self.pool_tags[i], self.pool_tags[j]),
        )

    def pairs(self):
        for k in range(len(self)):
            yield self.pair(k)

    # -- persistence --------------------------------------------------------

    def to_records(self) -> list[dict]:
        meta = {
            "kind": "meta",
            "schema": self.meta.schema,
            "game_id": self.meta.game_id,
            "mixture": self.meta.mixture,
            "steepness": self.meta.steepness,
            "seed": self.meta.seed,
            "label_mode": self.meta.label_mode,
            "component_counts": self.meta.component_counts,
            "dims": self.meta.dims,
            "warnings": list(self.meta.warnings),
            "pool_size": len(self.pool),
            "num_pairs": len(self),
        }
        records = [meta]
        seen = np.zeros(len(self.pool), dtype=bool)

        def traj_doc(t: Trajectory) -> dict:
            return {"states": t.states.tolist(), "actions": t.actions.tolist()}

        for k in range(len(self)):
            i, j = (int(x) for x in self.pair_indices[k])
            seen[i] = seen[j] = True
            records.append(
                {
                    "kind": "pair",
                    "a_index": i,
                    "b_index": j,
                    "a": traj_doc(self.pool[i]),
                    "b": traj_doc(self.pool[j]),
                    "labels": self.labels[k].tolist(),
                    "tags": [self.pool_tags[i], self.pool_tags[j]],
                }
            )
        for i in np.nonzero(~seen)[0]:
            records.append(
                {"kind": "trajectory", "index": int(i), "tag": self.pool_tags[i],
                 **traj_doc(self.pool[i])}
            )
        return records

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.to_records():
                fh.write(canonical_dumps(rec))
                fh.write("\n")

    @staticmethod
    def load(path) -> "PreferenceDataset":
        with open(path, "r", encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        meta_rec = records[0]
        if meta_rec.get("schema") != DATASET_SCHEMA:
            raise ValueError(f"unknown dataset schema: {meta_rec.get('schema')!r}")
        pool: list[Trajectory | None] = [None] * meta_rec["pool_size"]
        tags: list[str | None] = [None] * meta_rec["pool_size"]
        pair_indices, labels = [], []

        def put(idx: int, doc: dict, tag: str):
            if pool[idx] is None:
                pool[idx] = Trajectory(np.asarray(doc["states"]), np.asarray(doc["actions"]))
                tags[idx] = tag

        for rec in records[1:]:
            if rec["kind"] == "pair":
                put(rec["a_index"], rec["a"], rec["tags"][0])
                put(rec["b_index"], rec["b"], rec["tags"][1])
                pair_indices.append([rec["a_index"], rec["b_index"]])
                labels.append(rec["labels"])
            elif rec["kind"] == "trajectory":
                put(rec["index"], rec, rec["tag"])
        meta = DatasetMeta(
            game_id=meta_rec["game_id"],
            mixture=meta_rec["mixture"],
            steepness=meta_rec["steepness"],
            seed=meta_rec["seed"],
            label_mode=meta_rec["label_mode"],
            component_counts=meta_rec["component_counts"],
            dims=meta_rec["dims"],
            warnings=tuple(meta_rec["warnings"]),
        )
        m = meta.dims["players"]
        return PreferenceDataset(
            pool=tuple(pool),
            pool_tags=tuple(tags),
            pair_indices=np.asarray(pair_indices, dtype=np.int64).reshape(-1, 2),
            labels=np.asarray(labels, dtype=np.int8).reshape(-1, m),
            meta=meta,
        )


# ---------------------------------------------------------------------------
# Behavior suites
# ---------------------------------------------------------------------------


def _softmax(scores: np.ndarray, temperature: float) -> np.ndarray:
    z = scores / max(temperature, 1e-12)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _expert_and_scores(game: MarkovGame) -> tuple[JointPolicy, list[np.ndarray]]:
    """Exact-DP expert plus the per-player softening scores.

    Cooperative case: greedy maximization of the team (summed) reward, and
    player i's scores are the team Q at one-step deviations from the expert
    joint action. One-step 2x2 constant-sum games get the matrix-Nash expert
    instead, with scores from each player's expected payoff against the
    equilibrium opponent; that path requires a pure equilibrium.
    """
    if game.horizon == 1 and game.num_players == 2 and game.action_counts == (2, 2):
        try:
            expert = solve_matrix_nash_2x2(game)
        except NonConstantSumError:
            expert = None
        if expert is not None:
            factors = expert.require_product()
            if not all(np.isin(f, (0.0, 1.0)).all() for f in factors):
                raise NonConstantSumError(
                    "softening a mixed matrix equilibrium is not supported"
                )
            scores = []
            probs = expert.joint_probs(game)
            r = game.reward_at(0)
            for i in range(2):
                other = factors[1 - i][0]  # (S, 2)
                q = r[:, :, i].reshape(game.num_states, 2, 2)
                if i == 0:
                    si = np.einsum("sab,sb->sa", q, other)
                else:
                    si = np.einsum("sab,sa->sb", q, other)
                scores.append(si[None])  # (H=1, S, A_i)
            return expert, scores

    H, S = game.horizon, game.num_states
    V = np.zeros((H + 1, S))
    greedy = np.zeros((H, S), dtype=np.int64)
    team_q = np.zeros((H, S, game.num_joint_actions))
    for h in range(H - 1, -1, -1):
        q = game.reward_at(h).sum(axis=-1) + game.expected_next(h, V[h + 1])
        team_q[h] = q
        greedy[h] = q.argmax(axis=1)
        V[h] = q[np.arange(S), greedy[h]]
    expert = JointPolicy.from_joint_choices(game, greedy)
    tuples = game.joint_action_tuples()
    expert_tuples = tuples[greedy]  # (H, S, m)
    scores = []
    for i in range(game.num_players):
        si = np.empty((H, S, game.action_counts[i]))
        for ai in range(game.action_counts[i]):
            dev = expert_tuples.copy()
            dev[:, :, i] = ai
            joint = game.joint_index(dev)  # (H, S)
            h_idx, s_idx = np.meshgrid(np.arange(H), np.arange(S), indexing="ij")
            si[:, :, ai] = team_q[h_idx, s_idx, joint]
        scores.append(si)
    return expert, scores


def derive_behavior_suite(
    game: MarkovGame,
    softening_temperatures: tuple[float, float] | float = (0.25, 1.0),
    seed: int = 0,
) -> BehaviorSuite:
    """Expert, softened rookie, uniform trivial, and per-player unilateral swaps.

    The rookie softens the expert's action scores with a softmax at the first
    temperature; each unilateral policy swaps one player's component for a
    rookie at the second temperature (a different proficiency level). The
    construction is deterministic; `seed` is accepted for interface
    uniformity with the collection stage.
    """
    del seed
    if isinstance(softening_temperatures, (int, float)):
        softening_temperatures = (float(softening_temperatures),) * 2
    t_rookie, t_unilateral = softening_temperatures
    expert, scores = _expert_and_scores(game)

    def soften(temperature: float) -> tuple[np.ndarray, ...]:
        return tuple(_softmax(s, temperature) for s in scores)

    rookie = JointPolicy(factors=soften(t_rookie))
    uni_factors = soften(t_unilateral)
    unilateral = tuple(
        expert.replace_player(i, uni_factors[i]) for i in range(game.num_players)
    )
    trivial = JointPolicy.uniform(game)
    return BehaviorSuite(expert=expert, rookie=rookie, trivial=trivial, unilateral=unilateral)


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------


def largest_remainder_allocation(ratios, total: int) -> np.ndarray:
    """Apportion `total` items proportionally to `ratios` (largest remainder)."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if (ratios < 0).any() or ratios.sum() <= 0:
        raise DatasetSizeError("ratios must be nonnegative and not all zero")
    quota = ratios / ratios.sum() * total
    alloc = np.floor(quota).astype(np.int64)
    remainder = total - alloc.sum()
    order = np.argsort(-(quota - alloc), kind="stable")
    alloc[order[:remainder]] += 1
    return alloc


def collect_pool(
    game: MarkovGame,
    components: list[tuple[str, JointPolicy, int]],
    seed: int,
) -> TrajectoryPool:
    """Roll out `count` trajectories per (tag, policy, count) component."""
    rng = np.random.default_rng(seed)
    trajectories, tags = [], []
    counts = {}
    for tag, policy, count in components:
        for _ in range(count):
            trajectories.append(rollout(game, policy, rng))
        tags.extend([tag] * count)
        counts[tag] = counts.get(tag, 0) + count
    return TrajectoryPool(tuple(trajectories), tuple(tags), counts)


def draw_pairs(n_pairs: int, pool_size: int, seed: int) -> np.ndarray:
    """Uniform-with-replacement pair indices, shape (n_pairs, 2)."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, pool_size, size=(n_pairs, 2), dtype=np.int64)


def collect_dataset(
    game: MarkovGame,
    suite: BehaviorSuite,
    mixture_ratios,
    total_trajectories: int,
    pairs_multiplier: int = 10,
    seed: int = 0,
) -> tuple[TrajectoryPool, np.ndarray]:
    """Mixture-allocated trajectory pool plus uniformly drawn pair indices.

    `mixture_ratios` follows the (expert, unilateral, rookie, trivial) order;
    the unilateral block cycles round-robin over the m per-player swap
    policies. The pair list has pairs_multiplier * total_trajectories rows.
    """
    ratios = np.asarray(mixture_ratios, dtype=np.float64)
    if ratios.shape != (4,):
        raise DatasetSizeError("mixture_ratios must have 4 entries")
    nonzero = int((ratios > 0).sum())
    if total_trajectories < nonzero:
        raise DatasetSizeError(
            f"{total_trajectories} trajectories cannot cover {nonzero} mixture components"
        )
    alloc = largest_remainder_allocation(ratios, total_trajectories)
    components: list[tuple[str, JointPolicy, int]] = []
    for name, count in zip(COMPONENT_ORDER, alloc):
        count = int(count)
        if count == 0:
            continue
        if name == "unilateral":
            m = game.num_players
            per = [count // m + (1 if k < count % m else 0) for k in range(m)]
            for k, c in enumerate(per):
                if c > 0:
                    components.append((f"unilateral:{k}", suite.unilateral[k], c))
        else:
            components.append((name, getattr(suite, name), count))
    pool = collect_pool(game, components, seed)
    pairs = draw_pairs(pairs_multiplier * total_trajectories, len(pool), seed + 1)
    return pool, pairs


# ---------------------------------------------------------------------------
# Labeling
# ---------------------------------------------------------------------------


def trajectory_returns(game: MarkovGame, pool: TrajectoryPool) -> np.ndarray:
    """Ground-truth per-player returns of each pooled trajectory, (n, m)."""
    n = len(pool)
    out = np.empty((n, game.num_players))
    for k, t in enumerate(pool.trajectories):
        joint = game.joint_index(t.actions)
        out[k] = sum(
            game.reward_at(h)[t.states[h], joint[h]] for h in range(game.horizon)
        )
    return out


def label_preferences(
    pool: TrajectoryPool,
    pairs: np.ndarray,
    game_oracle: MarkovGame,
    steepness: float = 5.0,
    seed: int = 0,
    mode: str = "standardized-return",
    mixture_name: str = "custom",
) -> PreferenceDataset:
    """Sample Bradley-Terry labels over (standardized) returns and strip rewards.

    For each player i, P(label = +1) = sigmoid(steepness * (z_i(tau_a) -
    z_i(tau_b))) with z the per-player return, standardized over the pool in
    standardized mode. Raw mode at steepness 1 is exactly the logistic
    preference model on raw returns. Labels are drawn independently per
    player; a zero-variance pool drops to raw mode with a recorded warning.
    """
    if mode not in ("raw-return", "standardized-return"):
        raise LabelModeError(f"unknown labeling mode {mode!r}")
    if steepness <= 0:
        raise ValueError("steepness must be positive")
    pairs = np.asarray(pairs, dtype=np.int64)
    returns = trajectory_returns(game_oracle, pool)  # (n, m)
    warn_notes: list[str] = []
    effective_mode = mode
    if mode == "standardized-return":
        std = returns.std(axis=0)
        if (std <= 1e-12).any():
            flat = [int(i) for i in np.nonzero(std <= 1e-12)[0]]
            warn_notes.append(
                f"zero return variance for players {flat}; fell back to raw-return mode"
            )
            warnings.warn(warn_notes[-1])
            effective_mode = "raw-return"
        else:
            returns = (returns - returns.mean(axis=0)) / std
    rng = np.random.default_rng(seed)
    diff = returns[pairs[:, 0]] - returns[pairs[:, 1]]  # (n_pairs, m)
    p_prefer_a = stable_sigmoid(steepness * diff)
    labels = np.where(rng.random(p_prefer_a.shape) < p_prefer_a, 1, -1).astype(np.int8)
    meta = DatasetMeta(
        game_id=game_oracle.game_id(),
        mixture=mixture_name,
        steepness=float(steepness),
        seed=int(seed),
        label_mode=effective_mode,
        component_counts=dict(pool.component_counts),
        dims={
            "players": game_oracle.num_players,
            "horizon": game_oracle.horizon,
            "num_states": game_oracle.num_states,
            "action_counts": list(game_oracle.action_counts),
        },
        warnings=tuple(warn_notes),
    )
    return PreferenceDataset(
        pool=tuple(t.stripped() for t in pool.trajectories),
        pool_tags=pool.tags,
        pair_indices=pairs,
        labels=labels,
        meta=meta,
    )


def make_dataset(
    game: MarkovGame,
    mixture: str,
    total_trajectories: int,
    steepness: float = 5.0,
    seed: int = 0,
    mode: str = "standardized-return",
    pairs_multiplier: int = 10,
    softening_temperatures: tuple[float, float] | float = (0.25, 1.0),
) -> PreferenceDataset:
    """End-to-end dataset build for a named Table-style mixture."""
    if mixture not in MIXTURES:
        raise DatasetSizeError(f"unknown mixture {mixture!r}; choose from {sorted(MIXTURES)}")
    suite = derive_behavior_suite(game, softening_temperatures, seed)
    pool, pairs = collect_dataset(
        game, suite, MIXTURES[mixture], total_trajectories, pairs_multiplier, seed
    )
    return label_preferences(
        pool, pairs, game, steepness=steepness, seed=seed + 2, mode=mode, mixture_name=mixture
    )
