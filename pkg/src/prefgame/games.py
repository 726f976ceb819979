"""Episodic, time-inhomogeneous general-sum Markov games on finite spaces.

A game couples tabular dynamics (dense rows or a deterministic next-state
table) with per-player mean rewards in [0, 1] and, optionally, a linear
parameterization (features psi(s, a), transition factors mu_h, reward vectors
theta_{h,i}) that reconstructs both tables exactly. Everything here is an
exact desk-scale oracle: dynamic programming gives values without sampling,
and rollouts exist only to feed dataset generation and Monte-Carlo checks.

Players, states and actions are 0-indexed. Joint actions are flattened
row-major with the last player's action varying fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

TRANSITION_ATOL = 1e-9
REWARD_ATOL = 1e-9
LINEAR_RECON_ATOL = 1e-9

GAME_SCHEMA = "markov-game-v1"

MAX_GRID_STATES = 100_000
MAX_FEATURE_CELLS = 5_000_000


class GameValidationError(ValueError):
    """A game table violates one of its structural invariants."""


class GameSizeError(ValueError):
    """Requested construction exceeds the documented tabular size caps."""


class GameConstructionError(RuntimeError):
    """Random construction failed to produce a valid game."""


class PolicyNotSupportedError(ValueError):
    """Operation requires a product policy but got a correlated one."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def stable_sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Linear parameterization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearParameterization:
    """Feature model: P_h(s'|s,a) = <psi(s,a), mu_h(s')>, r_i = <psi(s,a), theta_{h,i}>.

    Norm bounds follow the standard linear Markov game convention:
    ||psi(s,a)|| <= 1, ||mu_h(s')|| <= sqrt(d), ||theta_{h,i}|| <= sqrt(d).
    The lifted feature places psi(s,a) in block h of an H*d vector and is
    what reward-coverage norms are measured against.
    """

    psi: np.ndarray    # (S, A_joint, d)
    mu: np.ndarray     # (H, S, d), mu[h][s'] is the factor for landing in s'
    theta: np.ndarray  # (H, m, d)

    def __post_init__(self):
        object.__setattr__(self, "psi", _readonly(np.asarray(self.psi, dtype=np.float64)))
        object.__setattr__(self, "mu", _readonly(np.asarray(self.mu, dtype=np.float64)))
        object.__setattr__(self, "theta", _readonly(np.asarray(self.theta, dtype=np.float64)))
        if self.psi.ndim != 3 or self.mu.ndim != 3 or self.theta.ndim != 3:
            raise GameValidationError("psi, mu, theta must be rank-3 arrays")
        d = self.d
        if self.mu.shape[2] != d or self.theta.shape[2] != d:
            raise GameValidationError("feature dimension mismatch between psi, mu, theta")
        tol = 1e-9
        if np.linalg.norm(self.psi, axis=-1).max() > 1.0 + tol:
            raise GameValidationError("||psi(s,a)|| must be <= 1")
        bound = np.sqrt(d) + tol
        if np.linalg.norm(self.mu, axis=-1).max() > bound:
            raise GameValidationError("||mu_h(s')|| must be <= sqrt(d)")
        if np.linalg.norm(self.theta, axis=-1).max() > bound:
            raise GameValidationError("||theta_{h,i}|| must be <= sqrt(d)")

    @property
    def d(self) -> int:
        return self.psi.shape[2]

    @property
    def horizon(self) -> int:
        return self.mu.shape[0]

    def lifted(self, h: int, psi_vec: np.ndarray) -> np.ndarray:
        """Embed psi_vec into block h of an (H*d,) vector, zeros elsewhere."""
        H, d = self.horizon, self.d
        out = np.zeros(H * d)
        out[h * d:(h + 1) * d] = psi_vec
        return out

    def trajectory_features(self, states: np.ndarray, joint_actions: np.ndarray) -> np.ndarray:
        """Concatenated per-step features [psi(s_1,a_1), ..., psi(s_H,a_H)]."""
        H = len(joint_actions)
        return self.psi[states[:H], joint_actions].reshape(H * self.d)


# ---------------------------------------------------------------------------
# Joint policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JointPolicy:
    """Markov joint policy over a game's spaces.

    The first-class form is a product policy: `factors[i]` has shape
    (H, S, A_i) and the joint law is the per-state outer product. A correlated
    joint table (H, S, A_joint) may be supplied instead for behavior
    distributions that do not factorize; the tag then reads "correlated" and
    operations that need per-player components refuse it.
    """

    factors: tuple[np.ndarray, ...] | None
    joint_table: np.ndarray | None = None

    def __post_init__(self):
        if (self.factors is None) == (self.joint_table is None):
            raise GameValidationError("exactly one of factors / joint_table must be given")
        if self.factors is not None:
            fs = tuple(_readonly(np.asarray(f, dtype=np.float64)) for f in self.factors)
            object.__setattr__(self, "factors", fs)
            for f in fs:
                _check_rows(f, "policy factor")
        else:
            jt = _readonly(np.asarray(self.joint_table, dtype=np.float64))
            object.__setattr__(self, "joint_table", jt)
            _check_rows(jt, "joint policy table")

    @property
    def tag(self) -> str:
        return "product" if self.factors is not None else "correlated"

    @property
    def horizon(self) -> int:
        return self.factors[0].shape[0] if self.factors is not None else self.joint_table.shape[0]

    def require_product(self) -> tuple[np.ndarray, ...]:
        if self.factors is None:
            raise PolicyNotSupportedError("correlated policies are not supported here")
        return self.factors

    def joint_probs(self, game: "MarkovGame") -> np.ndarray:
        """Distribution over joint actions, shape (H, S, A_joint)."""
        if self.joint_table is not None:
            return self.joint_table
        H, S = self.horizon, game.num_states
        out = np.ones((H, S, 1))
        for f in self.factors:
            out = out[:, :, :, None] * f[:, :, None, :]
            out = out.reshape(H, S, -1)
        return out

    def action_probs(self, h: int, i: int, s: int) -> np.ndarray:
        return self.require_product()[i][h, s]

    def replace_player(self, i: int, factor: np.ndarray) -> "JointPolicy":
        """Unilateral replacement: player i's factor swapped, others kept."""
        fs = list(self.require_product())
        fs[i] = factor
        return JointPolicy(factors=tuple(fs))

    @staticmethod
    def uniform(game: "MarkovGame") -> "JointPolicy":
        fs = tuple(
            np.full((game.horizon, game.num_states, a), 1.0 / a)
            for a in game.action_counts
        )
        return JointPolicy(factors=fs)

    @staticmethod
    def from_deterministic(game: "MarkovGame", choices: np.ndarray) -> "JointPolicy":
        """Point-mass product policy from per-player choices, shape (H, S, m)."""
        choices = np.asarray(choices, dtype=np.int64)
        fs = []
        for i, a in enumerate(game.action_counts):
            f = np.zeros((game.horizon, game.num_states, a))
            h_idx, s_idx = np.meshgrid(
                np.arange(game.horizon), np.arange(game.num_states), indexing="ij"
            )
            f[h_idx, s_idx, choices[:, :, i]] = 1.0
            fs.append(f)
        return JointPolicy(factors=tuple(fs))

    @staticmethod
    def from_joint_choices(game: "MarkovGame", joint_choices: np.ndarray) -> "JointPolicy":
        """Deterministic product policy from per-(h,s) joint action indices."""
        tuples = game.joint_action_tuples()[np.asarray(joint_choices, dtype=np.int64)]
        return JointPolicy.from_deterministic(game, tuples)


def _check_rows(arr: np.ndarray, what: str) -> None:
    if arr.ndim != 3:
        raise GameValidationError(f"{what} must have shape (H, S, A)")
    if arr.min() < -TRANSITION_ATOL:
        raise GameValidationError(f"{what} has negative entries")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-8):
        raise GameValidationError(f"{what} rows must sum to 1")


# ---------------------------------------------------------------------------
# The game itself
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkovGame:
    """Finite general-sum Markov game with optional linear features.

    transition is either
      * a dense float tensor (Ht, S, A_joint, S) of probability rows, or
      * an int tensor (Ht, S, A_joint) of deterministic successor states,
    where Ht is 1 (stationary dynamics shared across steps) or H. Rewards are
    mean tables (Hr, S, A_joint, m) with Hr in {1, H}; `reward_noise` selects
    deterministic means or Bernoulli draws with those means.
    """

    num_players: int
    horizon: int
    num_states: int
    action_counts: tuple[int, ...]
    initial_state: int
    transition: np.ndarray
    reward_mean: np.ndarray
    reward_noise: str = "none"
    features: LinearParameterization | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "action_counts", tuple(int(a) for a in self.action_counts))
        tr = np.asarray(self.transition)
        if tr.ndim == 3:
            tr = _readonly(tr.astype(np.int64, copy=False))
        elif tr.ndim == 4:
            tr = _readonly(tr.astype(np.float64, copy=False))
        else:
            raise GameValidationError("transition must be rank 3 (deterministic) or 4 (dense)")
        object.__setattr__(self, "transition", tr)
        rw = _readonly(np.asarray(self.reward_mean, dtype=np.float64))
        object.__setattr__(self, "reward_mean", rw)
        self._validate()

    # -- shape helpers ------------------------------------------------------

    @property
    def num_joint_actions(self) -> int:
        return int(np.prod(self.action_counts))

    @property
    def deterministic_transitions(self) -> bool:
        return self.transition.ndim == 3

    def joint_action_tuples(self) -> np.ndarray:
        """All joint actions as per-player tuples, shape (A_joint, m)."""
        grids = np.meshgrid(*[np.arange(a) for a in self.action_counts], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def joint_index(self, actions: np.ndarray) -> np.ndarray:
        """Flatten per-player actions (..., m) to joint indices."""
        actions = np.asarray(actions, dtype=np.int64)
        mult = np.ones(self.num_players, dtype=np.int64)
        for i in range(self.num_players - 2, -1, -1):
            mult[i] = mult[i + 1] * self.action_counts[i + 1]
        return actions @ mult

    def transition_at(self, h: int) -> np.ndarray:
        t = self.transition
        return t[0] if t.shape[0] == 1 else t[h]

    def reward_at(self, h: int) -> np.ndarray:
        r = self.reward_mean
        return r[0] if r.shape[0] == 1 else r[h]

    # -- DP kernels ---------------------------------------------------------

    def expected_next(self, h: int, values: np.ndarray) -> np.ndarray:
        """E[values(s') | s, a] for every (s, a); values may be (S,) or (S, k)."""
        t = self.transition_at(h)
        if self.deterministic_transitions:
            return values[t]
        return np.tensordot(t, values, axes=(2, 0))

    def push_occupancy(self, h: int, occ_sa: np.ndarray) -> np.ndarray:
        """Propagate a state-action occupancy (S, A_joint) one step forward."""
        t = self.transition_at(h)
        if self.deterministic_transitions:
            out = np.zeros(self.num_states)
            np.add.at(out, t.ravel(), occ_sa.ravel())
            return out
        return np.einsum("sa,sat->t", occ_sa, t)

    def next_state_dist(self, h: int, s: int, a: int) -> np.ndarray:
        t = self.transition_at(h)
        if self.deterministic_transitions:
            row = np.zeros(self.num_states)
            row[t[s, a]] = 1.0
            return row
        return t[s, a]

    # -- validation ---------------------------------------------------------

    def _validate(self):
        m, H, S, A = self.num_players, self.horizon, self.num_states, self.num_joint_actions
        if len(self.action_counts) != m:
            raise GameValidationError("action_counts length must equal num_players")
        if not (0 <= self.initial_state < S):
            raise GameValidationError("initial_state out of range")
        tr = self.transition
        if tr.shape[0] not in (1, H) or tr.shape[1] != S or tr.shape[2] != A:
            raise GameValidationError(f"transition shape {tr.shape} inconsistent with game dims")
        if self.deterministic_transitions:
            if tr.min() < 0 or tr.max() >= S:
                raise GameValidationError("next-state indices out of range")
        else:
            if tr.shape[3] != S:
                raise GameValidationError("dense transition must map into the state set")
            if tr.min() < -TRANSITION_ATOL:
                raise GameValidationError("transition probabilities must be nonnegative")
            if np.abs(tr.sum(axis=-1) - 1.0).max() > TRANSITION_ATOL:
                raise GameValidationError("transition rows must sum to 1 within 1e-9")
        rw = self.reward_mean
        if rw.shape[0] not in (1, H) or rw.shape[1:] != (S, A, m):
            raise GameValidationError(f"reward shape {rw.shape} inconsistent with game dims")
        if rw.min() < -REWARD_ATOL or rw.max() > 1.0 + REWARD_ATOL:
            raise GameValidationError("reward means must lie in [0, 1]")
        if self.reward_noise not in ("none", "bernoulli"):
            raise GameValidationError("reward_noise must be 'none' or 'bernoulli'")
        if self.features is not None:
            self._validate_features()

    def _validate_features(self):
        f = self.features
        H, S, A = self.horizon, self.num_states, self.num_joint_actions
        if f.psi.shape[:2] != (S, A) or f.mu.shape[:2] != (H, S):
            raise GameValidationError("feature tables inconsistent with game dims")
        if f.theta.shape[:2] != (H, self.num_players):
            raise GameValidationError("theta table inconsistent with game dims")
        for h in range(H):
            recon_t = f.psi @ f.mu[h].T  # (S, A, S)
            if self.deterministic_transitions:
                target = np.zeros((S, A, S))
                t = self.transition_at(h)
                s_idx, a_idx = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
                target[s_idx, a_idx, t] = 1.0
            else:
                target = self.transition_at(h)
            if np.abs(recon_t - target).max() > LINEAR_RECON_ATOL:
                raise GameValidationError(f"<psi, mu> does not reconstruct transitions at h={h}")
            recon_r = f.psi @ f.theta[h].T  # (S, A, m)
            if np.abs(recon_r - self.reward_at(h)).max() > LINEAR_RECON_ATOL:
                raise GameValidationError(f"<psi, theta> does not reconstruct rewards at h={h}")

    def game_id(self) -> str:
        from .serialize import canonical_hash

        return canonical_hash(game_to_dict(self))[:12]


# ---------------------------------------------------------------------------
# Trajectories and rollouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """One episode: states s_1..s_{H+1}, per-player actions a_1..a_H.

    realized_rewards is an oracle-only field; learner-facing datasets carry
    stripped copies. feature_concat is the concatenated per-step feature
    vector in R^{H*d} when the game is linearly parameterized.
    """

    states: np.ndarray            # (H+1,)
    actions: np.ndarray           # (H, m)
    realized_rewards: np.ndarray | None = None
    feature_concat: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", _readonly(np.asarray(self.states, dtype=np.int64)))
        object.__setattr__(self, "actions", _readonly(np.asarray(self.actions, dtype=np.int64)))
        if len(self.states) != len(self.actions) + 1:
            raise GameValidationError("trajectory must have H+1 states and H actions")
        if self.realized_rewards is not None:
            rr = _readonly(np.asarray(self.realized_rewards, dtype=np.float64))
            if rr.shape[0] != len(self.actions):
                raise GameValidationError("realized_rewards must have one row per step")
            object.__setattr__(self, "realized_rewards", rr)
        if self.feature_concat is not None:
            object.__setattr__(
                self, "feature_concat", _readonly(np.asarray(self.feature_concat, dtype=np.float64))
            )

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def stripped(self) -> "Trajectory":
        """Learner-facing copy with realized rewards withheld."""
        return Trajectory(self.states, self.actions, None, self.feature_concat)


def rollout(game: MarkovGame, policy: JointPolicy, rng: np.random.Generator) -> Trajectory:
    """Sample one episode under `policy`, filling rewards and features."""
    probs = policy.joint_probs(game)
    tuples = game.joint_action_tuples()
    states = np.empty(game.horizon + 1, dtype=np.int64)
    actions = np.empty((game.horizon, game.num_players), dtype=np.int64)
    rewards = np.empty((game.horizon, game.num_players))
    joint_idx = np.empty(game.horizon, dtype=np.int64)
    s = game.initial_state
    for h in range(game.horizon):
        states[h] = s
        a = rng.choice(game.num_joint_actions, p=probs[h, s])
        joint_idx[h] = a
        actions[h] = tuples[a]
        mean = game.reward_at(h)[s, a]
        if game.reward_noise == "bernoulli":
            rewards[h] = (rng.random(game.num_players) < mean).astype(np.float64)
        else:
            rewards[h] = mean
        if game.deterministic_transitions:
            s = int(game.transition_at(h)[s, a])
        else:
            s = int(rng.choice(game.num_states, p=game.transition_at(h)[s, a]))
    states[game.horizon] = s
    feats = None
    if game.features is not None:
        feats = game.features.trajectory_features(states, joint_idx)
    return Trajectory(states, actions, rewards, feats)


def rollout_batch(
    game: MarkovGame, policy: JointPolicy, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized rollouts: (states (n,H+1), joint actions (n,H), rewards (n,H,m)).

    Used for Monte-Carlo checks where constructing n Trajectory objects would
    dominate the runtime. Joint actions are flat indices.
    """
    probs = policy.joint_probs(game)
    H, S, m = game.horizon, game.num_states, game.num_players
    states = np.empty((n, H + 1), dtype=np.int64)
    actions = np.empty((n, H), dtype=np.int64)
    rewards = np.empty((n, H, m))
    s = np.full(n, game.initial_state, dtype=np.int64)
    for h in range(H):
        states[:, h] = s
        cum = np.cumsum(probs[h, s], axis=1)
        u = rng.random((n, 1))
        a = (u > cum[:, :-1]).sum(axis=1) if cum.shape[1] > 1 else np.zeros(n, dtype=np.int64)
        actions[:, h] = a
        mean = game.reward_at(h)[s, a]
        if game.reward_noise == "bernoulli":
            rewards[:, h] = (rng.random((n, m)) < mean).astype(np.float64)
        else:
            rewards[:, h] = mean
        if game.deterministic_transitions:
            s = game.transition_at(h)[s, a]
        else:
            rows = game.transition_at(h)[s, a]
            cum = np.cumsum(rows, axis=1)
            u = rng.random((n, 1))
            s = (u > cum[:, :-1]).sum(axis=1)
    states[:, H] = s
    return states, actions, rewards


def exact_values(game: MarkovGame, policy: JointPolicy) -> np.ndarray:
    """Exact per-player values V[h, s, i] by backward induction, V[H] = 0."""
    H, S, m = game.horizon, game.num_states, game.num_players
    V = np.zeros((H + 1, S, m))
    probs = policy.joint_probs(game)
    for h in range(H - 1, -1, -1):
        q = game.reward_at(h) + game.expected_next(h, V[h + 1])  # (S, A, m)
        V[h] = np.einsum("sa,sam->sm", probs[h], q)
    return V


def exact_returns(game: MarkovGame, policy: JointPolicy) -> np.ndarray:
    """Per-player expected total return from the initial state."""
    return exact_values(game, policy)[0, game.initial_state]


def state_action_occupancy(game: MarkovGame, policy: JointPolicy) -> np.ndarray:
    """Exact occupancy d[h, s, a] = P(s_h = s, a_h = a) under the policy."""
    H, S, A = game.horizon, game.num_states, game.num_joint_actions
    probs = policy.joint_probs(game)
    occ = np.zeros((H, S, A))
    ds = np.zeros(S)
    ds[game.initial_state] = 1.0
    for h in range(H):
        occ[h] = ds[:, None] * probs[h]
        ds = game.push_occupancy(h, occ[h])
    return occ


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_counterexample() -> tuple[MarkovGame, MarkovGame, JointPolicy]:
    """Two one-step 2x2 games indistinguishable from on-equilibrium data.

    Player 1 ("b") gets u(a, b); player 0 ("a") gets 1 - u(a, b), a
    constant-sum encoding that keeps rewards in [0, 1] while preserving best
    responses. Both games share the unit-basis feature map on the four joint
    actions and the behavior policy that mixes equally over (a1, b1) and
    (a2, b2), so datasets collected under it cannot tell them apart.
    """
    # u[a, b] for game 1; game 2 swaps the off-diagonal entries.
    u1 = np.array([[0.5, 0.0], [1.0, 0.5]])
    u2 = np.array([[0.5, 1.0], [0.0, 0.5]])

    def make(u: np.ndarray, name: str) -> MarkovGame:
        rewards = np.zeros((1, 1, 4, 2))
        for a in range(2):
            for b in range(2):
                j = 2 * a + b
                rewards[0, 0, j, 0] = 1.0 - u[a, b]
                rewards[0, 0, j, 1] = u[a, b]
        psi = np.eye(4).reshape(1, 4, 4)
        mu = np.ones((1, 1, 4))  # <e_j, 1> = 1: the trivial terminal self-loop
        theta = np.stack([rewards[0, 0, :, 0], rewards[0, 0, :, 1]])[None]
        features = LinearParameterization(psi=psi, mu=mu, theta=theta)
        transition = np.zeros((1, 1, 4), dtype=np.int64)
        return MarkovGame(
            num_players=2,
            horizon=1,
            num_states=1,
            action_counts=(2, 2),
            initial_state=0,
            transition=transition,
            reward_mean=rewards,
            features=features,
            metadata={"name": name, "family": "indistinguishable-pair"},
        )

    m1 = make(u1, "counterexample-m1")
    m2 = make(u2, "counterexample-m2")
    joint_table = np.zeros((1, 1, 4))
    joint_table[0, 0, 0] = 0.5  # (a1, b1)
    joint_table[0, 0, 3] = 0.5  # (a2, b2)
    pi_b = JointPolicy(factors=None, joint_table=joint_table)
    return m1, m2, pi_b


def build_random_linear_game(
    m: int,
    H: int,
    num_states: int,
    action_counts: tuple[int, ...],
    d: int,
    seed: int,
    max_attempts: int = 1000,
) -> MarkovGame:
    """Random game satisfying the linear norm bounds by construction.

    psi(s,a) is drawn on the probability simplex over d anchors and mu_h(s')
    stacks per-anchor next-state distributions, so <psi, mu> is a mixture and
    every transition row sums to 1 with nonnegative entries. theta entries are
    uniform in [0, 1], keeping rewards in range. Resampling guards against the
    measure-zero degenerate draws (an all-zero psi row).
    """
    if d < 1 or m < 1 or H < 1 or num_states < 1 or any(a < 1 for a in action_counts):
        raise GameValidationError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    S, A = num_states, int(np.prod(action_counts))
    for _ in range(max_attempts):
        raw = rng.gamma(shape=1.0, scale=1.0, size=(S, A, d))
        row_sums = raw.sum(axis=-1, keepdims=True)
        if (row_sums <= 1e-12).any():
            continue
        psi = raw / row_sums
        anchor = rng.gamma(shape=1.0, scale=1.0, size=(H, d, S))
        anchor_sums = anchor.sum(axis=-1, keepdims=True)
        if (anchor_sums <= 1e-12).any():
            continue
        anchor /= anchor_sums
        mu = np.transpose(anchor, (0, 2, 1))  # (H, S, d)
        theta = rng.uniform(0.0, 1.0, size=(H, m, d))
        transition = np.einsum("sad,htd->hsat", psi, mu)
        transition /= transition.sum(axis=-1, keepdims=True)  # mop up float round-off
        rewards = np.einsum("sad,hid->hsai", psi, theta)
        try:
            features = LinearParameterization(psi=psi, mu=mu, theta=theta)
            return MarkovGame(
                num_players=m,
                horizon=H,
                num_states=S,
                action_counts=tuple(action_counts),
                initial_state=0,
                transition=transition,
                reward_mean=rewards,
                features=features,
                metadata={"name": f"random-linear-{seed}", "seed": seed, "d": d},
            )
        except GameValidationError:
            continue
    raise GameConstructionError(
        f"no valid stochastic transition after {max_attempts} resampling attempts"
    )


def _grid_moves(grid_size: int) -> np.ndarray:
    """next_cell[cell, move] for moves (stay, up, down, left, right); walls clamp."""
    g = grid_size
    cells = np.arange(g * g)
    r, c = cells // g, cells % g
    out = np.empty((g * g, 5), dtype=np.int64)
    out[:, 0] = cells
    out[:, 1] = np.where(r > 0, cells - g, cells)
    out[:, 2] = np.where(r < g - 1, cells + g, cells)
    out[:, 3] = np.where(c > 0, cells - 1, cells)
    out[:, 4] = np.where(c < g - 1, cells + 1, cells)
    return out


def build_grid_spread(
    n_agents: int,
    grid_size: int,
    H: int,
    with_features: bool = False,
) -> MarkovGame:
    """Cooperative landmark-covering game on a grid.

    n agents move on a grid_size x grid_size board with n fixed landmarks.
    Each agent's raw per-step score is minus its Manhattan distance to the
    nearest uncovered landmark (zero once every landmark is occupied) minus a
    collision penalty of 1 when it shares a cell; scores are affinely rescaled
    into [0, 1] so that the fully-covering, collision-free configuration earns
    exactly 1. Dynamics are deterministic per-agent moves (stay/up/down/left/
    right), stored as a stationary next-state table.
    """
    if n_agents < 2:
        raise GameValidationError("grid spread needs at least 2 agents")
    g2 = grid_size * grid_size
    S = g2 ** n_agents
    if S > MAX_GRID_STATES:
        raise GameSizeError(
            f"{n_agents} agents on a {grid_size}x{grid_size} grid give |S|={S} > {MAX_GRID_STATES}"
        )
    if n_agents > g2:
        raise GameValidationError("more agents than cells")

    # Landmarks spread across the cell range.
    landmarks = np.round(np.linspace(0, g2 - 1, n_agents)).astype(np.int64)
    lm_r, lm_c = landmarks // grid_size, landmarks % grid_size

    moves = _grid_moves(grid_size)
    A_each = 5
    A = A_each ** n_agents

    # State index = row-major over agent cells, agent n-1 fastest.
    cell_grids = np.meshgrid(*([np.arange(g2)] * n_agents), indexing="ij")
    agent_cells = np.stack([c.ravel() for c in cell_grids], axis=-1)  # (S, n)
    move_grids = np.meshgrid(*([np.arange(A_each)] * n_agents), indexing="ij")
    agent_moves = np.stack([mv.ravel() for mv in move_grids], axis=-1)  # (A, n)

    radix = g2 ** np.arange(n_agents - 1, -1, -1)
    next_cells = moves[agent_cells[:, None, :], agent_moves[None, :, :]]  # (S, A, n)
    next_state = (next_cells * radix).sum(axis=-1)  # (S, A)

    # Rewards depend only on the current configuration of agents.
    cell_r, cell_c = agent_cells // grid_size, agent_cells % grid_size  # (S, n)
    dist = np.abs(cell_r[:, :, None] - lm_r) + np.abs(cell_c[:, :, None] - lm_c)  # (S, n, n_lm)
    covered = (dist == 0).any(axis=1)  # (S, n_lm)
    masked = np.where(covered[:, None, :], np.inf, dist)
    min_dist = masked.min(axis=2)  # (S, n); inf when all covered
    min_dist = np.where(np.isinf(min_dist), 0.0, min_dist)
    share = np.zeros((S, n_agents), dtype=bool)
    for i in range(n_agents):
        for j in range(n_agents):
            if i != j:
                share[:, i] |= agent_cells[:, i] == agent_cells[:, j]
    raw = -min_dist - share.astype(np.float64)  # (S, n)
    worst = -(2.0 * (grid_size - 1) + 1.0)
    per_state = (raw - worst) / (-worst)  # affine rescale, optimum -> 1
    rewards = np.broadcast_to(per_state[None, :, None, :], (1, S, A, n_agents)).copy()

    # Agents start on the first cells (agent i on cell i).
    start = int((np.arange(n_agents) * radix).sum())
    game = MarkovGame(
        num_players=n_agents,
        horizon=H,
        num_states=S,
        action_counts=(A_each,) * n_agents,
        initial_state=start,
        reward_mean=rewards,
        transition=next_state[None],
        metadata={
            "name": f"grid-spread-{n_agents}x{grid_size}",
            "landmarks": [int(x) for x in landmarks],
            "reward_rescale": {"worst": worst, "best": 0.0},
        },
    )
    if with_features:
        game = attach_tabular_features(game)
    return game


def attach_tabular_features(game: MarkovGame) -> MarkovGame:
    """Equip a tabular game with exact one-hot (s, a) features, d = S * A.

    psi(s,a) is a unit basis vector, mu_h(s')[(s,a)] = P_h(s'|s,a) and
    theta_{h,i}[(s,a)] = r_i(h,s,a); reconstruction is exact and all norm
    bounds hold since entries live in [0, 1].
    """
    S, A, H, m = game.num_states, game.num_joint_actions, game.horizon, game.num_players
    d = S * A
    if S * A * max(S, 1) > MAX_FEATURE_CELLS or H * d > 20_000:
        raise GameSizeError(f"one-hot features of dimension {d} exceed the size cap")
    psi = np.eye(d).reshape(S, A, d)
    mu = np.empty((H, S, d))
    for h in range(H):
        t = game.transition_at(h)
        if game.deterministic_transitions:
            dense = np.zeros((S, A, S))
            s_idx, a_idx = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
            dense[s_idx, a_idx, t] = 1.0
        else:
            dense = t
        mu[h] = dense.reshape(d, S).T
    theta = np.empty((H, m, d))
    for h in range(H):
        theta[h] = game.reward_at(h).reshape(d, m).T
    features = LinearParameterization(psi=psi, mu=mu, theta=theta)
    return replace(game, features=features, metadata={**game.metadata, "features": "tabular-onehot"})


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def game_to_dict(game: MarkovGame) -> dict:
    tr = game.transition
    if game.deterministic_transitions:
        transition = {
            "kind": "deterministic",
            "stationary": tr.shape[0] == 1,
            "next": tr.tolist(),
        }
    else:
        entries = []
        for h in range(tr.shape[0]):
            s_idx, a_idx, t_idx = np.nonzero(tr[h])
            for s, a, t in zip(s_idx, a_idx, t_idx):
                entries.append([h, int(s), int(a), int(t), float(tr[h, s, a, t])])
        transition = {"kind": "dense", "stationary": tr.shape[0] == 1, "entries": entries}
    feats = None
    if game.features is not None:
        feats = {
            "d": game.features.d,
            "psi": game.features.psi.tolist(),
            "mu": game.features.mu.tolist(),
            "theta": game.features.theta.tolist(),
        }
    return {
        "schema": GAME_SCHEMA,
        "players": game.num_players,
        "horizon": game.horizon,
        "num_states": game.num_states,
        "action_counts": list(game.action_counts),
        "initial_state": game.initial_state,
        "reward_noise": game.reward_noise,
        "transition": transition,
        "rewards": {
            "stationary": game.reward_mean.shape[0] == 1,
            "table": game.reward_mean.tolist(),
        },
        "features": feats,
        "metadata": game.metadata,
    }


def game_from_dict(doc: dict) -> MarkovGame:
    if doc.get("schema") != GAME_SCHEMA:
        raise GameValidationError(f"unknown game schema: {doc.get('schema')!r}")
    S = doc["num_states"]
    A = int(np.prod(doc["action_counts"]))
    tdoc = doc["transition"]
    Ht = 1 if tdoc["stationary"] else doc["horizon"]
    if tdoc["kind"] == "deterministic":
        transition = np.asarray(tdoc["next"], dtype=np.int64)
    else:
        transition = np.zeros((Ht, S, A, S))
        for h, s, a, t, p in tdoc["entries"]:
            transition[h, s, a, t] = p
    rewards = np.asarray(doc["rewards"]["table"], dtype=np.float64)
    feats = None
    if doc.get("features") is not None:
        f = doc["features"]
        feats = LinearParameterization(
            psi=np.asarray(f["psi"]), mu=np.asarray(f["mu"]), theta=np.asarray(f["theta"])
        )
    return MarkovGame(
        num_players=doc["players"],
        horizon=doc["horizon"],
        num_states=S,
        action_counts=tuple(doc["action_counts"]),
        initial_state=doc["initial_state"],
        transition=transition,
        reward_mean=rewards,
        reward_noise=doc["reward_noise"],
        features=feats,
        metadata=doc.get("metadata", {}),
    )


def save_game(game: MarkovGame, path) -> None:
    from .serialize import canonical_dumps

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_dumps(game_to_dict(game)))
        fh.write("\n")


def load_game(path) -> MarkovGame:
    with open(path, "r", encoding="utf-8") as fh:
        return game_from_dict(json.load(fh))
