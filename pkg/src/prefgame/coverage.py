"""Dataset coverage functionals: covariance matrices and policy uncertainty.

The reward covariance accumulates outer products of trajectory-feature
differences (one per preference pair); the per-step transition covariance
accumulates feature outer products of both trajectories. A policy's
uncertainty U_D is the exact expected sum over steps of the two inverse-norm
bonuses, computed by occupancy dynamic programming, never by sampling.

Coverage classes measure U_D at the equilibrium itself (single), over every
one-player deviation from it (unilateral), and over all policies (uniform).
A deterministic maximizer is optimal for the max variants because the
objective is a per-step additive expectation: the maximum of a linear
functional over the occupancy polytope is attained at a vertex, and vertices
correspond to deterministic policies.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .games import JointPolicy, MarkovGame, state_action_occupancy

COND_WARN_THRESHOLD = 1e12


class CoverageDimensionError(ValueError):
    """Feature dimensions of the game and covariance set disagree."""


@dataclass(frozen=True)
class CovarianceSet:
    """Ridge-regularized reward and transition covariances with inverses.

    sigma_r is (H*d, H*d); sigma_p[h] is (d, d). Both are symmetric positive
    definite by construction (lambda * I plus PSD sums), verified at build.
    """

    lam: float
    sigma_r: np.ndarray
    sigma_p: np.ndarray       # (H, d, d)
    sigma_r_inv: np.ndarray
    sigma_p_inv: np.ndarray   # (H, d, d)
    horizon: int
    d: int
    num_pairs: int

    @property
    def num_transition_samples(self) -> int:
        # Both trajectories of every pair contribute one sample per step.
        return 2 * self.num_pairs

    def reward_block_inv(self, h: int) -> np.ndarray:
        """(h, h) diagonal block of the full inverse of sigma_r."""
        d = self.d
        return self.sigma_r_inv[h * d:(h + 1) * d, h * d:(h + 1) * d]

    def reward_bonus_table(self, game: MarkovGame) -> np.ndarray:
        """||lifted psi_h(s,a)||_{sigma_r^{-1}} for every (h, s, a)."""
        psi = _features_of(game, self)
        out = np.empty((self.horizon, game.num_states, game.num_joint_actions))
        for h in range(self.horizon):
            block = self.reward_block_inv(h)
            out[h] = np.sqrt(np.einsum("sad,de,sae->sa", psi, block, psi))
        return out

    def transition_bonus_table(self, game: MarkovGame) -> np.ndarray:
        """||psi(s,a)||_{sigma_p[h]^{-1}} for every (h, s, a)."""
        psi = _features_of(game, self)
        out = np.empty((self.horizon, game.num_states, game.num_joint_actions))
        for h in range(self.horizon):
            out[h] = np.sqrt(np.einsum("sad,de,sae->sa", psi, self.sigma_p_inv[h], psi))
        return out


@dataclass(frozen=True)
class CoverageReport:
    """Single / unilateral / uniform coverage with reward-transition splits."""

    single: float
    unilateral: float
    uniform: float
    single_split: tuple[float, float]      # (reward term, transition term)
    unilateral_split: tuple[float, float]
    uniform_split: tuple[float, float]

    @staticmethod
    def csv_header() -> str:
        return (
            "single,unilateral,uniform,"
            "single_reward,single_transition,"
            "unilateral_reward,unilateral_transition,"
            "uniform_reward,uniform_transition"
        )

    def to_csv_row(self) -> str:
        vals = [
            self.single, self.unilateral, self.uniform,
            *self.single_split, *self.unilateral_split, *self.uniform_split,
        ]
        return ",".join(repr(float(v)) for v in vals)


def _features_of(game: MarkovGame, cov: CovarianceSet) -> np.ndarray:
    if game.features is None:
        raise CoverageDimensionError("game has no feature map")
    psi = game.features.psi
    if psi.shape[2] != cov.d or game.horizon != cov.horizon:
        raise CoverageDimensionError(
            f"game features (H={game.horizon}, d={psi.shape[2]}) do not match "
            f"covariances (H={cov.horizon}, d={cov.d})"
        )
    return psi


def _spd_inverse(mat: np.ndarray, lam: float, what: str) -> np.ndarray:
    eigs = np.linalg.eigvalsh(mat)
    if eigs.min() < lam - 1e-9:
        raise ValueError(f"{what} lost positive definiteness (min eig {eigs.min():.3e})")
    cond = eigs.max() / eigs.min()
    if cond > COND_WARN_THRESHOLD:
        warnings.warn(f"{what} condition number {cond:.3e} exceeds {COND_WARN_THRESHOLD:.0e}")
    chol = np.linalg.cholesky(mat)
    inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(mat.shape[0])))
    return (inv + inv.T) / 2.0


def build_covariances(dataset, features, lam: float = 1.0) -> CovarianceSet:
    """Exact accumulation of the reward and per-step transition covariances.

    `features` is the game's LinearParameterization; trajectory features are
    recomputed from state/action indices so loaded datasets work unchanged.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if features is None:
        raise CoverageDimensionError("a feature map is required to build covariances")
    H = dataset.meta.dims["horizon"]
    action_counts = tuple(dataset.meta.dims["action_counts"])
    d = features.psi.shape[2]

    mult = np.ones(len(action_counts), dtype=np.int64)
    for i in range(len(action_counts) - 2, -1, -1):
        mult[i] = mult[i + 1] * action_counts[i + 1]

    pool_step_feats = np.empty((len(dataset.pool), H, d))
    for k, t in enumerate(dataset.pool):
        joint = t.actions @ mult
        pool_step_feats[k] = features.psi[t.states[:H], joint]
    if not np.isfinite(pool_step_feats).all():
        raise ValueError("non-finite feature values in dataset trajectories")

    idx = dataset.pair_indices
    fa = pool_step_feats[idx[:, 0]].reshape(len(idx), H * d)
    fb = pool_step_feats[idx[:, 1]].reshape(len(idx), H * d)
    diff = fa - fb
    sigma_r = lam * np.eye(H * d) + diff.T @ diff

    sigma_p = np.empty((H, d, d))
    for h in range(H):
        xa = pool_step_feats[idx[:, 0], h]
        xb = pool_step_feats[idx[:, 1], h]
        sigma_p[h] = lam * np.eye(d) + xa.T @ xa + xb.T @ xb

    sigma_r_inv = _spd_inverse(sigma_r, lam, "reward covariance")
    sigma_p_inv = np.stack(
        [_spd_inverse(sigma_p[h], lam, f"transition covariance[h={h}]") for h in range(H)]
    )
    return CovarianceSet(
        lam=float(lam),
        sigma_r=sigma_r,
        sigma_p=sigma_p,
        sigma_r_inv=sigma_r_inv,
        sigma_p_inv=sigma_p_inv,
        horizon=H,
        d=d,
        num_pairs=len(idx),
    )


def bonus_table(game: MarkovGame, cov: CovarianceSet) -> np.ndarray:
    """Combined per-(h,s,a) uncertainty bonus: reward norm plus transition norm."""
    return cov.reward_bonus_table(game) + cov.transition_bonus_table(game)


def dump_matrices(cov: CovarianceSet, prefix) -> list:
    """Debug dump: dense text matrices sigma_r and per-step sigma_p."""
    from pathlib import Path

    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = [Path(f"{prefix}_sigma_r.txt")]
    np.savetxt(paths[0], cov.sigma_r)
    for h in range(cov.horizon):
        path = Path(f"{prefix}_sigma_p_h{h}.txt")
        np.savetxt(path, cov.sigma_p[h])
        paths.append(path)
    return paths


def policy_uncertainty(
    game: MarkovGame,
    policy: JointPolicy,
    cov: CovarianceSet,
    return_split: bool = False,
):
    """Exact U_D(pi) via occupancy-measure dynamic programming."""
    occ = state_action_occupancy(game, policy)  # (H, S, A)
    br = cov.reward_bonus_table(game)
    bp = cov.transition_bonus_table(game)
    reward_term = float((occ * br).sum())
    transition_term = float((occ * bp).sum())
    if return_split:
        return reward_term + transition_term, (reward_term, transition_term)
    return reward_term + transition_term


def max_policy_uncertainty(
    game: MarkovGame,
    cov: CovarianceSet,
    fixed_others: tuple[int, JointPolicy] | None = None,
) -> tuple[float, JointPolicy]:
    """Maximize U_D over policies by backward DP on the per-step bonus.

    With `fixed_others=(i, pi)` only player i's component varies while the
    others follow pi; otherwise the maximization is over all policies, whose
    optimum is a deterministic joint choice per (h, s).
    """
    b = bonus_table(game, cov)  # (H, S, A)
    H, S = game.horizon, game.num_states
    if fixed_others is None:
        W = np.zeros((H + 1, S))
        greedy = np.zeros((H, S), dtype=np.int64)
        for h in range(H - 1, -1, -1):
            q = b[h] + game.expected_next(h, W[h + 1])
            greedy[h] = q.argmax(axis=1)
            W[h] = q[np.arange(S), greedy[h]]
        return float(W[0, game.initial_state]), JointPolicy.from_joint_choices(game, greedy)

    i, policy = fixed_others
    factors = policy.require_product()
    from .equilibrium import _contract_others

    Ai = game.action_counts[i]
    W = np.zeros((H + 1, S))
    br_factor = np.zeros((H, S, Ai))
    for h in range(H - 1, -1, -1):
        q = b[h] + game.expected_next(h, W[h + 1])          # (S, A_joint)
        qi = _contract_others(q, factors, h, i, game.action_counts)
        best = qi.argmax(axis=1)
        W[h] = qi[np.arange(S), best]
        br_factor[h, np.arange(S), best] = 1.0
    return float(W[0, game.initial_state]), policy.replace_player(i, br_factor)


def coverage_report(game: MarkovGame, pi_star: JointPolicy, cov: CovarianceSet) -> CoverageReport:
    """Assemble single / unilateral / uniform coverage for an equilibrium."""
    single, single_split = policy_uncertainty(game, pi_star, cov, return_split=True)
    best_uni, best_uni_policy = -np.inf, None
    for i in range(game.num_players):
        val, pol = max_policy_uncertainty(game, cov, fixed_others=(i, pi_star))
        if val > best_uni:
            best_uni, best_uni_policy = val, pol
    _, unilateral_split = policy_uncertainty(game, best_uni_policy, cov, return_split=True)
    uniform, uniform_policy = max_policy_uncertainty(game, cov)
    _, uniform_split = policy_uncertainty(game, uniform_policy, cov, return_split=True)
    return CoverageReport(
        single=float(single),
        unilateral=float(best_uni),
        uniform=float(uniform),
        single_split=single_split,
        unilateral_split=unilateral_split,
        uniform_split=uniform_split,
    )
