"""Exact best-response values, Nash gaps, and the 2x2 constant-sum solver.

These are the ground-truth oracles every learned policy is scored against.
All computations are backward dynamic programming on the tabular game, with
ties broken toward the lowest action index for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .games import JointPolicy, MarkovGame, exact_returns

GAP_CLIP = 1e-12


class NonConstantSumError(ValueError):
    """The 2x2 matrix solver only certifies constant-sum games."""


@dataclass(frozen=True)
class NashGapReport:
    """Per-player best-response improvements and their total.

    `gaps` are clipped at zero to absorb DP round-off; `raw_gaps` keep the
    unclipped differences. A policy is an eps-Nash equilibrium iff
    total_gap <= eps.
    """

    best_response_values: np.ndarray  # (m,)
    policy_values: np.ndarray         # (m,)
    gaps: np.ndarray                  # (m,), >= 0
    raw_gaps: np.ndarray              # (m,)
    total_gap: float

    @staticmethod
    def csv_header(m: int) -> str:
        cols = [f"br_value_{i}" for i in range(m)]
        cols += [f"policy_value_{i}" for i in range(m)]
        cols += [f"gap_{i}" for i in range(m)]
        cols.append("total_gap")
        return ",".join(cols)

    def to_csv_row(self) -> str:
        vals = list(self.best_response_values) + list(self.policy_values) + list(self.gaps)
        vals.append(self.total_gap)
        return ",".join(repr(float(v)) for v in vals)


def _contract_others(q: np.ndarray, factors, h: int, i: int, action_counts) -> np.ndarray:
    """Average a per-state joint-action table over all players except i.

    q has shape (S, A_joint); the result has shape (S, A_i) and equals
    E_{a_{-i} ~ pi_{-i}}[q(s, (a_i, a_{-i}))].
    """
    S = q.shape[0]
    arr = q.reshape(S, *action_counts)
    arr = np.moveaxis(arr, 1 + i, 1)  # (S, A_i, others in order)
    others = [j for j in range(len(action_counts)) if j != i]
    for j in reversed(others):
        arr = np.einsum("sb...a,sa->sb...", arr, factors[j][h])
    return arr


def best_response_value(
    game: MarkovGame, policy: JointPolicy, i: int
) -> tuple[float, np.ndarray]:
    """Player i's exact best-response value against policy's other players.

    Returns the value at the initial state and the maximizing deterministic
    policy for player i as a one-hot factor of shape (H, S, A_i). Player i's
    own component of `policy` is ignored.
    """
    factors = policy.require_product()
    H, S, Ai = game.horizon, game.num_states, game.action_counts[i]
    V = np.zeros((H + 1, S))
    br = np.zeros((H, S, Ai))
    for h in range(H - 1, -1, -1):
        q = game.reward_at(h)[:, :, i] + game.expected_next(h, V[h + 1])  # (S, A_joint)
        qi = _contract_others(q, factors, h, i, game.action_counts)       # (S, A_i)
        best = qi.argmax(axis=1)  # argmax takes the lowest index on ties
        V[h] = qi[np.arange(S), best]
        br[h, np.arange(S), best] = 1.0
    return float(V[0, game.initial_state]), br


def nash_gap(game: MarkovGame, policy: JointPolicy) -> NashGapReport:
    """Sum over players of best-response value minus achieved value at s_1."""
    values = exact_returns(game, policy)
    br_values = np.array(
        [best_response_value(game, policy, i)[0] for i in range(game.num_players)]
    )
    raw = br_values - values
    gaps = np.maximum(raw, 0.0)
    return NashGapReport(
        best_response_values=br_values,
        policy_values=values,
        gaps=gaps,
        raw_gaps=raw,
        total_gap=float(gaps.sum()),
    )


def solve_matrix_nash_2x2(game: MarkovGame, atol: float = 1e-9) -> JointPolicy:
    """Exact equilibrium of a one-step, two-player, 2x2 constant-sum game.

    Pure profiles are checked first in lexicographic joint order; otherwise
    the unique mixed equilibrium comes from the standard indifference
    closed form. Anything outside the constant-sum class is rejected since
    support enumeration is only certified there.
    """
    if game.horizon != 1 or game.num_players != 2 or game.action_counts != (2, 2):
        raise NonConstantSumError("solver requires an H=1 two-player 2x2 game")
    r = game.reward_at(0)[game.initial_state]  # (4, 2)
    sums = r.sum(axis=1)
    if np.abs(sums - sums[0]).max() > atol:
        raise NonConstantSumError("payoffs are not constant-sum")
    r0 = r[:, 0].reshape(2, 2)  # r0[a0, a1]
    r1 = r[:, 1].reshape(2, 2)

    for a0 in range(2):
        for a1 in range(2):
            if (
                r0[a0, a1] >= r0[1 - a0, a1] - atol
                and r1[a0, a1] >= r1[a0, 1 - a1] - atol
            ):
                choices = np.full((1, game.num_states, 2), 0, dtype=np.int64)
                choices[0, game.initial_state] = (a0, a1)
                return JointPolicy.from_deterministic(game, choices)

    # Mixed case: player 1 maximizes U = r1, player 0 minimizes it.
    U = r1
    den = U[0, 0] - U[0, 1] - U[1, 0] + U[1, 1]
    if abs(den) < atol:
        raise NonConstantSumError("degenerate payoff matrix without a pure equilibrium")
    p0 = (U[1, 1] - U[1, 0]) / den  # P(player 0 plays action 0)
    q0 = (U[1, 1] - U[0, 1]) / den  # P(player 1 plays action 0)
    if not (-atol <= p0 <= 1 + atol and -atol <= q0 <= 1 + atol):
        raise NonConstantSumError("mixed solution outside the simplex")
    p0, q0 = float(np.clip(p0, 0.0, 1.0)), float(np.clip(q0, 0.0, 1.0))
    f0 = np.full((1, game.num_states, 2), 0.5)
    f1 = np.full((1, game.num_states, 2), 0.5)
    f0[0, game.initial_state] = (p0, 1.0 - p0)
    f1[0, game.initial_state] = (q0, 1.0 - q0)
    return JointPolicy(factors=(f0, f1))
