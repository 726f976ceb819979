"""Offline preference-based multi-agent RL laboratory on tabular Markov games."""

from .games import (
    JointPolicy,
    LinearParameterization,
    MarkovGame,
    Trajectory,
    attach_tabular_features,
    build_counterexample,
    build_grid_spread,
    build_random_linear_game,
    exact_returns,
    exact_values,
    rollout,
    rollout_batch,
    state_action_occupancy,
)

__all__ = [
    "JointPolicy",
    "LinearParameterization",
    "MarkovGame",
    "Trajectory",
    "attach_tabular_features",
    "build_counterexample",
    "build_grid_spread",
    "build_random_linear_game",
    "exact_returns",
    "exact_values",
    "rollout",
    "rollout_batch",
    "state_action_occupancy",
]
