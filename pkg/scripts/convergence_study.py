"""Data-volume sweep for the pessimistic surrogate minimizer.

On a fixed two-state game with a pure equilibrium and unilateral-coverage
data, the Nash gap of the surrogate minimizer's output should shrink toward
zero as the number of preference pairs grows.

Usage: python scripts/convergence_study.py [--sizes 100 1000 10000] [--seeds 10]
"""

import argparse

import numpy as np

from prefgame.coverage import build_covariances
from prefgame.equilibrium import nash_gap
from prefgame.rewards import MleConfig, fit_linear_mle
from prefgame.theory import TheoryConfig, surrogate_minimize
from prefgame.verify import convergence_game, unilateral_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[100, 1000, 10000])
    parser.add_argument("--seeds", type=int, default=10)
    args = parser.parse_args()

    game, star = convergence_game()
    for n_pairs in args.sizes:
        gaps, surrogates = [], []
        for seed in range(args.seeds):
            dataset = unilateral_dataset(game, star, n_pairs, seed * 100 + n_pairs)
            cov = build_covariances(dataset, game.features, lam=1.0)
            est = fit_linear_mle(dataset, game.features, MleConfig(C=0.1, lam=1.0), cov=cov)
            policy, value = surrogate_minimize(game, dataset, cov, est, config=TheoryConfig(C=0.1))
            gaps.append(nash_gap(game, policy).total_gap)
            surrogates.append(value)
        print(
            f"N={n_pairs:>6}: median gap {np.median(gaps):.4f} "
            f"(max {max(gaps):.4f}), median surrogate {np.median(surrogates):.3f}"
        )


if __name__ == "__main__":
    main()
