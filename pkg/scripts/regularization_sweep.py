"""Ablations over the smoothness coefficient and the KL reward coefficient.

Reproduces the qualitative shape of the two ablation tables at desk scale:
training NLL grows with the smoothness coefficient while the time profile of
the learned reward flattens, and larger KL coefficients pull the learned
greedy policy toward the reference's modal actions.

Usage: python scripts/regularization_sweep.py --axis alpha|beta
"""

import argparse
from pathlib import Path

from prefgame.cli import ExperimentConfig, run_sweep


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--axis", choices=["alpha", "beta"], default="alpha")
    parser.add_argument("--total", type=int, default=400)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out-dir", default="runs/regularization")
    args = parser.parse_args()

    config = ExperimentConfig.from_dict({
        "game": {"builder": "grid_spread", "n_agents": 2, "grid_size": 3, "horizon": 5},
        "total_trajectories": args.total,
        "seeds": args.seeds,
        "out_dir": args.out_dir,
    })
    root = run_sweep(config, args.axis)
    print(f"tidy results: {Path(root) / 'sweep.csv'}")


if __name__ == "__main__":
    main()
