"""Dataset-diversity study on the grid analog of the landmark-covering task.

Runs the full pipeline for each named mixture and prints test returns, the
reward-model quality metrics, and the coverage report per mixture, mirroring
the diversity-ranking experiment at desk scale.

Usage: python scripts/mixture_study.py [--total 400] [--seeds 0 1 2 3 4]
"""

import argparse
from pathlib import Path

from prefgame.cli import ExperimentConfig, run_sweep


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--total", type=int, default=400)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--out-dir", default="runs/mixture_study")
    parser.add_argument("--grid-size", type=int, default=2,
                        help="coverage columns need a feature-equipped grid; keep it small")
    args = parser.parse_args()

    config = ExperimentConfig.from_dict({
        "game": {"builder": "grid_spread", "n_agents": 2,
                 "grid_size": args.grid_size, "horizon": 3},
        "total_trajectories": args.total,
        "seeds": args.seeds,
        "out_dir": args.out_dir,
    })
    root = run_sweep(config, "mixture")
    print(f"tidy results: {Path(root) / 'sweep.csv'}")


if __name__ == "__main__":
    main()
