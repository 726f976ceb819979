"""Command-line front door: pipeline runs, theory checks, sweeps, reports.

Every run is driven by an ExperimentConfig whose canonical hash stamps all
artifacts; identical (config, seed) reruns produce byte-identical files, so a
run directory whose manifest still verifies is skipped as a cache hit.

Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 verification
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import games
from .coverage import build_covariances, coverage_report, policy_uncertainty
from .datasets import (
    MIXTURES,
    PreferenceDataset,
    TrajectoryPool,
    collect_dataset,
    collect_pool,
    derive_behavior_suite,
    draw_pairs,
    label_preferences,
)
from .equilibrium import nash_gap, solve_matrix_nash_2x2
from .games import MarkovGame, load_game, save_game
from .marl import (
    VdnConfig,
    evaluate_policy,
    fit_reference,
    fitted_q_vdn,
    load_reference,
    load_vdn,
    save_reference,
    shaped_reward_table,
)
from .rewards import (
    MleConfig,
    PracticalRewardModel,
    RewardTrainConfig,
    fit_linear_mle,
    reward_mse_metric,
    smoothness_metric,
    train_practical_reward,
)
from .serialize import canonical_dumps, canonical_hash, file_sha256
from .theory import TheoryConfig, surrogate_minimize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_VERIFY = 4


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one experiment family."""

    game: dict = field(default_factory=lambda: {
        "builder": "grid_spread", "n_agents": 2, "grid_size": 3, "horizon": 5,
        "with_features": False,
    })
    mixture: str | list = "Diversified"
    total_trajectories: int = 400
    pairs_multiplier: int = 10
    steepness: float = 5.0
    label_mode: str = "standardized-return"
    softening_temperatures: tuple = (0.25, 1.0)
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 1.0
    delta: float = 0.05
    C: float = 0.1
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    hidden: int = 64
    kappa: float = 1.0
    unseen_floor: float = 0.0
    episodes: int = 2000
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"

    def __post_init__(self):
        if self.total_trajectories < 1 or self.pairs_multiplier < 1:
            raise ConfigError("trajectory counts must be positive")
        if self.steepness <= 0 or self.lam <= 0 or not (0 < self.delta < 1):
            raise ConfigError("steepness > 0, lambda > 0, delta in (0,1) required")
        if self.alpha < 0 or self.beta < 0 or self.C <= 0:
            raise ConfigError("alpha, beta must be >= 0 and C > 0")
        if isinstance(self.mixture, str) and self.mixture not in MIXTURES:
            raise ConfigError(f"unknown mixture {self.mixture!r}")
        if not isinstance(self.mixture, str) and len(list(self.mixture)) != 4:
            raise ConfigError("explicit mixture ratios need 4 entries")
        if len(self.seeds) == 0:
            raise ConfigError("at least one seed required")

    def to_dict(self, include_out_dir: bool = True) -> dict:
        doc = asdict(self)
        doc["seeds"] = list(self.seeds)
        doc["softening_temperatures"] = list(self.softening_temperatures)
        if not isinstance(self.mixture, str):
            doc["mixture"] = list(self.mixture)
        if not include_out_dir:
            doc.pop("out_dir")
        return doc

    def hash(self) -> str:
        # The hash identifies the experiment; where artifacts land is not
        # part of it, so identical runs from different roots share bytes.
        return canonical_hash(self.to_dict(include_out_dir=False))[:16]

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return ExperimentConfig.from_dict(doc)

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "seeds" in doc:
            doc = {**doc, "seeds": tuple(doc["seeds"])}
        if "softening_temperatures" in doc:
            doc = {**doc, "softening_temperatures": tuple(doc["softening_temperatures"])}
        try:
            return ExperimentConfig(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def build_game(spec: dict) -> MarkovGame:
    spec = dict(spec)
    if "path" in spec:
        path = Path(spec["path"])
        if not path.exists():
            raise ConfigError(f"game file {path} does not exist")
        return load_game(path)
    builder = spec.pop("builder", None)
    try:
        if builder == "grid_spread":
            return games.build_grid_spread(
                spec.get("n_agents", 2), spec.get("grid_size", 3), spec.get("horizon", 5),
                with_features=spec.get("with_features", False),
            )
        if builder == "random_linear":
            return games.build_random_linear_game(
                spec.get("m", 2), spec.get("horizon", 2), spec.get("num_states", 2),
                tuple(spec.get("action_counts", (2, 2))), spec.get("d", 4),
                spec.get("seed", 0),
            )
        if builder == "counterexample":
            which = spec.get("which", 1)
            m1, m2, _ = games.build_counterexample()
            return m1 if which == 1 else m2
    except games.GameValidationError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown game builder {builder!r}")


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _metrics_columns(m: int) -> list[str]:
    cols = ["seed", "mixture", "alpha", "beta", "team_return"]
    cols += [f"return_{i}" for i in range(m)]
    cols += [f"stderr_{i}" for i in range(m)]
    cols += ["nash_gap", "reward_mse", "final_nll", "smoothness",
             "holdout_accuracy", "degenerate"]
    return cols


def run_pipeline_seed(config: ExperimentConfig, game: MarkovGame, seed: int, run_dir: Path) -> dict:
    """One seed of the full pipeline; returns the metrics row and writes artifacts."""
    run_dir.mkdir(parents=True, exist_ok=True)
    ratios = MIXTURES[config.mixture] if isinstance(config.mixture, str) else tuple(config.mixture)
    mixture_name = config.mixture if isinstance(config.mixture, str) else "custom"

    stage = "gen"
    try:
        suite = derive_behavior_suite(game, config.softening_temperatures, seed)
        pool, pairs = collect_dataset(
            game, suite, ratios, config.total_trajectories, config.pairs_multiplier, seed
        )
        stage = "label"
        dataset = label_preferences(
            pool, pairs, game, steepness=config.steepness, seed=seed + 1,
            mode=config.label_mode, mixture_name=mixture_name,
        )
        dataset.save(run_dir / "dataset.jsonl")
        stage = "fit-reward"
        model = train_practical_reward(
            dataset, alpha=config.alpha,
            config=RewardTrainConfig(
                alpha=config.alpha, learning_rate=config.learning_rate,
                batch_size=config.batch_size, epochs=config.epochs,
                hidden=config.hidden, seed=seed,
            ),
        )
        model.save(run_dir / "reward_model.json")
        stage = "fit-ref"
        reference = fit_reference(dataset, kappa=config.kappa)
        save_reference(reference, run_dir / "reference.json")
        stage = "train"
        shaped = shaped_reward_table(model.r_std_table(game), reference, config.beta, game)
        vdn = fitted_q_vdn(dataset, shaped, game, VdnConfig(unseen_floor=config.unseen_floor, seed=seed))
        vdn.save(run_dir / "policy.json")
        stage = "eval"
        policy = vdn.greedy_policy(game)
        report = evaluate_policy(game, policy, episodes=config.episodes, seed=seed + 2)
        probe = dataset.pool
        mse = reward_mse_metric(model, game, probe)
        smooth = smoothness_metric(model, probe)
    except Exception as exc:  # noqa: BLE001 - re-raised with stage context
        raise StageFailure(stage, exc) from exc

    row = {
        "seed": seed,
        "mixture": mixture_name,
        "alpha": config.alpha,
        "beta": config.beta,
        "team_return": report.team_return,
    }
    for i in range(game.num_players):
        row[f"return_{i}"] = float(report.exact_returns[i])
    for i in range(game.num_players):
        row[f"stderr_{i}"] = float(report.mc_stderr[i])
    row.update(
        nash_gap=report.nash_gap,
        reward_mse=mse,
        final_nll=model.history["train_nll"][-1],
        smoothness=smooth,
        holdout_accuracy=model.history["holdout_accuracy"],
        degenerate=model.degenerate,
    )
    return row


def _format_cell(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_cell(row.get(c, "")) for c in columns))
    _write_text(path, "\n".join(lines) + "\n")


def _summary_row(rows: list[dict], columns: list[str]) -> dict:
    out = {"seed": "summary", "mixture": rows[0]["mixture"],
           "alpha": rows[0]["alpha"], "beta": rows[0]["beta"]}
    for c in columns:
        if c in ("seed", "mixture", "alpha", "beta", "degenerate") or c not in rows[0]:
            continue
        vals = np.array([float(r[c]) for r in rows])
        out[c] = float(vals.mean())
    out["degenerate"] = any(bool(r["degenerate"]) for r in rows)
    out["team_return_stderr"] = float(
        np.std([r["team_return"] for r in rows]) / np.sqrt(len(rows))
    )
    return out


def manifest_verifies(run_root: Path) -> bool:
    manifest_path = run_root / "manifest.json"
    if not manifest_path.exists():
        return False
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        for rel, digest in manifest["artifacts"].items():
            if file_sha256(run_root / rel) != digest:
                return False
        return True
    except (OSError, json.JSONDecodeError, KeyError):
        return False


def write_manifest(run_root: Path, config_hash: str) -> dict:
    artifacts = {}
    for p in sorted(run_root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            artifacts[str(p.relative_to(run_root))] = file_sha256(p)
    manifest = {"schema": "run-manifest-v1", "config_hash": config_hash, "artifacts": artifacts}
    _write_text(run_root / "manifest.json", canonical_dumps(manifest) + "\n")
    return manifest


def run_pipeline(config: ExperimentConfig, echo=print) -> Path:
    """Full pipeline over config.seeds; returns the run directory.

    Re-running with an unchanged config is a cache hit when the previous
    manifest still verifies.
    """
    game = build_game(config.game)
    run_root = Path(config.out_dir) / f"run_{config.hash()}"
    if manifest_verifies(run_root):
        echo(f"cache hit: {run_root} (config {config.hash()})")
        return run_root
    run_root.mkdir(parents=True, exist_ok=True)
    _write_text(
        run_root / "config.json",
        canonical_dumps(
            {**config.to_dict(include_out_dir=False), "config_hash": config.hash()}
        ) + "\n",
    )
    save_game(game, run_root / "game.json")
    columns = _metrics_columns(game.num_players) + ["team_return_stderr"]
    rows = []
    for seed in config.seeds:
        echo(f"seed {seed} ...")
        row = run_pipeline_seed(config, game, seed, run_root / f"seed_{seed}")
        rows.append(row)
    rows.append(_summary_row(rows, columns))
    write_metrics_csv(run_root / "metrics.csv", columns, rows)
    write_manifest(run_root, config.hash())
    echo(f"run complete: {run_root}")
    return run_root


# ---------------------------------------------------------------------------
# Counterexample verdict
# ---------------------------------------------------------------------------


def run_counterexample(n_pairs: int = 2000, seeds=tuple(range(10)), out_dir=None, echo=print) -> dict:
    """Indistinguishable-pair experiment: learned policies must fail in one game.

    Builds the shared dataset under the proof's behavior policy for each seed,
    runs surrogate minimization under both games' feature views, and records
    the worse-game Nash gap plus the single-policy coverage U(pi*) at the full
    and the tenth-size dataset.
    """
    if n_pairs < 100:
        raise ConfigError("n_pairs must be at least 100")
    m1, m2, pi_b = games.build_counterexample()
    per_seed = []
    for seed in seeds:
        pool = collect_pool(m1, [("behavior", pi_b, max(n_pairs // 5, 10))], seed=seed * 7919)
        pairs = draw_pairs(n_pairs, len(pool), seed=seed * 7919 + 1)
        dataset = label_preferences(
            pool, pairs, m1, steepness=1.0, seed=seed * 7919 + 2, mode="raw-return"
        )
        gaps = {}
        singles = {}
        for name, game in (("m1", m1), ("m2", m2)):
            cov = build_covariances(dataset, game.features, lam=1.0)
            est = fit_linear_mle(dataset, game.features, MleConfig(C=0.1, lam=1.0))
            policy, surrogate = surrogate_minimize(game, dataset, cov, est, config=TheoryConfig(C=0.1))
            gaps[name] = {
                "gap_m1": nash_gap(m1, policy).total_gap,
                "gap_m2": nash_gap(m2, policy).total_gap,
                "surrogate": surrogate,
            }
            pi_star = solve_matrix_nash_2x2(game)
            small = replace_dataset_prefix(dataset, n_pairs // 10)
            cov_small = build_covariances(small, game.features, lam=1.0)
            singles[name] = {
                "single_full": policy_uncertainty(game, pi_star, cov),
                "single_tenth": policy_uncertainty(game, pi_star, cov_small),
            }
        max_gap = max(
            max(g["gap_m1"], g["gap_m2"]) for g in gaps.values()
        )
        worst_view_gap = min(
            max(g["gap_m1"], g["gap_m2"]) for g in gaps.values()
        )
        per_seed.append({
            "seed": seed, "max_gap": max_gap, "worst_view_gap": worst_view_gap,
            "views": gaps, "coverage": singles,
        })
    fraction = float(np.mean([r["worst_view_gap"] >= 0.45 for r in per_seed]))
    coverage_grew = all(
        r["coverage"][v]["single_full"] <= r["coverage"][v]["single_tenth"] + 1e-12
        for r in per_seed for v in ("m1", "m2")
    )
    verdict = {
        "schema": "counterexample-verdict-v1",
        "n_pairs": n_pairs,
        "seeds": list(seeds),
        "fraction_gap_at_least_0.45": fraction,
        "single_coverage_monotone": coverage_grew,
        "per_seed": per_seed,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "counterexample.json", canonical_dumps(verdict) + "\n")
    echo(
        f"counterexample: fraction of seeds with max-gap >= 0.45: {fraction:.2f}; "
        f"single-policy coverage monotone: {coverage_grew}"
    )
    return verdict


def replace_dataset_prefix(dataset: PreferenceDataset, n: int) -> PreferenceDataset:
    """Dataset restricted to its first n pairs (nested-prefix subsample)."""
    from dataclasses import replace as dc_replace

    return dc_replace(dataset, pair_indices=dataset.pair_indices[:n], labels=dataset.labels[:n])


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_GRIDS = {
    "alpha": [0.0, 0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0],
    "beta": [0.0, 0.1, 1.0, 10.0, 100.0],
    "mixture": ["Diversified", "Mix-Unilateral", "Mix-Expert", "Pure-Expert"],
    "N": [100, 1000, 10000],
}


def _sweep_task(task) -> dict:
    """One (grid value, seed) pipeline run; module-level so workers can pick it up."""
    config_doc, axis, value, seed, run_dir = task
    config = ExperimentConfig.from_dict(config_doc)
    sub = _sweep_config(config, axis, value)
    game_cfg = dict(sub.game)
    if axis == "mixture" and game_cfg.get("builder") == "grid_spread":
        game_cfg["with_features"] = True
    game = build_game(game_cfg)
    try:
        row = run_pipeline_seed(sub, game, seed, Path(run_dir))
        row = {"axis": axis, "value": value, **row, "error": ""}
        if axis == "mixture":
            row.update(_mixture_coverage(game, sub, seed))
        return row
    except StageFailure as exc:
        return {"axis": axis, "value": value, "seed": seed, "error": exc.stage}


def run_sweep(config: ExperimentConfig, axis: str, values=None, echo=print, workers: int = 1) -> Path:
    """One pipeline run per (grid value, seed); tidy CSV plus line plots.

    Partial failures are recorded as rows with an `error` column and the sweep
    continues. The mixture axis adds coverage-report columns, which requires a
    feature-equipped game. With workers > 1, grid points are dispatched to a
    process pool; every worker owns its run directory and rows are merged in
    task-submission order, so parallel and serial sweeps emit identical bytes.
    """
    if axis not in SWEEP_GRIDS:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    values = list(values) if values is not None else list(SWEEP_GRIDS[axis])
    if not values:
        raise ConfigError("sweep grid must be nonempty")
    sweep_root = Path(config.out_dir) / f"sweep_{axis}_{config.hash()}"
    sweep_root.mkdir(parents=True, exist_ok=True)

    columns = ["axis", "value", "seed", "team_return", "nash_gap", "reward_mse",
               "final_nll", "smoothness", "holdout_accuracy", "degenerate", "error"]
    if axis == "mixture":
        columns += ["coverage_single", "coverage_unilateral", "coverage_uniform"]
    tasks = [
        (config.to_dict(), axis, value, seed,
         str(sweep_root / f"{axis}_{value}" / f"seed_{seed}"))
        for value in values
        for seed in config.seeds
    ]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    for row in rows:
        if row.get("error"):
            echo(f"{axis}={row['value']} seed={row['seed']}: FAILED at {row['error']}")
        else:
            echo(f"{axis}={row['value']} seed={row['seed']}: return {row['team_return']:.3f}")
    write_metrics_csv(sweep_root / "sweep.csv", columns, rows)
    _plot_sweep(sweep_root, axis, rows)
    write_manifest(sweep_root, config.hash())
    return sweep_root


def _sweep_config(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "alpha":
        return replace(config, alpha=float(value))
    if axis == "beta":
        return replace(config, beta=float(value))
    if axis == "mixture":
        return replace(config, mixture=value)
    if axis == "N":
        return replace(config, total_trajectories=int(value))
    raise ConfigError(axis)


def _mixture_coverage(game: MarkovGame, config: ExperimentConfig, seed: int) -> dict:
    if game.features is None:
        return {}
    suite = derive_behavior_suite(game, config.softening_temperatures, seed)
    ratios = MIXTURES[config.mixture] if isinstance(config.mixture, str) else tuple(config.mixture)
    pool, pairs = collect_dataset(
        game, suite, ratios, config.total_trajectories, config.pairs_multiplier, seed
    )
    dataset = label_preferences(pool, pairs, game, config.steepness, seed + 1, config.label_mode)
    cov = build_covariances(dataset, game.features, lam=config.lam)
    report = coverage_report(game, suite.expert, cov)
    return {
        "coverage_single": report.single,
        "coverage_unilateral": report.unilateral,
        "coverage_uniform": report.uniform,
    }


def _plot_sweep(root: Path, axis: str, rows: list[dict]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [r for r in rows if not r.get("error")]
    if not ok:
        return
    values = sorted({r["value"] for r in ok}, key=lambda v: (isinstance(v, str), v))
    for metric in ("team_return", "nash_gap", "final_nll", "smoothness"):
        means, errs = [], []
        for v in values:
            pts = np.array([float(r[metric]) for r in ok if r["value"] == v])
            means.append(pts.mean())
            errs.append(pts.std() / np.sqrt(len(pts)))
        fig, ax = plt.subplots(figsize=(5, 3.2))
        x = np.arange(len(values))
        ax.errorbar(x, means, yerr=errs, marker="o")
        ax.set_xticks(x, [str(v) for v in values])
        ax.set_xlabel(axis)
        ax.set_ylabel(metric)
        fig.tight_layout()
        fig.savefig(root / f"{metric}.png", metadata={"Software": None})
        plt.close(fig)


# ---------------------------------------------------------------------------
# CLI plumbing
# ---------------------------------------------------------------------------


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = (args.seed,)
    if getattr(args, "out_dir", None):
        overrides["out_dir"] = args.out_dir
    return replace(config, **overrides) if overrides else config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prefgame",
        description="Offline preference-based multi-agent RL laboratory",
    )
    parser.add_argument("--config", help="JSON experiment config", default=None)
    parser.add_argument("--seed", type=int, default=None, help="single-seed override")
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--workers", type=int, default=1,
                        help="process-pool size for sweeps; output bytes match the serial run")
    parser.add_argument("--trace", action="store_true", help="emit per-candidate theory traces")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-game", help="build a game and write its JSON document")
    p.add_argument("--builder", default="grid_spread",
                   choices=["grid_spread", "random_linear", "counterexample"])
    p.add_argument("--out", required=True)
    p.add_argument("--n-agents", type=int, default=2)
    p.add_argument("--grid-size", type=int, default=3)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--num-states", type=int, default=2)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--game-seed", type=int, default=0)
    p.add_argument("--with-features", action="store_true")

    p = sub.add_parser("gen-data", help="collect a behavior-mixture trajectory pool")
    p.add_argument("--game", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("label", help="label a pool file with preferences")
    p.add_argument("--game", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-reward", help="train the practical reward model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-ref", help="fit the imitation reference policy")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fitted-Q with shaped rewards")
    p.add_argument("--game", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--reward-model", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a policy checkpoint")
    p.add_argument("--game", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("theory", help="surrogate minimization on a labeled dataset")
    p.add_argument("--game", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("counterexample", help="indistinguishable-pair verdict report")
    p.add_argument("--n-pairs", type=int, default=2000)
    p.add_argument("--n-seeds", type=int, default=10)

    p = sub.add_parser("sweep", help="grid sweep over one axis")
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_GRIDS))
    p.add_argument("--values", default=None,
                   help="comma-separated grid override")

    sub.add_parser("pipeline", help="full pipeline over the config seeds")
    sub.add_parser("report", help="summarize a run directory")
    sub.add_parser("verify", help="run acceptance criteria 1-5")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "make-game":
        spec = {"builder": args.builder}
        if args.builder == "grid_spread":
            spec.update(n_agents=args.n_agents, grid_size=args.grid_size,
                        horizon=args.horizon, with_features=args.with_features)
        elif args.builder == "random_linear":
            spec.update(m=args.n_agents, horizon=args.horizon, num_states=args.num_states,
                        d=args.d, seed=args.game_seed)
        game = build_game(spec)
        save_game(game, args.out)
        print(f"wrote {args.out} (game {game.game_id()})")
        return EXIT_OK

    config = _load_config(args)

    if cmd == "pipeline":
        run_pipeline(config)
        return EXIT_OK

    if cmd == "gen-data":
        game = load_game(args.game)
        ratios = (MIXTURES[config.mixture] if isinstance(config.mixture, str)
                  else tuple(config.mixture))
        suite = derive_behavior_suite(game, config.softening_temperatures, config.seeds[0])
        pool, pairs = collect_dataset(game, suite, ratios, config.total_trajectories,
                                      config.pairs_multiplier, config.seeds[0])
        pool.save(args.out, pairs)
        print(f"wrote {args.out} ({len(pool)} trajectories, {len(pairs)} pairs)")
        return EXIT_OK

    if cmd == "label":
        game = load_game(args.game)
        pool, pairs = TrajectoryPool.load(args.pool)
        mixture_name = config.mixture if isinstance(config.mixture, str) else "custom"
        dataset = label_preferences(pool, pairs, game, config.steepness,
                                    config.seeds[0] + 1, config.label_mode, mixture_name)
        dataset.save(args.out)
        print(f"wrote {args.out} ({len(dataset)} labeled pairs)")
        return EXIT_OK

    if cmd == "fit-reward":
        dataset = PreferenceDataset.load(args.dataset)
        model = train_practical_reward(
            dataset, alpha=config.alpha,
            config=RewardTrainConfig(alpha=config.alpha, learning_rate=config.learning_rate,
                                     batch_size=config.batch_size, epochs=config.epochs,
                                     hidden=config.hidden, seed=config.seeds[0]),
        )
        model.save(args.out)
        print(f"wrote {args.out} (holdout accuracy "
              f"{model.history['holdout_accuracy']:.3f}, degenerate={model.degenerate})")
        return EXIT_OK

    if cmd == "fit-ref":
        dataset = PreferenceDataset.load(args.dataset)
        save_reference(fit_reference(dataset, kappa=config.kappa), args.out)
        print(f"wrote {args.out}")
        return EXIT_OK

    if cmd == "train":
        game = load_game(args.game)
        dataset = PreferenceDataset.load(args.dataset)
        model = PracticalRewardModel.load(args.reward_model)
        reference = load_reference(args.reference)
        shaped = shaped_reward_table(model.r_std_table(game), reference, config.beta, game)
        vdn = fitted_q_vdn(dataset, shaped, game,
                           VdnConfig(unseen_floor=config.unseen_floor, seed=config.seeds[0]))
        vdn.save(args.out)
        print(f"wrote {args.out}")
        return EXIT_OK

    if cmd == "eval":
        game = load_game(args.game)
        vdn = load_vdn(args.policy)
        report = evaluate_policy(game, vdn.greedy_policy(game), config.episodes, config.seeds[0])
        doc = {
            "exact_returns": report.exact_returns.tolist(),
            "mc_returns": report.mc_returns.tolist(),
            "mc_stderr": report.mc_stderr.tolist(),
            "nash_gap": report.nash_gap,
        }
        text = canonical_dumps(doc)
        if args.out:
            _write_text(Path(args.out), text + "\n")
        print(text)
        return EXIT_OK

    if cmd == "theory":
        game = load_game(args.game)
        if game.features is None:
            raise ConfigError("theory requires a feature-equipped game")
        dataset = PreferenceDataset.load(args.dataset)
        cov = build_covariances(dataset, game.features, lam=config.lam)
        est = fit_linear_mle(dataset, game.features,
                             MleConfig(C=config.C, delta=config.delta, lam=config.lam))
        trace = (Path(config.out_dir) / "theory_trace.csv") if args.trace else None
        if trace is not None:
            trace.parent.mkdir(parents=True, exist_ok=True)
        policy, surrogate = surrogate_minimize(
            game, dataset, cov, est,
            config=TheoryConfig(delta=config.delta, lam=config.lam, C=config.C),
            trace_path=trace,
        )
        gap = nash_gap(game, policy).total_gap
        doc = {"surrogate": surrogate, "nash_gap": gap}
        if args.out:
            _write_text(Path(args.out), canonical_dumps(doc) + "\n")
        print(canonical_dumps(doc))
        return EXIT_OK

    if cmd == "counterexample":
        run_counterexample(args.n_pairs, tuple(range(args.n_seeds)), config.out_dir)
        return EXIT_OK

    if cmd == "sweep":
        values = None
        if args.values:
            raw = args.values.split(",")
            values = raw if args.axis == "mixture" else [float(v) for v in raw]
        run_sweep(config, args.axis, values, workers=max(args.workers, 1))
        return EXIT_OK

    if cmd == "report":
        root = Path(config.out_dir)
        manifests = sorted(root.glob("*/manifest.json"))
        if not manifests:
            print(f"no runs under {root}")
            return EXIT_OK
        for mpath in manifests:
            with open(mpath, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
            ok = manifest_verifies(mpath.parent)
            print(f"{mpath.parent.name}: config {manifest['config_hash']}, "
                  f"{len(manifest['artifacts'])} artifacts, verified={ok}")
        return EXIT_OK

    if cmd == "verify":
        from .verify import run_verification

        passed = run_verification(echo=print)
        return EXIT_OK if passed else EXIT_VERIFY

    raise ConfigError(f"unknown command {cmd!r}")


if __name__ == "__main__":
    sys.exit(main())
