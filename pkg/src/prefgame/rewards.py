"""Reward learning from preferences: linear MLE and the regularized net.

Two learners with different jobs. The linear MLE is the theory-side
estimator: a norm-constrained logistic regression on trajectory-feature
differences whose ellipsoidal confidence region yields closed-form
optimistic/pessimistic rewards. The practical model is a per-player MLP over
(state, own-action) one-hots trained on the preference likelihood plus a
temporal mean-squared smoothness penalty, then standardized for use as a
shaped RL reward.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .coverage import CovarianceSet
from .datasets import PreferenceDataset
from .games import LinearParameterization, MarkovGame, stable_sigmoid
from .serialize import canonical_dumps, canonical_hash

# ---------------------------------------------------------------------------
# Linear MLE with confidence ellipsoid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MleConfig:
    C: float = 0.1
    delta: float = 0.05
    lam: float = 1.0
    grad_tol: float = 1e-6
    max_iters: int = 10_000

    def confidence_radius(self, d: int, H: int, n: int) -> float:
        n = max(n, 1)
        return self.C * np.sqrt((d * H + np.log(1.0 / self.delta)) / (self.lam**2 * n) + d)


@dataclass(frozen=True)
class RewardEstimate:
    """Constrained MLE point estimates with a shared confidence radius.

    theta_hat rows are per-player vectors in R^{H*d}; each length-d block is
    projected onto the sqrt(d) ball. Optimistic/pessimistic reward queries
    add/subtract confidence_radius times the inverse-covariance norm of the
    lifted feature.
    """

    theta_hat: np.ndarray          # (m, H*d)
    confidence_radius: float
    cov: CovarianceSet
    constants: dict                # C, delta, lam, n, d, H
    converged: tuple[bool, ...]
    final_grad_norms: tuple[float, ...]

    @property
    def horizon(self) -> int:
        return self.constants["H"]

    @property
    def d(self) -> int:
        return self.constants["d"]


def _block_project(theta: np.ndarray, d: int, radius: float) -> np.ndarray:
    """Project each length-d block of theta onto the L2 ball of given radius."""
    blocks = theta.reshape(-1, d)
    norms = np.linalg.norm(blocks, axis=1, keepdims=True)
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return (blocks * scale).reshape(theta.shape)


def _nll_and_grad(theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean logistic NLL over pairs and its gradient; y in {+1, -1}."""
    z = y * (x @ theta)
    # log(1 + exp(-z)) computed stably
    nll = float(np.mean(np.logaddexp(0.0, -z)))
    coeff = -y * stable_sigmoid(-z) / len(y)
    return nll, x.T @ coeff


def nll_of(theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return _nll_and_grad(theta, x, y)[0]


def _projected_gd(
    x: np.ndarray, y: np.ndarray, d: int, config: MleConfig, trace: list | None = None
) -> tuple[np.ndarray, bool, float]:
    """Monotone projected gradient descent on the mean NLL.

    Steps are Barzilai-Borwein proposals with Armijo backtracking, so the
    objective never increases between accepted iterates; convergence is
    declared when the projected-gradient norm drops below grad_tol. `trace`
    collects the objective value at every accepted iterate.
    """
    dim = x.shape[1]
    theta = np.zeros(dim)
    radius = np.sqrt(d)
    f, g = _nll_and_grad(theta, x, y)
    if trace is not None:
        trace.append(f)
    step = 1.0
    prev_theta, prev_g = None, None
    for _ in range(config.max_iters):
        if prev_theta is not None:
            s = theta - prev_theta
            yv = g - prev_g
            sy = float(s @ yv)
            if sy > 1e-18:
                step = float(s @ s) / sy
            step = float(np.clip(step, 1e-8, 1e8))
        accepted = False
        t = step
        for _ in range(60):
            cand = _block_project(theta - t * g, d, radius)
            fc, gc = _nll_and_grad(cand, x, y)
            decrease = f - fc
            needed = 1e-4 / max(t, 1e-300) * float(np.sum((cand - theta) ** 2))
            if decrease >= needed - 1e-18:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        prev_theta, prev_g = theta, g
        theta, f, g = cand, fc, gc
        if trace is not None:
            trace.append(f)
        proj_grad = (theta - _block_project(theta - g, d, radius))
        pg_norm = float(np.linalg.norm(proj_grad))
        if pg_norm <= config.grad_tol:
            return theta, True, pg_norm
    proj_grad = theta - _block_project(theta - g, d, radius)
    return theta, False, float(np.linalg.norm(proj_grad))


def pair_feature_differences(
    dataset: PreferenceDataset, features: LinearParameterization
) -> np.ndarray:
    """psi(tau_a) - psi(tau_b) for every pair, shape (n, H*d)."""
    H = dataset.meta.dims["horizon"]
    action_counts = tuple(dataset.meta.dims["action_counts"])
    d = features.psi.shape[2]
    mult = np.ones(len(action_counts), dtype=np.int64)
    for i in range(len(action_counts) - 2, -1, -1):
        mult[i] = mult[i + 1] * action_counts[i + 1]
    pool_feats = np.empty((len(dataset.pool), H * d))
    for k, t in enumerate(dataset.pool):
        joint = t.actions @ mult
        pool_feats[k] = features.psi[t.states[:H], joint].reshape(H * d)
    idx = dataset.pair_indices
    return pool_feats[idx[:, 0]] - pool_feats[idx[:, 1]]


def fit_linear_mle(
    dataset: PreferenceDataset,
    features: LinearParameterization,
    config: MleConfig = MleConfig(),
    cov: CovarianceSet | None = None,
) -> RewardEstimate:
    """Norm-constrained logistic MLE per player on feature differences.

    Non-convergence is reported (not raised) through the per-player
    `converged` flags and final projected-gradient norms.
    """
    if len(dataset) == 0:
        raise ValueError("cannot fit a reward model on an empty dataset")
    x = pair_feature_differences(dataset, features)
    if not np.isfinite(x).all():
        raise ValueError("non-finite feature differences")
    m = dataset.num_players
    H = dataset.meta.dims["horizon"]
    d = features.psi.shape[2]
    if cov is None:
        from .coverage import build_covariances

        cov = build_covariances(dataset, features, lam=config.lam)
    theta = np.empty((m, H * d))
    converged, grad_norms = [], []
    for i in range(m):
        th, ok, gn = _projected_gd(x, dataset.labels[:, i].astype(np.float64), d, config)
        theta[i] = th
        converged.append(ok)
        grad_norms.append(gn)
        if not ok:
            warnings.warn(
                f"MLE for player {i} stopped at max_iters with projected-gradient "
                f"norm {gn:.3e}"
            )
    radius = config.confidence_radius(d, H, len(dataset))
    return RewardEstimate(
        theta_hat=theta,
        confidence_radius=float(radius),
        cov=cov,
        constants={
            "C": config.C, "delta": config.delta, "lam": config.lam,
            "n": len(dataset), "d": d, "H": H,
        },
        converged=tuple(converged),
        final_grad_norms=tuple(grad_norms),
    )


def reward_bounds(
    estimate: RewardEstimate, game: MarkovGame, s: int, a: int, h: int
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form pessimistic/optimistic rewards over the confidence ellipsoid.

    Returns per-player arrays (r_lower, r_upper) at (h, s, a): the point
    estimate plus/minus confidence_radius times the sigma_r^{-1} norm of the
    lifted feature.
    """
    lo, hi = reward_bound_tables(estimate, game)
    return lo[h, s, a], hi[h, s, a]


def reward_bound_tables(
    estimate: RewardEstimate, game: MarkovGame
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized reward bounds, each of shape (H, S, A, m)."""
    if game.features is None:
        raise ValueError("game has no feature map")
    psi = game.features.psi
    H, d = estimate.horizon, estimate.d
    S, A = psi.shape[0], psi.shape[1]
    m = estimate.theta_hat.shape[0]
    lo = np.empty((H, S, A, m))
    hi = np.empty((H, S, A, m))
    for h in range(H):
        block_inv = estimate.cov.reward_block_inv(h)
        width = estimate.confidence_radius * np.sqrt(
            np.einsum("sad,de,sae->sa", psi, block_inv, psi)
        )
        point = psi @ estimate.theta_hat[:, h * d:(h + 1) * d].T  # (S, A, m)
        lo[h] = point - width[..., None]
        hi[h] = point + width[..., None]
    return lo, hi


# ---------------------------------------------------------------------------
# Practical regularized reward model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardTrainConfig:
    alpha: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    hidden: int = 64
    holdout_frac: float = 0.1
    seed: int = 0
    log_path: str | None = None  # per-epoch CSV metrics log


class _Mlp:
    """Two-hidden-layer tanh scorer with Adam; one per player."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        def init(n_in, n_out):
            return rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_in, n_out))

        # Full-scale output init keeps the initial output variance O(1); the
        # 1/Var_D weight on the smoothness penalty diverges for a near-flat
        # start and would pin the model at a constant.
        self.params = {
            "W1": init(in_dim, hidden), "b1": np.zeros(hidden),
            "W2": init(hidden, hidden), "b2": np.zeros(hidden),
            "W3": init(hidden, 1), "b3": np.zeros(1),
        }
        self._adam_m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._adam_v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._adam_t = 0

    def forward(self, x: np.ndarray, keep: bool = False):
        p = self.params
        h1 = np.tanh(x @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        out = (h2 @ p["W3"] + p["b3"]).ravel()
        if keep:
            return out, (x, h1, h2)
        return out

    def backward(self, cache, d_out: np.ndarray) -> dict:
        x, h1, h2 = cache
        p = self.params
        d_out = d_out[:, None]
        grads = {"W3": h2.T @ d_out, "b3": d_out.sum(axis=0)}
        dh2 = (d_out @ p["W3"].T) * (1.0 - h2**2)
        grads["W2"] = h1.T @ dh2
        grads["b2"] = dh2.sum(axis=0)
        dh1 = (dh2 @ p["W2"].T) * (1.0 - h1**2)
        grads["W1"] = x.T @ dh1
        grads["b1"] = dh1.sum(axis=0)
        return grads

    def adam_step(self, grads: dict, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self._adam_t += 1
        t = self._adam_t
        for k, g in grads.items():
            self._adam_m[k] = b1 * self._adam_m[k] + (1 - b1) * g
            self._adam_v[k] = b2 * self._adam_v[k] + (1 - b2) * g * g
            mhat = self._adam_m[k] / (1 - b1**t)
            vhat = self._adam_v[k] / (1 - b2**t)
            self.params[k] -= lr * mhat / (np.sqrt(vhat) + eps)


@dataclass
class PracticalRewardModel:
    """Per-player (state, own-action) scorers with frozen training statistics.

    The scorer input space is tiny (S * A_i cells per player), so training
    and evaluation run the networks once over all cells and gather. mean/var
    are the per-player output statistics over the training pool, recomputed
    each epoch without gradient flow and frozen at the end for Eq-style
    standardization.
    """

    nets: list
    num_states: int
    action_counts: tuple[int, ...]
    horizon: int
    alpha: float
    mean: np.ndarray              # (m,)
    var: np.ndarray               # (m,)
    config: RewardTrainConfig
    history: dict = field(default_factory=dict)
    degenerate: bool = False

    @property
    def num_players(self) -> int:
        return len(self.nets)

    def cell_outputs(self, i: int) -> np.ndarray:
        """Scores for all (s, a_i) cells of player i, shape (S * A_i,)."""
        return self.nets[i].forward(_cell_inputs(self.num_states, self.action_counts[i]))

    def step_rewards(self, i: int, states: np.ndarray, own_actions: np.ndarray) -> np.ndarray:
        cells = states * self.action_counts[i] + own_actions
        return self.cell_outputs(i)[cells]

    def standardized_cell_outputs(self, i: int) -> np.ndarray:
        sd = np.sqrt(self.var[i]) if self.var[i] > 1e-12 else 1.0
        return (self.cell_outputs(i) - self.mean[i]) / sd

    def r_std_table(self, game: MarkovGame) -> np.ndarray:
        """Summed standardized reward per (s, joint a), shape (S, A_joint)."""
        tuples = game.joint_action_tuples()
        out = np.zeros((game.num_states, game.num_joint_actions))
        states = np.arange(game.num_states)
        for i in range(self.num_players):
            z = self.standardized_cell_outputs(i)
            cells = states[:, None] * self.action_counts[i] + tuples[:, i][None, :]
            out += z[cells]
        return out

    def to_dict(self) -> dict:
        return {
            "schema": "reward-model-v1",
            "num_states": self.num_states,
            "action_counts": list(self.action_counts),
            "horizon": self.horizon,
            "alpha": self.alpha,
            "mean": self.mean.tolist(),
            "var": self.var.tolist(),
            "degenerate": self.degenerate,
            "config_hash": canonical_hash(vars(self.config).copy()),
            "params": [
                {k: v.tolist() for k, v in net.params.items()} for net in self.nets
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_dumps(self.to_dict()))
            fh.write("\n")

    @staticmethod
    def load(path) -> "PracticalRewardModel":
        import json

        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("schema") != "reward-model-v1":
            raise ValueError(f"unknown reward model schema: {doc.get('schema')!r}")
        S = doc["num_states"]
        action_counts = tuple(doc["action_counts"])
        rng = np.random.default_rng(0)
        nets = []
        for i, params in enumerate(doc["params"]):
            hidden = len(params["b1"])
            net = _Mlp(S + action_counts[i], hidden, rng)
            net.params = {k: np.asarray(v) for k, v in params.items()}
            nets.append(net)
        return PracticalRewardModel(
            nets=nets,
            num_states=S,
            action_counts=action_counts,
            horizon=doc["horizon"],
            alpha=doc["alpha"],
            mean=np.asarray(doc["mean"]),
            var=np.asarray(doc["var"]),
            config=RewardTrainConfig(alpha=doc["alpha"]),
            degenerate=doc["degenerate"],
        )


def _cell_inputs(num_states: int, num_actions: int) -> np.ndarray:
    """One-hot (state, action) design matrix over all S * A_i cells."""
    S, A = num_states, num_actions
    x = np.zeros((S * A, S + A))
    cells = np.arange(S * A)
    x[cells, cells // A] = 1.0
    x[cells, S + cells % A] = 1.0
    return x


def _pool_cells(dataset: PreferenceDataset, i: int, action_counts) -> np.ndarray:
    """(n_pool, H) cell indices of player i along each pooled trajectory."""
    H = dataset.meta.dims["horizon"]
    out = np.empty((len(dataset.pool), H), dtype=np.int64)
    for k, t in enumerate(dataset.pool):
        out[k] = t.states[:H] * action_counts[i] + t.actions[:, i]
    return out


def train_practical_reward(
    dataset: PreferenceDataset,
    alpha: float = 1.0,
    config: RewardTrainConfig | None = None,
) -> PracticalRewardModel:
    """Minimize preference NLL plus the variance-scaled temporal MSE penalty.

    The loss is the mean over pairs of the per-player label likelihoods of
    summed step scores, plus alpha / Var_i times the mean squared difference
    of adjacent step scores along every trajectory in the batch. Var_i is
    recomputed over the training pool at each epoch start and treated as a
    constant in gradients.
    """
    if config is None:
        config = RewardTrainConfig(alpha=alpha)
    else:
        config = RewardTrainConfig(**{**vars(config), "alpha": alpha})
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    dims = dataset.meta.dims
    S, H = dims["num_states"], dims["horizon"]
    action_counts = tuple(dims["action_counts"])
    m = dataset.num_players
    rng = np.random.default_rng(config.seed)

    nets = [_Mlp(S + action_counts[i], config.hidden, rng) for i in range(m)]
    cell_x = [_cell_inputs(S, action_counts[i]) for i in range(m)]
    pool_cells = [_pool_cells(dataset, i, action_counts) for i in range(m)]

    n_pairs = len(dataset)
    perm = rng.permutation(n_pairs)
    n_hold = int(round(config.holdout_frac * n_pairs))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    pair_idx = dataset.pair_indices
    labels = dataset.labels.astype(np.float64)

    nll_hist, mse_hist = [], []
    var = np.ones(m)
    var_floor = None
    for epoch in range(config.epochs):
        # Per-epoch variance over the training pool, detached from gradients.
        # The divisor is floored at the initial-model variance: with tabular
        # one-hot inputs an unfloored 1/Var ratchets (shrinking variance
        # inflates the penalty, which shrinks variance further) until the
        # model is constant and cannot learn at any alpha >= 1.
        outs = [nets[i].forward(cell_x[i]) for i in range(m)]
        for i in range(m):
            var[i] = max(float(outs[i][pool_cells[i]].var()), 1.0)

        order = rng.permutation(train_idx)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            if len(batch) == 0:
                continue
            ia, ib = pair_idx[batch, 0], pair_idx[batch, 1]
            for i in range(m):
                out, cache = nets[i].forward(cell_x[i], keep=True)
                ca, cb = pool_cells[i][ia], pool_cells[i][ib]  # (B, H)
                logits = out[ca].sum(axis=1) - out[cb].sum(axis=1)
                y = labels[batch, i]
                dlogit = -y * stable_sigmoid(-y * logits) / len(batch)
                d_out = np.zeros_like(out)
                np.add.at(d_out, ca.ravel(), np.repeat(dlogit, H))
                np.add.at(d_out, cb.ravel(), -np.repeat(dlogit, H))
                if config.alpha > 0 and H > 1:
                    cells = np.concatenate([ca, cb], axis=0)  # (2B, H)
                    diffs = out[cells[:, 1:]] - out[cells[:, :-1]]
                    coeff = 2.0 * config.alpha / var[i] / cells.shape[0]
                    np.add.at(d_out, cells[:, 1:].ravel(), coeff * diffs.ravel())
                    np.add.at(d_out, cells[:, :-1].ravel(), -coeff * diffs.ravel())
                grads = nets[i].backward(cache, d_out)
                nets[i].adam_step(grads, config.learning_rate)

        nll, mse = _dataset_losses(
            nets, cell_x, pool_cells, pair_idx, labels, train_idx, H
        )
        if not (np.isfinite(nll) and np.isfinite(mse)):
            raise FloatingPointError(f"training loss diverged at epoch {epoch}")
        nll_hist.append(nll)
        mse_hist.append(mse)
        if config.log_path is not None:
            mode = "w" if epoch == 0 else "a"
            with open(config.log_path, mode, encoding="utf-8") as fh:
                if epoch == 0:
                    fh.write("epoch,nll,mse\n")
                fh.write(f"{epoch},{nll!r},{mse!r}\n")

    outs = [nets[i].forward(cell_x[i]) for i in range(m)]
    mean = np.array([float(outs[i][pool_cells[i]].mean()) for i in range(m)])
    var = np.array([float(outs[i][pool_cells[i]].var()) for i in range(m)])
    model = PracticalRewardModel(
        nets=nets,
        num_states=S,
        action_counts=action_counts,
        horizon=H,
        alpha=float(alpha),
        mean=mean,
        var=var,
        config=config,
        history={
            "train_nll": nll_hist,
            "train_mse": mse_hist,
            "holdout_pairs": hold_idx.tolist(),
            "train_pairs": train_idx.tolist(),
        },
    )
    acc = preference_accuracy(model, dataset, hold_idx if n_hold else train_idx)
    model.degenerate = acc <= 0.55
    model.history["holdout_accuracy"] = acc
    return model


def _dataset_losses(nets, cell_x, pool_cells, pair_idx, labels, subset, H):
    m = len(nets)
    nll = 0.0
    mse = 0.0
    ia, ib = pair_idx[subset, 0], pair_idx[subset, 1]
    for i in range(m):
        out = nets[i].forward(cell_x[i])
        ca, cb = pool_cells[i][ia], pool_cells[i][ib]
        logits = out[ca].sum(axis=1) - out[cb].sum(axis=1)
        z = labels[subset, i] * logits
        nll += float(np.mean(np.logaddexp(0.0, -z)))
        if H > 1:
            cells = np.concatenate([ca, cb], axis=0)
            diffs = out[cells[:, 1:]] - out[cells[:, :-1]]
            mse += float(np.mean((diffs**2).sum(axis=1)))
    return nll, mse


def preference_accuracy(
    model: PracticalRewardModel, dataset: PreferenceDataset, pair_subset
) -> float:
    """Fraction of labels whose sign matches the predicted return difference.

    Exact ties in the prediction earn half credit, so a constant model scores
    exactly 0.5 rather than an arbitrary side.
    """
    subset = np.asarray(pair_subset, dtype=np.int64)
    if len(subset) == 0:
        return float("nan")
    dims = dataset.meta.dims
    action_counts = tuple(dims["action_counts"])
    ia, ib = dataset.pair_indices[subset, 0], dataset.pair_indices[subset, 1]
    total, correct = 0, 0.0
    for i in range(model.num_players):
        out = model.cell_outputs(i)
        cells = _pool_cells(dataset, i, action_counts)
        diff = out[cells[ia]].sum(axis=1) - out[cells[ib]].sum(axis=1)
        signed = diff * dataset.labels[subset, i]
        correct += float((signed > 0).sum()) + 0.5 * float((signed == 0).sum())
        total += len(subset)
    return correct / total


def standardize_rewards(model: PracticalRewardModel, pool=None):
    """Standardized scorer r_std(s, a) summing per-player z-scores.

    Statistics default to the ones frozen from the training pool; passing a
    pool of trajectories recomputes them (used to rebuild a scorer for a
    probe pool). Zero variance falls back to a unit divisor with a warning.
    """
    mean, var = model.mean.copy(), model.var.copy()
    if pool is not None:
        for i in range(model.num_players):
            out = model.cell_outputs(i)
            cells = np.concatenate(
                [t.states[:-1] * model.action_counts[i] + t.actions[:, i] for t in pool]
            )
            mean[i] = float(out[cells].mean())
            var[i] = float(out[cells].var())
    sd = np.sqrt(np.maximum(var, 0.0))
    flat = sd <= 1e-9
    if flat.any():
        warnings.warn(f"zero reward variance for players {np.nonzero(flat)[0].tolist()}; "
                      "standardizing with unit divisor")
        sd[flat] = 1.0

    z_tables = [
        (model.cell_outputs(i) - mean[i]) / sd[i] for i in range(model.num_players)
    ]

    def r_std(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Summed standardized reward; actions are per-player columns."""
        states = np.asarray(states)
        actions = np.asarray(actions)
        total = np.zeros(states.shape, dtype=np.float64)
        for i in range(model.num_players):
            cells = states * model.action_counts[i] + actions[..., i]
            total += z_tables[i][cells]
        return total

    return r_std


def reward_mse_metric(
    model: PracticalRewardModel, game_oracle: MarkovGame, probe_pool
) -> float:
    """MSE between standardized predicted and true per-step rewards.

    Both sides are standardized per player over the probe pool, so a perfect
    model scores 0, a sign-flipped one 4, and an independent one about 2.
    """
    preds, truths = [], []
    for i in range(model.num_players):
        out = model.cell_outputs(i)
        p_list, t_list = [], []
        for t in probe_pool:
            joint = game_oracle.joint_index(t.actions)
            cells = t.states[:-1] * model.action_counts[i] + t.actions[:, i]
            p_list.append(out[cells])
            t_list.append(
                np.array(
                    [
                        game_oracle.reward_at(h)[t.states[h], joint[h], i]
                        for h in range(game_oracle.horizon)
                    ]
                )
            )
        preds.append(np.concatenate(p_list))
        truths.append(np.concatenate(t_list))

    def z(v: np.ndarray) -> np.ndarray:
        sd = v.std()
        return (v - v.mean()) / (sd if sd > 1e-12 else 1.0)

    errs = [np.mean((z(p) - z(t)) ** 2) for p, t in zip(preds, truths)]
    return float(np.mean(errs))


def smoothness_metric(model: PracticalRewardModel, pool) -> float:
    """Mean over trajectories and players of the summed adjacent-step gaps."""
    total = 0.0
    count = 0
    for i in range(model.num_players):
        out = model.cell_outputs(i)
        for t in pool:
            cells = t.states[:-1] * model.action_counts[i] + t.actions[:, i]
            vals = out[cells]
            total += float(((vals[1:] - vals[:-1]) ** 2).sum())
            count += 1
    return total / max(count, 1)
