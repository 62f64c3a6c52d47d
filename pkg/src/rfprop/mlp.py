"""Small fully-connected RSS predictors trained with Adam, from scratch.

Five variants share one architecture: an input layer, a sixteen-unit
hidden ReLU layer, and a scalar output predicting attenuation in dB.
They differ only in which propagation features they consume. Training
minimizes mean squared error; inputs are normalized to zero mean and
unit standard deviation using statistics from the offline training
split, which stay frozen during online updates.

Concurrency: training mutates the model and needs exclusive access;
prediction on a trained model is read-only. The online loop publishes
immutable snapshots via copy() when predictions run concurrently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureVector

HIDDEN = 16
VARIANTS = ("vis", "vox", "ref", "diff", "all")
VARIANT_DIMS = {"vis": 3, "vox": 5, "ref": 2, "diff": 2, "all": 8}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2048
    max_epochs: int = 100
    online_epochs: int = 10
    holdout_fraction: float = 0.30
    learning_rate: float = 1e-3
    convergence_tol_db: float = 0.01
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def feature_subset(variant: str, f: FeatureVector) -> np.ndarray:
    """Raw input vector for one variant; booleans encoded 0/1.

    vis: log-distance plus the two visibility booleans. vox:
    log-distance plus the four voxel-state counts. ref/diff:
    log-distance plus reflection/diffraction loss. all: the union of
    vis, vox and diff inputs (reflection loss is not included).
    """
    ld = f.log10_distance
    if variant == "vis":
        return np.array([ld, float(f.strictly_visible),
                         float(f.strictly_not_visible)])
    if variant == "vox":
        return np.array([ld, f.n_occupied, f.n_maybe, f.n_free, f.n_unknown],
                        dtype=float)
    if variant == "ref":
        return np.array([ld, f.reflection_loss])
    if variant == "diff":
        return np.array([ld, f.diffraction_loss])
    if variant == "all":
        return np.array([ld, float(f.strictly_visible),
                         float(f.strictly_not_visible), f.n_occupied,
                         f.n_maybe, f.n_free, f.n_unknown, f.diffraction_loss])
    raise ValueError(f"unknown variant {variant!r} (expected one of {VARIANTS})")


def features_matrix(samples, variant: str) -> np.ndarray:
    return np.stack([feature_subset(variant, s.features) for s in samples])


@dataclass
class MlpModel:
    """Weights, normalization statistics and optimizer state of one net."""

    variant: str
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float
    norm_mean: np.ndarray
    norm_std: np.ndarray
    step_count: int = 0
    epochs_trained: int = 0
    n_trained: int = 0
    seed: int = 0
    adam: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def init(cls, variant: str, rng: np.random.Generator,
             seed: int = 0) -> "MlpModel":
        dim = VARIANT_DIMS[variant]
        lim1 = np.sqrt(6.0 / (dim + HIDDEN))
        lim2 = np.sqrt(6.0 / (HIDDEN + 1))
        return cls(
            variant=variant,
            W1=rng.uniform(-lim1, lim1, size=(dim, HIDDEN)),
            b1=np.zeros(HIDDEN),
            W2=rng.uniform(-lim2, lim2, size=HIDDEN),
            b2=0.0,
            norm_mean=np.zeros(dim),
            norm_std=np.ones(dim),
            seed=seed,
        )

    def copy(self) -> "MlpModel":
        return MlpModel(
            variant=self.variant, W1=self.W1.copy(), b1=self.b1.copy(),
            W2=self.W2.copy(), b2=self.b2, norm_mean=self.norm_mean.copy(),
            norm_std=self.norm_std.copy(), step_count=self.step_count,
            epochs_trained=self.epochs_trained, n_trained=self.n_trained,
            seed=self.seed, adam={k: v.copy() if isinstance(v, np.ndarray)
                                  else v for k, v in self.adam.items()})

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.norm_mean) / self.norm_std

    def forward(self, raw: np.ndarray) -> float:
        """Prediction for one raw input vector."""
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (self.input_dim,):
            raise ValueError(f"expected input of dim {self.input_dim}, "
                             f"got shape {raw.shape}")
        z1 = self.normalize(raw) @ self.W1 + self.b1
        return float(np.maximum(z1, 0.0) @ self.W2 + self.b2)

    def forward_batch(self, raw: np.ndarray) -> np.ndarray:
        xn = self.normalize(np.asarray(raw, dtype=float))
        return np.maximum(xn @ self.W1 + self.b1, 0.0) @ self.W2 + self.b2

    def predict(self, f: FeatureVector) -> float:
        return self.forward(feature_subset(self.variant, f))


def loss_and_grads(model: MlpModel, x_raw: np.ndarray, y: np.ndarray):
    """Mean-squared-error loss and its gradients on one batch.

    Returns:
        (loss, {"W1": ..., "b1": ..., "W2": ..., "b2": ...}).
    """
    xn = model.normalize(x_raw)
    z1 = xn @ model.W1 + model.b1
    act = np.maximum(z1, 0.0)
    pred = act @ model.W2 + model.b2
    err = pred - y
    n = len(y)
    loss = float(err @ err) / n
    dpred = 2.0 * err / n
    g_w2 = act.T @ dpred
    g_b2 = float(dpred.sum())
    dz1 = np.outer(dpred, model.W2) * (z1 > 0.0)
    g_w1 = xn.T @ dz1
    g_b1 = dz1.sum(axis=0)
    return loss, {"W1": g_w1, "b1": g_b1, "W2": g_w2, "b2": g_b2}


def _adam_step(model: MlpModel, grads: dict, cfg: TrainConfig):
    if not model.adam:
        for key in ("W1", "b1", "W2"):
            model.adam["m_" + key] = np.zeros_like(getattr(model, key))
            model.adam["v_" + key] = np.zeros_like(getattr(model, key))
        model.adam["m_b2"] = 0.0
        model.adam["v_b2"] = 0.0
    model.step_count += 1
    t = model.step_count
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for key, g in grads.items():
        m = model.adam["m_" + key] = (cfg.beta1 * model.adam["m_" + key]
                                      + (1.0 - cfg.beta1) * g)
        v = model.adam["v_" + key] = (cfg.beta2 * model.adam["v_" + key]
                                      + (1.0 - cfg.beta2) * np.square(g))
        update = cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        if key == "b2":
            model.b2 -= float(update)
            model.adam["m_b2"] = float(m)
            model.adam["v_b2"] = float(v)
        else:
            setattr(model, key, getattr(model, key) - update)


@dataclass
class TrainReport:
    """Per-epoch MAE trace of one training run."""

    variant: str
    n_train: int
    n_holdout: int
    epochs: list = field(default_factory=list)  # (epoch, train_mae, holdout_mae)
    steps: int = 0
    converged: bool = False

    @property
    def final_holdout_mae(self) -> float:
        return self.epochs[-1][2] if self.epochs else float("nan")

    def write_csv(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,train_mae_db,holdout_mae_db\n")
            for epoch, tr, ho in self.epochs:
                fh.write(f"{epoch},{tr!r},{ho!r}\n")


def _mae(model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.abs(model.forward_batch(x) - y)))


def train_offline(samples, variant: str, config: TrainConfig = TrainConfig()):
    """Train a fresh model on a 70/30 split of the samples.

    Data is shuffled with the config seed, normalization statistics come
    from the training split, and optimization stops at max_epochs or
    once holdout MAE has improved by less than the convergence tolerance
    for ``patience`` consecutive epochs. Identical seed, data and config
    give bit-identical weights.

    Returns:
        (model, TrainReport).
    """
    dim = VARIANT_DIMS[variant]
    n = len(samples)
    if n < 10 * dim:
        raise TrainingError(f"need at least {10 * dim} samples for "
                            f"variant {variant!r}, got {n}")
    x = features_matrix(samples, variant)
    y = np.array([s.measured_pl for s in samples], dtype=float)
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    n_hold = int(round(config.holdout_fraction * n))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]

    model = MlpModel.init(variant, rng, seed=config.seed)
    mean = x[train_idx].mean(axis=0)
    std = x[train_idx].std(axis=0)
    zero_var = std < 1e-12
    if np.any(zero_var):
        warnings.warn(f"variant {variant!r}: features "
                      f"{np.nonzero(zero_var)[0].tolist()} have zero variance; "
                      "std forced to 1")
        std = np.where(zero_var, 1.0, std)
    model.norm_mean = mean
    model.norm_std = std
    # Start the output bias at the mean target so the net only has to
    # learn structure around it; Adam moves parameters by at most ~lr
    # per step, far too slow to climb tens of dB from zero at desk-scale
    # step counts.
    model.b2 = float(y[train_idx].mean())

    report = TrainReport(variant=variant, n_train=len(train_idx),
                         n_holdout=len(hold_idx))
    best = float("inf")
    streak = 0
    for epoch in range(1, config.max_epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            _, grads = loss_and_grads(model, x[batch], y[batch])
            _adam_step(model, grads, config)
            report.steps += 1
        hold_mae = _mae(model, x[hold_idx], y[hold_idx])
        report.epochs.append((epoch, _mae(model, x[train_idx], y[train_idx]),
                              hold_mae))
        if best - hold_mae < config.convergence_tol_db:
            streak += 1
        else:
            streak = 0
        best = min(best, hold_mae)
        if streak >= config.patience:
            report.converged = True
            break
    model.epochs_trained += len(report.epochs)
    model.n_trained += n
    return model, report


def train_online_step(model: MlpModel, samples,
                      config: TrainConfig = TrainConfig()) -> TrainReport:
    """Run the online update: a few epochs on the recent sample window.

    Normalization statistics are never recomputed and Adam moments
    persist across calls. An empty window is a no-op. A model that was
    never trained offline is accepted with a warning.
    """
    report = TrainReport(variant=model.variant, n_train=len(samples),
                         n_holdout=0)
    if len(samples) == 0:
        return report
    if model.n_trained == 0:
        warnings.warn("online step on a model with no offline training")
    x = features_matrix(samples, model.variant)
    y = np.array([s.measured_pl for s in samples], dtype=float)
    n = len(y)
    batch_size = min(config.batch_size, n)
    rng = np.random.default_rng([config.seed, model.step_count])
    for epoch in range(1, config.online_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            _, grads = loss_and_grads(model, x[batch], y[batch])
            _adam_step(model, grads, config)
            report.steps += 1
        report.epochs.append((epoch, _mae(model, x, y), float("nan")))
    model.epochs_trained += config.online_epochs
    return report


# -- evaluation ---------------------------------------------------------------

HIST_EDGES = np.arange(-40.0, 41.0, 1.0)


@dataclass
class EvalResult:
    mae: float
    n: int
    bin_edges: np.ndarray
    counts: np.ndarray

    def write_csv(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# mae_db={self.mae!r} n={self.n}\n")
            fh.write("bin_lo_db,bin_hi_db,count\n")
            for i, c in enumerate(self.counts):
                fh.write(f"{self.bin_edges[i]!r},{self.bin_edges[i + 1]!r},"
                         f"{int(c)}\n")


def evaluate(predictor, samples) -> EvalResult:
    """MAE and a 1 dB error histogram over [-40, +40] dB.

    ``predictor`` is either an MlpModel or any callable mapping a
    FeatureVector to predicted attenuation. Errors beyond the histogram
    range are clipped into the edge bins (the MAE is unclipped).
    """
    if len(samples) == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    if isinstance(predictor, MlpModel):
        x = features_matrix(samples, predictor.variant)
        pred = predictor.forward_batch(x)
    else:
        pred = np.array([predictor(s.features) for s in samples], dtype=float)
    measured = np.array([s.measured_pl for s in samples], dtype=float)
    err = pred - measured
    counts, _ = np.histogram(np.clip(err, HIST_EDGES[0], HIST_EDGES[-1]),
                             bins=HIST_EDGES)
    return EvalResult(mae=float(np.mean(np.abs(err))), n=len(err),
                      bin_edges=HIST_EDGES.copy(), counts=counts)


# -- model file ---------------------------------------------------------------

_MAGIC = "rfprop-model v1"
_ARRAY_KEYS = ("norm_mean", "norm_std", "W1", "b1", "W2")
_ADAM_KEYS = ("m_W1", "v_W1", "m_b1", "v_b1", "m_W2", "v_W2", "m_b2", "v_b2")


def _fmt_array(a: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(a, dtype=float).ravel())


def save_model(model: MlpModel, path: str):
    """Write the model as versioned text: weights, norm stats, Adam state."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"variant={model.variant}\n")
        fh.write(f"input_dim={model.input_dim}\n")
        fh.write(f"hidden={HIDDEN}\n")
        fh.write(f"seed={model.seed}\n")
        fh.write(f"step_count={model.step_count}\n")
        fh.write(f"epochs_trained={model.epochs_trained}\n")
        fh.write(f"n_trained={model.n_trained}\n")
        for key in _ARRAY_KEYS:
            fh.write(f"{key}={_fmt_array(getattr(model, key))}\n")
        fh.write(f"b2={model.b2!r}\n")
        if model.adam:
            for key in _ADAM_KEYS:
                value = model.adam[key]
                if isinstance(value, np.ndarray):
                    fh.write(f"adam.{key}={_fmt_array(value)}\n")
                else:
                    fh.write(f"adam.{key}={value!r}\n")


def load_model(path: str) -> MlpModel:
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().strip() != _MAGIC:
            raise ValueError(f"{path}: not a {_MAGIC} file")
        kv = {}
        for line in fh:
            if "=" in line:
                key, value = line.rstrip("\n").split("=", 1)
                kv[key] = value
    dim = int(kv["input_dim"])
    arr = {k: np.array([float(x) for x in kv[k].split()]) for k in _ARRAY_KEYS}
    model = MlpModel(
        variant=kv["variant"],
        W1=arr["W1"].reshape(dim, HIDDEN),
        b1=arr["b1"],
        W2=arr["W2"],
        b2=float(kv["b2"]),
        norm_mean=arr["norm_mean"],
        norm_std=arr["norm_std"],
        step_count=int(kv["step_count"]),
        epochs_trained=int(kv["epochs_trained"]),
        n_trained=int(kv["n_trained"]),
        seed=int(kv["seed"]),
    )
    if "adam.m_W1" in kv:
        for key in _ADAM_KEYS:
            raw = kv["adam." + key]
            if key.endswith("b2"):
                model.adam[key] = float(raw)
            else:
                shape = (dim, HIDDEN) if key.endswith("W1") else (HIDDEN,)
                model.adam[key] = np.array(
                    [float(x) for x in raw.split()]).reshape(shape)
    return model
