"""Joint, real-only and regression-first training with early stopping."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import Adam, Rng, Tensor, backward, cosine_sim, mse, weighted_cross_entropy
from .evaluation import classification_report, synthesize, test_mse
from .models import LEAKY_SLOPE, ModelBundle
from .preprocessing import DataSplits

log = logging.getLogger(__name__)

METHODS = ("joint", "baseline-real", "regression-first")


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


class SeedRunError(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"run with seed {seed} failed: {cause}")
        self.seed = seed
        self.cause = cause


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.0
    class_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be non-negative, got alpha={self.alpha}, beta={self.beta}")
        if self.class_weights is not None:
            self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
            if (self.class_weights <= 0).any():
                raise ValueError("class weights must be strictly positive")


def class_weights_from_labels(labels, n_classes: int, mode: str = "inverse") -> np.ndarray:
    """Inverse class frequency scaled to mean 1, or all ones for ``mode='uniform'``."""
    if mode == "uniform":
        return np.ones(n_classes)
    if mode != "inverse":
        raise ValueError(f"unknown class weighting {mode!r}")
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes).astype(np.float64)
    w = 1.0 / np.maximum(counts, 1.0)
    return w / w.mean()


@dataclass
class TrainConfig:
    method: str = "joint"
    lr: float = 1e-3
    max_epochs: int = 100
    patience: int = 25
    batch_size: int = 64
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    alpha: float = 1.0
    beta: float = 0.0
    class_weighting: str = "inverse"
    variant: str = "full"
    leaky_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError(f"need 0 < patience < max_epochs, got {self.patience} and {self.max_epochs}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        LossWeights(self.alpha, self.beta)

    @classmethod
    def mmfit(cls, **overrides) -> "TrainConfig":
        return cls(**{"max_epochs": 100, "patience": 25, "seeds": (0, 1, 2, 3, 4), **overrides})

    @classmethod
    def segmented(cls, **overrides) -> "TrainConfig":
        base = {"max_epochs": 200, "patience": 30, "seeds": tuple(range(10)), "variant": "no-block-5"}
        return cls(**{**base, **overrides})

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        # Small batches give the regressor enough steps to leave its early
        # plateau before validation F1 saturates and freezes the snapshot.
        base = {"max_epochs": 3, "patience": 1, "batch_size": 2, "alpha": 0.01, "seeds": (0, 1, 2)}
        return cls(**{**base, **overrides})


class EarlyStopState:
    """Tracks the best validation score and a snapshot taken at that epoch.

    Improvement is strict: a score equal to the best does not reset patience.
    """

    def __init__(self, patience: int, mode: str = "max"):
        if mode not in ("max", "min"):
            raise ValueError(f"mode must be 'max' or 'min', got {mode!r}")
        self.patience = patience
        self.mode = mode
        self.best = -math.inf if mode == "max" else math.inf
        self.best_epoch = 0
        self.since_improvement = 0
        self.snapshot: dict[str, np.ndarray] | None = None

    def _improves(self, score: float) -> bool:
        return score > self.best if self.mode == "max" else score < self.best

    def update(self, score: float, epoch: int, snapshot: Callable[[], dict] | None = None) -> str:
        if not math.isfinite(score):
            raise DivergenceError(f"non-finite validation score {score} at epoch {epoch}")
        if self._improves(score):
            self.best = score
            self.best_epoch = epoch
            self.since_improvement = 0
            if snapshot is not None:
                self.snapshot = snapshot()
        else:
            self.since_improvement += 1
        return "stop" if self.since_improvement >= self.patience else "continue"


@dataclass
class SeedResult:
    seed: int
    f1: float
    accuracy: float
    test_mse: float | None
    stopped_epoch: int
    best_epoch: int = 0


@dataclass
class RunResult:
    method: str
    entries: list[SeedResult] = field(default_factory=list)

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Mean and population standard deviation per metric."""
        out = {}
        for metric in ("f1", "accuracy", "test_mse", "stopped_epoch"):
            vals = [getattr(e, metric) for e in self.entries]
            if any(v is None for v in vals) or not vals:
                continue
            arr = np.asarray(vals, dtype=np.float64)
            out[metric] = (float(arr.mean()), float(arr.std()))
        return out


@dataclass
class TrainOutcome:
    result: SeedResult
    bundle: ModelBundle
    history: dict[str, list[float]]


def loss_terms(x_sensor, x_synth, feat_real, feat_synth, logits_real, logits_synth, targets, class_weights=None):
    """The three loss components: reconstruction, activity and feature similarity."""
    l_mse = mse(x_sensor, x_synth)
    l_act = weighted_cross_entropy(logits_real, targets, class_weights) + weighted_cross_entropy(
        logits_synth, targets, class_weights
    )
    l_sim = (1.0 - cosine_sim(feat_real, feat_synth)).mean()
    return l_mse, l_act, l_sim


def loss_final(
    x_sensor: Tensor,
    x_synth: Tensor,
    feat_real: Tensor,
    feat_synth: Tensor,
    logits_real: Tensor,
    logits_synth: Tensor,
    targets,
    weights: LossWeights,
    include_similarity: bool = True,
) -> Tensor:
    """``mse + alpha * activity + beta * (1 - cos)``.

    With ``include_similarity=False`` the cosine branch is left out of the
    graph entirely.
    """
    l_mse = mse(x_sensor, x_synth)
    l_act = weighted_cross_entropy(logits_real, targets, weights.class_weights) + weighted_cross_entropy(
        logits_synth, targets, weights.class_weights
    )
    total = l_mse + weights.alpha * l_act
    if include_similarity:
        l_sim = (1.0 - cosine_sim(feat_real, feat_synth)).mean()
        total = total + weights.beta * l_sim
    return total


def _batches(n: int, batch_size: int, rng: Rng) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _check_finite(loss: Tensor, epoch: int) -> float:
    val = loss.item()
    if not math.isfinite(val):
        raise DivergenceError(f"non-finite loss {val} at epoch {epoch}")
    return val


def _dtype(bundle: ModelBundle):
    return bundle.feature.fc.weight.dtype


def _finish(bundle, splits, seed, stopper, epoch, history, with_mse) -> TrainOutcome:
    if stopper.snapshot is not None:
        bundle.load_state_dict(stopper.snapshot)
    rep = classification_report(bundle, splits.test.sensor, splits.test.labels, splits.n_classes)
    mse_val = test_mse(bundle.regressor, splits.test.pose, splits.test.sensor) if with_mse else None
    result = SeedResult(seed, rep["f1"], rep["accuracy"], mse_val, epoch, stopper.best_epoch)
    return TrainOutcome(result, bundle, history)


def _make_bundle(splits: DataSplits, config: TrainConfig, seed: int, with_regressor: bool, dtype) -> ModelBundle:
    return ModelBundle.create(
        splits.n_classes,
        seed,
        window=splits.train.sensor.shape[-1],
        with_regressor=with_regressor,
        variant=config.variant,
        slope=config.leaky_slope,
        dtype=dtype,
    )


def train_joint(
    splits: DataSplits,
    config: TrainConfig,
    seed: int,
    include_similarity: bool = True,
    dtype=np.float32,
    on_epoch: Callable[[int, ModelBundle], bool] | None = None,
) -> TrainOutcome:
    """R, F and C optimised together on the compound loss, one Adam step per batch.

    ``on_epoch(epoch, bundle)`` runs after each epoch's early-stop update;
    returning True ends training there.
    """
    bundle = _make_bundle(splits, config, seed, True, dtype)
    weights = LossWeights(
        config.alpha,
        config.beta,
        class_weights_from_labels(splits.train.labels, splits.n_classes, config.class_weighting),
    )
    params = [p for _, p in bundle.named_parameters()]
    opt = Adam(params, lr=config.lr)
    data_rng = Rng(seed, "data")
    stopper = EarlyStopState(config.patience, "max")
    history: dict[str, list[float]] = {"loss": [], "val_f1": []}
    train = splits.train
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        bundle.train()
        for idx in _batches(len(train), config.batch_size, data_rng):
            pose = Tensor(train.pose[idx], dtype=dtype)
            real = Tensor(train.sensor[idx], dtype=dtype)
            synth = bundle.regressor(pose)
            f_real = bundle.feature(real)
            f_synth = bundle.feature(synth)
            loss = loss_final(
                real,
                synth,
                f_real,
                f_synth,
                bundle.classifier(f_real),
                bundle.classifier(f_synth),
                train.labels[idx],
                weights,
                include_similarity,
            )
            history["loss"].append(_check_finite(loss, epoch))
            opt.zero_grad()
            backward(loss)
            opt.step()
        val = classification_report(bundle, splits.val.sensor, splits.val.labels, splits.n_classes)["f1"]
        history["val_f1"].append(val)
        log.debug("joint seed=%d epoch=%d val_f1=%.4f", seed, epoch, val)
        if stopper.update(val, epoch, bundle.state_dict) == "stop":
            break
        if on_epoch is not None and on_epoch(epoch, bundle):
            break
    return _finish(bundle, splits, seed, stopper, epoch, history, with_mse=True)


def _train_classifier(
    bundle: ModelBundle,
    splits: DataSplits,
    config: TrainConfig,
    seed: int,
    synth_train: np.ndarray | None,
    dtype,
) -> tuple[EarlyStopState, int, dict]:
    """Train F and C on real windows, plus the paired synthetic window when given."""
    cw = class_weights_from_labels(splits.train.labels, splits.n_classes, config.class_weighting)
    params = [p for name, p in bundle.named_parameters() if not name.startswith("regressor.")]
    opt = Adam(params, lr=config.lr)
    data_rng = Rng(seed, "data.classifier")
    stopper = EarlyStopState(config.patience, "max")
    history: dict[str, list[float]] = {"loss": [], "val_f1": []}
    train = splits.train
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        bundle.feature.train()
        bundle.classifier.train()
        for idx in _batches(len(train), config.batch_size, data_rng):
            y = train.labels[idx]
            loss = weighted_cross_entropy(bundle.logits(Tensor(train.sensor[idx], dtype=dtype)), y, cw)
            if synth_train is not None:
                loss = loss + weighted_cross_entropy(bundle.logits(Tensor(synth_train[idx], dtype=dtype)), y, cw)
            history["loss"].append(_check_finite(loss, epoch))
            opt.zero_grad()
            backward(loss)
            opt.step()
        val = classification_report(bundle, splits.val.sensor, splits.val.labels, splits.n_classes)["f1"]
        history["val_f1"].append(val)
        if stopper.update(val, epoch, bundle.state_dict) == "stop":
            break
    return stopper, epoch, history


def train_baseline_real(splits: DataSplits, config: TrainConfig, seed: int, dtype=np.float32) -> TrainOutcome:
    """F and C on real accelerometer windows only; no regressor exists."""
    bundle = _make_bundle(splits, config, seed, False, dtype)
    stopper, epoch, history = _train_classifier(bundle, splits, config, seed, None, dtype)
    return _finish(bundle, splits, seed, stopper, epoch, history, with_mse=False)


def train_regressor(
    bundle: ModelBundle, splits: DataSplits, config: TrainConfig, seed: int, dtype=np.float32
) -> tuple[EarlyStopState, int, dict]:
    """Stage 1 of regression-first: R alone on reconstruction MSE, early-stopped on val MSE."""
    reg = bundle.regressor
    opt = Adam(reg.parameters(), lr=config.lr)
    data_rng = Rng(seed, "data")
    stopper = EarlyStopState(config.patience, "min")
    history: dict[str, list[float]] = {"loss": [], "val_mse": []}
    train = splits.train
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        reg.train()
        for idx in _batches(len(train), config.batch_size, data_rng):
            pred = reg(Tensor(train.pose[idx], dtype=dtype))
            loss = mse(Tensor(train.sensor[idx], dtype=dtype), pred)
            history["loss"].append(_check_finite(loss, epoch))
            opt.zero_grad()
            backward(loss)
            opt.step()
        val = test_mse(reg, splits.val.pose, splits.val.sensor)
        history["val_mse"].append(val)
        snap = lambda: {n: p.data.copy() for n, p in reg.named_parameters("regressor.")}  # noqa: E731
        if stopper.update(val, epoch, snap) == "stop":
            break
    if stopper.snapshot is not None:
        for name, p in reg.named_parameters("regressor."):
            p.data[...] = stopper.snapshot[name]
    return stopper, epoch, history


def train_regression_first(splits: DataSplits, config: TrainConfig, seed: int, dtype=np.float32) -> TrainOutcome:
    """Two stages: fit R on MSE, freeze it, then fit F and C on real plus synthetic windows."""
    bundle = _make_bundle(splits, config, seed, True, dtype)
    stage1, stage1_epochs, hist1 = train_regressor(bundle, splits, config, seed, dtype)
    synth_train = synthesize(bundle.regressor, splits.train.pose)
    stopper, epoch, hist2 = _train_classifier(bundle, splits, config, seed, synth_train, dtype)
    history = {
        "stage1_loss": hist1["loss"],
        "stage1_val_mse": hist1["val_mse"],
        "loss": hist2["loss"],
        "val_f1": hist2["val_f1"],
        "stage1_epochs": [stage1_epochs],
    }
    return _finish(bundle, splits, seed, stopper, epoch, history, with_mse=True)


TRAINERS = {
    "joint": train_joint,
    "baseline-real": train_baseline_real,
    "regression-first": train_regression_first,
}


def train_one(splits: DataSplits, config: TrainConfig, seed: int) -> TrainOutcome:
    return TRAINERS[config.method](splits, config, seed)


def _run_seed(args) -> TrainOutcome:
    splits, config, seed = args
    try:
        return train_one(splits, config, seed)
    except Exception as exc:
        raise SeedRunError(seed, exc) from exc


def run_multi_seed(
    splits: DataSplits,
    config: TrainConfig,
    parallel: int = 1,
    on_outcome: Callable[[TrainOutcome], None] | None = None,
) -> RunResult:
    """Train once per configured seed and collect results ordered by seed."""
    seeds: Sequence[int] = sorted(config.seeds)
    jobs = [(splits, config, s) for s in seeds]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(_run_seed, jobs))
    else:
        outcomes = [_run_seed(job) for job in jobs]
    result = RunResult(config.method)
    for outcome in outcomes:
        if on_outcome is not None:
            on_outcome(outcome)
        result.entries.append(outcome.result)
    return result
