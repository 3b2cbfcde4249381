"""Resampling, skeleton normalisation, standardisation and windowing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

REQUIRED_JOINTS = ("wrist", "elbow", "shoulder", "neck", "midhip")
ARM_JOINTS = ("wrist", "elbow", "shoulder")
DEGENERATE_SCALE = 1e-6


class DegenerateSkeletonError(ValueError):
    """The neck/mid-hip distance collapsed, so no scale can be derived."""


@dataclass
class PoseSequence:
    rate: float
    joints: list[str]
    positions: np.ndarray  # [frames, joints, 3]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.joints = list(self.joints)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ValueError(f"pose positions must be [frames, joints, 3], got {self.positions.shape}")
        if self.positions.shape[1] != len(self.joints):
            raise ValueError(f"{len(self.joints)} joint names for {self.positions.shape[1]} joints")
        if self.positions.shape[0] < 2:
            raise ValueError("pose sequence needs at least 2 frames")
        if not np.isfinite(self.positions).all():
            raise ValueError("pose sequence contains non-finite coordinates")
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def joint(self, name: str) -> np.ndarray:
        try:
            return self.positions[:, self.joints.index(name)]
        except ValueError:
            raise KeyError(f"joint {name!r} not in {self.joints}") from None

    def select(self, names: Sequence[str]) -> np.ndarray:
        return np.stack([self.joint(n) for n in names], axis=1)


@dataclass
class SensorSequence:
    rate: float
    values: np.ndarray  # [samples, 3]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != 3:
            raise ValueError(f"sensor values must be [samples, 3], got {self.values.shape}")
        if self.values.shape[0] < 2:
            raise ValueError("sensor sequence needs at least 2 samples")
        if not np.isfinite(self.values).all():
            raise ValueError("sensor sequence contains non-finite values")
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std <= 0):
            raise ValueError(f"standard deviation must be positive per channel, got {self.std}")


@dataclass
class LabeledWindow:
    pose: np.ndarray  # [3 coords, joints, window]
    sensor: np.ndarray  # [3, window]
    label: int
    session: str = ""
    start: int = 0


@dataclass
class WindowSet:
    """A stack of windows, the array form every trainer consumes."""

    pose: np.ndarray  # [n, 3, joints, T]
    sensor: np.ndarray  # [n, 3, T]
    labels: np.ndarray  # [n]
    sessions: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.labels.shape[0]
        if self.pose.shape[0] != n or self.sensor.shape[0] != n:
            raise ValueError(f"window set size mismatch: pose {self.pose.shape}, sensor {self.sensor.shape}, labels {n}")
        if self.pose.shape[-1] != self.sensor.shape[-1]:
            raise ValueError("pose and sensor windows cover different lengths")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        sessions = [self.sessions[i] for i in idx] if self.sessions else []
        return WindowSet(self.pose[idx], self.sensor[idx], self.labels[idx], sessions)

    @classmethod
    def from_windows(cls, windows: Sequence[LabeledWindow]) -> "WindowSet":
        if not windows:
            raise ValueError("no windows to stack")
        return cls(
            np.stack([w.pose for w in windows]),
            np.stack([w.sensor for w in windows]),
            np.array([w.label for w in windows]),
            [w.session for w in windows],
        )


def resample_linear(series, source_rate: float, target_rate: float) -> np.ndarray:
    """Linearly interpolate a time-major series onto a ``target_rate`` grid.

    Output sample ``k`` sits at ``k / target_rate`` seconds, covering the span
    of the input; values at shared timestamps are reproduced exactly.
    """
    x = np.asarray(series, dtype=np.float64)
    if source_rate <= 0 or target_rate <= 0:
        raise ValueError("sampling rates must be positive")
    n = x.shape[0]
    if n < 2:
        raise ValueError("resampling needs at least 2 samples")
    if source_rate == target_rate:
        return x.copy()
    n_out = math.floor((n - 1) * target_rate / source_rate + 1e-9) + 1
    pos = np.arange(n_out) * source_rate / target_rate  # in source-index units
    pos = np.minimum(pos, n - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    frac = (pos - lo).reshape((-1,) + (1,) * (x.ndim - 1))
    out = x[lo] * (1.0 - frac) + x[lo + 1] * frac
    exact = frac.reshape(-1) == 0.0
    out[exact] = x[lo[exact]]
    return out


def resample_labels(labels, source_rate: float, target_rate: float) -> np.ndarray:
    """Sample-and-hold resampling for integer label streams."""
    y = np.asarray(labels)
    n = y.shape[0]
    if n < 2:
        raise ValueError("resampling needs at least 2 samples")
    n_out = math.floor((n - 1) * target_rate / source_rate + 1e-9) + 1
    idx = np.floor(np.arange(n_out) * source_rate / target_rate + 1e-9).astype(np.int64)
    return y[np.minimum(idx, n - 1)]


def _half_window(rate: float, w_seconds: float) -> int:
    return int(round(w_seconds * rate / 2.0))


def neck_midhip_scales(pose: PoseSequence, w_seconds: float = 3.0) -> np.ndarray:
    """Median neck/mid-hip distance over a centred window, for every frame.

    Near the sequence edges the window is clamped to the available frames.
    """
    dist = np.linalg.norm(pose.joint("neck") - pose.joint("midhip"), axis=1)
    h = _half_window(pose.rate, w_seconds)
    padded = np.pad(dist, h, constant_values=np.nan)
    scales = np.nanmedian(sliding_window_view(padded, 2 * h + 1), axis=1)
    bad = np.flatnonzero(scales < DEGENERATE_SCALE)
    if bad.size:
        raise DegenerateSkeletonError(
            f"neck/mid-hip scale {scales[bad[0]]:.3g} below {DEGENERATE_SCALE} at frame {bad[0]}"
        )
    return scales


def neck_midhip_scale(pose: PoseSequence, t: int, w_seconds: float = 3.0) -> float:
    dist = np.linalg.norm(pose.joint("neck") - pose.joint("midhip"), axis=1)
    h = _half_window(pose.rate, w_seconds)
    lo, hi = max(0, t - h), min(len(dist), t + h + 1)
    scale = float(np.median(dist[lo:hi]))
    if scale < DEGENERATE_SCALE:
        raise DegenerateSkeletonError(f"neck/mid-hip scale {scale:.3g} below {DEGENERATE_SCALE} at frame {t}")
    return scale


def scale_value(v, scale_t):
    return -1.0 + (v / scale_t) * 2.0


def normalize_skeleton(pose: PoseSequence, w_seconds: float = 3.0) -> PoseSequence:
    """Express every joint relative to the mid-hip, scaled by the body size."""
    missing = [j for j in ("neck", "midhip") if j not in pose.joints]
    if missing:
        raise KeyError(f"skeleton normalisation needs joints {missing}")
    scales = neck_midhip_scales(pose, w_seconds)
    rel = pose.positions - pose.joint("midhip")[:, None, :]
    return PoseSequence(pose.rate, pose.joints, scale_value(rel, scales[:, None, None]))


def standardize_fit(x, channel_axis: int = 1) -> NormStats:
    """Per-channel mean and (population) std of training data."""
    x = np.asarray(x, dtype=np.float64)
    axes = tuple(a for a in range(x.ndim) if a != channel_axis % x.ndim)
    mean = x.mean(axis=axes)
    std = x.std(axis=axes)
    if np.any(std <= 0):
        raise ValueError(f"channel(s) {np.flatnonzero(std <= 0).tolist()} have zero standard deviation")
    return NormStats(mean, std)


def standardize_apply(x, stats: NormStats, channel_axis: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shape = [1] * x.ndim
    shape[channel_axis % x.ndim] = -1
    return (x - stats.mean.reshape(shape)) / stats.std.reshape(shape)


def modal_label(labels) -> int:
    """Most frequent label; ties go to the lowest class index."""
    return int(np.bincount(np.asarray(labels, dtype=np.int64)).argmax())


def make_windows(
    pose,
    sensor,
    labels,
    window: int = 300,
    stride: int = 20,
    session: str = "",
) -> list[LabeledWindow]:
    """Cut aligned streams into fixed-length windows; partial tails are dropped.

    ``pose`` is ``[n, joints, 3]``, ``sensor`` ``[n, 3]`` and ``labels`` ``[n]``,
    all at the same rate.
    """
    pose = np.asarray(pose, dtype=np.float64)
    sensor = np.asarray(sensor, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if pose.shape[0] != n or sensor.shape[0] != n:
        raise ValueError(f"stream lengths differ: pose {pose.shape[0]}, sensor {sensor.shape[0]}, labels {n}")
    if n < window:
        raise ValueError(f"stream of {n} samples is shorter than one window ({window})")
    out = []
    for start in range(0, n - window + 1, stride):
        sl = slice(start, start + window)
        out.append(
            LabeledWindow(
                pose=pose[sl].transpose(2, 1, 0).copy(),
                sensor=sensor[sl].T.copy(),
                label=modal_label(labels[sl]),
                session=session,
                start=start,
            )
        )
    return out


def fit_clip_length(x, length: int, axis: int = -1) -> np.ndarray:
    """Edge-pad or centre-crop a segmented clip to ``length`` along ``axis``."""
    x = np.asarray(x)
    n = x.shape[axis]
    if n == length:
        return x.copy()
    if n > length:
        start = (n - length) // 2
        return np.take(x, np.arange(start, start + length), axis=axis)
    pad = [(0, 0)] * x.ndim
    pad[axis % x.ndim] = (0, length - n)
    return np.pad(x, pad, mode="edge")


def preprocess_session(
    pose: PoseSequence,
    sensor: SensorSequence,
    labels,
    label_rate: float | None = None,
    target_rate: float = 100.0,
    window: int = 300,
    stride: int = 20,
    arm_joints: Sequence[str] = ARM_JOINTS,
    normalize_first: bool = False,
    scale_window_s: float = 3.0,
    session: str = "",
) -> list[LabeledWindow]:
    """Resample both streams to ``target_rate``, normalise the skeleton, window.

    ``labels`` is a per-sample stream at ``label_rate`` (the sensor rate by
    default). Streams are assumed to start together; the shorter one bounds
    the output.
    """
    if normalize_first:
        pose = normalize_skeleton(pose, scale_window_s)
    pos = resample_linear(pose.positions, pose.rate, target_rate)
    pose_rs = PoseSequence(target_rate, pose.joints, pos)
    if not normalize_first:
        pose_rs = normalize_skeleton(pose_rs, scale_window_s)
    acc = resample_linear(sensor.values, sensor.rate, target_rate)
    lab = resample_labels(labels, label_rate or sensor.rate, target_rate)
    n = min(len(pose_rs), acc.shape[0], lab.shape[0])
    arm = pose_rs.select(arm_joints)[:n]
    return make_windows(arm, acc[:n], lab[:n], window, stride, session)


class SkeletonNormalizer(BaseEstimator, TransformerMixin):
    """Stateless transformer applying mid-hip referencing and body-size scaling."""

    def __init__(self, window_s: float = 3.0):
        self.window_s = window_s

    def fit(self, X, y=None):
        return self

    def transform(self, X: PoseSequence) -> PoseSequence:
        return normalize_skeleton(X, self.window_s)


class SensorStandardizer(BaseEstimator, TransformerMixin):
    """Per-channel z-scoring of ``[n, channels, T]`` windows with training statistics."""

    def __init__(self, channel_axis: int = 1):
        self.channel_axis = channel_axis

    def fit(self, X, y=None):
        stats = standardize_fit(X, self.channel_axis)
        self.mean_ = stats.mean
        self.std_ = stats.std
        return self

    @property
    def stats_(self) -> NormStats:
        check_is_fitted(self, ["mean_", "std_"])
        return NormStats(self.mean_, self.std_)

    def transform(self, X):
        return standardize_apply(X, self.stats_, self.channel_axis)

    def inverse_transform(self, X):
        stats = self.stats_
        X = np.asarray(X, dtype=np.float64)
        shape = [1] * X.ndim
        shape[self.channel_axis % X.ndim] = -1
        return X * stats.std.reshape(shape) + stats.mean.reshape(shape)


@dataclass
class DataSplits:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    n_classes: int
    stats: NormStats | None = None

    def standardized(self) -> "DataSplits":
        """Sensor channels z-scored with statistics of the training split."""
        stats = standardize_fit(self.train.sensor, channel_axis=1)

        def apply(ws: WindowSet) -> WindowSet:
            return WindowSet(ws.pose, standardize_apply(ws.sensor, stats, 1), ws.labels, ws.sessions)

        return DataSplits(apply(self.train), apply(self.val), apply(self.test), self.n_classes, stats)
