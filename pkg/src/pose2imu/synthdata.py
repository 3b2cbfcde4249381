"""Sinusoidal arm motions with closed-form wrist acceleration.

Each motion class moves the wrist along ``offset + A * sin(2*pi*f*t + phi)``
per axis, so its acceleration ``-A * (2*pi*f)**2 * sin(...)`` is known
exactly. Neck and mid-hip stay fixed one unit apart, which makes the
skeleton scale exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import Rng
from .preprocessing import (
    ARM_JOINTS,
    DataSplits,
    LabeledWindow,
    PoseSequence,
    SensorSequence,
    WindowSet,
    normalize_skeleton,
)

JOINTS = ("wrist", "elbow", "shoulder", "neck", "midhip")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class MotionClassSpec:
    class_id: int
    frequency: float  # Hz
    amplitude: tuple[float, float, float]  # per axis; zeros switch an axis off
    axis_phase: tuple[float, float, float] = (0.0, 0.0, 0.0)
    wrist_offset: tuple[float, float, float] = (0.3, 0.6, 0.2)
    elbow_offset: tuple[float, float, float] = (0.25, 0.75, 0.1)
    shoulder_offset: tuple[float, float, float] = (0.2, 0.9, 0.0)
    elbow_gain: float = 0.5
    shoulder_gain: float = 0.1
    noise_std: float = 0.0

    def __post_init__(self):
        if self.frequency < 0:
            raise ValueError(f"frequency must be >= 0, got {self.frequency}")
        if not np.all(np.isfinite(self.amplitude)):
            raise ValueError("amplitude must be finite")


DEFAULT_CLASSES = (
    MotionClassSpec(0, 0.5, (0.20, 0.05, 0.00)),
    MotionClassSpec(1, 1.0, (0.00, 0.15, 0.05), (0.0, 0.0, np.pi / 2)),
    MotionClassSpec(2, 1.5, (0.05, 0.00, 0.10), (np.pi / 4, 0.0, 0.0)),
    MotionClassSpec(3, 2.0, (0.05, 0.05, 0.05), (0.0, np.pi / 2, np.pi)),
)


def _check_rate(spec: MotionClassSpec, rate: float) -> None:
    if rate < 2 * spec.frequency:
        raise ValueError(f"rate {rate} Hz undersamples a {spec.frequency} Hz motion")


def _times(duration_s: float, rate: float) -> np.ndarray:
    return np.arange(int(round(duration_s * rate))) / rate


def _oscillation(spec: MotionClassSpec, t: np.ndarray, phase: float) -> np.ndarray:
    arg = 2 * np.pi * spec.frequency * t[:, None] + phase + np.asarray(spec.axis_phase)[None, :]
    return np.asarray(spec.amplitude)[None, :] * np.sin(arg)


def generate_trajectory(spec: MotionClassSpec, duration_s: float, rate: float, phase: float = 0.0) -> PoseSequence:
    _check_rate(spec, rate)
    t = _times(duration_s, rate)
    osc = _oscillation(spec, t, phase)
    n = t.shape[0]
    pos = np.empty((n, len(JOINTS), 3))
    pos[:, 0] = np.asarray(spec.wrist_offset) + osc
    pos[:, 1] = np.asarray(spec.elbow_offset) + spec.elbow_gain * osc
    pos[:, 2] = np.asarray(spec.shoulder_offset) + spec.shoulder_gain * osc
    pos[:, 3] = (0.0, 1.0, 0.0)
    pos[:, 4] = (0.0, 0.0, 0.0)
    return PoseSequence(rate, list(JOINTS), pos)


def analytic_accel(
    spec: MotionClassSpec,
    duration_s: float,
    rate: float,
    phase: float = 0.0,
    rng: Rng | None = None,
) -> SensorSequence:
    _check_rate(spec, rate)
    t = _times(duration_s, rate)
    acc = -((2 * np.pi * spec.frequency) ** 2) * _oscillation(spec, t, phase)
    if spec.noise_std > 0:
        if rng is None:
            raise ValueError("noisy acceleration needs an Rng")
        acc = acc + rng.normal(acc.shape, std=spec.noise_std)
    return SensorSequence(rate, acc)


def _window(spec: MotionClassSpec, duration_s: float, rate: float, rng: Rng, session: str) -> LabeledWindow:
    phase = float(rng.uniform(0.0, 2 * np.pi))
    pose = normalize_skeleton(generate_trajectory(spec, duration_s, rate, phase))
    acc = analytic_accel(spec, duration_s, rate, phase, rng)
    return LabeledWindow(
        pose=pose.select(ARM_JOINTS).transpose(2, 1, 0).copy(),
        sensor=acc.values.T.copy(),
        label=spec.class_id,
        session=session,
    )


def generate_dataset(
    specs: Sequence[MotionClassSpec] = DEFAULT_CLASSES,
    windows_per_class: Sequence[int] = (100, 25, 25),
    seed: int = 0,
    noise_std: float | None = None,
    duration_s: float = 3.0,
    rate: float = 100.0,
) -> DataSplits:
    """Balanced train/val/test windows with raw (unstandardised) acceleration.

    Each split draws phases and noise from its own stream, so the splits are
    independent. ``noise_std`` overrides every class's own setting.
    """
    if len(specs) < 2:
        raise ValueError("need at least two motion classes")
    if len(windows_per_class) != 3 or min(windows_per_class) < 1:
        raise ValueError(f"windows per class must be three positive counts, got {windows_per_class}")
    if noise_std is not None:
        specs = [MotionClassSpec(**{**s.__dict__, "noise_std": noise_std}) for s in specs]
    ids = sorted(s.class_id for s in specs)
    if ids != list(range(len(specs))):
        raise ValueError(f"class ids must be 0..{len(specs) - 1}, got {ids}")
    splits = []
    for split, count in zip(SPLITS, windows_per_class):
        rng = Rng(seed, f"synth.{split}")
        windows = [
            _window(spec, duration_s, rate, rng, f"{split}-{spec.class_id}-{i}")
            for spec in specs
            for i in range(count)
        ]
        splits.append(WindowSet.from_windows(windows))
    return DataSplits(*splits, n_classes=len(specs))


def band_energy_classify(sensor: np.ndarray, specs: Sequence[MotionClassSpec], rate: float = 100.0) -> np.ndarray:
    """Oracle classifier: pick the class whose frequency carries most spectral energy.

    ``sensor`` is ``[n, 3, T]``. Used only to confirm that a class table is separable.
    """
    n, _, t = sensor.shape
    spectrum = (np.abs(np.fft.rfft(sensor, axis=2)) ** 2).sum(axis=1)
    freqs = np.fft.rfftfreq(t, 1.0 / rate)
    bins = [int(np.argmin(np.abs(freqs - s.frequency))) for s in specs]
    return np.array([specs[i].class_id for i in spectrum[:, bins].argmax(axis=1)])
