import math

import numpy as np
import pytest

from pose2imu.engine import Rng
from pose2imu.preprocessing import neck_midhip_scales
from pose2imu.synthdata import (
    DEFAULT_CLASSES,
    MotionClassSpec,
    analytic_accel,
    band_energy_classify,
    generate_dataset,
    generate_trajectory,
)


def test_static_class_is_constant():
    spec = MotionClassSpec(0, 0.0, (0.3, 0.2, 0.1))
    pose = generate_trajectory(spec, 2.0, 50.0)
    assert np.ptp(pose.positions, axis=0).max() == 0.0
    assert not analytic_accel(spec, 2.0, 50.0).values.any()


def test_unit_neck_midhip_scale():
    pose = generate_trajectory(DEFAULT_CLASSES[2], 3.0, 100.0, phase=0.4)
    np.testing.assert_array_equal(neck_midhip_scales(pose), 1.0)


def test_wrist_peak_to_peak():
    spec = MotionClassSpec(0, 1.0, (0.2, 0.1, 0.0))
    wrist = generate_trajectory(spec, 1.0, 400.0).joint("wrist")
    np.testing.assert_allclose(np.ptp(wrist, axis=0), [0.4, 0.2, 0.0], atol=1e-4)


def test_peak_acceleration_closed_form():
    spec = MotionClassSpec(0, 1.0, (0.1, 0.0, 0.0))
    acc = analytic_accel(spec, 1.0, 400.0).values
    assert np.abs(acc[:, 0]).max() == pytest.approx(0.1 * (2 * math.pi) ** 2, rel=1e-4)
    assert np.abs(acc[:, 0]).max() == pytest.approx(3.9478, abs=1e-3)
    fast = MotionClassSpec(0, 2.0, (0.1, 0.0, 0.0))
    ratio = np.abs(analytic_accel(fast, 1.0, 400.0).values).max() / np.abs(acc).max()
    assert ratio == pytest.approx(4.0, rel=1e-4)


def test_acceleration_is_second_derivative_of_wrist():
    spec = DEFAULT_CLASSES[3]
    rate = 2000.0
    pos = generate_trajectory(spec, 1.0, rate, phase=1.1).joint("wrist")
    acc = analytic_accel(spec, 1.0, rate, phase=1.1).values
    fd = (pos[2:] - 2 * pos[1:-1] + pos[:-2]) * rate**2
    np.testing.assert_allclose(fd, acc[1:-1], atol=1e-3)


def test_undersampling_rejected():
    with pytest.raises(ValueError):
        generate_trajectory(MotionClassSpec(0, 10.0, (0.1, 0, 0)), 1.0, 15.0)
    with pytest.raises(ValueError):
        analytic_accel(MotionClassSpec(0, 10.0, (0.1, 0, 0)), 1.0, 15.0)


def test_noise_needs_rng_and_has_configured_std():
    spec = MotionClassSpec(0, 0.0, (0, 0, 0), noise_std=0.3)
    with pytest.raises(ValueError):
        analytic_accel(spec, 1.0, 100.0)
    acc = analytic_accel(spec, 100.0, 100.0, rng=Rng(0, "n")).values
    assert acc.std() == pytest.approx(0.3, rel=0.02)


def test_dataset_shape_balance_and_determinism():
    a = generate_dataset(seed=3, windows_per_class=(10, 3, 2), noise_std=0.05)
    assert len(a.train) == 40 and len(a.val) == 12 and len(a.test) == 8
    assert np.bincount(a.train.labels).tolist() == [10] * 4
    assert a.train.pose.shape == (40, 3, 3, 300) and a.train.sensor.shape == (40, 3, 300)
    b = generate_dataset(seed=3, windows_per_class=(10, 3, 2), noise_std=0.05)
    np.testing.assert_array_equal(a.train.sensor, b.train.sensor)
    np.testing.assert_array_equal(a.test.pose, b.test.pose)
    c = generate_dataset(seed=4, windows_per_class=(10, 3, 2), noise_std=0.05)
    assert not np.array_equal(a.train.sensor, c.train.sensor)


def test_splits_draw_independent_noise():
    d = generate_dataset(seed=0, windows_per_class=(4, 4, 4), noise_std=0.1)
    assert not np.array_equal(d.train.sensor, d.val.sensor)
    assert not np.array_equal(d.val.sensor, d.test.sensor)


def test_dataset_validation():
    with pytest.raises(ValueError):
        generate_dataset(specs=DEFAULT_CLASSES[:1])
    with pytest.raises(ValueError):
        generate_dataset(windows_per_class=(0, 1, 1))


@pytest.mark.parametrize("noise", [0.0, 0.05, 0.1])
def test_band_energy_oracle_separates_default_classes(noise):
    d = generate_dataset(seed=1, noise_std=noise)
    for split in (d.train, d.val, d.test):
        assert np.array_equal(band_energy_classify(split.sensor, DEFAULT_CLASSES), split.labels)
