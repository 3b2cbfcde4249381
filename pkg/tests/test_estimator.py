import numpy as np
import pytest
from sklearn.base import clone

from pose2imu.estimator import Pose2IMUClassifier
from pose2imu.synthdata import generate_dataset


@pytest.fixture(scope="module")
def data():
    return generate_dataset(windows_per_class=(2, 1, 1), seed=0, noise_std=0.05)


def small(**kw):
    return Pose2IMUClassifier(**{"max_epochs": 2, "patience": 1, "batch_size": 4, **kw})


def test_params_round_trip_through_clone():
    est = small(method="regression-first", alpha=0.3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert not hasattr(twin, "bundle_")


def test_joint_fit_predict_and_synthesize(data):
    names = np.array(["walk", "wave", "curl", "lift"])
    y = names[data.train.labels]
    est = small(random_state=1).fit(data.train.sensor, y, pose=data.train.pose)
    pred = est.predict(data.test.sensor)
    assert pred.shape == (len(data.test),) and set(pred) <= set(names)
    proba = est.predict_proba(data.test.sensor)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_array_equal(est.classes_[proba.argmax(axis=1)], pred)
    synth = est.synthesize(data.test.pose)
    assert synth.shape == data.test.sensor.shape
    assert 0.0 <= est.score(data.test.sensor, names[data.test.labels]) <= 1.0


def test_same_state_gives_same_model(data):
    a = small(random_state=2).fit(data.train.sensor, data.train.labels, pose=data.train.pose)
    b = small(random_state=2).fit(data.train.sensor, data.train.labels, pose=data.train.pose)
    np.testing.assert_array_equal(a.predict_proba(data.val.sensor), b.predict_proba(data.val.sensor))


def test_baseline_needs_no_pose(data):
    est = small(method="baseline-real").fit(
        data.train.sensor, data.train.labels, eval_set=(data.val.sensor, data.val.labels, None)
    )
    assert est.predict(data.test.sensor).shape == (4,)
    with pytest.raises(AttributeError):
        est.synthesize(data.test.pose)


def test_pose_required_for_regressor_methods(data):
    with pytest.raises(ValueError):
        small().fit(data.train.sensor, data.train.labels)
