import numpy as np
import pytest

from pose2imu.engine import Rng, ShapeError, Tensor, backward, no_grad
from pose2imu.models import (
    DEFAULT_BLOCKS,
    Classifier,
    FeatureExtractor,
    FeatureExtractorSpec,
    ModelBundle,
    Regressor,
    RegressorSpec,
    TCNBlock,
    TCNBlockSpec,
)
from pose2imu.training import LossWeights, loss_final

F64 = np.float64


def block(spec, seed=0):
    return TCNBlock(spec, Rng(seed, "test.block"), dtype=F64).eval()


def test_block_one_shape():
    b = block(DEFAULT_BLOCKS[0])
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 3, 300)), dtype=F64)
    assert b(x).shape == (2, 32, 3, 300)


def test_block_zero_input_zero_bias_gives_zero():
    b = block(DEFAULT_BLOCKS[1])
    for p in b.parameters():
        if p.ndim == 1:
            p.data[:] = 0
    assert not b(Tensor(np.zeros((1, 32, 3, 20)), dtype=F64)).data.any()


def test_block_channel_mismatch():
    with pytest.raises(ShapeError):
        block(DEFAULT_BLOCKS[0])(Tensor(np.zeros((1, 4, 3, 10)), dtype=F64))


@pytest.mark.parametrize("spec", list(dict.fromkeys(DEFAULT_BLOCKS)), ids=lambda s: f"d{s.dilation}k{s.kernel}")
def test_block_causality(spec):
    rng = np.random.default_rng(spec.dilation)
    b = block(spec, seed=spec.dilation)
    T = 40
    x = rng.normal(size=(1, spec.in_ch, 3, T))
    with no_grad():
        base = b(Tensor(x, dtype=F64)).data
        for t in rng.choice(np.arange(1, T), size=6, replace=False):
            y = x.copy()
            y[..., t] += rng.normal(size=y[..., t].shape) * 5
            out = b(Tensor(y, dtype=F64)).data
            np.testing.assert_array_equal(out[..., :t], base[..., :t])
            assert not np.array_equal(out[..., t:], base[..., t:])


def test_regressor_shapes_and_variant():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3, 3, 300)).astype(np.float32))
    reg = Regressor(RegressorSpec(), Rng(0, "r")).eval()
    assert reg(x).shape == (4, 3, 300)
    small = Regressor(RegressorSpec(variant="no-block-5"), Rng(0, "r")).eval()
    assert small(x).shape == (4, 3, 300)
    assert not hasattr(small, "block5")
    with pytest.raises(ShapeError):
        reg(Tensor(np.zeros((1, 3, 300), dtype=np.float32)))


def test_regressor_eval_is_pure():
    reg = Regressor(RegressorSpec(), Rng(1, "r")).eval()
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 3, 300)).astype(np.float32))
    with no_grad():
        np.testing.assert_array_equal(reg(x).data, reg(x).data)


def test_regressor_parameter_count():
    # block1 10272 (with 1x1 residual), blocks 2-4 3*18496, block5 544,
    # mixers 3*1056 + 528 (32->16), head 16*3*300*900 + 900
    reg = Regressor(RegressorSpec(), Rng(0, "r"))
    assert reg.n_parameters() == 10272 + 3 * 18496 + 544 + 3 * 1056 + 528 + 14400 * 900 + 900


def test_feature_extents_and_width():
    assert FeatureExtractorSpec().time_extents() == [300, 73, 17, 3, 1]
    feat = FeatureExtractor(FeatureExtractorSpec(), Rng(0, "f")).eval()
    trace = []
    for b in (1, 5):
        out = feat(Tensor(np.zeros((b, 3, 300), dtype=np.float32)), trace)
        assert out.shape == (b, 100)
    assert trace[:5] == [300, 73, 17, 3, 1]
    assert feat.fc.weight.shape == (100, 9)
    # convs 252 + 738 + 738, batchnorm 3 * 18, head 9*100 + 100
    assert feat.n_parameters() == 252 + 738 + 738 + 54 + 1000


def test_feature_too_short():
    with pytest.raises(ShapeError):
        FeatureExtractorSpec(window=20).time_extents()


def test_classifier_examples():
    for n in (11, 27):
        clf = Classifier(n, Rng(0, "c"), dtype=F64)
        clf.fc.weight.data[:] = 0
        clf.fc.bias.data[:] = np.arange(n)
        out = clf(Tensor(np.random.default_rng(0).normal(size=(3, 100)), dtype=F64))
        np.testing.assert_array_equal(out.data, np.tile(np.arange(n), (3, 1)))


def test_every_parameter_receives_gradient():
    bundle = ModelBundle.create(4, seed=0)
    bundle.train()
    rng = np.random.default_rng(0)
    pose = Tensor(rng.normal(size=(3, 3, 3, 300)).astype(np.float32))
    sensor = Tensor(rng.normal(size=(3, 3, 300)).astype(np.float32))
    synth = bundle.regressor(pose)
    loss = loss_final(
        sensor, synth,
        bundle.features(sensor), bundle.features(synth),
        bundle.classifier(bundle.features(sensor)), bundle.classifier(bundle.features(synth)),
        np.array([0, 1, 2]), LossWeights(alpha=1.0, beta=0.5),
    )
    backward(loss)
    dead = [n for n, p in bundle.named_parameters() if p.grad is None or not np.any(p.grad)]
    assert not dead


def test_bundle_state_round_trip():
    a = ModelBundle.create(3, seed=0)
    b = ModelBundle.create(3, seed=1)
    b.load_state_dict(a.state_dict())
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    with pytest.raises(KeyError):
        ModelBundle.create(3, seed=0, with_regressor=False).load_state_dict(a.state_dict())


def test_block_spec_validation():
    with pytest.raises(ValueError):
        TCNBlockSpec(3, 3, 0, 1, 0.0)
    with pytest.raises(ValueError):
        TCNBlockSpec(3, 3, 3, 1, 1.0)
