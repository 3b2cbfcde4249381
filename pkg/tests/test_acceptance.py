"""Acceptance criteria, one test per criterion.

Each test is marked ``criterion`` so the terminal summary prints a
PASS/FAIL line for it. Tolerances are the fixed constants below.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from pose2imu import cli
from pose2imu.engine import Rng, Tensor, backward, no_grad
from pose2imu.engine.gradsuite import run_gradient_suite
from pose2imu.evaluation import accuracy, confusion_matrix, predict_classes, test_mse as mse_on_windows
from pose2imu.io_formats import (
    ConfigError,
    FormatError,
    array_container_bytes,
    checkpoint_bytes,
    parse_array_container,
    parse_config,
    read_checkpoint,
    read_report,
    write_checkpoint,
)
from pose2imu.models import DEFAULT_BLOCKS, FeatureExtractor, FeatureExtractorSpec, ModelBundle, Regressor, RegressorSpec, TCNBlock
from pose2imu.preprocessing import (
    NormStats,
    PoseSequence,
    make_windows,
    neck_midhip_scale,
    normalize_skeleton,
    resample_linear,
    scale_value,
    standardize_apply,
    standardize_fit,
)
from pose2imu.synthdata import generate_dataset
from pose2imu.training import LossWeights, TrainConfig, loss_final, train_joint, train_regressor

GRAD_TOL = {np.float64: 1e-5, np.float32: 1e-3}
GRAD_BUDGET_S = 60
OVERFIT_MSE = 0.01
OVERFIT_EPOCHS = 500
OVERFIT_BUDGET_S = 120
DESK_F1 = 0.95
DESK_MSE_FRACTION = 0.1
DESK_BUDGET_S = 600
METHODS = ("joint", "baseline-real", "regression-first")


def note(record_property, text):
    record_property("detail", text)
    print(text)


# gradient suite


@pytest.mark.criterion("gradient suite: all ops within 1e-5 (f64) / 1e-3 (f32), < 1 min")
def test_gradient_suite(record_property):
    start = time.perf_counter()
    results = []
    for dtype, tol in GRAD_TOL.items():
        for r in run_gradient_suite(dtype, points=10):
            assert r.tolerance == tol
            results.append(r)
    elapsed = time.perf_counter() - start
    worst = {d: max(r.worst_error for r in results if r.dtype == np.dtype(d).name) for d in GRAD_TOL}
    note(record_property, f"{len(results)} checks, worst f64 {worst[np.float64]:.1e}, f32 {worst[np.float32]:.1e}, {elapsed:.1f}s")
    failed = [(r.name, r.dtype, r.worst_error) for r in results if not r.passed]
    assert not failed
    assert elapsed < GRAD_BUDGET_S


# architecture


@pytest.mark.criterion("architecture: regressor shape, 300->73->17->3->1, causal blocks")
def test_architecture_shapes(record_property):
    reg = Regressor(RegressorSpec(), Rng(0, "acceptance")).eval()
    with no_grad():
        out = reg(Tensor(np.zeros((2, 3, 3, 300), dtype=np.float32)))
    assert out.shape == (2, 3, 300)

    trace = []
    feat = FeatureExtractor(FeatureExtractorSpec(), Rng(0, "acceptance")).eval()
    with no_grad():
        feat(Tensor(np.zeros((2, 3, 300), dtype=np.float32)), trace)
    assert trace == [300, 73, 17, 3, 1]

    rng = np.random.default_rng(0)
    dilations = sorted({b.dilation for b in DEFAULT_BLOCKS})
    for spec in DEFAULT_BLOCKS:
        block = TCNBlock(spec, Rng(1, "acceptance"), dtype=np.float64).eval()
        x = rng.normal(size=(1, spec.in_ch, 3, 64))
        with no_grad():
            base = block(Tensor(x, dtype=np.float64)).data
            for t in rng.choice(np.arange(1, 64), size=8, replace=False):
                y = x.copy()
                y[..., t] += 3.0
                probe = block(Tensor(y, dtype=np.float64)).data
                assert np.array_equal(probe[..., :t], base[..., :t]), (spec, t)
    note(record_property, f"extents {trace}, causality probed at dilations {dilations}")


# overfit smoke


@pytest.mark.criterion("overfit: 8 noiseless windows, MSE < 0.01 and 100% train accuracy within 500 epochs, < 2 min")
def test_overfit_smoke(record_property):
    data = generate_dataset(windows_per_class=(2, 1, 1), seed=0, noise_std=0.0).standardized()
    eight = data.train
    assert len(eight) == 8
    splits = type(data)(eight, eight, eight, n_classes=data.n_classes)
    desk = TrainConfig.desk()
    config = TrainConfig(
        max_epochs=OVERFIT_EPOCHS, patience=OVERFIT_EPOCHS - 1, batch_size=8, seeds=(0,), alpha=desk.alpha, lr=desk.lr
    )
    reached = {}

    def check(epoch, bundle):
        mse = mse_on_windows(bundle.regressor, eight.pose, eight.sensor)
        acc = accuracy(confusion_matrix(eight.labels, predict_classes(bundle, eight.sensor), splits.n_classes))
        reached.update(epoch=epoch, mse=mse, acc=acc)
        return mse < OVERFIT_MSE and acc == 1.0

    start = time.perf_counter()
    train_joint(splits, config, seed=0, on_epoch=check)
    elapsed = time.perf_counter() - start
    note(record_property, f"epoch {reached['epoch']}: mse {reached['mse']:.4f}, acc {reached['acc']:.2f}, {elapsed:.0f}s")
    assert reached["mse"] < OVERFIT_MSE and reached["acc"] == 1.0
    assert reached["epoch"] <= OVERFIT_EPOCHS
    assert elapsed < OVERFIT_BUDGET_S


# desk experiment and determinism


def desk_config_text() -> str:
    c = TrainConfig.desk()
    return "\n".join(
        [
            "dataset.kind = synth",
            "synth.windows_per_class = 100, 25, 25",
            "synth.noise_std = 0.05",
            "synth.seed = 0",
            f"loss.alpha = {c.alpha}",
            f"loss.beta = {c.beta}",
            f"train.lr = {c.lr}",
            f"train.batch_size = {c.batch_size}",
            f"train.max_epochs = {c.max_epochs}",
            f"train.patience = {c.patience}",
            "train.seeds = " + ", ".join(map(str, c.seeds)),
        ]
    ) + "\n"


def run_desk(root: Path) -> tuple[dict[str, list[dict]], float]:
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "desk.cfg"
    cfg.write_text(desk_config_text())
    start = time.perf_counter()
    for method in METHODS:
        assert cli.main(["train", "--config", str(cfg), "--method", method, "--out", str(root)]) == 0
    elapsed = time.perf_counter() - start
    return {m: read_report(root / f"report_{m}.csv") for m in METHODS}, elapsed


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    return root, run_desk(root / "first")


@pytest.mark.criterion("desk experiment: joint F1 >= 0.95, MSE < 0.1 x target variance, 3 methods, < 10 min")
def test_desk_experiment(desk_runs, record_property):
    _, (reports, elapsed) = desk_runs
    test = generate_dataset(noise_std=0.05, seed=0).standardized().test
    target_var = float(test.sensor.var())
    summary = []
    for method, rows in reports.items():
        seeds = [r for r in rows if r["seed"] not in ("mean", "std")]
        assert [r["seed"] for r in seeds] == [str(s) for s in TrainConfig.desk().seeds]
        assert list(rows[0]) == ["method", "seed", "f1", "accuracy", "test_mse", "stopped_epoch"]
        mean = next(r for r in rows if r["seed"] == "mean")
        summary.append(f"{method} f1={mean['f1']} mse={mean['test_mse'] or 'n/a'}")
    joint = {r["seed"]: r for r in reports["joint"]}
    note(record_property, "; ".join(summary) + f"; target var {target_var:.3f}; {elapsed:.0f}s")
    assert float(joint["mean"]["f1"]) >= DESK_F1
    assert float(joint["mean"]["test_mse"]) < DESK_MSE_FRACTION * target_var
    assert reports["regression-first"][0]["test_mse"] != ""
    assert reports["baseline-real"][0]["test_mse"] == ""
    assert elapsed < DESK_BUDGET_S


@pytest.mark.criterion("determinism: two desk runs give byte-identical reports")
def test_desk_determinism(desk_runs, record_property):
    root, _ = desk_runs
    run_desk(root / "second")
    same = [(root / "first" / f"report_{m}.csv").read_bytes() == (root / "second" / f"report_{m}.csv").read_bytes() for m in METHODS]
    note(record_property, f"{sum(same)}/{len(METHODS)} reports identical")
    assert all(same)


# training invariants


@pytest.mark.criterion("equivalence: joint with alpha=beta=0 reproduces stage-1 loss trajectory bit-for-bit")
def test_equivalence_oracle(record_property):
    data = generate_dataset(windows_per_class=(4, 2, 2), seed=3, noise_std=0.05).standardized()
    config = TrainConfig(alpha=0.0, beta=0.0, max_epochs=3, patience=2, batch_size=4, seeds=(0, 1))
    compared = 0
    for seed in config.seeds:
        joint = train_joint(data, config, seed)
        _, _, stage1 = train_regressor(ModelBundle.create(data.n_classes, seed), data, config, seed)
        n = min(len(joint.history["loss"]), len(stage1["loss"]))
        assert n >= 8
        assert joint.history["loss"][:n] == stage1["loss"][:n]
        compared += n
    note(record_property, f"{compared} step losses identical over seeds {config.seeds}")


@pytest.mark.criterion("beta=0 neutrality: gradients bitwise identical with and without the similarity term")
def test_beta_zero_neutrality(record_property):
    rng = np.random.default_rng(0)
    pose = rng.normal(size=(4, 3, 3, 300)).astype(np.float32)
    sensor = rng.normal(size=(4, 3, 300)).astype(np.float32)
    labels = np.array([0, 1, 2, 3])

    def grads(include):
        bundle = ModelBundle.create(4, seed=7)
        bundle.train()
        real = Tensor(sensor)
        synth = bundle.regressor(Tensor(pose))
        fr, fs = bundle.features(real), bundle.features(synth)
        loss = loss_final(real, synth, fr, fs, bundle.classifier(fr), bundle.classifier(fs), labels, LossWeights(1.0, 0.0), include)
        backward(loss)
        return loss.item(), {n: p.grad for n, p in bundle.named_parameters()}

    (v1, g1), (v2, g2) = grads(True), grads(False)
    assert v1 == v2
    mismatched = [n for n in g1 if not np.array_equal(g1[n], g2[n])]
    note(record_property, f"{len(g1)} parameter tensors compared")
    assert not mismatched


# preprocessing unit vectors


@pytest.mark.criterion("preprocessing: every stated example holds exactly")
def test_preprocessing_examples(record_property):
    checks = 0

    def ok(cond):
        nonlocal checks
        assert cond
        checks += 1

    ok(np.array_equal(resample_linear([0.0, 1.0, 2.0], 1, 2), [0, 0.5, 1, 1.5, 2]))
    series = np.random.default_rng(0).normal(size=(9, 3))
    ok(np.array_equal(resample_linear(series, 50, 50), series))
    ok(np.all(resample_linear(np.full(5, 2.5), 10, 30) == 2.5))

    joints = ["wrist", "elbow", "shoulder", "neck", "midhip"]

    def pose_with(dist, rate=2.0):
        pos = np.zeros((len(dist), 5, 3))
        pos[:, 3, 1] = dist
        return PoseSequence(rate, joints, pos)

    ok(neck_midhip_scale(pose_with([0.5] * 7), 3) == 0.5)
    ok(neck_midhip_scale(pose_with([0.4, 0.5, 100.0], rate=1.0), 1, w_seconds=2.0) == 0.5)
    dist = [0.3, 0.9, 0.4, 0.8, 0.5, 0.7, 0.6]
    ok(neck_midhip_scale(pose_with(dist), 0) == np.median(dist[:4]))

    ok(scale_value(0.8, 0.8) == 1.0)
    ok(scale_value(0.0, 0.8) == -1.0)
    ok(scale_value(0.25, 0.5) == 0.0)

    pos = np.zeros((3, 5, 3))
    pos[:, 4] = [2.0, 1.0, 0.5]
    pos[:, 3] = pos[:, 4] + [0, 0.5, 0]
    pos[:, 0] = pos[:, 4] + [0.5, 0, 0]
    pos[:, 1] = pos[:, 4]
    norm = normalize_skeleton(PoseSequence(2.0, joints, pos))
    ok(np.array_equal(norm.joint("midhip"), np.full((3, 3), -1.0)))
    ok(np.array_equal(norm.joint("elbow"), np.full((3, 3), -1.0)))
    ok(np.allclose(norm.joint("wrist"), [1.0, -1.0, -1.0], rtol=0, atol=1e-15))
    moved = normalize_skeleton(PoseSequence(2.0, joints, pos + [5.0, -3.0, 7.0]))
    ok(np.allclose(moved.positions, norm.positions, rtol=0, atol=1e-12))

    x = np.zeros((2, 2, 4))
    x[:, 0] = 4.0
    x[:, 1] = [[-1, 1, -1, 1], [1, -1, 1, -1]]
    stats = standardize_fit(x[:, 1:])
    ok(stats.mean[0] == 0.0 and stats.std[0] == 1.0)
    ok(np.array_equal(standardize_apply(x[:, 1:], stats), x[:, 1:]))
    ok(np.all(standardize_apply(x, NormStats([4.0, 0.0], [1.0, 1.0]))[:, 0] == 0.0))
    ok(standardize_apply(x[:, 1:] + 3.0, stats).mean() != 0.0)

    def windows(n, labels=None):
        labels = np.zeros(n, int) if labels is None else np.asarray(labels)
        return make_windows(np.zeros((n, 3, 3)), np.zeros((n, 3)), labels)

    ok([w.start for w in windows(340)] == [0, 20, 40])
    ok(windows(300, [0] * 200 + [1] * 100)[0].label == 0)
    ok(windows(300, [1] * 150 + [0] * 150)[0].label == 0)
    ok(windows(300, [2] * 150 + [1] * 150)[0].label == 1)
    note(record_property, f"{checks} examples")


# formats


@pytest.mark.criterion("formats: checkpoint bit round-trip, array fixture + 16-byte mutation fuzz, unknown config key")
def test_format_suite(tmp_path, record_property):
    bundle = ModelBundle.create(4, seed=2)
    write_checkpoint(bundle, tmp_path / "m.ckpt")
    back = read_checkpoint(tmp_path / "m.ckpt")
    before, after = bundle.state_dict(), back.state_dict()
    assert before.keys() == after.keys()
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)
    assert checkpoint_bytes(back) == (tmp_path / "m.ckpt").read_bytes()

    fixture = array_container_bytes(np.arange(6, dtype=np.float64).reshape(2, 3))
    assert np.array_equal(parse_array_container(fixture), np.arange(6.0).reshape(2, 3))
    rejected = 0
    for offset in range(16):
        for value in range(256):
            if value == fixture[offset]:
                continue
            blob = bytearray(fixture)
            blob[offset] = value
            with pytest.raises(FormatError):
                parse_array_container(bytes(blob))
            rejected += 1

    with pytest.raises(ConfigError, match="train.lrr"):
        parse_config("dataset.kind = synth\ntrain.lrr = 0.01\n")
    note(record_property, f"{len(before)} tensors round-tripped, {rejected} mutations rejected")


# full scale (never in CI)

MMFIT_ROOT = os.environ.get("POSE2IMU_MMFIT")


@pytest.mark.fullscale
@pytest.mark.criterion("full scale MM-Fit: baseline 0.9025 +/- 0.05, joint (beta=0) 0.9196 +/- 0.05 over 5 seeds")
@pytest.mark.skipif(not MMFIT_ROOT, reason="set POSE2IMU_MMFIT to an MM-Fit directory to run the multi-hour harness")
def test_mmfit_full_scale(tmp_path, record_property):
    cfg = tmp_path / "mmfit.cfg"
    lines = [f"dataset.kind = mmfit", f"dataset.path = {MMFIT_ROOT}", "loss.beta = 0.0"]
    if os.environ.get("POSE2IMU_MMFIT_DESCRIPTOR"):
        lines.append(f"dataset.descriptor = {os.environ['POSE2IMU_MMFIT_DESCRIPTOR']}")
    cfg.write_text("\n".join(lines) + "\n")
    means = {}
    for method in ("baseline-real", "joint"):
        assert cli.main(["train", "--config", str(cfg), "--method", method, "--out", str(tmp_path)]) == 0
        rows = read_report(tmp_path / f"report_{method}.csv")
        means[method] = float(next(r for r in rows if r["seed"] == "mean")["f1"])
    note(record_property, f"baseline {means['baseline-real']:.4f}, joint {means['joint']:.4f}")
    assert abs(means["baseline-real"] - 0.9025) <= 0.05
    assert abs(means["joint"] - 0.9196) <= 0.05
