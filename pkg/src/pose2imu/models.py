"""Pose-to-sensor regressor (TCN) and the sensor feature extractor + classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .engine import (
    DEFAULT_DTYPE,
    Parameter,
    Rng,
    ShapeError,
    Tensor,
    batchnorm1d,
    conv1d,
    conv2d,
    dropout,
    flatten,
    kaiming_init,
    leaky_relu,
    linear,
    maxpool1d,
)

LEAKY_SLOPE = 0.01
LINEAR_GAIN_SLOPE = 1.0  # Kaiming gain 1 for layers with no activation after them


class Module:
    """Tracks parameters, buffers and child modules in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_rng(self, rng: Rng | None) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "rng", rng)
        return self

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _weight(shape, rng: Rng, dtype, slope: float = LEAKY_SLOPE) -> Parameter:
    return Parameter(kaiming_init(shape, rng, slope, dtype), dtype=dtype)


def _zeros(n: int, dtype) -> Parameter:
    return Parameter(np.zeros(n, dtype=dtype), dtype=dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng: Rng, dilation=(1, 1), padding=0, dtype=DEFAULT_DTYPE, slope=LEAKY_SLOPE):
        super().__init__()
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
        self.weight = _weight((out_ch, in_ch, kh, kw), rng, dtype, slope)
        self.bias = _zeros(out_ch, dtype)
        self.dilation = dilation
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=1, dilation=self.dilation, padding=self.padding)


class Conv1d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride, rng: Rng, dtype=DEFAULT_DTYPE, slope=LEAKY_SLOPE):
        super().__init__()
        self.weight = _weight((out_ch, in_ch, kernel), rng, dtype, slope)
        self.bias = _zeros(out_ch, dtype)
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, stride=self.stride)


class Linear(Module):
    def __init__(self, f_in, f_out, rng: Rng, dtype=DEFAULT_DTYPE, slope=LEAKY_SLOPE):
        super().__init__()
        self.weight = _weight((f_out, f_in), rng, dtype, slope)
        self.bias = _zeros(f_out, dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise ShapeError(f"expected [batch, {self.weight.shape[1]}] input, got {x.shape}")
        return linear(x, self.weight, self.bias)


class BatchNorm1d(Module):
    def __init__(self, ch, dtype=DEFAULT_DTYPE, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(ch, dtype=dtype), dtype=dtype)
        self.beta = _zeros(ch, dtype)
        self.register_buffer("running_mean", np.zeros(ch, dtype=dtype))
        self.register_buffer("running_var", np.ones(ch, dtype=dtype))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm1d(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.momentum, self.eps, self.training
        )


@dataclass(frozen=True)
class TCNBlockSpec:
    in_ch: int
    out_ch: int
    kernel: int
    dilation: int
    dropout: float

    def __post_init__(self):
        if self.kernel < 1 or self.dilation < 1:
            raise ValueError(f"kernel and dilation must be >= 1: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1): {self}")


# rows of the regression architecture table
DEFAULT_BLOCKS = (
    TCNBlockSpec(3, 32, 3, 1, 0.0),
    TCNBlockSpec(32, 32, 3, 2, 0.2),
    TCNBlockSpec(32, 32, 3, 4, 0.2),
    TCNBlockSpec(32, 32, 3, 1, 0.2),
    TCNBlockSpec(16, 16, 1, 1, 0.1),
)


@dataclass(frozen=True)
class RegressorSpec:
    blocks: tuple[TCNBlockSpec, ...] = DEFAULT_BLOCKS
    window: int = 300
    n_joints: int = 3
    variant: str = "full"  # or "no-block-5"
    residual: bool = True
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if self.variant not in ("full", "no-block-5"):
            raise ValueError(f"unknown regressor variant {self.variant!r}")

    @property
    def active_blocks(self) -> tuple[TCNBlockSpec, ...]:
        return self.blocks if self.variant == "full" else self.blocks[:-1]

    def linear_widths(self) -> list[tuple[int, int]]:
        """Pointwise channel-mixing linear after each block but the last.

        Each maps a block's output width to the next block's input width.
        """
        blocks = self.active_blocks
        widths = [(blocks[i].out_ch, blocks[i + 1].in_ch) for i in range(len(blocks) - 1)]
        if self.variant == "no-block-5":
            widths.append((blocks[-1].out_ch, self.blocks[-1].in_ch))
        return widths

    @property
    def flat_width(self) -> int:
        last = self.blocks[-1].out_ch if self.variant == "full" else self.blocks[-1].in_ch
        return last * self.n_joints * self.window


class TCNBlock(Module):
    """Two dilated causal 2-D convolutions over (joints, time) with a residual path.

    The kernel is square; dilation applies on the time axis only. Time is
    zero-padded on the left so outputs never see the future, the joint axis
    is padded symmetrically so its extent is preserved.
    """

    def __init__(self, spec: TCNBlockSpec, rng: Rng, residual=True, slope=LEAKY_SLOPE, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.spec = spec
        self.slope = slope
        k, d = spec.kernel, spec.dilation
        pad = ((k // 2, (k - 1) // 2), (d * (k - 1), 0))
        self.conv1 = Conv2d(spec.in_ch, spec.out_ch, k, rng.child("conv1"), (1, d), pad, dtype, slope)
        self.conv2 = Conv2d(spec.out_ch, spec.out_ch, k, rng.child("conv2"), (1, d), pad, dtype, slope)
        self.residual = residual
        if residual and spec.in_ch != spec.out_ch:
            self.downsample = Conv2d(
                spec.in_ch, spec.out_ch, 1, rng.child("downsample"), dtype=dtype, slope=LINEAR_GAIN_SLOPE
            )
        else:
            self.downsample = None
        self.rng = None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_ch:
            raise ShapeError(f"TCN block expects [b, {self.spec.in_ch}, J, T], got {x.shape}")
        h = leaky_relu(self.conv1(x), self.slope)
        h = dropout(h, self.spec.dropout, self.training, self.rng)
        h = leaky_relu(self.conv2(h), self.slope)
        h = dropout(h, self.spec.dropout, self.training, self.rng)
        if not self.residual:
            return h
        res = x if self.downsample is None else self.downsample(x)
        return leaky_relu(h + res, self.slope)


class Regressor(Module):
    """Maps ``[b, 3 coords, joints, T]`` pose windows to ``[b, 3, T]`` accelerations."""

    def __init__(self, spec: RegressorSpec, rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.spec = spec
        self.blocks: list[TCNBlock] = []
        self.mixers: list[Conv2d] = []
        widths = spec.linear_widths()
        for i, bspec in enumerate(spec.active_blocks, start=1):
            block = TCNBlock(bspec, rng.child(f"block{i}"), spec.residual, spec.slope, dtype)
            setattr(self, f"block{i}", block)
            self.blocks.append(block)
            if i <= len(widths):
                f_in, f_out = widths[i - 1]
                mixer = Conv2d(f_in, f_out, 1, rng.child(f"linear{i}"), dtype=dtype, slope=LINEAR_GAIN_SLOPE)
                setattr(self, f"linear{i}", mixer)
                self.mixers.append(mixer)
        self.fc = Linear(spec.flat_width, 3 * spec.window, rng.child("fc"), dtype, LINEAR_GAIN_SLOPE)
        self.rng = None

    def forward(self, x: Tensor) -> Tensor:
        s = self.spec
        if x.ndim != 4 or x.shape[1:] != (3, s.n_joints, s.window):
            raise ShapeError(f"regressor expects [b, 3, {s.n_joints}, {s.window}], got {x.shape}")
        h = x
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i < len(self.mixers):
                h = self.mixers[i](h)
        out = self.fc(flatten(h))
        return out.reshape(x.shape[0], 3, s.window)


@dataclass(frozen=True)
class FeatureExtractorSpec:
    in_ch: int = 3
    channels: tuple[int, ...] = (9, 9, 9)
    kernel: int = 9
    stride: int = 9 // 2
    dropout: float = 0.2
    pool: int = 2
    feature_width: int = 100
    window: int = 300
    slope: float = LEAKY_SLOPE

    def time_extents(self) -> list[int]:
        """Time length after each conv and after pooling."""
        t = [self.window]
        for _ in self.channels:
            t.append((t[-1] - self.kernel) // self.stride + 1)
        t.append((t[-1] - self.pool) // self.pool + 1)
        if min(t) < 1:
            raise ShapeError(f"window {self.window} too short for the conv stack: extents {t}")
        return t


class FeatureExtractor(Module):
    """conv -> LeakyReLU -> BN -> dropout (x3), maxpool, flatten, FC to features."""

    def __init__(self, spec: FeatureExtractorSpec, rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.spec = spec
        extents = spec.time_extents()
        self.convs: list[Conv1d] = []
        self.norms: list[BatchNorm1d] = []
        c_in = spec.in_ch
        for i, c_out in enumerate(spec.channels, start=1):
            conv = Conv1d(c_in, c_out, spec.kernel, spec.stride, rng.child(f"conv{i}"), dtype, spec.slope)
            bn = BatchNorm1d(c_out, dtype)
            setattr(self, f"conv{i}", conv)
            setattr(self, f"bn{i}", bn)
            self.convs.append(conv)
            self.norms.append(bn)
            c_in = c_out
        self.fc = Linear(c_in * extents[-1], spec.feature_width, rng.child("fc"), dtype, LINEAR_GAIN_SLOPE)
        self.rng = None

    def forward(self, x: Tensor, trace: list | None = None) -> Tensor:
        s = self.spec
        if x.ndim != 3 or x.shape[1] != s.in_ch:
            raise ShapeError(f"feature extractor expects [b, {s.in_ch}, T], got {x.shape}")
        if x.shape[2] != s.window:
            raise ShapeError(f"feature extractor built for T={s.window}, got {x.shape[2]}")
        h = x
        if trace is not None:
            trace.append(h.shape[2])
        for conv, bn in zip(self.convs, self.norms):
            h = conv(h)
            h = leaky_relu(h, s.slope)
            h = bn(h)
            h = dropout(h, s.dropout, self.training, self.rng)
            if trace is not None:
                trace.append(h.shape[2])
        h = maxpool1d(h, s.pool, s.pool)
        if trace is not None:
            trace.append(h.shape[2])
        return self.fc(flatten(h))


class Classifier(Module):
    def __init__(self, n_classes: int, rng: Rng, feature_width: int = 100, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.n_classes = n_classes
        self.fc = Linear(feature_width, n_classes, rng.child("fc"), dtype, LINEAR_GAIN_SLOPE)

    def forward(self, features: Tensor) -> Tensor:
        return self.fc(features)


@dataclass
class ModelBundle:
    """Regressor R (optional), feature extractor F and classifier C."""

    feature: FeatureExtractor
    classifier: Classifier
    regressor: Regressor | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        n_classes: int,
        seed: int,
        window: int = 300,
        with_regressor: bool = True,
        variant: str = "full",
        slope: float = LEAKY_SLOPE,
        dtype=DEFAULT_DTYPE,
    ) -> "ModelBundle":
        init = Rng(seed, "init")
        reg = None
        if with_regressor:
            reg = Regressor(RegressorSpec(window=window, variant=variant, slope=slope), init.child("regressor"), dtype)
            reg.set_rng(Rng(seed, "dropout.regressor"))
        feat = FeatureExtractor(FeatureExtractorSpec(window=window, slope=slope), init.child("feature"), dtype)
        feat.set_rng(Rng(seed, "dropout.feature"))
        clf = Classifier(n_classes, init.child("classifier"), dtype=dtype)
        meta = {"n_classes": n_classes, "window": window, "variant": variant, "slope": slope, "seed": seed}
        return cls(feat, clf, reg, meta)

    def modules(self) -> dict[str, Module]:
        out = {}
        if self.regressor is not None:
            out["regressor"] = self.regressor
        out["feature"] = self.feature
        out["classifier"] = self.classifier
        return out

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        named = []
        for prefix, mod in self.modules().items():
            named.extend(mod.named_parameters(prefix + "."))
        return named

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        named = []
        for prefix, mod in self.modules().items():
            named.extend(mod.named_buffers(prefix + "."))
        return named

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = set(targets) - set(state)
        extra = set(state) - set(targets)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in state.items():
            if targets[name].shape != arr.shape:
                raise ShapeError(f"{name}: expected {targets[name].shape}, got {arr.shape}")
        for name, arr in state.items():
            targets[name][...] = arr

    def train(self, mode: bool = True) -> None:
        for m in self.modules().values():
            m.train(mode)

    def eval(self) -> None:
        self.train(False)

    def features(self, sensor: Tensor) -> Tensor:
        return self.feature(sensor)

    def logits(self, sensor: Tensor) -> Tensor:
        return self.classifier(self.feature(sensor))
