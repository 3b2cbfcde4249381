from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import Rng
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    """A named trainable tensor."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def kaiming_init(shape: Sequence[int], rng: Rng, slope: float = 0.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """He-normal weights with ``std = sqrt(2 / (1 + slope**2)) / sqrt(fan_in)``.

    ``fan_in`` is every axis but the first, so it covers both linear
    ``[out, in]`` and convolution ``[out, in, *kernel]`` weights.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise ValueError(f"kaiming_init needs a weight shape with >= 2 axes, got {shape}")
    fan_in = int(np.prod(shape[1:]))
    if fan_in == 0:
        raise ValueError("kaiming_init: fan_in is zero")
    gain = math.sqrt(2.0 / (1.0 + slope**2))
    return rng.normal(shape, std=gain / math.sqrt(fan_in), dtype=dtype)


_CHUNK = 1 << 16


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    A ``None`` gradient leaves both the parameter and its moments untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("adam_step: params, grads and state must have equal length")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"adam_step: shape mismatch for parameter {p.shape}: grad {g.shape}, state {m.shape}")
        dt = p.data.dtype.type
        pf, gf, mf, vf = p.data.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1)
        scratch = np.empty(min(_CHUNK, pf.size), dtype=np.result_type(g.dtype, p.data.dtype))
        # chunks keep the scratch buffer and operands in cache on large tensors
        for s in range(0, pf.size, _CHUNK):
            e = min(s + _CHUNK, pf.size)
            gc, mc, vc, upd = gf[s:e], mf[s:e], vf[s:e], scratch[: e - s]
            np.multiply(gc, dt(1.0 - beta1), out=upd)
            mc *= dt(beta1)
            mc += upd
            np.multiply(gc, gc, out=upd)
            upd *= dt(1.0 - beta2)
            vc *= dt(beta2)
            vc += upd
            # p -= lr * (m / c1) / (sqrt(v / c2) + eps)
            np.sqrt(vc, out=upd)
            upd *= dt(1.0 / math.sqrt(c2))
            upd += dt(eps)
            np.divide(mc, upd, out=upd)
            upd *= dt(lr / c1)
            pf[s:e] -= upd
    return state


@dataclass
class Adam:
    params: list[Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.state = AdamState.zeros_like(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.beta1, self.beta2, self.eps)
