"""Finite-difference checks for every differentiable operation.

Inputs are drawn away from kinks (Leaky ReLU at 0, max-pool ties) so that
the float32 run with its larger step stays on one linear piece.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .gradcheck import finite_diff_check
from .rng import Rng
from .tensor import Tensor

TOLERANCE = {np.float64: 1e-5, np.float32: 1e-3}
EPSILON = {np.float64: 1e-6, np.float32: 1e-2}


@dataclass(frozen=True)
class GradCase:
    name: str
    build: Callable[[Rng], tuple[Callable[..., Tensor], list[np.ndarray]]]


def _away_from_zero(rng: Rng, shape, margin: float = 0.1) -> np.ndarray:
    x = rng.normal(shape)
    return np.sign(x) * (np.abs(x) + margin) + (x == 0) * margin


def _case_add(rng):
    return (lambda a, b: a + b), [rng.normal((3, 4)), rng.normal((3, 4))]


def _case_mul(rng):
    return (lambda a, b: a * b), [rng.normal((3, 4)), rng.normal((3, 4))]


def _case_sub_scalar(rng):
    return (lambda a: 2.0 - a * 3.0), [rng.normal((5,))]


def _case_reshape_sum(rng):
    return (lambda a: a.reshape(6, 2).sum()), [rng.normal((3, 4))]


def _case_mean(rng):
    return (lambda a: a.mean()), [rng.normal((2, 5))]


def _case_conv2d_causal(rng):
    def op(x, w, b):
        return ops.conv2d(x, w, b, dilation=(1, 2), padding=((1, 1), (4, 0)))

    return op, [rng.normal((2, 3, 3, 10)), rng.normal((4, 3, 3, 3)) * 0.5, rng.normal((4,))]


def _case_conv2d_strided(rng):
    def op(x, w):
        return ops.conv2d(x, w, stride=(2, 3), padding=1)

    return op, [rng.normal((2, 2, 5, 9)), rng.normal((3, 2, 2, 3))]


def _case_conv1d(rng):
    def op(x, w, b):
        return ops.conv1d(x, w, b, stride=4)

    return op, [rng.normal((2, 3, 21)), rng.normal((5, 3, 9)) * 0.3, rng.normal((5,))]


def _case_linear(rng):
    return ops.linear, [rng.normal((4, 6)), rng.normal((3, 6)), rng.normal((3,))]


def _case_leaky_relu(rng):
    return (lambda x: ops.leaky_relu(x, 0.01)), [_away_from_zero(rng, (4, 7))]


def _case_batchnorm(rng):
    ch = 3
    def op(x, g, b):
        return ops.batchnorm1d(x, g, b, np.zeros(ch), np.ones(ch), training=True)

    return op, [rng.normal((4, ch, 5)), 1.0 + 0.2 * rng.normal((ch,)), rng.normal((ch,))]


def _case_dropout(rng):
    def op(x):
        return ops.dropout(x, 0.3, True, Rng(7, "gradsuite.dropout"))

    return op, [rng.normal((3, 8))]


def _case_maxpool(rng):
    n, c, t = 2, 3, 8
    # well-separated values: no two entries of a window within 0.1 of each other
    base = np.stack([rng.permutation(c * t) for _ in range(n)]).reshape(n, c, t) * 0.1
    return (lambda x: ops.maxpool1d(x, 2, 2)), [base + 0.02 * rng.uniform(0, 1, (n, c, t))]


def _case_flatten(rng):
    return ops.flatten, [rng.normal((2, 3, 4))]


def _case_mse(rng):
    return ops.mse, [rng.normal((3, 5)), rng.normal((3, 5))]


def _case_cosine(rng):
    return ops.cosine_sim, [rng.normal((4, 6)), rng.normal((4, 6))]


def _case_cross_entropy(rng):
    targets = np.array([0, 2, 1, 2])
    weights = np.array([0.5, 1.0, 2.0])
    return (lambda z: ops.weighted_cross_entropy(z, targets, weights)), [rng.normal((4, 3))]


GRADIENT_CASES = (
    GradCase("add", _case_add),
    GradCase("mul", _case_mul),
    GradCase("scalar_arith", _case_sub_scalar),
    GradCase("reshape_sum", _case_reshape_sum),
    GradCase("mean", _case_mean),
    GradCase("conv2d_causal_dilated", _case_conv2d_causal),
    GradCase("conv2d_strided", _case_conv2d_strided),
    GradCase("conv1d_strided", _case_conv1d),
    GradCase("linear", _case_linear),
    GradCase("leaky_relu", _case_leaky_relu),
    GradCase("batchnorm1d", _case_batchnorm),
    GradCase("dropout", _case_dropout),
    GradCase("maxpool1d", _case_maxpool),
    GradCase("flatten", _case_flatten),
    GradCase("mse", _case_mse),
    GradCase("cosine_sim", _case_cosine),
    GradCase("weighted_cross_entropy", _case_cross_entropy),
)


@dataclass(frozen=True)
class GradResult:
    name: str
    dtype: str
    worst_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.worst_error <= self.tolerance


def run_gradient_suite(dtype=np.float64, points: int = 10, seed: int = 0) -> list[GradResult]:
    """Check each case at ``points`` independent random input draws."""
    dtype = np.dtype(dtype).type
    tol, eps = TOLERANCE[dtype], EPSILON[dtype]
    results = []
    for case in GRADIENT_CASES:
        start = time.perf_counter()
        worst = 0.0
        for point in range(points):
            op, inputs = case.build(Rng(seed, f"gradsuite.{case.name}.{point}"))
            arrays = [np.asarray(a, dtype=dtype) for a in inputs]
            worst = max(worst, finite_diff_check(op, arrays, epsilon=eps, seed=point))
        results.append(GradResult(case.name, np.dtype(dtype).name, worst, tol, time.perf_counter() - start))
    return results
