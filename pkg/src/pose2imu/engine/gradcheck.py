"""Central finite-difference verification of backward passes."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .rng import Rng
from .tensor import Tensor, backward


def _scalarize(out: Tensor, proj: np.ndarray) -> Tensor:
    # random projection so every output element contributes
    return (out * Tensor(proj, dtype=out.dtype)).sum()


def finite_diff_check(
    op: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    epsilon: float = 1e-6,
    wrt: Sequence[int] | None = None,
    seed: int = 0,
) -> float:
    """Largest relative gradient error of ``op`` over the inputs in ``wrt``.

    The analytic gradient of ``sum(op(*inputs) * P)`` for a fixed random
    ``P`` is compared with central differences. The error for one input is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``.
    ``op`` must be deterministic (re-seed any dropout inside it).
    """
    arrays = [np.array(a, copy=True) for a in inputs]
    wrt = list(range(len(arrays))) if wrt is None else list(wrt)

    tensors = [Tensor(a, requires_grad=(i in wrt), dtype=a.dtype) for i, a in enumerate(arrays)]
    out = op(*tensors)
    proj = Rng(seed, "gradcheck").normal(out.shape, dtype=out.dtype)
    loss = _scalarize(out, proj)
    backward(loss)

    def value() -> float:
        ts = [Tensor(a, dtype=a.dtype) for a in arrays]
        return float((op(*ts).data.astype(np.float64) * proj).sum())

    worst = 0.0
    for i in wrt:
        analytic = tensors[i].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[i])
        numeric = np.zeros(arrays[i].shape, dtype=np.float64)
        flat = arrays[i].reshape(-1)
        num_flat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            hp = float(flat[k]) - float(orig)  # actual step after rounding to dtype
            fp = value()
            flat[k] = orig - epsilon
            hm = float(flat[k]) - float(orig)
            fm = value()
            flat[k] = orig
            num_flat[k] = (fp - fm) / (hp - hm)
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        if scale == 0.0:
            continue
        err = float(np.abs(analytic.astype(np.float64) - numeric).max() / scale)
        worst = max(worst, err)
    return worst
