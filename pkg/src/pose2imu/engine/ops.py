"""Layer and loss operations with hand-written backward passes."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import Rng
from .tensor import Tensor, make_node


class ShapeError(ValueError):
    """Operand extents are incompatible with the operation."""


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _pad_spec(padding) -> tuple[tuple[int, int], tuple[int, int]]:
    """Normalise ``p``, ``(ph, pw)`` or ``((top, bottom), (left, right))``."""
    if isinstance(padding, (tuple, list)):
        h, w = padding
        h = (int(h), int(h)) if np.isscalar(h) else (int(h[0]), int(h[1]))
        w = (int(w), int(w)) if np.isscalar(w) else (int(w[0]), int(w[1]))
        return h, w
    p = int(padding)
    return (p, p), (p, p)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=1,
    dilation=1,
    padding=0,
) -> Tensor:
    """2-D cross-correlation over ``[batch, in_ch, H, W]``.

    ``padding`` may be asymmetric, given as ``((top, bottom), (left, right))``;
    causal convolutions pad only on the left of the time axis.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    b, c, H, W = x.shape
    o, ci, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"conv2d: input {x.shape} has {c} channels but weight {weight.shape} expects {ci}")
    sh, sw = _pair(stride)
    dh, dw = _pair(dilation)
    if sh < 1 or sw < 1 or dh < 1 or dw < 1:
        raise ShapeError("conv2d: stride and dilation must be >= 1")
    (pt, pb), (pl, pr) = _pad_spec(padding)
    span_h, span_w = dh * (kh - 1) + 1, dw * (kw - 1) + 1
    Hp, Wp = H + pt + pb, W + pl + pr
    if Hp < span_h or Wp < span_w:
        raise ShapeError(
            f"conv2d: padded input {(Hp, Wp)} smaller than dilated kernel {(span_h, span_w)}"
        )
    Ho = (Hp - span_h) // sh + 1
    Wo = (Wp - span_w) // sw + 1

    # Flatten each padded image so a kernel tap at (i, j) is a constant shift
    # i*dh*Wp + j*dw along one axis. Every tap is then a strided GEMM on a
    # view, with no im2col copy. Columns past the valid width are discarded.
    xd = x.data
    xp = np.zeros((b, c, Hp, Wp), dtype=xd.dtype)
    xp[:, :, pt : pt + H, pl : pl + W] = xd
    xf = xp.reshape(b, c, Hp * Wp)
    Hf = Hp - span_h + 1  # stride-1 output rows
    L = (Hf - 1) * Wp + (Wp - span_w + 1)
    taps = [(i, j, i * dh * Wp + j * dw) for i in range(kh) for j in range(kw)]
    wd = weight.data
    wk = {(i, j): np.ascontiguousarray(wd[:, :, i, j]) for i, j, _ in taps}
    acc = np.zeros((b, o, Hf * Wp), dtype=xd.dtype)
    for i, j, off in taps:
        acc[:, :, :L] += wk[i, j] @ xf[:, :, off : off + L]
    rows = slice(0, sh * (Ho - 1) + 1, sh)
    cols = slice(0, sw * (Wo - 1) + 1, sw)
    out = np.ascontiguousarray(acc.reshape(b, o, Hf, Wp)[:, :, rows, cols])
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        gfull = np.zeros((b, o, Hf, Wp), dtype=g.dtype)
        gfull[:, :, rows, cols] = g
        gflat = gfull.reshape(b, o, Hf * Wp)[:, :, :L]
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.empty_like(wd)
            for i, j, off in taps:
                gw[:, :, i, j] = (gflat @ xf[:, :, off : off + L].transpose(0, 2, 1)).sum(axis=0)
        if x.requires_grad:
            gxf = np.zeros_like(xf)
            for i, j, off in taps:
                gxf[:, :, off : off + L] += wk[i, j].T @ gflat
            gx = np.ascontiguousarray(gxf.reshape(b, c, Hp, Wp)[:, :, pt : pt + H, pl : pl + W])
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return make_node(out, parents, grad_fn)


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
) -> Tensor:
    """1-D cross-correlation over ``[batch, in_ch, T]``."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects 3-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv1d: input {x.shape} has {x.shape[1]} channels but weight {weight.shape} expects {weight.shape[1]}"
        )
    if isinstance(padding, (tuple, list)):
        pad = ((0, 0), (int(padding[0]), int(padding[1])))
    else:
        pad = ((0, 0), (int(padding), int(padding)))
    x4 = x.reshape(x.shape[0], x.shape[1], 1, x.shape[2])
    w4 = weight.reshape(weight.shape[0], weight.shape[1], 1, weight.shape[2])
    y = conv2d(x4, w4, bias, stride=(1, stride), dilation=(1, dilation), padding=pad)
    return y.reshape(y.shape[0], y.shape[1], y.shape[3])


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y = x @ W.T + b`` for ``x`` of shape ``[batch, f_in]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        if bias.shape != (wd.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    return make_node(out, parents, grad_fn)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    """Identity for ``x > 0``, ``slope * x`` otherwise (0 takes the slope side)."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in [0, 1), got {slope}")
    s = x.data.dtype.type(slope)
    factor = (x.data > 0).astype(x.dtype)
    factor *= 1 - s
    factor += s
    return make_node(x.data * factor, (x,), lambda g: (g * factor,))


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float = 0.1,
    eps: float = 1e-5,
    training: bool = True,
) -> Tensor:
    """Per-channel normalisation of ``[batch, ch, T]``.

    In training mode ``running_mean``/``running_var`` are updated in place
    with the (biased) batch statistics.
    """
    if x.ndim != 3:
        raise ShapeError(f"batchnorm1d expects [batch, ch, T], got {x.shape}")
    b, c, t = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm1d: affine params {gamma.shape}/{beta.shape} for {c} channels")
    xd = x.data
    dt = xd.dtype.type
    gd = gamma.data[None, :, None]
    if training:
        n = b * t
        if n < 2:
            raise ValueError("batchnorm1d: training mode needs at least 2 values per channel")
        mean = xd.mean(axis=(0, 2))
        var = xd.var(axis=(0, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)
    inv_std = (1.0 / np.sqrt(var + dt(eps))).astype(xd.dtype)
    xhat = (xd - mean[None, :, None]) * inv_std[None, :, None]
    out = xhat * gd + beta.data[None, :, None]

    def grad_fn(g):
        gg = (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd
            if training:
                n = b * t
                gx = (inv_std[None, :, None] / n) * (
                    n * gxhat
                    - gxhat.sum(axis=(0, 2), keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
                )
            else:
                gx = gxhat * inv_std[None, :, None]
        return gx, gg, gbeta

    return make_node(out.astype(xd.dtype, copy=False), (x, gamma, beta), grad_fn)


def dropout(x: Tensor, p: float, training: bool, rng: Rng | None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an Rng")
    keep = rng.random(x.shape, dtype=np.float32) >= p
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return make_node(x.data * mask, (x,), lambda g: (g * mask,))


def maxpool1d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Max over windows of ``[batch, ch, T]``; ties send gradient to the first max."""
    stride = kernel if stride is None else stride
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d expects [batch, ch, T], got {x.shape}")
    b, c, t = x.shape
    if t < kernel:
        raise ShapeError(f"maxpool1d: length {t} shorter than kernel {kernel}")
    t_out = (t - kernel) // stride + 1
    win = sliding_window_view(x.data, kernel, axis=2)[:, :, : stride * (t_out - 1) + 1 : stride]
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    src = arg + (np.arange(t_out) * stride)[None, None, :]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        bi, ci, _ = np.indices(g.shape)
        np.add.at(gx, (bi, ci, src), g)
        return (gx,)

    return make_node(np.ascontiguousarray(out), (x,), grad_fn)


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], int(np.prod(x.shape[1:])))


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of ``(a - b) ** 2``."""
    if a.shape != b.shape:
        raise ShapeError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    val = np.asarray(np.mean(diff * diff), dtype=a.dtype)

    def grad_fn(g):
        d = diff * (g * a.dtype.type(2.0 / n))
        return (d if a.requires_grad else None), (-d if b.requires_grad else None)

    return make_node(val, (a, b), grad_fn)


def cosine_sim(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Row-wise cosine similarity of two ``[batch, f]`` tensors."""
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"cosine_sim: expects matching [batch, f], got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    dt = ad.dtype.type
    na = np.sqrt((ad * ad).sum(axis=1))
    nb = np.sqrt((bd * bd).sum(axis=1))
    ca = np.maximum(na, dt(eps))
    cb = np.maximum(nb, dt(eps))
    dot = (ad * bd).sum(axis=1)
    sim = dot / (ca * cb)

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = g[:, None] * bd / (ca * cb)[:, None]
            clipped = na > eps
            if clipped.any():
                # d/da of 1/|a| contributes only where the clamp is inactive
                ga = ga - np.where(clipped, g * sim / ca**2, 0)[:, None] * ad
        if b.requires_grad:
            gb = g[:, None] * ad / (ca * cb)[:, None]
            clipped = nb > eps
            if clipped.any():
                gb = gb - np.where(clipped, g * sim / cb**2, 0)[:, None] * bd
        return ga, gb

    return make_node(sim.astype(ad.dtype, copy=False), (a, b), grad_fn)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def weighted_cross_entropy(
    logits: Tensor,
    targets: Sequence[int] | np.ndarray,
    class_weights: Tensor | np.ndarray | None = None,
) -> Tensor:
    """Batch mean of ``-w[y] * log_softmax(logits)[y]``.

    The mean divides by the batch size, not by the summed weights.
    """
    if logits.ndim != 2:
        raise ShapeError(f"weighted_cross_entropy expects [batch, C] logits, got {logits.shape}")
    bsz, n_cls = logits.shape
    y = np.asarray(targets, dtype=np.int64)
    if y.shape != (bsz,):
        raise ShapeError(f"weighted_cross_entropy: {y.shape[0] if y.ndim else 0} targets for batch {bsz}")
    if y.size and (y.min() < 0 or y.max() >= n_cls):
        raise IndexError(f"target index out of range [0, {n_cls}): {y.tolist()}")
    if class_weights is None:
        w = np.ones(n_cls, dtype=logits.dtype)
    else:
        w = class_weights.data if isinstance(class_weights, Tensor) else np.asarray(class_weights)
        w = w.astype(logits.dtype, copy=False)
        if w.shape != (n_cls,):
            raise ShapeError(f"class_weights {w.shape} for {n_cls} classes")
    logp = log_softmax(logits.data)
    rows = np.arange(bsz)
    wy = w[y]
    val = np.asarray(-(wy * logp[rows, y]).sum() / bsz, dtype=logits.dtype)

    def grad_fn(g):
        p = np.exp(logp)
        p[rows, y] -= 1.0
        return ((g / bsz) * wy[:, None] * p,)

    return make_node(val, (logits,), grad_fn)
