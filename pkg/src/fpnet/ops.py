"""Forward/backward kernels for the layer primitives used by ResNets and FP-blocks.

All activations are laid out as (N, C, H, W). Convolutions use im2col plus a
single matrix multiply; naive nested-loop versions live in
:mod:`fpnet.reference` and serve as test oracles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Parameter, ShapeError, Tensor, as_tensor, make_result


@dataclass(frozen=True)
class Conv2dSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    bias: bool = False

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid conv spec {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"invalid conv spec {self}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        return (self.out_channels, self.in_channels, k, k)


@dataclass(frozen=True)
class DwsConvSpec:
    """One depthwise filter bank: a single k x k filter per channel, stride 1."""

    channels: int
    kernel_size: int = 3
    padding: int | None = None

    def __post_init__(self):
        if self.channels < 1 or self.kernel_size < 1:
            raise ValueError(f"invalid depthwise spec {self}")
        if self.padding is None and self.kernel_size % 2 == 0:
            raise ValueError(f"even kernel size {self.kernel_size} needs an explicit padding")

    @property
    def pad(self) -> int:
        return (self.kernel_size - 1) // 2 if self.padding is None else self.padding

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        return (self.channels, 1, k, k)


@dataclass(frozen=True)
class BatchNormSpec:
    channels: int
    affine: bool = True
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.channels < 1 or self.eps <= 0 or not 0 < self.momentum < 1:
            raise ValueError(f"invalid batch-norm spec {self}")


def _check_4d(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op} expects (N, C, H, W) input, got shape {x.shape}")


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    _check_4d(x, "conv2d")
    n, c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv2d: non-square kernel {weight.shape}")
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {(h, w)}")
    s = stride
    ho = (h + 2 * padding - k) // s + 1
    wo = (w + 2 * padding - k) // s + 1
    wmat = weight.data.reshape(o, c * k * k)

    if k == 1 and s == 1 and padding == 0:
        # pointwise fast path, no column buffer
        x3 = x.data.reshape(n, c, h * w)
        out = np.matmul(wmat, x3).reshape(n, o, h, w)

        def bw(g):
            g3 = g.reshape(n, o, h * w)
            gx = np.matmul(wmat.T, g3).reshape(x.shape) if x.requires_grad else None
            gw = np.einsum("nop,ncp->oc", g3, x3).reshape(weight.shape) if weight.requires_grad else None
            gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
            return gx, gw, gb
    else:
        xp = _pad_hw(x.data, padding)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        # channel-major columns (C*k*k, N*Ho*Wo): the copy keeps the fast W axis innermost
        cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)
        out = (wmat @ cols).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)

        def bw(g):
            gt = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
            gw = (gt @ cols.T).reshape(weight.shape) if weight.requires_grad else None
            gx = None
            if x.requires_grad:
                gcols = (wmat.T @ gt).reshape(c, k, k, n, ho, wo)
                gxp = np.zeros((c, n) + xp.shape[2:], dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[:, i, j]
                gx = gxp[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3)
            gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
            return gx, gw, gb

    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(np.ascontiguousarray(out), parents, bw)


def dws_conv(x: Tensor, weight: Tensor, padding: int | None = None) -> Tensor:
    """Depthwise convolution: output channel c sees only input channel c."""
    _check_4d(x, "dws_conv")
    n, c, h, w = x.shape
    cw, one, k, _ = weight.shape
    if cw != c or one != 1:
        raise ShapeError(f"dws_conv: weight {weight.shape} does not match {c} input channels")
    if padding is None:
        if k % 2 == 0:
            raise ValueError(f"dws_conv: even kernel size {k} needs an explicit padding")
        padding = (k - 1) // 2
    p = padding
    ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"dws_conv: kernel {k} larger than padded input {(h, w)}")
    xp = _pad_hw(x.data, p)
    wk = weight.data[:, 0]
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(x.dtype, weight.dtype))
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i:i + ho, j:j + wo] * wk[:, i, j].reshape(1, c, 1, 1)

    def bw(g):
        gw = np.empty_like(wk) if weight.requires_grad else None
        gxp = np.zeros(xp.shape, dtype=g.dtype) if x.requires_grad else None
        for i in range(k):
            for j in range(k):
                if gw is not None:
                    gw[:, i, j] = np.einsum("nchw,nchw->c", g, xp[:, :, i:i + ho, j:j + wo])
                if gxp is not None:
                    gxp[:, :, i:i + ho, j:j + wo] += g * wk[:, i, j].reshape(1, c, 1, 1)
        gx = gxp[:, :, p:p + h, p:p + w] if gxp is not None else None
        return gx, (gw.reshape(weight.shape) if gw is not None else None)

    return make_result(out, (x, weight), bw)


class BatchNormState:
    """Running mean/variance of one batch-norm layer (non-learnable)."""

    def __init__(self, channels: int, dtype=None, prefix: str = ""):
        dtype = dtype or np.float32
        self.running_mean = Parameter(np.zeros(channels, dtype), name=f"{prefix}running_mean", learnable=False)
        self.running_var = Parameter(np.ones(channels, dtype), name=f"{prefix}running_var", learnable=False)


def batch_norm(x: Tensor, state: BatchNormState, training: bool,
               weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Training mode uses batch statistics and updates ``state`` by an
    exponential moving average (unbiased variance); eval mode uses ``state``.
    """
    _check_4d(x, "batch_norm")
    n, c, h, w = x.shape
    if state.running_mean.shape != (c,):
        raise ShapeError(f"batch_norm: {c} channels but state has {state.running_mean.shape[0]}")
    if (weight is None) != (bias is None):
        raise ValueError("batch_norm: weight and bias must both be given or both omitted")
    xd = x.data
    if training:
        if n < 2:
            raise ValueError("batch_norm: training mode needs a batch of at least 2 samples")
        m = n * h * w
        mean = xd.mean(axis=(0, 2, 3))
        centered = xd - mean.reshape(1, c, 1, 1)
        var = (centered * centered).mean(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv.reshape(1, c, 1, 1)
        rm, rv = state.running_mean, state.running_var
        rm.data = ((1 - momentum) * rm.data + momentum * mean).astype(rm.dtype)
        rv.data = ((1 - momentum) * rv.data + momentum * var * (m / (m - 1))).astype(rv.dtype)
    else:
        inv = 1.0 / np.sqrt(state.running_var.data + eps)
        xhat = (xd - state.running_mean.data.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    xhat = xhat.astype(xd.dtype, copy=False)
    inv = inv.astype(xd.dtype, copy=False)

    if weight is not None:
        out = xhat * weight.data.reshape(1, c, 1, 1) + bias.data.reshape(1, c, 1, 1)
    else:
        out = xhat

    def bw(g):
        gxhat = g * weight.data.reshape(1, c, 1, 1) if weight is not None else g
        if training:
            s1 = gxhat.mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            s2 = (gxhat * xhat).mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            gx = (gxhat - s1 - xhat * s2) * inv.reshape(1, c, 1, 1)
        else:
            gx = gxhat * inv.reshape(1, c, 1, 1)
        if weight is None:
            return (gx,)
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    parents = (x,) if weight is None else (x, weight, bias)
    return make_result(out, parents, bw)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return make_result(out, (x,), lambda g: (g * (out > 0),))


def max_pool2d(x: Tensor, window: int = 2, stride: int | None = None) -> Tensor:
    """Max pooling; the gradient goes to the first row-major maximum of each window."""
    _check_4d(x, "max_pool2d")
    stride = window if stride is None else stride
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"max_pool2d: window {window} exceeds spatial extent {(h, w)}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        nn, cc, hh, ww = np.indices((n, c, ho, wo), sparse=True)
        rows = hh * stride + arg // window
        cols = ww * stride + arg % window
        gx = np.zeros(x.shape, dtype=g.dtype)
        if window <= stride:
            gx[nn, cc, rows, cols] = g
        else:
            np.add.at(gx, (nn, cc, rows, cols), g)
        return (gx,)

    return make_result(np.ascontiguousarray(out), (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_4d(x, "global_avg_pool")
    n, c, h, w = x.shape

    def bw(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).astype(g.dtype),)

    return make_result(x.data.mean(axis=(2, 3)), (x,), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape (out_features, in_features)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data

    def bw(g):
        grads = (g @ weight.data, g.T @ x.data)
        return grads if bias is None else grads + (g.sum(axis=0),)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must be integers in [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    z = expd.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = (np.log(z[:, 0]) - shifted[rows, labels]).mean()

    def bw(g):
        p = expd / z
        p[rows, labels] -= 1
        return (p * (g / n),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def subsample_pad(x: Tensor, out_channels: int, stride: int = 2) -> Tensor:
    """Parameter-free residual shortcut: strided subsample, zero-pad channels evenly."""
    _check_4d(x, "subsample_pad")
    n, c, h, w = x.shape
    extra = out_channels - c
    if extra < 0:
        raise ShapeError(f"subsample_pad: cannot shrink {c} channels to {out_channels}")
    front = extra // 2
    sub = x.data[:, :, ::stride, ::stride]
    out = np.zeros((n, out_channels) + sub.shape[2:], dtype=x.dtype)
    out[:, front:front + c] = sub

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, ::stride, ::stride] = g[:, front:front + c]
        return (gx,)

    return make_result(out, (x,), bw)


def accuracy(logits, labels) -> float:
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return float((data.argmax(axis=1) == np.asarray(labels)).mean())


__all__ = [
    "Conv2dSpec", "DwsConvSpec", "BatchNormSpec", "BatchNormState",
    "conv2d", "dws_conv", "batch_norm", "relu", "max_pool2d", "global_avg_pool",
    "linear", "softmax_cross_entropy", "subsample_pad", "accuracy", "as_tensor",
]
