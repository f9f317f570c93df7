"""Differentiable layer primitives on NCHW arrays.

Each operation returns ``(output, cache)``; the paired ``*_backward`` takes
the output gradient plus the cache and returns exact gradients for every
input. There is no autodiff graph: callers compose backward passes by hand in
reverse order. All functions are pure except ``batchnorm2d`` in train mode,
which updates the running statistics held in its ``BatchNormState``.

Convolution weights are (O, C, K, K); transposed-convolution weights are
(C, O, K, K). Both are implemented as matrix products against an im2col /
col2im window matrix, so double-precision gradient checks are exact to
rounding error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor


class ShapeError(ValueError):
    """Raised when an operand dimension violates an operation's contract."""


def _require_4d(x: np.ndarray, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected a 4D (N,C,H,W) input, got shape {x.shape}")


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

class Conv2dCache(NamedTuple):
    cols: np.ndarray
    x_shape: tuple[int, int, int, int]
    weight: np.ndarray
    stride: int
    pad: int
    grid: tuple[int, int]
    has_bias: bool


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    """Gather k-by-k windows on a stride grid into rows of (N*Ho*Wo, C*k*k)."""
    n, c = x.shape[:2]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(
    cols: np.ndarray,
    n: int,
    c: int,
    k: int,
    stride: int,
    grid_h: int,
    grid_w: int,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    """Scatter-add window rows back onto a (N, C, out_h, out_w) canvas."""
    if stride == k and out_h == grid_h * k and out_w == grid_w * k:
        # Non-overlapping exact tiling: a pure relayout, no accumulation.
        tiles = cols.reshape(n, grid_h, grid_w, c, k, k).transpose(0, 3, 1, 4, 2, 5)
        return np.ascontiguousarray(tiles).reshape(n, c, out_h, out_w)
    out = np.zeros((n, c, out_h, out_w), dtype=cols.dtype)
    g6 = cols.reshape(n, grid_h, grid_w, c, k, k)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * grid_h : stride, j : j + stride * grid_w : stride] += (
                g6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None,
    stride: int = 1,
    pad: int = 0,
) -> tuple[np.ndarray, Conv2dCache]:
    """Cross-correlation of x (N,C,H,W) with weight (O,C,K,K) plus bias (O,).

    Output is (N, O, (H+2p-K)//s + 1, (W+2p-K)//s + 1). ``bias=None`` skips
    the bias term (used by blocks whose batchnorm would cancel it anyway).
    """
    _require_4d(x, "conv2d")
    n, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {cw}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} pad={pad}")
    if kh > h + 2 * pad or kh > w + 2 * pad:
        raise ShapeError(
            f"conv2d: kernel {kh} exceeds padded input {h + 2 * pad}x{w + 2 * pad}"
        )
    cols, ho, wo = _im2col(x, kh, stride, pad)
    y = cols @ weight.reshape(o, -1).T
    if bias is not None:
        y += bias
    y = np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))
    return y, Conv2dCache(cols, x.shape, weight, stride, pad, (ho, wo), bias is not None)


def conv2d_backward(
    grad_out: np.ndarray, cache: Conv2dCache
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Gradients (d_input, d_weight, d_bias) for conv2d."""
    cols, (n, c, h, w), weight, stride, pad, (ho, wo), has_bias = cache
    o, _, k, _ = weight.shape
    g2 = grad_out.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    gbias = g2.sum(axis=0) if has_bias else None
    gweight = (g2.T @ cols).reshape(weight.shape)
    gcols = g2 @ weight.reshape(o, -1)
    gx = _col2im(gcols, n, c, k, stride, ho, wo, h + 2 * pad, w + 2 * pad)
    if pad:
        gx = np.ascontiguousarray(gx[:, :, pad : pad + h, pad : pad + w])
    return gx, gweight, gbias


# ---------------------------------------------------------------------------
# conv_transpose2d
# ---------------------------------------------------------------------------

class ConvT2dCache(NamedTuple):
    x2: np.ndarray
    x_shape: tuple[int, int, int, int]
    weight: np.ndarray
    stride: int
    pad: int
    has_bias: bool


def conv_transpose2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None,
    stride: int = 1,
    pad: int = 0,
) -> tuple[np.ndarray, ConvT2dCache]:
    """Transposed convolution (adjoint of conv2d) with weight (C,O,K,K).

    Output is (N, O, (H-1)*s - 2p + K, (W-1)*s - 2p + K): every input pixel
    scatters a K-by-K stamp of ``weight`` scaled by its value. ``bias=None``
    skips the bias term.
    """
    _require_4d(x, "conv_transpose2d")
    n, c, h, w = x.shape
    cw, o, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"conv_transpose2d: kernel must be square, got {kh}x{kw}")
    if cw != c:
        raise ShapeError(
            f"conv_transpose2d: input has {c} channels but weight expects {cw}"
        )
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} != ({o},)")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv_transpose2d: invalid stride={stride} pad={pad}")
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (w - 1) * stride - 2 * pad + kh
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv_transpose2d: output {ho}x{wo} is empty for input {h}x{w}, "
            f"kernel {kh}, stride {stride}, pad {pad}"
        )
    x2 = x.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    cols = x2 @ weight.reshape(c, o * kh * kh)
    full = _col2im(cols, n, o, kh, stride, h, w, (h - 1) * stride + kh, (w - 1) * stride + kh)
    y = full[:, :, pad : pad + ho, pad : pad + wo]
    if pad:
        y = np.ascontiguousarray(y)
    if bias is not None:
        y += bias[:, None, None]
    return y, ConvT2dCache(x2, x.shape, weight, stride, pad, bias is not None)


def conv_transpose2d_backward(
    grad_out: np.ndarray, cache: ConvT2dCache
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Gradients (d_input, d_weight, d_bias) for conv_transpose2d."""
    x2, (n, c, h, w), weight, stride, pad, has_bias = cache
    _, o, k, _ = weight.shape
    gbias = grad_out.sum(axis=(0, 2, 3)) if has_bias else None
    if pad:
        grad_out = np.pad(grad_out, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(grad_out, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    gcols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, o * k * k)
    gweight = (x2.T @ gcols).reshape(weight.shape)
    gx2 = gcols @ weight.reshape(c, o * k * k).T
    gx = np.ascontiguousarray(gx2.reshape(n, h, w, c).transpose(0, 3, 1, 2))
    return gx, gweight, gbias


# ---------------------------------------------------------------------------
# batchnorm2d
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Per-channel affine normalization state.

    ``gamma``/``beta`` are learnable; the running statistics are buffers
    updated in train mode and consumed in infer mode.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float64, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


class BnCache(NamedTuple):
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    train: bool


def batchnorm2d(
    x: np.ndarray, state: BatchNormState, train: bool
) -> tuple[np.ndarray, BnCache]:
    """Per-channel normalization over (N, H, W), then affine gamma/beta.

    Train mode normalizes with the batch statistics and updates
    ``running <- (1 - momentum) * running + momentum * batch``; infer mode
    normalizes with the running statistics.
    """
    _require_4d(x, "batchnorm2d")
    n, c, h, w = x.shape
    if state.gamma.size != c:
        raise ShapeError(
            f"batchnorm2d: input has {c} channels but state holds {state.gamma.size}"
        )
    if train:
        if n * h * w < 2:
            raise ShapeError(
                f"batchnorm2d: train mode needs n*h*w >= 2 per channel, got {n * h * w}"
            )
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    gamma = state.gamma.data
    y = gamma[None, :, None, None] * xhat + state.beta.data[None, :, None, None]
    return y, BnCache(xhat, inv_std, gamma, train)


def batchnorm2d_backward(
    grad_out: np.ndarray, cache: BnCache
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (d_input, d_gamma, d_beta) for batchnorm2d."""
    xhat, inv_std, gamma, train = cache
    gbeta = grad_out.sum(axis=(0, 2, 3))
    ggamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    gxhat = grad_out * gamma[None, :, None, None]
    if train:
        # Batch statistics depend on the input, so the mean/var paths
        # contribute: dx = (1/m) * inv_std * (m*gxhat - sum(gxhat) - xhat*sum(gxhat*xhat)).
        gx = inv_std[None, :, None, None] * (
            gxhat
            - gxhat.mean(axis=(0, 2, 3), keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        )
    else:
        gx = gxhat * inv_std[None, :, None, None]
    return gx, ggamma, gbeta


# ---------------------------------------------------------------------------
# relu
# ---------------------------------------------------------------------------

class ReluCache(NamedTuple):
    mask: np.ndarray


def relu(x: np.ndarray) -> tuple[np.ndarray, ReluCache]:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    mask = x > 0
    return np.where(mask, x, 0.0), ReluCache(mask)


def relu_backward(grad_out: np.ndarray, cache: ReluCache) -> np.ndarray:
    return grad_out * cache.mask


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

class LinearCache(NamedTuple):
    x: np.ndarray
    weight: np.ndarray


def linear(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, LinearCache]:
    """y = x @ weight.T + bias for x (n, d), weight (m, d), bias (m,)."""
    if x.ndim != 2:
        raise ShapeError(f"linear: expected 2D input, got shape {x.shape}")
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError(
            f"linear: input features {x.shape[1]} do not match weight {weight.shape}"
        )
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    y = x @ weight.T + bias
    return y, LinearCache(x, weight)


def linear_backward(
    grad_out: np.ndarray, cache: LinearCache
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (d_input, d_weight, d_bias) for linear."""
    x, weight = cache
    gx = grad_out @ weight
    gweight = grad_out.T @ x
    gbias = grad_out.sum(axis=0)
    return gx, gweight, gbias


# ---------------------------------------------------------------------------
# bilinear_resize
# ---------------------------------------------------------------------------

class ResizeCache(NamedTuple):
    x_shape: tuple[int, int, int, int]
    iy0: np.ndarray
    iy1: np.ndarray
    fy: np.ndarray
    ix0: np.ndarray
    ix1: np.ndarray
    fx: np.ndarray


def _resize_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-center source indices and blend fractions for one axis."""
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(
    x: np.ndarray, out_h: int, out_w: int
) -> tuple[np.ndarray, ResizeCache]:
    """Bilinear resampling with half-pixel centers.

    Source coordinates are (dst + 0.5) * in/out - 0.5, clamped to
    [0, in - 1]; each output pixel blends its four neighbors. Exact identity
    when the sizes already match.
    """
    _require_4d(x, "bilinear_resize")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: invalid target size {out_h}x{out_w}")
    n, c, h, w = x.shape
    iy0, iy1, fy = _resize_axis(h, out_h)
    ix0, ix1, fx = _resize_axis(w, out_w)
    rows = x[:, :, iy0, :] * (1.0 - fy)[None, None, :, None] + x[:, :, iy1, :] * fy[None, None, :, None]
    y = rows[:, :, :, ix0] * (1.0 - fx) + rows[:, :, :, ix1] * fx
    return y, ResizeCache(x.shape, iy0, iy1, fy, ix0, ix1, fx)


def bilinear_resize_backward(grad_out: np.ndarray, cache: ResizeCache) -> np.ndarray:
    """Scatter the four blend weights of every output pixel back to the input."""
    x_shape, iy0, iy1, fy, ix0, ix1, fx = cache
    n, c, h, w = x_shape
    out_h = iy0.shape[0]
    g_rows = np.zeros((n, c, out_h, w), dtype=grad_out.dtype)
    np.add.at(g_rows, (slice(None), slice(None), slice(None), ix0), grad_out * (1.0 - fx))
    np.add.at(g_rows, (slice(None), slice(None), slice(None), ix1), grad_out * fx)
    gx = np.zeros(x_shape, dtype=grad_out.dtype)
    np.add.at(gx, (slice(None), slice(None), iy0), g_rows * (1.0 - fy)[None, None, :, None])
    np.add.at(gx, (slice(None), slice(None), iy1), g_rows * fy[None, None, :, None])
    return gx
