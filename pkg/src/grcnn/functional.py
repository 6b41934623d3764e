"""Differentiable layer primitives operating on NCHW tensors.

Convolution goes through im2col followed by a (grouped) batched matrix
multiply; the nested-loop definition lives in :mod:`grcnn.oracles` and is
only used to check this path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, DataError, DegenerateBatchError, DimensionError
from .tensor import Tensor, make_result


def _pair(v) -> Tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass
class ConvParams:
    """Filter bank of one (possibly grouped) 2-D convolution.

    ``weight`` has shape ``(C_out, C_in // groups, kH, kW)``.
    """

    weight: Tensor
    bias: Optional[Tensor] = None
    groups: int = 1
    stride: Tuple[int, int] = (1, 1)
    padding: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.padding = _pair(self.padding)
        if self.groups < 1:
            raise ConfigError(f"groups must be positive, got {self.groups}")
        c_out, _, kh, kw = self.weight.shape
        if c_out % self.groups:
            raise ConfigError(f"C_out={c_out} is not divisible by groups={self.groups}")
        if kh < 1 or kw < 1:
            raise ConfigError(f"kernel size must be >= 1, got {(kh, kw)}")
        if min(self.stride) < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if min(self.padding) < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if self.bias is not None and self.bias.shape != (c_out,):
            raise DimensionError(f"bias shape {self.bias.shape} != ({c_out},)")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"
    num_batches_tracked: int = field(default=0)

    @property
    def num_features(self) -> int:
        return self.gamma.shape[0]


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _check_conv_input(x: Tensor, p: ConvParams) -> None:
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input, got shape {x.shape}")
    c_in = x.shape[1]
    if c_in % p.groups:
        raise ConfigError(f"C_in={c_in} is not divisible by groups={p.groups}")
    if c_in != p.in_channels:
        raise DimensionError(
            f"channel axis (1): input has {c_in} channels, filters expect {p.in_channels}")
    kh, kw = p.kernel_size
    for axis, size, k, pad in ((2, x.shape[2], kh, p.padding[0]), (3, x.shape[3], kw, p.padding[1])):
        if size + 2 * pad < k:
            raise DimensionError(
                f"spatial axis ({axis}): size {size} + 2*padding {pad} < kernel {k}")


def im2col(x: np.ndarray, kh: int, kw: int, stride, padding) -> np.ndarray:
    """Unfold ``x`` into columns of shape ``(C, kh, kw, N, Ho, Wo)``."""
    sh, sw = stride
    ph, pw = padding
    n, c, h, w = x.shape
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
    return cols


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride, padding) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to an NCHW array."""
    sh, sw = stride
    ph, pw = padding
    n, c, h, w = x_shape
    ho, wo = cols.shape[4], cols.shape[5]
    out = np.zeros((c, n, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += cols[:, i, j]
    out = out.transpose(1, 0, 2, 3)
    if ph or pw:
        out = out[:, :, ph:ph + h, pw:pw + w]
    return np.ascontiguousarray(out)


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """Grouped 2-D cross-correlation, NCHW in and out."""
    _check_conv_input(x, params)
    w = params.weight
    g = params.groups
    c_out, cg, kh, kw = w.shape
    n, c_in, h, wd = x.shape
    sh, sw = params.stride
    ph, pw = params.padding
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(wd, kw, sw, pw)
    og = c_out // g

    pointwise = kh == 1 and kw == 1 and sh == 1 and sw == 1 and ph == 0 and pw == 0
    if pointwise:
        cols = x.data.transpose(1, 0, 2, 3).reshape(g, cg, n * ho * wo)
    else:
        cols = im2col(x.data, kh, kw, params.stride, params.padding).reshape(g, cg * kh * kw, n * ho * wo)
    wmat = w.data.reshape(g, og, cg * kh * kw)
    out = np.matmul(wmat, cols).reshape(c_out, n, ho, wo)
    if params.bias is not None:
        out += params.bias.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    bias = params.bias
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(grad):
        gmat = grad.transpose(1, 0, 2, 3).reshape(g, og, n * ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.matmul(gmat, cols.transpose(0, 2, 1)).reshape(w.shape)
        if x.requires_grad:
            dcols = np.matmul(wmat.transpose(0, 2, 1), gmat)
            if pointwise:
                gx = np.ascontiguousarray(dcols.reshape(c_in, n, h, wd).transpose(1, 0, 2, 3))
            else:
                gx = col2im(dcols.reshape(c_in, kh, kw, n, ho, wo), x.shape, kh, kw,
                            params.stride, params.padding)
        if bias is not None and bias.requires_grad:
            gb = grad.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, backward)


def batchnorm2d(x: Tensor, state: BatchNormState) -> Tensor:
    """Batch normalization over (N, H, W) for each channel.

    In train mode the batch statistics normalize the input and the running
    estimates are updated with ``momentum`` (the variance estimate uses the
    unbiased batch variance).  In eval mode the running estimates are used.
    """
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects NCHW input, got shape {x.shape}")
    c = x.shape[1]
    if c != state.num_features:
        raise DimensionError(f"channel axis (1): input has {c} channels, state has {state.num_features}")
    gamma, beta = state.gamma, state.beta
    xd = x.data
    dtype = xd.dtype

    if state.mode == "train":
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]
        if m < 2:
            raise DegenerateBatchError(
                f"train-mode batch norm needs N*H*W >= 2 per channel, got {m}")
        mean = xd.mean(axis=(0, 2, 3))
        centered = xd - mean[None, :, None, None]
        var = np.einsum("nchw,nchw->c", centered, centered) / m
        inv_std = (1.0 / np.sqrt(var + state.eps)).astype(dtype)
        xhat = centered
        xhat *= inv_std[None, :, None, None]
        mom = state.momentum
        state.running_mean *= 1 - mom
        state.running_mean += mom * mean
        state.running_var *= 1 - mom
        state.running_var += mom * var * (m / (m - 1))
        state.num_batches_tracked += 1
        scale = gamma.data * 1
        out = xhat * scale[None, :, None, None] + beta.data[None, :, None, None]

        def backward(g):
            gb = g.sum(axis=(0, 2, 3))
            gg = np.einsum("nchw,nchw->c", g, xhat)
            gx = None
            if x.requires_grad:
                k = (gamma.data * inv_std / m)[None, :, None, None]
                gx = g * m
                gx -= gb[None, :, None, None]
                gx -= xhat * gg[None, :, None, None]
                gx *= k
            return gx, gg, gb
    elif state.mode == "eval":
        inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).astype(dtype)
        scale = (gamma.data * inv_std).astype(dtype)
        shift = (beta.data - state.running_mean * scale).astype(dtype)
        out = xd * scale[None, :, None, None] + shift[None, :, None, None]

        def backward(g):
            xhat = (xd - state.running_mean.astype(dtype)[None, :, None, None]) * inv_std[None, :, None, None]
            gx = g * scale[None, :, None, None] if x.requires_grad else None
            return gx, np.einsum("nchw,nchw->c", g, xhat), g.sum(axis=(0, 2, 3))
    else:
        raise ConfigError(f"unknown batch-norm mode {state.mode!r}")

    return make_result(out.astype(dtype, copy=False), (x, gamma, beta), backward)


def maxpool2d(x: Tensor, kernel: int, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    """Max pooling with square windows; ties route gradient to the first max."""
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    if h + 2 * padding < kernel or w + 2 * padding < kernel:
        raise DimensionError(f"spatial axes (2, 3): {h}x{w} smaller than pooling window {kernel}")
    cols = im2col(x.data, kernel, kernel, (stride, stride), (padding, padding))
    if padding:
        # padded positions must never win
        mask = im2col(np.ones((1, 1, h, w), dtype=bool), kernel, kernel, (stride, stride), (padding, padding))
        cols = np.where(mask, cols, -np.inf)
    ho, wo = cols.shape[4], cols.shape[5]
    flat = cols.reshape(c, kernel * kernel, n, ho, wo)
    idx = flat.argmax(axis=1)
    out = np.take_along_axis(flat, idx[:, None], axis=1)[:, 0]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3)).astype(x.dtype, copy=False)

    def backward(g):
        dflat = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(dflat, idx[:, None], g.transpose(1, 0, 2, 3)[:, None], axis=1)
        return (col2im(dflat.reshape(c, kernel, kernel, n, ho, wo), x.shape, kernel, kernel,
                       (stride, stride), (padding, padding)),)

    return make_result(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (N, C, H, W) -> (N, C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),)

    return make_result(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ W.T + b`` for x of shape (N, D) and W of shape (K, D)."""
    if x.ndim != 2:
        raise DimensionError(f"linear expects (N, D) input, got shape {x.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"feature axis (1): input has {x.shape[1]}, weight expects {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make_result(out, parents, backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (N, K), got shape {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return make_result(loss, (logits,), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: kept units are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = np.random.default_rng() if rng is None else rng
    keep = (rng.random(x.shape) >= rate)
    mask = keep.astype(x.dtype) * np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))
