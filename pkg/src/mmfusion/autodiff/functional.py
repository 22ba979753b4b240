"""Fused differentiable ops for neural networks.

These are written as single tape nodes with hand-derived backward rules
rather than compositions of the primitives in :mod:`tensor`, which keeps
activation memory and Python overhead down for convolutional backbones.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mmfusion.autodiff.tensor import Tensor, as_tensor, log_branch, make_node
from mmfusion.errors import ConfigError, ContractError, DimensionError


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    y = x @ weight
    return y + bias if bias is not None else y


# ------------------------------------------------------------------- softmax
def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node(s, (x,), backward, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    s = np.exp(y)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return make_node(y, (x,), backward, "log_softmax")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-probability of the true class over the batch."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (N, K) logits, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch of {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k or not np.all(labels == labels.astype(int))):
        raise ContractError(f"labels must be integers in [0, {k}), got {np.unique(labels).tolist()}")
    labels = labels.astype(int)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.asarray((lse - z[rows, labels]).mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return make_node(loss, (logits,), backward, "cross_entropy")


# ------------------------------------------------------------------- dropout
def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval is the identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------- convolution
def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(gcols: np.ndarray, xp_shape, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp_shape[:2]
    gcols = gcols.reshape(n, c, kh, kw, ho, wo)
    gxp = np.zeros(xp_shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[:, :, i, j]
    return gxp


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation over an (N, C, H, W) batch.

    ``weight`` has shape (F, C // groups, kh, kw). Grouped convolution covers
    the depthwise case used by inverted-bottleneck blocks.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, cg, kh, kw = weight.shape
    if c % groups or f % groups or cg != c // groups:
        raise DimensionError(
            f"conv2d: input {x.shape} and weight {weight.shape} disagree for groups={groups}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    if bias is not None and bias.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} should be ({f},)")
    s = stride
    ho, wo = _out_size(h, kh, s, padding), _out_size(w, kw, s, padding)
    xd, wd = x.data, weight.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    depthwise = groups == c and cg == 1 and f == c and groups > 1
    cols = None

    if groups == 1:
        # (N, C*kh*kw, Ho*Wo) columns, kept for the weight gradient
        cols = _im2col(xp, kh, kw, s, ho, wo)
        out = np.matmul(wd.reshape(f, -1), cols).reshape(n, f, ho, wo)
    elif depthwise:
        out = np.zeros((n, c, ho, wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                out += xp[:, :, i:i + s * ho:s, j:j + s * wo:s] * wd[None, :, 0, i, j, None, None]
    else:
        cols = _im2col(xp, kh, kw, s, ho, wo).reshape(n, groups, cg * kh * kw, ho * wo)
        out = np.matmul(wd.reshape(groups, f // groups, -1)[None], cols).reshape(n, f, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if groups == 1:
            g3 = g.reshape(n, f, ho * wo)
            if weight.requires_grad:
                gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
            if x.requires_grad:
                gcols = np.matmul(wd.reshape(f, -1).T, g3)
                gxp = _col2im(gcols, xp.shape, kh, kw, s, ho, wo)
        elif depthwise:
            if weight.requires_grad:
                gw = np.empty_like(wd)
                for i in range(kh):
                    for j in range(kw):
                        patch = xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
                        gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, patch)
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += g * wd[None, :, 0, i, j, None, None]
        else:
            g4 = g.reshape(n, groups, f // groups, ho * wo)
            wg = wd.reshape(groups, f // groups, -1)
            if weight.requires_grad:
                gw = np.matmul(g4, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(wd.shape)
            if x.requires_grad:
                gcols = np.matmul(wg.transpose(0, 2, 1)[None], g4)
                gxp = _col2im(gcols.reshape(n, c * kh * kw, ho * wo), xp.shape, kh, kw, s, ho, wo)
        if x.requires_grad:
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward, "conv2d")


# -------------------------------------------------------------------- pooling
def _pool_windows(xd: np.ndarray, k: int, stride: int):
    n, c, h, w = xd.shape
    if k > h or k > w:
        raise DimensionError(f"pool kernel {k} larger than spatial dims {h}x{w}")
    ho, wo = _out_size(h, k, stride, 0), _out_size(w, k, stride, 0)
    win = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return win, ho, wo


def max_pool2d(x, k: int = 2, stride: int | None = None) -> Tensor:
    """Max pooling; on ties the gradient goes to the first maximal element."""
    x = as_tensor(x)
    stride = stride or k
    win, ho, wo = _pool_windows(x.data, k, stride)
    flat = win.reshape(*win.shape[:4], k * k)
    arg = flat.argmax(axis=-1)
    log_branch(arg)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                hit = arg == i * k + j
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * hit
        return (gx,)

    return make_node(out, (x,), backward, "max_pool2d")


def avg_pool2d(x, k: int = 2, stride: int | None = None) -> Tensor:
    x = as_tensor(x)
    stride = stride or k
    win, ho, wo = _pool_windows(x.data, k, stride)
    out = win.mean(axis=(-2, -1))
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
        return (gx,)

    return make_node(out, (x,), backward, "avg_pool2d")


def pool2d(x, kind: str, k: int, stride: int | None = None) -> Tensor:
    if kind == "max":
        return max_pool2d(x, k, stride)
    if kind == "avg":
        return avg_pool2d(x, k, stride)
    raise ConfigError(f"unknown pool kind {kind!r}")


def global_avg_pool2d(x) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    x = as_tensor(x)
    shape = x.shape
    area = shape[2] * shape[3]
    return make_node(x.data.mean(axis=(2, 3)), (x,),
                     lambda g: (np.broadcast_to(g[:, :, None, None] / area, shape).copy(),),
                     "global_avg_pool2d")


def scale_channels(x, s) -> Tensor:
    """Multiply (N, C, H, W) by per-sample channel gates (N, C)."""
    x, s = as_tensor(x), as_tensor(s)
    if s.shape != x.shape[:2]:
        raise DimensionError(f"scale_channels: gates {s.shape} do not match {x.shape[:2]}")
    xd, sd = x.data, s.data

    def backward(g):
        return (g * sd[:, :, None, None] if x.requires_grad else None,
                (g * xd).sum(axis=(2, 3)) if s.requires_grad else None)

    return make_node(xd * sd[:, :, None, None], (x, s), backward, "scale_channels")


# -------------------------------------------------------------- normalization
def _norm_backward(g, xhat, rstd, gamma_b, axes, count):
    dxhat = g * gamma_b
    return rstd * (dxhat - dxhat.sum(axis=axes, keepdims=True) / count
                   - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True) / count)


def batchnorm2d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, as in common frameworks).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],):
        raise DimensionError(f"batchnorm2d: input {x.shape} vs affine {gamma.shape}")
    xd = x.data
    axes = (0, 2, 3)
    count = xd.shape[0] * xd.shape[2] * xd.shape[3]
    if training:
        mu = xd.mean(axis=axes, keepdims=True)
        var = xd.var(axis=axes, keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        unbiased = var.reshape(-1) * (count / max(count - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean.reshape(1, -1, 1, 1)
        var = running_var.reshape(1, -1, 1, 1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * rstd
    gb = gamma.data.reshape(1, -1, 1, 1)
    out = xhat * gb + beta.data.reshape(1, -1, 1, 1)

    def backward(g):
        if training:
            gx = _norm_backward(g, xhat, rstd, gb, axes, count) if x.requires_grad else None
        else:
            gx = g * gb * rstd
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_node(out, (x, gamma, beta), backward, "batchnorm2d")


def layernorm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a learned affine map."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layernorm: input {x.shape} vs affine {gamma.shape}/{beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * rstd
    out = xhat * gamma.data + beta.data
    lead = tuple(range(xd.ndim - 1))

    def backward(g):
        gx = _norm_backward(g, xhat, rstd, gamma.data, -1, d) if x.requires_grad else None
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_node(out, (x, gamma, beta), backward, "layernorm")
