"""Differentiable operators over :class:`~adkd.core.tensor.Tensor`.

Spatial operators accept either a single ``C x H x W`` map or an
``N x C x H x W`` batch and return the matching rank.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = tuple(sorted(a % ndim for a in axes))
    if not out or any(a >= ndim for a in out) or len(set(out)) != len(out):
        raise DimensionError(f"invalid axes {axes} for rank {ndim}")
    return out


# --- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record("mul", (a, b), a.data * b.data,
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return record("div", (a, b), out,
                  lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return record("neg", (a,), -a.data, lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return record("pow", (a,), out, lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return record("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def vjp(g):
        # zero adjoint at sqrt(0) rather than 0/0
        return (np.divide(g * 0.5, out, out=np.zeros_like(out), where=out > 0),)

    return record("sqrt", (a,), out, vjp)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """``max(a, floor)`` elementwise; gradient passes only where ``a > floor``."""
    keep = a.data > floor
    out = np.where(keep, a.data, a.data.dtype.type(floor))
    return record("clamp_min", (a,), out, lambda g: (g * keep,))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return record("relu", (a,), a.data * keep, lambda g: (g * keep,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


# --- reductions and shape ------------------------------------------------


def sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    ax = _axes(axes, a.ndim)
    out = a.data.sum(axis=ax, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record("sum", (a,), np.asarray(out), vjp)


def mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    ax = _axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in ax]))
    out = a.data.mean(axis=ax, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return record("mean", (a,), np.asarray(out), vjp)


def amax(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    ax = _axes(axes, a.ndim)
    m = a.data.max(axis=ax, keepdims=True)
    out = m if keepdims else np.squeeze(m, axis=ax)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        hit = a.data == m
        # ties share the adjoint evenly
        count = hit.sum(axis=ax, keepdims=True)
        return (hit * (g / count),)

    return record("amax", (a,), np.asarray(out), vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return record("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record("concat", tensors, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def linear(x: Tensor, weight: Tensor) -> Tensor:
    """``x @ weight.T`` for ``x`` of shape N x in and ``weight`` out x in."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight in-features {weight.shape[1]}")
    return record("linear", (x, weight), x.data @ weight.data.T,
                  lambda g: (g @ weight.data, g.T @ x.data))


# --- softmax -------------------------------------------------------------


def softmax(a: Tensor, axes) -> Tensor:
    ax = _axes(axes, a.ndim)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=ax, keepdims=True)
    return record("softmax", (a,), out,
                  lambda g: (out * (g - (g * out).sum(axis=ax, keepdims=True)),))


def log_softmax(a: Tensor, axes) -> Tensor:
    ax = _axes(axes, a.ndim)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=ax, keepdims=True))
    out = z - lse
    return record("log_softmax", (a,), out,
                  lambda g: (g - np.exp(out) * g.sum(axis=ax, keepdims=True),))


# --- spatial -------------------------------------------------------------


def _to4(a: Tensor) -> tuple[Tensor, bool]:
    if a.ndim == 4:
        return a, False
    if a.ndim == 3:
        return reshape(a, (1,) + a.shape), True
    raise DimensionError(f"expected C x H x W or N x C x H x W, got shape {a.shape}")


def _from4(a: Tensor, squeeze: bool) -> Tensor:
    return reshape(a, a.shape[1:]) if squeeze else a


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    x4, squeeze = _to4(x)
    n, c, h, w = x4.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {ci}")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}+{padding}")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    xp = np.pad(x4.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x4.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)

    def vjp(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += contrib
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x4, weight) if bias is None else (x4, weight, bias)
    return _from4(record("conv2d", inputs, out, vjp), squeeze)


def _pool(x: Tensor, window: int, stride: int, padding: int, kind: str) -> Tensor:
    x4, squeeze = _to4(x)
    n, c, h, w = x4.shape
    if window > h + 2 * padding or window > w + 2 * padding:
        raise DimensionError(f"{kind}pool: window {window} larger than input {h}x{w}")
    ho, wo = conv_output_size(h, window, stride, padding), conv_output_size(w, window, stride, padding)
    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(x4.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=fill) \
        if padding else x4.data
    win = sliding_window_view(xp, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, window * window)
    if kind == "max":
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    else:
        out = flat.mean(axis=-1)

    def vjp(g):
        gxp = np.zeros_like(xp)
        for k in range(window * window):
            i, j = divmod(k, window)
            part = g * (arg == k) if kind == "max" else g / (window * window)
            gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += part
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return (np.ascontiguousarray(gx),)

    return _from4(record(f"{kind}pool", (x4,), np.ascontiguousarray(out), vjp), squeeze)


def maxpool_spatial(x: Tensor, window: int, stride: int, padding: int = 0) -> Tensor:
    return _pool(x, window, stride, padding, "max")


def avgpool_spatial(x: Tensor, window: int, stride: int, padding: int = 0) -> Tensor:
    return _pool(x, window, stride, padding, "avg")


def _spatial_axes(x: Tensor) -> tuple[int, int]:
    return (x.ndim - 2, x.ndim - 1)


def global_maxpool(x: Tensor) -> Tensor:
    return amax(x, _spatial_axes(x), keepdims=True)


def global_avgpool(x: Tensor) -> Tensor:
    return mean(x, _spatial_axes(x), keepdims=True)


def channel_maxpool(x: Tensor) -> Tensor:
    return amax(x, x.ndim - 3, keepdims=True)


def channel_avgpool(x: Tensor) -> Tensor:
    return mean(x, x.ndim - 3, keepdims=True)


def bilinear_weights(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """Interpolation matrix ``dst x src`` (half-pixel centres, edge clamped)."""
    a = np.zeros((dst, src), dtype=dtype)
    scale = src / dst
    for d in range(dst):
        s = (d + 0.5) * scale - 0.5
        s = min(max(s, 0.0), src - 1.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, src - 1)
        f = s - i0
        a[d, i0] += 1.0 - f
        a[d, i1] += f
    return a


def bilinear_resize(x: Tensor, height: int, width: int) -> Tensor:
    """Bilinear resampling of the last two axes to ``height x width``."""
    if x.ndim < 2:
        raise DimensionError("bilinear_resize needs at least a 2-D map")
    h, w = x.shape[-2:]
    ah = bilinear_weights(h, height, x.dtype)
    aw_t = np.ascontiguousarray(bilinear_weights(w, width, x.dtype).T)
    out = np.matmul(np.matmul(ah, x.data), aw_t)
    return record("bilinear", (x,), out, lambda g: (np.matmul(ah.T, np.matmul(g, aw_t.T)),))


def bilinear_upsample(x: Tensor, height: int, width: int) -> Tensor:
    h, w = x.shape[-2:]
    if height < h or width < w:
        raise DimensionError(f"upsample target {height}x{width} smaller than source {h}x{w}")
    return bilinear_resize(x, height, width)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Standard batch normalisation over N, H, W.

    In training mode the running buffers are updated in place.
    """
    x4, squeeze = _to4(x)
    c = x4.shape[1]
    shape = (1, c, 1, 1)
    if training:
        m = x4.data.mean(axis=(0, 2, 3))
        v = x4.data.var(axis=(0, 2, 3))
        count = x4.data.size // c
        running_mean *= 1 - momentum
        running_mean += momentum * m
        running_var *= 1 - momentum
        running_var += momentum * v * count / max(count - 1, 1)
    else:
        m, v = running_mean, running_var
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x4.data - m.reshape(shape)) * inv.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def vjp(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data.reshape(shape)
        if training:
            count = x4.data.size // c
            gx = (inv.reshape(shape) / count) * (
                count * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = dxhat * inv.reshape(shape)
        return gx, gg, gb

    return _from4(record("batchnorm", (x4, gamma, beta), out.astype(x4.dtype, copy=False), vjp), squeeze)
