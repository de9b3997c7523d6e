"""Primitive differentiable ops on :class:`Tensor`.

Every op computes a numpy forward result and, when a tape is active and an
input requires grad, appends a node whose backward closure maps the output
gradient to per-input gradients. Shapes are validated eagerly; shape errors
name the op and the offending shapes.

Conventions:
  - images and feature maps are NHWC;
  - conv kernels are (kh, kw, c_in, c_out), for transposed conv as well;
  - linear weights are (d_in, d_out) so forward is ``x @ w``;
  - sampling grids are normalized to [-1, 1] with align-corners semantics
    (grid value -1 is the center of the first pixel, +1 the last).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    active_tape,
    as_tensor,
    debug_nan_enabled,
)


def _result(op_name: str, data: np.ndarray, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    if debug_nan_enabled() and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op_name}: non-finite values in output")
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.nodes.append((out, inputs, bwd, op_name))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _result(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _result(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _result(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    inv = 1.0 / b.data
    out = a.data * inv

    def bwd(g):
        return (
            _unbroadcast(g * inv, a.data.shape),
            _unbroadcast(-g * out * inv, b.data.shape),
        )

    return _result("div", out, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _result("matmul", out, (a, b), bwd)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(
        "broadcast", np.broadcast_to(a.data, shape), (a,),
        lambda g: (_unbroadcast(g, a.data.shape),),
    )


def concat(tensors, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(ts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _result("concat", np.concatenate([t.data for t in ts], axis=axis), ts, bwd)


def slice_(a, index) -> Tensor:
    """Basic (non-fancy) slicing; gradient scatters back into zeros."""
    a = as_tensor(a)

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        return (ga,)

    return _result("slice", a.data[index], (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return _result("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in np.atleast_1d(axis)]
    )

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.data.shape),)

    return _result("mean", a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


# ---------------------------------------------------------------------------
# activations and pointwise nonlinearities


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh_(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    # subgradient at 0 is defined as 0 (strict inequality)
    return _result("relu", np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _result("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    keep = (a.data >= lo) & (a.data <= hi)
    return _result("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * keep,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _result("softmax", out, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution family (NHWC, kernels (kh, kw, c_in, c_out))


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (n, ho*, wo*, c, kh, kw)
    win = win[:, ::stride, ::stride]
    n_, ho, wo = win.shape[:3]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n_, ho, wo, kh * kw * c)
    return cols, ho, wo


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.data.shape[3] != w.data.shape[2]:
        raise ShapeError(f"conv2d: input {x.data.shape} incompatible with kernel {w.data.shape}")
    kh, kw, ci, co = w.data.shape
    n, h, wd, _ = x.data.shape
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ShapeError(f"conv2d: input {x.data.shape} smaller than kernel {w.data.shape}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = w.data.reshape(kh * kw * ci, co)
    out = cols.reshape(-1, kh * kw * ci) @ wmat
    out = out.reshape(n, ho, wo, co)
    inputs = (x, w) if b is None else (x, w, as_tensor(b))
    if b is not None:
        out = out + inputs[2].data

    def bwd(g):
        gflat = g.reshape(-1, co)
        cols2, _, _ = _im2col(x.data, kh, kw, stride, pad)
        gw = (cols2.reshape(-1, kh * kw * ci).T @ gflat).reshape(w.data.shape)
        dcols = (gflat @ wmat.T).reshape(n, ho, wo, kh, kw, ci)
        gx = np.zeros((n, h + 2 * pad, wd + 2 * pad, ci), dtype=g.dtype)
        for u in range(kh):
            for v in range(kw):
                gx[:, u:u + stride * ho:stride, v:v + stride * wo:stride] += dcols[:, :, :, u, v]
        gx = gx[:, pad:pad + h, pad:pad + wd] if pad else gx
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    return _result("conv2d", out, inputs, bwd)


def conv_transpose2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.data.shape[3] != w.data.shape[2]:
        raise ShapeError(
            f"conv_transpose2d: input {x.data.shape} incompatible with kernel {w.data.shape}"
        )
    kh, kw, ci, co = w.data.shape
    n, h, wd, _ = x.data.shape
    oh = (h - 1) * stride + kh - 2 * pad
    ow = (wd - 1) * stride + kw - 2 * pad
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv_transpose2d: empty output for input {x.data.shape}")

    def forward(xd):
        tmp = np.tensordot(xd, w.data, axes=([3], [2]))  # (n, h, wd, kh, kw, co)
        full = np.zeros((n, (h - 1) * stride + kh, (wd - 1) * stride + kw, co), dtype=tmp.dtype)
        for u in range(kh):
            for v in range(kw):
                full[:, u:u + stride * h:stride, v:v + stride * wd:stride] += tmp[:, :, :, u, v]
        return full[:, pad:pad + oh, pad:pad + ow]

    out = forward(x.data)
    inputs = (x, w) if b is None else (x, w, as_tensor(b))
    if b is not None:
        out = out + inputs[2].data

    def bwd(g):
        gfull = np.pad(g, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        for u in range(kh):
            for v in range(kw):
                sub = gfull[:, u:u + stride * h:stride, v:v + stride * wd:stride]
                gx += sub @ w.data[u, v].T
                gw[u, v] = np.tensordot(x.data, sub, axes=([0, 1, 2], [0, 1, 2]))
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    return _result("conv_transpose2d", out, inputs, bwd)


def avg_pool2d(x, k: int = 2) -> Tensor:
    x = as_tensor(x)
    n, h, w, c = x.data.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: spatial dims of {x.data.shape} not divisible by {k}")
    out = x.data.reshape(n, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def bwd(g):
        g = g / (k * k)
        return (np.repeat(np.repeat(g, k, axis=1), k, axis=2),)

    return _result("avg_pool2d", out, (x,), bwd)


def upsample_bilinear(x, out_hw) -> Tensor:
    """Bilinear resize of an NHWC tensor (align-corners)."""
    x = as_tensor(x)
    n, h, w, c = x.data.shape
    oh, ow = out_hw
    ys = np.linspace(0.0, h - 1.0, oh) if oh > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, ow) if ow > 1 else np.zeros(1)
    y0 = np.minimum(np.floor(ys).astype(np.int64), h - 2 if h > 1 else 0)
    x0 = np.minimum(np.floor(xs).astype(np.int64), w - 2 if w > 1 else 0)
    fy = (ys - y0).reshape(1, oh, 1, 1)
    fx = (xs - x0).reshape(1, 1, ow, 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    def gather(yi, xi):
        return x.data[:, yi][:, :, xi]

    out = (
        gather(y0, x0) * (1 - fy) * (1 - fx)
        + gather(y0, x1) * (1 - fy) * fx
        + gather(y1, x0) * fy * (1 - fx)
        + gather(y1, x1) * fy * fx
    )

    def bwd(g):
        gx = np.zeros((h * w, n, c), dtype=g.dtype)
        gmoved = g.transpose(1, 2, 0, 3)  # (oh, ow, n, c)
        for yi, wy in ((y0, 1 - fy), (y1, fy)):
            for xi, wx in ((x0, 1 - fx), (x1, fx)):
                wgt = (wy * wx).reshape(oh, ow, 1, 1)
                flat = (yi[:, None] * w + xi[None, :]).reshape(-1)
                np.add.at(gx, flat, (gmoved * wgt).reshape(oh * ow, n, c))
        return (gx.reshape(h, w, n, c).transpose(2, 0, 1, 3),)

    return _result("upsample_bilinear", out.astype(x.data.dtype, copy=False), (x,), bwd)


# ---------------------------------------------------------------------------
# sampling and correlation


def grid_sample(img, grid) -> Tensor:
    """Bilinear sampling of ``img`` (NHWC) at normalized grid coordinates.

    ``grid`` is (N, Hg, Wg, 2) with channel 0 = x and channel 1 = y in
    [-1, 1] (align-corners). Out-of-range coordinates clamp to the border.
    """
    img, grid = as_tensor(img), as_tensor(grid)
    n, h, w, c = img.data.shape
    if grid.ndim != 4 or grid.data.shape[3] != 2 or grid.data.shape[0] != n:
        raise ShapeError(f"grid_sample: grid {grid.data.shape} incompatible with image {img.data.shape}")
    # pixel coordinates in float64: the only remaining identity-warp error
    # is the float32 storage error of the grid itself (< 1e-6 at desk sizes)
    gx = (grid.data[..., 0].astype(np.float64) + 1.0) * 0.5 * (w - 1)
    gy = (grid.data[..., 1].astype(np.float64) + 1.0) * 0.5 * (h - 1)
    inx = (gx > 0.0) & (gx < w - 1.0)
    iny = (gy > 0.0) & (gy < h - 1.0)
    gx = np.clip(gx, 0.0, w - 1.0)
    gy = np.clip(gy, 0.0, h - 1.0)
    x0 = np.minimum(gx.astype(np.int64), w - 2)
    y0 = np.minimum(gy.astype(np.int64), h - 2)
    fx = (gx - x0).astype(img.data.dtype)[..., None]
    fy = (gy - y0).astype(img.data.dtype)[..., None]
    bidx = np.arange(n).reshape(n, 1, 1)

    i00 = img.data[bidx, y0, x0]
    i01 = img.data[bidx, y0, x0 + 1]
    i10 = img.data[bidx, y0 + 1, x0]
    i11 = img.data[bidx, y0 + 1, x0 + 1]
    top = i00 * (1 - fx) + i01 * fx
    bot = i10 * (1 - fx) + i11 * fx
    out = top * (1 - fy) + bot * fy

    def bwd(g):
        gimg = np.zeros((n, h * w, c), dtype=g.dtype)
        for yi, xi, wgt in (
            (y0, x0, (1 - fy) * (1 - fx)),
            (y0, x0 + 1, (1 - fy) * fx),
            (y0 + 1, x0, fy * (1 - fx)),
            (y0 + 1, x0 + 1, fy * fx),
        ):
            np.add.at(gimg, (bidx, yi * w + xi), g * wgt)
        gimg = gimg.reshape(img.data.shape)

        du = ((i01 - i00) * (1 - fy) + (i11 - i10) * fy) * g
        dv = ((i10 - i00) * (1 - fx) + (i11 - i01) * fx) * g
        ggrid = np.empty_like(grid.data)
        ggrid[..., 0] = du.sum(axis=-1) * inx * (0.5 * (w - 1))
        ggrid[..., 1] = dv.sum(axis=-1) * iny * (0.5 * (h - 1))
        return gimg, ggrid

    return _result("grid_sample", out, (img, grid), bwd)


def correlate(f_prev, f_cur, d: int) -> Tensor:
    """Channel-mean patch correlation over displacements in [-d, d]^2.

    ``out[n, i, j, q]`` with ``q = (dy+d)*(2d+1) + (dx+d)`` equals
    ``mean_c f_cur[n, i, j, c] * f_prev[n, i+dy, j+dx, c]``; displaced
    positions outside the map contribute zero.
    """
    f_prev, f_cur = as_tensor(f_prev), as_tensor(f_cur)
    if f_prev.data.shape != f_cur.data.shape:
        raise ShapeError(
            f"correlate: shapes {f_prev.data.shape} and {f_cur.data.shape} differ"
        )
    if d < 1:
        raise ShapeError(f"correlate: max displacement must be >= 1, got {d}")
    n, h, w, c = f_cur.data.shape
    k = 2 * d + 1
    prev_pad = np.pad(f_prev.data, ((0, 0), (d, d), (d, d), (0, 0)))
    out = np.empty((n, h, w, k * k), dtype=f_cur.data.dtype)
    for q in range(k * k):
        dy, dx = q // k - d, q % k - d
        shifted = prev_pad[:, d + dy:d + dy + h, d + dx:d + dx + w]
        out[..., q] = (f_cur.data * shifted).mean(axis=-1)

    def bwd(g):
        g = g / c
        gcur = np.zeros_like(f_cur.data)
        gprev_pad = np.zeros_like(prev_pad)
        for q in range(k * k):
            dy, dx = q // k - d, q % k - d
            shifted = prev_pad[:, d + dy:d + dy + h, d + dx:d + dx + w]
            gq = g[..., q:q + 1]
            gcur += gq * shifted
            gprev_pad[:, d + dy:d + dy + h, d + dx:d + dx + w] += gq * f_cur.data
        return gprev_pad[:, d:d + h, d:d + w], gcur

    return _result("correlate", out, (f_prev, f_cur), bwd)


# ---------------------------------------------------------------------------
# operator sugar on Tensor

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.__getitem__ = lambda self, index: slice_(self, index)
