"""Differentiable primitives.

Every backward rule below is expressed with primitives from this module, so
gradients stay differentiable.  The three convolution kernels (forward,
input-gradient, weight-gradient) are bilinear and mutually adjoint, which
closes the set under differentiation.
"""

from __future__ import annotations

import numpy as np

from .tensor import Function, Tensor, as_tensor


def _const(arr: np.ndarray) -> Tensor:
    return Tensor(arr)


# -- elementwise -----------------------------------------------------------


class Add(Function):
    @staticmethod
    def forward(ctx, a, b):
        return a + b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.inputs
        return sum_to(g, a.shape), sum_to(g, b.shape)


class Sub(Function):
    @staticmethod
    def forward(ctx, a, b):
        return a - b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.inputs
        return sum_to(g, a.shape), neg(sum_to(g, b.shape))


class Mul(Function):
    @staticmethod
    def forward(ctx, a, b):
        return a * b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.inputs
        ga = sum_to(mul(g, b), a.shape) if a.tracked else None
        gb = sum_to(mul(g, a), b.shape) if b.tracked else None
        return ga, gb


class Neg(Function):
    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, g):
        return (neg(g),)


class Scale(Function):
    @staticmethod
    def forward(ctx, a, c):
        return a * a.dtype.type(c)

    @staticmethod
    def backward(ctx, g):
        return (scale(g, ctx.attrs["c"]),)


class AddScalar(Function):
    @staticmethod
    def forward(ctx, a, c):
        return a + a.dtype.type(c)

    @staticmethod
    def backward(ctx, g):
        return (g,)


class Pow(Function):
    @staticmethod
    def forward(ctx, a, p):
        if p == 2:
            return a * a
        # domain errors show up as NaN/Inf, which debug mode reports
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sqrt(a) if p == 0.5 else np.power(a, a.dtype.type(p))

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.inputs
        p = ctx.attrs["p"]
        if p == 1:
            return (g,)
        base = a if p == 2 else pow(a, p - 1)
        return (mul(g, scale(base, p)),)


class LeakyReLU(Function):
    @staticmethod
    def forward(ctx, a, slope):
        return np.where(a >= 0, a, a * a.dtype.type(slope))

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.inputs
        slope = ctx.attrs["slope"]
        mask = np.where(a.data >= 0, 1.0, slope).astype(a.dtype)
        return (mul(g, _const(mask)),)


class Tanh(Function):
    @staticmethod
    def forward(ctx, a):
        return np.tanh(a)

    @staticmethod
    def backward(ctx, g):
        y = ctx.output
        return (mul(g, add_scalar(neg(mul(y, y)), 1.0)),)


# -- shape -----------------------------------------------------------------


class Sum(Function):
    @staticmethod
    def forward(ctx, a, axis, keepdims):
        return np.sum(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.inputs
        axis, keepdims = ctx.attrs["axis"], ctx.attrs["keepdims"]
        if not keepdims:
            g = reshape(g, _keepdims_shape(a.shape, axis))
        return (broadcast_to(g, a.shape),)


class BroadcastTo(Function):
    @staticmethod
    def forward(ctx, a, shape):
        return np.broadcast_to(a, shape)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.inputs
        return (sum_to(g, a.shape),)


class SumTo(Function):
    @staticmethod
    def forward(ctx, a, shape):
        return _sum_to_array(a, shape)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.inputs
        return (broadcast_to(g, a.shape),)


class Reshape(Function):
    @staticmethod
    def forward(ctx, a, shape):
        return np.reshape(a, shape)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.inputs
        return (reshape(g, a.shape),)


class SliceAxis(Function):
    @staticmethod
    def forward(ctx, a, axis, start, stop):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, stop)
        return a[tuple(idx)]

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.inputs
        at = ctx.attrs
        return (embed_axis(g, at["axis"], at["start"], a.shape[at["axis"]]),)


class EmbedAxis(Function):
    """Place ``a`` into a zero tensor along ``axis`` at offset ``start``."""

    @staticmethod
    def forward(ctx, a, axis, start, length):
        shape = list(a.shape)
        shape[axis] = length
        out = np.zeros(shape, dtype=a.dtype)
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + a.shape[axis])
        out[tuple(idx)] = a
        return out

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.inputs
        at = ctx.attrs
        return (slice_axis(g, at["axis"], at["start"], at["start"] + a.shape[at["axis"]]),)


class Concat(Function):
    @staticmethod
    def forward(ctx, *arrays, axis):
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(ctx, g):
        axis = ctx.attrs["axis"]
        out, start = [], 0
        for t in ctx.inputs:
            stop = start + t.shape[axis]
            out.append(slice_axis(g, axis, start, stop) if t.tracked else None)
            start = stop
        return out


# -- spatial ---------------------------------------------------------------


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(x: np.ndarray, k: int, p: int) -> tuple[np.ndarray, int]:
    """Patch matrix (B, C*k*k, Ho*Wp) over full padded rows, plus the padded width Wp.

    Working on flattened padded rows turns every kernel offset into one
    contiguous slice per (batch, channel).  Columns past Wo wrap into the
    next row; callers crop or zero them.
    """
    b, c, h, w = x.shape
    hp, wp = h + 2 * p, w + 2 * p
    ho = hp - k + 1
    flat = np.zeros((b, c, hp * wp + k - 1), dtype=x.dtype)
    flat[:, :, : hp * wp].reshape(b, c, hp, wp)[:, :, p : p + h, p : p + w] = x
    n = ho * wp
    cols = np.empty((b, c, k, k, n), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            off = i * wp + j
            cols[:, :, i, j] = flat[:, :, off : off + n]
    return cols.reshape(b, c * k * k, n), wp


def _conv_array(x, w, p):
    b, _, h, wd = x.shape
    o, c, k, _ = w.shape
    ho, wo = h + 2 * p - k + 1, wd + 2 * p - k + 1
    if k == 1 and p == 0:
        return np.matmul(w.reshape(o, c), x.reshape(b, c, h * wd)).reshape(b, o, h, wd)
    cols, wp = _im2col(x, k, p)
    out = np.matmul(w.reshape(o, c * k * k), cols).reshape(b, o, ho, wp)
    return np.ascontiguousarray(out[:, :, :, :wo]) if wp != wo else out


def _conv_input_grad_array(g, w, p, in_hw):
    k = w.shape[-1]
    q = k - 1 - p
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    if q >= 0:
        out = _conv_array(g, wt, q)
    else:
        out = _conv_array(g, wt, 0)[:, :, -q:q, -q:q]
    if out.shape[2:] != tuple(in_hw):
        raise ValueError(f"conv input-gradient shape {out.shape} does not match {in_hw}")
    return out


def _conv_weight_grad_array(x, g, p, k):
    b, c, h, wd = x.shape
    o, ho, wo = g.shape[1:]
    if k == 1 and p == 0:
        cols = x.reshape(b, c, h * wd)
        gm = g.reshape(b, o, ho * wo)
    else:
        cols, wp = _im2col(x, k, p)
        gm = np.zeros((b, o, ho, wp), dtype=g.dtype)
        gm[:, :, :, :wo] = g
        gm = gm.reshape(b, o, ho * wp)
    return np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, k, k)


class Conv2d(Function):
    @staticmethod
    def forward(ctx, x, w, padding):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
            raise ValueError(f"conv2d shape mismatch: input {x.shape}, weight {w.shape}")
        if x.shape[2] + 2 * padding < w.shape[2]:
            raise ValueError(f"conv2d kernel {w.shape[2]} larger than padded input {x.shape}")
        return _conv_array(x, w, padding)

    @staticmethod
    def backward(ctx, g):
        x, w = ctx.inputs
        p = ctx.attrs["padding"]
        gx = conv_input_grad(g, w, p, x.shape[2:]) if x.tracked else None
        gw = conv_weight_grad(x, g, p, w.shape[-1]) if w.tracked else None
        return gx, gw


class ConvInputGrad(Function):
    """Adjoint of conv2d in its input argument (a transposed convolution)."""

    @staticmethod
    def forward(ctx, g, w, padding, in_hw):
        return _conv_input_grad_array(g, w, padding, in_hw)

    @staticmethod
    def backward(ctx, u):
        g, w = ctx.inputs
        p = ctx.attrs["padding"]
        gg = Conv2d.apply(u, w, padding=p) if g.tracked else None
        gw = conv_weight_grad(u, g, p, w.shape[-1]) if w.tracked else None
        return gg, gw


class ConvWeightGrad(Function):
    """Adjoint of conv2d in its weight argument."""

    @staticmethod
    def forward(ctx, x, g, padding, k):
        return _conv_weight_grad_array(x, g, padding, k)

    @staticmethod
    def backward(ctx, u):
        x, g = ctx.inputs
        p = ctx.attrs["padding"]
        gx = conv_input_grad(g, u, p, x.shape[2:]) if x.tracked else None
        gg = Conv2d.apply(x, u, padding=p) if g.tracked else None
        return gx, gg


class Upsample2x(Function):
    @staticmethod
    def forward(ctx, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    @staticmethod
    def backward(ctx, g):
        return (scale(avgpool2x(g), 4.0),)


class AvgPool2x(Function):
    @staticmethod
    def forward(ctx, x):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"avgpool2x needs even spatial extents, got {h}x{w}")
        v = x.reshape(b, c, h // 2, 2, w // 2, 2)
        s = (v[:, :, :, 0, :, 0] + v[:, :, :, 0, :, 1]) + (v[:, :, :, 1, :, 0] + v[:, :, :, 1, :, 1])
        return s * x.dtype.type(0.25)

    @staticmethod
    def backward(ctx, g):
        return (scale(upsample2x(g), 0.25),)


class L2Norm(Function):
    """Euclidean norm over ``axes``; subgradient 0 at the origin."""

    @staticmethod
    def forward(ctx, x, axes):
        return np.sqrt(np.sum(x * x, axis=axes, keepdims=True))

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.inputs
        n = ctx.output
        safe = add(n, _const((n.data == 0).astype(n.dtype)))
        return (mul(broadcast_to(mul(g, pow(safe, -1.0)), x.shape), x),)


class SafeSqrt(Function):
    """Square root whose derivative is taken as 0 where the input is 0."""

    @staticmethod
    def forward(ctx, a):
        return np.sqrt(a)

    @staticmethod
    def backward(ctx, g):
        y = ctx.output
        safe = add(y, _const((y.data == 0).astype(y.dtype)))
        return (mul(g, scale(pow(safe, -1.0), 0.5)),)


# -- public wrappers -------------------------------------------------------


def _keepdims_shape(shape, axis):
    if axis is None:
        return (1,) * len(shape)
    axes = (axis,) if isinstance(axis, int) else axis
    axes = {a % len(shape) for a in axes}
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def _sum_to_array(a: np.ndarray, shape) -> np.ndarray:
    shape = tuple(shape)
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and a.shape[i + lead] != 1
    )
    out = np.sum(a, axis=axes, keepdims=True)
    return out.reshape(shape)


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_scalar(a, b) if np.ndim(b) == 0 else Add.apply(a, as_tensor(b, a))
    if not isinstance(a, Tensor):
        return add(b, a)
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_scalar(a, -b) if np.ndim(b) == 0 else Sub.apply(a, as_tensor(b, a))
    return Sub.apply(as_tensor(a, b), b)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b) if np.ndim(b) == 0 else Mul.apply(a, as_tensor(b, a))
    if not isinstance(a, Tensor):
        return mul(b, a)
    return Mul.apply(a, b)


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def scale(a: Tensor, c: float) -> Tensor:
    return Scale.apply(a, c=float(c))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return AddScalar.apply(a, c=float(c))


def pow(a: Tensor, p: float) -> Tensor:  # noqa: A001
    return Pow.apply(a, p=p)


def sqrt(a: Tensor) -> Tensor:
    return pow(a, 0.5)


def safe_sqrt(a: Tensor) -> Tensor:
    return SafeSqrt.apply(a)


def rsqrt(a: Tensor) -> Tensor:
    return pow(a, -0.5)


def leaky_relu(x: Tensor, leakiness: float = 0.2) -> Tensor:
    if not 0 <= leakiness < 1:
        raise ValueError(f"leakiness must be in [0, 1), got {leakiness}")
    return LeakyReLU.apply(x, slope=float(leakiness))


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    if isinstance(axis, list):
        axis = tuple(axis)
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    return BroadcastTo.apply(x, shape=shape)


def sum_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    return SumTo.apply(x, shape=shape)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    return Reshape.apply(x, shape=shape)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    return SliceAxis.apply(x, axis=axis, start=start, stop=stop)


def embed_axis(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    return EmbedAxis.apply(x, axis=axis, start=start, length=length)


def concat(tensors, axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 0) -> Tensor:
    """Cross-correlation with stride 1 and symmetric zero padding."""
    out = Conv2d.apply(x, weight, padding=int(padding))
    if bias is not None:
        out = add(out, reshape(bias, (1, -1, 1, 1)) if bias.ndim == 1 else bias)
    return out


def conv_input_grad(g: Tensor, weight: Tensor, padding: int, in_hw) -> Tensor:
    return ConvInputGrad.apply(g, weight, padding=padding, in_hw=tuple(in_hw))


def conv_weight_grad(x: Tensor, g: Tensor, padding: int, k: int) -> Tensor:
    return ConvWeightGrad.apply(x, g, padding=padding, k=k)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling (each pixel becomes a 2x2 block)."""
    return Upsample2x.apply(x)


def avgpool2x(x: Tensor) -> Tensor:
    return AvgPool2x.apply(x)


def l2norm(x: Tensor, axes) -> Tensor:
    return L2Norm.apply(x, axes=tuple(axes))
