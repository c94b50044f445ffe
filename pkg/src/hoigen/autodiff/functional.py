"""Differentiable primitives.

Each function takes tensors (or array-likes, treated as constants) and returns
a taped :class:`~hoigen.autodiff.tensor.Tensor`. Outputs are always freshly
materialized; no op returns a view of its input.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ._kernels import conv_backward, conv_forward
from .tensor import Tensor, make_op


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    arr = np.asarray(x, dtype=dtype) if dtype is not None else np.asarray(x)
    return Tensor(arr, dtype=arr.dtype if arr.dtype.kind == "f" else None)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    b = _wrap(b)
    return _wrap(a, b), b


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting expanded to reach it."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- arithmetic
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return make_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return make_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return make_op(out, (a,), backward, "pow")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch axes."""
    a, b = _pair(a, b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_op(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = np.matmul(x.data, weight.data)
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    k, n = weight.shape

    def backward(g):
        g2 = g.reshape(-1, n)
        gx = np.matmul(g, weight.data.T) if x.requires_grad else None
        gw = x.data.reshape(-1, k).T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_op(out, parents, backward, "linear")


# ------------------------------------------------------------- elementwise
def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: no overflow and no sign split
    out = np.multiply(x, 0.5, dtype=x.dtype)
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return make_op(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    x = a.data
    s = _sigmoid(x)
    out = x * s

    def backward(g):
        return (g * (s * (1.0 + x * (1.0 - s))),)

    return make_op(out, (a,), backward, "silu")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.log1p(np.exp(-np.abs(x)))
    out += np.maximum(x, 0.0)
    return make_op(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def relu(a: Tensor) -> Tensor:
    x = a.data
    return make_op(np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0),), "relu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; ``-inf`` entries get exactly zero weight."""
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (a,), backward, "softmax")


def layer_norm(a: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply an optional affine map."""
    x = a.data
    n = x.shape[-1]
    if weight is not None and weight.shape != (n,):
        raise ShapeError(f"layer_norm: weight {weight.shape} does not match feature axis {n}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    parents = [a]
    if weight is not None:
        parents.append(weight)
    if bias is not None:
        parents.append(bias)

    def backward(g):
        gxhat = g * weight.data if weight is not None else g
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        flat = g.reshape(-1, n)
        if weight is not None:
            grads.append((flat * xhat.reshape(-1, n)).sum(axis=0) if weight.requires_grad else None)
        if bias is not None:
            grads.append(flat.sum(axis=0) if bias.requires_grad else None)
        return tuple(grads)

    return make_op(np.ascontiguousarray(out), tuple(parents), backward, "layer_norm")


def depthwise_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Valid depthwise convolution along axis -2.

    ``x`` is (..., L, C) and ``weight`` is (C, K); output is (..., L-K+1, C)
    with ``out[t, c] = sum_j weight[c, j] * x[t + j, c]``.
    """
    c, k = weight.shape
    if x.shape[-1] != c:
        raise ShapeError(f"depthwise_conv1d: channels {x.shape[-1]} vs weight {weight.shape}")
    length = x.shape[-2] - k + 1
    if length < 1:
        raise ShapeError(f"depthwise_conv1d: sequence {x.shape[-2]} shorter than kernel {k}")
    xd, w = x.data, weight.data
    lead = xd.shape[:-2]
    x3 = np.ascontiguousarray(xd.reshape(-1, xd.shape[-2], c))
    out = np.empty((x3.shape[0], length, c), dtype=np.result_type(xd, w))
    conv_forward(x3, w, out)
    out = out.reshape(lead + (length, c))
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g3 = np.ascontiguousarray(g.reshape(-1, length, c))
        gx = np.empty_like(x3)
        gwt = np.empty((k, c), dtype=w.dtype)
        conv_backward(x3, w, g3, gx, gwt)
        grads = (gx.reshape(xd.shape), np.ascontiguousarray(gwt.T))
        if bias is None:
            return grads
        return grads + (g3.sum(axis=(0, 1)),)

    return make_op(out, parents, backward, "depthwise_conv1d")


# ---------------------------------------------------------------- reductions
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make_op(np.asarray(out), (a,), backward, "mean")


def max(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max along one axis; the gradient goes to the first maximal entry."""
    axis = axis % a.ndim
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        ga = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(ga, idx, g, axis=axis)
        return (ga,)

    if not keepdims:
        out = np.squeeze(out, axis)
    return make_op(np.ascontiguousarray(out), (a,), backward, "max")


def norm(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the gradient at the origin is taken as zero."""
    axes = _norm_axis(axis, a.ndim)
    x = a.data
    out = np.sqrt((x * x).sum(axis=axes, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * x / safe, 0.0).astype(x.dtype, copy=False),)

    result = out if keepdims else np.squeeze(out, axes)
    return make_op(np.asarray(result), (a,), backward, "norm")


# ------------------------------------------------------------- restructuring
def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape).copy()
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return make_op(out, (a,), lambda g: (g.reshape(src),), "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(i) for i in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return make_op(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),), "permute")


def getitem(a: Tensor, index) -> Tensor:
    """Basic slicing (ints, slices, Ellipsis, None)."""
    out = np.array(a.data[index], copy=True)
    shape, dtype = a.shape, a.dtype

    def backward(g):
        ga = np.zeros(shape, dtype=dtype)
        ga[index] += g
        return (ga,)

    return make_op(out, (a,), backward, "getitem")


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    like = next((p for p in parts if isinstance(p, Tensor)), None)
    parts = [_wrap(p, like) for p in parts]
    ndim = parts[0].ndim
    axis = axis % ndim
    for p in parts[1:]:
        if p.ndim != ndim or any(p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(
                f"concat: shapes {[q.shape for q in parts]} differ off axis {axis}")
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([p.data for p in parts], axis=axis)

    def backward(g):
        return tuple(
            np.ascontiguousarray(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis))
            if p.requires_grad else None
            for i, p in enumerate(parts)
        )

    return make_op(out, tuple(parts), backward, "concat")


def pad(a: Tensor, widths: Sequence[tuple[int, int]], value: float = 0.0) -> Tensor:
    """Constant padding; ``widths`` has one (before, after) pair per axis."""
    widths = [tuple(int(v) for v in w) for w in widths]
    if len(widths) != a.ndim:
        raise ShapeError(f"pad: {len(widths)} width pairs for a {a.ndim}-d tensor {a.shape}")
    out = np.pad(a.data, widths, mode="constant", constant_values=value)
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return make_op(out, (a,), lambda g: (np.ascontiguousarray(g[index]),), "pad")


def gather(a: Tensor, index, axis: int = 0) -> Tensor:
    """Select entries ``index`` along ``axis``; repeated indices are allowed."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim
    n = a.shape[axis]
    if index.ndim != 1 or (index.size and (index.min() < -n or index.max() >= n)):
        raise ShapeError(f"gather: index out of range for axis {axis} of shape {a.shape}")
    out = np.take(a.data, index, axis=axis)
    unique = n > 0 and np.unique(index % n).size == index.size

    def backward(g):
        if unique:
            ga = np.zeros(a.shape, dtype=g.dtype)
            np.moveaxis(ga, axis, 0)[index] = np.moveaxis(g, axis, 0)
            return (ga,)
        return (_scatter_add(g, index, axis, n),)

    return make_op(out, (a,), backward, "gather")


def _scatter_add(g: np.ndarray, index: np.ndarray, axis: int, n: int) -> np.ndarray:
    shape = list(g.shape)
    shape[axis] = n
    out = np.zeros(shape, dtype=g.dtype)
    moved = np.moveaxis(out, axis, 0)
    np.add.at(moved, index, np.moveaxis(g, axis, 0))
    return out


def scatter(a: Tensor, index, axis: int, size: int) -> Tensor:
    """Inverse of :func:`gather`: place slices of ``a`` at ``index`` (summing repeats)."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim
    if index.ndim != 1 or index.size != a.shape[axis]:
        raise ShapeError(f"scatter: index of length {index.size} vs axis {axis} of {a.shape}")
    out = _scatter_add(a.data, index, axis, size)

    def backward(g):
        return (np.take(g, index, axis=axis),)

    return make_op(out, (a,), backward, "scatter")


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Materialized numpy broadcast; the gradient sums over the expanded axes."""
    shape = tuple(int(n) for n in shape)
    src = a.shape
    try:
        out = np.array(np.broadcast_to(a.data, shape))
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {src} to {shape}") from None
    return make_op(out, (a,), lambda g: (unbroadcast(g, src),), "broadcast_to")


def flip(a: Tensor, axis: int) -> Tensor:
    """Reverse the order of entries along ``axis``."""
    out = np.ascontiguousarray(np.flip(a.data, axis))
    return make_op(out, (a,), lambda g: (np.ascontiguousarray(np.flip(g, axis)),), "flip")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [p if isinstance(p, Tensor) else _wrap(p) for p in parts]
    axis = axis % (parts[0].ndim + 1)
    expanded = [reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) for p in parts]
    return concat(expanded, axis=axis)


def where_mask(a: Tensor, mask: np.ndarray, fill) -> Tensor:
    """Replace entries where ``mask`` is True with the constant or tensor ``fill``."""
    mask = np.asarray(mask, dtype=bool)
    fill = _wrap(fill, a)
    out = np.where(mask, fill.data, a.data)

    def backward(g):
        ga = unbroadcast(np.where(mask, 0.0, g), a.shape) if a.requires_grad else None
        gf = unbroadcast(np.where(mask, g, 0.0), fill.shape) if fill.requires_grad else None
        return ga, gf

    return make_op(out.astype(a.dtype, copy=False), (a, fill), backward, "where_mask")
