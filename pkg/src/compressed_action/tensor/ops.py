"""Differentiable operators over ``Tensor``.

Feature maps are 5-D (N, C, T, H, W). Every operator is a pure function of its
inputs and returns a new tensor; gradients are defined for every tensor input.
Convolution is cross-correlation (no kernel flip).
"""

import itertools
import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import (
    DimensionError,
    GeometryError,
    NumericError,
    OperatorUsageError,
    PreconditionError,
)
from .core import Tensor, custom_op

logger = logging.getLogger(__name__)

AXIS_NAMES = ("batch", "channel", "time", "height", "width")

Triple = Tuple[int, int, int]


def _require_ndim(x: Tensor, ndim: int, what: str) -> None:
    if x.ndim != ndim:
        raise DimensionError(f"{what} must be {ndim}-D, got shape {x.shape}")


def _axis_name(axis: int, ndim: int) -> str:
    if ndim == 5:
        return AXIS_NAMES[axis]
    return f"axis {axis}"


def _triple(value: Union[int, Sequence[int]], name: str) -> Triple:
    if isinstance(value, int):
        return (value, value, value)
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise PreconditionError(f"{name} must have three entries, got {value}")
    return value  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    if len(a) != len(b):
        raise DimensionError(f"operands have different ranks: {a} vs {b}")
    shape = []
    for axis, (ea, eb) in enumerate(zip(a, b)):
        if ea == eb or eb == 1 or ea == 1:
            shape.append(max(ea, eb))
        else:
            raise DimensionError(
                f"cannot broadcast along {_axis_name(axis, len(a))}: {ea} vs {eb} (shapes {a} and {b})"
            )
    return tuple(shape)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return custom_op(a.data + b.data, (a, b), grad_fn, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return custom_op(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return custom_op(a.data * b.data, (a, b), grad_fn, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    def grad_fn(g):
        return (g * factor,)

    return custom_op(x.data * factor, (x,), grad_fn, "scale")


def sigmoid(x: Tensor) -> Tensor:
    # tanh form is overflow free and gives exactly 0.5 at zero
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return custom_op(out, (x,), grad_fn, "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def grad_fn(g):
        return (g * mask,)

    return custom_op(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), grad_fn, "relu")


def pointwise(x: Tensor, fn: str, other: Optional[Tensor] = None) -> Tensor:
    """Apply ``sigmoid``, ``relu``, ``mul`` or ``add`` elementwise."""
    if fn == "sigmoid":
        return sigmoid(x)
    if fn == "relu":
        return relu(x)
    if fn in ("mul", "add"):
        if other is None:
            raise OperatorUsageError(f"pointwise '{fn}' needs a second operand")
        return mul(x, other) if fn == "mul" else add(x, other)
    raise OperatorUsageError(f"unknown pointwise function '{fn}' (expected sigmoid, relu, mul, add)")


def average(tensors: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of same-shape tensors."""
    if not tensors:
        raise PreconditionError("average of an empty list")
    first = tensors[0]
    for other in tensors[1:]:
        if other.shape != first.shape:
            raise DimensionError(f"cannot average shapes {first.shape} and {other.shape}")
    total = first
    for other in tensors[1:]:
        total = add(total, other)
    return scale(total, 1.0 / len(tensors))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    out = x.data.reshape(tuple(shape))

    def grad_fn(g):
        return (g.reshape(original),)

    return custom_op(out, (x,), grad_fn, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.transpose(g, inverse),)

    return custom_op(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), grad_fn, "transpose")


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return custom_op(np.asarray(out, dtype=x.dtype), (x,), grad_fn, "sum")


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def split(x: Tensor, k: int, axis: int = 1) -> List[Tensor]:
    """Split evenly into ``k`` pieces along ``axis`` (channels by default)."""
    extent = x.shape[axis]
    if k < 1 or extent % k:
        raise PreconditionError(f"cannot split {_axis_name(axis, x.ndim)} of extent {extent} into {k} equal parts")
    width = extent // k
    return [_slice(x, axis, i * width, (i + 1) * width) for i in range(k)]


def _slice(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return custom_op(x.data[index].copy(), (x,), grad_fn, "slice")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; the inverse of ``split``."""
    if not tensors:
        raise PreconditionError("concat of an empty list")
    ref = tensors[0].shape
    for t in tensors[1:]:
        for ax, (a, b) in enumerate(zip(ref, t.shape)):
            if ax != axis and a != b:
                raise DimensionError(f"concat mismatch along {_axis_name(ax, len(ref))}: {a} vs {b}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return custom_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn, "concat")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv3d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: Union[int, Sequence[int]] = 1,
    padding: Union[int, Sequence[int]] = 0,
) -> Tensor:
    """3-D cross-correlation of an (N, Cin, T, H, W) input with (Cout, Cin, kT, kH, kW) weights."""
    _require_ndim(x, 5, "conv3d input")
    _require_ndim(weight, 5, "conv3d weight")
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    if min(stride) < 1 or min(padding) < 0:
        raise PreconditionError(f"stride must be >= 1 and padding >= 0, got {stride} / {padding}")
    cout, cin, kt, kh, kw = weight.shape
    n, c, t, h, w = x.shape
    if cin != c:
        raise DimensionError(f"channel axis: input has {c} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"channel axis: bias shape {bias.shape} does not match {cout} output channels")

    (st, sh, sw), (pt, ph, pw) = stride, padding
    extents = []
    for name, size, pad, k, s in (("time", t, pt, kt, st), ("height", h, ph, kh, sh), ("width", w, pw, kw, sw)):
        out = (size + 2 * pad - k) // s + 1
        if size + 2 * pad < k or out < 1:
            raise GeometryError(f"{name} axis: kernel {k} with padding {pad} does not fit extent {size}")
        extents.append(out)
    to, ho, wo = extents

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    windows = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))[:, :, ::st, ::sh, ::sw]
    out = np.tensordot(windows, weight.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i, j, k in itertools.product(range(kt), range(kh), range(kw)):
                contrib = np.tensordot(g, weight.data[:, :, i, j, k], axes=([1], [0]))
                gxp[:, :, i : i + st * to : st, j : j + sh * ho : sh, k : k + sw * wo : sw] += np.moveaxis(
                    contrib, -1, 1
                )
            gx = gxp[:, :, pt : pt + t, ph : ph + h, pw : pw + w]
        gw = np.tensordot(g, windows, axes=([0, 2, 3, 4], [0, 2, 3, 4])) if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    return custom_op(out, parents, grad_fn, "conv3d")


# ---------------------------------------------------------------------------
# pooling and resizing
# ---------------------------------------------------------------------------


def _max_pool_same(x: Tensor) -> Tensor:
    n, c, t, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)), constant_values=-np.inf)
    flat = sliding_window_view(xp, (3, 3, 3), axis=(2, 3, 4)).reshape(n, c, t, h, w, 27)
    winner = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for offset in range(27):
            i, j, k = np.unravel_index(offset, (3, 3, 3))
            gxp[:, :, i : i + t, j : j + h, k : k + w] += np.where(winner == offset, g, 0.0)
        return (gxp[:, :, 1:-1, 1:-1, 1:-1],)

    return custom_op(np.ascontiguousarray(out), (x,), grad_fn, "max3d_same")


def _max_global(x: Tensor) -> Tensor:
    n, c = x.shape[:2]
    flat = x.data.reshape(n, c, -1)
    winner = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, winner[..., None], axis=-1).reshape(n, c, 1, 1, 1)

    def grad_fn(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, winner[..., None], g.reshape(n, c, 1), axis=-1)
        return (gflat.reshape(x.shape),)

    return custom_op(out, (x,), grad_fn, "max_global")


def _average_pool_matrix(size: int, r: int, dtype) -> np.ndarray:
    """Ceil-mode window averaging: window i covers [i*r, min((i+1)*r, size))."""
    out = math.ceil(size / r)
    matrix = np.zeros((out, size), dtype=dtype)
    for i in range(out):
        lo, hi = i * r, min((i + 1) * r, size)
        matrix[i, lo:hi] = 1.0 / (hi - lo)
    return matrix


def _bilinear_matrix(out_size: int, in_size: int, dtype) -> np.ndarray:
    """Half-pixel-centre linear interpolation weights (align corners off)."""
    matrix = np.zeros((out_size, in_size), dtype=dtype)
    ratio = in_size / out_size
    for i in range(out_size):
        src = max((i + 0.5) * ratio - 0.5, 0.0)
        lo = min(int(math.floor(src)), in_size - 1)
        hi = min(lo + 1, in_size - 1)
        lam = src - lo
        matrix[i, lo] += 1.0 - lam
        matrix[i, hi] += lam
    return matrix


def _separable_spatial(x: Tensor, rows: np.ndarray, cols: np.ndarray, name: str) -> Tensor:
    out = np.einsum("ncthw,ih,jw->nctij", x.data, rows, cols, optimize=True)

    def grad_fn(g):
        return (np.einsum("nctij,ih,jw->ncthw", g, rows, cols, optimize=True),)

    return custom_op(out, (x,), grad_fn, name)


def pool(x: Tensor, mode: str, r: Optional[int] = None) -> Tensor:
    """Pooling over the (T, H, W) axes.

    Modes: ``max3d_same`` (kernel 3, stride 1, padding 1), ``avg_temporal_global``
    (T -> 1), ``avg_spatial`` (ceil-mode r x r windows, stride r),
    ``avg_global`` and ``max_global`` (T, H, W -> 1).
    """
    _require_ndim(x, 5, "pool input")
    if not np.isfinite(x.data).all():
        raise NumericError("pool input contains non-finite values")
    if mode == "max3d_same":
        return _max_pool_same(x)
    if mode == "avg_temporal_global":
        return reduce_mean(x, axis=2, keepdims=True)
    if mode == "avg_global":
        return reduce_mean(x, axis=(2, 3, 4), keepdims=True)
    if mode == "max_global":
        return _max_global(x)
    if mode == "avg_spatial":
        if r is None or r < 1:
            raise PreconditionError(f"avg_spatial needs r >= 1, got {r}")
        rows = _average_pool_matrix(x.shape[3], r, x.dtype)
        cols = _average_pool_matrix(x.shape[4], r, x.dtype)
        return _separable_spatial(x, rows, cols, "avg_spatial")
    raise OperatorUsageError(
        f"unknown pool mode '{mode}' (expected max3d_same, avg_temporal_global, avg_spatial, avg_global, max_global)"
    )


def resize(x: Tensor, mode: str, size) -> Tensor:
    """``repeat_temporal`` to T slices, or ``bilinear_spatial`` to (H, W)."""
    _require_ndim(x, 5, "resize input")
    if mode == "repeat_temporal":
        if x.shape[2] != 1:
            raise PreconditionError(f"repeat_temporal needs T=1, got T={x.shape[2]}")
        if size < 1:
            raise PreconditionError(f"repeat target must be >= 1, got {size}")
        out = np.repeat(x.data, size, axis=2)

        def grad_fn(g):
            return (g.sum(axis=2, keepdims=True),)

        return custom_op(out, (x,), grad_fn, "repeat_temporal")
    if mode == "bilinear_spatial":
        height, width = size
        if height < 1 or width < 1:
            raise PreconditionError(f"bilinear target extents must be >= 1, got {size}")
        rows = _bilinear_matrix(height, x.shape[3], x.dtype)
        cols = _bilinear_matrix(width, x.shape[4], x.dtype)
        return _separable_spatial(x, rows, cols, "bilinear_spatial")
    raise OperatorUsageError(f"unknown resize mode '{mode}' (expected repeat_temporal, bilinear_spatial)")


# ---------------------------------------------------------------------------
# attention and classification primitives
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along the last axis."""
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return custom_op(out, (x,), grad_fn, "softmax")


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    """[B, M, K] @ [B, K, N] -> [B, M, N]."""
    _require_ndim(a, 3, "matmul_batched left operand")
    _require_ndim(b, 3, "matmul_batched right operand")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"batch axis: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[2] != b.shape[1]:
        raise DimensionError(f"inner axis: {a.shape[2]} vs {b.shape[1]}")

    def grad_fn(g):
        return g @ np.swapaxes(b.data, 1, 2), np.swapaxes(a.data, 1, 2) @ g

    return custom_op(a.data @ b.data, (a, b), grad_fn, "matmul_batched")


def affine(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Fully connected map of an (N, C) input with a (K, C) weight."""
    _require_ndim(x, 2, "affine input")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"feature axis: input width {x.shape[1]} vs head width {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return custom_op(out, parents, grad_fn, "affine")


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    _require_ndim(logits, 2, "cross_entropy logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise DimensionError(f"labels {labels.tolist()} do not index {k} classes for batch {n}")
    if np.isnan(logits.data).any():
        raise NumericError("cross_entropy logits contain NaN")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(n), labels].mean()

    def grad_fn(g):
        probs = np.exp(log_probs)
        probs[np.arange(n), labels] -= 1.0
        return (probs * (g / n),)

    return custom_op(np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn, "cross_entropy")
