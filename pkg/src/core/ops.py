"""
Differentiable tensor kernels

Covers the notation of the method description (fc, ReLU, conv, BN, sigmoid,
softmax, gp, concate) plus the elementwise/shape plumbing the pipeline needs.
Every kernel computes its forward pass with numpy in the current compute
precision and records a backward closure on the tape.
"""
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import LossInputError, SelectionError, TensorShapeError
from .tensor import Tensor, as_tensor, get_dtype

Operand = Union[Tensor, float, int, np.ndarray]

DEFAULT_BN_EPS = 1e-5


class Activation(Enum):
    """Elementwise activations available to activation()"""
    RELU = "relu"
    SIGMOID = "sigmoid"


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise TensorShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.wrap(a.value() + b.value(), "add", (a, b), backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.wrap(a.value() - b.value(), "sub", (a, b), backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.value(), b.value()

    def backward(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return Tensor.wrap(av * bv, "mul", (a, b), backward)


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    av, bv = a.value(), b.value()
    out = av / bv

    def backward(g):
        return _unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)

    return Tensor.wrap(out, "div", (a, b), backward)


def neg(x: Tensor) -> Tensor:
    return Tensor.wrap(-x.value(), "neg", (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.value())
    return Tensor.wrap(out, "exp", (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xv = x.value()
    return Tensor.wrap(np.log(xv), "log", (x,), lambda g: (g / xv,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.value())
    return Tensor.wrap(out, "sqrt", (x,), lambda g: (g * 0.5 / out,))


def power(x: Tensor, exponent: float) -> Tensor:
    xv = x.value()
    out = np.power(xv, exponent)

    def backward(g):
        return (g * exponent * np.power(xv, exponent - 1.0),)

    return Tensor.wrap(out, f"power[{exponent}]", (x,), backward)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp to [low, high]; gradient passes only inside the interval"""
    xv = x.value()
    inside = (xv >= low) & (xv <= high)
    return Tensor.wrap(np.clip(xv, low, high), "clip", (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    xv = x.value()
    positive = xv > 0
    return Tensor.wrap(np.where(positive, xv, 0).astype(xv.dtype), "relu", (x,), lambda g: (g * positive,))


def sigmoid(x: Tensor) -> Tensor:
    xv = x.value()
    decay = np.exp(-np.abs(xv))
    out = np.where(xv >= 0, 1.0 / (1.0 + decay), decay / (1.0 + decay)).astype(xv.dtype)
    return Tensor.wrap(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def activation(x: Tensor, kind: Union[Activation, str]) -> Tensor:
    kind = Activation(kind)
    if kind is Activation.RELU:
        return relu(x)
    return sigmoid(x)


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; accumulates in float64"""
    if v.size == 0:
        raise TensorShapeError("softmax needs at least one element")
    v64 = v.value().astype(np.float64)
    shifted = np.exp(v64 - v64.max(axis=axis, keepdims=True))
    out64 = shifted / shifted.sum(axis=axis, keepdims=True)
    out = out64.astype(get_dtype())

    def backward(g):
        g64 = g.astype(np.float64)
        inner = (g64 * out64).sum(axis=axis, keepdims=True)
        return (out64 * (g64 - inner),)

    return Tensor.wrap(out, "softmax", (v,), backward)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Sum with float64 accumulation, truncated to the compute precision"""
    out = np.sum(x.value(), axis=axis, dtype=np.float64, keepdims=keepdims).astype(get_dtype())
    shape = x.shape

    def backward(g):
        return (_expand_reduced(g, shape, axis, keepdims),)

    return Tensor.wrap(out, "sum", (x,), backward)


def mean(x: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return div(sum(x, axis=axis, keepdims=keepdims), float(count))


# ---------------------------------------------------------------------------
# Shape plumbing
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    source = x.shape
    try:
        out = x.value().reshape(tuple(shape))
    except ValueError:
        raise TensorShapeError(f"cannot reshape {source} into {tuple(shape)}") from None
    return Tensor.wrap(out, "reshape", (x,), lambda g: (g.reshape(source),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor.wrap(np.transpose(x.value(), axes), "permute", (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join along an existing axis"""
    if not tensors:
        raise TensorShapeError("concat needs at least one tensor")
    values = [t.value() for t in tensors]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise TensorShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.wrap(out, "concat", tuple(tensors), backward)


def take_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows along axis 0"""
    index = np.asarray(indices, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise SelectionError(f"row index outside 0..{x.shape[0] - 1}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return Tensor.wrap(x.value()[index], "take_rows", (x,), backward)


def scatter_rows(base: Tensor, indices: Sequence[int], rows: Tensor) -> Tensor:
    """Copy of base with the given rows replaced (indices must be unique)"""
    index = np.asarray(indices, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= base.shape[0]):
        raise SelectionError(f"row index outside 0..{base.shape[0] - 1}")
    if len(np.unique(index)) != index.size:
        raise SelectionError("scatter_rows needs unique indices")
    if rows.shape != (index.size,) + base.shape[1:]:
        raise TensorShapeError(f"scatter_rows: rows {rows.shape} do not fit {index.size} rows of {base.shape}")
    out = base.value().copy()
    out[index] = rows.value()

    def backward(g):
        base_grad = g.copy()
        base_grad[index] = 0
        return base_grad, g[index]

    return Tensor.wrap(out, "scatter_rows", (base, rows), backward)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully connected layer: x @ W + b broadcast over leading extents"""
    if weight.rank != 2 or bias.shape != (weight.shape[1],) or x.rank < 1 or x.shape[-1] != weight.shape[0]:
        raise TensorShapeError(
            f"affine: input {x.shape}, weight {weight.shape} and bias {bias.shape} do not agree"
        )
    xv, wv = x.value(), weight.value()
    out = xv @ wv + bias.value()

    def backward(g):
        flat_x = xv.reshape(-1, wv.shape[0])
        flat_g = g.reshape(-1, wv.shape[1])
        return g @ wv.T, flat_x.T @ flat_g, flat_g.sum(axis=0)

    return Tensor.wrap(out, "affine", (x, weight, bias), backward)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """
    Cross-correlation of x[C,H,W] with kernels[F,C,k,k] (k in {1, 3}), zero padding k//2

    Accumulates over kernel offsets in fixed row-major order.
    """
    if x.rank != 3 or kernels.rank != 4:
        raise TensorShapeError(f"conv2d: expected x[C,H,W] and kernels[F,C,k,k], got {x.shape} and {kernels.shape}")
    filters, channels, kh, kw = kernels.shape
    if channels != x.shape[0]:
        raise TensorShapeError(f"conv2d: kernels expect {channels} channels, input {x.shape} has {x.shape[0]}")
    if kh != kw or kh not in (1, 3):
        raise TensorShapeError(f"conv2d: kernel size must be 1x1 or 3x3, got {kh}x{kw}")
    if bias.shape != (filters,):
        raise TensorShapeError(f"conv2d: bias {bias.shape} does not match {filters} filters")
    if stride not in (1, 2):
        raise TensorShapeError(f"conv2d: stride must be 1 or 2, got {stride}")

    xv, kv = x.value(), kernels.value()
    _, height, width = xv.shape
    pad = kh // 2
    padded = np.pad(xv, ((0, 0), (pad, pad), (pad, pad)))
    out_h = (height + 2 * pad - kh) // stride + 1
    out_w = (width + 2 * pad - kw) // stride + 1

    def window(i: int, j: int):
        return (slice(None),
                slice(i, i + stride * (out_h - 1) + 1, stride),
                slice(j, j + stride * (out_w - 1) + 1, stride))

    out = np.zeros((filters, out_h, out_w), dtype=xv.dtype)
    for i in range(kh):
        for j in range(kw):
            out += np.tensordot(kv[:, :, i, j], padded[window(i, j)], axes=(1, 0))
    out += bias.value()[:, None, None]

    def backward(g):
        padded_grad = np.zeros_like(padded)
        kernel_grad = np.zeros_like(kv)
        for i in range(kh):
            for j in range(kw):
                kernel_grad[:, :, i, j] = np.tensordot(g, padded[window(i, j)], axes=([1, 2], [1, 2]))
                padded_grad[window(i, j)] += np.tensordot(kv[:, :, i, j], g, axes=(0, 0))
        input_grad = padded_grad[:, pad:pad + height, pad:pad + width]
        return input_grad, kernel_grad, g.sum(axis=(1, 2))

    return Tensor.wrap(out, "conv2d", (x, kernels, bias), backward)


def interpolation_matrix(size_in: int, size_out: int) -> np.ndarray:
    """Linear interpolation weights, align-corners=false (sample centre (o+0.5)*in/out - 0.5)"""
    matrix = np.zeros((size_out, size_in), dtype=np.float64)
    scale = size_in / size_out
    for o in range(size_out):
        source = max((o + 0.5) * scale - 0.5, 0.0)
        low = min(int(np.floor(source)), size_in - 1)
        high = min(low + 1, size_in - 1)
        frac = source - low
        matrix[o, low] += 1.0 - frac
        matrix[o, high] += frac
    return matrix


def resize_bilinear(x: Tensor, height: int, width: int) -> Tensor:
    """Bilinear resampling of x[C,H,W] to [C,height,width]"""
    if x.rank != 3 or min(x.shape) < 1:
        raise TensorShapeError(f"resize_bilinear expects a non-empty [C,H,W] tensor, got {x.shape}")
    dtype = get_dtype()
    rows = interpolation_matrix(x.shape[1], height).astype(dtype)
    cols = interpolation_matrix(x.shape[2], width).astype(dtype)
    out = np.einsum("oh,chw,pw->cop", rows, x.value(), cols)

    def backward(g):
        return (np.einsum("oh,cop,pw->chw", rows, g, cols),)

    return Tensor.wrap(out, "resize_bilinear", (x,), backward)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    if x.rank != 3:
        raise TensorShapeError(f"bilinear_upsample2x expects [C,H,W], got {x.shape}")
    return resize_bilinear(x, 2 * x.shape[1], 2 * x.shape[2])


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel maximum, [C,H,W] -> [C,1,1]"""
    if x.rank != 3:
        raise TensorShapeError(f"global_max_pool expects [C,H,W], got {x.shape}")
    channels = x.shape[0]
    flat = x.value().reshape(channels, -1)
    winners = np.argmax(flat, axis=1)
    rows = np.arange(channels)
    shape = x.shape

    def backward(g):
        grad = np.zeros(flat.shape, dtype=g.dtype)
        grad[rows, winners] = g.reshape(channels)
        return (grad.reshape(shape),)

    return Tensor.wrap(flat[rows, winners].reshape(channels, 1, 1), "global_max_pool", (x,), backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = DEFAULT_BN_EPS) -> Tensor:
    """Per-sample, per-channel standardisation over spatial positions, then scale-shift"""
    if eps <= 0:
        raise LossInputError(f"batch_norm eps must be positive, got {eps}")
    if x.rank != 3 or gamma.shape != (x.shape[0],) or beta.shape != (x.shape[0],):
        raise TensorShapeError(f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape} do not agree")
    x64 = x.value().astype(np.float64)
    g64 = gamma.value().astype(np.float64)[:, None, None]
    centred = x64 - x64.mean(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt((centred ** 2).mean(axis=(1, 2), keepdims=True) + eps)
    normed = centred * inv_std
    out = (g64 * normed + beta.value().astype(np.float64)[:, None, None]).astype(get_dtype())
    count = x.shape[1] * x.shape[2]

    def backward(g):
        grad = g.astype(np.float64)
        d_normed = grad * g64
        input_grad = inv_std / count * (
            count * d_normed
            - d_normed.sum(axis=(1, 2), keepdims=True)
            - normed * (d_normed * normed).sum(axis=(1, 2), keepdims=True)
        )
        return input_grad, (grad * normed).sum(axis=(1, 2)), grad.sum(axis=(1, 2))

    return Tensor.wrap(out, "batch_norm", (x, gamma, beta), backward)
