"""
Differentiable primitives over dense float64 arrays.

Every primitive validates its operands, computes the forward value with numpy
and records a closure that maps the output gradient to one gradient per input
(``None`` for inputs that do not require one).
"""
from __future__ import annotations

from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from pyavrobust.exceptions import ShapeError
from pyavrobust.tensorcore.graph import TensorNode, as_node, record

NORM_FLOOR = 1e-12
PROB_FLOOR = 1e-300

Pair = Tuple[int, int]


def _pair(value: int | Sequence[int]) -> Pair:
    if isinstance(value, (int, np.integer)):
        return int(value), int(value)
    first, second = value
    return int(first), int(second)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shapes(kind: str, a: TensorNode, b: TensorNode) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{kind}: operands of shape {a.shape} and {b.shape} do not broadcast"
        ) from None


def add(a: TensorNode, b: TensorNode) -> TensorNode:
    _broadcast_shapes("add", a, b)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", a.values + b.values, (a, b), grad_fn)


def sub(a: TensorNode, b: TensorNode) -> TensorNode:
    _broadcast_shapes("sub", a, b)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return record("sub", a.values - b.values, (a, b), grad_fn)


def mul(a: TensorNode, b: TensorNode) -> TensorNode:
    _broadcast_shapes("mul", a, b)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(g * b.values, a.shape),
            _unbroadcast(g * a.values, b.shape),
        )

    return record("mul", a.values * b.values, (a, b), grad_fn)


def reshape(x: TensorNode, shape: Sequence[int]) -> TensorNode:
    try:
        out = x.values.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(
            f"reshape: cannot reshape {x.shape} into {tuple(shape)}"
        ) from None

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g.reshape(x.shape),)

    return record("reshape", out, (x,), grad_fn)


def concat(inputs: Sequence[TensorNode], axis: int = 0) -> TensorNode:
    if not inputs:
        raise ShapeError("concat: no inputs")
    ndim = inputs[0].values.ndim
    axis = axis % ndim
    for node in inputs[1:]:
        other = [n for i, n in enumerate(node.shape) if i != axis]
        first = [n for i, n in enumerate(inputs[0].shape) if i != axis]
        if node.values.ndim != ndim or other != first:
            raise ShapeError(
                f"concat: shape {node.shape} incompatible with {inputs[0].shape} "
                f"along axis {axis}"
            )
    bounds = np.cumsum([node.shape[axis] for node in inputs])[:-1]

    def grad_fn(g: np.ndarray) -> Sequence[np.ndarray]:
        return np.split(g, bounds, axis=axis)

    out = np.concatenate([node.values for node in inputs], axis=axis)
    return record("concat", out, tuple(inputs), grad_fn)


def linear(
    x: TensorNode, weight: TensorNode, bias: TensorNode | None = None
) -> TensorNode:
    """``x @ weight + bias`` over the last axis of ``x``."""
    if weight.values.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"linear: input feature dim {x.shape[-1]} does not match weight "
            f"shape {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"linear: bias shape {bias.shape} does not match {weight.shape[1]} outputs"
        )
    out = x.values @ weight.values
    if bias is not None:
        out = out + bias.values

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        flat_x = x.values.reshape(-1, weight.shape[0])
        flat_g = g.reshape(-1, weight.shape[1])
        grads: Tuple[Optional[np.ndarray], ...] = (
            g @ weight.values.T if x.requires_grad else None,
            flat_x.T @ flat_g if weight.requires_grad else None,
        )
        if bias is not None:
            grads = grads + (flat_g.sum(axis=0),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record("linear", out, parents, grad_fn)


def conv2d(
    x: TensorNode,
    weight: TensorNode,
    bias: TensorNode | None = None,
    stride: int | Sequence[int] = 1,
    padding: int | Sequence[int] = 0,
) -> TensorNode:
    """
    2-D cross-correlation of ``x`` (N, C, H, W) with ``weight`` (O, C, kh, kw).

    Implemented as a loop over the kernel taps, each tap being one einsum.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {(sh, sw)}")
    if x.values.ndim != 4 or weight.values.ndim != 4:
        raise ShapeError(
            f"conv2d: expected 4-d input and weight, got {x.shape} and {weight.shape}"
        )
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if c != wc:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {wc}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {o} outputs")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: kernel {(kh, kw)} larger than padded input {(h + 2 * ph, w + 2 * pw)}"
        )

    padded = np.pad(x.values, ((0, 0), (0, 0), (ph, ph), (pw, pw)))

    def tap(u: int, v: int) -> Tuple[slice, slice]:
        return slice(u, u + sh * (ho - 1) + 1, sh), slice(v, v + sw * (wo - 1) + 1, sw)

    out = np.zeros((n, o, ho, wo))
    for u in range(kh):
        for v in range(kw):
            rows, cols = tap(u, v)
            out += np.einsum(
                "nchw,oc->nohw", padded[:, :, rows, cols], weight.values[:, :, u, v]
            )
    if bias is not None:
        out += bias.values[None, :, None, None]

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad_padded = np.zeros_like(padded) if x.requires_grad else None
        grad_weight = np.zeros_like(weight.values) if weight.requires_grad else None
        for u in range(kh):
            for v in range(kw):
                rows, cols = tap(u, v)
                if grad_weight is not None:
                    grad_weight[:, :, u, v] = np.einsum(
                        "nohw,nchw->oc", g, padded[:, :, rows, cols]
                    )
                if grad_padded is not None:
                    grad_padded[:, :, rows, cols] += np.einsum(
                        "nohw,oc->nchw", g, weight.values[:, :, u, v]
                    )
        grad_x = None
        if grad_padded is not None:
            grad_x = grad_padded[:, :, ph : ph + h, pw : pw + w]
        grads: Tuple[Optional[np.ndarray], ...] = (grad_x, grad_weight)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", out, parents, grad_fn)


def relu(x: TensorNode) -> TensorNode:
    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * (x.values > 0),)

    return record("relu", np.maximum(x.values, 0.0), (x,), grad_fn)


def maxpool(x: TensorNode, kernel: int | Sequence[int] = 2) -> TensorNode:
    """Non-overlapping max pooling over the last two axes of a 4-d input."""
    kh, kw = _pair(kernel)
    if x.values.ndim != 4:
        raise ShapeError(f"maxpool: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if kh < 1 or kw < 1 or h % kh or w % kw:
        raise ShapeError(f"maxpool: spatial dims {(h, w)} not divisible by {(kh, kw)}")
    ho, wo = h // kh, w // kw
    windows = (
        x.values.reshape(n, c, ho, kh, wo, kw)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, kh * kw)
    )
    # first maximal element of each window receives the gradient
    winner = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, winner, axis=-1)[..., 0]

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        grad_windows = np.zeros_like(windows)
        np.put_along_axis(grad_windows, winner, g[..., None], axis=-1)
        grad_x = (
            grad_windows.reshape(n, c, ho, wo, kh, kw)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return (grad_x,)

    return record("maxpool", out, (x,), grad_fn)


def _reduced_count(shape: Tuple[int, ...], axis: int | Tuple[int, ...] | None) -> int:
    if axis is None:
        return int(np.prod(shape, dtype=np.int64))
    axes = (axis,) if isinstance(axis, int) else axis
    return int(np.prod([shape[a] for a in axes], dtype=np.int64))


def _expand(
    g: np.ndarray, shape: Tuple[int, ...], axis: Any, keepdims: bool
) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(  # noqa: A001 - mirrors numpy naming
    x: TensorNode, axis: int | Tuple[int, ...] | None = None, keepdims: bool = False
) -> TensorNode:
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.array(_expand(g, x.shape, axis, keepdims)),)

    return record("sum", out, (x,), grad_fn)


def mean(
    x: TensorNode, axis: int | Tuple[int, ...] | None = None, keepdims: bool = False
) -> TensorNode:
    count = _reduced_count(x.shape, axis)
    out = x.values.sum(axis=axis, keepdims=keepdims) / count

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (_expand(g, x.shape, axis, keepdims) / count,)

    return record("mean", out, (x,), grad_fn)


def var_along_axis(x: TensorNode, axis: int = 0) -> TensorNode:
    """Population variance (divide by the axis length)."""
    if x.values.ndim == 0:
        raise ShapeError("var_along_axis: scalar input has no axis")
    count = x.shape[axis]
    centred = x.values - x.values.mean(axis=axis, keepdims=True)
    out = (centred**2).sum(axis=axis) / count

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.expand_dims(g, axis) * 2.0 * centred / count,)

    return record("var_along_axis", out, (x,), grad_fn)


def softmax(x: TensorNode, axis: int = -1) -> TensorNode:
    shifted = np.exp(x.values - x.values.max(axis=axis, keepdims=True))
    probs = shifted / shifted.sum(axis=axis, keepdims=True)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (probs * (g - (g * probs).sum(axis=axis, keepdims=True)),)

    return record("softmax", probs, (x,), grad_fn)


def cross_entropy(probs: TensorNode, target: TensorNode) -> TensorNode:
    """
    Mean over rows of ``-sum(target * log(probs))``.

    ``probs`` are class probabilities (e.g. a softmax output) and ``target``
    one-hot rows of the same shape.
    """
    if probs.shape != target.shape:
        raise ShapeError(
            f"cross_entropy: probabilities {probs.shape} vs targets {target.shape}"
        )
    rows = max(1, int(np.prod(probs.shape[:-1], dtype=np.int64)))
    clipped = np.maximum(probs.values, PROB_FLOOR)
    out = -(target.values * np.log(clipped)).sum() / rows

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        grad_probs = -g * target.values / clipped / rows
        grad_target = -g * np.log(clipped) / rows if target.requires_grad else None
        return grad_probs, grad_target

    return record("cross_entropy", np.asarray(out), (probs, target), grad_fn)


def softmax_cross_entropy(logits: TensorNode, labels: np.ndarray) -> TensorNode:
    """Numerically stable fused softmax + cross-entropy, mean over rows."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    flat = logits.values.reshape(-1, logits.shape[-1])
    if flat.shape[0] != labels.size:
        raise ShapeError(
            f"softmax_cross_entropy: {flat.shape[0]} rows of logits vs "
            f"{labels.size} labels"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= flat.shape[1]):
        raise ShapeError(
            f"softmax_cross_entropy: labels outside [0, {flat.shape[1]})"
        )
    shifted = flat - flat.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(labels.size)
    out = (log_norm - shifted[rows, labels]).mean()

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.exp(shifted - log_norm[:, None])
        grad[rows, labels] -= 1.0
        return ((g * grad / labels.size).reshape(logits.shape),)

    return record("softmax_cross_entropy", np.asarray(out), (logits,), grad_fn)


def cosine_similarity(u: TensorNode, v: TensorNode, axis: int = -1) -> TensorNode:
    """Cosine along ``axis`` with a 1e-12 floor added to each operand's norm."""
    if u.shape != v.shape:
        raise ShapeError(f"cosine_similarity: operand shapes {u.shape} and {v.shape}")
    norm_u = np.sqrt((u.values**2).sum(axis=axis, keepdims=True))
    norm_v = np.sqrt((v.values**2).sum(axis=axis, keepdims=True))
    a = norm_u + NORM_FLOOR
    b = norm_v + NORM_FLOOR
    dot = (u.values * v.values).sum(axis=axis, keepdims=True)
    cos = dot / (a * b)

    def _unit(x: np.ndarray, norm: np.ndarray) -> np.ndarray:
        return np.divide(x, norm, out=np.zeros_like(x), where=norm > 0)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        g = np.expand_dims(g, axis)
        grad_u = g * (v.values / (a * b) - cos * _unit(u.values, norm_u) / a)
        grad_v = g * (u.values / (a * b) - cos * _unit(v.values, norm_v) / b)
        return grad_u, grad_v

    return record("cosine_similarity", np.squeeze(cos, axis=axis), (u, v), grad_fn)


def dropout_mask_apply(
    x: TensorNode, mask: np.ndarray, scale: float = 1.0
) -> TensorNode:
    """Multiply by an externally drawn binary mask and a constant scale."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape:
        raise ShapeError(
            f"dropout_mask_apply: mask shape {mask.shape} does not match {x.shape}"
        )
    factor = mask * scale

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * factor,)

    return record("dropout_mask_apply", x.values * factor, (x,), grad_fn)


def frame_mix(x: TensorNode, matrix: np.ndarray, axis: int = 0) -> TensorNode:
    """Mix slices along ``axis`` with a fixed (T, T) matrix: ``y_s = sum_t M[s, t] x_t``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    axis = axis % x.values.ndim
    if matrix.shape != (x.shape[axis], x.shape[axis]):
        raise ShapeError(
            f"frame_mix: matrix {matrix.shape} does not match axis length {x.shape[axis]}"
        )
    moved = np.moveaxis(x.values, axis, 0)
    out = np.moveaxis(np.tensordot(matrix, moved, axes=1), 0, axis)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        mixed = np.tensordot(matrix.T, np.moveaxis(g, axis, 0), axes=1)
        return (np.moveaxis(mixed, 0, axis),)

    return record("frame_mix", out, (x,), grad_fn)


PRIMITIVES: Dict[str, Callable[..., TensorNode]] = {
    "linear": linear,
    "conv2d": conv2d,
    "relu": relu,
    "maxpool": maxpool,
    "mean": mean,
    "sum": sum,
    "var_along_axis": var_along_axis,
    "softmax": softmax,
    "cross_entropy": cross_entropy,
    "softmax_cross_entropy": softmax_cross_entropy,
    "cosine_similarity": cosine_similarity,
    "add": add,
    "sub": sub,
    "mul": mul,
    "concat": concat,
    "reshape": reshape,
    "dropout_mask_apply": dropout_mask_apply,
    "frame_mix": frame_mix,
}


def forward_primitive(
    kind: str, inputs: Sequence[TensorNode | np.ndarray | float], **attrs: Any
) -> TensorNode:
    """
    Dispatch a primitive by name.

    Parameters
    ----------
    kind:
        One of the keys of ``PRIMITIVES``.
    inputs:
        Operand nodes; plain arrays are wrapped as constants.
    **attrs:
        Primitive attributes (``axis``, ``stride``, ``padding``, ``mask``, ...).

    Returns
    -------
    node: TensorNode

    Raises
    -------
    KeyError:
        Unknown primitive kind.
    ShapeError:
        Operands incompatible with the primitive.
    """
    if kind not in PRIMITIVES:
        raise KeyError(f"Unknown primitive {kind!r}. Choose from {sorted(PRIMITIVES)}")
    nodes = [as_node(value) for value in inputs]
    if kind == "concat":
        return concat(nodes, **attrs)
    return PRIMITIVES[kind](*nodes, **attrs)
