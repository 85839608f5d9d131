"""
Tensor Core - Dense tensors with tape-based reverse-mode differentiation.

Values are numpy arrays: float32 on the production path, float64 when
gradients are checked. An operation is recorded only while a Tape is active
and at least one of its inputs requires a gradient, so inference passes cost
nothing extra.
"""

import contextvars
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from src.core.errors import InputError, NumericError, ShapeError, TapeError

logger = logging.getLogger("ssdnet.tensor")

DEFAULT_DTYPE = np.float32
FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))

Axis = Union[int, tuple[int, ...], None]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "ssdnet_active_tape", default=None
)


@dataclass(eq=False)
class Node:
    """One recorded operation: its position, inputs and backward rule."""

    index: int
    op: str
    inputs: tuple["Tensor", ...]
    backward: BackwardFn
    tape: "Tape"


class Tape:
    """
    Ordered record of the operations of one forward pass.

    Use as a context manager; operations executed inside the block are
    appended in execution order, which is a topological order by
    construction.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise TapeError("tape is already active")
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> bool:
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: Iterable["Tensor"], backward: BackwardFn) -> Node:
        node = Node(len(self.nodes), op, tuple(inputs), backward, self)
        self.nodes.append(node)
        return node

    def backward(self, root: "Tensor") -> None:
        """
        Populate ``grad`` on every requires-grad leaf reachable from root.

        Args:
            root: Scalar tensor produced on this tape

        Raises:
            TapeError: root was not recorded on this tape
            ShapeError: root is not a scalar
        """
        node = root.node
        if node is None or node.tape is not self:
            raise TapeError("backward root is not recorded on this tape")
        if root.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")

        pending: dict[int, np.ndarray] = {node.index: np.ones(root.shape, dtype=root.dtype)}
        for current in reversed(self.nodes[: node.index + 1]):
            grad = pending.pop(current.index, None)
            if grad is None:
                continue
            for source, source_grad in zip(current.inputs, current.backward(grad)):
                if source_grad is None or not source.requires_grad:
                    continue
                source_grad = unbroadcast(np.asarray(source_grad), source.shape)
                source_grad = source_grad.astype(source.dtype, copy=False)
                if source.node is None:
                    if source.grad is None:
                        source.grad = source_grad.copy()
                    else:
                        source.grad = source.grad + source_grad
                elif source.node.tape is self:
                    index = source.node.index
                    if index in pending:
                        pending[index] = pending[index] + source_grad
                    else:
                        pending[index] = source_grad
        logger.debug(f"Backward pass over {node.index + 1} recorded operations")


def active_tape() -> Optional[Tape]:
    """Return the tape operations are currently recorded on, if any."""
    return _active_tape.get()


class Tensor:
    """
    Dense N-dimensional array with optional gradient and tape linkage.

    ``data`` is never mutated by operations; only ``grad`` changes, and only
    during a backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in FLOAT_TYPES:
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data: np.ndarray = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, extent in enumerate(shape):
        if extent == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


def apply_op(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """
    Wrap a forward result and record it on the active tape.

    Every differentiable operation in the package funnels through here, so
    the finiteness invariant is enforced in one place.

    Args:
        op: Operation name, used in diagnostics
        out: Forward result
        inputs: Input tensors, in the order backward_fn returns gradients
        backward_fn: Maps the output gradient to one gradient per input

    Returns:
        Result tensor, linked to the tape when gradients are needed
    """
    dtype = np.result_type(*(t.dtype for t in inputs))
    out = np.asarray(out, dtype=dtype)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op} produced non-finite values")
    requires_grad = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=requires_grad)
    if requires_grad:
        tape = _active_tape.get()
        if tape is not None:
            result.node = tape.record(op, inputs, backward_fn)
    return result


def backward(root: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar root on its own tape."""
    if root.node is None:
        raise TapeError("backward root is not recorded on any tape")
    root.node.tape.backward(root)


# --- creation ---------------------------------------------------------------

def create(
    shape: Sequence[int],
    init: str = "zeros",
    *,
    seed: Optional[int] = None,
    lo: float = -1.0,
    hi: float = 1.0,
    mean: float = 0.0,
    std: float = 1.0,
    values=None,
    requires_grad: bool = False,
    dtype=DEFAULT_DTYPE,
) -> Tensor:
    """
    Build a tensor from an initializer.

    Args:
        shape: Positive extents
        init: zeros, ones, uniform, normal or literal
        seed: Generator seed (uniform/normal only, required there)
        lo, hi: Uniform bounds
        mean, std: Normal moments
        values: Literal values, flattened row-major
        requires_grad: Mark as a trainable leaf
        dtype: Element type

    Returns:
        New tensor
    """
    shape = tuple(int(s) for s in shape)
    if any(extent < 1 for extent in shape):
        raise ShapeError(f"shape extents must be >= 1, got {shape}")
    size = math.prod(shape)

    if init == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif init == "ones":
        data = np.ones(shape, dtype=dtype)
    elif init in ("uniform", "normal"):
        if seed is None:
            raise InputError(f"{init} initialization needs a seed")
        rng = np.random.default_rng(seed)
        if init == "uniform":
            data = rng.uniform(lo, hi, size=shape)
        else:
            data = rng.normal(mean, std, size=shape)
        data = data.astype(dtype)
    elif init == "literal":
        flat = np.asarray(values, dtype=dtype).reshape(-1)
        if flat.size != size:
            raise ShapeError(f"literal has {flat.size} values, shape {shape} needs {size}")
        data = flat.reshape(shape)
    else:
        raise InputError(f"unknown initializer: {init}")

    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


# --- elementwise ------------------------------------------------------------

def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return apply_op("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return apply_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    return apply_op("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    if np.any(b.data == 0):
        raise NumericError("div: divisor contains an exact zero")

    def backward_fn(g):
        return g / b.data, -g * a.data / (b.data * b.data)

    return apply_op("div", a.data / b.data, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    return apply_op("neg", -a.data, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return apply_op("relu", np.where(mask, a.data, 0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    decay = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0, 1.0 / (1.0 + decay), decay / (1.0 + decay))
    out = out.astype(a.dtype)
    return apply_op("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return apply_op("exp", out, (a,), lambda g: (g * out,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericError("sqrt: negative input")
    out = np.sqrt(a.data)

    def backward_fn(g):
        with np.errstate(divide="ignore"):
            return (g / (2 * out),)

    return apply_op("sqrt", out, (a,), backward_fn)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return apply_op("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "exp": exp, "sqrt": sqrt, "neg": neg, "abs": absolute}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if kind in _BINARY:
        if b is None:
            raise InputError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise InputError(f"unknown elementwise kind: {kind}")


# --- contraction ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of rank-2 or rank-3 (leading batch) operands."""
    if not (2 <= a.ndim <= 3 and 2 <= b.ndim <= 3):
        raise ShapeError(f"matmul needs rank 2 or 3 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul batch extents differ: {a.shape} @ {b.shape}")

    def backward_fn(g):
        return (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        )

    return apply_op("matmul", np.matmul(a.data, b.data), (a, b), backward_fn)


# --- reductions -------------------------------------------------------------

def _normalize_axes(axis: Axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    normalized = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        normalized.append(ax % ndim)
    return tuple(sorted(set(normalized)))


def _expand(g: np.ndarray, axes: tuple[int, ...], keep: bool, shape: tuple[int, ...]) -> np.ndarray:
    if not keep:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def reduce_sum(t: Tensor, axis: Axis = None, keep: bool = False) -> Tensor:
    axes = _normalize_axes(axis, t.ndim)
    out = t.data.sum(axis=axes, keepdims=keep)
    return apply_op("sum", out, (t,), lambda g: (_expand(g, axes, keep, t.shape),))


def reduce_mean(t: Tensor, axis: Axis = None, keep: bool = False) -> Tensor:
    axes = _normalize_axes(axis, t.ndim)
    count = math.prod(t.shape[ax] for ax in axes)
    out = t.data.sum(axis=axes, keepdims=keep) / count
    return apply_op("mean", out, (t,), lambda g: (_expand(g, axes, keep, t.shape) / count,))


def reduce_max(t: Tensor, axis: Optional[int] = None, keep: bool = False) -> Tensor:
    """Maximum; the gradient goes to the first maximal element on ties."""
    if axis is None:
        index = int(np.argmax(t.data))
        out = t.data.reshape(-1)[index]
        if keep:
            out = np.reshape(out, (1,) * t.ndim)

        def backward_fn(g):
            grad = np.zeros(t.size, dtype=t.dtype)
            grad[index] = np.asarray(g).reshape(-1)[0]
            return (grad.reshape(t.shape),)

        return apply_op("max", out, (t,), backward_fn)

    if not isinstance(axis, int):
        raise ShapeError("max reduces over a single axis")
    (ax,) = _normalize_axes(axis, t.ndim)
    index = np.expand_dims(np.argmax(t.data, axis=ax), ax)
    out = np.take_along_axis(t.data, index, axis=ax)
    if not keep:
        out = np.squeeze(out, axis=ax)

    def backward_fn(g):
        grad = np.zeros(t.shape, dtype=t.dtype)
        g = g if keep else np.expand_dims(g, ax)
        np.put_along_axis(grad, index, g, axis=ax)
        return (grad,)

    return apply_op("max", out, (t,), backward_fn)


_REDUCERS = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(kind: str, t: Tensor, axis: Axis = None, keep: bool = False) -> Tensor:
    """Dispatch a reduction by name."""
    if kind not in _REDUCERS:
        raise InputError(f"unknown reduction: {kind}")
    return _REDUCERS[kind](t, axis, keep)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis."""
    if not np.all(np.isfinite(t.data)):
        raise NumericError("softmax: non-finite input")
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    weights = np.exp(shifted)
    out = weights / weights.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return apply_op("softmax", out, (t,), backward_fn)


# --- shape manipulation -----------------------------------------------------

def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = t.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {t.shape} to {tuple(shape)}") from None
    return apply_op("reshape", out, (t,), lambda g: (g.reshape(t.shape),))


def transpose(t: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(t.ndim)):
        raise ShapeError(f"invalid permutation {axes} for rank {t.ndim}")
    inverse = tuple(np.argsort(axes))
    return apply_op("transpose", np.transpose(t.data, axes), (t,), lambda g: (np.transpose(g, inverse),))


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start + length)`` along one axis."""
    (ax,) = _normalize_axes(axis, t.ndim)
    if start < 0 or length < 1 or start + length > t.shape[ax]:
        raise ShapeError(f"narrow [{start}, {start + length}) out of range for extent {t.shape[ax]}")
    index = [slice(None)] * t.ndim
    index[ax] = slice(start, start + length)
    index = tuple(index)

    def backward_fn(g):
        grad = np.zeros(t.shape, dtype=g.dtype)
        grad[index] = g
        return (grad,)

    return apply_op("narrow", t.data[index], (t,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Join tensors along an existing axis; the gradient splits back exactly."""
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    first = tensors[0]
    (ax,) = _normalize_axes(axis, first.ndim)
    for other in tensors[1:]:
        if other.ndim != first.ndim or any(
            other.shape[d] != first.shape[d] for d in range(first.ndim) if d != ax
        ):
            raise ShapeError(f"concat: {first.shape} and {other.shape} differ off axis {ax}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward_fn(g):
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[ax] = slice(lo, hi)
            grads.append(g[tuple(index)])
        return grads

    out = np.concatenate([t.data for t in tensors], axis=ax)
    return apply_op("concat", out, tuple(tensors), backward_fn)
