"""Dense 64-bit matrices with tape-based reverse-mode differentiation.

Every operation the model needs is a module-level function taking and
returning :class:`Tensor`. When a :class:`Tape` is active on the calling
thread and at least one operand requires a gradient, the operation is
recorded on that tape together with its backward rule. Without an active
tape the same functions simply compute values, which is how evaluation
passes run.

Tapes are per thread. Work fanned out to worker threads records onto
private tapes that the caller merges into its own with :meth:`Tape.extend`
in a fixed order, so gradients do not depend on thread scheduling.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.special import expit

from core.errors import ShapeError, TapeError

__all__ = [
    "LOG_EPS",
    "Tensor",
    "Tape",
    "current_tape",
    "matmul",
    "elementwise",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "clamp",
    "mul",
    "add",
    "sub",
    "softmax_segments",
    "softmax_rows",
    "gather_rows",
    "segment_sum",
    "scale_rows",
    "add_row",
    "concat_cols",
    "slice_cols",
    "sum_all",
    "sum_cols",
    "mean_rows",
    "zero_grad",
    "finite_difference_grad",
    "glorot_uniform",
    "zeros",
]

logger = logging.getLogger(__name__)

LOG_EPS = 1e-12

Operand = Union["Tensor", float, int]
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A row-major ``rows x cols`` float64 matrix.

    One-dimensional input becomes a column vector and scalars become 1x1.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None) -> None:
        array = np.array(data, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array.reshape(-1, 1)
        elif array.ndim != 2:
            raise ShapeError(f"Tensor must be at most 2-D; got shape {array.shape}")
        self.data: np.ndarray = np.ascontiguousarray(array)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[_Node] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor; got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


@dataclass
class _Node:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


_local = threading.local()


def _stack() -> List["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def current_tape() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager on the thread doing the work. ``backward`` may be
    run once per tape; record a new tape for the next step.
    """

    def __init__(self) -> None:
        self.nodes: List[_Node] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: _Node) -> None:
        if self._spent:
            raise TapeError("cannot record on a tape that has already been backpropagated")
        self.nodes.append(node)

    def extend(self, other: "Tape") -> None:
        """Append another tape's nodes; the merge point for per-worker tapes."""
        if other is self:
            raise TapeError("cannot merge a tape into itself")
        for node in other.nodes:
            self.record(node)
        other.nodes = []
        other._spent = True

    def backward(self, loss: Tensor) -> None:
        if loss.shape != (1, 1):
            raise TapeError(f"backward needs a scalar (1x1) loss; got shape {loss.shape}")
        if not self.nodes:
            raise TapeError("backward called on an empty tape")
        if self._spent:
            raise TapeError("backward already ran on this tape; record a new tape first")
        self._spent = True

        pending = {id(loss): np.ones((1, 1))}
        for node in reversed(self.nodes):
            grad = pending.pop(id(node.output), None)
            if grad is None:
                continue
            node.output.grad = grad
            input_grads = node.backward(grad)
            for tensor, input_grad in zip(node.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if tensor.is_leaf:
                    tensor.grad = input_grad.copy() if tensor.grad is None else tensor.grad + input_grad
                    continue
                key = id(tensor)
                previous = pending.get(key)
                pending[key] = input_grad if previous is None else previous + input_grad


def _as_tensor(value: Operand) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(float(value))


def _emit(op: str, inputs: Tuple[Tensor, ...], data: np.ndarray, backward: BackwardRule) -> Tensor:
    tape = current_tape()
    needs_grad = tape is not None and any(tensor.requires_grad for tensor in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        node = _Node(op, inputs, out, backward)
        out._node = node
        tape.record(node)
    return out


def _reduce_to(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # scalar operand broadcast over a matrix
    return np.array([[grad.sum()]])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(grad: np.ndarray):
        return grad @ b_data.T, a_data.T @ grad

    return _emit("matmul", (a, b), a_data @ b_data, backward)


def _check_binary(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.shape == (1, 1) or b.shape == (1, 1):
        return
    raise ShapeError(f"{kind}: operand shapes {a.shape} and {b.shape} differ")


def elementwise(kind: str, *operands: Operand, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    """Apply one of tanh, sigmoid, exp, log, clamp (unary) or mul, add, sub (binary)."""
    tensors = tuple(_as_tensor(op) for op in operands)

    if kind in ("tanh", "sigmoid", "exp", "log", "clamp"):
        if len(tensors) != 1:
            raise ShapeError(f"{kind} takes one operand; got {len(tensors)}")
        (x,) = tensors
        x_data = x.data
        if kind == "tanh":
            y = np.tanh(x_data)

            def backward(grad):
                return (grad * (1.0 - y * y),)
        elif kind == "sigmoid":
            y = expit(x_data)

            def backward(grad):
                return (grad * y * (1.0 - y),)
        elif kind == "exp":
            y = np.exp(x_data)

            def backward(grad):
                return (grad * y,)
        elif kind == "log":
            clipped = np.maximum(x_data, LOG_EPS)
            y = np.log(clipped)

            def backward(grad):
                return (np.where(x_data >= LOG_EPS, grad / clipped, 0.0),)
        else:
            low = -np.inf if lo is None else lo
            high = np.inf if hi is None else hi
            y = np.clip(x_data, low, high)

            def backward(grad):
                return (grad * ((x_data >= low) & (x_data <= high)),)
        return _emit(kind, (x,), y, backward)

    if kind in ("mul", "add", "sub"):
        if len(tensors) != 2:
            raise ShapeError(f"{kind} takes two operands; got {len(tensors)}")
        a, b = tensors
        _check_binary(kind, a, b)
        a_data, b_data = a.data, b.data
        if kind == "mul":
            y = a_data * b_data

            def backward(grad):
                return _reduce_to(grad * b_data, a.shape), _reduce_to(grad * a_data, b.shape)
        elif kind == "add":
            y = a_data + b_data

            def backward(grad):
                return _reduce_to(grad, a.shape), _reduce_to(grad, b.shape)
        else:
            y = a_data - b_data

            def backward(grad):
                return _reduce_to(grad, a.shape), _reduce_to(-grad, b.shape)
        return _emit(kind, (a, b), y, backward)

    raise ValueError(f"unknown elementwise op {kind!r}")


def tanh(x: Tensor) -> Tensor:
    return elementwise("tanh", x)


def sigmoid(x: Tensor) -> Tensor:
    return elementwise("sigmoid", x)


def exp(x: Tensor) -> Tensor:
    return elementwise("exp", x)


def log(x: Tensor) -> Tensor:
    return elementwise("log", x)


def clamp(x: Tensor, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    return elementwise("clamp", x, lo=lo, hi=hi)


def mul(a: Operand, b: Operand) -> Tensor:
    return elementwise("mul", a, b)


def add(a: Operand, b: Operand) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Operand, b: Operand) -> Tensor:
    return elementwise("sub", a, b)


def _segment_index(segment_ids, size: int, num_segments: Optional[int]) -> Tuple[np.ndarray, int]:
    ids = np.asarray(segment_ids, dtype=np.int64).reshape(-1)
    if ids.shape[0] != size:
        raise ShapeError(f"segment ids cover {ids.shape[0]} entries but values hold {size}")
    if num_segments is None:
        num_segments = int(ids.max()) + 1 if ids.size else 0
    return ids, num_segments


def softmax_segments(values: Tensor, segment_ids, num_segments: Optional[int] = None) -> Tensor:
    """Softmax taken independently within each segment of a flat vector.

    ``values`` is a column or row vector; ``segment_ids[i]`` names the segment of
    entry ``i``. Segments without entries are skipped.
    """
    if values.rows != 1 and values.cols != 1:
        raise ShapeError(f"softmax_segments needs a flat vector; got {values.shape}")
    flat = values.data.reshape(-1)
    ids, count = _segment_index(segment_ids, flat.shape[0], num_segments)
    peaks = np.full(count, -np.inf)
    np.maximum.at(peaks, ids, flat)
    shifted = np.exp(flat - peaks[ids])
    totals = np.bincount(ids, weights=shifted, minlength=count)
    y = shifted / totals[ids]
    shape = values.shape

    def backward(grad: np.ndarray):
        g = grad.reshape(-1)
        inner = np.bincount(ids, weights=g * y, minlength=count)
        return ((y * (g - inner[ids])).reshape(shape),)

    return _emit("softmax_segments", (values,), y.reshape(shape), backward)


def softmax_rows(x: Tensor) -> Tensor:
    shifted = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    y = shifted / shifted.sum(axis=1, keepdims=True)

    def backward(grad: np.ndarray):
        return (y * (grad - (grad * y).sum(axis=1, keepdims=True)),)

    return _emit("softmax_rows", (x,), y, backward)


def _indicator(index: np.ndarray, width: int) -> sparse.csr_matrix:
    size = index.shape[0]
    return sparse.csr_matrix((np.ones(size), (np.arange(size), index)), shape=(size, width))


def gather_rows(x: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= x.rows):
        raise ShapeError(f"gather_rows: index out of range for {x.shape}")
    rows = x.rows

    def backward(grad: np.ndarray):
        return (np.asarray(_indicator(idx, rows).T @ grad),)

    return _emit("gather_rows", (x,), x.data[idx], backward)


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum the rows of ``x`` into ``num_segments`` buckets named by ``segment_ids``."""
    ids, count = _segment_index(segment_ids, x.rows, num_segments)
    scatter = _indicator(ids, count).T.tocsr()

    def backward(grad: np.ndarray):
        return (grad[ids],)

    return _emit("segment_sum", (x,), np.asarray(scatter @ x.data), backward)


def scale_rows(x: Tensor, weights: Tensor) -> Tensor:
    """Multiply row ``i`` of ``x`` by ``weights[i]`` (a column vector)."""
    if weights.shape != (x.rows, 1):
        raise ShapeError(f"scale_rows: weights {weights.shape} do not fit rows of {x.shape}")
    x_data, w_data = x.data, weights.data

    def backward(grad: np.ndarray):
        return grad * w_data, (grad * x_data).sum(axis=1, keepdims=True)

    return _emit("scale_rows", (x, weights), x_data * w_data, backward)


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """Add a ``1 x cols`` row (a bias) to every row of ``x``."""
    if row.shape != (1, x.cols):
        raise ShapeError(f"add_row: row {row.shape} does not fit {x.shape}")

    def backward(grad: np.ndarray):
        return grad, grad.sum(axis=0, keepdims=True)

    return _emit("add_row", (x, row), x.data + row.data, backward)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    parts = tuple(tensors)
    if not parts:
        raise ShapeError("concat_cols needs at least one tensor")
    rows = parts[0].rows
    for part in parts[1:]:
        if part.rows != rows:
            raise ShapeError(f"concat_cols: row counts differ ({parts[0].shape} vs {part.shape})")
    bounds = np.cumsum([0] + [part.cols for part in parts])

    def backward(grad: np.ndarray):
        return tuple(grad[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _emit("concat_cols", parts, np.hstack([part.data for part in parts]), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.cols:
        raise ShapeError(f"slice_cols: [{start}, {stop}) outside {x.shape}")
    shape = x.shape

    def backward(grad: np.ndarray):
        full = np.zeros(shape)
        full[:, start:stop] = grad
        return (full,)

    return _emit("slice_cols", (x,), x.data[:, start:stop], backward)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape

    def backward(grad: np.ndarray):
        return (np.full(shape, grad[0, 0]),)

    return _emit("sum_all", (x,), np.array([[x.data.sum()]]), backward)


def sum_cols(x: Tensor) -> Tensor:
    """Row-wise sum: ``rows x cols`` -> ``rows x 1``."""
    cols = x.cols

    def backward(grad: np.ndarray):
        return (np.repeat(grad, cols, axis=1),)

    return _emit("sum_cols", (x,), x.data.sum(axis=1, keepdims=True), backward)


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean: ``rows x cols`` -> ``1 x cols``."""
    rows = x.rows

    def backward(grad: np.ndarray):
        return (np.repeat(grad / rows, rows, axis=0),)

    return _emit("mean_rows", (x,), x.data.mean(axis=0, keepdims=True), backward)


def zero_grad(params: Iterable[Tensor]) -> None:
    for param in params:
        param.zero_grad()


def finite_difference_grad(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of d fn() / d param, evaluated without a tape."""
    estimate = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = estimate.reshape(-1)
    for i in range(flat.shape[0]):
        original = flat[i]
        flat[i] = original + step
        upper = fn().item()
        flat[i] = original - step
        lower = fn().item()
        flat[i] = original
        out[i] = (upper - lower) / (2.0 * step)
    return estimate


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, name: Optional[str] = None) -> Tensor:
    """Trainable ``fan_in x fan_out`` matrix drawn from U(-sqrt(6/(in+out)), +sqrt(6/(in+out)))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


def zeros(rows: int, cols: int, name: Optional[str] = None) -> Tensor:
    """Trainable zero-initialised matrix, used for biases."""
    return Tensor(np.zeros((rows, cols)), requires_grad=True, name=name)
