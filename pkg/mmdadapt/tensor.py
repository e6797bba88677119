"""Dense tensors and a reverse-mode computation tape.

A ``Tensor`` is an immutable n-dimensional float64 array. Operations on tensors are recorded on the active
``Tape`` whenever one of their inputs requires a gradient; ``Tape.gradients()`` replays the recorded operations
in reverse order and returns the gradient of a scalar root with respect to a set of named leaf tensors.

Examples:
    >>> from mmdadapt.tensor import Tape, Tensor
    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
            y = (x * x).sum()
    >>> tape.gradients(y, {"x": x})["x"]
    array([2., 4.])
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
Operand = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

# the active tape is per thread, a tape is never shared between training steps.
_state = threading.local()


def _active_tape() -> Optional[Tape]:
    return getattr(_state, "tape", None)


class Tensor:
    """Immutable dense float64 array which optionally takes part in gradient computation.

    Args:
        data: The values, anything ``numpy.array`` accepts. The values are copied.
        requires_grad: Whether operations on this tensor are recorded on the active tape.

    Raises:
        ShapeError: If any dimension of the array is zero.
        NonFiniteError: If the array contains NaN or infinite values.
    """

    __slots__ = ("data", "requires_grad")

    data: np.ndarray
    requires_grad: bool

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        array = np.array(data, dtype=np.float64)
        if any(dim < 1 for dim in array.shape):
            raise ShapeError(f"tensor dimensions must be positive, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NonFiniteError("tensor created from non-finite values")
        array.setflags(write=False)
        self.data = array
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> Tensor:
        result = object.__new__(cls)
        array = np.asarray(array, dtype=np.float64, order="C")
        array.setflags(write=False)
        result.data = array
        result.requires_grad = requires_grad
        return result

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"only single-element tensors can be converted to a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __float__(self) -> float:
        return self.item()

    def __len__(self) -> int:
        if not self.data.ndim:
            raise TypeError("len() of a scalar tensor")
        return int(self.data.shape[0])

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    def __add__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Operand) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Operand) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Operand) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Operand) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Operand) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Union[float, int]) -> Tensor:
        return mul(self, 1.0 / float(other))

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, shape)

    def exp(self) -> Tensor:
        return exp(self)

    def relu(self) -> Tensor:
        return relu(self)


@dataclass(frozen=True)
class Operation:
    """One recorded primitive: its name, the input tensors, the output tensor and its vector-Jacobian product."""

    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Context manager recording the operations executed while it is open.

    Only one tape can be recording in a thread at any time. The recorded operations stay available after the
    context is closed, so gradients are usually computed after leaving the ``with`` block.

    Raises:
        RuntimeError: If a tape is opened while another one is recording in the same thread, or if the same tape
            is opened twice.

    Examples:
        >>> w = Tensor([[0.5], [0.25]], requires_grad=True)
        >>> with Tape() as tape:
                loss = (Tensor([[1.0, 2.0]]) @ w).sum()
        >>> tape.gradients(loss, {"w": w})["w"]
        array([[1.], [2.]])
    """

    def __init__(self) -> None:
        self._operations: List[Operation] = []
        self._used = False

    def __enter__(self) -> Tape:
        if _active_tape() is not None:
            raise RuntimeError("'mmdadapt.Tape' context cannot be nested (a tape is already recording)")
        if self._used:
            raise RuntimeError("'mmdadapt.Tape' context can only be opened once")
        self._used = True
        _state.tape = self
        return self

    def __exit__(self, *args: Any, **kwargs: Any) -> None:
        if _active_tape() is self:
            _state.tape = None

    def __len__(self) -> int:
        return len(self._operations)

    def __repr__(self) -> str:
        status = "recording" if _active_tape() is self else "closed"
        return f"<mmdadapt.Tape ({status}) operations={len(self._operations)}>"

    @property
    def operations(self) -> Tuple[Operation, ...]:
        return tuple(self._operations)

    def record(self, operation: Operation) -> None:
        self._operations.append(operation)

    def gradients(self, root: Tensor, wrt: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
        """Computes the gradient of a scalar root tensor with respect to named leaf tensors.

        Operations are visited exactly once, in reverse recording order, which is a reverse topological order
        of the computation. Leaf tensors which did not take part in the computation get a zero gradient.

        Args:
            root: A scalar tensor produced by operations recorded on this tape.
            wrt: The leaf tensors to differentiate with respect to, keyed by name.

        Returns:
            A dictionary mapping every key of ``wrt`` to an array of the same shape as the tensor.

        Raises:
            ShapeError: If the root tensor is not a scalar.
            NonFiniteError: If a non-finite gradient is produced, naming the operation.
        """
        if root.size != 1:
            raise ShapeError(f"gradients require a scalar root tensor, got shape {root.shape}")

        grads: Dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
        for operation in reversed(self._operations):
            upstream = grads.pop(id(operation.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(operation.inputs, operation.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                if not np.all(np.isfinite(grad)):
                    raise NonFiniteError(f"operation '{operation.name}' produced a non-finite gradient")
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad

        return {
            name: np.array(grads[id(tensor)]) if id(tensor) in grads else np.zeros(tensor.shape)
            for name, tensor in wrt.items()
        }


def record_and_backward(
    fn: Callable[[Dict[str, Tensor]], Tensor], point: Mapping[str, ArrayLike]
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Evaluates a scalar function on a fresh tape and differentiates it at the given point.

    Args:
        fn: Function of named tensors returning a scalar tensor.
        point: The named values at which the function and its gradient are evaluated.

    Returns:
        A tuple of the function value and the gradient map (name -> array).

    Raises:
        ShapeError: If the function does not return a scalar.
        NonFiniteError: If a non-finite value is encountered in the forward or backward pass.
    """
    tensors = {name: Tensor(value, requires_grad=True) for name, value in point.items()}
    with Tape() as tape:
        root = fn(tensors)
    grads = tape.gradients(root, tensors)
    return root.item(), grads


def as_tensor(value: Operand) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def emit(name: str, inputs: Sequence[Tensor], value: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wraps the forward value of an operation and records it on the active tape when a gradient is needed.

    Raises:
        NonFiniteError: If the forward value contains NaN or infinite values.
    """
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"operation '{name}' produced non-finite values")

    tape = _active_tape()
    requires_grad = tape is not None and any(tensor.requires_grad for tensor in inputs)
    output = Tensor._wrap(value, requires_grad)
    if tape is not None and requires_grad:
        tape.record(Operation(name, tuple(inputs), output, backward))
    return output


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums a broadcast gradient back down to the shape of the operand."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"operation '{name}' cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a: Operand, b: Operand) -> Tensor:
    a_, b_ = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a_, b_)

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(grad, a_.shape), _unbroadcast(grad, b_.shape)

    return emit("add", (a_, b_), a_.data + b_.data, backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a_, b_ = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a_, b_)

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(grad, a_.shape), _unbroadcast(-grad, b_.shape)

    return emit("sub", (a_, b_), a_.data - b_.data, backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a_, b_ = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a_, b_)

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(grad * b_.data, a_.shape), _unbroadcast(grad * a_.data, b_.shape)

    return emit("mul", (a_, b_), a_.data * b_.data, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"operation 'matmul' expects (m, k) @ (k, n), got {a.shape} @ {b.shape}")

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return grad @ b.data.T, a.data.T @ grad

    return emit("matmul", (a, b), a.data @ b.data, backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"operation 'transpose' expects a matrix, got shape {a.shape}")

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad.T,)

    return emit("transpose", (a,), a.data.T, backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        value = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"operation 'reshape' cannot reshape {a.shape} into {tuple(shape)}") from None

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad.reshape(a.shape),)

    return emit("reshape", (a,), value, backward)


def tensor_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    value = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape).copy(),)

    return emit("sum", (a,), np.asarray(value), backward)


def tensor_mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * value,)

    return emit("exp", (a,), value, backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * mask,)

    return emit("relu", (a,), np.where(mask, a.data, 0.0), backward)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)``; clamped entries receive no gradient."""
    mask = a.data > floor

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * mask,)

    return emit("clamp_min", (a,), np.where(mask, a.data, floor), backward)


def take_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Selects rows (first-axis entries) by index; repeated indices accumulate their gradients."""
    index = np.asarray(indices, dtype=np.intp)
    if index.ndim != 1 or not index.size:
        raise ShapeError("operation 'take_rows' needs a non-empty list of row indices")
    if index.min() < -a.shape[0] or index.max() >= a.shape[0]:
        raise ShapeError(f"operation 'take_rows' index out of range for {a.shape[0]} rows")

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        result = np.zeros(a.shape)
        np.add.at(result, index, grad)
        return (result,)

    return emit("take_rows", (a,), a.data[index], backward)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("operation 'concat_rows' needs at least one tensor")
    tail = {tensor.shape[1:] for tensor in tensors}
    if len(tail) != 1:
        raise ShapeError(f"operation 'concat_rows' got mismatching trailing shapes {sorted(tail)}")
    bounds = np.cumsum([0] + [tensor.shape[0] for tensor in tensors])

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return tuple(grad[start:stop] for start, stop in zip(bounds[:-1], bounds[1:]))

    return emit("concat_rows", tuple(tensors), np.concatenate([tensor.data for tensor in tensors]), backward)


__all__ = [
    "ArrayLike",
    "Operation",
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "clamp_min",
    "concat_rows",
    "emit",
    "exp",
    "matmul",
    "mul",
    "record_and_backward",
    "relu",
    "reshape",
    "sub",
    "take_rows",
    "tensor_mean",
    "tensor_sum",
    "transpose",
]
