"""Dense float64 tensors with a reverse-mode differentiation tape.

Operations are `Function` subclasses: `forward` works on plain numpy arrays,
`backward` maps the gradient of the output to one gradient per input. When a
function is applied to at least one tensor that requires a gradient, the call
is recorded on the current thread's tape. `Tape.backward` replays the records
in reverse and accumulates gradients into the leaf tensors.

Tapes are thread-confined: each thread has its own stack of active tapes, so
independent training runs can proceed in parallel threads.
"""
from __future__ import annotations

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

_LOGGER = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]


class ShapeError(ValueError):
    """Raised when operand shapes or convolution geometry are incompatible."""


_state = threading.local()


def _tape_stack() -> List["Tape"]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = [Tape()]
        _state.tapes = stack
    return stack


def current_tape() -> "Tape":
    """Return the innermost active tape of the calling thread."""
    return _tape_stack()[-1]


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording anything on the tape."""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@dataclass
class TapeEntry:
    function: "Function"
    input_ids: Tuple[Optional[int], ...]
    output_id: int


class Tape:
    """Ordered record of differentiable operations.

    Entries are appended as operations execute, so every entry's inputs were
    produced by earlier entries (or are leaves).
    """

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []
        self.leaves: Dict[int, "Tensor"] = {}
        self.grads: Dict[int, np.ndarray] = {}
        self._next_id = 0

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _node_of(self, tensor: "Tensor") -> Optional[int]:
        if not tensor.requires_grad:
            return None
        if tensor._tape is not self or tensor.node_id is None:
            # first use of a leaf on this tape
            tensor._tape = self
            tensor.node_id = self._new_id()
            self.leaves[tensor.node_id] = tensor
        return tensor.node_id

    def record(self, function: "Function", inputs: Sequence["Tensor"], output: "Tensor") -> None:
        input_ids = tuple(self._node_of(t) for t in inputs)
        output._tape = self
        output.node_id = self._new_id()
        output._is_leaf = False
        self.entries.append(TapeEntry(function, input_ids, output.node_id))

    def backward(self, loss: "Tensor") -> None:
        """Populate gradients for every node reachable from `loss`."""
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self or loss.node_id is None:
            raise ValueError("loss was not recorded on this tape")

        grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            g = grads.get(entry.output_id)
            if g is None:
                continue
            input_grads = entry.function.backward(g)
            for nid, ig in zip(entry.input_ids, input_grads):
                if nid is None or ig is None:
                    continue
                if nid in grads:
                    grads[nid] = grads[nid] + ig
                else:
                    grads[nid] = ig

        self.grads = grads
        for nid, leaf in self.leaves.items():
            g = grads.get(nid)
            if g is not None:
                leaf._accumulate(g)

    def grad_of(self, tensor: "Tensor") -> Optional[np.ndarray]:
        """Gradient of the last backward sweep w.r.t. any node on this tape."""
        if tensor._tape is not self or tensor.node_id is None:
            return None
        return self.grads.get(tensor.node_id)

    def reset(self) -> None:
        for leaf in self.leaves.values():
            leaf.node_id = None
            leaf._tape = None
        self.entries.clear()
        self.leaves.clear()
        self.grads = {}


class Tensor:
    """Dense row-major float64 array that can take part in differentiation."""

    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self._tape: Optional[Tape] = None
        self._is_leaf = True

    # ------------------------------------------------------------------ info
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._is_leaf

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    # ------------------------------------------------------------- gradients
    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._tape is None:
            raise ValueError("tensor is not on a tape")
        self._tape.backward(self)

    # ------------------------------------------------------------- operators
    def __add__(self, other: Any) -> "Tensor":
        from .functional import add
        return add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from .functional import add
        return add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        from .functional import sub
        return sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from .functional import sub
        return sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from .functional import mul
        return mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from .functional import mul
        return mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        from .functional import div
        return div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        from .functional import div
        return div(other, self)

    def __neg__(self) -> "Tensor":
        from .functional import neg
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from .functional import matmul
        return matmul(self, other)

    def sum(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        from .functional import sum as _sum
        return _sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        from .functional import mean
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        from .functional import reshape
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def tanh(self) -> "Tensor":
        from .functional import tanh
        return tanh(self)

    def relu(self) -> "Tensor":
        from .functional import relu
        return relu(self)

    def sigmoid(self) -> "Tensor":
        from .functional import sigmoid
        return sigmoid(self)

    def abs(self) -> "Tensor":
        from .functional import abs as _abs
        return _abs(self)


def as_tensor(value: Any) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


class Function:
    """Base class for differentiable operations."""

    def forward(self, *args: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> Tensor:
        tensors = tuple(as_tensor(t) for t in inputs)
        func = cls()
        func.needs_grad = tuple(t.requires_grad for t in tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = grad_enabled() and any(func.needs_grad)
        out = Tensor(out_data, requires_grad=requires_grad)
        if requires_grad:
            current_tape().record(func, tensors, out)
        return out

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out broadcast dimensions so `grad` matches `to_shape`."""
        if grad.shape == to_shape:
            return grad
        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)
        for dim, extent in enumerate(to_shape):
            if extent == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return grad


def backward(loss: Tensor) -> None:
    """Run the reverse sweep for `loss` on the tape it was recorded on."""
    loss.backward()


def gradient_check(
    function: Callable[[Tensor], Tensor],
    point: ArrayLike,
    epsilon: float = 1e-4,
    aggregate: str = "max",
) -> float:
    """Compare tape gradients with central finite differences.

    aggregate="max" returns the max over coordinates of
    |analytic - numeric| / (|analytic| + |numeric| + 1e-12); "norm" returns
    ||analytic - numeric|| / (||analytic|| + ||numeric|| + 1e-12).
    """
    if aggregate not in ("max", "norm"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    base = np.array(point, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        out = function(leaf)
        if out.requires_grad:
            tape.backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    with no_grad():
        for idx in range(base.size):
            shifted = base.copy().reshape(-1)
            shifted[idx] = base.reshape(-1)[idx] + epsilon
            f_plus = function(Tensor(shifted.reshape(base.shape))).item()
            shifted[idx] = base.reshape(-1)[idx] - epsilon
            f_minus = function(Tensor(shifted.reshape(base.shape))).item()
            flat[idx] = (f_plus - f_minus) / (2.0 * epsilon)

    if base.size == 0:
        return 0.0
    if aggregate == "norm":
        diff = np.linalg.norm(analytic - numeric)
        return float(diff / (np.linalg.norm(analytic) + np.linalg.norm(numeric) + 1e-12))
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max())
