"""Dense-tensor engine with reverse-mode differentiation.

Values are float64 numpy arrays. Differentiable ops append themselves to
the active :class:`Tape` as they execute, so the tape is topologically
sorted by construction and ``backward`` replays it once in reverse.
Broadcasting is deliberately restricted to scalar-with-tensor and
row-vector bias against a matrix; everything else is a shape error.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import NumericError, ShapeError, UsageError

TensorLike = Union["Tensor", float, int, Sequence, np.ndarray]

_tape_stack: list["Tape"] = []


class Tape:
    """Execution-ordered record of differentiable ops.

    Use as a context manager around a forward pass; discard after the
    backward pass. Nesting pushes a fresh tape, so inner work does not
    leak onto the outer record.
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)


def _active_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


class _Node:
    __slots__ = ("out", "inputs", "backward", "tape")

    def __init__(self, out, inputs, backward, tape):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.tape = tape


class Tensor:
    """A dense float64 value node, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data: TensorLike, requires_grad: bool = False) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[_Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Constant view of this value: same data, no grad, no tape link."""
        return _make(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Thin operator sugar over the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        raise ShapeError("tensor/tensor division is not part of the op suite")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _make(arr: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(arr, dtype=np.float64)
    t.requires_grad = False
    t.grad = None
    t._node = None
    return t


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values")


def _record(out_data: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    out = _make(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = _Node(out, inputs, backward, tape)
        out._node = node
        tape._nodes.append(node)
    return out


def _check_binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    if len(sa) == 2 and sb in ((sa[1],), (1, sa[1])):
        return
    if len(sb) == 2 and sa in ((sb[1],), (1, sb[1])):
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, op, fwd, bwd_a, bwd_b) -> Tensor:
    # Finiteness is checked at the overflow-capable ops (matmul, exp,
    # softmax, log); elementwise arithmetic on their outputs stays finite.
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes(a, b, op)
    out_data = fwd(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(bwd_a(g, a.data, b.data), a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(bwd_b(g, a.data, b.data), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _record(out_data, (a, b), backward)


def add(a: TensorLike, b: TensorLike) -> Tensor:
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    return _binary(a, b, "sub", lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def scale(a: TensorLike, s: float) -> Tensor:
    if not math.isfinite(s):
        raise NumericError("scale factor must be finite")
    a = as_tensor(a)
    out_data = a.data * s

    def backward(g):
        return (g * s if a.requires_grad else None,)

    return _record(out_data, (a,), backward)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects two 2-d tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.data.shape} x {b.data.shape})")
    out_data = a.data @ b.data
    _ensure_finite(out_data, "matmul")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(out_data, (a, b), backward)


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        return (g * (a.data > 0.0) if a.requires_grad else None,)

    return _record(out_data, (a,), backward)


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    _ensure_finite(out_data, "exp")

    def backward(g):
        return (g * out_data if a.requires_grad else None,)

    return _record(out_data, (a,), backward)


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericError("log requires strictly positive inputs")
    out_data = np.log(a.data)

    def backward(g):
        return (g / a.data if a.requires_grad else None,)

    return _record(out_data, (a,), backward)


def clamp(a: TensorLike, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only where the input is inside."""
    if not (lo <= hi):
        raise ValueError("clamp requires lo <= hi")
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def backward(g):
        if not a.requires_grad:
            return (None,)
        mask = (a.data >= lo) & (a.data <= hi)
        return (g * mask,)

    return _record(out_data, (a,), backward)


def tsum(a: TensorLike) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    a = as_tensor(a)
    out_data = np.asarray(a.data.sum())

    def backward(g):
        return (np.broadcast_to(g, a.data.shape).copy() if a.requires_grad else None,)

    return _record(out_data, (a,), backward)


def tmean(a: TensorLike) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    a = as_tensor(a)
    n = a.data.size
    out_data = np.asarray(a.data.mean())

    def backward(g):
        return (np.broadcast_to(g / n, a.data.shape).copy() if a.requires_grad else None,)

    return _record(out_data, (a,), backward)


def softmax_T(d: TensorLike, tau: float) -> Tensor:
    """Temperature-scaled softmax over the last axis.

    Computes ``p_k = exp(d_k / tau) / sum_j exp(d_j / tau)`` with
    max-subtraction for stability. Accepts 1-d logit vectors or 2-d
    batches of rows.
    """
    if not (isinstance(tau, (int, float)) and math.isfinite(tau) and tau > 0):
        raise ValueError(f"tau must be a positive finite real, got {tau!r}")
    d = as_tensor(d)
    if d.data.ndim not in (1, 2):
        raise ShapeError("softmax_T expects a 1-d or 2-d tensor")
    if not np.all(np.isfinite(d.data)):
        raise NumericError("softmax_T received non-finite logits")
    z = d.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if not d.requires_grad:
            return (None,)
        inner = (g * p).sum(axis=-1, keepdims=True)
        return ((p * (g - inner)) / tau,)

    return _record(p, (d,), backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires-grad leaf's ``grad``.

    Walks the loss's tape once in reverse. A constant loss (recorded on
    no tape) is a no-op: all gradients stay zero. Repeated calls without
    clearing grads accumulate.
    """
    if loss.data.size != 1:
        raise UsageError("backward root must be a scalar tensor")
    node = loss._node
    if node is None:
        return
    tape = node.tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for n in reversed(tape._nodes):
        g = grads.pop(id(n.out), None)
        if g is None:
            continue
        for t, gt in zip(n.inputs, n.backward(g)):
            if gt is None or not t.requires_grad:
                continue
            if t._node is not None and t._node.tape is tape:
                prev = grads.get(id(t))
                grads[id(t)] = gt if prev is None else prev + gt
            else:
                t.grad = gt.copy() if t.grad is None else t.grad + gt
