"""Dense tensors with a reverse-mode differentiation tape.

Operations only record onto a tape while one is active::

    with Tape() as tape:
        loss = (x @ w).sum()
    tape.backward(loss)          # or backward(loss)

Outside a tape context every operation runs forward-only, which is what
inference code wants.  A tape may be consumed by exactly one backward pass.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError, TapeError

DEFAULT_DTYPE = np.float64

_state = threading.local()


def _stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def current_tape() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


@dataclass
class Record:
    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered log of the differentiable operations executed while active."""

    def __init__(self) -> None:
        self.records: list[Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeError("tape already consumed by a backward pass")
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def ops(self) -> list[str]:
        return [r.op for r in self.records]

    def backward(self, loss: "Tensor") -> None:
        if loss._tape is not self:
            raise ContractError("loss was not produced on this tape")
        backward(loss)


class no_grad:
    """Suspend recording inside an enclosing tape."""

    def __enter__(self) -> None:
        _stack().append(None)

    def __exit__(self, *exc) -> None:
        _stack().pop()


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    if dtype is None:
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            return data
        dtype = DEFAULT_DTYPE
    return np.asarray(data, dtype=dtype)


class Tensor:
    """A dense row-major array that may participate in a tape."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        from .ops import matmul

        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(x, like: Optional[np.ndarray] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def record(
    op: str,
    inputs: Sequence[Tensor],
    out: np.ndarray,
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    allow_nonfinite: bool = False,
) -> Tensor:
    """Wrap ``out`` in a Tensor and log the op on the active tape.

    ``backward_fn`` receives dL/d(out) and returns one gradient (or None)
    per input.
    """
    if not allow_nonfinite and not np.isfinite(out).all():
        if all(np.isfinite(t.data).all() for t in inputs):
            raise NonFiniteError(f"{op} produced non-finite values from finite inputs")
        raise NonFiniteError(f"{op} received non-finite input")
    result = Tensor(out, dtype=out.dtype)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        if tape.consumed:
            raise TapeError("cannot record onto a consumed tape")
        result.requires_grad = True
        result._tape = tape
        tape.records.append(Record(op, tuple(inputs), result, backward_fn))
    return result


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` for every requires_grad tensor reachable from ``loss``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not produced on an active tape")
    if tape.consumed:
        raise TapeError("backward already ran on this tape; re-run the forward pass")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        _accumulate(rec.output, g)
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                holders[key] = inp
    for key, g in grads.items():
        _accumulate(holders[key], g)
    tape.records.clear()
    tape.consumed = True


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise algebra ---------------------------------------------------

def _binary_operands(a, b):
    if isinstance(a, Tensor):
        b = _wrap(b, a.data)
    else:
        a = _wrap(a, b.data)
    if a.dtype != b.dtype:
        dtype = np.result_type(a.dtype, b.dtype)
        return a, b, a.data.astype(dtype, copy=False), b.data.astype(dtype, copy=False)
    return a, b, a.data, b.data


def _check_broadcast(op, x, y):
    try:
        np.broadcast_shapes(x.shape, y.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: cannot broadcast {x.shape} with {y.shape}") from exc


def add(a, b) -> Tensor:
    a, b, x, y = _binary_operands(a, b)
    _check_broadcast("add", x, y)
    return record(
        "add", (a, b), x + y,
        lambda g: (unbroadcast(g, x.shape), unbroadcast(g, y.shape)),
    )


def add_mask(a: Tensor, mask) -> Tensor:
    """``a + mask`` where the constant mask may hold -inf sentinels."""
    m = np.asarray(mask, dtype=a.dtype)
    _check_broadcast("add_mask", a.data, m)
    return record("add_mask", (a,), a.data + m, lambda g: (unbroadcast(g, a.shape),),
                  allow_nonfinite=True)


def sub(a, b) -> Tensor:
    a, b, x, y = _binary_operands(a, b)
    _check_broadcast("sub", x, y)
    return record(
        "sub", (a, b), x - y,
        lambda g: (unbroadcast(g, x.shape), unbroadcast(-g, y.shape)),
    )


def mul(a, b) -> Tensor:
    a, b, x, y = _binary_operands(a, b)
    _check_broadcast("mul", x, y)
    return record(
        "mul", (a, b), x * y,
        lambda g: (unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)),
    )


def div(a, b) -> Tensor:
    a, b, x, y = _binary_operands(a, b)
    _check_broadcast("div", x, y)
    out = x / y
    return record(
        "div", (a, b), out,
        lambda g: (unbroadcast(g / y, x.shape), unbroadcast(-g * out / y, y.shape)),
    )


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported by record()
        out = np.exp(a.data)
    return record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return record("log", (a,), out, lambda g: (g / x,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return record("clip", (a,), np.clip(x, lo, hi), lambda g: (g * inside,))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", (a,), np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from exc
    return record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return record("transpose", (a,), out, lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return record("getitem", (a,), np.array(out, copy=True), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrays = [t.data for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return record("concat", tuple(tensors), out, lambda g: tuple(np.split(g, bounds, axis=axis)))
