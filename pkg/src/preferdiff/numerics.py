"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record onto the innermost active :class:`Tape` whenever one of
their inputs requires a gradient. Outside a tape everything is plain numpy
arithmetic, which is what the sampler and the evaluator rely on.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "TapeError",
    "apply",
    "backward",
    "finite_difference_gradient",
    "relative_error",
    "PRIMITIVES",
]


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An n-d array of float64 values, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "_tape", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and 0 in arr.shape:
            raise ShapeError(f"empty tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; everything funnels through the primitive table
    def __add__(self, other):
        return apply("add", self, other)

    def __radd__(self, other):
        return apply("add", other, self)

    def __sub__(self, other):
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("sub", other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return apply("scale", self, factor=other)
        return apply("mul", self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return apply("scale", self, factor=1.0 / other)
        return apply("div", self, other)

    def __neg__(self):
        return apply("scale", self, factor=-1.0)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __rmatmul__(self, other):
        return apply("matmul", other, self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; operations executed inside the block whose
    inputs require gradients are appended in execution order, which is a
    valid topological order by construction.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable, str]] = []
        self._used = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple, vjp: Callable, kind: str):
        out.requires_grad = True
        out._tape = self
        self.records.append((out, inputs, vjp, kind))

    def reset(self):
        self.records.clear()
        self._used = False

    def backward(self, output: Tensor, wrt: Iterable[Tensor] | None = None) -> dict:
        if output.size != 1:
            raise TapeError(f"backward needs a scalar output, got shape {output.shape}")
        if output._tape is not self:
            raise TapeError("output was not recorded on this tape (no requires_grad input reached it)")
        if self._used:
            raise TapeError("backward already ran on this tape; call reset() first")
        self._used = True

        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        leaves: dict[int, Tensor] = {}
        for out, inputs, vjp, _ in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._tape is None:
                    leaves[id(inp)] = inp
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        if wrt is None:
            return {leaf: Tensor(grads[k]) for k, leaf in leaves.items()}
        result = {}
        for leaf in wrt:
            g = grads.get(id(leaf))
            result[leaf] = Tensor(np.zeros_like(leaf.data) if g is None else g)
        return result


def backward(output: Tensor, wrt: Iterable[Tensor] | None = None) -> dict:
    """Gradients of scalar ``output`` with respect to the leaves it depends on.

    With ``wrt`` given, every listed leaf gets an entry (zeros when the leaf
    is not on a path to ``output``).
    """
    if output.size != 1:
        raise TapeError(f"backward needs a scalar output, got shape {output.shape}")
    if output._tape is None:
        raise TapeError("output is not reachable from any requires_grad leaf under an active tape")
    return output._tape.backward(output, wrt)


# ---------------------------------------------------------------------------
# primitives

PRIMITIVES: dict[str, Callable] = {}


def _primitive(name):
    def register(fn):
        PRIMITIVES[name] = fn
        return fn

    return register


def apply(kind: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    if kind == "concat":
        tensors = tuple(_as_tensor(x) for x in (inputs[0] if len(inputs) == 1 and isinstance(inputs[0], (list, tuple)) else inputs))
    else:
        tensors = tuple(_as_tensor(x) for x in inputs)
    value, vjp = fn(*tensors, **kwargs)
    out = Tensor(value)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in tensors):
        tape.record(out, tensors, vjp, kind)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not conform") from None


@_primitive("add")
def _add(a, b):
    _broadcast_check("add", a, b)
    return a.data + b.data, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@_primitive("sub")
def _sub(a, b):
    _broadcast_check("sub", a, b)
    return a.data - b.data, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


@_primitive("mul")
def _mul(a, b):
    _broadcast_check("mul", a, b)
    return a.data * b.data, lambda g: (
        _unbroadcast(g * b.data, a.shape),
        _unbroadcast(g * a.data, b.shape),
    )


@_primitive("div")
def _div(a, b):
    _broadcast_check("div", a, b)
    out = a.data / b.data
    return out, lambda g: (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * out / b.data, b.shape),
    )


@_primitive("scale")
def _scale(a, *, factor: float):
    f = float(factor)
    return a.data * f, lambda g: (g * f,)


@_primitive("matmul")
def _matmul(a, b):
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    A = a.data if a.ndim > 1 else a.data[None, :]
    B = b.data if b.ndim > 1 else b.data[:, None]
    out = A @ B

    def vjp(g):
        G = g
        if b.ndim == 1:
            G = G[..., None]
        if a.ndim == 1:
            G = G[..., None, :]
        ga = _unbroadcast(G @ np.swapaxes(B, -1, -2), A.shape).reshape(a.shape)
        gb = _unbroadcast(np.swapaxes(A, -1, -2) @ G, B.shape).reshape(b.shape)
        return ga, gb

    if b.ndim == 1:
        out = out[..., 0]
    if a.ndim == 1:
        out = out[..., 0, :] if b.ndim > 1 else out[..., 0]
    return out, vjp


@_primitive("concat")
def _concat(*xs, axis: int = -1):
    shapes = [x.shape for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {shapes} do not conform on axis {axis}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return out, vjp


def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


@_primitive("sum")
def _sum(a, *, axis=None):
    out = a.data.sum(axis=axis)
    return out, lambda g: (np.array(_expand_reduced(g, a.shape, axis)),)


@_primitive("mean")
def _mean(a, *, axis=None):
    out = a.data.mean(axis=axis)
    n = a.size if axis is None else a.shape[axis]
    return out, lambda g: (np.array(_expand_reduced(g, a.shape, axis)) / n,)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@_primitive("sigmoid")
def _sigmoid(a):
    s = _stable_sigmoid(np.atleast_1d(a.data)).reshape(a.shape)
    return s, lambda g: (g * s * (1.0 - s),)


@_primitive("softplus")
def _softplus(a):
    x = a.data
    out = np.logaddexp(0.0, x)
    s = _stable_sigmoid(np.atleast_1d(x)).reshape(a.shape)
    return out, lambda g: (g * s,)


@_primitive("tanh")
def _tanh(a):
    out = np.tanh(a.data)
    return out, lambda g: (g * (1.0 - out * out),)


@_primitive("square")
def _square(a):
    return a.data * a.data, lambda g: (2.0 * g * a.data,)


@_primitive("sqrt")
def _sqrt(a):
    out = np.sqrt(a.data)
    return out, lambda g: (g * 0.5 / out,)


@_primitive("abs")
def _abs(a):
    return np.abs(a.data), lambda g: (g * np.sign(a.data),)


@_primitive("huber")
def _huber(a, *, delta: float = 1.0):
    x = a.data
    small = np.abs(x) <= delta
    out = np.where(small, 0.5 * x * x, delta * (np.abs(x) - 0.5 * delta))
    return out, lambda g: (g * np.where(small, x, delta * np.sign(x)),)


@_primitive("exp")
def _exp(a):
    out = np.exp(a.data)
    return out, lambda g: (g * out,)


def _norms(x, axis):
    n = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    if np.any(n == 0.0):
        raise ValueError("zero-norm operand")
    return n


@_primitive("l2norm")
def _l2norm(a, *, axis=-1):
    n = _norms(a.data, axis)
    return np.squeeze(n, axis=axis), lambda g: (np.expand_dims(g, axis) * a.data / n,)


@_primitive("dot")
def _dot(a, b, *, axis=-1):
    if a.shape != b.shape:
        raise ShapeError(f"dot: shapes {a.shape} and {b.shape} do not conform")
    out = (a.data * b.data).sum(axis=axis)
    return out, lambda g: (np.expand_dims(g, axis) * b.data, np.expand_dims(g, axis) * a.data)


@_primitive("cosine")
def _cosine(a, b, *, axis=-1):
    if a.shape != b.shape:
        raise ShapeError(f"cosine: shapes {a.shape} and {b.shape} do not conform")
    na = _norms(a.data, axis)
    nb = _norms(b.data, axis)
    cos = (a.data * b.data).sum(axis=axis, keepdims=True) / (na * nb)

    def vjp(g):
        g = np.expand_dims(g, axis)
        ga = g * (b.data / (na * nb) - cos * a.data / (na * na))
        gb = g * (a.data / (na * nb) - cos * b.data / (nb * nb))
        return ga, gb

    return np.squeeze(cos, axis=axis), vjp


@_primitive("take")
def _take(table, idx):
    # idx arrives as a float tensor; cast back to integer row ids
    rows = idx.data.astype(np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= table.shape[0]):
        raise IndexError(f"take: row index out of range for table with {table.shape[0]} rows")
    out = table.data[rows]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, rows, g)
        return gt, None

    return out, vjp


@_primitive("reshape")
def _reshape(a, *, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return out, lambda g: (g.reshape(a.shape),)


@_primitive("transpose")
def _transpose(a, *, axes=None):
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return out, lambda g: (np.transpose(g, inv),)


@_primitive("select")
def _select(a, *, index: int, axis: int = 0):
    out = np.take(a.data, index, axis=axis)

    def vjp(g):
        ga = np.zeros_like(a.data)
        sl = [slice(None)] * a.ndim
        sl[axis] = index
        ga[tuple(sl)] = g
        return (ga,)

    return out, vjp


@_primitive("softmax")
def _softmax(a, *, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return s, lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),)


# thin functional wrappers -----------------------------------------------------

def add(a, b): return apply("add", a, b)
def sub(a, b): return apply("sub", a, b)
def mul(a, b): return apply("mul", a, b)
def div(a, b): return apply("div", a, b)
def scale(a, factor): return apply("scale", a, factor=factor)
def matmul(a, b): return apply("matmul", a, b)
def concat(xs: Sequence, axis=-1): return apply("concat", list(xs), axis=axis)
def tsum(a, axis=None): return apply("sum", a, axis=axis)
def mean(a, axis=None): return apply("mean", a, axis=axis)
def sigmoid(a): return apply("sigmoid", a)
def softplus(a): return apply("softplus", a)
def tanh(a): return apply("tanh", a)
def square(a): return apply("square", a)
def sqrt(a): return apply("sqrt", a)
def tabs(a): return apply("abs", a)
def huber(a, delta=1.0): return apply("huber", a, delta=delta)
def exp(a): return apply("exp", a)
def l2norm(a, axis=-1): return apply("l2norm", a, axis=axis)
def dot(a, b, axis=-1): return apply("dot", a, b, axis=axis)
def cosine(a, b, axis=-1): return apply("cosine", a, b, axis=axis)
def take(table, idx): return apply("take", table, np.asarray(idx, dtype=np.float64))
def reshape(a, shape): return apply("reshape", a, shape=tuple(shape))
def transpose(a, axes=None): return apply("transpose", a, axes=axes)
def select(a, index, axis=0): return apply("select", a, index=index, axis=axis)
def softmax(a, axis=-1): return apply("softmax", a, axis=axis)


# gradient checking --------------------------------------------------------------

def finite_difference_gradient(f: Callable, x, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = base.reshape(-1)
    grad = np.empty_like(flat)

    def evaluate(arr):
        val = f(Tensor(arr.reshape(base.shape)))
        val = float(val.item() if isinstance(val, Tensor) else val)
        if not np.isfinite(val):
            raise FloatingPointError("non-finite function value during finite differencing")
        return val

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = evaluate(flat)
        flat[i] = orig - h
        down = evaluate(flat)
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return Tensor(grad.reshape(base.shape))


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    a = np.asarray(analytic.data if isinstance(analytic, Tensor) else analytic, dtype=np.float64)
    n = np.asarray(numeric.data if isinstance(numeric, Tensor) else numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
