"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation appends a :class:`TapeNode` to the graph that
hangs off its output tensor. :func:`backward` collects the nodes reachable
from a scalar loss, walks them in reverse creation order and accumulates
gradients into the leaves that were created with ``requires_grad=True``.

Shapes are strict. Binary elementwise operations need identical shapes; the
only implicit expansion is a Python scalar (or a one-element tensor) combined
with a tensor. Row-wise bias addition has its own operation,
:func:`bias_add`, so shape bugs surface as :class:`ShapeError`.
"""
from __future__ import annotations

import contextlib
import contextvars
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_ids = itertools.count()
_grad_mode = contextvars.ContextVar("grad_mode", default=True)


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Run forward code without recording a tape (inference, metrics)."""
    token = _grad_mode.set(False)
    try:
        yield
    finally:
        _grad_mode.reset(token)


def is_grad_enabled() -> bool:
    return _grad_mode.get()


@dataclass(eq=False)
class TapeNode:
    op_kind: str
    parents: tuple["Tensor", ...]
    backward_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]
    output_id: int
    consumed: bool = False

    @property
    def parent_ids(self) -> tuple[int, ...]:
        return tuple(p.id for p in self.parents)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: TapeNode | None = None
        self.id = next(_ids)

    # construction helpers

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = False
        out.node = None
        out.id = next(_ids)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def grad_enabled(self) -> bool:
        return self.requires_grad or self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self) -> "Tensor":
        return mean(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(*shape: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


def identity(n: int) -> Tensor:
    return Tensor(np.eye(n, dtype=DTYPE))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=DTYPE))


def _record(op_kind: str, out_data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor._wrap(out_data)
    if _grad_mode.get() and any(p.grad_enabled for p in parents):
        out.node = TapeNode(op_kind, tuple(parents), backward_fn, out.id)
    return out


def _check_finite(op: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NonFiniteError(f"{op}: non-finite input")


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1 and t.data.ndim <= 1


def _reduce_to(g: np.ndarray, like: Tensor) -> np.ndarray:
    if g.shape == like.shape:
        return g
    # scalar operand combined with a tensor
    return np.asarray(g.sum(), dtype=DTYPE).reshape(like.shape)


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)
    _check_finite("add", a.data, b.data)

    def bw(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _record("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)
    _check_finite("sub", a.data, b.data)

    def bw(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _record("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)
    _check_finite("mul", a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g):
        return _reduce_to(g * bd, a), _reduce_to(g * ad, b)

    return _record("mul", ad * bd, (a, b), bw)


def sigmoid(x: Tensor) -> Tensor:
    _check_finite("sigmoid", x.data)
    # tanh form is overflow-free and gives exactly 0.5 at 0
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bw(g):
        return (g * y * (1.0 - y),)

    return _record("sigmoid", y, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    _check_finite("tanh", x.data)
    y = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - y * y),)

    return _record("tanh", y, (x,), bw)


def relu(x: Tensor) -> Tensor:
    _check_finite("relu", x.data)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _record("relu", np.where(mask, x.data, 0.0), (x,), bw)


def elementwise(op: str, *args) -> Tensor:
    table = {"add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh, "relu": relu}
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(table)}") from None
    return fn(*args)


# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or batched product of 3-D operands
    sharing the leading extent."""
    a, b = _as_tensor(a), _as_tensor(b)
    ok = (a.ndim == 2 and b.ndim == 2) or (a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0])
    if not ok or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _record("matmul", ad @ bd, (a, b), bw)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """x[..., n] + b[n], the one sanctioned row broadcast."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match trailing extent of {x.shape}")
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        return g, g.sum(axis=lead)

    return _record("bias_add", x.data + b.data, (x, b), bw)


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ W.T (+ b) for x[B, in], W[out, in]; fused for the hot path."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {W.shape}")
    xd, Wd = x.data, W.data
    out = xd @ Wd.T
    if b is not None:
        out += b.data

    def bw(g):
        grads = [g @ Wd, g.T @ xd]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, W) if b is None else (x, W, b)
    return _record("linear", out, parents, bw)


# reductions and normalisation

def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    if axis is None:
        def bw(g):
            return (np.broadcast_to(g, shape).copy(),)

        return _record("sum", np.asarray(x.data.sum(), dtype=DTYPE), (x,), bw)

    def bw_axis(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record("sum", x.data.sum(axis=axis), (x,), bw_axis)


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape

    def bw(g):
        return (np.full(shape, g / n, dtype=DTYPE),)

    return _record("mean", np.asarray(x.data.mean(), dtype=DTYPE), (x,), bw)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return mean(diff * diff)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis with max subtraction."""
    if x.size == 0 or x.ndim == 0:
        raise ShapeError("softmax: empty input")
    _check_finite("softmax", x.data)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax", y, (x,), bw)


# shape plumbing

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from exc

    def bw(g):
        return (g.reshape(src),)

    return _record("reshape", out, (x,), bw)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inverse),)

    return _record("transpose", np.transpose(x.data, axes), (x,), bw)


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _record("getitem", np.array(x.data[index], dtype=DTYPE), (x,), bw)


def stack(items: Sequence[Tensor], axis: int = 0) -> Tensor:
    items = [_as_tensor(t) for t in items]
    if not items:
        raise ShapeError("stack: no inputs")
    first = items[0].shape
    for t in items[1:]:
        if t.shape != first:
            raise ShapeError(f"stack: shape mismatch {first} vs {t.shape}")
    out = np.stack([t.data for t in items], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))

    return _record("stack", out, tuple(items), bw)


def concat(items: Sequence[Tensor], axis: int = -1) -> Tensor:
    items = [_as_tensor(t) for t in items]
    sizes = [t.shape[axis] for t in items]
    out = np.concatenate([t.data for t in items], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", out, tuple(items), bw)


# reverse sweep

def _collect(loss: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if t.id in seen:
            continue
        seen.add(t.id)
        order.append(t)
        if t.node is not None:
            stack_.extend(t.node.parents)
    # ids grow with creation, so descending id is a valid reverse topological order
    order.sort(key=lambda t: t.id, reverse=True)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable
    leaf with ``requires_grad``. The tape is consumed; a second call on the
    same graph raises :class:`TapeError`."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(loss.data)
            return
        raise TapeError("backward: loss is not connected to any tracked tensor")
    if loss.node.consumed:
        raise TapeError("backward: tape already consumed; rebuild the forward pass")

    order = _collect(loss)
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for t in order:
        g = grads.pop(t.id, None)
        if g is None:
            continue
        node = t.node
        if node is None:
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        if node.consumed:
            raise TapeError("backward: tape already consumed; rebuild the forward pass")
        parent_grads = node.backward_fn(g)
        node.consumed = True
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.grad_enabled:
                continue
            if p.id in grads:
                grads[p.id] = grads[p.id] + pg
            else:
                grads[p.id] = pg
        if t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest |analytic - central difference| / max(1, |analytic|) over all
    entries of ``params``. ``f`` rebuilds the scalar loss from the current
    parameter values on each call."""
    params = list(params)
    zero_grad(params)
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    zero_grad(params)

    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * h)
                err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
                if math.isnan(err):
                    return float("nan")
                worst = max(worst, err)
    return worst
