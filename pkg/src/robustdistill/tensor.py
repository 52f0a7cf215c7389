"""Tape-based reverse-mode autodiff over dense numpy arrays.

Operations executed inside an active :class:`Tape` context are recorded when
at least one input requires a gradient.  ``backward`` then walks the tape in
reverse and returns gradients for every leaf that was recorded.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> tape.gradient(loss, [x])[0]
    array([2., 4., 6.], dtype=float32)
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "DimensionError",
    "DomainError",
    "ContractError",
    "NonFiniteError",
    "apply_primitive",
    "backward",
    "finite_difference_gradient",
    "softmax_t",
    "default_dtype",
    "get_default_dtype",
    "PRIMITIVES",
]


class DimensionError(ValueError):
    """Input shapes are incompatible with a primitive's shape rule."""


class DomainError(ValueError):
    """A primitive was evaluated outside its mathematical domain."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


_ids = itertools.count()
_local = threading.local()
_dtype = np.dtype(np.float32)


def get_default_dtype() -> np.dtype:
    return _dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the float width used for new tensors (e.g. float64 for grad checks)."""
    global _dtype
    old, _dtype = _dtype, np.dtype(dtype)
    try:
        yield
    finally:
        _dtype = old


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id", "name")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the Tensor's reflected method

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _dtype
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def values(self) -> list[float]:
        """Row-major flat view of the payload."""
        return self.data.ravel().tolist()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{grad})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar; every method routes through apply_primitive
    def __add__(self, other):
        return apply_primitive("add", self, other)

    def __radd__(self, other):
        return apply_primitive("add", other, self)

    def __sub__(self, other):
        return apply_primitive("sub", self, other)

    def __rsub__(self, other):
        return apply_primitive("sub", other, self)

    def __mul__(self, other):
        return apply_primitive("mul", self, other)

    def __rmul__(self, other):
        return apply_primitive("mul", other, self)

    def __truediv__(self, other):
        return apply_primitive("div", self, other)

    def __rtruediv__(self, other):
        return apply_primitive("div", other, self)

    def __neg__(self):
        return apply_primitive("neg", self)

    def __matmul__(self, other):
        return apply_primitive("matmul", self, other)

    def sum(self, axis=None, keepdims=False):
        return apply_primitive("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply_primitive("mean", self, axis=axis, keepdims=keepdims)

    def max(self, axis=-1, keepdims=False):
        return apply_primitive("max", self, axis=axis, keepdims=keepdims)

    def relu(self):
        return apply_primitive("relu", self)

    def exp(self):
        return apply_primitive("exp", self)

    def log(self):
        return apply_primitive("log", self)

    def clamp(self, lo=None, hi=None):
        return apply_primitive("clamp", self, lo=lo, hi=hi)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", self, shape=shape)

    def gather(self, index):
        return apply_primitive("gather", self, index=index)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output_id: int
    vjp: Callable[..., tuple[np.ndarray | None, ...]]
    needs: tuple[bool, ...]


@dataclass
class Tape:
    """Append-only record of differentiable primitive applications.

    A tape belongs to the thread that entered it.  Only the innermost active
    tape records.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def leaves(self) -> dict[int, Tensor]:
        produced = {n.output_id for n in self.nodes}
        out: dict[int, Tensor] = {}
        for n in self.nodes:
            for t in n.inputs:
                if t.requires_grad and t.node_id not in produced:
                    out.setdefault(t.node_id, t)
        return out

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        return backward(self, loss)

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of ``loss`` for each source, zero-filled when unreachable."""
        grads = backward(self, loss)
        return [grads.get(s.node_id, np.zeros_like(s.data)) for s in sources]


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on the current thread."""
    stack = _tape_stack()
    saved = stack[:]
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep over ``tape``; returns ``node_id -> gradient`` for every leaf.

    Leaves that the loss does not depend on receive zero arrays.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g, node.needs)):
            if gi is None or not t.requires_grad:
                continue
            prev = grads.get(t.node_id)
            grads[t.node_id] = gi if prev is None else prev + gi
    leaves = tape.leaves()
    out = {}
    for nid, t in leaves.items():
        g = grads.get(nid)
        out[nid] = np.zeros_like(t.data) if g is None else g.astype(t.dtype, copy=False).reshape(t.shape)
    if loss.requires_grad and loss.node_id not in out and not any(n.output_id == loss.node_id for n in tape.nodes):
        out[loss.node_id] = np.ones_like(loss.data)
    return out


# ---------------------------------------------------------------------------
# primitives

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _bshape(a: np.ndarray, b: np.ndarray, kind: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _add(a, b):
    _bshape(a, b, "add")
    return a + b, lambda g, needs=None: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _sub(a, b):
    _bshape(a, b, "sub")
    return a - b, lambda g, needs=None: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _mul(a, b):
    _bshape(a, b, "mul")
    return a * b, lambda g, needs=None: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _div(a, b):
    _bshape(a, b, "div")
    if np.any(b == 0):
        raise DomainError("div: zero denominator")
    out = a / b
    return out, lambda g, needs=None: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))


def _neg(a):
    return -a, lambda g, needs=None: (-g,)


def _matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b, lambda g, needs: (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)


def _relu(a):
    mask = a > 0
    return np.where(mask, a, 0).astype(a.dtype, copy=False), lambda g, needs=None: (g * mask,)


def _exp(a):
    out = np.exp(a)
    return out, lambda g, needs=None: (g * out,)


def _log(a):
    if np.any(a <= 0):
        raise DomainError(f"log: non-positive input (min {a.min()!r})")
    return np.log(a), lambda g, needs=None: (g / a,)


def _sum(a, axis=None, keepdims=False):
    out = a.sum(axis=axis, keepdims=keepdims)

    def vjp(g, needs=None):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return out, vjp


def _mean(a, axis=None, keepdims=False):
    out = a.mean(axis=axis, keepdims=keepdims)
    n = a.size // max(out.size, 1)

    def vjp(g, needs=None):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).astype(a.dtype),)

    return out, vjp


def _max(a, axis=-1, keepdims=False):
    idx = np.argmax(a, axis=axis)
    out = np.take_along_axis(a, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g, needs=None):
        if not keepdims:
            g = np.expand_dims(g, axis)
        ga = np.zeros_like(a)
        np.put_along_axis(ga, np.expand_dims(idx, axis), g, axis=axis)
        return (ga,)

    return out, vjp


def _clamp(a, lo=None, hi=None):
    out = np.clip(a, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a >= lo
    if hi is not None:
        inside &= a <= hi
    return out, lambda g, needs=None: (g * inside,)


def _reshape(a, shape=()):
    try:
        out = a.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return out, lambda g, needs=None: (g.reshape(a.shape),)


def _gather(a, index=None):
    """Pick ``a[i, index[i]]`` along the last axis."""
    index = np.asarray(index, dtype=np.intp)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise DimensionError(f"gather: values {a.shape} vs index {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= a.shape[1]):
        raise DimensionError(f"gather: index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])
    out = a[rows, index]

    def vjp(g, needs=None):
        ga = np.zeros_like(a)
        ga[rows, index] = g
        return (ga,)

    return out, vjp


def _conv2d(x, w, stride=1, padding=0):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d: input {x.shape} vs kernel {w.shape}")
    if stride not in (1, 2):
        raise DimensionError(f"conv2d: stride must be 1 or 2, got {stride}")
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < k or wp < k:
        raise DimensionError(f"conv2d: kernel {k} larger than padded input {(hp, wp)}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    # channel-last padded copy so each im2col slab is a contiguous run of channels
    xp = np.zeros((n, hp, wp, c), dtype=x.dtype)
    xp[:, padding:padding + h, padding:padding + wd, :] = x.transpose(0, 2, 3, 1)
    cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]
    mat = cols.reshape(n * ho * wo, k * k * c)
    wmat = w.transpose(0, 2, 3, 1).reshape(o, k * k * c)
    out = (mat @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def vjp(g, needs=(True, True)):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (g2.T @ mat).reshape(o, k, k, c).transpose(0, 3, 1, 2) if needs[1] else None
        if not needs[0]:
            return None, gw
        gcols = (g2 @ wmat).reshape(n, ho, wo, k, k, c)
        gxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, padding:padding + h, padding:padding + wd, :].transpose(0, 3, 1, 2)
        return gx, gw

    return np.ascontiguousarray(out), vjp


def _avgpool2d(x, size=2):
    n, c, h, w = x.shape
    if h % size or w % size:
        raise DimensionError(f"avgpool2d: {size} does not divide spatial shape {(h, w)}")
    out = x.reshape(n, c, h // size, size, w // size, size).mean(axis=(3, 5))

    def vjp(g, needs=None):
        g = np.repeat(np.repeat(g, size, axis=2), size, axis=3) / (size * size)
        return (g.astype(x.dtype, copy=False),)

    return out, vjp


PRIMITIVES: dict[str, Callable] = {
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "div": _div,
    "neg": _neg,
    "matmul": _matmul,
    "conv2d": _conv2d,
    "avgpool2d": _avgpool2d,
    "relu": _relu,
    "exp": _exp,
    "log": _log,
    "sum": _sum,
    "mean": _mean,
    "max": _max,
    "clamp": _clamp,
    "reshape": _reshape,
    "gather": _gather,
}


def apply_primitive(kind: str, *inputs, **attrs) -> Tensor:
    """Evaluate primitive ``kind`` and record it on the active tape if needed."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive {kind!r}; known: {sorted(PRIMITIVES)}") from None
    like = next((t for t in inputs if isinstance(t, Tensor)), None)
    tensors = tuple(_as_tensor(t, like) for t in inputs)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out_data, vjp = fn(*(t.data for t in tensors), **attrs)
    out_data = np.asarray(out_data)
    if like is not None and out_data.dtype != like.dtype:
        out_data = out_data.astype(like.dtype)
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{kind}: non-finite output")
    needs_grad = any(t.requires_grad for t in tensors)
    tape = _active_tape() if needs_grad else None
    out = Tensor(out_data, requires_grad=tape is not None, dtype=out_data.dtype)
    if tape is not None:
        tape.record(Node(kind, tensors, out.node_id, vjp, tuple(t.requires_grad for t in tensors)))
    return out


# convenience wrappers used by the model and loss code

def matmul(a, b):
    return apply_primitive("matmul", a, b)


def conv2d(x, w, stride: int = 1, padding: int = 0):
    return apply_primitive("conv2d", x, w, stride=stride, padding=padding)


def avgpool2d(x, size: int = 2):
    return apply_primitive("avgpool2d", x, size=size)


def relu(x):
    return apply_primitive("relu", x)


def softmax_t(logits, tau: float = 1.0) -> Tensor:
    """Row-wise ``softmax(logits / tau)`` over the last axis, max-shifted for stability."""
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    logits = _as_tensor(logits)
    if logits.data.ndim == 0 or logits.shape[-1] < 2:
        raise DimensionError(f"softmax_t needs a class axis of size >= 2, got shape {logits.shape}")
    z = logits if tau == 1 else logits / tau
    shift = np.max(z.data, axis=-1, keepdims=True)
    e = (z - shift).exp()
    return e / e.sum(axis=-1, keepdims=True)


def finite_difference_gradient(f: Callable[[Tensor], Tensor | float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, evaluated in float64."""
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)

    def evaluate(arr):
        with default_dtype(np.float64), no_grad():
            val = f(Tensor(arr, dtype=np.float64))
        return float(val.data if isinstance(val, Tensor) else val)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = evaluate(base)
        flat[i] = orig - h
        down = evaluate(base)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad
