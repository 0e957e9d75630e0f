"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back to them.  Calling
:meth:`Tensor.backward` on a scalar walks that graph in reverse topological
order.  Gradients accumulate, so callers reset them with :func:`zero_grads`.
"""
from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, EvaluationError

_state = threading.local()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- binary ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), bw)


# ----------------------------------------------------------------- unary ops

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: _accumulate(a, -g))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: _accumulate(a, g * (1.0 - out * out)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: _accumulate(a, g * out * (1.0 - out)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _result(np.where(on, a.data, 0.0), (a,), lambda g: _accumulate(a, g * on))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: _accumulate(a, g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    return _result(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: _accumulate(a, g * 0.5 / out))


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); the gradient is passed only where a > floor."""
    a = as_tensor(a)
    on = a.data > floor
    return _result(np.where(on, a.data, floor), (a,), lambda g: _accumulate(a, g * on))


def log_sigmoid(a) -> Tensor:
    """Numerically stable log(sigmoid(a))."""
    a = as_tensor(a)
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    sig = np.exp(out)
    return _result(out, (a,), lambda g: _accumulate(a, g * (1.0 - sig)))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
}


def elementwise(op: str, a, b=None) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return fn(a, b)
    return fn(a)


# ------------------------------------------------------------ linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules; ``b`` may be a vector."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim >= 2 else 0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul cannot batch shapes {a.shape} and {b.shape}") from None

    def bw(g):
        if b.ndim == 1:
            if a.requires_grad:
                _accumulate(a, g[..., None] * b.data)
            if b.requires_grad:
                _accumulate(b, (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0))
            return
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _result(out, (a, b), bw)


# ---------------------------------------------------------------- reductions

def _check_nonempty(a: Tensor, axis):
    if a.size == 0:
        raise DomainError("reduction over an empty tensor")
    if axis is not None:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in axes:
            if not -a.ndim <= ax < a.ndim:
                raise DimensionError(f"axis {ax} out of range for shape {a.shape}")


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    _check_nonempty(a, axis)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _result(
        np.asarray(out, dtype=np.float64),
        (a,),
        lambda g: _accumulate(a, _expand_reduced(g, a.shape, axis, keepdims)),
    )


def _count(a: Tensor, axis) -> int:
    if axis is None:
        return a.size
    axes = axis if isinstance(axis, tuple) else (axis,)
    return int(np.prod([a.shape[ax] for ax in axes]))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    _check_nonempty(a, axis)
    n = _count(a, axis)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    return _result(
        np.asarray(out, dtype=np.float64),
        (a,),
        lambda g: _accumulate(a, _expand_reduced(g, a.shape, axis, keepdims) / n),
    )


def variance(a, axis=None, keepdims=False) -> Tensor:
    """Population variance (divides by N)."""
    a = as_tensor(a)
    _check_nonempty(a, axis)
    n = _count(a, axis)
    mu = np.mean(a.data, axis=axis, keepdims=True)
    # a rounded mean can miss a constant slice by an ulp; snap it so the result is exactly 0
    first = a.data.reshape(-1)[:1] if axis is None else np.take(a.data, [0], axis=axis)
    const = np.all(a.data == first, axis=axis, keepdims=True)
    centered = a.data - np.where(const, first, mu)
    out = np.mean(centered * centered, axis=axis, keepdims=keepdims)

    def bw(g):
        _accumulate(a, _expand_reduced(g, a.shape, axis, keepdims) * (2.0 / n) * centered)

    return _result(np.asarray(out, dtype=np.float64), (a,), bw)


def reduce(op: str, a, axis=None) -> Tensor:
    fns = {"sum": tsum, "mean": mean, "variance": variance}
    if op not in fns:
        raise ValueError(f"unknown reduction {op!r}")
    return fns[op](a, axis)


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``.

    ``mask`` (broadcastable, truthy = keep) drives excluded positions to an
    exact 0 with zero gradient.  Every slice must keep at least one entry.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(np.any(keep, axis=axis)):
            raise ContractError("softmax slice with every position masked")
        shifted = np.where(keep, x, -np.inf)
        m = np.max(shifted, axis=axis, keepdims=True)
        e = np.where(keep, np.exp(np.where(keep, x, 0.0) - m), 0.0)
    else:
        m = np.max(x, axis=axis, keepdims=True)
        e = np.exp(x - m)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        _accumulate(a, out * (g - np.sum(g * out, axis=axis, keepdims=True)))

    return _result(out, (a,), bw)


# -------------------------------------------------------------- shape / index

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: _accumulate(a, g.reshape(src)))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: _accumulate(a, np.transpose(g, inv)))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        _accumulate(a, full)

    return _result(np.array(a.data[idx], dtype=np.float64), (a,), bw)


def take(table, indices) -> Tensor:
    """Gather rows ``table[indices]`` along axis 0 (embedding lookup)."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(f"index out of range for table with {table.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accumulate(table, full)

    return _result(table.data[idx], (table,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat of an empty list")
    ref = ts[0]
    ax = axis % ref.ndim if ref.ndim else 0
    for t in ts[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise DimensionError(f"cannot concat shapes {ref.shape} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, bounds, axis=ax)):
            _accumulate(t, piece)

    return _result(out, ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"cannot stack differing shapes {sorted(shapes)}")
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        for i, t in enumerate(ts):
            _accumulate(t, np.take(g, i, axis=axis))

    return _result(out, ts, bw)


# -------------------------------------------------------------------- backward

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, each after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor requiring grad")
    order = topological_order(loss)
    # interior grads are scratch space for this pass only
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ------------------------------------------------------------------- gradcheck

@dataclass
class GradcheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    tol: float | None = None

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.tol is None or self.max_error < self.tol


def relative_error(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def gradcheck(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    eps: float = 1e-5,
    tol: float | None = None,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradcheckReport:
    """Compare tape gradients of ``f()`` against central differences.

    ``params`` are perturbed in place and restored.  With ``max_coords`` a
    random subset of coordinates per tensor is checked.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    named = params.items() if isinstance(params, dict) else (
        (p.name or f"param{i}", p) for i, p in enumerate(params)
    )
    named = list(named)
    rng = rng or np.random.default_rng(0)

    def evaluate() -> float:
        with no_grad():
            val = f()
        v = float(np.asarray(val.data).reshape(-1)[0])
        if not math.isfinite(v):
            raise EvaluationError(f"f returned non-finite value {v}")
        return v

    zero_grads(p for _, p in named)
    loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise EvaluationError("f returned a non-finite value")
    if loss.requires_grad:
        loss.backward()

    report = GradcheckReport(tol=tol)
    for name, p in named:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.flat
        size = p.data.size
        coords = np.arange(size)
        if max_coords is not None and size > max_coords:
            coords = np.sort(rng.choice(size, size=max_coords, replace=False))
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi = evaluate()
            flat[c] = orig - eps
            lo = evaluate()
            flat[c] = orig
            numeric = (hi - lo) / (2.0 * eps)
            worst = max(worst, float(relative_error(analytic.reshape(-1)[c], numeric)))
        report.errors[name] = worst
        report.checked[name] = int(coords.size)
    zero_grads(p for _, p in named)
    return report
