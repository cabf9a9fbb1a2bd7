"""Small reverse-mode autodiff engine over numpy arrays.

Only the primitives the summarizer needs are provided. Every op records
its parents and a closure that pushes the output gradient back to them;
``backward`` walks the graph in reverse topological order.

Leaves (parameters and constants) accumulate gradients across repeated
``backward`` calls; interior nodes are recomputed from scratch each call.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

GROUP_NAMES = ("content_encoder", "summary_encoder", "decoder", "discriminator")

_state = {"dtype": np.dtype(np.float32), "grad_enabled": True}


class ShapeError(ValueError):
    """Raised when an op receives operands of incompatible shapes."""


def default_dtype() -> np.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new constants and parameters."""
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate ops without recording the graph (inference)."""
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


class Value:
    """A node in the computation graph: an array, its gradient and its provenance."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _op: str = "leaf"):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(default_dtype())
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = _op
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Value{label}(shape={self.shape}, op={self.op})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __truediv__(self, other): return mul(self, 1.0 / float(other))
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return getitem(self, idx)


def as_value(x) -> Value:
    if isinstance(x, Value):
        return x
    return Value(np.asarray(x, dtype=default_dtype()))


def _accumulate(v: Value, g: np.ndarray) -> None:
    if not v.requires_grad:
        return
    if v.grad is None:
        v.grad = np.array(g, dtype=v.data.dtype, copy=True).reshape(v.data.shape)
    else:
        v.grad += g


def _result(data: np.ndarray, parents: tuple[Value, ...], op: str,
            backward: Callable[[np.ndarray], None]) -> Value:
    needs = _state["grad_enabled"] and any(p.requires_grad for p in parents)
    out = Value(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Value, b: Value) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("add", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), "mul", backward)


def sigmoid(x: Value) -> Value:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)

    def backward(g):
        _accumulate(x, g * y * (1.0 - y))

    return _result(y, (x,), "sigmoid", backward)


def tanh(x: Value) -> Value:
    y = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - y * y))

    return _result(y, (x,), "tanh", backward)


def exp(x: Value) -> Value:
    y = np.exp(x.data)

    def backward(g):
        _accumulate(x, g * y)

    return _result(y, (x,), "exp", backward)


def log(x: Value) -> Value:
    d = x.data
    with np.errstate(divide="ignore"):
        y = np.log(d)

    def backward(g):
        _accumulate(x, g / d)

    return _result(y, (x,), "log", backward)


def log_sigmoid(x: Value) -> Value:
    """log(sigmoid(x)) without overflow for large |x|."""
    d = x.data
    y = (np.minimum(d, 0.0) - np.log1p(np.exp(-np.abs(d)))).astype(d.dtype)

    def backward(g):
        e = np.exp(-np.abs(d))
        # 1 - sigmoid(x)
        comp = np.where(d >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
        _accumulate(x, g * comp)

    return _result(y, (x,), "log_sigmoid", backward)


# ---------------------------------------------------------------- softmax

def softmax(x: Value) -> Value:
    d = x.data
    e = np.exp(d - d.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _accumulate(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _result(y, (x,), "softmax", backward)


def log_softmax(x: Value) -> Value:
    d = x.data
    shifted = d - d.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        _accumulate(x, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _result(y, (x,), "log_softmax", backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Value:
    """``(..., k) @ (k, n)`` or batched ``(B, m, k) @ (B, k, n)``."""
    a, b = as_value(a), as_value(b)
    if b.data.ndim == 2:
        if a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
        y = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g @ b.data.T)
            if b.requires_grad:
                k, n = b.shape
                _accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))

        return _result(y, (a, b), "matmul", backward)

    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"matmul: unsupported operand shapes {a.shape} and {b.shape}")
    y = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, b.data.transpose(0, 2, 1)))
        if b.requires_grad:
            _accumulate(b, np.matmul(a.data.transpose(0, 2, 1), g))

    return _result(y, (a, b), "bmm", backward)


def concat(values: Sequence[Value], axis: int = -1) -> Value:
    values = [as_value(v) for v in values]
    ndim = values[0].data.ndim
    ax = axis % ndim
    for v in values[1:]:
        if v.data.ndim != ndim or any(v.shape[i] != values[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {values[0].shape} and {v.shape} on axis {axis}")
    y = np.concatenate([v.data for v in values], axis=ax)
    bounds = np.cumsum([0] + [v.shape[ax] for v in values])

    def backward(g):
        for v, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            if v.requires_grad:
                idx = [slice(None)] * ndim
                idx[ax] = slice(lo, hi)
                _accumulate(v, g[tuple(idx)])

    return _result(y, tuple(values), "concat", backward)


def stack(values: Sequence[Value], axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    for v in values[1:]:
        if v.shape != values[0].shape:
            raise ShapeError(f"stack: shapes {values[0].shape} and {v.shape} differ")
    y = np.stack([v.data for v in values], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        for v, part in zip(values, parts):
            _accumulate(v, part)

    return _result(y, tuple(values), "stack", backward)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(x: Value, idx) -> Value:
    y = x.data[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accumulate(x, full)

    return _result(np.array(y), (x,), "getitem", backward)


def reshape(x: Value, shape: tuple[int, ...]) -> Value:
    y = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _result(y, (x,), "reshape", backward)


def embedding(table: Value, ids) -> Value:
    """Gather rows of ``table`` for an integer id array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ShapeError(f"embedding: id out of range for table of shape {table.shape}")
    y = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _accumulate(table, full)

    return _result(y, (table,), "embedding", backward)


def pick(x: Value, ids) -> Value:
    """Select ``x[..., ids[...]]`` along the last axis (one entry per row)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != x.shape[:-1]:
        raise ShapeError(f"pick: index shape {ids.shape} does not match {x.shape[:-1]}")
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[-1]):
        raise ShapeError(f"pick: id out of range for last axis of size {x.shape[-1]}")
    y = np.take_along_axis(x.data, ids[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        _accumulate(x, full)

    return _result(y, (x,), "pick", backward)


# ---------------------------------------------------------------- reductions

def sum(x: Value, axis=None) -> Value:  # noqa: A001 - mirrors numpy naming
    y = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape))
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _result(np.asarray(y), (x,), "sum", backward)


def mean(x: Value, axis=None) -> Value:
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def masked_sum(x: Value, mask, axis=None) -> Value:
    mask = np.asarray(mask, dtype=x.data.dtype)
    if mask.shape != x.shape:
        raise ShapeError(f"masked_sum: mask shape {mask.shape} differs from {x.shape}")
    return sum(mul(x, Value(mask)), axis)


def masked_mean(x: Value, mask, axis=None) -> Value:
    mask = np.asarray(mask, dtype=x.data.dtype)
    count = mask.sum(axis=axis)
    if np.any(count == 0):
        raise ShapeError("masked_mean: mask selects no elements")
    return mul(masked_sum(x, mask, axis), Value(1.0 / count))


def l2norm(x: Value, axis: int = -1) -> Value:
    """Euclidean norm along ``axis``; the subgradient at the origin is taken as zero."""
    d = x.data
    y = np.sqrt((d * d).sum(axis=axis))

    def backward(g):
        safe = np.where(y > 0, y, 1.0)
        scale = np.where(y > 0, g / safe, 0.0)
        _accumulate(x, d * np.expand_dims(scale, axis))

    return _result(y, (x,), "l2norm", backward)


# ---------------------------------------------------------------- fused LSTM

def lstm_pointwise(gates: Value, c: Value, h: Value, mask=None) -> tuple[Value, Value]:
    """Gate nonlinearities and state update of an LSTM cell, fused.

    ``gates`` holds the pre-activations laid out as [input, forget, output,
    candidate]. Rows with ``mask == 0`` carry ``(h, c)`` through unchanged,
    which is how padded positions are skipped.
    """
    n = c.shape[-1]
    if gates.shape[-1] != 4 * n or h.shape != c.shape or gates.shape[:-1] != c.shape[:-1]:
        raise ShapeError(f"lstm_pointwise: gates {gates.shape} incompatible with state {c.shape}/{h.shape}")
    a = gates.data
    # sigmoid(x) = (1 + tanh(x/2)) / 2 never overflows
    sig = 0.5 + 0.5 * np.tanh(0.5 * a[..., :3 * n])
    i, f, o = sig[..., :n], sig[..., n:2 * n], sig[..., 2 * n:]
    cand = np.tanh(a[..., 3 * n:])
    c_new = f * c.data + i * cand
    tc = np.tanh(c_new)
    h_new = o * tc
    if mask is not None and not np.all(mask):
        m = np.asarray(mask, dtype=a.dtype).reshape(c.shape[:-1] + (1,))
        c_out = m * c_new + (1.0 - m) * c.data
        h_out = m * h_new + (1.0 - m) * h.data
    else:
        m = None
        c_out, h_out = c_new, h_new
    packed = np.concatenate([h_out, c_out], axis=-1)

    def backward(g):
        gh, gc = g[..., :n], g[..., n:]
        if m is not None:
            gh_new, gc_new = gh * m, gc * m
            carry_h, carry_c = gh * (1.0 - m), gc * (1.0 - m)
        else:
            gh_new, gc_new = gh, gc
            carry_h = carry_c = None
        d_o = gh_new * tc
        dc = gc_new + gh_new * o * (1.0 - tc * tc)
        d_i = dc * cand
        d_f = dc * c.data
        d_cand = dc * i
        ga = np.concatenate([
            d_i * i * (1.0 - i),
            d_f * f * (1.0 - f),
            d_o * o * (1.0 - o),
            d_cand * (1.0 - cand * cand),
        ], axis=-1)
        _accumulate(gates, ga)
        dc_prev = dc * f
        if carry_c is not None:
            dc_prev = dc_prev + carry_c
        _accumulate(c, dc_prev)
        if carry_h is not None:
            _accumulate(h, carry_h)

    out = _result(packed, (gates, c, h), "lstm_pointwise", backward)
    return getitem(out, (..., slice(0, n))), getitem(out, (..., slice(n, 2 * n)))


def lstm_cell(x: Value, h: Value, c: Value, w: Value, b: Value, mask=None, fused: bool = True):
    """One LSTM step. ``w`` maps ``[x; h]`` to the four stacked gate pre-activations.

    Gate order in ``w``/``b`` columns: input, forget, output, candidate.
    ``fused=False`` builds the same cell from elementary primitives; it is
    kept as a cross-check for the fused path.
    """
    n = h.shape[-1]
    if w.shape != (x.shape[-1] + n, 4 * n) or b.shape[-1] != 4 * n:
        raise ShapeError(f"lstm_cell: weights {w.shape}/{b.shape} do not fit input {x.shape} and state {h.shape}")
    gates = add(matmul(concat([x, h], axis=-1), w), b)
    if fused:
        h_next, c_next = lstm_pointwise(gates, c, h, mask)
        return h_next, c_next
    i = sigmoid(gates[..., :n])
    f = sigmoid(gates[..., n:2 * n])
    o = sigmoid(gates[..., 2 * n:3 * n])
    g = tanh(gates[..., 3 * n:])
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    if mask is not None:
        m = Value(np.asarray(mask, dtype=gates.data.dtype).reshape(c.shape[:-1] + (1,)))
        keep = Value(1.0 - m.data)
        c_next = add(mul(m, c_next), mul(keep, c))
        h_next = add(mul(m, h_next), mul(keep, h))
    return h_next, c_next


# ---------------------------------------------------------------- backward

def _topo_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack_: list[tuple[Value, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(root: Value) -> None:
    """Populate ``grad`` on every differentiable node reachable from the scalar ``root``.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if root.size != 1:
        raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    for node in order:
        if node._parents:
            node.grad = None
    _accumulate(root, np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------- parameters

@dataclass
class ParamGroup:
    name: str
    entries: dict[str, Value] = field(default_factory=dict)


class ParamRegistry:
    """Named parameters, each owned by exactly one of the four groups.

    Names are ``<group>.<rest>``; the prefix decides the group.
    """

    def __init__(self) -> None:
        self.groups: dict[str, ParamGroup] = {g: ParamGroup(g) for g in GROUP_NAMES}
        self._all: dict[str, Value] = {}

    def add(self, name: str, data: np.ndarray) -> Value:
        group = name.split(".", 1)[0]
        if group not in self.groups:
            raise KeyError(f"parameter {name!r} does not start with a known group name")
        if name in self._all:
            raise KeyError(f"parameter {name!r} registered twice")
        v = Value(np.ascontiguousarray(data), requires_grad=True, name=name)
        self.groups[group].entries[name] = v
        self._all[name] = v
        return v

    def __getitem__(self, name: str) -> Value:
        return self._all[name]

    def __contains__(self, name: str) -> bool:
        return name in self._all

    def __iter__(self) -> Iterator[str]:
        return iter(self._all)

    def __len__(self) -> int:
        return len(self._all)

    def items(self):
        return self._all.items()

    def group_of(self, name: str) -> str:
        return name.split(".", 1)[0]

    def select(self, groups: Iterable[str]) -> list[Value]:
        out: list[Value] = []
        for g in groups:
            out.extend(self.groups[g].entries.values())
        return out

    def zero_grad(self) -> None:
        for v in self._all.values():
            v.grad = None

    def astype(self, dtype) -> "ParamRegistry":
        clone = ParamRegistry()
        for name, v in self._all.items():
            clone.add(name, v.data.astype(dtype))
        return clone

    def copy(self) -> "ParamRegistry":
        return self.astype(None)

    def num_parameters(self) -> int:
        return int(np.sum([v.size for v in self._all.values()]))


# ---------------------------------------------------------------- gradient check

def grad_check(f: Callable[[], Value], params: Sequence[Value], eps: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``f`` rebuilds the graph from the current contents of ``params`` and
    returns a scalar. ``max_coords`` limits the number of probed coordinates
    per array (sampled with ``rng``); by default every coordinate is probed.
    Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.grad = None
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("grad_check: f is not finite at the probe point")
    backward(out)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for k in coords:
            orig = flat[k]
            flat[k] = orig + eps
            plus = float(f().data)
            flat[k] = orig - eps
            minus = float(f().data)
            flat[k] = orig
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise FloatingPointError(f"grad_check: f is not finite near {p.name or 'param'}[{k}]")
            numeric = (plus - minus) / (2.0 * eps)
            a = float(analytic.reshape(-1)[k])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    for p in params:
        p.grad = None
    return worst
