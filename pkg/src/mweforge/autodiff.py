"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Operations record themselves on the active :class:`Tape` (entered with a
``with`` block). Leaves are tensors created with ``requires_grad=True``;
everything else is a constant. Backward walks the tape in exact reverse
append order and accumulates gradients with ``+=``.

Broadcasting is deliberately absent except for :func:`add_bias`.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "matmul",
    "add",
    "add_bias",
    "mul",
    "scale",
    "sigmoid",
    "tanh",
    "transpose",
    "reshape",
    "tsum",
    "embed",
    "shift",
    "take",
    "detach",
    "softmax",
    "softmax_cross_entropy",
    "custom_node",
    "grad_check",
]


class ShapeError(ValueError):
    pass


class Tensor:
    """A dense array, optionally a differentiable leaf."""

    __slots__ = ("data", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    check_shapes: bool = False


_active = threading.local()


def _current_tape() -> Tape | None:
    stack = getattr(_active, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Append-only record of operations for one forward/backward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.grads: dict[int, np.ndarray] = {}
        self._leaves: dict[int, Tensor] = {}
        self._done = False

    def __enter__(self) -> Tape:
        stack = getattr(_active, "stack", None)
        if stack is None:
            stack = _active.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.stack.pop()

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or t._tape is self

    def record(self, op, value, inputs, backward, check_shapes=False) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.data = value
        out.requires_grad = False
        out.name = None
        out._tape = self
        for t in inputs:
            if t.requires_grad:
                self._leaves.setdefault(id(t), t)
        self.nodes.append(Node(op, tuple(inputs), out, backward, check_shapes))
        return out

    def reset(self) -> None:
        self.nodes.clear()
        self.grads.clear()
        self._leaves.clear()
        self._done = False

    def backward(self, loss: Tensor, wrt: Sequence[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
        """Propagate d(loss)/d(.) back to the leaves.

        Returns a mapping leaf -> gradient array. With ``wrt`` the mapping
        covers exactly those tensors (zeros for ones the loss never touched);
        otherwise it covers every leaf recorded on this tape.
        """
        if self._done:
            raise RuntimeError("backward already ran on this tape; call reset() first")
        if loss.data.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        if loss._tape is not self and not loss.requires_grad:
            raise RuntimeError("loss was not produced on this tape")
        self._done = True
        grads = self.grads
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            in_grads = node.backward(g)
            if len(in_grads) != len(node.inputs):
                raise RuntimeError(f"{node.op}: backward returned {len(in_grads)} gradients for {len(node.inputs)} inputs")
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not self.tracks(t):
                    continue
                gi = np.asarray(gi, dtype=np.float64)
                if gi.shape != t.data.shape:
                    if node.check_shapes:
                        raise ShapeError(
                            f"{node.op}: custom backward produced gradient of shape {gi.shape} "
                            f"for an input of shape {t.data.shape}"
                        )
                    raise AssertionError(f"{node.op}: internal gradient shape {gi.shape} != {t.data.shape}")
                prev = grads.get(id(t))
                grads[id(t)] = gi.copy() if prev is None else prev + gi
        targets = list(wrt) if wrt is not None else list(self._leaves.values())
        return {t: grads.get(id(t), np.zeros_like(t.data)) for t in targets}


def _record(op, value, inputs, backward, check_shapes=False) -> Tensor:
    tape = _current_tape()
    if tape is None or not any(tape.tracks(t) for t in inputs):
        return Tensor(value)
    return tape.record(op, value, inputs, backward, check_shapes)


def _require_same(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- primitive operations ---------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _record("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same("add", a, b)
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(x, b) -> Tensor:
    """Add a vector of length ``x.shape[-1]`` to every row of ``x``."""
    x, b = as_tensor(x), as_tensor(b)
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit rows of {x.shape}")
    axes = tuple(range(x.data.ndim - 1))
    return _record("add_bias", x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same("mul", a, b)
    A, B = a.data, b.data
    return _record("mul", A * B, (a, b), lambda g: (g * B, g * A))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _record("scale", x.data * c, (x,), lambda g: (g * c,))


def sigmoid(x, k: float = 1.0) -> Tensor:
    """Logistic function ``1 / (1 + exp(-k x))``."""
    x = as_tensor(x)
    k = float(k)
    s = _sigmoid(k * x.data)
    return _record("sigmoid", s, (x,), lambda g: (g * k * s * (1.0 - s),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got {x.shape}")
    return _record("transpose", x.data.T.copy(), (x,), lambda g: (g.T,))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def tsum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return _record("sum", np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % x.data.ndim
    return _record(
        "sum",
        x.data.sum(axis=ax),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),),
    )


def embed(table, ids) -> Tensor:
    """Gather rows of ``table`` for an integer array ``ids`` of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embed: token id out of range for vocabulary of size {table.shape[0]}")
    flat = ids.reshape(-1)

    def back(g):
        out = np.zeros_like(table.data)
        np.add.at(out, flat, g.reshape(flat.size, -1))
        return (out,)

    return _record("embed", table.data[ids], (table,), back)


def shift(x, offset: int, axis: int = 1) -> Tensor:
    """``out[..., i, ...] = x[..., i + offset, ...]`` with zeros past the ends."""
    x = as_tensor(x)
    ax = axis % x.data.ndim
    n = x.shape[ax]

    def moved(a, off):
        out = np.zeros_like(a)
        if abs(off) >= n:
            return out
        src = [slice(None)] * a.ndim
        dst = [slice(None)] * a.ndim
        if off >= 0:
            src[ax], dst[ax] = slice(off, n), slice(0, n - off)
        else:
            src[ax], dst[ax] = slice(0, n + off), slice(-off, n)
        out[tuple(dst)] = a[tuple(src)]
        return out

    return _record("shift", moved(x.data, offset), (x,), lambda g: (moved(g, -offset),))


def take(x, index: int, axis: int) -> Tensor:
    x = as_tensor(x)
    ax = axis % x.data.ndim
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[ax] = index
        out[tuple(sl)] = g
        return (out,)

    return _record("take", np.take(x.data, index, axis=ax), (x,), back)


def detach(x) -> Tensor:
    return Tensor(as_tensor(x).data)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, gold, mask=None) -> tuple[Tensor, np.ndarray]:
    """Mean negative log-likelihood of ``gold`` class indices under softmax(logits).

    ``mask`` (0/1 per row) excludes rows from the mean. Returns the scalar loss
    tensor and the row probabilities.
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be n x c, got {logits.shape}")
    n, c = logits.shape
    gold = np.asarray(gold, dtype=np.int64).reshape(-1)
    if gold.shape[0] != n:
        raise ShapeError(f"softmax_cross_entropy: {gold.shape[0]} gold labels for {n} rows")
    if n == 0:
        raise ShapeError("softmax_cross_entropy: no rows")
    w = np.ones(n) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    live = w > 0
    if np.any(gold[live] < 0) or np.any(gold[live] >= c):
        raise IndexError(f"softmax_cross_entropy: gold index out of range for {c} classes")
    count = w.sum()
    if count <= 0:
        raise ShapeError("softmax_cross_entropy: mask selects no rows")
    safe_gold = np.where(live, gold, 0)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    probs = np.exp(logp)
    nll = -logp[np.arange(n), safe_gold]
    loss = np.array((w * nll).sum() / count)

    def back(g):
        d = probs.copy()
        d[np.arange(n), safe_gold] -= 1.0
        return (d * (w / count)[:, None] * g,)

    return _record("softmax_cross_entropy", loss, (logits,), back), probs


def custom_node(inputs: Sequence[Tensor], value, backward, name: str = "custom") -> Tensor:
    """Insert a precomputed ``value`` whose gradient rule is ``backward``.

    ``backward(g)`` receives the upstream gradient and must return one
    gradient (or None) per input. It is used verbatim; nothing is
    differentiated through the code that produced ``value``.
    """
    inputs = tuple(as_tensor(t) for t in inputs)
    return _record(name, np.asarray(value, dtype=np.float64), inputs, backward, check_shapes=True)


# -- verification -----------------------------------------------------------


def grad_check(f: Callable[..., Tensor], params, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(*params)`` must build a scalar loss from the given leaf tensors. The
    error per coordinate is ``|a - b| / max(1e-8, |a| + |b|)``.
    """
    if isinstance(params, Tensor):
        params = [params]
    params = list(params)
    with Tape() as tape:
        loss = f(*params)
        analytic = tape.backward(loss, params)

    def value() -> float:
        v = float(np.asarray(f(*params).data).reshape(-1)[0])
        if not np.isfinite(v):
            raise FloatingPointError("grad_check: objective is not finite")
        return v

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        a_flat = analytic[p].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = value()
            flat[i] = orig - eps
            down = value()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
