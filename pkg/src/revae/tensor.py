"""Dense float64 tensors with recorded-tape reverse-mode differentiation.

The tape is freshly allocated per forward pass and records one node per
primitive operation, in construction order, so parents always precede
children. ``Tape.backward`` walks the node list in strictly decreasing
index order and accumulates gradients additively across fan-out.

Only what a dense MLP model needs is implemented: elementwise arithmetic
and activations, 2-D matmul, axis reductions, reshapes, concatenation and
slicing. Everything is float64.

A tape and its tensors belong to one worker at a time; independent tapes
may run in parallel (gradients merge additively), but a single tape is
never shared mutably.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "ShapeMismatch",
    "DomainError",
    "AxisOutOfRange",
    "NotScalar",
    "NotOnTape",
    "set_checked",
    "checked",
    "is_checked",
    "detach",
    "concat",
    "logsumexp",
    "softmax",
    "finite_diff_check",
]


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Input outside an op's domain (log of non-positive, division by zero)."""


class AxisOutOfRange(IndexError):
    """Reduction or slicing axis does not exist for the given shape."""


class NotScalar(ValueError):
    """backward() requires a scalar (single-element) loss tensor."""


class NotOnTape(ValueError):
    """backward() requires a tensor recorded on an active tape."""


# Checked mode guards creation against NaN/Inf and enforces op domains.
# Training runs unchecked for speed; tests flip it on.
_CHECKED = False


def set_checked(flag: bool) -> None:
    global _CHECKED
    _CHECKED = bool(flag)


def is_checked() -> bool:
    return _CHECKED


class checked:
    """Context manager enabling checked mode within a block."""

    def __init__(self, flag: bool = True):
        self.flag = flag

    def __enter__(self):
        self.prev = _CHECKED
        set_checked(self.flag)
        return self

    def __exit__(self, *exc):
        set_checked(self.prev)
        return False


_ACTIVE_TAPE: Optional["Tape"] = None


class _Node:
    """One recorded op: kind tag, parent node ids, and a backward closure.

    The closure carries whatever forward locals the backward rule needs and
    maps the output gradient to one gradient array per parent (or None for
    parents that do not require gradient).
    """

    __slots__ = ("kind", "parents", "backward")

    def __init__(self, kind: str, parents: tuple, backward: Optional[Callable]):
        self.kind = kind
        self.parents = parents
        self.backward = backward


class Tape:
    """Append-only record of a forward pass, usable as a context manager."""

    def __init__(self):
        self._nodes: list[_Node] = []
        # Leaf tensors are adopted lazily on first use; keep a strong ref so
        # id() keys stay valid for the tape's lifetime.
        self._leaves: dict[int, tuple["Tensor", int]] = {}

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, kind: str, parents: tuple, backward: Optional[Callable]) -> int:
        self._nodes.append(_Node(kind, parents, backward))
        return len(self._nodes) - 1

    def _adopt_leaf(self, t: "Tensor") -> int:
        """Assign a leaf node to a grad-requiring tensor, memoized per tape."""
        entry = self._leaves.get(id(t))
        if entry is not None:
            return entry[1]
        node = self._record("leaf", (), None)
        self._leaves[id(t)] = (t, node)
        return node

    def backward(self, loss: "Tensor") -> "Gradients":
        """Reverse sweep from a scalar loss; returns per-tensor gradients."""
        if loss.values.size != 1:
            raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
        if loss.tape is not self or loss.node is None:
            raise NotOnTape("loss tensor is not recorded on this tape")
        buffers: list[Optional[np.ndarray]] = [None] * len(self._nodes)
        buffers[loss.node] = np.ones_like(loss.values)
        for idx in range(loss.node, -1, -1):
            g = buffers[idx]
            if g is None:
                continue
            node = self._nodes[idx]
            if node.backward is None:
                continue
            parent_grads = node.backward(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if buffers[pid] is None:
                    buffers[pid] = pg
                else:
                    # Fan-out accumulates additively; '+' allocates fresh
                    # storage so shared views are never mutated.
                    buffers[pid] = buffers[pid] + pg
        return Gradients(self, buffers)


class Gradients:
    """Gradient map produced by ``Tape.backward``, keyed by tensor."""

    def __init__(self, tape: Tape, buffers: list):
        self._tape = tape
        self._buffers = buffers

    def of(self, t: "Tensor") -> Optional[np.ndarray]:
        """Gradient array for a tensor on this tape (None if unreached)."""
        node = t.node
        if node is None or t.tape is not self._tape:
            entry = self._tape._leaves.get(id(t))
            if entry is None:
                return None
            node = entry[1]
        g = self._buffers[node]
        if g is None:
            return None
        if g.shape != t.values.shape:
            g = np.broadcast_to(g, t.values.shape).astype(np.float64)
        return g

    def tensor(self, t: "Tensor") -> Optional["Tensor"]:
        g = self.of(t)
        return None if g is None else Tensor(g)


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """N-d float64 array, optionally recorded on the active tape."""

    __slots__ = ("values", "tape", "node", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.values = _as_array(data)
        if _CHECKED and not np.all(np.isfinite(self.values)):
            raise DomainError("non-finite values at tensor creation")
        self.tape: Optional[Tape] = None
        self.node: Optional[int] = None
        self.requires_grad = requires_grad

    @staticmethod
    def param(data) -> "Tensor":
        """Leaf tensor that accumulates gradients (model parameter)."""
        return Tensor(data, requires_grad=True)

    @classmethod
    def _from_op(cls, values: np.ndarray, kind: str, parents: tuple,
                 backward: Optional[Callable]) -> "Tensor":
        out = cls.__new__(cls)
        out.values = values if values.dtype == np.float64 else values.astype(np.float64)
        if _CHECKED and not np.all(np.isfinite(out.values)):
            raise DomainError(f"non-finite result from op '{kind}'")
        out.requires_grad = False
        tape = _ACTIVE_TAPE
        if tape is not None and parents:
            out.tape = tape
            out.node = tape._record(kind, parents, backward)
        else:
            out.tape = None
            out.node = None
        return out

    # -- tape participation -------------------------------------------------

    def _tape_id(self) -> Optional[int]:
        """Node id on the active tape, adopting grad-requiring leaves."""
        tape = _ACTIVE_TAPE
        if tape is None:
            return None
        if self.node is not None and self.tape is tape:
            return self.node
        if self.requires_grad:
            return tape._adopt_leaf(self)
        return None

    # -- conveniences --------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        if self.values.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        """Same values, no tape node, no gradient flow."""
        out = Tensor.__new__(Tensor)
        out.values = self.values
        out.tape = None
        out.node = None
        out.requires_grad = False
        return out

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        tag = "" if self.node is None else f" node={self.node}"
        return f"Tensor(shape={list(self.shape)}{tag})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(t: Tensor) -> Tensor:
    return t.detach()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce an output gradient back to an operand's (broadcast) shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (got, want) in enumerate(zip(g.shape, shape))
                 if want == 1 and got != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# -- elementwise binary ops ---------------------------------------------------

def _binary(kind: str, a, b, forward, grad_a, grad_b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a.values, b.values, kind)
    av, bv = a.values, b.values
    out = forward(av, bv)
    ida, idb = a._tape_id(), b._tape_id()
    if ida is None and idb is None:
        return Tensor._from_op(out, kind, (), None)
    ash, bsh = av.shape, bv.shape

    def backward(g):
        ga = _unbroadcast(grad_a(g, av, bv, out), ash) if ida is not None else None
        gb = _unbroadcast(grad_b(g, av, bv, out), bsh) if idb is not None else None
        return (ga, gb)

    # Emit gradients for present parents only, in parent order.
    parents = tuple(p for p in (ida, idb) if p is not None)
    return Tensor._from_op(out, kind, parents, lambda g: _filter_pair(backward(g)))


def _filter_pair(pair):
    return tuple(g for g in pair if g is not None)


def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if _CHECKED and np.any(b.values == 0.0):
        raise DomainError("division by zero")
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * x / (y * y))


# -- elementwise unary ops ----------------------------------------------------

def _unary(kind: str, a, forward, grad) -> Tensor:
    a = _coerce(a)
    av = a.values
    out = forward(av)
    ida = a._tape_id()
    if ida is None:
        return Tensor._from_op(out, kind, (), None)
    return Tensor._from_op(out, kind, (ida,), lambda g: (grad(g, av, out),))


def neg(a) -> Tensor:
    return _unary("neg", a, lambda x: -x, lambda g, x, o: -g)


def exp(a) -> Tensor:
    return _unary("exp", a, np.exp, lambda g, x, o: g * o)


def log(a) -> Tensor:
    a = _coerce(a)
    if _CHECKED and np.any(a.values <= 0.0):
        raise DomainError("log of non-positive input")
    return _unary("log", a, np.log, lambda g, x, o: g / x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable in both tails.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    return _unary("sigmoid", a, _sigmoid, lambda g, x, o: g * o * (1.0 - o))


def tanh(a) -> Tensor:
    return _unary("tanh", a, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def relu(a) -> Tensor:
    return _unary("relu", a, lambda x: np.maximum(x, 0.0),
                  lambda g, x, o: g * (x > 0.0))


def square(a) -> Tensor:
    return _unary("square", a, np.square, lambda g, x, o: g * 2.0 * x)


def absolute(a) -> Tensor:
    return _unary("abs", a, np.abs, lambda g, x, o: g * np.sign(x))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only inside the window."""
    return _unary("clip", a, lambda x: np.clip(x, lo, hi),
                  lambda g, x, o: g * ((x >= lo) & (x <= hi)))


# -- matmul -------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul: {av.shape} x {bv.shape}")
    out = av @ bv
    ida, idb = a._tape_id(), b._tape_id()
    if ida is None and idb is None:
        return Tensor._from_op(out, "matmul", (), None)

    def backward(g):
        grads = []
        if ida is not None:
            grads.append(g @ bv.T)
        if idb is not None:
            grads.append(av.T @ g)
        return tuple(grads)

    parents = tuple(p for p in (ida, idb) if p is not None)
    return Tensor._from_op(out, "matmul", parents, backward)


# -- reductions ----------------------------------------------------------------

def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    if not -ndim <= axis < ndim:
        raise AxisOutOfRange(f"axis {axis} out of range for ndim {ndim}")
    return axis % ndim


def _reduce(kind: str, a, axis, keepdims, forward, scale) -> Tensor:
    a = _coerce(a)
    av = a.values
    ax = _norm_axis(axis, av.ndim)
    out = forward(av, ax, keepdims)
    ida = a._tape_id()
    if ida is None:
        return Tensor._from_op(out, kind, (), None)
    shape = av.shape

    def backward(g):
        if ax is None:
            gb = np.broadcast_to(g, shape)
        else:
            gg = g if keepdims else np.expand_dims(g, ax)
            gb = np.broadcast_to(gg, shape)
        return (gb * scale(shape, ax),)

    return Tensor._from_op(out, kind, (ida,), backward)


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    return _reduce("sum", a, axis, keepdims,
                   lambda x, ax, kd: x.sum(axis=ax, keepdims=kd),
                   lambda shape, ax: 1.0)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    def scale(shape, ax):
        count = np.prod(shape) if ax is None else shape[ax]
        return 1.0 / float(count)
    return _reduce("mean", a, axis, keepdims,
                   lambda x, ax, kd: x.mean(axis=ax, keepdims=kd), scale)


def amax_detached(a, axis=None, keepdims=False) -> Tensor:
    """Max over values with no gradient; for log-sum-exp stabilization only."""
    a = _coerce(a)
    return Tensor(a.values.max(axis=axis, keepdims=keepdims))


# -- shape ops -----------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    av = a.values
    shape = tuple(shape)
    if np.prod(shape, dtype=np.int64) != av.size:
        raise ShapeMismatch(f"reshape: cannot view {av.shape} as {shape}")
    out = av.reshape(shape)
    ida = a._tape_id()
    if ida is None:
        return Tensor._from_op(out, "reshape", (), None)
    orig = av.shape
    return Tensor._from_op(out, "reshape", (ida,),
                           lambda g: (g.reshape(orig),))


def repeat_rows(a, k: int) -> Tensor:
    """Tile along a new leading-row sense: [n, ...] -> [k*n, ...].

    Gradient sums the k copies back onto the original rows.
    """
    a = _coerce(a)
    av = a.values
    if av.ndim < 1:
        raise ShapeMismatch("repeat_rows needs at least 1-d input")
    reps = (k,) + (1,) * (av.ndim - 1)
    out = np.tile(av, reps)
    ida = a._tape_id()
    if ida is None:
        return Tensor._from_op(out, "repeat_rows", (), None)
    orig = av.shape

    def backward(g):
        return (g.reshape((k,) + orig).sum(axis=0),)

    return Tensor._from_op(out, "repeat_rows", (ida,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise ShapeMismatch("concat of empty sequence")
    ndim = ts[0].values.ndim
    ax = _norm_axis(axis, ndim)
    try:
        out = np.concatenate([t.values for t in ts], axis=ax)
    except ValueError as e:
        raise ShapeMismatch(f"concat: {e}")
    ids = [t._tape_id() for t in ts]
    if all(i is None for i in ids):
        return Tensor._from_op(out, "concat", (), None)
    sizes = [t.values.shape[ax] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for i, t in enumerate(ts):
            if ids[i] is None:
                continue
            sl = [slice(None)] * ndim
            sl[ax] = slice(offsets[i], offsets[i + 1])
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(grads)

    parents = tuple(i for i in ids if i is not None)
    return Tensor._from_op(out, "concat", parents, backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis` starting at `start`."""
    a = _coerce(a)
    av = a.values
    ax = _norm_axis(axis, av.ndim)
    if start < 0 or start + length > av.shape[ax]:
        raise ShapeMismatch(
            f"narrow: [{start}, {start + length}) outside dim {av.shape[ax]}")
    sl = [slice(None)] * av.ndim
    sl[ax] = slice(start, start + length)
    out = np.ascontiguousarray(av[tuple(sl)])
    ida = a._tape_id()
    if ida is None:
        return Tensor._from_op(out, "narrow", (), None)
    shape = av.shape

    def backward(g):
        full = np.zeros(shape, dtype=np.float64)
        full[tuple(sl)] = g
        return (full,)

    return Tensor._from_op(out, "narrow", (ida,), backward)


# -- composites ------------------------------------------------------------------

def logsumexp(a, axis=None, keepdims=False) -> Tensor:
    """Numerically stable log-sum-exp built from primitive ops.

    The max shift is detached, which leaves the gradient exact.
    """
    a = _coerce(a)
    m = amax_detached(a, axis=axis, keepdims=True)
    shifted = sub(a, m)
    s = reduce_sum(exp(shifted), axis=axis, keepdims=True)
    out = add(log(s), m)
    if keepdims:
        return out
    if axis is None:
        return reshape(out, ())
    new_shape = list(out.values.shape)
    del new_shape[_norm_axis(axis, a.values.ndim)]
    return reshape(out, tuple(new_shape))


def softmax(a, axis=-1) -> Tensor:
    return exp(sub(a, logsumexp(a, axis=axis, keepdims=True)))


def log_sigmoid(a) -> Tensor:
    """log σ(x) = -softplus(-x), stable in both tails."""
    a = _coerce(a)
    x = a.values
    out = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))),
                   x - np.log1p(np.exp(-np.abs(x))))
    ida = a._tape_id()
    if ida is None:
        return Tensor._from_op(out, "log_sigmoid", (), None)
    return Tensor._from_op(out, "log_sigmoid", (ida,),
                           lambda g: (g * _sigmoid(-x),))


# -- verification oracle -----------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor,
                      eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    `f` must be a deterministic scalar function of `x`. Error per coordinate
    is |analytic - central| / (|analytic| + 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    probe = Tensor(x.values.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(probe)
        grads = tape.backward(out)
    analytic = grads.of(probe)
    if analytic is None:
        analytic = np.zeros_like(probe.values)
    flat = probe.values.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(probe.values.copy())).item()
        flat[i] = orig - eps
        lo = f(Tensor(probe.values.copy())).item()
        flat[i] = orig
        numeric = (hi - lo) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - numeric) / (abs(a) + 1e-8))
    return worst
