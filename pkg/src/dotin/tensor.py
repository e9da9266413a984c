"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations are only recorded while a :class:`Tape` is active; outside a tape
every op is a plain numpy computation, which is what evaluation code relies on
for purity and speed.

    >>> w = Tensor([2.0], requires_grad=True)
    >>> x = Tensor([3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * x).sum()
    >>> reverse_accumulate(tape, loss)
    >>> float(w.grad[0]), float(x.grad[0])
    (3.0, 2.0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import DimensionError, EmptySupportError, RankError

__all__ = [
    "Tensor",
    "Tape",
    "reverse_accumulate",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "tsum",
    "mean",
    "exp",
    "log",
    "elu",
    "relu",
    "power",
    "reshape",
    "identity",
    "masked_softmax",
    "log_softmax",
    "cross_entropy_from_logits",
    "take_rows",
    "take",
    "concat",
    "transpose",
    "dropout",
    "squared_norm",
    "AdamState",
    "adam_step",
    "Adam",
]


class Tensor:
    """A float64 array that can take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) or data.dtype != np.float64 else data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

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
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None) -> Tensor:
        return tsum(self, axis)

    def mean(self, axis=None) -> Tensor:
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records differentiable ops in execution order.

    Execution order is a valid topological order, so the reverse pass is a
    single backwards sweep over :attr:`nodes`.
    """

    _stack: list[Tape] = []

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> Tape:
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def current(cls) -> Tape | None:
        return cls._stack[-1] if cls._stack else None

    def backward(self, loss: Tensor) -> None:
        reverse_accumulate(self, loss)


def _record(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    tape = Tape.current()
    if tape is None or not any(p.requires_grad for p in parents):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out._parents = parents
    out._backward = backward
    tape.nodes.append(out)
    return out


def reverse_accumulate(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad tensor recorded on ``tape``.

    Leaf gradients accumulate into any existing ``.grad``; recorded
    intermediate tensors get a fresh gradient. Tensors on the tape that the
    loss does not depend on receive zeros.
    """
    if loss.size != 1:
        raise RankError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            node.grad = np.zeros_like(node.data)
            for p in node._parents:
                if p.requires_grad and p._backward is None:
                    leaves.setdefault(id(p), p)
            continue
        node.grad = g
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            if p._backward is None:
                leaves.setdefault(id(p), p)
            if pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _record(a.data.T, (a,), lambda g: (g.T,))


def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _record(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)
    return _record(out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / n)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def elu(a: Tensor) -> Tensor:
    ad = a.data
    pos = ad > 0
    em1 = np.expm1(np.minimum(ad, 0.0))
    out = np.where(pos, ad, em1)
    return _record(out, (a,), lambda g: (g * np.where(pos, 1.0, em1 + 1.0),))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _record(ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _record(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def identity(a: Tensor) -> Tensor:
    return a


def masked_softmax(logits: Tensor, mask, tau: float = 1.0, allow_empty: bool = False) -> Tensor:
    """Softmax of ``logits / tau`` along the last axis restricted to ``mask``.

    Masked-out entries are exactly zero. A row with no support raises
    :class:`EmptySupportError` unless ``allow_empty`` is set, in which case the
    row is all zeros.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    logits = as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match logits {logits.shape}")
    has = mask.any(axis=-1, keepdims=True)
    if not allow_empty and not has.all():
        raise EmptySupportError("softmax over an empty support")
    z = np.where(mask, logits.data / tau, -np.inf)
    zmax = np.where(has, z.max(axis=-1, keepdims=True), 0.0)
    e = np.where(mask, np.exp(z - zmax), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = e / np.where(has, denom, 1.0)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot) / tau,)

    return _record(out, (logits,), backward)


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _record(out, (logits,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def cross_entropy_from_logits(logits: Tensor, label: int) -> Tensor:
    """``-log softmax(logits)[label]`` for a 1-D (or 1×C) logit vector."""
    logits = as_tensor(logits)
    c = logits.size
    label = int(label)
    if not 0 <= label < c:
        raise IndexError(f"label {label} out of range for {c} classes")
    flat = logits.data.reshape(-1)
    zmax = flat.max()
    lse = zmax + math.log(np.exp(flat - zmax).sum())
    loss = lse - flat[label]
    shape = logits.shape

    def backward(g):
        p = np.exp(flat - lse)
        p[label] -= 1.0
        return ((g * p).reshape(shape),)

    return _record(np.asarray(loss), (logits,), backward)


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(a.data[idx], (a,), backward)


def take(a: Tensor, rows, cols) -> Tensor:
    """Submatrix ``a[rows][:, cols]``."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = a.shape
    ix = np.ix_(rows, cols)

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, ix, g)
        return (out,)

    return _record(a.data[ix], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _record(a.data * keep, (a,), lambda g: (g * keep,))


def squared_norm(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.asarray((ad * ad).sum()), (a,), lambda g: (2.0 * g * ad,))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Iterable[Tensor], **hyper) -> AdamState:
        params = list(params)
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **hyper,
        )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> AdamState:
    """One Adam update in place, with decoupled weight decay.

    Decay is applied as ``p -= lr * weight_decay * p`` before the moment
    update. A missing gradient is treated as zero.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("params, grads and optimizer moments differ in count")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise DimensionError(f"parameter {i}: shape {p.shape} vs grad {g.shape}")
        if state.weight_decay:
            p.data = p.data - state.lr * state.weight_decay * p.data
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        step = (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
        p.data = p.data - state.lr * step
    return state


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params: Iterable[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.state = AdamState.for_params(
            self.params, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)
