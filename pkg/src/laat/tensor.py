"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends a node to the active :class:`Tape`.
``backward(root)`` replays that tape in reverse execution order, exactly once;
a second call on the same tape raises :class:`TapeError`.  Leaf tensors
(parameters) are never on a tape, so their ``grad`` accumulates across tapes,
which is how minibatch gradient accumulation works.

Tensors are limited to rank 3.  Batching is done by iterating documents, not
by a batch axis.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

MASK_FILL = -1e30
MAX_RANK = 3


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    # -- basic properties -------------------------------------------------
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
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operator sugar ---------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis: int | None = None) -> Tensor:
        return tsum(self, axis)

    def mean(self) -> Tensor:
        return mean(self)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape

class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of executed operations."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        out._tape = self
        self.nodes.append(_Node(out, parents, backward))

    def reset(self) -> None:
        for node in self.nodes:
            node.out._tape = None
        self.nodes = []
        self.consumed = False

    def backward(self, root: Tensor) -> None:
        if root.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {root.shape}")
        if root._tape is not self:
            raise TapeError("root was not produced on this tape")
        if self.consumed:
            raise TapeError("backward() already ran on this tape; reset it before reuse")
        self.consumed = True
        root.grad = np.ones_like(root.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg


_tape_stack: list[Tape] = [Tape()]
_grad_enabled = [True]


def get_tape() -> Tape:
    return _tape_stack[-1]


@contextmanager
def new_tape() -> Iterator[Tape]:
    """Run a block on a fresh tape, restoring the previous one afterwards."""
    tape = Tape()
    _tape_stack.append(tape)
    try:
        yield tape
    finally:
        _tape_stack.pop()


@contextmanager
def no_grad() -> Iterator[None]:
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def backward(root: Tensor) -> None:
    if root._tape is None:
        raise TapeError("root is not on any tape (was it computed under no_grad?)")
    root._tape.backward(root)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as an op output and record ``backward_fn`` if needed.

    ``backward_fn(g)`` must return one gradient (or None) per parent.
    Custom fused kernels use this as their registration hook.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._tape = None
    out.requires_grad = _grad_enabled[-1] and any(p.requires_grad for p in parents)
    if out.requires_grad:
        get_tape().record(out, tuple(parents), backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function without overflow; saturates to exact 0/1."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = stable_sigmoid(x.data)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1.0 - y * y),))


def softplus(x) -> Tensor:
    """log(1 + e^x), computed as logaddexp(0, x)."""
    x = as_tensor(x)
    xd = x.data
    return make_result(np.logaddexp(0.0, xd), (x,), lambda g: (g * stable_sigmoid(xd),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_result(np.log(xd), (x,), lambda g: (g / xd,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return make_result(ad @ bd, (a, b), back)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return make_result(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return make_result(np.asarray(a.data.sum()), (a,),
                           lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % a.ndim

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return make_result(a.data.sum(axis=ax), (a,), back)


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    shape = a.shape
    return make_result(np.asarray(a.data.mean()), (a,),
                       lambda g: (np.full(shape, float(g) / n),))


def getitem(a, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return make_result(np.array(a.data[index]), (a,), back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(f"concat shape mismatch along axis {axis}: "
                             + ", ".join(str(x.shape) for x in ts))
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return make_result(np.concatenate([t.data for t in ts], axis=ax), ts,
                       lambda g: tuple(np.split(g, cuts, axis=ax)))


def take_rows(table, ids) -> Tensor:
    """Gather rows ``table[ids]`` (an embedding lookup)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row id out of range for table with {table.shape[0]} rows")
    shape = table.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, ids, g)
        return (full,)

    return make_result(table.data[ids], (table,), back)


# ---------------------------------------------------------------------------
# attention and regularisation

def masked_softmax_rows(x, valid_len: int) -> Tensor:
    """Row softmax over the first ``valid_len`` columns; later columns are 0.

    Masked logits are replaced by MASK_FILL before the max-shifted softmax.
    Reductions run over the valid prefix only, so appending masked columns
    never changes the valid outputs.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"masked_softmax_rows expects a matrix, got shape {x.shape}")
    n = x.shape[1]
    if valid_len < 1:
        raise ValueError("empty sequence: valid_len must be >= 1")
    if valid_len > n:
        raise ShapeError(f"valid_len {valid_len} exceeds {n} columns")
    z = x.data.copy()
    z[:, valid_len:] = MASK_FILL
    zv = z[:, :valid_len]
    e = np.exp(zv - zv.max(axis=1, keepdims=True))
    y = np.zeros_like(z)
    y[:, :valid_len] = e / e.sum(axis=1, keepdims=True)

    def back(g):
        yv = y[:, :valid_len]
        gx = np.zeros_like(g)
        gv = g[:, :valid_len]
        gx[:, :valid_len] = yv * (gv - (gv * yv).sum(axis=1, keepdims=True))
        return (gx,)

    return make_result(y, (x,), back)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: identity at inference or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,))
