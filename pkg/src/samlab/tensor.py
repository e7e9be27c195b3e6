"""Dense float64 tensors with tape-based reverse-mode differentiation.

Parameters live in a :class:`ParamVector`, a single contiguous float64 buffer
with named, shaped views ordered lexicographically by name. A loss is written
as a *graph function* ``fn(p, batch) -> Tensor`` where ``p`` maps names to
leaf tensors; :class:`Graph` evaluates it and pulls gradients back into a
:class:`GradVector` congruent with the parameters.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

from . import kernels
from .errors import LengthMismatchError, NonFiniteError, RangeError, ShapeError, UsageError

# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


class ParamVector:
    """Flat, named view of all trainable parameters.

    Entries are sorted by name; ``flat`` holds them back to back in that order.
    Indexing by name returns a reshaped *view* into ``flat``.
    """

    __slots__ = ("names", "shapes", "offsets", "flat")

    def __init__(self, entries: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]):
        items = dict(entries.items() if isinstance(entries, Mapping) else entries)
        names = tuple(sorted(items))
        shapes = []
        chunks = []
        for name in names:
            arr = np.asarray(items[name], dtype=np.float64)
            if any(d < 1 for d in arr.shape):
                raise ShapeError("ParamVector", arr.shape, (), f"entry {name!r} has an empty axis")
            shapes.append(tuple(arr.shape))
            chunks.append(arr.ravel())
        flat = np.concatenate(chunks) if chunks else np.zeros(0)
        self._set_layout(names, tuple(shapes), np.ascontiguousarray(flat, dtype=np.float64))

    def _set_layout(self, names, shapes, flat):
        self.names = names
        self.shapes = shapes
        sizes = [math.prod(s) for s in shapes]
        self.offsets = tuple(np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)]).tolist())
        self.flat = flat

    @classmethod
    def from_flat(cls, flat: np.ndarray, template: "ParamVector") -> "ParamVector":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.shape[0] != template.total_len:
            raise LengthMismatchError(template.total_len, flat.size)
        out = cls.__new__(cls)
        out.names = template.names
        out.shapes = template.shapes
        out.offsets = template.offsets
        out.flat = np.array(flat, dtype=np.float64, copy=True)
        return out

    @property
    def total_len(self) -> int:
        return int(self.flat.shape[0])

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __getitem__(self, name: str) -> np.ndarray:
        i = self.names.index(name)
        return self.flat[self.offsets[i] : self.offsets[i + 1]].reshape(self.shapes[i])

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, name in enumerate(self.names):
            yield name, self.flat[self.offsets[i] : self.offsets[i + 1]].reshape(self.shapes[i])

    def slice_of(self, name: str) -> slice:
        i = self.names.index(name)
        return slice(self.offsets[i], self.offsets[i + 1])

    def congruent(self, other: "ParamVector") -> bool:
        return self.names == other.names and self.shapes == other.shapes

    def like(self, flat: np.ndarray) -> "ParamVector":
        """Same layout and class, new values."""
        return type(self).from_flat(flat, self)

    def copy(self) -> "ParamVector":
        return self.like(self.flat)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.congruent(other) and np.array_equal(
            self.flat.view(np.uint64), other.flat.view(np.uint64)
        )

    __hash__ = None

    def __repr__(self) -> str:
        body = ", ".join(f"{n}{list(s)}" for n, s in zip(self.names, self.shapes))
        return f"{type(self).__name__}({body}; total_len={self.total_len})"


class GradVector(ParamVector):
    """One gradient scalar per parameter scalar, laid out like its ParamVector."""

    __slots__ = ()


def flatten(params: ParamVector) -> np.ndarray:
    return params.flat.copy()


def unflatten(flat: np.ndarray, template: ParamVector) -> ParamVector:
    return ParamVector.from_flat(flat, template)


# ---------------------------------------------------------------------------
# tensors and the tape
# ---------------------------------------------------------------------------


class Tensor:
    """A float64 array node in a differentiable computation.

    ``parents`` and ``backward_fn`` form the tape: ``backward_fn(g)`` returns
    one gradient (or ``None``) per parent for an upstream gradient ``g``.
    """

    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="", name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else (f" <{self.op}>" if self.op else "")
        return f"Tensor{tag}(shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)


def _suffix_broadcast(op: str, a: Tensor, b: Tensor) -> int:
    """Return the number of leading axes ``b`` is broadcast over (0 = same shape)."""
    if a.shape == b.shape:
        return 0
    if b.ndim == 0:
        return a.ndim
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim :] == b.shape:
        return a.ndim - b.ndim
    raise ShapeError(op, a.shape, b.shape)


def _sum_leading(g: np.ndarray, lead: int) -> np.ndarray:
    return g.sum(axis=tuple(range(lead))) if lead else g


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may match a trailing suffix of ``a``'s shape (bias add)."""
    a, b = _as_tensor(a), _as_tensor(b)
    lead = _suffix_broadcast("add", a, b)

    def back(g):
        return g, _sum_leading(g, lead)

    return _node(a.data + b.data, (a, b), back, "add")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return scale(b, float(a))
    a, b = _as_tensor(a), _as_tensor(b)
    lead = _suffix_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def back(g):
        return g * bd, _sum_leading(g * ad, lead)

    return _node(ad * bd, (a, b), back, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., n, k) @ (k, m)`` or batched ``(B..., n, k) @ (B..., k, m)``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    if b.ndim == 2:
        out = ad @ bd

        def back(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

    else:
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError("matmul", a.shape, b.shape, "batch axes differ")
        out = ad @ bd

        def back(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _node(out, (a, b), back, "matmul")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sin(a: Tensor) -> Tensor:
    d = a.data
    return _node(np.sin(d), (a,), lambda g: (g * np.cos(d),), "sin")


def square(a: Tensor) -> Tensor:
    d = a.data
    return _node(d * d, (a,), lambda g: (2.0 * g * d,), "square")


def _rows(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shape = a.shape
    p = kernels.softmax_rows(_rows(a.data))

    def back(g):
        return (kernels.softmax_rows_backward(p, _rows(g)).reshape(shape),)

    return _node(p.reshape(shape), (a,), back, "softmax")


def log_softmax(a: Tensor) -> Tensor:
    shape = a.shape
    y = kernels.log_softmax_rows(_rows(a.data))
    p = np.exp(y)

    def back(g):
        g2 = _rows(g)
        return ((g2 - p * g2.sum(axis=1, keepdims=True)).reshape(shape),)

    return _node(y.reshape(shape), (a,), back, "log_softmax")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` (n, k)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = int(labels[(labels < 0) | (labels >= k)][0])
        raise RangeError("label", bad, k)
    nll, probs = kernels.cross_entropy_rows(np.ascontiguousarray(logits.data), labels)

    def back(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return (d * (float(g) / n),)

    return _node(np.float64(nll.sum() / n), (logits,), back, "cross_entropy")


def mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    diff = pred.data - target
    n = diff.size

    def back(g):
        return (diff * (2.0 * float(g) / n),)

    return _node(np.float64((diff * diff).sum() / n), (pred,), back, "mse")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, shape) from None
    return _node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, axes)
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def embedding(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup ``table[index]``; output shape is ``index.shape + (dim,)``."""
    index = np.asarray(index, dtype=np.int64)
    v, d = table.shape
    if index.size and (index.min() < 0 or index.max() >= v):
        bad = int(index[(index < 0) | (index >= v)].ravel()[0])
        raise RangeError("token id", bad, v)
    flat_idx = np.ascontiguousarray(index.ravel())

    def back(g):
        return (kernels.scatter_add_rows(flat_idx, _rows(g), v),)

    return _node(table.data[index], (table,), back, "embedding")


def take(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one position along ``axis`` (the axis is dropped)."""
    shape = a.shape
    out = np.take(a.data, index, axis=axis)

    def back(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return _node(out, (a,), back, "take")


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _node(np.float64(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")
    out = a.data.sum(axis=axis)
    return _node(out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),), "sum")


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / count)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then ``* gamma + beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gamma.shape)
    shape = x.shape
    xhat, rstd = kernels.layernorm_rows(_rows(x.data), eps)
    gd = gamma.data

    def back(g):
        g2 = _rows(g)
        dx = kernels.layernorm_rows_backward(np.ascontiguousarray(g2 * gd), xhat, rstd)
        return dx.reshape(shape), (g2 * xhat).sum(axis=0), g2.sum(axis=0)

    out = (xhat * gd + beta.data).reshape(shape)
    return _node(out, (x, gamma, beta), back, "layer_norm")


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Propagate d(loss)/d(node) through the tape; returns grads keyed by ``id(node)``."""
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape, (), "loss must be scalar")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads


# ---------------------------------------------------------------------------
# graph evaluation
# ---------------------------------------------------------------------------

GraphFn = Callable[[Mapping[str, Tensor], object], Tensor]


def leaves(params: ParamVector) -> dict[str, Tensor]:
    return {
        name: Tensor(arr, requires_grad=True, op="leaf", name=name) for name, arr in params.items()
    }


class Graph:
    """A loss graph bound to a graph function.

    ``forward`` records the tape; ``backward`` consumes it.
    """

    def __init__(self, fn: GraphFn):
        self.fn = fn
        self._loss: Tensor | None = None
        self._leaves: dict[str, Tensor] | None = None
        self._params: ParamVector | None = None

    def forward(self, params: ParamVector, batch, **context) -> float:
        self._leaves = leaves(params)
        self._params = params
        out = self.fn(self._leaves, batch)
        if not isinstance(out, Tensor):
            out = Tensor(out)
        if out.data.size != 1:
            raise ShapeError("forward", out.shape, (), "graph must return a scalar")
        value = float(out.data)
        if not math.isfinite(value):
            self._loss = None
            raise NonFiniteError(f"non-finite loss {value}", **context)
        self._loss = out
        return value

    def backward(self) -> GradVector:
        if self._loss is None:
            raise UsageError("backward() called before a successful forward()")
        grads = backward(self._loss)
        params = self._params
        flat = np.zeros(params.total_len)
        for name, leaf in self._leaves.items():
            g = grads.get(id(leaf))
            if g is not None:
                flat[params.slice_of(name)] = g.ravel()
        self._loss = None
        return GradVector.from_flat(flat, params)


def forward(fn: GraphFn, batch, params: ParamVector) -> float:
    return Graph(fn).forward(params, batch)


def value_and_grad(fn: GraphFn, params: ParamVector, batch, **context) -> tuple[float, GradVector]:
    g = Graph(fn)
    value = g.forward(params, batch, **context)
    return value, g.backward()


class Objective:
    """A graph function bound to one fixed batch: ``params -> loss``."""

    def __init__(self, fn: GraphFn, batch):
        self.fn = fn
        self.batch = batch

    def __call__(self, params: ParamVector) -> float:
        return forward(self.fn, self.batch, params)

    def value_and_grad(self, params: ParamVector) -> tuple[float, GradVector]:
        return value_and_grad(self.fn, params, self.batch)

    def grad(self, params: ParamVector) -> GradVector:
        return self.value_and_grad(params)[1]


def fd_gradient(lossfn: Callable[[ParamVector], float], params: ParamVector, h: float = 1e-5) -> GradVector:
    """Central-difference gradient, one coordinate at a time."""
    if not h > 0:
        raise ValueError("fd step h must be positive")
    base = params.flat
    out = np.empty(params.total_len)
    names = _coordinate_names(params)
    for i in range(params.total_len):
        probe = base.copy()
        probe[i] = base[i] + h
        up = lossfn(params.like(probe))
        probe[i] = base[i] - h
        down = lossfn(params.like(probe))
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NonFiniteError("non-finite loss while probing", coordinate=names[i])
        out[i] = (up - down) / (2.0 * h)
    return GradVector.from_flat(out, params)


def _coordinate_names(params: ParamVector) -> list[str]:
    names = []
    for name, shape in zip(params.names, params.shapes):
        for idx in np.ndindex(*shape):
            names.append(f"{name}{list(idx)}")
    return names
