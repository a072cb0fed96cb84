"""Dense reverse-mode automatic differentiation on numpy float64 arrays.

Graphs are built eagerly: every primitive computes its value on construction
and, when gradient recording is active and an input requires a gradient,
remembers its parents plus a backward rule. Backward rules are themselves
written with the primitives below, so recording the backward pass yields a
graph that can be differentiated again (double backprop).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GradientError",
    "tensor",
    "constant",
    "no_grad",
    "is_recording",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "sum",
    "mean",
    "broadcast_to",
    "piecewise_linear",
    "relu",
    "leaky_relu",
    "prelu",
    "gather",
    "scatter_add",
    "take_columns",
    "exp",
    "log",
    "square",
    "abs",
    "reciprocal",
    "sign_constant",
    "softplus",
    "log_sigmoid",
    "logsumexp",
    "max_pool1d",
    "min_pool1d",
    "avg_pool1d",
    "forward",
    "grad",
    "gradient_check",
]


class ShapeError(ValueError):
    """Raised when the operand shapes of a primitive do not compose."""

    def __init__(self, op: str, message: str, name: str | None = None):
        self.op = op
        self.node_name = name
        where = f"{op}" if name is None else f"{op} (node {name!r})"
        super().__init__(f"{where}: {message}")


class GradientError(ValueError):
    """Raised for malformed gradient requests."""


_state = threading.local()


def is_recording() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def _recording(flag: bool):
    prev = is_recording()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    """Context manager that disables tape recording."""
    return _recording(False)


class Tensor:
    """A float64 array plus the tape entry that produced it.

    Leaves are created by the user (``tensor``) or are constants; interior
    nodes keep ``_parents``, a numpy ``_fn`` for replaying the forward value
    and a ``_backward`` rule mapping the output gradient to parent gradients.
    """

    __slots__ = ("data", "requires_grad", "op", "name", "_parents", "_fn", "_backward", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite (no NaN/Inf)")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.name = name
        self._parents: tuple = ()
        self._fn = None
        self._backward = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False, op: str = "leaf") -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.op = op
        t.name = None
        t._parents = ()
        t._fn = None
        t._backward = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag}, op={self.op})"

    def __len__(self) -> int:
        return len(self.data)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise_item(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    """Build a leaf from user data (validated finite, stored as float64)."""
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor._wrap(np.asarray(data, dtype=np.float64))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def _node(value: np.ndarray, op: str, parents: tuple, fn: Callable, backward: Callable) -> Tensor:
    if is_recording() and any(p.requires_grad for p in parents):
        out = Tensor._wrap(value, True, op)
        out._parents = parents
        out._fn = fn
        out._backward = backward
        return out
    return Tensor._wrap(value, False, op)


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = sum(g, axis=axes, keepdims=True)
    if g.shape != shape:
        g = reshape(g, shape)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"cannot broadcast {a.shape} with {b.shape}", a.name or b.name) from None


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(
        a.data + b.data,
        "add",
        (a, b),
        np.add,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node(
        a.data - b.data,
        "add",
        (a, b),
        np.subtract,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(neg(g), sb)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = _unbroadcast(mul(g, b), sa) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), sb) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, "elementwise-mul", (a, b), np.multiply, backward)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _node(a.data * c, "scale", (a,), lambda x: x * c, lambda g: (scale(g, c),))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def reciprocal(a) -> Tensor:
    a = _as_tensor(a)
    return _node(
        1.0 / a.data,
        "reciprocal",
        (a,),
        lambda x: 1.0 / x,
        lambda g: (neg(mul(g, square(reciprocal(a)))),),
    )


def div(a, b) -> Tensor:
    return mul(a, reciprocal(b))


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _node(a.data * a.data, "square", (a,), np.square, lambda g: (mul(g, scale(a, 2.0)),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    return _node(np.exp(a.data), "exp", (a,), np.exp, lambda g: (mul(g, exp(a)),))


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log of a non-positive value")
    return _node(np.log(a.data), "log", (a,), np.log, lambda g: (div(g, a),))


def sign_constant(a) -> Tensor:
    """Sign of ``a`` as a constant (its derivative is zero almost everywhere)."""
    return Tensor._wrap(np.sign(_as_tensor(a).data))


def abs(a) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    s = np.sign(a.data)
    return _node(np.abs(a.data), "abs", (a,), np.abs, lambda g: (mul(g, Tensor._wrap(s)),))


def piecewise_linear(z, pos_slope: float = 1.0, neg_slope: float = 0.0) -> Tensor:
    """Two-interval piecewise-linear activation through the origin.

    ``pos_slope * z`` for ``z > 0`` and ``neg_slope * z`` for ``z <= 0``; the
    derivative at exactly zero takes the ``z <= 0`` branch.
    """
    z = _as_tensor(z)
    a1, a2 = float(pos_slope), float(neg_slope)

    def fn(x):
        return x * np.where(x > 0, a1, a2)

    slopes = Tensor._wrap(np.where(z.data > 0, a1, a2))
    return _node(fn(z.data), "relu-family", (z,), fn, lambda g: (mul(g, slopes),))


def relu(z) -> Tensor:
    return piecewise_linear(z, 1.0, 0.0)


def leaky_relu(z, negative_slope: float = 0.01) -> Tensor:
    return piecewise_linear(z, 1.0, negative_slope)


def prelu(z, slope: Tensor) -> Tensor:
    """PReLU with a learnable negative-side slope (scalar or per-feature)."""
    z = _as_tensor(z)
    pos = piecewise_linear(z, 1.0, 0.0)
    negative = piecewise_linear(z, 0.0, 1.0)
    return add(pos, mul(negative, slope))


def softplus(z) -> Tensor:
    """``log(1 + exp(z))`` evaluated without overflow."""
    z = _as_tensor(z)
    return add(relu(z), log(add(1.0, exp(neg(abs(z))))))


def log_sigmoid(z) -> Tensor:
    return neg(softplus(neg(z)))


def logsumexp(z, axis: int = -1) -> Tensor:
    """Row-wise log-sum-exp; the max shift is a constant."""
    z = _as_tensor(z)
    shift = Tensor._wrap(np.max(z.data, axis=axis, keepdims=True))
    return add(log(sum(exp(sub(z, shift)), axis=axis)), reshape(shift, np.squeeze(shift.data, axis=axis).shape))


# -- linear algebra and shape ----------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 1 and b.ndim == 2:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), (b.shape[1],))
    if a.ndim == 2 and b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), (a.shape[0],))
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul", f"expected 1-D or 2-D operands, got {a.shape} @ {b.shape}", a.name or b.name)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}", a.name or b.name)

    def backward(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, "matmul", (a, b), np.matmul, backward)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(
        np.transpose(a.data, axes),
        "transpose",
        (a,),
        lambda x: np.transpose(x, axes),
        lambda g: (transpose(g, inv),),
    )


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    src = a.shape
    try:
        value = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {src} to {tuple(shape)}", a.name) from None
    shape = value.shape
    return _node(value, "reshape", (a,), lambda x: x.reshape(shape), lambda g: (reshape(g, src),))


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    src = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(src))

    def fn(x):
        return np.sum(x, axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = reshape(g, kept)
        return (broadcast_to(g, src),)

    return _node(fn(a.data), "sum", (a,), fn, backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(sum(a, axis=axes, keepdims=keepdims), 1.0 / max(count, 1))


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    src = a.shape
    try:
        value = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError("broadcast", f"cannot broadcast {src} to {shape}", a.name) from None
    return _node(
        value,
        "broadcast",
        (a,),
        lambda x: np.broadcast_to(x, shape).copy(),
        lambda g: (_unbroadcast(g, src),),
    )


def _batch_rows(index: np.ndarray, batch: int) -> np.ndarray:
    return np.arange(batch).reshape((batch,) + (1,) * (index.ndim - 1))


def gather(x, index: np.ndarray) -> Tensor:
    """Row-wise gather on a 2-D tensor: ``out[b, ...] = x[b, index[b, ...]]``.

    ``index`` is an integer array whose leading axis matches the batch.
    """
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 2 or index.ndim < 1 or index.shape[0] != x.shape[0]:
        raise ShapeError("gather", f"index {index.shape} incompatible with source {x.shape}", x.name)
    width = x.shape[1]
    rows = _batch_rows(index, x.shape[0])

    def fn(v):
        return v[rows, index]

    return _node(fn(x.data), "gather", (x,), fn, lambda g: (scatter_add(g, index, width),))


def scatter_add(g, index: np.ndarray, width: int) -> Tensor:
    """Adjoint of ``gather``: accumulate ``g`` into a ``[batch, width]`` zero tensor."""
    g = _as_tensor(g)
    index = np.asarray(index, dtype=np.intp)
    if g.shape != index.shape:
        raise ShapeError("scatter", f"values {g.shape} do not match index {index.shape}", g.name)
    rows = _batch_rows(index, g.shape[0])

    def fn(v):
        out = np.zeros((v.shape[0], width), dtype=np.float64)
        np.add.at(out, (np.broadcast_to(rows, index.shape), index), v)
        return out

    return _node(fn(g.data), "scatter", (g,), fn, lambda h: (gather(h, index),))


def take_columns(x, columns: Sequence[int]) -> Tensor:
    """Select columns of a ``[batch, n]`` tensor (shared across the batch)."""
    x = _as_tensor(x)
    cols = np.asarray(columns, dtype=np.intp)
    index = np.broadcast_to(cols, (x.shape[0],) + cols.shape)
    return gather(x, index)


# -- pooling ----------------------------------------------------------------


def _windows(x: Tensor, window: int, op: str) -> tuple[int, int, int]:
    if x.ndim != 3:
        raise ShapeError(op, f"expected [batch, channels, length], got {x.shape}", x.name)
    b, c, length = x.shape
    if window < 1 or length < window:
        raise ShapeError(op, f"window {window} does not fit length {length}", x.name)
    return b, c, length // window


def _select_pool(x, window: int, pick: Callable, op: str) -> Tensor:
    x = _as_tensor(x)
    b, c, n_out = _windows(x, window, op)
    blocks = x.data[:, :, : n_out * window].reshape(b, c, n_out, window)
    # first extremal element wins ties
    offset = pick(blocks, axis=-1)
    flat = (
        np.arange(c).reshape(1, c, 1) * x.shape[2]
        + np.arange(n_out).reshape(1, 1, n_out) * window
        + offset
    ).reshape(b, c * n_out)
    flat_x = reshape(x, (b, c * x.shape[2]))
    return reshape(gather(flat_x, flat), (b, c, n_out))


def max_pool1d(x, window: int) -> Tensor:
    """Non-overlapping max pooling along the last axis of ``[batch, channels, length]``."""
    return _select_pool(x, window, np.argmax, "max-pool")


def min_pool1d(x, window: int) -> Tensor:
    return _select_pool(x, window, np.argmin, "min-pool")


def avg_pool1d(x, window: int) -> Tensor:
    x = _as_tensor(x)
    b, c, n_out = _windows(x, window, "avg-pool")
    if n_out * window != x.shape[2]:
        x = _crop_last(x, n_out * window)
    blocks = reshape(x, (b, c, n_out, window))
    return scale(sum(blocks, axis=-1), 1.0 / window)


def _crop_last(x: Tensor, length: int) -> Tensor:
    b, c, full = x.shape
    idx = (np.arange(c).reshape(c, 1) * full + np.arange(length).reshape(1, length)).reshape(-1)
    flat = reshape(x, (b, c * full))
    return reshape(take_columns(flat, idx), (b, c, length))


# -- graph evaluation and differentiation ----------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def forward(root: Tensor, feed: Mapping[Tensor, np.ndarray] | None = None) -> Tensor:
    """Re-evaluate the recorded graph below ``root`` in topological order.

    ``feed`` substitutes values for leaves; other leaves keep their data.
    Nodes are not mutated, so the original tape stays valid.
    """
    feed = feed or {}
    by_id = {id(k): np.asarray(v, dtype=np.float64) for k, v in feed.items()}
    for k, v in feed.items():
        if by_id[id(k)].shape != k.shape:
            raise ShapeError("forward", f"fed value {by_id[id(k)].shape} != leaf {k.shape}", k.name)
    values: dict[int, np.ndarray] = {}
    for node in _toposort(root):
        if id(node) in by_id:
            values[id(node)] = by_id[id(node)]
        elif node._parents:
            values[id(node)] = node._fn(*(values[id(p)] for p in node._parents))
        else:
            values[id(node)] = node.data
    return Tensor._wrap(values[id(root)])


def grad(output: Tensor, wrt: Iterable[Tensor] | Tensor, order: int = 1) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    With ``order=2`` the backward pass is recorded, so the returned gradients
    are graphs that can be passed to ``grad`` again. Tensors that do not
    influence ``output`` receive exact zeros.
    """
    if order not in (1, 2):
        raise GradientError(f"unsupported gradient order {order}; only 1 and 2 are available")
    single = isinstance(wrt, Tensor)
    targets = [wrt] if single else list(wrt)
    if output.size != 1:
        raise GradientError(f"gradient needs a scalar output, got shape {output.shape}")
    wanted = {id(t) for t in targets}
    grads: dict[int, Tensor] = {id(output): Tensor._wrap(np.ones_like(output.data))}
    with _recording(order == 2):
        for node in reversed(_toposort(output)):
            g = grads.get(id(node))
            if g is None or not node._parents:
                continue
            if id(node) not in wanted:
                del grads[id(node)]
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
    result = []
    for t in targets:
        g = grads.get(id(t))
        result.append(g if g is not None else Tensor._wrap(np.zeros_like(t.data)))
    return result


def gradient_check(output: Tensor, leaf: Tensor, step: float = 1e-5) -> float:
    """Max abs deviation between ``grad`` and central differences of ``forward``."""
    if step <= 0:
        raise ValueError("step must be positive")
    (analytic,) = grad(output, [leaf])
    base = leaf.data
    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        plus = base.copy().reshape(-1)
        minus = base.copy().reshape(-1)
        plus[i] += step
        minus[i] -= step
        f_plus = forward(output, {leaf: plus.reshape(base.shape)}).data.sum()
        f_minus = forward(output, {leaf: minus.reshape(base.shape)}).data.sum()
        flat[i] = (f_plus - f_minus) / (2.0 * step)
    if base.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic.data - numeric)))
