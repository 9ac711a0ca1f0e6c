"""Reverse-mode automatic differentiation on dense float64 arrays.

The graph is a lightweight tape: every operation returns a new ``Tensor``
holding references to its inputs and a closure mapping the output gradient
to input gradients. Tapes are rebuilt on every training step; nothing
persists between backward passes. Tensors are treated as immutable values.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "GraphError",
    "grad",
    "log_softmax",
    "kl_categorical",
    "concat",
    "gather_rows",
]


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf (e.g. division by zero)."""


class GraphError(ValueError):
    """Invalid gradient request, e.g. a leaf that was never recorded."""


def _as_array(value):
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    """Immutable dense float64 array, optionally recorded for gradients."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @staticmethod
    def _from_op(data, parents, vjp):
        data = np.asarray(data)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("operation produced a non-finite value")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self):
        return float(self.data)

    def detach(self):
        """A constant view of this tensor, cut from the tape."""
        return Tensor(self.data)

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        a, b = self, _wrap(other)
        data = a.data + b.data
        return Tensor._from_op(
            data,
            (a, b),
            lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, _wrap(other)
        data = a.data - b.data
        return Tensor._from_op(
            data,
            (a, b),
            lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
        )

    def __rsub__(self, other):
        return _wrap(other) - self

    def __mul__(self, other):
        a, b = self, _wrap(other)
        data = a.data * b.data
        return Tensor._from_op(
            data,
            (a, b),
            lambda g: (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, _wrap(other)
        with np.errstate(divide="ignore", invalid="ignore"):
            data = a.data / b.data
        return Tensor._from_op(
            data,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
            ),
        )

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __neg__(self):
        a = self
        return Tensor._from_op(-a.data, (a,), lambda g: (-g,))

    def __matmul__(self, other):
        a, b = self, _wrap(other)
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ValueError("matmul requires operands with at least 2 dimensions")
        if a.data.shape[-1] != b.data.shape[-2]:
            raise ValueError(
                f"matmul inner dimensions differ: {a.data.shape} vs {b.data.shape}"
            )
        with np.errstate(over="ignore", invalid="ignore"):
            data = np.matmul(a.data, b.data)

        def vjp(g):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

        return Tensor._from_op(data, (a, b), vjp)

    def __rmatmul__(self, other):
        return _wrap(other) @ self

    # -- elementwise functions --------------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0  # subgradient 0 at exactly 0
        return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))

    def exp(self):
        a = self
        out_data = np.exp(a.data)
        return Tensor._from_op(out_data, (a,), lambda g: (g * out_data,))

    def log(self):
        a = self
        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = np.log(a.data)
        return Tensor._from_op(out_data, (a,), lambda g: (g / a.data,))

    def sin(self):
        a = self
        return Tensor._from_op(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))

    def cos(self):
        a = self
        return Tensor._from_op(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))

    # -- reductions and shape --------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.data.shape).copy(),)

        return Tensor._from_op(data, (a,), vjp)

    def mean(self):
        a = self
        n = a.data.size
        data = a.data.mean()
        return Tensor._from_op(data, (a,), lambda g: (np.full(a.data.shape, g / n),))

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = a.data.reshape(shape)
        return Tensor._from_op(data, (a,), lambda g: (g.reshape(a.data.shape),))

    def swap_last2(self):
        """Transpose the last two axes."""
        a = self
        data = np.swapaxes(a.data, -1, -2)
        return Tensor._from_op(data, (a,), lambda g: (np.swapaxes(g, -1, -2),))

    def __getitem__(self, index):
        a = self

        def vjp(g):
            full = np.zeros(a.data.shape)
            full[index] += g
            return (full,)

        return Tensor._from_op(a.data[index], (a,), vjp)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def concat(tensors, axis=0):
    """Concatenate tensors along ``axis``."""
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def vjp(g):
        parts = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return Tensor._from_op(data, tuple(tensors), vjp)


def gather_rows(t, indices):
    """Pick one entry per row of a 2-D tensor: out[i] = t[i, indices[i]]."""
    a = _wrap(t)
    if a.data.ndim != 2:
        raise ValueError("gather_rows expects a 2-D tensor")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise ValueError("indices must be 1-D with one entry per row")
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= a.data.shape[1]:
        raise ValueError("gather index out of range")
    rows = np.arange(a.data.shape[0])

    def vjp(g):
        full = np.zeros(a.data.shape)
        full[rows, idx] = g
        return (full,)

    return Tensor._from_op(a.data[rows, idx], (a,), vjp)


def log_softmax(logits):
    """Numerically stable log-probabilities along the last axis of a 2-D tensor."""
    a = _wrap(logits)
    if a.data.ndim != 2:
        raise ValueError("log_softmax expects a batch x classes tensor")
    if a.data.shape[1] < 2:
        raise ValueError("log_softmax needs at least 2 classes")
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteError("non-finite logits")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - log_z

    def vjp(g):
        return (g - np.exp(out_data) * g.sum(axis=1, keepdims=True),)

    return Tensor._from_op(out_data, (a,), vjp)


def kl_categorical(p_log, q_log, stop_gradient_p=True):
    """Mean KL divergence between rows of log-probabilities.

    Computes mean_b sum_k exp(p_log)*(p_log - q_log). With ``stop_gradient_p``
    the first argument is treated as a constant, so no gradient flows into the
    reference distribution (the virtual-adversarial lineage convention).
    """
    p = _wrap(p_log)
    q = _wrap(q_log)
    if p.data.shape != q.data.shape:
        raise ValueError(f"shape mismatch: {p.data.shape} vs {q.data.shape}")
    if stop_gradient_p:
        p = p.detach()
    return (p.exp() * (p - q)).sum(axis=1).mean()


def _topo_order(root):
    """Post-order over the recorded graph, each node exactly once."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(loss, leaves):
    """Reverse-mode gradients of a scalar loss with respect to leaf tensors.

    Returns one ndarray per leaf. Leaves that the loss does not depend on get
    zeros; a leaf that was never recorded (requires_grad=False) is an error.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.data.size != 1:
        raise ValueError("loss must be a scalar")
    for leaf in leaves:
        if not isinstance(leaf, Tensor) or not leaf.requires_grad:
            raise GraphError("leaf not in graph: gradients were not recorded for it")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None or node._vjp is None:
            if g is not None:
                grads[id(node)] = g  # leaf: keep for lookup below
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad or pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg

    return [grads.get(id(leaf), np.zeros_like(leaf.data)) for leaf in leaves]
