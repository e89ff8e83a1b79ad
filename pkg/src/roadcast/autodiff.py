"""Reverse-mode automatic differentiation on dense float64 tensors.

A ``Tensor`` wraps a numpy float64 array and records, per operation, a
backward closure plus references to its parents. Calling :func:`backward` on
a scalar tensor walks that record list once in reverse topological order and
accumulates gradients into every reachable tensor created with
``requires_grad=True``. The record list is rebuilt on every forward pass and
cleared by ``backward``, so graphs are single-use.

Finiteness is enforced where values enter the system: tensor construction
rejects non-finite data, and the only primitive that can turn finite inputs
into non-finite outputs (``pow`` with negative exponents) re-checks its
output. All arithmetic is float64.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _shape_error(op, *shapes):
    named = " vs ".join(str(tuple(s)) for s in shapes)
    return ValueError(f"shape mismatch for {op}: {named}")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense float64 tensor with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values in tensor input")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._consumed = False

    @classmethod
    def _result(cls, data, parents, backward):
        """Internal constructor for op outputs; skips the finiteness scan."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._consumed = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
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
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def _accumulate(self, g):
        if self.grad is None:
            # private copy: incoming buffers may be shared between closures
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # ------------------------------------------------------------------
    # elementwise arithmetic
    # ------------------------------------------------------------------
    @staticmethod
    def _coerce(other):
        return other if isinstance(other, Tensor) else Tensor(other)

    def _check_broadcast(self, other, op):
        try:
            np.broadcast_shapes(self.data.shape, other.data.shape)
        except ValueError:
            raise _shape_error(op, self.data.shape, other.data.shape) from None

    def __add__(self, other):
        other = self._coerce(other)
        self._check_broadcast(other, "add")
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._result(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        self._check_broadcast(other, "sub")
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.data.shape))

        return Tensor._result(a.data - b.data, (a, b), backward)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        self._check_broadcast(other, "mul")
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._result(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._result(-a.data, (a,), backward)

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise _shape_error("matmul (operands must be >= 2-D)", a.data.shape, b.data.shape)
        if a.data.shape[-1] != b.data.shape[-2]:
            raise _shape_error("matmul", a.data.shape, b.data.shape)
        try:
            np.broadcast_shapes(a.data.shape[:-2], b.data.shape[:-2])
        except ValueError:
            raise _shape_error("matmul (batch dims)", a.data.shape, b.data.shape) from None

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

        return Tensor._result(a.data @ b.data, (a, b), backward)

    def pow(self, exponent):
        """Elementwise power with a fixed scalar exponent."""
        a = self
        p = float(exponent)
        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = a.data**p
        if not np.all(np.isfinite(out_data)):
            raise ValueError(f"pow({p}) produced non-finite values")

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * p * a.data ** (p - 1.0))

        return Tensor._result(out_data, (a,), backward)

    def abs(self):
        a = self

        def backward(g):
            # subgradient at exact zero is 0 (np.sign(0) == 0)
            if a.requires_grad:
                a._accumulate(g * np.sign(a.data))

        return Tensor._result(np.abs(a.data), (a,), backward)

    # ------------------------------------------------------------------
    # nonlinearities
    # ------------------------------------------------------------------
    def sigmoid(self):
        # 0.5 * (tanh(x/2) + 1) is the overflow-free form of the logistic
        a = self
        s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * s * (1.0 - s))

        return Tensor._result(s, (a,), backward)

    def tanh(self):
        a = self
        t = np.tanh(a.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * (1.0 - t * t))

        return Tensor._result(t, (a,), backward)

    def relu(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * (a.data > 0.0))

        return Tensor._result(np.maximum(a.data, 0.0), (a,), backward)

    def softmax(self, axis):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            if a.requires_grad:
                a._accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

        return Tensor._result(s, (a,), backward)

    # ------------------------------------------------------------------
    # reductions and shape ops
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(np.broadcast_to(_expand_reduced(g, a.data.shape, axis, keepdims), a.data.shape))

        return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)

    def mean(self, axis=None, keepdims=False):
        a = self
        count = a.data.size if axis is None else np.prod([a.data.shape[i] for i in _axis_tuple(axis, a.data.ndim)])

        def backward(g):
            if a.requires_grad:
                a._accumulate(np.broadcast_to(_expand_reduced(g, a.data.shape, axis, keepdims), a.data.shape) / count)

        return Tensor._result(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.reshape(a.data.shape))

        return Tensor._result(a.data.reshape(shape), (a,), backward)

    def transpose(self, *axes):
        a = self
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.transpose(inverse))

        return Tensor._result(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward)

    def __getitem__(self, key):
        # basic slicing only, so the scatter in backward hits disjoint cells
        a = self

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[key] = g
                a._accumulate(full)

        return Tensor._result(np.array(a.data[key], dtype=np.float64, copy=True), (a,), backward)


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g, shape, axis, keepdims):
    """Reinsert reduced axes of a sum/mean so ``g`` broadcasts to ``shape``."""
    if keepdims:
        return g
    if axis is None:
        return np.asarray(g).reshape([1] * len(shape))
    g = np.asarray(g)
    for ax in sorted(_axis_tuple(axis, len(shape))):
        g = np.expand_dims(g, ax)
    return g


def concat(tensors, axis=0):
    """Concatenate along an existing axis; gradient splits back per input."""
    tensors = [Tensor._coerce(t) for t in tensors]
    base = list(tensors[0].data.shape)
    axis = axis % len(base)
    for t in tensors[1:]:
        other = list(t.data.shape)
        if len(other) != len(base) or any(b != o for i, (b, o) in enumerate(zip(base, other)) if i != axis):
            raise _shape_error("concat", tensors[0].data.shape, t.data.shape)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    """Stack along a new axis; gradient routes each slice to its source."""
    tensors = [Tensor._coerce(t) for t in tensors]
    first = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != first:
            raise _shape_error("stack", first, t.data.shape)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return Tensor._result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def backward(loss):
    """Run one reverse pass from a scalar ``loss``, filling ``.grad`` buffers.

    The recorded graph is consumed: a second call on the same graph is
    rejected until a new forward pass rebuilds it.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {tuple(loss.data.shape)}")
    if loss._consumed:
        raise RuntimeError("backward already called on this graph; run a new forward pass")
    if not loss.requires_grad:
        raise RuntimeError("loss does not require gradients (no parameters reachable)")

    # iterative topological sort; graphs run to ~1e4 nodes per training step
    order = []
    visited = set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        if node._consumed:
            raise RuntimeError("graph shares a subgraph already consumed by backward")
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack_.append((parent, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        fn = node._backward
        if fn is not None:
            fn(node.grad)
            # clear the record: graphs are single-use and the buffers of
            # intermediates are not part of the API
            node._backward = None
            node._parents = ()
            node._consumed = True
            node.grad = None
    loss._consumed = True


class AdamState:
    """First/second moment buffers and step counter for Adam."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params, state, learning_rate):
    """One bias-corrected Adam update over a name->Tensor parameter dict.

    Every parameter must carry a populated gradient; gradients are cleared
    after the update.
    """
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: missing gradient for {missing[0]}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.grad = None
