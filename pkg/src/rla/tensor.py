"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the model actually needs are provided. Binary elementwise
operations accept operands of identical shape, or one operand that is a
0-d tensor / Python number; there is no general broadcasting.

Recording happens only while a :class:`GradientTape` is active on the current
thread and at least one operand has ``requires_grad`` set::

    W = Tensor(np.ones((2, 3)), requires_grad=True)
    with GradientTape() as tape:
        loss = sum(matmul(W, x))
    grads = backward(tape, loss)      # {W: dloss/dW}
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, DomainError, NonFiniteError

__all__ = [
    "Tensor",
    "GradientTape",
    "backward",
    "checks",
    "set_checks",
    "checks_enabled",
    "as_tensor",
    "zeros",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "linear",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "relu",
    "clip",
    "tsum",
    "mean",
    "concat",
    "reshape",
    "log_softmax",
    "pick",
    "conv2d",
    "max_pool2d",
    "blend",
    "elementwise",
]

_local = threading.local()
_CHECKS = {"enabled": False}


def set_checks(enabled):
    """Toggle the NaN/Inf check performed after every forward op."""
    _CHECKS["enabled"] = bool(enabled)


def checks_enabled():
    return _CHECKS["enabled"]


@contextmanager
def checks(enabled=True):
    prev = _CHECKS["enabled"]
    _CHECKS["enabled"] = bool(enabled)
    try:
        yield
    finally:
        _CHECKS["enabled"] = prev


def _tapes():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape():
    stack = _tapes()
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional float64 array that may participate in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag}{rg})"

    def __len__(self):
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape):
    return Tensor(np.zeros(shape))


class _Node:
    __slots__ = ("out", "parents", "fn")

    def __init__(self, out, parents, fn):
        self.out = out
        self.parents = parents
        self.fn = fn


class GradientTape:
    """Ordered record of differentiable operations on the current thread."""

    def __init__(self):
        self.nodes = []
        self._leaves = {}
        self._produced = set()

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tapes()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            stack.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    @property
    def leaves(self):
        """Tensors that require gradients but were not produced on this tape."""
        return list(self._leaves.values())

    def _record(self, out, parents, fn):
        for p in parents:
            if p.requires_grad and id(p) not in self._produced:
                self._leaves.setdefault(id(p), p)
        self._produced.add(id(out))
        self.nodes.append(_Node(out, parents, fn))

    def backward(self, loss=None, seeds=None):
        """Replay the tape in reverse.

        Either ``loss`` (a scalar tensor) or ``seeds`` (a mapping from recorded
        tensors to upstream gradient arrays) starts the replay. Every leaf's
        ``.grad`` is zeroed first and then receives its accumulated gradient.
        Returns ``{leaf: grad}``.
        """
        grads = {}
        start = []
        if loss is not None:
            if loss.data.size != 1 or loss.ndim > 1:
                raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
            start.append((loss, np.ones_like(loss.data)))
        for t, g in (seeds or {}).items():
            g = np.asarray(g, dtype=np.float64)
            if g.shape != t.shape:
                raise DimensionError(f"seed gradient shape {g.shape} != tensor shape {t.shape}")
            start.append((t, g))
        if not start:
            raise ContractError("backward needs a loss or seed gradients")
        for t, g in start:
            if not t.requires_grad:
                raise ContractError("backward target is not registered on the tape")
            k = id(t)
            grads[k] = grads[k] + g if k in grads else g

        for leaf in self._leaves.values():
            leaf.grad = np.zeros_like(leaf.data)

        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for p, pg in zip(node.parents, node.fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                k = id(p)
                # fan-out: contributions add
                grads[k] = grads[k] + pg if k in grads else pg

        out = {}
        for k, leaf in self._leaves.items():
            if k in grads:
                leaf.grad = leaf.grad + grads[k]
            out[leaf] = leaf.grad
        return out


def backward(tape, loss=None, seeds=None):
    """Functional alias for :meth:`GradientTape.backward`."""
    return tape.backward(loss, seeds)


def _finish(data, parents, fn, opname):
    if _CHECKS["enabled"] and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{opname} produced non-finite values")
    out = Tensor(data)
    tape = current_tape()
    if tape is not None:
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                tape._record(out, parents, fn)
                break
    return out


def _binary_operands(a, b, opname):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} are not compatible")
    return a, b


def _reduce_to(g, shape):
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def add(a, b):
    a, b = _binary_operands(a, b, "add")
    sa, sb = a.shape, b.shape
    return _finish(a.data + b.data, (a, b),
                   lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), "add")


def sub(a, b):
    a, b = _binary_operands(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _finish(a.data - b.data, (a, b),
                   lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)), "sub")


def mul(a, b):
    a, b = _binary_operands(a, b, "mul")
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape
    return _finish(ad * bd, (a, b),
                   lambda g: (_reduce_to(g * bd, sa), _reduce_to(g * ad, sb)), "mul")


def neg(a):
    a = as_tensor(a)
    return _finish(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _finish(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def linear(x, W, b=None):
    """Row-wise affine map ``x @ W.T + b`` for x of shape (batch, in)."""
    x, W = as_tensor(x), as_tensor(W)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {W.shape}")
    xd, Wd = x.data, W.data
    out = xd @ Wd.T
    if b is None:
        return _finish(out, (x, W), lambda g: (g @ Wd, g.T @ xd), "linear")
    b = as_tensor(b)
    if b.shape != (W.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not match weight {W.shape}")
    out = out + b.data
    return _finish(out, (x, W, b), lambda g: (g @ Wd, g.T @ xd, g.sum(axis=0)), "linear")


def sigmoid(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))
    return _finish(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _finish(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return _finish(e, (a,), lambda g: (g * e,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of a non-positive value")
    ad = a.data
    return _finish(np.log(ad), (a,), lambda g: (g / ad,), "log")


def relu(a):
    a = as_tensor(a)
    m = a.data > 0.0
    return _finish(np.where(m, a.data, 0.0), (a,), lambda g: (g * m,), "relu")


def clip(a, lo, hi):
    """Clamp into [lo, hi]; gradient passes only where the input was inside."""
    a = as_tensor(a)
    m = (a.data >= lo) & (a.data <= hi)
    return _finish(np.clip(a.data, lo, hi), (a,), lambda g: (g * m,), "clip")


def tsum(a):
    a = as_tensor(a)
    shape = a.shape
    return _finish(np.asarray(a.data.sum()), (a,),
                   lambda g: (np.full(shape, float(g)),), "sum")


def mean(a):
    a = as_tensor(a)
    shape, n = a.shape, a.size
    return _finish(np.asarray(a.data.mean()), (a,),
                   lambda g: (np.full(shape, float(g) / n),), "mean")


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of nothing")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _finish(data, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def _getitem(a, index):
    shape = a.shape

    def fn(g):
        full = np.zeros(shape)
        full[index] += g
        return (full,)

    return _finish(a.data[index], (a,), fn, "getitem")


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {exc}") from None
    return _finish(data, (a,), lambda g: (g.reshape(old),), "reshape")


def log_softmax(a):
    """Log-probabilities along the last axis of a 2-D tensor."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return _finish(out, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),),
                   "log_softmax")


def pick(a, index):
    """Per-row gather: ``out[i] = a[i, index[i]]``."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise DimensionError(f"pick: index {index.shape} does not fit {a.shape}")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def fn(g):
        full = np.zeros(shape)
        full[rows, index] = g
        return (full,)

    return _finish(a.data[rows, index], (a,), fn, "pick")


def conv2d(x, w, b=None):
    """Valid-padding, stride-1 cross-correlation.

    x: (batch, in_ch, H, W); w: (out_ch, in_ch, kh, kw); b: (out_ch,).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} does not match kernel {w.shape}")
    kh, kw = w.shape[2:]
    if x.shape[2] < kh or x.shape[3] < kw:
        raise DimensionError(f"conv2d: kernel {w.shape} larger than input {x.shape}")
    xd, wd = x.data, w.data
    win = sliding_window_view(xd, (kh, kw), axis=(2, 3))  # B,C,Ho,Wo,kh,kw
    out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise DimensionError(f"conv2d: bias {b.shape} does not match kernel {w.shape}")
        out = out + b.data[None, :, None, None]
        parents = (x, w, b)

    def fn(g):
        dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))
        dx = np.tensordot(gwin, wd[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))
        dx = dx.transpose(0, 3, 1, 2)
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _finish(np.ascontiguousarray(out), parents, fn, "conv2d")


def max_pool2d(x, k=2):
    """Non-overlapping k×k max pooling; trailing rows/cols that do not fill a window are dropped."""
    x = as_tensor(x)
    B, C, H, W = x.shape
    Ho, Wo = H // k, W // k
    if Ho == 0 or Wo == 0:
        raise DimensionError(f"max_pool2d: input {x.shape} smaller than window {k}")
    blocks = (x.data[:, :, :Ho * k, :Wo * k]
              .reshape(B, C, Ho, k, Wo, k)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(B, C, Ho, Wo, k * k))
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def fn(g):
        gb = np.zeros((B, C, Ho, Wo, k * k))
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * k, Wo * k)
        full = np.zeros((B, C, H, W))
        full[:, :, :Ho * k, :Wo * k] = gb
        return (full,)

    return _finish(out, (x,), fn, "max_pool2d")


def blend(a, b, w):
    """Per-element convex combination ``a*w + b*(1-w)``.

    The result is clamped into [min(a, b), max(a, b)] so rounding can never
    leave the interval; w == 0 returns b and w == 1 returns a bitwise.
    """
    a, b, w = as_tensor(a), as_tensor(b), as_tensor(w)
    if not (a.shape == b.shape == w.shape):
        raise DimensionError(f"blend: shapes {a.shape}, {b.shape}, {w.shape} differ")
    ad, bd, wd = a.data, b.data, w.data
    out = np.clip(ad * wd + bd * (1.0 - wd), np.minimum(ad, bd), np.maximum(ad, bd))
    return _finish(out, (a, b, w),
                   lambda g: (g * wd, g * (1.0 - wd), g * (ad - bd)), "blend")


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "log": log, "exp": exp, "relu": relu, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op, *args):
    """Dispatch a pointwise op by name, e.g. ``elementwise("sigmoid", x)``."""
    if op in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{op} takes one operand")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{op} takes two operands")
        return _BINARY[op](*args)
    raise ContractError(f"unknown elementwise op {op!r}")
