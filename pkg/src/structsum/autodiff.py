"""Reverse-mode automatic differentiation over dense numpy arrays.

A small tape: every ``Tensor`` produced by an operation keeps references to
its parents and a closure mapping the output gradient to per-parent
gradients.  ``backward()`` walks the graph once in reverse topological
order, carrying per-call buffers so that repeated calls accumulate into
``.grad`` instead of double-counting.  The operation set is exactly what
the summarization models need; there is no general broadcasting machinery
beyond bias rows and scalar constants.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(dtype):
    """Set the dtype used for new tensors built from non-float data."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    """Raised when an operation's inputs do not conform; names both sides."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " vs ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (decoding, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

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
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from a scalar. Each reachable node is visited once
        per call; repeated calls add another full contribution into every
        ``.grad`` buffer (use ``zero_grad`` between optimization steps)."""
        if self.data.size != 1:
            raise ShapeError("backward", self.shape, detail="loss must be scalar")
        order = _toposort(self)
        buffers = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = buffers.pop(id(node), None)
            if g is None:
                continue
            node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in buffers:
                    buffers[key] = buffers[key] + pg
                else:
                    buffers[key] = pg

    # operator sugar used throughout the model code
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
        return mul(self, -1.0)

    def __getitem__(self, key):
        return take(self, key)


def _toposort(root):
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data, name=None):
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=_DEFAULT_DTYPE), requires_grad=True, name=name)


def _make(data, parents, backward_fn, name=None):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    if name:
        out.name = name
    return out


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("elementwise_mul", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError("div", a.shape, b.shape) from None

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make(data, (a, b), backward)


def minimum(a, b):
    """Elementwise min. Ties route the gradient to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("min_elementwise", a.shape, b.shape)
    first = a.data <= b.data
    data = np.where(first, a.data, b.data)

    def backward(g):
        return g * first, g * ~first

    return _make(data, (a, b), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError("matmul", a.shape, b.shape, detail="only 1-D/2-D operands")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def backward(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return b.data @ g, np.outer(a.data, g)
        return g * b.data, g * a.data

    return _make(data, (a, b), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise AutodiffError("concat: empty input list")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis % len(base)
        ):
            raise ShapeError("concat", tensors[0].shape, t.shape)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        pieces = []
        for lo, hi in zip(offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pieces.append(g[tuple(idx)])
        return tuple(pieces)

    return _make(data, tensors, backward)


def take(x, key):
    """Numpy indexing (slices or integer arrays) with scatter-add backward."""
    x = as_tensor(x)
    data = x.data[key]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(data, (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(data, (x,), backward)


def embedding_lookup(table, ids):
    """Rows of ``table`` selected by the integer array ``ids``."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise AutodiffError(
            f"embedding_lookup: index out of range for table of {table.shape[0]} rows "
            f"(got min {ids.min()}, max {ids.max()})"
        )
    return take(table, ids)


def gather_cols(x, idx):
    """Per-row column gather: out[b, k] = x[b, idx[b, k]]."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if x.ndim != 2 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError("gather_cols", x.shape, idx.shape)
    rows = np.arange(x.shape[0])[:, None]
    data = x.data[rows, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _make(data, (x,), backward)


def scatter_cols(values, idx, width):
    """Per-row scatter-add: out[b, idx[b, k]] += values[b, k]."""
    values = as_tensor(values)
    idx = np.asarray(idx, dtype=np.intp)
    if values.ndim != 2 or idx.shape != values.shape:
        raise ShapeError("scatter_cols", values.shape, idx.shape)
    rows = np.arange(values.shape[0])[:, None]
    data = np.zeros((values.shape[0], width), dtype=values.data.dtype)
    np.add.at(data, (rows, idx), values.data)

    def backward(g):
        return (g[rows, idx],)

    return _make(data, (values,), backward)


# ---------------------------------------------------------------------------
# nonlinearities and reductions


def tanh(x):
    x = as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return _make(data, (x,), backward)


def sigmoid(x):
    x = as_tensor(x)
    data = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * data * (1.0 - data),)

    return _make(data, (x,), backward)


def exp(x):
    x = as_tensor(x)
    data = np.exp(x.data)

    def backward(g):
        return (g * data,)

    return _make(data, (x,), backward)


def log(x):
    x = as_tensor(x)
    data = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return _make(data, (x,), backward)


def softplus(x):
    """log(1 + e^x); keeps the two-way mixing coefficient positive."""
    return log(add(exp(x), 1.0))


def softmax(x, mask=None):
    """Row softmax over the last axis, computed with max subtraction.

    ``mask`` is an optional 0/1 array of the same shape; masked entries get
    exactly zero probability and receive no gradient.
    """
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != x.shape:
            raise ShapeError("softmax", x.shape, mask.shape, detail="mask shape")
        z = np.where(mask > 0, z, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - inner),)

    return _make(data, (x,), backward)


def tensor_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis=axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(data, (x,), backward)


def tensor_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    denom = x.size if axis is None else x.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis=axis)
        return (np.broadcast_to(g, x.shape) / denom,)

    return _make(data, (x,), backward)


# single dispatch table so callers (and tests) can enumerate the op set
OP_REGISTRY = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "concat": concat,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "elementwise_mul": mul,
    "div": div,
    "exp": exp,
    "sum": tensor_sum,
    "mean": tensor_mean,
    "log": log,
    "min_elementwise": minimum,
    "slice": take,
    "embedding_lookup": embedding_lookup,
    "gather_cols": gather_cols,
    "scatter_cols": scatter_cols,
    "reshape": reshape,
}


def forward_op(kind, *inputs, **kwargs):
    """Apply a registered primitive by name."""
    try:
        fn = OP_REGISTRY[kind]
    except KeyError:
        raise AutodiffError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic and central-difference gradients."""

    tol: float
    abs_floor: float
    max_rel_error: dict = field(default_factory=dict)
    worst: float = 0.0

    @property
    def passed(self):
        return self.worst <= self.tol

    def __str__(self):
        lines = [f"grad check: worst rel error {self.worst:.3e} (tol {self.tol:.1e})"]
        for name, err in sorted(self.max_rel_error.items(), key=lambda kv: -kv[1]):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def grad_check(f, params, h=1e-5, tol=1e-4, abs_floor=1e-7, sample=None, rng=None):
    """Compare analytic gradients of ``f(params)`` against central differences.

    ``f`` must be a deterministic function of the parameter tensors that
    rebuilds its graph on every call and returns a scalar ``Tensor``.
    Elements whose analytic and numeric gradients are both below
    ``abs_floor`` in magnitude count as exact.  ``sample`` restricts the
    check to that many randomly chosen elements per parameter (all elements
    when ``None``).
    """
    if h <= 0:
        raise ValueError("grad_check: h must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f(params)
    if not np.isfinite(out.data).all():
        raise AutodiffError("grad_check: non-finite function output")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(tol=tol, abs_floor=abs_floor)
    for pos, (p, a) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        n = flat.size
        if sample is None or sample >= n:
            positions = np.arange(n)
        else:
            positions = rng.choice(n, size=sample, replace=False)
        worst = 0.0
        for j in positions:
            orig = flat[j]
            flat[j] = orig + h
            hi = float(f(params).data)
            flat[j] = orig - h
            lo = float(f(params).data)
            flat[j] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise AutodiffError("grad_check: non-finite function output")
            numeric = (hi - lo) / (2.0 * h)
            ana = float(a.reshape(-1)[j])
            scale = max(abs(ana), abs(numeric))
            if scale < abs_floor:
                continue
            worst = max(worst, abs(ana - numeric) / scale)
        report.max_rel_error[p.name or f"param{pos}"] = worst
        report.worst = max(report.worst, worst)
    return report
