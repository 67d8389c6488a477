"""Minimal numpy-backed tensors with reverse-mode automatic differentiation.

Just enough machinery for point-cloud networks: batched matmul, per-position
affine maps, batch norm, leaky relu, axis reductions, gather, dropout and a
stable softmax cross entropy. Every differentiable op builds a closure-based
graph node; ``backward`` walks the graph once in reverse topological order.

Shapes follow the (B, C, ...) convention used throughout the package: batch
first, channels second, grid axes last. dtype is tagged "f32" or "f64"; f64
exists so gradient checks can run at full precision.
"""

from __future__ import annotations

import contextlib
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError, ShapeError, UsageError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class _Node:
    """One step of the computation graph: parent tensors plus a closure that
    maps the output gradient to a tuple of parent gradients (None = skip)."""

    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents, backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """A row-major numeric buffer with optional gradient tracking.

    The underlying array is treated as immutable once wrapped; ops return new
    tensors. ``grad`` is a plain ndarray, populated by :func:`backward` for
    leaves with ``requires_grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, dtype: Optional[str] = None, requires_grad: bool = False):
        arr = np.asarray(data)
        if dtype is None:
            tag = _TAGS.get(arr.dtype, "f32")
        else:
            if dtype not in _DTYPES:
                raise InvalidInputError(f"unknown dtype tag {dtype!r}, expected 'f32' or 'f64'")
            tag = dtype
        self.data = np.ascontiguousarray(arr, dtype=_DTYPES[tag])
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[_Node] = None

    # -- introspection -------------------------------------------------
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
    def dtype(self) -> str:
        return _TAGS[self.data.dtype]

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying buffer."""
        v = self.data.view()
        v.flags.writeable = False
        return v

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul_batched(self, other)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def permute(self, axes) -> "Tensor":
        return permute(self, axes)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def _wrap(other, like: Tensor) -> Tensor:
    if isinstance(other, Tensor):
        if other.dtype != like.dtype:
            raise UsageError(f"dtype mismatch: {like.dtype} vs {other.dtype}")
        return other
    return Tensor(np.asarray(other), dtype=like.dtype)


def _make(data: np.ndarray, parents, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.node = None
    if _grad_enabled and any(p.requires_grad or p.node is not None for p in parents):
        out.node = _Node(tuple(parents), backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the original operand shape after broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------

def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _wrap(b, a)
    data = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), back)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _wrap(a, b)
    b = _wrap(b, a)
    data = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), back)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _wrap(b, a)
    data = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        return (-g,)

    return _make(-a.data, (a,), back)


# ---------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}: {e}") from None

    def back(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), back)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute axes {axes} are not a permutation of 0..{a.ndim - 1}")
    inv = np.argsort(axes)

    def back(g):
        return (np.transpose(g, inv),)

    return _make(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise InvalidInputError("concat needs at least one tensor")
    first = tensors[0]
    axis = _check_axis(axis, first.ndim)
    for t in tensors[1:]:
        if t.dtype != first.dtype:
            raise UsageError("concat requires matching dtypes")
        if t.ndim != first.ndim:
            raise ShapeError(f"concat rank mismatch: {first.shape} vs {t.shape}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        out = []
        sl = [slice(None)] * g.ndim
        for i in range(len(sizes)):
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            out.append(g[tuple(sl)])
        return tuple(out)

    return _make(data, tuple(tensors), back)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = _check_axis(axis, a.ndim)
    n = a.shape[axis]
    if not (0 <= start < stop <= n):
        raise InvalidInputError(f"slice [{start}:{stop}] out of range for axis extent {n}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def back(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return (full,)

    return _make(np.ascontiguousarray(a.data[sl]), (a,), back)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from None

    def back(g):
        return (_unbroadcast(g, a.shape),)

    return _make(data, (a,), back)


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise InvalidInputError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


# ---------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------

def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the trailing two axes.

    A (..., m, p) @ B (..., p, n) -> (..., m, n); leading axes broadcast.
    """
    if not isinstance(b, Tensor):
        b = _wrap(b, a)
    elif a.dtype != b.dtype:
        raise UsageError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def back(g):
        # singleton contractions are plain outer products; broadcasting them
        # skips a huge batch of degenerate BLAS calls
        if b.data.shape[-1] == 1:
            ga = g * np.swapaxes(b.data, -1, -2)
        else:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if a.data.shape[-2] == 1:
            gb = np.swapaxes(a.data, -1, -2) * g
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), back)


def matmul_bias(a: Tensor, b: Tensor, bias: Tensor) -> Tensor:
    """Fused (..., m, p) @ (..., p, n) + bias(n): one output pass instead of two."""
    if a.dtype != b.dtype or a.dtype != bias.dtype:
        raise UsageError("dtype mismatch in matmul_bias")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    if bias.shape != (b.shape[-1],):
        raise ShapeError(f"bias must be ({b.shape[-1]},), got {bias.shape}")
    data = np.matmul(a.data, b.data)
    data += bias.data

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        gbias = g.sum(axis=tuple(range(g.ndim - 1)))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape), gbias

    return _make(data, (a, b, bias), back)


def pointwise_linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-position affine map over the channel axis.

    x: (B, C_in, *grid), weight: (C_out, C_in), bias: (C_out) or None.
    Returns (B, C_out, *grid). Equivalent to a 1x1 convolution over the grid.
    """
    if x.ndim < 2:
        raise ShapeError(f"pointwise_linear input needs rank >= 2, got {x.shape}")
    if weight.ndim != 2:
        raise ShapeError(f"weight must be (C_out, C_in), got {weight.shape}")
    b_dim, c_in = x.shape[0], x.shape[1]
    c_out, c_in_w = weight.shape
    if c_in != c_in_w:
        raise ShapeError(
            f"channel mismatch: input has {c_in} channels, weight expects {c_in_w}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias must be ({c_out},), got {bias.shape}")
    grid = x.shape[2:]
    g_size = int(np.prod(grid, dtype=np.int64)) if grid else 1

    xm = x.data.reshape(b_dim, c_in, g_size)
    out = np.matmul(weight.data, xm)  # (B, C_out, G)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape((b_dim, c_out) + grid)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gm = g.reshape(b_dim, c_out, g_size)
        dx = np.matmul(weight.data.T, gm).reshape(x.shape)
        dw = np.einsum("bog,big->oi", gm, xm, optimize=True)
        if bias is None:
            return dx, dw
        return dx, dw, gm.sum(axis=(0, 2))

    return _make(out, parents, back)


# ---------------------------------------------------------------------
# normalization / activation
# ---------------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: Optional[np.ndarray], running_var: Optional[np.ndarray],
               mode: str, momentum: float = 0.1, epsilon: float = 1e-5) -> Tensor:
    """Channel-wise batch normalization over all non-channel axes.

    Train mode uses batch statistics (biased variance) and updates the running
    buffers in place by exponential moving average. Eval mode normalizes with
    the running buffers. gamma/beta then scale and shift per channel.
    """
    if mode not in ("train", "eval"):
        raise InvalidInputError(f"mode must be 'train' or 'eval', got {mode!r}")
    if epsilon <= 0:
        raise InvalidInputError(f"epsilon must be > 0, got {epsilon}")
    if x.ndim < 2:
        raise ShapeError(f"batch_norm input needs rank >= 2, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must be ({c},), got {gamma.shape} and {beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    m = xd.size // c if c else 0

    if mode == "train":
        if m == 0:
            raise InvalidInputError("batch_norm in train mode needs a non-empty batch")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.astype(running_mean.dtype)
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var.astype(running_var.dtype)
    else:
        if running_mean is None or running_var is None:
            raise InvalidInputError("batch_norm in eval mode needs populated running stats")
        mu = np.asarray(running_mean, dtype=xd.dtype)
        var = np.asarray(running_var, dtype=xd.dtype)

    ivar = 1.0 / np.sqrt(var + np.asarray(epsilon, dtype=xd.dtype))
    xhat = (xd - mu.reshape(bshape)) * ivar.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    if mode == "train":
        def back(g):
            dbeta = g.sum(axis=axes)
            dgamma = (g * xhat).sum(axis=axes)
            dxhat = g * gamma.data.reshape(bshape)
            # classic fused form: only xhat and ivar are retained
            t = dxhat.sum(axis=axes, keepdims=True)
            u = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = (ivar.reshape(bshape) / m) * (m * dxhat - t - xhat * u)
            return dx, dgamma, dbeta
    else:
        def back(g):
            dbeta = g.sum(axis=axes)
            dgamma = (g * xhat).sum(axis=axes)
            dx = g * (gamma.data.reshape(bshape) * ivar.reshape(bshape))
            return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), back)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """x if x >= 0 else slope * x; the point x == 0 takes the positive branch."""
    if not 0 <= slope < 1:
        raise InvalidInputError(f"slope must be in [0, 1), got {slope}")
    neg_mask = x.data < 0
    out = np.where(neg_mask, x.data * np.asarray(slope, dtype=x.data.dtype), x.data)

    def back(g):
        return (np.where(neg_mask, g * np.asarray(slope, dtype=g.dtype), g),)

    return _make(out, (x,), back)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0 <= p < 1:
        raise InvalidInputError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0:
        return _make(x.data, (x,), lambda g: (g,))
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype)
    keep *= np.asarray(1.0 / (1.0 - p), dtype=x.data.dtype)
    out = x.data * keep

    def back(g):
        return (g * keep,)

    return _make(out, (x,), back)


# ---------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------

def reduce(x: Tensor, axis: int, kind: str) -> Tensor:
    """Reduce one axis away. kind 'max' routes the gradient to the winning
    element (lowest index on ties); kind 'mean' spreads it uniformly."""
    axis = _check_axis(axis, x.ndim)
    n = x.shape[axis]
    if n == 0:
        raise InvalidInputError(f"cannot reduce empty axis {axis} of shape {x.shape}")
    if kind == "max":
        am = np.argmax(x.data, axis=axis)  # np.argmax takes the first maximum
        out = np.take_along_axis(x.data, np.expand_dims(am, axis), axis).squeeze(axis)

        def back(g):
            dx = np.zeros_like(x.data)
            np.put_along_axis(dx, np.expand_dims(am, axis), np.expand_dims(g, axis), axis)
            return (dx,)
    elif kind == "mean":
        out = x.data.mean(axis=axis)

        def back(g):
            scaled = np.expand_dims(g, axis) / np.asarray(n, dtype=g.dtype)
            return (np.broadcast_to(scaled, x.shape),)
    else:
        raise InvalidInputError(f"kind must be 'max' or 'mean', got {kind!r}")

    return _make(np.ascontiguousarray(out), (x,), back)


def reduce_sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        out = np.asarray(x.data.sum())

        def back(g):
            return (np.broadcast_to(g, x.shape),)
    else:
        ax = _check_axis(axis, x.ndim)
        out = x.data.sum(axis=ax, keepdims=keepdims)

        def back(g):
            gg = g if keepdims else np.expand_dims(g, ax)
            return (np.broadcast_to(gg, x.shape),)

    return _make(out, (x,), back)


# ---------------------------------------------------------------------
# gather / loss
# ---------------------------------------------------------------------

def gather_points(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather per-point neighbors: x (B, C, N), index (B, M, k) of int ->
    (B, C, M, k). The backward pass scatter-adds into the source points."""
    if x.ndim != 3:
        raise ShapeError(f"gather_points expects (B, C, N), got {x.shape}")
    index = np.asarray(index)
    if index.ndim != 3 or index.shape[0] != x.shape[0]:
        raise ShapeError(f"index must be (B, M, k) with B={x.shape[0]}, got {index.shape}")
    if not np.issubdtype(index.dtype, np.integer):
        raise InvalidInputError("index must be integer-typed")
    b_dim, c, n = x.shape
    _, m, k = index.shape
    if index.size and (index.min() < 0 or index.max() >= n):
        raise InvalidInputError(f"index values must lie in [0, {n})")

    flat = (index + (np.arange(b_dim, dtype=index.dtype) * n)[:, None, None]).reshape(-1)
    xt = np.ascontiguousarray(x.data.transpose(0, 2, 1)).reshape(b_dim * n, c)
    out = xt[flat].reshape(b_dim, m, k, c).transpose(0, 3, 1, 2)

    def back(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, c)
        acc = np.zeros((b_dim * n, c), dtype=g.dtype)
        np.add.at(acc, flat, gt)
        return (acc.reshape(b_dim, n, c).transpose(0, 2, 1),)

    return _make(np.ascontiguousarray(out), (x,), back)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized.

    logits: (B, classes); labels: length-B integer vector. Returns a scalar.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (B, classes), got {logits.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"labels must be a length-{logits.shape[0]} vector, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidInputError("labels must be integers")
    b_dim, classes = logits.shape
    if b_dim == 0:
        raise InvalidInputError("softmax_cross_entropy needs a non-empty batch")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise InvalidInputError(f"labels must lie in [0, {classes})")

    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(b_dim)
    loss = np.asarray(-logp[rows, labels].mean())

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / b_dim),)

    return _make(loss, (logits,), back)


# ---------------------------------------------------------------------
# reverse-mode sweep
# ---------------------------------------------------------------------

def _topo(root: Tensor) -> list:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            stack.append((p, False))
    return order


def _leaf_accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss.

    Gradients add into ``.grad`` of every reachable leaf with requires_grad;
    calling twice without zeroing accumulates. Intermediate gradients live in
    a scratch table keyed by node identity and are freed as soon as consumed.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if not loss.requires_grad:
            raise UsageError("backward on a tensor that is not tracked by the graph")
        _leaf_accumulate(loss, np.ones_like(loss.data))
        return

    order = _topo(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    owned = {id(loss)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        owned.discard(id(t))
        if g is None:
            continue
        for p, pg in zip(t.node.parents, t.node.backward_fn(g)):
            if pg is None:
                continue
            if p.node is None:
                if p.requires_grad:
                    _leaf_accumulate(p, pg)
                continue
            key = id(p)
            if key not in grads:
                grads[key] = pg  # may alias upstream scratch; copy on next add
            elif key in owned:
                grads[key] += pg
            else:
                grads[key] = grads[key] + pg
                owned.add(key)
