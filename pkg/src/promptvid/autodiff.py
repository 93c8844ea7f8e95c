"""Dense float64 tensors with hand-built reverse-mode differentiation.

Every model computation is composed from the primitives in this module.
Each primitive records its parents and a backward rule; `backward` walks
the graph in reverse topological order and returns gradients for named
leaves that require them. Data is row-major numpy float64 throughout and
all operations are deterministic: identical inputs give bit-identical
outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError

_CHECKED = False

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_CUBIC = 0.044715

# Additive attention-logit bias for masked positions. exp(-1e9 - max) underflows
# to exactly 0.0 in float64, so masked keys get exactly zero weight and gradient.
MASK_BIAS = -1.0e9


def set_checked(on: bool) -> None:
    """Toggle NaN/Inf rejection at tensor construction (used by tests)."""
    global _CHECKED
    _CHECKED = bool(on)


def checked_enabled() -> bool:
    return _CHECKED


class Tensor:
    """A float64 array plus the graph edge that produced it.

    Tensors are immutable after construction. `requires_grad` marks leaves
    that should receive gradients; for derived tensors it is inherited from
    the parents, and branches where nothing requires a gradient carry no
    graph edges at all.
    """

    __slots__ = ("data", "requires_grad", "name", "op", "parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if _CHECKED and not np.all(np.isfinite(arr)):
            raise ContractError("tensor rejected in checked mode: non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = None
        self.parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; all arithmetic routes through the module-level ops.
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    """Create a leaf tensor (copies its input)."""
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    """Leaf tensor that never receives a gradient."""
    return Tensor(data, requires_grad=False)


def _wrap(arr, op, parents, backward) -> Tensor:
    """Build a derived tensor; graph edges are kept only where a gradient
    can flow, so frozen-only branches cost nothing in backward."""
    if _CHECKED and not np.all(np.isfinite(arr)):
        raise ContractError(f"op '{op}' produced non-finite values in checked mode")
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.name = None
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out.parents = ()
        out._backward = None
    return out


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, opname: str):
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    out = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _wrap(out, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    out = a.data - b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _wrap(out, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    out = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _wrap(out, "mul", (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data

    def backward(g):
        return (
            (a, _unbroadcast(g / b.data, a.data.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        )

    return _wrap(out, "div", (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        return ((a, -g),)

    return _wrap(-a.data, "neg", (a,), backward)


def texp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return ((a, g * out),)

    return _wrap(out, "exp", (a,), backward)


def tlog(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        return ((a, g / a.data),)

    return _wrap(np.log(a.data), "log", (a,), backward)


def tsqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        return ((a, 0.5 * g / out),)

    return _wrap(out, "sqrt", (a,), backward)


def gelu(a) -> Tensor:
    """GELU with the tanh approximation."""
    a = _as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_SQRT_2_OVER_PI * x * (1.0 + _GELU_CUBIC * x2))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_CUBIC * x2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return ((a, g * local),)

    return _wrap(out, "gelu", (a,), backward)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def _restore_axes(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if not keepdims:
        if axis is None:
            g = np.reshape(g, (1,) * len(shape))
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % len(shape) for ax in axes)
            g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        return ((a, _restore_axes(np.asarray(g), a.data.shape, axis, keepdims)),)

    return _wrap(np.asarray(out), "sum", (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def backward(g):
        return ((a, _restore_axes(np.asarray(g), a.data.shape, axis, keepdims) / count),)

    return _wrap(np.asarray(out), "mean", (a,), backward)


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.data.shape} as {shape}") from None

    def backward(g):
        return ((a, g.reshape(a.data.shape)),)

    return _wrap(out, "reshape", (a,), backward)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return ((a, np.transpose(g, inv)),)

    return _wrap(np.transpose(a.data, axes), "transpose", (a,), backward)


def swap_last(a) -> Tensor:
    """Swap the last two axes (k^T in attention)."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise DimensionError("swap_last needs at least 2 axes")
    perm = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, perm)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: incompatible shapes {[t.data.shape for t in tensors]} on axis {axis}"
        ) from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, pieces))

    return _wrap(out, "concat", tuple(tensors), backward)


def narrow(a, axis, start, length) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    if start < 0 or length < 0 or start + length > a.data.shape[axis]:
        raise DimensionError(
            f"narrow: [{start}, {start + length}) outside axis {axis} of {a.data.shape}"
        )
    index = (slice(None),) * axis + (slice(start, start + length),)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return ((a, full),)

    return _wrap(a.data[index], "narrow", (a,), backward)


def expand(a, shape) -> Tensor:
    """Broadcast to `shape` without copying; gradient sums back down."""
    a = _as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"expand: {a.data.shape} does not broadcast to {shape}") from None

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)),)

    return _wrap(out, "expand", (a,), backward)


def stack(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.data.shape[:axis] + (1,) + t.data.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def gather_rows(table, indices) -> Tensor:
    """Select rows of `table` by integer index; gradient scatter-adds."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError("gather_rows expects a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise DimensionError("gather_rows: index out of range")
    out = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return ((table, full),)

    return _wrap(out, "gather_rows", (table,), backward)


def select_positions(a, positions) -> Tensor:
    """out[i] = a[i, positions[i]] for a of shape (B, L, ...)."""
    a = _as_tensor(a)
    pos = np.asarray(positions, dtype=np.intp)
    if a.ndim < 2 or pos.shape != (a.data.shape[0],):
        raise DimensionError("select_positions: need (B, L, ...) input and B positions")
    if pos.size and (pos.min() < 0 or pos.max() >= a.data.shape[1]):
        raise DimensionError("select_positions: position out of range")
    rows = np.arange(a.data.shape[0])
    out = a.data[rows, pos]

    def backward(g):
        full = np.zeros_like(a.data)
        full[rows, pos] = g
        return ((a, full),)

    return _wrap(out, "select_positions", (a,), backward)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product. Supports 2D x 2D, batched x 2D, and batched x batched
    with identical leading dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError("matmul needs at least 2-D operands")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: inner dims {ad.shape} x {bd.shape} disagree")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise DimensionError(f"matmul: batch dims {ad.shape} x {bd.shape} disagree")
    out = ad @ bd

    if bd.ndim == 2:

        def backward(g):
            grads = []
            if a.requires_grad:
                grads.append((a, g @ bd.T))
            if b.requires_grad:
                k, n = bd.shape
                grads.append((b, ad.reshape(-1, k).T @ g.reshape(-1, n)))
            return grads

    else:

        def backward(g):
            grads = []
            if a.requires_grad:
                grads.append((a, g @ np.swapaxes(bd, -1, -2)))
            if b.requires_grad:
                grads.append((b, np.swapaxes(ad, -1, -2) @ g))
            return grads

    return _wrap(out, "matmul", (a, b), backward)


# ---------------------------------------------------------------------------
# Normalization and softmax
# ---------------------------------------------------------------------------


def softmax(a, axis=-1) -> Tensor:
    """Overflow-safe softmax along `axis` (max-subtraction)."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        return ((a, p * (g - inner)),)

    return _wrap(p, "softmax", (a,), backward)


def log_softmax(a, axis=-1) -> Tensor:
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return ((a, g - np.exp(out) * g.sum(axis=axis, keepdims=True)),)

    return _wrap(out, "log_softmax", (a,), backward)


def layer_norm(x, gamma, beta, eps=1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    dim = x.data.shape[-1]
    if gamma.data.shape != (dim,) or beta.data.shape != (dim,):
        raise DimensionError(
            f"layer_norm: gamma/beta must be ({dim},), got {gamma.data.shape}/{beta.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        grads = []
        if x.requires_grad:
            gh = g * gamma.data
            term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            grads.append((x, term * inv))
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            grads.append((gamma, (g * xhat).sum(axis=lead)))
        if beta.requires_grad:
            grads.append((beta, g.sum(axis=lead)))
        return grads

    return _wrap(out, "layer_norm", (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# Multi-head self-attention
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttentionWeights:
    """Projection weights of one attention block; all (D, D) plus (D,) biases."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


def mhsa(x, weights: AttentionWeights, heads: int, mask_bias=None):
    """Scaled dot-product multi-head self-attention.

    x: (..., n, D) with D divisible by `heads`. Returns the attended
    sequence (..., n, D) and the row-stochastic attention maps
    (..., heads, n, n). `mask_bias` is an optional additive constant on the
    attention logits (broadcastable to the map shape) used for key masking.
    """
    x = _as_tensor(x)
    dim = x.data.shape[-1]
    if dim % heads != 0:
        raise ConfigurationError(f"width {dim} not divisible by {heads} heads")
    if x.ndim < 2:
        raise DimensionError("mhsa expects (..., n, D) input")
    head_dim = dim // heads
    n = x.data.shape[-2]
    lead = x.data.shape[:-2]
    nlead = len(lead)
    split_perm = tuple(range(nlead)) + (nlead + 1, nlead, nlead + 2)

    def split_heads(t):
        t = reshape(t, lead + (n, heads, head_dim))
        return transpose(t, split_perm)

    q = split_heads(add(matmul(x, weights.wq), weights.bq))
    k = split_heads(add(matmul(x, weights.wk), weights.bk))
    v = split_heads(add(matmul(x, weights.wv), weights.bv))

    scores = mul(matmul(q, swap_last(k)), 1.0 / math.sqrt(head_dim))
    if mask_bias is not None:
        scores = add(scores, mask_bias)
    attn = softmax(scores, axis=-1)

    ctx = matmul(attn, v)
    ctx = transpose(ctx, split_perm)  # the permutation is its own inverse
    ctx = reshape(ctx, lead + (n, dim))
    out = add(matmul(ctx, weights.wo), weights.bo)
    return out, attn


# ---------------------------------------------------------------------------
# Graph and backward
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphNode:
    op: str
    inputs: tuple
    output: int


class Graph:
    """Topologically ordered record of the ops reaching a root tensor.

    `order` lists tensors with every node's inputs before the node itself;
    `nodes` is the same order restricted to actual operations.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.order = _topo_order(root)
        self.nodes = [
            GraphNode(t.op, tuple(id(p) for p in t.parents), id(t))
            for t in self.order
            if t.parents
        ]


def _topo_order(root: Tensor):
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _grad_table(loss: Tensor):
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        bw = t._backward
        if bw is None:
            continue
        g = grads.get(id(t))
        if g is None:
            continue
        for parent, pg in bw(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            acc = grads.get(key)
            grads[key] = pg if acc is None else acc + pg
    return grads, order


def backward(loss: Tensor) -> dict:
    """Gradients of a scalar loss for every named leaf that requires grad.

    Frozen tensors (requires_grad=False) receive no entry and no gradient
    is ever computed for them.
    """
    grads, order = _grad_table(loss)
    out = {}
    for t in order:
        if t.name is not None and t.requires_grad and not t.parents:
            g = grads.get(id(t))
            if g is not None:
                out[t.name] = Tensor(g)
    return out


def gradients(loss: Tensor, wrt) -> list:
    """Raw gradient arrays of a scalar loss wrt specific tensors (zeros if
    the loss does not depend on one of them)."""
    grads, _ = _grad_table(loss)
    return [np.array(grads.get(id(t), np.zeros_like(t.data))) for t in wrt]
