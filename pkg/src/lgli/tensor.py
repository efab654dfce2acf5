"""Reverse-mode differentiable tensors over 64-bit numpy buffers.

Every operation the retrieval pipeline needs is expressed as a named
primitive with a registered adjoint.  Graphs are recorded eagerly on the
forward pass and consumed by a single reverse sweep; all arithmetic is
float64 so finite-difference checks are decisive.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided


class TensorError(Exception):
    """Base class for tensor-engine failures."""


class ShapeMismatchError(TensorError):
    """Inputs violate a primitive's shape rule."""


class UnknownPrimitiveError(TensorError):
    """Primitive kind is not registered."""


class NonScalarLossError(TensorError):
    """backward() was asked to differentiate a non-scalar."""


class GraphFreedError(TensorError):
    """backward() was called twice on the same recorded graph."""


class NonFiniteError(TensorError):
    """A forward value or gradient is NaN or infinite."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One recorded primitive application."""

    __slots__ = ("kind", "inputs", "attrs", "ctx", "freed")

    def __init__(self, kind: str, inputs: tuple, attrs: dict, ctx):
        self.kind = kind
        self.inputs = inputs
        self.attrs = attrs
        self.ctx = ctx
        self.freed = False


class Tensor:
    """N-dimensional float64 array, optionally tracked in a graph."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Graph-free view of the same buffer."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _shape_err(kind: str, msg: str) -> ShapeMismatchError:
    return ShapeMismatchError(f"{kind}: {msg}")


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reverse numpy broadcasting: reduce g down to `shape`."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive registry: kind -> (forward, backward)
#   forward(arrays, attrs) -> (out_array, ctx)
#   backward(grad, arrays, ctx, attrs) -> list of per-input gradients (or None)
# ---------------------------------------------------------------------------

_PRIMITIVES: dict = {}


def _register(kind: str, forward: Callable, backward: Callable, arity) -> None:
    _PRIMITIVES[kind] = (forward, backward, arity)


def primitive_kinds() -> tuple:
    return tuple(sorted(_PRIMITIVES))


# -- elementwise --------------------------------------------------------------

def _relu_fwd(xs, attrs):
    (x,) = xs
    mask = x > 0.0
    return x * mask, mask


def _relu_bwd(g, xs, ctx, attrs):
    return [g * ctx]


def _sigmoid_fwd(xs, attrs):
    (x,) = xs
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def _sigmoid_bwd(g, xs, ctx, attrs):
    y = ctx
    return [g * y * (1.0 - y)]


def _add_fwd(xs, attrs):
    a, b = xs
    if a.shape != b.shape:
        raise _shape_err("add", f"operand shapes differ: {a.shape} vs {b.shape}")
    return a + b, None


def _add_bwd(g, xs, ctx, attrs):
    return [g, g]


def _hadamard_fwd(xs, attrs):
    a, b = xs
    try:
        out = a * b
    except ValueError:
        raise _shape_err("hadamard", f"shapes not broadcastable: {a.shape} vs {b.shape}")
    if out.shape != np.broadcast_shapes(a.shape, b.shape):
        raise _shape_err("hadamard", f"shapes not broadcastable: {a.shape} vs {b.shape}")
    return out, None


def _hadamard_bwd(g, xs, ctx, attrs):
    a, b = xs
    return [_sum_to_shape(g * b, a.shape), _sum_to_shape(g * a, b.shape)]


def _scalar_scale_fwd(xs, attrs):
    (x,) = xs
    return x * attrs["scale"], None


def _scalar_scale_bwd(g, xs, ctx, attrs):
    return [g * attrs["scale"]]


# -- reshape / concat / gather ------------------------------------------------

def _reshape_fwd(xs, attrs):
    (x,) = xs
    shape = tuple(attrs["shape"])
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise _shape_err("reshape", f"cannot reshape size {x.size} into {shape}")
    return x.reshape(shape), None


def _reshape_bwd(g, xs, ctx, attrs):
    (x,) = xs
    return [g.reshape(x.shape)]


def _concat_fwd(xs, attrs):
    axis = attrs.get("axis", 1)
    base = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(base):
            raise _shape_err("concat", f"rank mismatch: {xs[0].shape} vs {x.shape}")
        for i, (p, q) in enumerate(zip(base, other)):
            if i != (axis % len(base)) and p != q:
                raise _shape_err("concat", f"non-axis dims differ at axis {i}: {p} vs {q}")
    return np.concatenate(xs, axis=axis), None


def _concat_bwd(g, xs, ctx, attrs):
    axis = attrs.get("axis", 1)
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return list(np.split(g, splits, axis=axis))


def _embedding_lookup_fwd(xs, attrs):
    (table,) = xs
    ids = np.asarray(attrs["ids"], dtype=np.intp)
    if ids.ndim != 1:
        raise _shape_err("embedding_lookup", "ids must be a flat index list")
    if table.shape[0] == 0 or (ids.size and (ids.min() < 0 or ids.max() >= table.shape[0])):
        raise _shape_err(
            "embedding_lookup",
            f"index out of range for table with {table.shape[0]} rows",
        )
    return table[ids], ids


def _embedding_lookup_bwd(g, xs, ctx, attrs):
    (table,) = xs
    ids = ctx
    dt = np.zeros_like(table)
    # few distinct rows in practice; sum per unique id is much faster than add.at
    uniq, inv = np.unique(ids, return_inverse=True)
    for k, row in enumerate(uniq):
        dt[row] = g[inv == k].sum(axis=0)
    return [dt]


# -- reductions / pooling -----------------------------------------------------

def _sum_fwd(xs, attrs):
    (x,) = xs
    return np.asarray(x.sum()), None


def _sum_bwd(g, xs, ctx, attrs):
    (x,) = xs
    return [np.broadcast_to(g, x.shape).copy()]


def _require_nchw(kind: str, x: np.ndarray) -> None:
    if x.ndim != 4:
        raise _shape_err(kind, f"expected a 4-d (N,C,H,W) input, got shape {x.shape}")


def _avg_pool_global_fwd(xs, attrs):
    (x,) = xs
    _require_nchw("avg_pool_global", x)
    return x.mean(axis=(2, 3), keepdims=True), None


def _avg_pool_global_bwd(g, xs, ctx, attrs):
    (x,) = xs
    n = x.shape[2] * x.shape[3]
    return [np.broadcast_to(g / n, x.shape).copy()]


def _max_pool_global_fwd(xs, attrs):
    (x,) = xs
    _require_nchw("max_pool_global", x)
    flat = x.reshape(x.shape[0], x.shape[1], -1)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2).reshape(
        x.shape[0], x.shape[1], 1, 1
    )
    return out, idx


def _max_pool_global_bwd(g, xs, ctx, attrs):
    (x,) = xs
    idx = ctx
    dflat = np.zeros((x.shape[0], x.shape[1], x.shape[2] * x.shape[3]))
    np.put_along_axis(dflat, idx[:, :, None], g.reshape(x.shape[0], x.shape[1], 1), axis=2)
    return [dflat.reshape(x.shape)]


def _avg_pool_spatial_fwd(xs, attrs):
    (x,) = xs
    _require_nchw("avg_pool_spatial", x)
    return x.mean(axis=1, keepdims=True), None


def _avg_pool_spatial_bwd(g, xs, ctx, attrs):
    (x,) = xs
    return [np.broadcast_to(g / x.shape[1], x.shape).copy()]


def _max_pool_spatial_fwd(xs, attrs):
    (x,) = xs
    _require_nchw("max_pool_spatial", x)
    idx = x.argmax(axis=1)
    out = np.take_along_axis(x, idx[:, None], axis=1)
    return out, idx


def _max_pool_spatial_bwd(g, xs, ctx, attrs):
    (x,) = xs
    idx = ctx
    dx = np.zeros_like(x)
    np.put_along_axis(dx, idx[:, None], g, axis=1)
    return [dx]


# -- normalization ------------------------------------------------------------

def _instance_norm_fwd(xs, attrs):
    (x,) = xs
    _require_nchw("instance_norm", x)
    eps = attrs.get("eps", 1e-5)
    mu = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * istd
    return y, (y, istd)


def _instance_norm_bwd(g, xs, ctx, attrs):
    y, istd = ctx
    gm = g.mean(axis=(2, 3), keepdims=True)
    gym = (g * y).mean(axis=(2, 3), keepdims=True)
    return [istd * (g - gm - y * gym)]


def _l2_normalize_fwd(xs, attrs):
    (x,) = xs
    if x.ndim < 1:
        raise _shape_err("l2_normalize", "input must have at least one axis")
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise NonFiniteError("l2_normalize: zero-norm row cannot be normalized")
    y = x / norm
    return y, (y, norm)


def _l2_normalize_bwd(g, xs, ctx, attrs):
    y, norm = ctx
    return [(g - y * (g * y).sum(axis=-1, keepdims=True)) / norm]


# -- affine / conv ------------------------------------------------------------

def _linear_fwd(xs, attrs):
    x, w = xs[0], xs[1]
    b = xs[2] if len(xs) == 3 else None
    if x.ndim != 2 or w.ndim != 2:
        raise _shape_err("linear", f"expected 2-d x and w, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise _shape_err(
            "linear", f"inner dims differ: x {x.shape} vs w {w.shape} (w is out x in)"
        )
    out = x @ w.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise _shape_err("linear", f"bias shape {b.shape} != ({w.shape[0]},)")
        out = out + b
    return out, None


def _linear_bwd(g, xs, ctx, attrs):
    x, w = xs[0], xs[1]
    grads = [g @ w, g.T @ x]
    if len(xs) == 3:
        grads.append(g.sum(axis=0))
    return grads


def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    return ho, wo


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(N,C,H,W) -> column matrix (N, C*kh*kw, Ho*Wo); returns padded input too."""
    n, c, h, w = x.shape
    ho, wo = _conv_out_hw(h, w, kh, kw, stride, pad)
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        xp[:, :, pad : pad + h, pad : pad + w] = x
    else:
        xp = x
    s = xp.strides
    win = as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
    )
    col = np.ascontiguousarray(win).reshape(n, c * kh * kw, ho * wo)
    return col, ho, wo


def _conv2d_fwd(xs, attrs):
    x, w = xs[0], xs[1]
    b = xs[2] if len(xs) == 3 else None
    stride = int(attrs.get("stride", 1))
    pad = int(attrs.get("padding", 0))
    if stride < 1 or pad < 0:
        raise TensorError(f"conv2d: invalid stride {stride} or padding {pad}")
    _require_nchw("conv2d", x)
    if w.ndim != 4:
        raise _shape_err("conv2d", f"weight must be (Cout,Cin,kh,kw), got {w.shape}")
    n, c, h, wdt = x.shape
    cout, cin, kh, kw = w.shape
    if cin != c:
        raise _shape_err("conv2d", f"input channels {c} != weight channels {cin}")
    if h + 2 * pad < kh or wdt + 2 * pad < kw:
        raise _shape_err("conv2d", f"kernel {kh}x{kw} larger than padded input {x.shape}")
    if b is not None and b.shape != (cout,):
        raise _shape_err("conv2d", f"bias shape {b.shape} != ({cout},)")
    col, ho, wo = _im2col(x, kh, kw, stride, pad)
    out = np.matmul(w.reshape(1, cout, cin * kh * kw), col)
    if b is not None:
        out += b.reshape(1, cout, 1)
    return out.reshape(n, cout, ho, wo), col


def _conv2d_bwd(g, xs, ctx, attrs):
    x, w = xs[0], xs[1]
    col = ctx
    stride = int(attrs.get("stride", 1))
    pad = int(attrs.get("padding", 0))
    n, c, h, wdt = x.shape
    cout, cin, kh, kw = w.shape
    _, _, ho, wo = g.shape
    g3 = g.reshape(n, cout, ho * wo)
    dw = np.matmul(g3, col.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    grads: list = [None, dw]
    if len(xs) == 3:
        grads.append(g3.sum(axis=(0, 2)))
    # input gradient is skipped for leaf images (caller signals via requires_grad)
    if attrs.get("_need_dx", True):
        dcol = np.matmul(w.reshape(1, cout, -1).transpose(0, 2, 1), g3)
        dcol = dcol.reshape(n, c, kh, kw, ho, wo)
        dxp = np.zeros((n, c, h + 2 * pad, wdt + 2 * pad))
        for dy in range(kh):
            for dx in range(kw):
                dxp[
                    :, :, dy : dy + (ho - 1) * stride + 1 : stride,
                    dx : dx + (wo - 1) * stride + 1 : stride,
                ] += dcol[:, :, dy, dx]
        grads[0] = dxp[:, :, pad : pad + h, pad : pad + wdt] if pad else dxp
    return grads


# -- recurrent step -----------------------------------------------------------

def _recurrent_step_fwd(xs, attrs):
    x, h, wz, uz, bz, wr, ur, br, wh, uh, bh = xs
    if x.ndim != 2 or h.ndim != 2 or x.shape[0] != h.shape[0]:
        raise _shape_err(
            "recurrent_step", f"x {x.shape} and h {h.shape} must be (N,din)/(N,dh)"
        )
    z = _sigmoid_fwd([x @ wz.T + h @ uz.T + bz], {})[0]
    r = _sigmoid_fwd([x @ wr.T + h @ ur.T + br], {})[0]
    rh = r * h
    c = np.tanh(x @ wh.T + rh @ uh.T + bh)
    out = (1.0 - z) * h + z * c
    return out, (z, r, rh, c)


def _recurrent_step_bwd(g, xs, ctx, attrs):
    x, h, wz, uz, bz, wr, ur, br, wh, uh, bh = xs
    z, r, rh, c = ctx
    dc = g * z
    dz = g * (c - h)
    dh = g * (1.0 - z)
    dac = dc * (1.0 - c * c)
    dx = dac @ wh
    duh = dac.T @ rh
    dwh = dac.T @ x
    dbh = dac.sum(axis=0)
    drh = dac @ uh
    dr = drh * h
    dh = dh + drh * r
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    dx = dx + daz @ wz + dar @ wr
    dh = dh + daz @ uz + dar @ ur
    return [
        dx,
        dh,
        daz.T @ x,
        daz.T @ h,
        daz.sum(axis=0),
        dar.T @ x,
        dar.T @ h,
        dar.sum(axis=0),
        dwh,
        duh,
        dbh,
    ]


# -- batch softmax cross-entropy ---------------------------------------------

def _softmax_ce_fwd(xs, attrs):
    (x,) = xs
    if x.ndim != 2:
        raise _shape_err(
            "softmax_cross_entropy_rows", f"expected a 2-d logit matrix, got {x.shape}"
        )
    b, c = x.shape
    targets = attrs.get("targets")
    if targets is None:
        if b != c:
            raise _shape_err(
                "softmax_cross_entropy_rows",
                f"diagonal targets need a square matrix, got {x.shape}",
            )
        targets = np.arange(b)
    else:
        targets = np.asarray(targets, dtype=np.intp)
        if targets.shape != (b,) or (b and (targets.min() < 0 or targets.max() >= c)):
            raise _shape_err(
                "softmax_cross_entropy_rows",
                f"targets must be {b} valid column indices",
            )
    shifted = x - x.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    denom = ex.sum(axis=1, keepdims=True)
    logp = shifted - np.log(denom)
    loss = -logp[np.arange(b), targets].mean()
    return np.asarray(loss), (ex / denom, targets)


def _softmax_ce_bwd(g, xs, ctx, attrs):
    p, targets = ctx
    b = p.shape[0]
    dx = p.copy()
    dx[np.arange(b), targets] -= 1.0
    return [dx * (float(g) / b)]


_register("relu", _relu_fwd, _relu_bwd, (1, 1))
_register("sigmoid", _sigmoid_fwd, _sigmoid_bwd, (1, 1))
_register("add", _add_fwd, _add_bwd, (2, 2))
_register("hadamard", _hadamard_fwd, _hadamard_bwd, (2, 2))
_register("scalar_scale", _scalar_scale_fwd, _scalar_scale_bwd, (1, 1))
_register("reshape", _reshape_fwd, _reshape_bwd, (1, 1))
_register("concat", _concat_fwd, _concat_bwd, (2, None))
_register("embedding_lookup", _embedding_lookup_fwd, _embedding_lookup_bwd, (1, 1))
_register("sum", _sum_fwd, _sum_bwd, (1, 1))
_register("avg_pool_global", _avg_pool_global_fwd, _avg_pool_global_bwd, (1, 1))
_register("max_pool_global", _max_pool_global_fwd, _max_pool_global_bwd, (1, 1))
_register("avg_pool_spatial", _avg_pool_spatial_fwd, _avg_pool_spatial_bwd, (1, 1))
_register("max_pool_spatial", _max_pool_spatial_fwd, _max_pool_spatial_bwd, (1, 1))
_register("instance_norm", _instance_norm_fwd, _instance_norm_bwd, (1, 1))
_register("l2_normalize", _l2_normalize_fwd, _l2_normalize_bwd, (1, 1))
_register("linear", _linear_fwd, _linear_bwd, (2, 3))
_register("conv2d", _conv2d_fwd, _conv2d_bwd, (2, 3))
_register("recurrent_step", _recurrent_step_fwd, _recurrent_step_bwd, (11, 11))
_register("softmax_cross_entropy_rows", _softmax_ce_fwd, _softmax_ce_bwd, (1, 1))


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


def apply_primitive(kind: str, inputs: Sequence[Tensor], attrs: Optional[dict] = None) -> Tensor:
    """Run one primitive forward and record it when gradients are live."""
    if kind not in _PRIMITIVES:
        raise UnknownPrimitiveError(f"unknown primitive kind: {kind!r}")
    forward, _, (lo, hi) = _PRIMITIVES[kind]
    if len(inputs) < lo or (hi is not None and len(inputs) > hi):
        raise TensorError(f"{kind}: expected between {lo} and {hi or 'inf'} inputs, got {len(inputs)}")
    attrs = attrs or {}
    arrays = [t.data for t in inputs]
    out_arr, ctx = forward(arrays, attrs)
    out = Tensor(out_arr)
    if _grad_enabled and any(_tracked(t) for t in inputs):
        # skip the expensive image gradient when the input is a constant leaf
        if kind == "conv2d":
            attrs = dict(attrs, _need_dx=_tracked(inputs[0]))
        out.node = Node(kind, tuple(inputs), attrs, ctx)
    return out


def _topo_order(root: Tensor) -> list:
    """Post-order over the recorded graph, each tensor once (iterative)."""
    order: list = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if id(t) in seen:
            continue
        if expanded or t.node is None:
            seen.add(id(t))
            order.append(t)
            continue
        stack.append((t, True))
        for inp in t.node.inputs:
            if id(inp) not in seen and _tracked(inp):
                stack.append((inp, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; grads accumulate into .grad buffers."""
    if loss.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    if loss.node is None and not loss.requires_grad:
        raise TensorError("loss is not connected to any recorded graph")
    if loss.node is not None and loss.node.freed:
        raise GraphFreedError("graph already consumed by a previous backward()")

    order = _topo_order(loss)
    for t in order:
        if t.node is not None and t.node.freed:
            raise GraphFreedError("graph already consumed by a previous backward()")

    flowing: dict = {id(loss): np.ones_like(loss.data)}
    # every reachable requires_grad tensor ends with a buffer, even if unused
    for t in order:
        if t.requires_grad and t.grad is None:
            t.grad = np.zeros_like(t.data)

    for t in reversed(order):
        g = flowing.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad += g
        node = t.node
        if node is None:
            continue
        _, bwd, _ = _PRIMITIVES[node.kind]
        arrays = [inp.data for inp in node.inputs]
        grads = bwd(g, arrays, node.ctx, node.attrs)
        stored_this_node: set = set()
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not _tracked(inp):
                continue
            acc = flowing.get(id(inp))
            if acc is None:
                # adjoints may alias the incoming gradient (add passes it
                # through twice, split hands out views); copy before the
                # buffer is mutated by later accumulation
                if id(gi) in stored_this_node or not gi.flags.owndata:
                    gi = gi.copy()
                stored_this_node.add(id(gi))
                flowing[id(inp)] = gi
            else:
                acc += gi
        node.ctx = None
        node.freed = True
