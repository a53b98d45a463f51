"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is exactly what the trajectory model needs: matrix products,
1-D convolution along the time axis, per-frame agent mixing against a
constant adjacency stack, a small elementwise suite, and the Gaussian
reparameterization trick. The computation record is define-by-run: every
forward pass builds a fresh graph, so variable agent counts are free.

Values are immutable after construction; gradients never mutate nodes.
`backward` walks the record in reverse topological order and returns a
GradientMap, so repeated calls on the same record are idempotent.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

_ids = itertools.count()


class Value:
    """A node in the computation record: a float64 array plus its history.

    `parents` holds the operand Values and `vjp` maps the incoming output
    gradient to one gradient array per parent (vector-Jacobian product).
    Leaves have no parents.
    """

    __slots__ = ("data", "nid", "parents", "vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.nid = next(_ids)
        self.parents = tuple(parents)
        self.vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Value(shape={self.data.shape}, nid={self.nid})"


def leaf(data) -> Value:
    """Wrap an array as a gradient-carrying leaf of a new record."""
    return Value(data)


def _as_value(x) -> Value:
    if isinstance(x, Value):
        return x
    return Value(np.asarray(x, dtype=np.float64))


def _check_elementwise(a: Value, b: Value, opname: str):
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise DimensionError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} do not match "
            "(only identical shapes or scalar-vs-tensor broadcast is supported)"
        )


def _reduce_to(grad: np.ndarray, shape) -> np.ndarray:
    # undo scalar-vs-tensor broadcast in the backward pass
    if grad.shape == tuple(shape):
        return grad
    return np.sum(grad).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise suite


def add(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    _check_elementwise(a, b, "add")
    out = a.data + b.data
    return Value(out, (a, b),
                 lambda g: (_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)))


def sub(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    _check_elementwise(a, b, "sub")
    return Value(a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)))


def mul(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    _check_elementwise(a, b, "mul")
    return Value(a.data * b.data, (a, b),
                 lambda g: (_reduce_to(g * b.data, a.data.shape),
                            _reduce_to(g * a.data, b.data.shape)))


def scale(x: Value, c: float) -> Value:
    c = float(c)
    return Value(x.data * c, (x,), lambda g: (g * c,))


def neg(x: Value) -> Value:
    return scale(x, -1.0)


def exp(x: Value) -> Value:
    out = np.exp(x.data)
    return Value(out, (x,), lambda g: (g * out,))


def log(x: Value) -> Value:
    return Value(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x: Value) -> Value:
    out = np.tanh(x.data)
    return Value(out, (x,), lambda g: (g * (1.0 - out * out),))


def reciprocal(x: Value) -> Value:
    out = 1.0 / x.data
    return Value(out, (x,), lambda g: (-g * out * out,))


def clamp(x: Value, lo=None, hi=None) -> Value:
    """Clip to [lo, hi]; gradient passes through only inside the bounds."""
    out = np.clip(x.data, lo, hi)
    inside = np.ones_like(x.data, dtype=bool)
    if lo is not None:
        inside &= x.data >= lo
    if hi is not None:
        inside &= x.data <= hi
    return Value(out, (x,), lambda g: (np.where(inside, g, 0.0),))


def prelu(x: Value, slope: Value) -> Value:
    """Parametric ReLU. `slope` is a scalar or a per-channel vector matching
    the leading axis of `x`."""
    slope = _as_value(slope)
    if slope.data.ndim == 0:
        s = slope.data
    elif slope.data.shape == (x.data.shape[0],):
        s = slope.data.reshape((-1,) + (1,) * (x.data.ndim - 1))
    else:
        raise DimensionError(
            f"prelu: slope shape {slope.data.shape} incompatible with input "
            f"{x.data.shape}")
    pos = x.data > 0
    out = np.where(pos, x.data, s * x.data)

    def vjp(g):
        gx = np.where(pos, g, s * g)
        gs_full = np.where(pos, 0.0, g * x.data)
        if slope.data.ndim == 0:
            gs = np.sum(gs_full)
        else:
            gs = np.sum(gs_full, axis=tuple(range(1, x.data.ndim)))
        return gx, np.asarray(gs)

    return Value(out, (x, slope), vjp)


def dropout(x: Value, rate: float, rng: np.random.Generator) -> Value:
    """Inverted dropout: surviving entries scaled by 1/(1-rate).

    The caller decides train/eval; this op always applies its mask
    (rate 0 is the exact identity).
    """
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return Value(x.data, (x,), lambda g: (g,))
    keep = rng.random(x.data.shape) >= rate
    factor = keep / (1.0 - rate)
    return Value(x.data * factor, (x,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# linear algebra / convolution


def matmul(a: Value, b: Value) -> Value:
    a, b = _as_value(a), _as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    return Value(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def conv_time(x: Value, kernel: Value, padding: int = 0) -> Value:
    """1-D convolution along the time axis, independent per agent column.

    x: (C_in, T, N), kernel: (C_out, C_in, K) -> (C_out, T + 2*padding - K + 1, N)
    with zero padding.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 3:
        raise DimensionError(
            f"conv_time: expected 3-D operands, got {x.data.shape} and "
            f"{kernel.data.shape}")
    c_in, t, n = x.data.shape
    c_out, kc_in, k = kernel.data.shape
    if kc_in != c_in:
        raise DimensionError(
            f"conv_time: kernel input channels {kc_in} != input channels {c_in}")
    if k > t + 2 * padding:
        raise DimensionError(
            f"conv_time: kernel length {k} exceeds padded input length "
            f"{t + 2 * padding}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0)))
    # windows: (C_in, T', N, K)
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)
    out = np.einsum("oik,itnk->otn", kernel.data, win, optimize=True)
    t_out = out.shape[1]

    def vjp(g):
        gk = np.einsum("otn,itnk->oik", g, win, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, j:j + t_out, :] += np.einsum(
                "otn,oi->itn", g, kernel.data[:, :, j], optimize=True)
        gx = gxp[:, padding:padding + t, :] if padding else gxp
        return gx, gk

    return Value(out, (x, kernel), vjp)


def add_bias(x: Value, b: Value) -> Value:
    """Add a per-channel bias vector to a (C, ...) tensor."""
    b = _as_value(b)
    if b.data.shape != (x.data.shape[0],):
        raise DimensionError(
            f"add_bias: bias {b.data.shape} does not match channels of "
            f"{x.data.shape}")
    bcast = b.data.reshape((-1,) + (1,) * (x.data.ndim - 1))
    return Value(x.data + bcast, (x, b),
                 lambda g: (g, g.sum(axis=tuple(range(1, x.data.ndim)))))


def mix_agents(x: Value, adj: np.ndarray) -> Value:
    """Per-frame mixing against a constant adjacency stack.

    x: (C, T, N), adj: (T, N, N) -> out[c,t,n] = sum_m x[c,t,m] * adj[t,m,n].
    Adjacency is data-derived, not learned, so it carries no gradient.
    """
    adj = np.asarray(adj, dtype=np.float64)
    if x.data.ndim != 3 or adj.ndim != 3 or adj.shape[0] != x.data.shape[1] \
            or adj.shape[1] != adj.shape[2] or adj.shape[1] != x.data.shape[2]:
        raise DimensionError(
            f"mix_agents: input {x.data.shape} vs adjacency {adj.shape}")
    out = np.einsum("ctm,tmn->ctn", x.data, adj, optimize=True)
    return Value(out, (x,),
                 lambda g: (np.einsum("ctn,tmn->ctm", g, adj, optimize=True),))


def transpose_ct(x: Value) -> Value:
    """Swap the channel and time axes of a (C, T, N) tensor."""
    return Value(np.swapaxes(x.data, 0, 1), (x,),
                 lambda g: (np.swapaxes(g, 0, 1),))


def concat_channels(a: Value, b: Value) -> Value:
    if a.data.shape[1:] != b.data.shape[1:]:
        raise DimensionError(
            f"concat_channels: trailing dims differ, {a.data.shape} vs "
            f"{b.data.shape}")
    ca = a.data.shape[0]
    return Value(np.concatenate([a.data, b.data], axis=0), (a, b),
                 lambda g: (g[:ca], g[ca:]))


def slice_time(x: Value, start: int, stop: int) -> Value:
    """Take frames [start, stop) along the time axis of a (C, T, N) tensor."""
    t = x.data.shape[1]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop, :] = g
        return (gx,)

    if not (0 <= start < stop <= t):
        raise DimensionError(f"slice_time: [{start}, {stop}) out of range T={t}")
    return Value(x.data[:, start:stop, :], (x,), vjp)


def sum_all(x: Value) -> Value:
    shape = x.data.shape
    return Value(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Value) -> Value:
    return scale(sum_all(x), 1.0 / x.data.size)


LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


def reparameterize(mu: Value, logvar: Value, rng: np.random.Generator) -> Value:
    """Pathwise Gaussian sample mu + exp(logvar/2) * eps, eps ~ N(0, I).

    logvar is clamped to [-10, 10] before exponentiation. Gradients flow to
    mu and logvar only; eps is a constant of the record.
    """
    if mu.data.shape != logvar.data.shape:
        raise DimensionError(
            f"reparameterize: mu {mu.data.shape} vs logvar {logvar.data.shape}")
    eps = rng.standard_normal(mu.data.shape)
    sigma = exp(scale(clamp(logvar, LOGVAR_MIN, LOGVAR_MAX), 0.5))
    return add(mu, mul(sigma, Value(eps)))


# ---------------------------------------------------------------------------
# backward


class GradientMap:
    """Gradients keyed by node id; unreached nodes read as zero."""

    def __init__(self, grads: dict):
        self._grads = grads

    def get(self, v: Value) -> np.ndarray:
        g = self._grads.get(v.nid)
        if g is None:
            return np.zeros_like(v.data)
        return g

    def __contains__(self, v: Value):
        return v.nid in self._grads


def backward(loss: Value) -> GradientMap:
    """Reverse-mode sweep from a scalar loss over its computation record."""
    if loss.data.size != 1:
        raise ContractError(
            f"backward: loss must be scalar, got shape {loss.data.shape}")

    # iterative topological order (records can be thousands of nodes deep)
    order = []
    seen = {loss.nid}
    stack = [(loss, iter(loss.parents))]
    while stack:
        node, it = stack[-1]
        child = next(it, None)
        if child is None:
            order.append(node)
            stack.pop()
        elif child.nid not in seen:
            seen.add(child.nid)
            stack.append((child, iter(child.parents)))

    grads = {loss.nid: np.ones_like(loss.data)}
    for node in reversed(order):
        if node.vjp is None:
            continue
        g = grads.get(node.nid)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            acc = grads.get(parent.nid)
            grads[parent.nid] = pg.copy() if acc is None else acc + pg
    return GradientMap(grads)
