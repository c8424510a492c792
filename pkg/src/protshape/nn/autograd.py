"""Tape-based reverse-mode differentiation over a small, closed set of
numpy primitives.

Every primitive returns a :class:`Tensor` recorded on the tape of its
inputs.  :func:`backward` walks the tape in reverse and accumulates
vector-Jacobian products into the leaves.  Values are float64.
"""

from __future__ import annotations

import numpy as np


class NNError(ValueError):
    pass


class ShapeMismatch(NNError):
    pass


class NonFinite(FloatingPointError):
    pass


class NonScalarLoss(NNError):
    pass


class Tensor:
    __slots__ = ("value", "tape", "parents", "vjp", "name", "requires_grad", "idx")

    def __init__(self, value, tape, parents=(), vjp=None, name=None, requires_grad=False):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.requires_grad = requires_grad
        self.idx = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, _lift(self.tape, other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(self.tape, other))

    def __rsub__(self, other):
        return sub(_lift(self.tape, other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return pointwise_mul(self, _lift(self.tape, other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return divide(self, _lift(self.tape, other))

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Record of one forward pass.  Leaves created with :meth:`param` are the
    parameters whose gradients :func:`backward` reports."""

    def __init__(self):
        self.nodes = []
        self.params = {}

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            return self.params[name]
        t = Tensor(_as_array(value), self, name=name, requires_grad=True)
        self.params[name] = t
        return t

    def const(self, value) -> Tensor:
        return Tensor(_as_array(value), self)

    def params_from(self, store: dict, prefix: str = "") -> dict:
        """Register every array of ``store`` whose name starts with ``prefix``."""
        return {k: self.param(k, v) for k, v in store.items() if k.startswith(prefix)}


def _as_array(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFinite("non-finite value entering the tape")
    return arr


def _lift(tape, x):
    return x if isinstance(x, Tensor) else tape.const(x)


def _out(value, parents, vjp, op):
    if not np.all(np.isfinite(value)):
        raise NonFinite(f"{op} produced a non-finite value")
    tape = parents[0].tape
    rg = any(p.requires_grad for p in parents)
    return Tensor(value, tape, parents, vjp if rg else None, requires_grad=rg)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# -- elementwise -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _out(a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _out(a.value - b.value, (a, b),
                lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def scale(x: Tensor, c: float) -> Tensor:
    return _out(x.value * c, (x,), lambda g: (g * c,), "scale")


def pointwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "pointwise_mul")
    av, bv = a.value, b.value
    return _out(av * bv, (a, b),
                lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
                "pointwise_mul")


def divide(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "divide")
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise NonFinite("divide by zero")
    out = av / bv
    return _out(out, (a, b),
                lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
                "divide")


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return _out(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    v = x.value
    neg = alpha * np.expm1(np.minimum(v, 0.0))
    out = np.where(v > 0, v, neg)
    dydx = np.where(v > 0, 1.0, neg + alpha)
    return _out(out, (x,), lambda g: (g * dydx,), "elu")


def sqrt(x: Tensor) -> Tensor:
    """Square root; at exactly zero the derivative is taken as zero."""
    v = x.value
    if np.any(v < 0):
        raise NNError("sqrt of a negative value")
    out = np.sqrt(v)
    with np.errstate(divide="ignore"):
        d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
    return _out(out, (x,), lambda g: (g * d,), "sqrt")


# -- structural ------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot reshape {old} to {shape}") from exc
    return _out(out, (x,), lambda g: (g.reshape(old),), "reshape")


def concat(xs, axis: int = -1) -> Tensor:
    xs = list(xs)
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[x.shape for x in xs]}") from exc
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _out(out, tuple(xs), vjp, "concat")


def take_rows(x: Tensor, start: int, stop: int | None) -> Tensor:
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _out(x.value[start:stop].copy(), (x,), vjp, "take_rows")


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = np.sum(x.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _out(np.asarray(out, dtype=float), (x,), vjp, "sum")


def cumsum(x: Tensor, axis: int = 0) -> Tensor:
    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _out(np.cumsum(x.value, axis=axis), (x,), vjp, "cumsum")


# -- linear layers ---------------------------------------------------------


def dense(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` with ``x`` of shape (..., in) and ``W`` of shape (in, out)."""
    if x.shape[-1] != W.shape[0] or (b is not None and b.shape != (W.shape[1],)):
        raise ShapeMismatch(
            f"dense: x {x.shape}, W {W.shape}, b {None if b is None else b.shape}"
        )
    xv, Wv = x.value, W.value
    out = xv @ Wv
    if b is not None:
        out = out + b.value

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ Wv.T
        gW = xv.reshape(-1, xv.shape[-1]).T @ g2
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return _out(out, parents, vjp, "dense")


def conv1d(x: Tensor, K: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with zero "same" padding.

    ``x`` is (T, C_in), ``K`` is (k, C_in, C_out), the result (T, C_out).
    """
    if x.value.ndim != 2 or K.value.ndim != 3 or K.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"conv1d: x {x.shape}, K {K.shape}")
    if b is not None and b.shape != (K.shape[2],):
        raise ShapeMismatch(f"conv1d: bias {b.shape} for {K.shape[2]} channels")
    T, cin = x.shape
    k, _, cout = K.shape
    left = (k - 1) // 2
    xpad = np.zeros((T + k - 1, cin))
    xpad[left : left + T] = x.value
    cols = np.concatenate([xpad[i : i + T] for i in range(k)], axis=1)
    Kmat = K.value.reshape(k * cin, cout)
    out = cols @ Kmat
    if b is not None:
        out = out + b.value

    def vjp(g):
        gK = (cols.T @ g).reshape(k, cin, cout)
        gcols = g @ Kmat.T
        gpad = np.zeros_like(xpad)
        for i in range(k):
            gpad[i : i + T] += gcols[:, i * cin : (i + 1) * cin]
        gx = gpad[left : left + T]
        if b is None:
            return gx, gK
        return gx, gK, g.sum(axis=0)

    parents = (x, K) if b is None else (x, K, b)
    return _out(out, parents, vjp, "conv1d")


# -- resampling ------------------------------------------------------------


def interp(values: Tensor, positions: Tensor, lo: float, hi: float) -> Tensor:
    """Piecewise-linear interpolation of samples on a uniform grid.

    ``values`` (N,) or (N, C) sit at ``N`` equispaced nodes from ``lo`` to
    ``hi``; the result is evaluated at ``positions`` (M,).  Outside the node
    range the end value is held and the position derivative is zero.
    """
    v = values.value
    p = positions.value
    if p.ndim != 1:
        raise ShapeMismatch("interp positions must be 1-d")
    N = v.shape[0]
    if N < 2:
        raise ShapeMismatch("interp needs at least 2 nodes")
    h = (hi - lo) / (N - 1)
    u = (p - lo) / h
    inside = (u >= 0) & (u <= N - 1)
    uc = np.clip(u, 0.0, N - 1)
    i0 = np.minimum(np.floor(uc).astype(int), N - 2)
    w = uc - i0
    wv = w.reshape(-1, *([1] * (v.ndim - 1)))
    out = (1 - wv) * v[i0] + wv * v[i0 + 1]
    slope = (v[i0 + 1] - v[i0]) / h

    def vjp(g):
        gv = np.zeros_like(v)
        np.add.at(gv, i0, (1 - wv) * g)
        np.add.at(gv, i0 + 1, wv * g)
        gp = g * slope
        if gp.ndim > 1:
            gp = gp.reshape(len(p), -1).sum(axis=1)
        return gv, np.where(inside, gp, 0.0)

    return _out(out, (values, positions), vjp, "interp")


# -- losses and projections ------------------------------------------------


def l2_loss(x: Tensor, y: Tensor) -> Tensor:
    """Squared error summed over all axes but the first, averaged over the
    first (the batch axis).  1-d inputs are a batch of one."""
    if x.shape != y.shape:
        raise ShapeMismatch(f"l2_loss: {x.shape} vs {y.shape}")
    d = x.value - y.value
    n = x.shape[0] if d.ndim >= 2 else 1
    return _out(np.asarray(np.sum(d * d) / n), (x, y),
                lambda g: (2 * g * d / n, -2 * g * d / n), "l2_loss")


def normalize_to_unit_sphere(x: Tensor, axis=-1) -> Tensor:
    """``x / ||x||`` along ``axis`` (``None`` for the whole tensor)."""
    v = x.value
    nrm = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
    if np.any(nrm == 0):
        raise NNError("cannot normalize a zero vector")
    y = v / nrm

    def vjp(g):
        return ((g - y * np.sum(g * y, axis=axis, keepdims=True)) / nrm,)

    return _out(y, (x,), vjp, "normalize_to_unit_sphere")


# -- reverse pass ----------------------------------------------------------


def backward(tape: Tape, loss: Tensor, wrt=None) -> dict:
    """Gradients of scalar ``loss``.

    Returns ``{name: grad}`` for the tape's parameters, or, if ``wrt`` is a
    list of tensors, a list of their gradients in the same order.
    """
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    grads = {loss.idx: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[: loss.idx + 1]):
        g = grads.pop(node.idx, None) if node.vjp is not None else grads.get(node.idx)
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            if parent.idx in grads:
                grads[parent.idx] = grads[parent.idx] + pg
            else:
                grads[parent.idx] = np.array(pg, dtype=float)
    if wrt is not None:
        return [grads.get(t.idx, np.zeros_like(t.value)).reshape(t.shape) for t in wrt]
    return {
        name: grads.get(t.idx, np.zeros_like(t.value)).reshape(t.shape)
        for name, t in tape.params.items()
    }


def numeric_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn`` at ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fn(x)
        flat[i] = old - h
        fm = fn(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g
