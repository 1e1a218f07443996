"""Reverse-mode automatic differentiation over numpy arrays.

Every differentiable quantity is a :class:`Var` holding an ``np.ndarray``.
Operations on Vars append a node to the active :class:`Tape`; each node keeps
its parents together with a vector-Jacobian product closure. Calling
:func:`backward` walks the tape in reverse creation order, which is a valid
reverse topological order because a node can only consume older nodes.

Typical use::

    with Tape() as tape:
        x = tape.leaf(np.array(3.0), "x")
        y = x * x
    grads = backward(tape, y)
    grads[x]  # 6.0
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of the operations applied to :class:`Var` objects."""

    def __init__(self) -> None:
        self.nodes: list[Var] = []
        self.leaves: list[Var] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.remove(self)

    def leaf(self, value, name: str | None = None) -> "Var":
        v = Var(np.array(value, dtype=np.float64), (), self, name)
        self.leaves.append(v)
        return v

    def __len__(self) -> int:
        return len(self.nodes)


def current_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Var:
    """A numpy array recorded on a tape."""

    __slots__ = ("value", "parents", "tape", "name", "grad")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, parents: tuple, tape: Tape | None, name: str | None = None):
        self.value = value
        self.parents = parents
        self.tape = tape
        self.name = name
        self.grad = None
        if tape is not None:
            tape.nodes.append(self)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __len__(self) -> int:
        return len(self.value)

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return _make(-self.value, ((self, lambda g: -g),))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var) and x.tape is not None:
            return x.tape
    return current_tape()


def _make(value, parents) -> Var:
    parents = tuple((p, f) for p, f in parents if isinstance(p, Var))
    tape = _tape_of(*(p for p, _ in parents))
    return Var(np.asarray(value, dtype=np.float64), parents, tape)


def const(x) -> Var:
    """Wrap a plain array as a Var with no parents (never receives gradient)."""
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64), (), None)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    return _make(
        av + bv,
        ((a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(g, bv.shape))),
    )


def sub(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    return _make(
        av - bv,
        ((a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(-g, bv.shape))),
    )


def mul(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    return _make(
        av * bv,
        ((a, lambda g: _unbroadcast(g * bv, av.shape)), (b, lambda g: _unbroadcast(g * av, bv.shape))),
    )


def div(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _make(
        out,
        (
            (a, lambda g: _unbroadcast(g / bv, av.shape)),
            (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)),
        ),
    )


def power(a, p: float) -> Var:
    av = value_of(a)
    if p == 2:
        return _make(av * av, ((a, lambda g: 2.0 * g * av),))
    return _make(av**p, ((a, lambda g: g * p * av ** (p - 1)),))


def matmul(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def ga(g):
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

    def gb(g):
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

    return _make(av @ bv, ((a, ga), (b, gb)))


# ---------------------------------------------------------------- elementwise


def exp(a) -> Var:
    out = np.exp(value_of(a))
    return _make(out, ((a, lambda g: g * out),))


def expm1(a) -> Var:
    av = value_of(a)
    out = np.expm1(av)
    return _make(out, ((a, lambda g: g * (out + 1.0)),))


def log(a) -> Var:
    av = value_of(a)
    return _make(np.log(av), ((a, lambda g: g / av),))


def sqrt(a) -> Var:
    out = np.sqrt(value_of(a))
    return _make(out, ((a, lambda g: g * 0.5 / out),))


def sin(a) -> Var:
    av = value_of(a)
    return _make(np.sin(av), ((a, lambda g: g * np.cos(av)),))


def cos(a) -> Var:
    av = value_of(a)
    return _make(np.cos(av), ((a, lambda g: -g * np.sin(av)),))


def clip(a, lo=None, hi=None) -> Var:
    """Clamp with zero gradient wherever the bound is active."""
    av = value_of(a)
    out = np.clip(av, lo, hi)
    keep = out == av
    return _make(out, ((a, lambda g: g * keep),))


def minimum(a, c: float) -> Var:
    av = value_of(a)
    keep = av < c
    return _make(np.where(keep, av, c), ((a, lambda g: g * keep),))


def maximum(a, c: float) -> Var:
    av = value_of(a)
    keep = av > c
    return _make(np.where(keep, av, c), ((a, lambda g: g * keep),))


def where(cond: np.ndarray, a, b) -> Var:
    cond = np.asarray(cond, dtype=bool)
    av, bv = value_of(a), value_of(b)
    return _make(
        np.where(cond, av, bv),
        (
            (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape)),
            (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape)),
        ),
    )


# ---------------------------------------------------------------- reductions / shape


def vsum(a, axis=None, keepdims=False) -> Var:
    av = value_of(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _make(out, ((a, vjp),))


def mean(a, axis=None, keepdims=False) -> Var:
    av = value_of(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return vsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Var:
    av = value_of(a)
    return _make(av.reshape(shape), ((a, lambda g: g.reshape(av.shape)),))


def transpose(a, axes=None) -> Var:
    av = value_of(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(av, axes), ((a, lambda g: np.transpose(g, inv)),))


def getitem(a, key) -> Var:
    av = value_of(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, key, g)
        return out

    return _make(av[key], ((a, vjp),))


def take(a, idx: np.ndarray) -> Var:
    """Gather rows ``a[idx]`` along axis 0; faster backward than generic indexing."""
    av = value_of(a)
    idx = np.asarray(idx)

    def vjp(g):
        return segment_sum_np(g.reshape((idx.size,) + av.shape[1:]), idx.ravel(), av.shape[0])

    return _make(av[idx], ((a, vjp),))


def segment_sum_np(x: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    if x.ndim == 1:
        return np.bincount(seg, weights=x, minlength=n)
    flat = x.reshape(x.shape[0], -1)
    out = np.empty((n, flat.shape[1]))
    for c in range(flat.shape[1]):
        out[:, c] = np.bincount(seg, weights=flat[:, c], minlength=n)
    return out.reshape((n,) + x.shape[1:])


def segment_sum(a, seg: np.ndarray, n: int) -> Var:
    """Sum rows of ``a`` into ``n`` buckets given by ``seg`` (scatter-add)."""
    av = value_of(a)
    seg = np.asarray(seg)
    return _make(segment_sum_np(av, seg, n), ((a, lambda g: g[seg]),))


def stack(xs: Sequence, axis: int = 0) -> Var:
    vals = [value_of(x) for x in xs]
    out = np.stack(vals, axis=axis)

    def make_vjp(i):
        return lambda g: np.take(g, i, axis=axis)

    return _make(out, tuple((x, make_vjp(i)) for i, x in enumerate(xs)))


def concatenate(xs: Sequence, axis: int = 0) -> Var:
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def make_vjp(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(bounds[i], bounds[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return _make(out, tuple((x, make_vjp(i)) for i, x in enumerate(xs)))


# ---------------------------------------------------------------- vector helpers


def dot(a, b, axis: int = -1) -> Var:
    return vsum(a * b, axis=axis)


def cross(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    out = np.cross(av, bv)
    return _make(
        out,
        (
            (a, lambda g: _unbroadcast(np.cross(bv, g), av.shape)),
            (b, lambda g: _unbroadcast(np.cross(g, av), bv.shape)),
        ),
    )


def norm(a, axis: int = -1, keepdims: bool = False) -> Var:
    return sqrt(vsum(a * a, axis=axis, keepdims=keepdims))


def normalize(a, axis: int = -1, eps: float = 1e-12) -> Var:
    return a / (norm(a, axis=axis, keepdims=True) + eps)


# ---------------------------------------------------------------- fused ops


def soft_union(a, seg: np.ndarray, n: int) -> Var:
    """Per-bucket ``1 - prod(1 - exp(-a))`` for nonnegative exponents ``a``.

    Buckets with no entries evaluate to 0. Exact zeros of ``a`` (full
    coverage) are handled without dividing by zero.
    """
    av = value_of(a)
    seg = np.asarray(seg)
    q = -np.expm1(-av)  # 1 - exp(-a), accurate for small a
    zero = q == 0.0
    logq = np.log(np.where(zero, 1.0, q))
    nzero = np.bincount(seg, weights=zero.astype(float), minlength=n)
    logprod = np.bincount(seg, weights=logq, minlength=n)
    prod_nz = np.exp(logprod)
    prod = np.where(nzero > 0, 0.0, prod_nz)
    out = 1.0 - prod

    def vjp(g):
        # d out / d a_i = -exp(-a_i) * prod_{j != i} q_j
        others = np.where(
            zero,
            np.where(nzero[seg] == 1, prod_nz[seg], 0.0),
            np.where(nzero[seg] > 0, 0.0, prod_nz[seg] / np.where(zero, 1.0, q)),
        )
        return -g[seg] * np.exp(-av) * others

    return _make(out, ((a, vjp),))


def point_segment_dist2(pts, i0: np.ndarray, i1: np.ndarray, p: np.ndarray) -> Var:
    """Squared distance from fixed points ``p`` (m, 2) to segments between
    rows ``i0`` and ``i1`` of ``pts`` (n, 2).

    With ``r`` the residual from the closest point at parameter ``t``, the
    endpoint gradients are ``-2 r (1 - t)`` and ``-2 r t``; ``r`` is
    orthogonal to the segment for interior ``t`` so ``t`` itself drops out.
    """
    P = value_of(pts)
    a, b = P[i0], P[i1]
    ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    qx, qy = p[:, 0] - a[:, 0], p[:, 1] - a[:, 1]
    l2 = ex * ex + ey * ey
    t = np.clip((qx * ex + qy * ey) / np.where(l2 > 0, l2, 1.0), 0.0, 1.0)
    rx, ry = qx - t * ex, qy - t * ey
    out = rx * rx + ry * ry
    n = len(P)

    def vjp(g):
        gx, gy = -2.0 * g * rx, -2.0 * g * ry
        grad = np.zeros((n, 2))
        for idx, wgt in ((i0, 1.0 - t), (i1, t)):
            grad[:, 0] += np.bincount(idx, weights=gx * wgt, minlength=n)
            grad[:, 1] += np.bincount(idx, weights=gy * wgt, minlength=n)
        return grad

    return _make(out, ((pts, vjp),))


def bilinear_sample(tex, u, v) -> Var:
    """Sample a 2-D texture at normalized coordinates ``(u, v)`` in [0, 1].

    ``u`` runs along columns, ``v`` along rows; coordinates are clamped to
    the texture border.
    """
    tv = value_of(tex)
    uv_, vv_ = value_of(u), value_of(v)
    h, w = tv.shape
    x = np.clip(uv_, 0.0, 1.0) * (w - 1)
    y = np.clip(vv_, 0.0, 1.0) * (h - 1)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    t00, t01 = tv[y0, x0], tv[y0, x1]
    t10, t11 = tv[y1, x0], tv[y1, x1]
    out = (t00 * (1 - fx) + t01 * fx) * (1 - fy) + (t10 * (1 - fx) + t11 * fx) * fy
    inside_u = (uv_ > 0.0) & (uv_ < 1.0)
    inside_v = (vv_ > 0.0) & (vv_ < 1.0)

    def g_tex(g):
        out_g = np.zeros(h * w)
        for yy, xx, wgt in (
            (y0, x0, (1 - fx) * (1 - fy)),
            (y0, x1, fx * (1 - fy)),
            (y1, x0, (1 - fx) * fy),
            (y1, x1, fx * fy),
        ):
            out_g += np.bincount((yy * w + xx).ravel(), weights=(g * wgt).ravel(), minlength=h * w)
        return out_g.reshape(h, w)

    def g_u(g):
        d = ((t01 - t00) * (1 - fy) + (t11 - t10) * fy) * (w - 1)
        return _unbroadcast(g * d * inside_u, uv_.shape)

    def g_v(g):
        d = ((t10 * (1 - fx) + t11 * fx) - (t00 * (1 - fx) + t01 * fx)) * (h - 1)
        return _unbroadcast(g * d * inside_v, vv_.shape)

    return _make(out, ((tex, g_tex), (u, g_u), (v, g_v)))


# ---------------------------------------------------------------- backward


def backward(tape: Tape, out: Var) -> dict:
    """Accumulate d(out)/d(node) for every node; return gradients of all leaves.

    Leaves that ``out`` does not depend on receive zero gradient.
    """
    if out.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {out.value.shape}")
    for node in tape.nodes:
        node.grad = None
    out.grad = np.ones_like(out.value)
    for node in reversed(tape.nodes):
        g = node.grad
        if g is None or not node.parents:
            continue
        for parent, vjp in node.parents:
            pg = vjp(g)
            if parent.grad is None:
                parent.grad = np.array(pg, dtype=np.float64, copy=True).reshape(parent.value.shape)
            else:
                parent.grad = parent.grad + pg
    grads = {}
    for leaf in tape.leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.value)
        grads[leaf] = leaf.grad
    return grads


def finite_diff_check(
    loss_fn: Callable[[dict], Var],
    params: dict[str, np.ndarray],
    eps: float = 1e-4,
    entries: dict[str, Iterable] | None = None,
    floor: float = 1e-8,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``loss_fn`` receives a dict of leaf Vars (same keys as ``params``) and
    must return a scalar Var. ``entries`` optionally restricts, per key, the
    flat indices that are checked. Entries where both gradients are below
    ``floor`` in magnitude are skipped.
    """
    if not eps > 0:
        raise ValueError("degenerate step: eps must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    with Tape() as tape:
        leaves = {k: tape.leaf(v, k) for k, v in params.items()}
        out = loss_fn(leaves)
    grads = backward(tape, out)

    def evaluate(p):
        with Tape() as t:
            return float(loss_fn({k: t.leaf(v, k) for k, v in p.items()}).value)

    worst = 0.0
    for key, base in params.items():
        analytic = grads[leaves[key]].ravel()
        idxs = range(base.size) if entries is None or key not in entries else entries[key]
        for i in idxs:
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[key].flat[i] += eps
            minus[key].flat[i] -= eps
            numeric = (evaluate(plus) - evaluate(minus)) / (2 * eps)
            scale = max(abs(analytic[i]), abs(numeric))
            if scale <= floor:
                continue
            worst = max(worst, abs(analytic[i] - numeric) / scale)
    return worst
