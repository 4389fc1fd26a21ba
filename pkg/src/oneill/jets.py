"""Truncated multivariate Taylor jets, batched over sample points.

A :class:`Jet` holds Taylor coefficients ``c[p, ..., alpha] = d^alpha f(x_p) / alpha!``
for every tensor component of a field, truncated at total degree ``order``.
Arithmetic on jets is exact polynomial arithmetic modulo degree ``order + 1``,
so derivatives of products, inverses and contractions of symbolic input fields
are carried to full floating-point accuracy without finite differences.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import _kernels
from .expr import Compiled, Expr, diff

_LETTERS = "abcdefghijklmnopqrstuvwx"


class JetSpace:
    """Monomial bookkeeping for ``dim`` variables up to total degree ``order``."""

    def __init__(self, dim: int, order: int):
        self.dim = dim
        self.order = order
        monos: list[tuple[int, ...]] = []
        for deg in range(order + 1):
            for combo in itertools.combinations_with_replacement(range(dim), deg):
                e = [0] * dim
                for v in combo:
                    e[v] += 1
                monos.append(tuple(e))
        self.monos = monos
        self.index = {m: i for i, m in enumerate(monos)}
        self.size = len(monos)
        self.degree = np.array([sum(m) for m in monos], dtype=np.int64)
        self.factorial = np.array(
            [math.prod(math.factorial(k) for k in m) for m in monos], dtype=float
        )
        I, J, K = [], [], []
        for i, a in enumerate(monos):
            for j, b in enumerate(monos):
                s = tuple(x + y for x, y in zip(a, b))
                k = self.index.get(s)
                if k is not None:
                    I.append(i)
                    J.append(j)
                    K.append(k)
        # products sorted by output degree so truncated products use a prefix
        I, J, K = (np.array(v, dtype=np.int64) for v in (I, J, K))
        perm = np.argsort(self.degree[K], kind="stable")
        self.I, self.J, self.K = I[perm], J[perm], K[perm]
        self._upto = np.searchsorted(self.degree[self.K], np.arange(order + 1), side="right")
        self._deriv = []
        for v in range(dim):
            src, dst, fac = [], [], []
            for i, b in enumerate(monos):
                up = list(b)
                up[v] += 1
                k = self.index.get(tuple(up))
                if k is not None:
                    src.append(k)
                    dst.append(i)
                    fac.append(float(up[v]))
            self._deriv.append(
                (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(fac))
            )
        # parent of each nonconstant monomial along the last nonzero variable
        self.parent: list[tuple[int, int]] = [(-1, -1)]
        for m in monos[1:]:
            v = max(i for i, k in enumerate(m) if k)
            low = list(m)
            low[v] -= 1
            self.parent.append((self.index[tuple(low)], v))


@lru_cache(maxsize=None)
def space(dim: int, order: int) -> JetSpace:
    return JetSpace(dim, order)


class Jet:
    """Batched tensor-valued jet: ``c`` has shape ``(P, *shape, space.size)``."""

    __slots__ = ("c", "order", "space")

    def __init__(self, c: np.ndarray, order: int, sp: JetSpace):
        if order > sp.order:
            order = sp.order
        self.c = c
        self.order = order
        self.space = sp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.c.shape[1:-1]

    @property
    def npoints(self) -> int:
        return self.c.shape[0]

    @property
    def value(self) -> np.ndarray:
        if self.order < 0:
            raise ValueError("jet carries no valid coefficients")
        return self.c[..., 0]

    def _wrap(self, c, order=None):
        return Jet(c, self.order if order is None else order, self.space)

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.c + other.c, min(self.order, other.order), self.space)
        c = self.c.copy()
        c[..., 0] += other
        return self._wrap(c)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            return Jet(self.c - other.c, min(self.order, other.order), self.space)
        c = self.c.copy()
        c[..., 0] -= other
        return self._wrap(c)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return self._wrap(-self.c)

    def __mul__(self, s):
        if isinstance(s, Jet):
            return einsum(_same(self.shape), self, s)
        return self._wrap(self.c * s)

    __rmul__ = __mul__

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return self._wrap(self.c[(slice(None),) + idx])

    def transpose(self, *axes: int) -> "Jet":
        nd = len(self.shape)
        perm = (0,) + tuple(a + 1 for a in axes) + (nd + 1,)
        return self._wrap(np.ascontiguousarray(self.c.transpose(perm)))

    def d(self, v: int) -> "Jet":
        """Partial derivative along coordinate ``v``; loses one order."""
        src, dst, fac = self.space._deriv[v]
        out = np.zeros_like(self.c)
        out[..., dst] = self.c[..., src] * fac
        return self._wrap(out, self.order - 1)

    def grad(self) -> "Jet":
        """Stack all partials into a new trailing tensor axis."""
        parts = [self.d(v).c for v in range(self.space.dim)]
        return self._wrap(np.stack(parts, axis=-2), self.order - 1)

    def truncated(self, order: int) -> "Jet":
        c = self.c.copy()
        c[..., self.space.degree > order] = 0.0
        return self._wrap(c, min(order, self.order))


def _same(shape):
    s = _LETTERS[: len(shape)]
    return f"{s},{s}->{s}"


def constant(values: np.ndarray, sp: JetSpace) -> Jet:
    """Embed point values (shape ``(P, *shape)``) as jets with zero derivatives."""
    values = np.asarray(values, dtype=float)
    c = np.zeros(values.shape + (sp.size,))
    c[..., 0] = values
    return Jet(c, sp.order, sp)


def identity(P: int, n: int, sp: JetSpace) -> Jet:
    return constant(np.broadcast_to(np.eye(n), (P, n, n)), sp)


def einsum(subscripts: str, *ops) -> Jet:
    """Einstein summation over tensor indices with truncated jet products.

    Operands may be :class:`Jet` or plain arrays of shape ``(P, *shape)``;
    plain arrays act as point-wise constants (no derivative content).
    """
    lhs, out = subscripts.replace(" ", "").split("->")
    terms = lhs.split(",")
    if len(terms) != len(ops):
        raise ValueError("operand count does not match subscripts")
    if len(ops) > 2:
        # fold left; intermediate keeps every index still needed later
        first, rest = terms[0], terms[1:]
        acc = ops[0]
        acc_sub = first
        for k, (t, op) in enumerate(zip(rest, ops[1:])):
            later = "".join(rest[k + 1:]) + out
            keep = "".join(dict.fromkeys(c for c in acc_sub + t if c in later))
            acc = einsum(f"{acc_sub},{t}->{keep}", acc, op)
            acc_sub = keep
        if acc_sub != out:
            acc = einsum(f"{acc_sub}->{out}", acc)
        return acc
    jets = [op for op in ops if isinstance(op, Jet)]
    if not jets:
        raise TypeError("einsum needs at least one Jet operand")
    sp = jets[0].space
    order = min(j.order for j in jets)
    if len(ops) == 1:
        c = np.einsum(f"Z{terms[0]}Y->Z{out}Y", ops[0].c)
        return Jet(c, order, sp)
    a, b = ops
    ta, tb = terms
    if not isinstance(a, Jet) or not isinstance(b, Jet):
        ca = a.c if isinstance(a, Jet) else np.asarray(a, dtype=float)
        cb = b.c if isinstance(b, Jet) else np.asarray(b, dtype=float)
        sa = f"Z{ta}Y" if isinstance(a, Jet) else f"Z{ta}"
        sb = f"Z{tb}Y" if isinstance(b, Jet) else f"Z{tb}"
        c = np.einsum(f"{sa},{sb}->Z{out}Y", ca, cb, optimize=True)
        return Jet(c, order, sp)
    if order < 0:
        raise ValueError("product of jets with no valid coefficients")
    # only products landing at degree <= order are ever read back
    t = sp._upto[order]
    I, J, K = sp.I[:t], sp.J[:t], sp.K[:t]
    X = np.einsum(f"Z{ta}Y,Z{tb}Y->Z{out}Y", a.c[..., I], b.c[..., J], optimize=True)
    lead = X.shape[:-1]
    c = _kernels.scatter(X.reshape(-1, X.shape[-1]), K, sp.size).reshape(lead + (sp.size,))
    return Jet(c, order, sp)


def inverse_matrix(G: Jet) -> Jet:
    """Jet of the pointwise matrix inverse of a ``(n, n)`` jet field."""
    sp = G.space
    G0inv = np.linalg.inv(G.value)
    N = G.c.copy()
    N[..., 0] = 0.0
    E = -einsum("ab,bc->ac", G0inv, Jet(N, G.order, sp))
    n = G.shape[0]
    I = identity(G.npoints, n, sp)
    S = I
    for _ in range(G.order):
        S = I + einsum("ab,bc->ac", E, S)
    return einsum("ab,bc->ac", S, G0inv)


def reciprocal(f: Jet) -> Jet:
    sp = f.space
    f0 = f.value
    N = f.c.copy()
    N[..., 0] = 0.0
    E = Jet(-N / f0[..., None], f.order, sp)
    one = constant(np.ones(f0.shape), sp)
    S = one
    sub = _same(f.shape)
    for _ in range(f.order):
        S = one + einsum(sub, E, S)
    return Jet(S.c / f0[..., None], S.order, sp)


# ---------------------------------------------------------------------------
# jets of symbolic fields

_compiled_cache: dict[tuple, tuple[Compiled, np.ndarray]] = {}


def _partials(e: Expr, coords: Sequence[str], sp: JetSpace) -> list[Expr]:
    out: list[Expr] = [e]
    for k in range(1, sp.size):
        parent, v = sp.parent[k]
        out.append(diff(out[parent], coords[v]))
    return out


def from_exprs(exprs, coords: Sequence[str], points: np.ndarray, order: int) -> Jet:
    """Jets of an array of expressions at ``points`` (shape ``(P, len(coords))``).

    ``exprs`` may be any nested sequence / object array of :class:`Expr`; the
    result has tensor shape equal to that array's shape.
    """
    arr = np.empty(np.shape(exprs) if not isinstance(exprs, Expr) else (), dtype=object)
    if isinstance(exprs, Expr):
        arr[()] = exprs
    else:
        arr[...] = exprs if isinstance(exprs, np.ndarray) else _to_object_array(exprs)
    sp = space(len(coords), order)
    flat = list(arr.reshape(-1))
    key = (tuple(id(e) for e in flat), tuple(coords), order)
    hit = _compiled_cache.get(key)
    if hit is None:
        allexprs: list[Expr] = []
        for e in flat:
            allexprs.extend(_partials(e, coords, sp))
        comp = Compiled(allexprs, coords)
        hit = (comp, flat)  # keep expressions alive so ids stay unique
        _compiled_cache[key] = hit
    comp = hit[0]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = comp(pts).reshape(pts.shape[0], len(flat), sp.size) / sp.factorial
    c = vals.reshape((pts.shape[0],) + arr.shape + (sp.size,))
    return Jet(np.ascontiguousarray(c), order, sp)


def _to_object_array(nested) -> np.ndarray:
    def shape_of(x):
        if isinstance(x, Expr):
            return ()
        return (len(x),) + (shape_of(x[0]) if len(x) else ())

    shp = shape_of(nested)
    out = np.empty(shp, dtype=object)
    for idx in np.ndindex(*shp):
        cur = nested
        for i in idx:
            cur = cur[i]
        out[idx] = cur
    return out
