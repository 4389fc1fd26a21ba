"""Per-chart Riemannian machinery.

Metric components are symbolic; everything downstream (inverse metric,
Christoffel symbols, curvature and its covariant derivatives) is assembled in
truncated Taylor arithmetic from exact symbolic partials of ``g``, then read
off at the sample points. The inverse metric is never formed symbolically on
this path; its jet is the Neumann series of the numeric inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import lapack

from . import expr as ex
from . import jets as jt
from .tensors import DOWN, UP, TensorValue

_LETTERS = "abcdefghijklmnopqrstuvw"


class GeometryError(ValueError):
    pass


class MetricError(GeometryError):
    """Metric is singular or not positive definite at an evaluated point."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


@dataclass(frozen=True)
class Chart:
    names: tuple[str, ...]
    domain: Mapping[str, tuple[float, float]] | None = None

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise GeometryError(f"duplicate coordinate names in {self.names}")
        for nm in self.names:
            if not nm.isidentifier() or nm in ex.FUNCS:
                raise GeometryError(f"invalid coordinate name {nm!r}")
        dom = {}
        for k, (lo, hi) in (self.domain or {}).items():
            if k not in self.names:
                raise GeometryError(f"domain given for unknown coordinate {k!r}")
            if not lo < hi:
                raise GeometryError(f"empty interval for {k!r}")
            dom[k] = (float(lo), float(hi))
        object.__setattr__(self, "domain", dom)

    @property
    def dim(self) -> int:
        return len(self.names)

    def bounds(self) -> np.ndarray:
        """``(dim, 2)`` array of open-interval bounds (``inf`` where unbounded)."""
        return np.array([self.domain.get(n, (-math.inf, math.inf)) for n in self.names])

    def contains(self, points) -> np.ndarray:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        b = self.bounds()
        return np.all((X > b[:, 0]) & (X < b[:, 1]), axis=1)

    def as_points(self, p) -> np.ndarray:
        """Normalize a mapping, vector or array of points to shape ``(P, dim)``."""
        if isinstance(p, Mapping):
            try:
                return np.array([[float(p[n]) for n in self.names]])
            except KeyError as e:
                raise GeometryError(f"point is missing coordinate {e.args[0]!r}") from None
        X = np.atleast_2d(np.asarray(p, dtype=float))
        if X.shape[-1] != self.dim:
            raise GeometryError(f"expected {self.dim} coordinates, got {X.shape[-1]}")
        return X

    def parse(self, text: str) -> ex.Expr:
        return ex.parse(text, self.names)


def _object_matrix(rows) -> np.ndarray:
    n = len(rows)
    out = np.empty((n, len(rows[0]) if n else 0), dtype=object)
    for i, row in enumerate(rows):
        for j, e in enumerate(row):
            out[i, j] = ex.as_expr(e)
    return out


def _same_function(a: ex.Expr, b: ex.Expr, chart: Chart, probes: int = 8) -> bool:
    """Structural equality after simplify, else agreement at random chart points."""
    if ex.simplify(a) is ex.simplify(b):
        return True
    rng = np.random.default_rng(0)
    bnd = chart.bounds()
    lo = np.where(np.isfinite(bnd[:, 0]), bnd[:, 0], -1.0)
    hi = np.where(np.isfinite(bnd[:, 1]), bnd[:, 1], lo + 2.0)
    seen = 0
    for _ in range(4 * probes):
        x = dict(zip(chart.names, lo + (hi - lo) * rng.random(chart.dim)))
        try:
            va, vb = ex.evaluate(a, x), ex.evaluate(b, x)
        except ex.DomainError:
            continue
        if abs(va - vb) > 1e-12 * max(1.0, abs(va), abs(vb)):
            return False
        seen += 1
        if seen == probes:
            return True
    return seen > 0


@dataclass(frozen=True, eq=False)
class MetricField:
    chart: Chart
    components: np.ndarray  # (n, n) object array of Expr

    def __post_init__(self):
        comps = self.components
        if not isinstance(comps, np.ndarray) or comps.dtype != object:
            comps = _object_matrix(comps)
        n = self.chart.dim
        if comps.shape != (n, n):
            raise GeometryError(f"metric must be {n}x{n}, got {comps.shape}")
        for i in range(n):
            for j in range(n):
                e = comps[i, j]
                extra = e.free_vars() - set(self.chart.names)
                if extra:
                    raise ex.UndeclaredVariableError(sorted(extra)[0])
                if j > i and not _same_function(e, comps[j, i], self.chart):
                    raise GeometryError(f"metric not symmetric at ({i}, {j})")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_strings(cls, chart: Chart, rows: Sequence[Sequence[str]]) -> "MetricField":
        return cls(chart, _object_matrix([[chart.parse(str(s)) for s in row] for row in rows]))

    @classmethod
    def diagonal(cls, chart: Chart, entries: Sequence) -> "MetricField":
        n = chart.dim
        rows = [[entries[i] if i == j else ex.ZERO for j in range(n)] for i in range(n)]
        rows = [[chart.parse(e) if isinstance(e, str) else ex.as_expr(e) for e in row] for row in rows]
        return cls(chart, _object_matrix(rows))

    @property
    def dim(self) -> int:
        return self.chart.dim

    def values(self, points) -> np.ndarray:
        X = self.chart.as_points(points)
        return jt.from_exprs(self.components, self.chart.names, X, 0).value

    def geometry(self, points, order: int) -> "LocalGeometry":
        return LocalGeometry(self, self.chart.as_points(points), order)


def check_positive_definite(G: np.ndarray, tol: float = 1e-12, points=None) -> None:
    """Pivoted Cholesky on each ``(n, n)`` slice; raises :class:`MetricError`."""
    G = np.asarray(G, dtype=float)
    for p in range(G.shape[0]):
        g = G[p]
        scale = max(1.0, float(np.abs(g).max()))
        _, _, rank, info = lapack.dpstrf(g, tol=tol * scale)
        if info < 0 or rank < g.shape[0] or not np.all(np.isfinite(g)):
            where = None if points is None else np.asarray(points)[p]
            raise MetricError(f"metric not positive definite at point {where}", where)


class LocalGeometry:
    """Metric jets at a batch of points, with derived curvature quantities.

    ``order`` is the truncation degree of the metric jet; Christoffel symbols
    carry ``order - 1`` valid degrees, curvature ``order - 2``.
    """

    def __init__(self, metric: MetricField, points: np.ndarray, order: int):
        self.metric = metric
        self.points = points
        self.order = order
        self.g = jt.from_exprs(metric.components, metric.chart.names, points, order)
        check_positive_definite(self.g.value, points=points)
        self.ginv = jt.inverse_matrix(self.g)

    @property
    def dim(self) -> int:
        return self.metric.dim

    @cached_property
    def gamma(self) -> jt.Jet:
        dg = self.g.grad()  # dg[a, b, c] = d_c g_ab
        bracket = dg.transpose(2, 0, 1) + dg.transpose(0, 2, 1) - dg
        # bracket[i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
        return jt.einsum("kl,ijl->kij", self.ginv, bracket) * 0.5

    @cached_property
    def riemann(self) -> jt.Jet:
        """R[l, k, i, j] with R(d_i, d_j) d_k = R[l, k, i, j] d_l."""
        G = self.gamma
        dG = G.grad()  # dG[l, j, k, i] = d_i Gamma^l_jk
        t1 = dG.transpose(0, 2, 3, 1)
        t2 = dG.transpose(0, 2, 1, 3)
        q1 = jt.einsum("lim,mjk->lkij", G, G)
        q2 = jt.einsum("ljm,mik->lkij", G, G)
        return t1 - t2 + q1 - q2

    @cached_property
    def ricci(self) -> jt.Jet:
        return jt.einsum("ikij->kj", self.riemann)

    @cached_property
    def scalar(self) -> jt.Jet:
        return jt.einsum("kj,kj->", self.ginv, self.ricci)

    def covariant(self, T: jt.Jet, variance: Sequence[str]) -> jt.Jet:
        """Covariant derivative, new lower slot appended last."""
        r = len(variance)
        if len(T.shape) != r:
            raise GeometryError("variance length does not match tensor rank")
        out = T.grad()
        G = self.gamma
        idx = _LETTERS[:r]
        c, e = "y", "z"
        for s, v in enumerate(variance):
            src = idx[:s] + e + idx[s + 1:]
            if v == UP:
                out = out + jt.einsum(f"{idx[s]}{c}{e},{src}->{idx}{c}", G, T)
            else:
                out = out - jt.einsum(f"{e}{c}{idx[s]},{src}->{idx}{c}", G, T)
        return out

    def covariant_k(self, T: jt.Jet, variance: Sequence[str], k: int) -> jt.Jet:
        var = list(variance)
        for _ in range(k):
            T = self.covariant(T, var)
            var.append(DOWN)
        return T


# ---------------------------------------------------------------------------
# point-level operations


def _single(metric: MetricField, p) -> np.ndarray:
    X = metric.chart.as_points(p)
    if X.shape[0] != 1:
        raise GeometryError("expected a single point")
    return X


def christoffel_at(g: MetricField, p) -> TensorValue:
    geo = g.geometry(_single(g, p), 1)
    return TensorValue(geo.gamma.value[0], (UP, DOWN, DOWN))


def riemann_at(g: MetricField, p) -> TensorValue:
    geo = g.geometry(_single(g, p), 2)
    return TensorValue(geo.riemann.value[0], (UP, DOWN, DOWN, DOWN))


def sectional_from(R: np.ndarray, G: np.ndarray, X, Y, tol: float = 1e-12) -> float:
    """Sectional curvature from point values of ``R[l,k,i,j]`` and ``g``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    den = (X @ G @ X) * (Y @ G @ Y) - (X @ G @ Y) ** 2
    if den < tol:
        raise GeometryError("degenerate plane: X and Y are (nearly) dependent")
    RXYY = np.einsum("lkij,k,i,j->l", R, Y, X, Y)
    return float(X @ G @ RXYY) / den


def sectional_at(g: MetricField, p, X, Y) -> float:
    geo = g.geometry(_single(g, p), 2)
    return sectional_from(geo.riemann.value[0], geo.g.value[0], X, Y)


def divergence_at(field_components: Sequence[ex.Expr], g: MetricField, p) -> float:
    X = _single(g, p)
    geo = g.geometry(X, 1)
    V = jt.from_exprs(list(field_components), g.chart.names, X, 1)
    dV = V.grad().value[0]
    G = geo.gamma.value[0]
    return float(np.trace(dV) + np.einsum("iij,j->", G, V.value[0]))


# ---------------------------------------------------------------------------
# symbolic tensor fields


@dataclass(frozen=True, eq=False)
class TensorField:
    """Tensor field with symbolic components over a chart."""

    chart: Chart
    components: np.ndarray  # object array of Expr
    variance: tuple[str, ...] = field(default=())

    def __post_init__(self):
        comps = self.components
        if not isinstance(comps, np.ndarray) or comps.dtype != object:
            arr = np.empty(np.shape(comps), dtype=object)
            for idx in np.ndindex(*arr.shape):
                cur = comps
                for i in idx:
                    cur = cur[i]
                arr[idx] = ex.as_expr(cur)
            comps = arr
        if comps.ndim != len(self.variance):
            raise GeometryError("variance length does not match component rank")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "variance", tuple(self.variance))

    def at(self, p) -> TensorValue:
        X = self.chart.as_points(p)
        vals = jt.from_exprs(self.components, self.chart.names, X, 0).value[0]
        return TensorValue(vals, self.variance)

    def values(self, points) -> np.ndarray:
        X = self.chart.as_points(points)
        return jt.from_exprs(self.components, self.chart.names, X, 0).value


def _det(m: list[list[ex.Expr]]) -> ex.Expr:
    n = len(m)
    if n == 1:
        return m[0][0]
    if n == 2:
        return ex.sub(ex.mul(m[0][0], m[1][1]), ex.mul(m[0][1], m[1][0]))
    acc = ex.ZERO
    for j in range(n):
        if m[0][j] is ex.ZERO:
            continue
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        term = ex.mul(m[0][j], _det(minor))
        acc = ex.add(acc, term) if j % 2 == 0 else ex.sub(acc, term)
    return acc


def inverse_metric_symbolic(g: MetricField) -> np.ndarray:
    """Adjugate / determinant inverse. Only for small charts and cross-checks."""
    n = g.dim
    m = [[g.components[i, j] for j in range(n)] for i in range(n)]
    det = _det(m)
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            minor = [row[:i] + row[i + 1:] for k, row in enumerate(m) if k != j]
            cof = _det(minor) if minor else ex.ONE
            if (i + j) % 2:
                cof = ex.neg(cof)
            out[i, j] = ex.div(cof, det)
    return out


def christoffel_field(g: MetricField, ginv: np.ndarray | None = None) -> np.ndarray:
    """Symbolic Gamma[k, i, j]."""
    n = g.dim
    names = g.chart.names
    if ginv is None:
        ginv = inverse_metric_symbolic(g)
    G = g.components
    out = np.empty((n, n, n), dtype=object)
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                terms = []
                for l in range(n):
                    if ginv[k, l] is ex.ZERO:
                        continue
                    br = ex.sub(
                        ex.add(ex.diff(G[j, l], names[i]), ex.diff(G[i, l], names[j])),
                        ex.diff(G[i, j], names[l]),
                    )
                    terms.append(ex.mul(ginv[k, l], br))
                val = ex.mul(ex.const(0.5), ex.sum_exprs(terms))
                out[k, i, j] = out[k, j, i] = val
    return out


def covariant_derivative_field(t: TensorField, g: MetricField, order: int = 1) -> TensorField:
    """Iterated covariant derivative with symbolic components.

    Each application appends one lower slot (the derivative direction) after
    the existing slots: one partial plus one Christoffel correction per slot.
    """
    if t.chart.names != g.chart.names:
        raise GeometryError("tensor field and metric live on different charts")
    names = g.chart.names
    n = g.dim
    Gam = christoffel_field(g)
    comps = t.components
    var = list(t.variance)
    for _ in range(order):
        new = np.empty(comps.shape + (n,), dtype=object)
        for idx in np.ndindex(*comps.shape):
            for c in range(n):
                terms = [ex.diff(comps[idx], names[c])]
                for s, v in enumerate(var):
                    for e in range(n):
                        src = idx[:s] + (e,) + idx[s + 1:]
                        if v == UP:
                            coef = Gam[idx[s], c, e]
                            if coef is not ex.ZERO and comps[src] is not ex.ZERO:
                                terms.append(ex.mul(coef, comps[src]))
                        else:
                            coef = Gam[e, c, idx[s]]
                            if coef is not ex.ZERO and comps[src] is not ex.ZERO:
                                terms.append(ex.neg(ex.mul(coef, comps[src])))
                new[idx + (c,)] = ex.sum_exprs(terms)
        comps = new
        var.append(DOWN)
    return TensorField(t.chart, comps, tuple(var))


def gradient_field(f: ex.Expr, chart: Chart) -> TensorField:
    comps = np.empty((chart.dim,), dtype=object)
    for i, nm in enumerate(chart.names):
        comps[i] = ex.diff(f, nm)
    return TensorField(chart, comps, (DOWN,))
