"""Builtin model families with closed-form expectations.

Products, warped products (with warp reconstruction and the equivalence
criterion), the Hopf fibration, and submersions given by the orbits of a
nowhere-vanishing Killing field, rebuilt from base data ``(gbar, phi, alpha)``
in Kaluza-Klein form ``g = pi* gbar + phi^2 (dt + alpha)^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr as ex
from . import jets as jt
from ._kernels import gram_schmidt
from .config import DEFAULT, Tolerances
from .geometry import Chart, GeometryError, MetricField
from .invariants import halton_points
from .submersion import (
    FiberMetric,
    SubmersionSpec,
    integrability_check,
    require_submersion,
)
from .tensors import DOWN, UP, TensorValue


class ModelError(GeometryError):
    pass


@dataclass
class CheckReport:
    """Named residuals of a sufficiency check, with the worst sample location."""

    passed: bool
    residuals: dict[str, float]
    failed: list[str]
    worst_point: dict[str, list[float]]
    tolerance: float
    points: int


def _report(table: dict[str, np.ndarray], X: np.ndarray, tol: float) -> CheckReport:
    residuals = {k: float(np.max(v)) for k, v in table.items()}
    failed = [k for k, v in residuals.items() if not v <= tol]
    worst = {k: X[int(np.argmax(v))].tolist() for k, v in table.items()}
    return CheckReport(not failed, residuals, failed, worst, tol, int(len(X)))


def default_box(chart: Chart) -> np.ndarray:
    """The chart domain with unbounded sides cut to an interval of length 2."""
    b = chart.bounds()
    lo = np.where(np.isfinite(b[:, 0]), b[:, 0], np.where(np.isfinite(b[:, 1]), b[:, 1] - 2.0, -1.0))
    hi = np.where(np.isfinite(b[:, 1]), b[:, 1], lo + 2.0)
    return np.stack([lo, hi], axis=1)


def sample_chart(chart: Chart, count: int = 32, seed: int = 0, box=None) -> np.ndarray:
    """Halton points in ``box`` (default: :func:`default_box`)."""
    b = default_box(chart) if box is None else np.asarray(box, dtype=float).reshape(chart.dim, 2)
    return halton_points(b, count, seed)


def _values(exprs, chart: Chart, X: np.ndarray, order: int = 0) -> jt.Jet:
    return jt.from_exprs(exprs, chart.names, X, order)


def _merge_charts(a: Chart, b: Chart) -> Chart:
    clash = set(a.names) & set(b.names)
    if clash:
        raise ModelError(f"base and fiber charts share coordinate name(s) {sorted(clash)}")
    return Chart(a.names + b.names, {**a.domain, **b.domain})


def _block(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, m = a.shape[0], b.shape[0]
    out = np.full((n + m, n + m), ex.ZERO, dtype=object)
    out[:n, :n] = a
    out[n:, n:] = b
    return out


def _fiber_reference(fiber: Chart) -> np.ndarray:
    """A fixed interior point of the fiber chart (used to lift base points)."""
    return np.array([_interior(lo, hi) for lo, hi in fiber.bounds()])


def _interior(lo: float, hi: float) -> float:
    if math.isfinite(lo) and math.isfinite(hi):
        return 0.5 * (lo + hi)
    if math.isfinite(lo):
        return lo + 1.0
    if math.isfinite(hi):
        return hi - 1.0
    return 0.0


def _lift(fiber: Chart):
    ref = _fiber_reference(fiber)

    def lift(b):
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return np.concatenate([b, np.broadcast_to(ref, (b.shape[0], ref.size))], axis=1)

    return lift


# ---------------------------------------------------------------------------
# products and warped products


def build_product(base: MetricField, fiber: MetricField, name: str = "product") -> SubmersionSpec:
    chart = _merge_charts(base.chart, fiber.chart)
    total = MetricField(chart, _block(base.components, fiber.components))
    base_m = MetricField(Chart(base.chart.names, base.chart.domain), base.components)
    return SubmersionSpec(
        total,
        base_m,
        tuple(ex.var(nm) for nm in base.chart.names),
        fiber.dim,
        name=name,
        fiber=FiberMetric(fiber.chart.names, fiber.components),
        lift=_lift(fiber.chart),
    )


@dataclass(eq=False)
class WarpedProductSpec:
    base: MetricField
    fiber: MetricField
    f: ex.Expr

    def __post_init__(self):
        self.f = ex.as_expr(self.f)
        extra = self.f.free_vars() - set(self.base.chart.names)
        if extra:
            raise ex.UndeclaredVariableError(sorted(extra)[0])

    @property
    def m(self) -> int:
        return self.fiber.dim

    def log_f(self) -> ex.Expr:
        return ex.log(self.f)


def _require_positive(f: ex.Expr, chart: Chart, what: str, count: int = 64) -> None:
    X = sample_chart(chart, count, seed=12345)
    vals = _values(f, chart, X).value
    if not np.all(vals > 0):
        p = int(np.argmin(vals))
        raise ModelError(f"{what} must be positive on the domain; {vals[p]:.3g} at {X[p].tolist()}")


def build_warped(w: WarpedProductSpec, name: str = "warped") -> SubmersionSpec:
    _require_positive(w.f, w.base.chart, "warping function")
    chart = _merge_charts(w.base.chart, w.fiber.chart)
    f2 = ex.power(w.f, 2)
    fib = np.empty(w.fiber.components.shape, dtype=object)
    for idx in np.ndindex(*fib.shape):
        fib[idx] = ex.mul(f2, w.fiber.components[idx])
    total = MetricField(chart, _block(w.base.components, fib))
    spec = SubmersionSpec(
        total,
        w.base,
        tuple(ex.var(nm) for nm in w.base.chart.names),
        w.m,
        name=name,
        fiber=FiberMetric(w.fiber.chart.names, fib),
        lift=_lift(w.fiber.chart),
    )
    spec.params["warped"] = w
    return spec


def _frame(spec: SubmersionSpec, p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    loc = spec.local(spec.points(p), 1)
    X, E = loc.frames
    return loc.points, X[0], E[0]


def warped_closed_form_TH(w: WarpedProductSpec, spec: SubmersionSpec, p) -> tuple[TensorValue, np.ndarray]:
    """Closed-form T and H of a warped product at a total-space point.

    With ``u = ln f``: ``T_U V = -g(U, V) grad u`` and ``H = -m grad u``.
    T is returned in the adapted frame of ``spec`` (blocks ``vvh``), H in
    coordinates.
    """
    pts, X, _ = _frame(spec, p)
    n = w.base.dim
    bchart = w.base.chart
    b = pts[:, :n]
    du = np.array([_values(ex.diff(w.log_f(), nm), bchart, b).value[0] for nm in bchart.names])
    gbar = w.base.values(b)[0]
    grad_b = np.linalg.solve(gbar, du)
    grad = np.concatenate([grad_b, np.zeros(w.m)])
    Xu = X[:n].T @ du  # du(X_i); X_i has no fiber-derivative in u
    T = np.zeros((w.m, w.m, n))
    for a in range(w.m):
        T[a, a, :] = -Xu
    return TensorValue(T, (DOWN, DOWN, UP), ("v", "v", "h")), -w.m * grad


@dataclass
class Reconstruction:
    vertices: list[list[float]]
    u: list[float]
    delta: float
    max_A: float
    evaluations: int
    exact_u: list[float] | None = None
    max_error: float | None = None


_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(8)


def _gauss(fun, a: float, b: float) -> float:
    s = 0.5 * (a + b) + 0.5 * (b - a) * _NODES
    return 0.5 * (b - a) * float(np.sum(_WEIGHTS * fun(s)))


def _adaptive(fun, a: float, b: float, whole: float, tol: float, depth: int = 0) -> tuple[float, int]:
    """Adaptive 8-node Gauss-Legendre on [a, b]; returns (integral, node count)."""
    m = 0.5 * (a + b)
    left, right = _gauss(fun, a, m), _gauss(fun, m, b)
    if abs(left + right - whole) <= tol or depth >= 30:
        return left + right, 16
    l, nl = _adaptive(fun, a, m, left, tol / 2, depth + 1)
    r, nr = _adaptive(fun, m, b, right, tol / 2, depth + 1)
    return l + r, 16 + nl + nr


def reconstruct_warp(
    spec: SubmersionSpec,
    path: Sequence[Sequence[float]],
    m: int | None = None,
    tol: Tolerances = DEFAULT,
) -> Reconstruction:
    """Recover ``u = ln f`` along a base polyline from the computed H field.

    Integrates ``grad u = -H / m`` (pushed to the base) with adaptive Gauss
    quadrature; ``u`` is normalized to 0 at the first vertex.
    """
    if spec.lift is None:
        raise ModelError("submersion has no lift from base points to the total space")
    m = spec.m if m is None else int(m)
    if m < 1:
        raise ModelError("fiber dimension must be positive")
    V = np.atleast_2d(np.asarray(path, dtype=float))
    if V.shape[1] != spec.n or V.shape[0] < 2:
        raise ModelError(f"path needs at least two vertices with {spec.n} base coordinates")
    if not np.all(spec.base.chart.contains(V)):
        raise ModelError("path leaves the base chart domain")
    probe = np.concatenate([V, 0.5 * (V[1:] + V[:-1])])
    lifted = spec.lift(probe)
    require_submersion(spec, lifted, tol)
    integ = integrability_check(spec, lifted, tol)
    if integ.max_A > tol.reconstruct_A:
        raise ModelError(
            f"|A| = {integ.max_A:.3e} exceeds {tol.reconstruct_A:g}; not a warped-type submersion"
        )

    def rate(pts, d):
        # d/ds u(a + s d) = gbar(grad u, d) with grad u = -d pi(H) / m
        loc = spec.local(spec.lift(pts), 1)
        Hb = np.einsum("pic,pc->pi", loc.dpi.value, loc.H.value)
        return -np.einsum("pi,pij,j->p", Hb, spec.base.values(pts), d) / m

    u = [0.0]
    evals = 0
    for a, b in zip(V[:-1], V[1:]):
        d = b - a
        fun = lambda s: rate(a[None, :] + s[:, None] * d[None, :], d)  # noqa: E731
        val, k = _adaptive(fun, 0.0, 1.0, _gauss(fun, 0.0, 1.0), tol.quadrature)
        evals += k + 8
        u.append(u[-1] + val)
    out = Reconstruction(V.tolist(), u, u[-1] - u[0], integ.max_A, evals)
    w = spec.params.get("warped")
    if w is not None:
        lf = _values(w.log_f(), w.base.chart, V).value
        exact = (lf - lf[0]).tolist()
        out.exact_u = exact
        out.max_error = float(np.max(np.abs(np.array(u) - np.array(exact))))
    return out


def _pullback_residual(J: np.ndarray, target: np.ndarray, source: np.ndarray) -> np.ndarray:
    pulled = np.einsum("pai,pab,pbj->pij", J, target, J)
    return np.abs(pulled - source).reshape(len(J), -1).max(axis=1)


def _map_jacobian(exprs, chart: Chart, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    j = _values(list(exprs), chart, X, 1)
    return j.value, j.grad().value


def warped_equivalence_check(
    wa: WarpedProductSpec,
    wb: WarpedProductSpec,
    psi: Sequence[ex.Expr],
    c: float,
    fiber_map: Sequence[ex.Expr],
    count: int = 32,
    seed: int = 0,
    tol: Tolerances = DEFAULT,
) -> CheckReport:
    """Sufficient conditions for equivalence of two warped products.

    Checks ``psi* gbar' = gbar``, ``fiber_map* (c^2 g_F') = g_F`` and
    ``f' o psi = c f`` at Halton samples of the base and fiber charts.
    """
    c = float(c)
    if not c > 0:
        raise ModelError("scale constant c must be positive")
    if len(psi) != wb.base.dim or len(fiber_map) != wb.fiber.dim:
        raise ModelError("candidate maps have the wrong number of components")
    Xb = sample_chart(wa.base.chart, count, seed)
    Xf = sample_chart(wa.fiber.chart, count, seed + 1)
    Y, Jpsi = _map_jacobian(psi, wa.base.chart, Xb)
    Z, Jfib = _map_jacobian(fiber_map, wa.fiber.chart, Xf)
    outside = ~wb.base.chart.contains(Y) | ~wb.fiber.chart.contains(Z)
    if outside.any():
        raise ModelError("candidate maps leave the target chart domain at sample points")
    base_res = _pullback_residual(Jpsi, wb.base.values(Y), wa.base.values(Xb))
    fib_res = _pullback_residual(Jfib, c * c * wb.fiber.values(Z), wa.fiber.values(Xf))
    f_res = np.abs(_values(wb.f, wb.base.chart, Y).value - c * _values(wa.f, wa.base.chart, Xb).value)
    rep = _report(
        {"base_isometry": base_res, "warp_scaling": f_res},
        Xb,
        tol.equivalence,
    )
    frep = _report({"fiber_homothety": fib_res}, Xf, tol.equivalence)
    rep.residuals.update(frep.residuals)
    rep.worst_point.update(frep.worst_point)
    rep.failed += frep.failed
    rep.passed = not rep.failed
    return rep


# ---------------------------------------------------------------------------
# Hopf fibration


def build_hopf() -> SubmersionSpec:
    """S^3 -> S^2(1/2) in coordinates (eta, xi1, xi2), eta away from the chart poles."""
    lo, hi = 0.1, math.pi / 2 - 0.1
    total = MetricField.diagonal(
        Chart(("eta", "xi1", "xi2"), {"eta": (lo, hi)}),
        ["1", "sin(eta)^2", "cos(eta)^2"],
    )
    base = MetricField.diagonal(
        Chart(("eta", "psi"), {"eta": (lo, hi)}), ["1", "sin(eta)^2*cos(eta)^2"]
    )
    pi = (ex.var("eta"), total.chart.parse("xi1 - xi2"))

    def lift(b):
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return np.stack([b[:, 0], b[:, 1], np.zeros(len(b))], axis=1)

    return SubmersionSpec(total, base, pi, 1, name="hopf", lift=lift)


def hopf_killing_field() -> tuple[ex.Expr, ...]:
    return (ex.ZERO, ex.ONE, ex.ONE)


# ---------------------------------------------------------------------------
# Killing fields


@dataclass
class KillingReport:
    passed: bool
    residual: float
    min_norm: float
    worst_point: list[float]


def killing_check(metric: MetricField | SubmersionSpec, K: Sequence[ex.Expr], points, tol: Tolerances = DEFAULT) -> KillingReport:
    """Symmetrized covariant derivative of ``K`` in a g-orthonormal frame."""
    if isinstance(metric, SubmersionSpec):
        metric = metric.total
    chart = metric.chart
    X = chart.as_points(points)
    if len(K) != chart.dim:
        raise ModelError("vector field has the wrong number of components")
    geo = metric.geometry(X, 1)
    Kj = _values([ex.as_expr(k) for k in K], chart, X, 1)
    DK = Kj.grad().value + np.einsum("pcab,pb->pca", geo.gamma.value, Kj.value)
    G = geo.g.value
    L = np.einsum("pcb,pca->pab", G, DK)  # L[a, b] = <nabla_a K, d_b>
    S = L + np.swapaxes(L, 1, 2)
    N = chart.dim
    F, kept = gram_schmidt(np.broadcast_to(np.eye(N), G.shape).copy(), G, 1e-12)
    Sf = np.einsum("pai,pab,pbj->pij", F, S, F)
    res = np.abs(Sf).reshape(len(X), -1).max(axis=1)
    norms = np.sqrt(np.einsum("pa,pab,pb->p", Kj.value, G, Kj.value))
    worst = int(np.argmax(res))
    passed = bool(res.max() <= tol.structural and norms.min() > 0)
    return KillingReport(passed, float(res.max()), float(norms.min()), X[worst].tolist())


@dataclass(eq=False)
class KillingOrbitSpec:
    base: MetricField
    phi: ex.Expr
    alpha: tuple[ex.Expr, ...]
    fiber_name: str = "t"
    fiber_domain: tuple[float, float] | None = None

    def __post_init__(self):
        self.phi = ex.as_expr(self.phi)
        self.alpha = tuple(ex.as_expr(a) for a in self.alpha)
        if len(self.alpha) != self.base.dim:
            raise ModelError("alpha needs one component per base coordinate")
        names = set(self.base.chart.names)
        for e in (self.phi,) + self.alpha:
            extra = e.free_vars() - names
            if extra:
                raise ex.UndeclaredVariableError(sorted(extra)[0])
        if self.fiber_name in names:
            raise ModelError(f"fiber coordinate {self.fiber_name!r} clashes with the base chart")

    @property
    def omega(self) -> np.ndarray:
        """Omega = d alpha as an antisymmetric matrix of Expr."""
        n = self.base.dim
        names = self.base.chart.names
        out = np.full((n, n), ex.ZERO, dtype=object)
        for a in range(n):
            for b in range(a + 1, n):
                w = ex.simplify(ex.sub(ex.diff(self.alpha[b], names[a]), ex.diff(self.alpha[a], names[b])))
                out[a, b] = w
                out[b, a] = ex.neg(w)
        return out


def build_killing_total(k: KillingOrbitSpec, name: str = "killing") -> tuple[SubmersionSpec, tuple[ex.Expr, ...]]:
    """Kaluza-Klein total space over the base, and the Killing field d/dt."""
    _require_positive(k.phi, k.base.chart, "phi")
    n = k.base.dim
    dom = dict(k.base.chart.domain)
    if k.fiber_domain is not None:
        dom[k.fiber_name] = k.fiber_domain
    chart = Chart(k.base.chart.names + (k.fiber_name,), dom)
    phi2 = ex.power(k.phi, 2)
    # theta = dt + alpha, so the 1-form has components (alpha_a, 1)
    theta = k.alpha + (ex.ONE,)
    comps = np.empty((n + 1, n + 1), dtype=object)
    for a in range(n + 1):
        for b in range(a, n + 1):
            kk = ex.mul(phi2, ex.mul(theta[a], theta[b]))
            comps[a, b] = comps[b, a] = ex.add(k.base.components[a, b], kk) if b < n else kk
    total = MetricField(chart, comps)
    ref = 0.0 if k.fiber_domain is None else 0.5 * sum(k.fiber_domain)

    def lift(b):
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return np.concatenate([b, np.full((len(b), 1), ref)], axis=1)

    spec = SubmersionSpec(
        total,
        k.base,
        tuple(ex.var(nm) for nm in k.base.chart.names),
        1,
        name=name,
        lift=lift,
    )
    spec.params["killing"] = k
    K = tuple([ex.ZERO] * n + [ex.ONE])
    return spec, K


def killing_closed_form_AH(k: KillingOrbitSpec, spec: SubmersionSpec, p) -> tuple[TensorValue, np.ndarray]:
    """Closed-form A and H for the Kaluza-Klein model at a total-space point.

    ``A_X Y = -(phi/2) Omega(X, Y) U`` with ``U = K / phi`` and
    ``H = -grad^H ln phi``. A is given in the adapted frame of ``spec``.
    """
    pts, X, E = _frame(spec, p)
    n = k.base.dim
    bchart = k.base.chart
    b = pts[:, :n]
    phi = float(_values(k.phi, bchart, b).value[0])
    Om = _values(k.omega, bchart, b).value[0]
    G = spec.total.values(pts)[0]
    U = np.zeros(n + 1)
    U[n] = 1.0 / phi
    sign = float(U @ G @ E[:, 0])  # +-1: orientation of the frame's vertical vector
    Xb = X[:n]  # d pi X_i
    A = np.zeros((n, n, 1))
    A[:, :, 0] = -0.5 * phi * (Xb.T @ Om @ Xb) * sign
    dlog = np.array([_values(ex.diff(ex.log(k.phi), nm), bchart, b).value[0] for nm in bchart.names])
    w = np.linalg.solve(k.base.values(b)[0], dlog)
    alpha = _values(list(k.alpha), bchart, b).value[0]
    H = -np.concatenate([w, [-(alpha @ w)]])
    return TensorValue(A, (DOWN, DOWN, UP), ("h", "h", "v")), H


def killing_A2_closed(k: KillingOrbitSpec, b) -> np.ndarray:
    """|A|^2 = (phi^2 / 2) |Omega|^2 with |Omega|^2 summed over i < j."""
    B = k.base.chart.as_points(b)
    phi = _values(k.phi, k.base.chart, B).value
    Om = _values(k.omega, k.base.chart, B).value
    gi = np.linalg.inv(k.base.values(B))
    full = np.einsum("pab,pcd,pac,pbd->p", Om, Om, gi, gi)  # sum over all ordered pairs
    return 0.5 * phi**2 * (0.5 * full)


def _pullback_form(alpha: Sequence[ex.Expr], psi: Sequence[ex.Expr], src: Chart, tgt: Chart) -> list[ex.Expr]:
    bind = dict(zip(tgt.names, psi))
    out = []
    for nm in src.names:
        terms = [
            ex.mul(ex.substitute(alpha[c], bind), ex.diff(psi[c], nm)) for c in range(len(tgt.names))
        ]
        out.append(ex.simplify(ex.sum_exprs(terms)))
    return out


def killing_equivalence_check(
    ka: KillingOrbitSpec,
    kb: KillingOrbitSpec,
    psi: Sequence[ex.Expr],
    count: int = 32,
    seed: int = 0,
    tol: Tolerances = DEFAULT,
) -> CheckReport:
    """Base-data criterion: psi isometry, psi* phi' = phi, psi* Omega' = Omega.

    The gauge difference ``beta = alpha - psi* alpha'`` must be closed; its
    exterior derivative is formed symbolically and checked at the samples.
    """
    psi = [ex.as_expr(e) for e in psi]
    if len(psi) != kb.base.dim:
        raise ModelError("psi has the wrong number of components")
    ca, cb = ka.base.chart, kb.base.chart
    X = sample_chart(ca, count, seed)
    Y, J = _map_jacobian(psi, ca, X)
    if not np.all(cb.contains(Y)):
        raise ModelError("psi leaves the target base chart at sample points")
    iso = _pullback_residual(J, kb.base.values(Y), ka.base.values(X))
    phi_res = np.abs(_values(kb.phi, cb, Y).value - _values(ka.phi, ca, X).value)
    om_res = _pullback_residual(J, _values(kb.omega, cb, Y).value, _values(ka.omega, ca, X).value)
    pulled = _pullback_form(kb.alpha, psi, ca, cb)
    beta = [ex.sub(a, b) for a, b in zip(ka.alpha, pulled)]
    n = ca.dim
    dbeta = []
    for a in range(n):
        for b in range(a + 1, n):
            dbeta.append(ex.sub(ex.diff(beta[b], ca.names[a]), ex.diff(beta[a], ca.names[b])))
    if dbeta:
        closed = np.abs(_values(dbeta, ca, X).value).max(axis=1)
    else:
        closed = np.zeros(len(X))
    return _report(
        {
            "base_isometry": iso,
            "phi_pullback": phi_res,
            "omega_pullback": om_res,
            "gauge_closedness": closed,
        },
        X,
        tol.equivalence,
    )


# ---------------------------------------------------------------------------
# convenience constructors for the standard examples


def euclidean(names: Sequence[str], domain=None) -> MetricField:
    return MetricField.diagonal(Chart(tuple(names), domain), ["1"] * len(names))


def round_sphere2(names=("th", "ph")) -> MetricField:
    th, ph = names
    return MetricField.diagonal(
        Chart(tuple(names), {th: (0.1, math.pi - 0.1)}), ["1", f"sin({th})^2"]
    )


def circle(name: str = "theta") -> MetricField:
    return MetricField.diagonal(Chart((name,), {name: (-math.pi, math.pi)}), ["1"])
