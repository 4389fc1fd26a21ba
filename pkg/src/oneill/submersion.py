"""Riemannian submersions given in charts: frames, O'Neill tensors, identities.

The O'Neill tensors are built as full coordinate tensor fields through the
horizontal projector ``P_H = g^{-1} dpi^T (gbar o pi) dpi``::

    A(E, F) = P_V nabla_{P_H E}(P_H F) + P_H nabla_{P_H E}(P_V F)
    T(E, F) = P_H nabla_{P_V E}(P_V F) + P_V nabla_{P_V E}(P_H F)

Both are tensorial, smooth and frame free, so their covariant derivatives are
taken like any other field. Restricted to horizontal (resp. vertical)
arguments they reduce to ``ver(nabla_X Y)`` and ``hor(nabla_U V)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from . import expr as ex
from . import jets as jt
from .config import DEFAULT, Tolerances
from .geometry import (
    Chart,
    GeometryError,
    LocalGeometry,
    MetricField,
    sectional_from,
)
from .tensors import DOWN, UP, TensorValue, random_orthogonal


class SubmersionError(GeometryError):
    """The data do not define a Riemannian submersion at some point."""

    def __init__(self, message: str, point=None, kind: str = "structural"):
        super().__init__(message)
        self.point = point
        self.kind = kind


class FrameError(SubmersionError):
    pass


@dataclass(frozen=True, eq=False)
class FiberMetric:
    """Induced metric on the fiber through a point.

    ``coords`` are the total-chart coordinates that parametrize the fiber;
    ``components`` (m x m Expr) may also depend on the remaining coordinates,
    which are frozen at the point when the fiber curvature is evaluated.
    """

    coords: tuple[str, ...]
    components: np.ndarray

    def at(self, total: Chart, p: np.ndarray) -> tuple[MetricField, np.ndarray]:
        frozen = {
            nm: ex.const(float(v)) for nm, v in zip(total.names, p) if nm not in self.coords
        }
        comps = np.empty(self.components.shape, dtype=object)
        for idx in np.ndindex(*comps.shape):
            comps[idx] = ex.simplify(ex.substitute(self.components[idx], frozen))
        chart = Chart(self.coords)
        sel = np.array([total.names.index(c) for c in self.coords])
        return MetricField(chart, comps), sel


@dataclass(eq=False)
class SubmersionSpec:
    total: MetricField
    base: MetricField
    map: tuple[ex.Expr, ...]
    fiber_dim: int
    name: str = "explicit"
    fiber: FiberMetric | None = None
    lift: Callable[[np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.map = tuple(ex.as_expr(e) for e in self.map)
        n, N = self.base.dim, self.total.dim
        if len(self.map) != n:
            raise SubmersionError(f"map has {len(self.map)} components, base has dimension {n}")
        if N != n + self.fiber_dim:
            raise SubmersionError(
                f"total dimension {N} != base {n} + fiber {self.fiber_dim}"
            )
        names = set(self.total.chart.names)
        for e in self.map:
            extra = e.free_vars() - names
            if extra:
                raise ex.UndeclaredVariableError(sorted(extra)[0])
        bind = dict(zip(self.base.chart.names, self.map))
        pulled = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                pulled[i, j] = ex.simplify(ex.substitute(self.base.components[i, j], bind))
        self._pulled_base = pulled

    @property
    def n(self) -> int:
        return self.base.dim

    @property
    def m(self) -> int:
        return self.fiber_dim

    @property
    def dim(self) -> int:
        return self.total.dim

    @property
    def chart(self) -> Chart:
        return self.total.chart

    def points(self, p) -> np.ndarray:
        return self.total.chart.as_points(p)

    def project(self, points) -> np.ndarray:
        X = self.points(points)
        return jt.from_exprs(list(self.map), self.chart.names, X, 0).value

    def local(self, points, order: int = 1) -> "LocalSubmersion":
        return LocalSubmersion(self, self.points(points), order)


class LocalSubmersion:
    """Jets of the submersion data at a batch of points.

    ``order`` is the truncation degree of the total metric jet. The O'Neill
    tensor fields carry ``order - 1`` valid degrees.
    """

    def __init__(self, spec: SubmersionSpec, points: np.ndarray, order: int):
        if order < 1:
            raise ValueError("O'Neill tensors need metric jets of order >= 1")
        self.spec = spec
        self.points = points
        self.order = order
        self.geo = LocalGeometry(spec.total, points, order)
        names = spec.chart.names
        pi = jt.from_exprs(list(spec.map), names, points, order + 1)
        self.dpi = pi.grad()  # (n, N)
        self.gbar = jt.from_exprs(spec._pulled_base, names, points, order)

    @property
    def g(self) -> jt.Jet:
        return self.geo.g

    @property
    def ginv(self) -> jt.Jet:
        return self.geo.ginv

    @cached_property
    def PH(self) -> jt.Jet:
        return jt.einsum("ac,ic,ij,jb->ab", self.ginv, self.dpi, self.gbar, self.dpi)

    @cached_property
    def PV(self) -> jt.Jet:
        I = jt.identity(self.points.shape[0], self.spec.dim, self.g.space)
        return I - self.PH

    @cached_property
    def _DPH(self) -> jt.Jet:
        # DPH[e, j, a] = nabla_a of the vector field P_H d_j, component e
        return self.PH.grad() + jt.einsum("ead,dj->eja", self.geo.gamma, self.PH)

    @cached_property
    def _DPV(self) -> jt.Jet:
        return self.geo.gamma.transpose(0, 2, 1) - self._DPH

    @cached_property
    def A(self) -> jt.Jet:
        """A[c, i, j] = component c of A(d_i, d_j)."""
        PH, PV = self.PH, self.PV
        return jt.einsum("ce,ai,eja->cij", PV, PH, self._DPH) + jt.einsum(
            "ce,ai,eja->cij", PH, PH, self._DPV
        )

    @cached_property
    def T(self) -> jt.Jet:
        PH, PV = self.PH, self.PV
        return jt.einsum("ce,ai,eja->cij", PH, PV, self._DPV) + jt.einsum(
            "ce,ai,eja->cij", PV, PV, self._DPH
        )

    @cached_property
    def H(self) -> jt.Jet:
        """Mean curvature vector field (trace of T over the vertical space)."""
        return jt.einsum("ia,aj,cij->c", self.PV, self.ginv, self.T)

    # ---- point values -------------------------------------------------

    @cached_property
    def frames(self) -> tuple[np.ndarray, np.ndarray]:
        """Adapted orthonormal frames ``(X (P, N, n), E (P, N, m))``."""
        spec = self.spec
        G = self.g.value
        D = self.dpi.value
        null, ranks = _kernels.nullspace(D, 1e-12)
        if np.any(ranks < spec.n):
            bad = int(np.argmin(ranks))
            raise SubmersionError("projection Jacobian is rank deficient", self.points[bad])
        E, kept_v = _kernels.gram_schmidt(null, G, 1e-8)
        X, kept_h = _kernels.gram_schmidt(self.PH.value, G, 1e-8)
        if np.any(kept_v < spec.m) or np.any(kept_h < spec.n):
            bad = int(np.argmin(np.minimum(kept_v - spec.m, kept_h - spec.n)))
            raise FrameError("Gram-Schmidt breakdown building the adapted frame", self.points[bad])
        return X[:, :, : spec.n], E[:, :, : spec.m]

    def A_frame(self) -> np.ndarray:
        X, E = self.frames
        return np.einsum("pai,pbj,pcab,pcd,pdk->pijk", X, X, self.A.value, self.g.value, E)

    def T_frame(self) -> np.ndarray:
        X, E = self.frames
        return np.einsum("pak,pbl,pcab,pcd,pdi->pkli", E, E, self.T.value, self.g.value, X)


# ---------------------------------------------------------------------------
# reports


@dataclass
class PointCheck:
    point: list[float]
    rank: int
    deviation: float


@dataclass
class SubmersionReport:
    passed: bool
    max_deviation: float
    checks: list[PointCheck]
    structural_failure: bool = False


def check_submersion(spec: SubmersionSpec, points, tol: Tolerances = DEFAULT) -> SubmersionReport:
    """Verify that ``d pi`` is an isometry on horizontal spaces at ``points``."""
    X = spec.points(points)
    G = spec.total.values(X)
    from .geometry import check_positive_definite

    check_positive_definite(G, points=X)
    D = jt.from_exprs(list(spec.map), spec.chart.names, X, 1).grad().value
    Gb = jt.from_exprs(spec._pulled_base, spec.chart.names, X, 0).value
    check_positive_definite(Gb, points=X)
    checks = []
    structural = False
    worst = 0.0
    for p in range(X.shape[0]):
        sv = np.linalg.svd(D[p], compute_uv=False)
        rank = int(np.sum(sv > 1e-10 * max(1.0, sv.max(initial=0.0))))
        if rank < spec.n:
            structural = True
            checks.append(PointCheck(X[p].tolist(), rank, float("inf")))
            worst = float("inf")
            continue
        # g-orthonormal basis of the horizontal space = g-orthogonal complement of ker d pi
        ginv = np.linalg.inv(G[p])
        Hb = ginv @ D[p].T  # columns span H
        Hb, kept = _kernels.gram_schmidt(Hb[None], G[p][None], 1e-12)
        Xh = Hb[0, :, : spec.n]
        M = (D[p] @ Xh).T @ Gb[p] @ (D[p] @ Xh)
        dev = float(np.linalg.norm(M - np.eye(spec.n), 2)) if spec.n else 0.0
        worst = max(worst, dev)
        checks.append(PointCheck(X[p].tolist(), rank, dev))
    return SubmersionReport(
        passed=(not structural) and worst <= tol.structural,
        max_deviation=worst,
        checks=checks,
        structural_failure=structural,
    )


def require_submersion(spec: SubmersionSpec, points, tol: Tolerances = DEFAULT) -> None:
    rep = check_submersion(spec, points, tol)
    if rep.structural_failure:
        bad = next(c for c in rep.checks if c.rank < spec.n)
        raise SubmersionError("projection Jacobian is rank deficient", bad.point)
    if not rep.passed:
        bad = max(rep.checks, key=lambda c: c.deviation)
        raise SubmersionError(
            f"d pi is not an isometry on the horizontal space (deviation {bad.deviation:.3e})",
            bad.point,
            kind="isometry",
        )


# ---------------------------------------------------------------------------
# point operations


@dataclass
class AdaptedFrame:
    point: np.ndarray
    horizontal: np.ndarray  # (N, n), columns X_i
    vertical: np.ndarray  # (N, m), columns E_alpha


def _one(spec: SubmersionSpec, p, order: int = 1) -> LocalSubmersion:
    X = spec.points(p)
    if X.shape[0] != 1:
        raise GeometryError("expected a single point")
    return spec.local(X, order)


def projections_at(spec: SubmersionSpec, p) -> tuple[TensorValue, TensorValue]:
    loc = _one(spec, p)
    return (
        TensorValue(loc.PH.value[0], (UP, DOWN)),
        TensorValue(loc.PV.value[0], (UP, DOWN)),
    )


def adapted_frame_at(spec: SubmersionSpec, p) -> AdaptedFrame:
    loc = _one(spec, p)
    X, E = loc.frames
    return AdaptedFrame(loc.points[0], X[0], E[0])


def oneill_A_at(spec: SubmersionSpec, p) -> TensorValue:
    """Frame components ``A[i, j, alpha] = <A_{X_i} X_j, E_alpha>``."""
    loc = _one(spec, p)
    return TensorValue(loc.A_frame()[0], (DOWN, DOWN, UP), ("h", "h", "v"))


def oneill_T_at(spec: SubmersionSpec, p) -> TensorValue:
    """Frame components ``T[alpha, beta, i] = <T_{E_alpha} E_beta, X_i>``."""
    loc = _one(spec, p)
    return TensorValue(loc.T_frame()[0], (DOWN, DOWN, UP), ("v", "v", "h"))


def mean_curvature_at(spec: SubmersionSpec, p) -> TensorValue:
    loc = _one(spec, p)
    return TensorValue(loc.H.value[0], (UP,))


@dataclass
class IdentityReport:
    applicable: bool
    max_residual: float = 0.0
    samples: list[dict] = field(default_factory=list)
    reason: str = ""


def verify_horizontal_identity(
    spec: SubmersionSpec, p, trials: int = 10, seed: int = 0
) -> IdentityReport:
    """Residuals of K_B(dpi X, dpi Y) = K_M(X, Y) + 3 |A_X Y|^2 on random pairs."""
    if spec.n < 2:
        return IdentityReport(False, reason="base dimension < 2")
    loc = _one(spec, p, order=2)
    rng = np.random.default_rng(seed)
    X, _ = loc.frames
    X = X[0]
    R = loc.geo.riemann.value[0]
    G = loc.g.value[0]
    A = loc.A.value[0]
    D = loc.dpi.value[0]
    b = spec.project(loc.points)
    bgeo = spec.base.geometry(b, 2)
    Rb, Gb = bgeo.riemann.value[0], bgeo.g.value[0]
    out = IdentityReport(True)
    for _ in range(trials):
        Q = random_orthogonal(spec.n, rng)
        F = X @ Q
        u, v = F[:, 0], F[:, 1]
        KM = sectional_from(R, G, u, v)
        AXY = np.einsum("cij,i,j->c", A, u, v)
        a2 = float(AXY @ G @ AXY)
        KB = sectional_from(Rb, Gb, D @ u, D @ v)
        res = abs(KB - KM - 3.0 * a2)
        out.max_residual = max(out.max_residual, res)
        out.samples.append({"K_B": KB, "K_M": KM, "A_XY_sq": a2, "residual": res})
    return out


def verify_gauss_identity(
    spec: SubmersionSpec, fiber: FiberMetric | None, p, trials: int = 10, seed: int = 0
) -> IdentityReport:
    """Gauss equation on vertical planes.

    Checks K_M(U, V) = K_F(U, V) - <T_U U, T_V V> + |T_U V|^2 for random
    orthonormal vertical pairs.
    """
    if spec.m < 2:
        return IdentityReport(False, reason="fiber dimension < 2")
    fiber = fiber or spec.fiber
    if fiber is None:
        return IdentityReport(False, reason="no fiber metric supplied")
    loc = _one(spec, p, order=2)
    rng = np.random.default_rng(seed)
    _, E = loc.frames
    E = E[0]
    R = loc.geo.riemann.value[0]
    G = loc.g.value[0]
    T = loc.T.value[0]
    fmetric, sel = fiber.at(spec.chart, loc.points[0])
    others = np.setdiff1d(np.arange(spec.dim), sel)
    fgeo = fmetric.geometry(loc.points[:, sel], 2)
    RF, GF = fgeo.riemann.value[0], fgeo.g.value[0]
    out = IdentityReport(True)
    for _ in range(trials):
        Q = random_orthogonal(spec.m, rng)
        F = E @ Q
        u, v = F[:, 0], F[:, 1]
        if others.size and max(np.abs(u[others]).max(), np.abs(v[others]).max()) > 1e-10:
            raise GeometryError("vertical vectors are not tangent to the fiber coordinates")
        KM = sectional_from(R, G, u, v)
        KF = sectional_from(RF, GF, u[sel], v[sel])
        Tuv = np.einsum("cij,i,j->c", T, u, v)
        Tuu = np.einsum("cij,i,j->c", T, u, u)
        Tvv = np.einsum("cij,i,j->c", T, v, v)
        rhs = KF - float(Tuu @ G @ Tvv) + float(Tuv @ G @ Tuv)
        res = abs(KM - rhs)
        out.max_residual = max(out.max_residual, res)
        out.samples.append({"K_M": KM, "K_F": KF, "residual": res})
    return out


@dataclass
class IntegrabilityReport:
    verdict: str
    max_A: float
    per_point: list[float]


def integrability_check(spec: SubmersionSpec, points, tol: Tolerances = DEFAULT) -> IntegrabilityReport:
    loc = spec.local(points, 1)
    A = loc.A_frame()
    norms = np.sqrt(np.sum(A.reshape(A.shape[0], -1) ** 2, axis=1))
    mx = float(norms.max(initial=0.0))
    return IntegrabilityReport(
        "INTEGRABLE" if mx <= tol.structural else "NOT_INTEGRABLE", mx, norms.tolist()
    )


# ---------------------------------------------------------------------------
# naturality under candidate maps


@dataclass
class NaturalityReport:
    passed: bool
    residuals: dict[str, float]
    failed: list[str]
    checked_points: int
    skipped_points: int
    worst_point: dict[str, list[float]] = field(default_factory=dict)


def _jacobian(comps: Sequence[ex.Expr], names: Sequence[str], X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    j = jt.from_exprs(list(comps), names, X, 1)
    return j.value, j.grad().value


def verify_naturality(
    spec_a: SubmersionSpec,
    spec_b: SubmersionSpec,
    Phi: Sequence[ex.Expr],
    psi: Sequence[ex.Expr],
    points,
    tol: Tolerances = DEFAULT,
) -> NaturalityReport:
    """Check that (Phi, psi) is a fiber-preserving isometry on sample points.

    Phi maps the total chart of ``spec_a`` into that of ``spec_b``; psi maps
    base charts. Points whose images leave the target charts are skipped.
    """
    from .invariants import order0_values

    X = spec_a.points(points)
    if len(Phi) != spec_b.dim or len(psi) != spec_b.n:
        raise GeometryError("candidate map has the wrong number of components")
    inside = spec_a.chart.contains(X)
    Y, JPhi = _jacobian(Phi, spec_a.chart.names, X)
    B = spec_a.project(X)
    bY, Jpsi = _jacobian(psi, spec_a.base.chart.names, B)
    ok = inside & spec_b.chart.contains(Y) & spec_b.base.chart.contains(bY)
    ok &= spec_a.base.chart.contains(B)
    skipped = int((~ok).sum())
    if skipped:
        warnings.warn(f"{skipped} sample point(s) map outside a chart domain and were skipped")
    if not ok.any():
        raise GeometryError("every sample point was skipped")
    X, Y, JPhi, B, bY, Jpsi = (a[ok] for a in (X, Y, JPhi, B, bY, Jpsi))
    Ga = spec_a.total.values(X)
    Gb = spec_b.total.values(Y)
    res_phi = np.abs(np.einsum("pai,pab,pbj->pij", JPhi, Gb, JPhi) - Ga).reshape(len(X), -1).max(axis=1)
    gbar_a = spec_a.base.values(B)
    gbar_b = spec_b.base.values(bY)
    res_psi = np.abs(np.einsum("pai,pab,pbj->pij", Jpsi, gbar_b, Jpsi) - gbar_a).reshape(len(X), -1).max(axis=1)
    res_comm = np.abs(spec_b.project(Y) - bY).max(axis=1)
    inv_a = order0_values(spec_a, X)
    inv_b = order0_values(spec_b, Y)
    res_inv = np.abs(inv_a - inv_b).max(axis=1)
    table = {
        "Phi_isometry": res_phi,
        "psi_isometry": res_psi,
        "commutation": res_comm,
        "invariants_ATH": res_inv,
    }
    residuals = {k: float(v.max()) for k, v in table.items()}
    failed = [k for k, v in residuals.items() if not v <= tol.identity]
    worst = {k: X[int(np.argmax(v))].tolist() for k, v in table.items()}
    return NaturalityReport(not failed, residuals, failed, int(len(X)), skipped, worst)


# ---------------------------------------------------------------------------
# structural identities


def structural_residuals(spec: SubmersionSpec, points) -> dict[str, float]:
    """Max residuals of the tensor identities every submersion must satisfy.

    ``bracket`` compares ver[X, Y] with 2 A_X Y for the horizontal fields
    X = P_H d_i, Y = P_H d_j; the Lie bracket is formed from plain partial
    derivatives, independently of the connection.
    """
    X = spec.points(points)
    loc = spec.local(X, 2)
    geo = loc.geo
    A = loc.A_frame()
    T = loc.T_frame()
    out = {
        "A_antisymmetry": float(np.abs(A + A.transpose(0, 2, 1, 3)).max(initial=0.0)),
        "T_symmetry": float(np.abs(T - T.transpose(0, 2, 1, 3)).max(initial=0.0)),
    }
    PH = loc.PH
    dPH = PH.grad().value  # dPH[c, i, a] = d_a (P_H d_i)^c
    P = PH.value
    # [X_i, X_j]^c = X_i^a d_a X_j^c - X_j^a d_a X_i^c
    br = np.einsum("pai,pcja->pcij", P, dPH) - np.einsum("paj,pcia->pcij", P, dPH)
    ver = np.einsum("pce,peij->pcij", loc.PV.value, br)
    Aij = np.einsum("pcab,pai,pbj->pcij", loc.A.value, P, P)
    out["bracket"] = float(np.abs(ver - 2 * Aij).max(initial=0.0))
    R = geo.riemann.value
    bianchi = R + R.transpose(0, 1, 4, 2, 3) + R.transpose(0, 1, 3, 4, 2)
    out["bianchi"] = float(np.abs(bianchi).max(initial=0.0))
    G = geo.g.value
    Rl = np.einsum("pml,pmkij->plkij", G, R)
    out["riemann_symmetries"] = float(
        max(
            np.abs(Rl + Rl.transpose(0, 2, 1, 3, 4)).max(initial=0.0),
            np.abs(Rl + Rl.transpose(0, 1, 2, 4, 3)).max(initial=0.0),
            np.abs(Rl - Rl.transpose(0, 3, 4, 1, 2)).max(initial=0.0),
        )
    )
    dg = geo.covariant(geo.g, ("down", "down")).value
    out["metric_compatibility"] = float(np.abs(dg).max(initial=0.0))
    Xf, Ef = loc.frames
    F = np.concatenate([Xf, Ef], axis=2)
    ortho = np.einsum("pai,pab,pbj->pij", F, G, F) - np.eye(spec.dim)
    out["frame_orthonormality"] = float(np.abs(ortho).max(initial=0.0))
    D = loc.dpi.value
    out["frame_vertical"] = float(np.abs(np.einsum("pia,pab->pib", D, Ef)).max(initial=0.0))
    Gb = loc.gbar.value
    DX = np.einsum("pia,paj->pij", D, Xf)
    out["frame_horizontal_isometry"] = float(
        np.abs(np.einsum("pai,pab,pbj->pij", DX, Gb, DX) - np.eye(spec.n)).max(initial=0.0)
    )
    return out
