"""Invariant profiles, signature clouds, rank diagnostics and comparison."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from . import expr as ex
from .config import DEFAULT, Tolerances
from .geometry import GeometryError, MetricError
from .submersion import SubmersionError, SubmersionSpec, require_submersion
from .tensors import DOWN, UP, norm_sq_array

SCHEMA = "profile-v1"

ORDER_NAMES: dict[int, tuple[str, ...]] = {
    0: ("A2", "T2", "H2"),
    1: ("gradH2", "divH", "gradA2", "gradT2"),
    2: ("scal", "ricci2", "riem2", "gradScal2", "lapA2surrogate", "lapT2surrogate"),
    3: ("grad2Riem2", "mixAR", "mixTR"),
}

MAX_ORDER = 3

# failures that mark a sample point as invalid rather than aborting a run
POINT_FAILURES = (ex.DomainError, MetricError, SubmersionError, np.linalg.LinAlgError)


def profile_names(max_order: int) -> list[str]:
    _check_order(max_order)
    return [nm for k in range(max_order + 1) for nm in ORDER_NAMES[k]]


def _check_order(max_order: int) -> None:
    if not 0 <= int(max_order) <= MAX_ORDER:
        raise ValueError(f"max_order must be in 0..{MAX_ORDER}, got {max_order}")


def profile_values(spec: SubmersionSpec, points, max_order: int) -> np.ndarray:
    """Profile-v1 values at each point, shape ``(P, len(profile_names(max_order)))``."""
    _check_order(max_order)
    X = spec.points(points)
    loc = spec.local(X, max_order + 1)
    geo = loc.geo
    g, gi = loc.g.value, loc.ginv.value
    PH, PV = loc.PH.value, loc.PV.value
    hh = np.einsum("pab,pbc->pac", PH, gi)
    vv = np.einsum("pab,pbc->pac", PV, gi)

    def nrm(J, variance):
        return norm_sq_array(J.value, variance, g, gi)

    A, T, H = loc.A, loc.T, loc.H
    out: list[np.ndarray] = []
    Av, Tv, Hv = A.value, T.value, H.value
    out.append(np.einsum("pcd,pik,pjl,pcij,pdkl->p", g, hh, hh, Av, Av))
    out.append(np.einsum("pcd,pik,pjl,pcij,pdkl->p", g, vv, vv, Tv, Tv))
    out.append(np.einsum("pcd,pc,pd->p", g, Hv, Hv))
    if max_order >= 1:
        AT = (UP, DOWN, DOWN)
        dH = geo.covariant(H, (UP,))
        dA = geo.covariant(A, AT)
        dT = geo.covariant(T, AT)
        out.append(nrm(dH, (UP, DOWN)))
        out.append(np.einsum("pcc->p", dH.value))
        out.append(nrm(dA, AT + (DOWN,)))
        out.append(nrm(dT, AT + (DOWN,)))
    if max_order >= 2:
        Ric = geo.ricci
        scal = geo.scalar
        out.append(scal.value.copy())
        out.append(nrm(Ric, (DOWN, DOWN)))
        out.append(nrm(geo.riemann, (UP, DOWN, DOWN, DOWN)))
        out.append(nrm(scal.grad(), (DOWN,)))
        out.append(nrm(geo.covariant(dA, AT + (DOWN,)), AT + (DOWN, DOWN)))
        out.append(nrm(geo.covariant(dT, AT + (DOWN,)), AT + (DOWN, DOWN)))
    if max_order >= 3:
        RT = (UP, DOWN, DOWN, DOWN)
        out.append(nrm(geo.covariant_k(geo.riemann, RT, 2), RT + (DOWN, DOWN)))
        # derivative of A and T along the mean curvature direction
        HdA = np.einsum("pcija,pa->pcij", dA.value, Hv)
        HdT = np.einsum("pcija,pa->pcij", dT.value, Hv)
        out.append(norm_sq_array(HdA, AT, g, gi))
        out.append(norm_sq_array(HdT, AT, g, gi))
    vals = np.stack(out, axis=1)
    bad = ~np.all(np.isfinite(vals), axis=1)
    if bad.any():
        p = int(np.argmax(bad))
        raise ex.DomainError(f"non-finite invariant at point {X[p].tolist()}")
    return vals


def order0_values(spec: SubmersionSpec, points) -> np.ndarray:
    return profile_values(spec, points, 0)


@dataclass
class InvariantProfile:
    point: list[float]
    names: list[str]
    values: list[float]
    schema: str = SCHEMA

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]


def profile_at(spec: SubmersionSpec, p, max_order: int = 3, tol: Tolerances = DEFAULT) -> InvariantProfile:
    X = spec.points(p)
    if X.shape[0] != 1:
        raise GeometryError("expected a single point")
    require_submersion(spec, X, tol)
    vals = profile_values(spec, X, max_order)[0]
    return InvariantProfile(X[0].tolist(), profile_names(max_order), vals.tolist())


# ---------------------------------------------------------------------------
# signature samples


@dataclass
class SignatureSample:
    model: str
    points: np.ndarray  # (P, N)
    values: np.ndarray  # (P, k)
    names: list[str]
    max_order: int
    seed: int
    box: np.ndarray  # (N, 2)
    requested: int
    skipped: int
    spec: SubmersionSpec | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def profiles(self) -> list[InvariantProfile]:
        return [
            InvariantProfile(p.tolist(), list(self.names), v.tolist())
            for p, v in zip(self.points, self.values)
        ]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def _box_array(spec: SubmersionSpec, box) -> np.ndarray:
    names = spec.chart.names
    if box is None:
        b = spec.chart.bounds()
    elif isinstance(box, Mapping):
        b = spec.chart.bounds()
        for k, iv in box.items():
            if k not in names:
                raise GeometryError(f"box names unknown coordinate {k!r}")
            b[names.index(k)] = iv
    else:
        b = np.asarray(box, dtype=float).reshape(len(names), 2)
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise GeometryError("sampling box must be bounded in every coordinate")
    if not np.all(b[:, 0] < b[:, 1]):
        raise GeometryError("sampling box has an empty interval")
    return b


def halton_points(box: np.ndarray, count: int, seed: int) -> np.ndarray:
    """Scrambled Halton points in the open box, deterministic in ``seed``."""
    d = box.shape[0]
    u = qmc.Halton(d=d, scramble=True, seed=np.random.default_rng(seed)).random(count)
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def _valid_rows(spec: SubmersionSpec, X: np.ndarray, max_order: int, tol: Tolerances):
    """Evaluate profiles, dropping points where validation fails."""
    try:
        require_submersion(spec, X, tol)
        return np.ones(len(X), bool), profile_values(spec, X, max_order)
    except POINT_FAILURES:
        pass
    ok = np.zeros(len(X), bool)
    rows = []
    for p in range(len(X)):
        try:
            require_submersion(spec, X[p : p + 1], tol)
            rows.append(profile_values(spec, X[p : p + 1], max_order)[0])
            ok[p] = True
        except POINT_FAILURES:
            continue
    k = len(profile_names(max_order))
    return ok, np.array(rows).reshape(-1, k)


def sample_signatures(
    spec: SubmersionSpec,
    box=None,
    count: int = 32,
    seed: int = 0,
    max_order: int = 3,
    tol: Tolerances = DEFAULT,
) -> SignatureSample:
    if count < 1:
        raise ValueError("count must be at least 1")
    _check_order(max_order)
    b = _box_array(spec, box)
    X = halton_points(b, count, seed)
    inside = spec.chart.contains(X)
    ok, vals = _valid_rows(spec, X[inside], max_order, tol)
    pts = X[inside][ok]
    skipped = count - len(pts)
    if skipped * 2 > count:
        raise GeometryError(
            f"{skipped} of {count} sample points failed validation; check the domain box"
        )
    return SignatureSample(
        model=spec.name,
        points=pts,
        values=vals,
        names=profile_names(max_order),
        max_order=max_order,
        seed=seed,
        box=b,
        requested=count,
        skipped=skipped,
        spec=spec,
    )


# ---------------------------------------------------------------------------
# genericity


@dataclass
class RankReport:
    rank: int
    dim: int
    singular_values: list[float]

    @property
    def generic(self) -> bool:
        return self.rank == self.dim

    @property
    def stratum(self) -> str:
        return "generic" if self.generic else "nongeneric"


def signature_jacobian(sample: SignatureSample, tol: Tolerances = DEFAULT, order: int | None = None) -> np.ndarray:
    """Central-difference Jacobian of the profile up to ``order``, shape ``(P, N, k)``."""
    if sample.spec is None:
        raise ValueError("sample carries no submersion; cannot differentiate its signature")
    order = sample.max_order if order is None else order
    key = ("jac", order, tol.fd_step)
    if key not in sample._cache:
        N, P, h = sample.dim, len(sample.points), tol.fd_step
        E = np.eye(N) * h
        shifted = (sample.points[:, None, None, :] + np.stack([E, -E])[None]).reshape(-1, N)
        vals = profile_values(sample.spec, shifted, order).reshape(P, 2, N, -1)
        sample._cache[key] = (vals[:, 0] - vals[:, 1]) / (2 * h)
    return sample._cache[key]


def genericity_rank(sample: SignatureSample, tol: Tolerances = DEFAULT, order: int | None = None) -> RankReport:
    """Numerical rank of the signature map from central differences of profiles.

    The Jacobian rows are scaled per invariant by ``max(1, max |value|)``; a
    singular value counts when it exceeds both ``rank_rel`` times the largest
    one and the absolute floor ``rank_abs``. The reported rank is the maximum
    over sample points.
    """
    N = sample.dim
    P = len(sample.points)
    if P < N + 1:
        raise GeometryError(f"genericity needs at least {N + 1} sample points, have {P}")
    order = sample.max_order if order is None else order
    J = signature_jacobian(sample, tol, order)
    k = J.shape[2]
    J = J / np.maximum(1.0, np.abs(sample.values[:, :k]).max(axis=0))
    best_rank, best_sv = -1, None
    for p in range(P):
        sv = np.linalg.svd(J[p], compute_uv=False)
        top = sv.max(initial=0.0)
        r = int(np.sum((sv > tol.rank_rel * top) & (sv > tol.rank_abs)))
        if r > best_rank:
            best_rank, best_sv = r, sv
    return RankReport(best_rank, N, [float(s) for s in best_sv])


def _rank_cached(sample: SignatureSample, order: int, tol: Tolerances) -> RankReport:
    key = ("rank", order, tol.fd_step, tol.rank_rel, tol.rank_abs)
    if key not in sample._cache:
        sample._cache[key] = genericity_rank(sample, tol, order)
    return sample._cache[key]


# ---------------------------------------------------------------------------
# comparison

DISTINCT = "DISTINCT"
CONSISTENT = "CONSISTENT"
INCONCLUSIVE = "INCONCLUSIVE"


@dataclass
class CompareResult:
    verdict: str
    order: int
    distance: float
    tol_rel: float
    rank_a: int
    rank_b: int
    dim_a: int
    dim_b: int
    driver: str | None
    ranges_a: dict[str, list[float]]
    ranges_b: dict[str, list[float]]
    note: str
    history: list[dict] = field(default_factory=list)


def _directed(U: np.ndarray, V: np.ndarray) -> tuple[float, np.ndarray]:
    """max over u of min over v of |u - v|_inf, plus the worst residual vector."""
    D = np.abs(U[:, None, :] - V[None, :, :])  # (a, b, k)
    dist = D.max(axis=2)
    nearest = dist.argmin(axis=1)
    mins = dist[np.arange(len(U)), nearest]
    worst = int(mins.argmax())
    return float(mins[worst]), D[worst, nearest[worst]]


def signature_distance(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Symmetric Hausdorff distance (sup norm) on normalized signature clouds."""
    scale = np.maximum(1.0, np.maximum(np.abs(a).max(axis=0), np.abs(b).max(axis=0)))
    U, V = a / scale, b / scale
    d1, r1 = _directed(U, V)
    d2, r2 = _directed(V, U)
    return (d1, r1) if d1 >= d2 else (d2, r2)


def _ranges(s: SignatureSample, names: Sequence[str]) -> dict[str, list[float]]:
    return {n: [float(s.column(n).min()), float(s.column(n).max())] for n in names}


def compare(
    a: SignatureSample,
    b: SignatureSample,
    tol_rel: float | None = None,
    order: int | None = None,
    tol: Tolerances = DEFAULT,
) -> CompareResult:
    """Compare two signature clouds using invariants up to ``order``."""
    if a.names != b.names or a.max_order != b.max_order:
        raise ValueError("signature schemas differ; sample both with the same max_order")
    if len(a.points) == 0 or len(b.points) == 0:
        raise GeometryError("cannot compare an empty sample")
    order = a.max_order if order is None else order
    if order > a.max_order:
        raise ValueError("order exceeds the sampled max_order")
    tol_rel = tol.compare if tol_rel is None else float(tol_rel)
    names = profile_names(order)
    k = len(names)
    dist, resid = signature_distance(a.values[:, :k], b.values[:, :k])
    driver = names[int(np.argmax(resid))] if dist > 0 else None
    ra, rb = _rank_cached(a, order, tol), _rank_cached(b, order, tol)
    if dist > 10 * tol_rel:
        verdict = DISTINCT
        note = f"signatures differ (largest gap in {driver}); not locally equivalent"
    elif dist <= tol_rel and ra.generic and rb.generic:
        verdict = CONSISTENT
        note = "signatures agree on a generic stratum; consistent with equivalence, not a proof"
    else:
        verdict = INCONCLUSIVE
        if not (ra.generic and rb.generic):
            note = "nongeneric stratum: signature map loses rank, agreement is not conclusive"
        else:
            note = "distance between thresholds"
    return CompareResult(
        verdict,
        order,
        dist,
        tol_rel,
        ra.rank,
        rb.rank,
        a.dim,
        b.dim,
        driver,
        _ranges(a, names),
        _ranges(b, names),
        note,
    )


def compare_incremental(
    a: SignatureSample,
    b: SignatureSample,
    tol_rel: float | None = None,
    max_order: int | None = None,
    tol: Tolerances = DEFAULT,
) -> CompareResult:
    """Run :func:`compare` at orders 0, 1, ... and stop at the first DISTINCT."""
    top = a.max_order if max_order is None else max_order
    history = []
    res = None
    for k in range(top + 1):
        res = compare(a, b, tol_rel, k, tol)
        history.append({"order": k, "verdict": res.verdict, "distance": res.distance})
        if res.verdict == DISTINCT:
            break
    res.history = history
    return res


def profile_stats(sample: SignatureSample) -> dict[str, dict[str, float]]:
    out = {}
    for j, n in enumerate(sample.names):
        c = sample.values[:, j]
        out[n] = {
            "min": float(c.min()),
            "max": float(c.max()),
            "mean": float(c.mean()),
            "std": float(c.std()),
        }
    return out
