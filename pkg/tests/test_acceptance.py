"""Acceptance criteria, one test each.

Every test records a single ``PASS``/``FAIL`` line; ``conftest.py`` prints
them at the end of the session. Running this file directly prints the same
lines without pytest.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from oneill import expr as ex
from oneill import invariants as inv
from oneill import models
from oneill import submersion as sub
from oneill.tensors import change_frame, random_orthogonal, TensorValue, UP, DOWN

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"

RESULTS: dict[int, str] = {}


def _record(num: int, title: str, ok: bool, detail: str) -> None:
    RESULTS[num] = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {title} | {detail}"
    print(RESULTS[num])


# ---------------------------------------------------------------------------
# shared model builders


def _products():
    e = models.euclidean
    return {
        "RxR": models.build_product(e(["x"]), e(["y"])),
        "RxS1": models.build_product(e(["x"]), models.circle("theta")),
        "RxS2": models.build_product(e(["x"]), models.round_sphere2(("th", "ph"))),
    }


def _warped(f: str, m: int = 1):
    fib = models.euclidean(["y", "z"][:m])
    base = models.euclidean(["x"])
    w = models.WarpedProductSpec(base, fib, ex.parse(f, ["x"]))
    return w, models.build_warped(w)


def _killing(phi="exp(x)", alpha=("0", "x")):
    base = models.euclidean(["x", "y"])
    k = models.KillingOrbitSpec(base, ex.parse(phi, ["x", "y"]), tuple(ex.parse(a, ["x", "y"]) for a in alpha))
    spec, K = models.build_killing_total(k)
    return k, spec


def _pts(spec, count, seed, box=None):
    b = models.default_box(spec.chart) if box is None else np.asarray(box, float)
    return inv.halton_points(b, count, seed)


# ---------------------------------------------------------------------------
# criteria


def criterion_1():
    worst = {}
    for name, spec in _products().items():
        X = _pts(spec, 100, 11)
        V = inv.profile_values(spec, X, inv.MAX_ORDER)
        j = int(np.argmax(np.abs(V).max(axis=0)))
        worst[name] = (float(np.abs(V).max()), inv.profile_names(inv.MAX_ORDER)[j])
    ok = all(v <= 1e-9 for v, _ in worst.values())
    detail = ", ".join(f"{k} max={v:.2e} ({n})" for k, (v, n) in worst.items())
    return ok, detail


def criterion_2():
    _, s1 = _warped("exp(x)", 1)
    _, s2 = _warped("exp(x)", 2)
    X1 = _pts(s1, 32, 3)
    X2 = _pts(s2, 32, 3)
    V1 = inv.profile_values(s1, X1, 1)
    V2 = inv.profile_values(s2, X2, 0)
    names = inv.profile_names(1)
    col = lambda V, n: V[:, names.index(n)]
    errs = {
        "T2": np.abs(col(V1, "T2") - 1).max(),
        "H2": np.abs(col(V1, "H2") - 1).max(),
        "divH": np.abs(col(V1, "divH") + 1).max(),
        "H2(m=2)": np.abs(col(V2, "H2") - 4).max(),
    }
    a2 = np.abs(col(V1, "A2")).max()
    ok = all(e <= 1e-7 for e in errs.values()) and a2 <= 1e-9
    detail = ", ".join(f"{k} err={v:.1e}" for k, v in errs.items()) + f", A2 max={a2:.1e}"
    return ok, detail


def criterion_3():
    base = models.MetricField(
        models.Chart(("x",), {"x": (-0.5, 1.5)}), np.array([[ex.ONE]], dtype=object)
    )
    w = models.WarpedProductSpec(base, models.euclidean(["y"]), ex.parse("exp(x^2)", ["x"]))
    spec = models.build_warped(w)
    # reconstruct from H only: drop the declared warp so nothing else is consulted
    spec.params.pop("warped", None)
    r = models.reconstruct_warp(spec, [[0.0], [1.0]])
    err = abs(r.delta - 1.0)
    return err <= 1e-5, f"delta_u={r.delta:.10f} err={err:.1e} evaluations={r.evaluations}"


def criterion_4():
    spec = models.build_hopf()
    X = _pts(spec, 32, 4)
    V = inv.profile_values(spec, X, 0)
    t2, h2 = np.abs(V[:, 1]).max(), np.abs(V[:, 2]).max()
    sd = float(np.std(V[:, 0]))
    gaps = []
    for k, p in enumerate(X[:5]):
        rep = sub.verify_horizontal_identity(spec, p, trials=10, seed=k)
        gaps += [s["K_B"] - s["K_M"] for s in rep.samples]
    gap_err = float(np.abs(np.array(gaps) - 3.0).max())
    ok = t2 <= 1e-8 and h2 <= 1e-8 and gap_err <= 1e-7 and sd <= 1e-7 and len(gaps) == 50
    return ok, (
        f"T2 max={t2:.1e}, H2 max={h2:.1e}, K_B-K_M-3 max={gap_err:.1e} over {len(gaps)} pairs, "
        f"A2 mean={V[:, 0].mean():.12f} std={sd:.1e}"
    )


def criterion_5():
    k, spec = _killing()
    X = _pts(spec, 100, 5, [[-1, 1], [-1, 1], [0, 1]])
    dA = dH = 0.0
    for p in X:
        A, H = models.killing_closed_form_AH(k, spec, p)
        dA = max(dA, float(np.abs(A.components - spec.local(p, 1).A_frame()[0]).max()))
        dH = max(dH, float(np.abs(H - sub.mean_curvature_at(spec, p).components).max()))
    V = inv.profile_values(spec, X, 0)
    h2 = float(np.abs(V[:, 2] - 1).max())
    a2 = float(np.abs(V[:, 0] - np.exp(2 * X[:, 0]) / 2).max())
    ok = dA <= 1e-8 and dH <= 1e-8 and h2 <= 1e-7 and a2 <= 1e-7
    return ok, f"A closed-form diff={dA:.1e}, H diff={dH:.1e}, H2 err={h2:.1e}, A2 err={a2:.1e}"


def criterion_6():
    ka, _ = _killing()
    kg, _ = _killing(alpha=("y", "2*x"))  # alpha + d(xy)
    kp, _ = _killing(phi="exp(2*x)")
    ident = [ex.var("x"), ex.var("y")]
    good = models.killing_equivalence_check(ka, kg, ident)
    bad = models.killing_equivalence_check(ka, kp, ident)
    localized = bad.failed == ["phi_pullback"] and "phi_pullback" in bad.worst_point
    ok = good.passed and not bad.passed and localized
    return ok, (
        f"gauge pair passed={good.passed} (max residual {max(good.residuals.values()):.1e}); "
        f"phi mismatch failed={bad.failed} at {np.round(bad.worst_point['phi_pullback'], 3).tolist()}"
    )


def criterion_7():
    wa, sa = _warped("exp(x)")
    wb, _ = _warped("2*exp(x)")
    wc, sc = _warped("exp(2*x)")
    x, y = ex.var("x"), ex.var("y")
    good = models.warped_equivalence_check(wa, wb, [x], 2.0, [ex.div(y, ex.const(2.0))])
    bad = models.warped_equivalence_check(wa, wc, [x], 1.0, [y])
    box = [[-1, 1], [0, 1]]
    A = inv.sample_signatures(sa, box, 24, 7, 0)
    B = inv.sample_signatures(sc, box, 24, 7, 0)
    res = inv.compare_incremental(A, B, max_order=0)
    ok = good.passed and not bad.passed and res.verdict == inv.DISTINCT and res.order == 0
    return ok, (
        f"(e^x, 2e^x, c=2) passed={good.passed}; (e^x, e^2x) failed={bad.failed}; "
        f"compare={res.verdict} at order {res.order} (driver {res.driver})"
    )


def _isometries():
    """(label, spec_a, spec_b, Phi, psi, box) with Phi a fiber-preserving isometry."""
    e = models.euclidean
    v = ex.var
    c = ex.const
    prod = models.build_product(e(["x"]), models.round_sphere2(("th", "ph")))
    _, wexp = _warped("exp(x)")
    ka, kspec = _killing()
    _, kgspec = _killing(alpha=("y", "2*x"))
    hopf = models.build_hopf()
    p = ex.parse
    return [
        ("product RxS2", prod, prod, [p("x + 0.5"), v("th"), p("ph + 1")], [p("x + 0.5")],
         [[-1, 1], [0.5, 2.5], [0, 1]]),
        ("warped e^x", wexp, wexp, [p("x + log(2)"), ex.div(v("y"), c(2.0))], [p("x + log(2)")],
         [[-1, 0], [-1, 1]]),
        ("hopf", hopf, hopf, [v("eta"), p("xi1 + 0.7"), p("xi2 + 0.3")], [v("eta"), p("psi + 0.4")],
         [[0.3, 1.2], [0, 1], [0, 1]]),
        ("killing gauge", kspec, kgspec, [v("x"), v("y"), p("t - x*y")], [v("x"), v("y")],
         [[-1, 1], [-1, 1], [0, 1]]),
        ("killing translation", kspec, kspec, [v("x"), p("y + 0.5"), p("t + 0.25")], [v("x"), p("y + 0.5")],
         [[-1, 1], [-1, 1], [0, 1]]),
    ]


def _rotation_invariance(spec, X, rng, rotations=100):
    loc = spec.local(X, 1)
    A, T = loc.A_frame(), loc.T_frame()
    worst = 0.0
    for p in range(len(X)):
        a = TensorValue(A[p], (DOWN, DOWN, UP), ("h", "h", "v"))
        t = TensorValue(T[p], (DOWN, DOWN, UP), ("v", "v", "h"))
        a0, t0 = float(np.sum(A[p] ** 2)), float(np.sum(T[p] ** 2))
        for _ in range(rotations // len(X)):
            Q = (random_orthogonal(spec.n, rng), random_orthogonal(spec.m, rng))
            a1 = float(np.sum(change_frame(a, Q).components ** 2))
            t1 = float(np.sum(change_frame(t, Q).components ** 2))
            worst = max(worst, abs(a1 - a0), abs(t1 - t0))
    return worst


def criterion_8():
    worst_prof, worst_rot, lines = 0.0, 0.0, []
    rng = np.random.default_rng(8)
    for label, sa, sb, Phi, psi, box in _isometries():
        X = inv.halton_points(np.asarray(box, float), 10, 8)
        nat = sub.verify_naturality(sa, sb, Phi, psi, X)
        if not nat.passed:
            lines.append(f"{label}: isometry check failed {nat.failed}")
            worst_prof = math.inf
            continue
        Y = ex.compile_exprs(Phi, sa.chart.names)(X)
        d = float(np.abs(inv.profile_values(sa, X, 3) - inv.profile_values(sb, Y, 3)).max())
        worst_prof = max(worst_prof, d)
        worst_rot = max(worst_rot, _rotation_invariance(sa, X, rng))
    ok = worst_prof <= 1e-7 and worst_rot <= 1e-9
    return ok, f"profile diff max={worst_prof:.1e} over 5 maps, rotation diff max={worst_rot:.1e}" + (
        "; " + "; ".join(lines) if lines else ""
    )


def _all_models():
    out = dict(_products())
    out["warped e^x"] = _warped("exp(x)")[1]
    out["warped e^x^2 (m=2)"] = _warped("exp(x^2)", 2)[1]
    out["hopf"] = models.build_hopf()
    out["killing"] = _killing()[1]
    out["killing phi=1+x^2"] = _killing(phi="1 + x^2", alpha=("-y", "x"))[1]
    return out


def criterion_9():
    keys = ("A_antisymmetry", "T_symmetry", "bracket", "bianchi", "metric_compatibility")
    worst = {k: 0.0 for k in keys}
    for spec in _all_models().values():
        X = _pts(spec, 12, 9)
        r = sub.structural_residuals(spec, X)
        for k in keys:
            worst[k] = max(worst[k], r[k])
    ok = all(v <= 1e-7 for v in worst.values())
    return ok, ", ".join(f"{k}={v:.1e}" for k, v in worst.items())


def criterion_10():
    hopf = models.build_hopf()
    prod = _products()["RxS2"]
    _, gauss = _warped("exp(x^2)")
    hb = [[0.3, 1.2], [0, 1], [0, 1]]
    pb = [[-1, 1], [0.5, 2.5], [0, 1]]
    gb = [[0.5, 1.5], [0, 1]]
    H1 = inv.sample_signatures(hopf, hb, 12, 1, 1)
    H2 = inv.sample_signatures(hopf, hb, 12, 2, 1)
    P1 = inv.sample_signatures(prod, pb, 12, 1, 1)
    P2 = inv.sample_signatures(prod, pb, 12, 2, 1)
    G = inv.sample_signatures(gauss, gb, 12, 1, 1)
    rh, rp, rg = inv.genericity_rank(H1), inv.genericity_rank(P1), inv.genericity_rank(G)
    verdicts = [inv.compare_incremental(H1, H2).verdict, inv.compare_incremental(P1, P2).verdict]
    ok = rh.rank == 0 and rp.rank == 0 and rg.rank >= 1 and inv.CONSISTENT not in verdicts
    return ok, f"rank hopf={rh.rank} product={rp.rank} warped e^x^2={rg.rank}; self-compare verdicts={verdicts}"


def criterion_11(tmp: Path | None = None):
    import tempfile

    tmp = Path(tempfile.mkdtemp()) if tmp is None else tmp
    runs = [
        ["profile", "--scenario", str(SCEN / "warped_gauss.json")],
        ["compare", "--scenario", str(SCEN / "hopf.json"), "--scenario-b", str(SCEN / "product.json")],
        ["verify", "--scenario", str(SCEN / "killing.json")],
    ]
    same = []
    for i, argv in enumerate(runs):
        blobs = []
        for r in range(2):
            out = tmp / f"r{i}_{r}.json"
            subprocess.run(
                [sys.executable, "-m", "oneill", *argv, "--no-timing", "--out", str(out)],
                check=False,
                capture_output=True,
            )
            blobs.append(out.read_bytes())
        same.append(blobs[0] == blobs[1] and len(blobs[0]) > 0 and "timing" not in json.loads(blobs[0]))
    return all(same), f"byte-identical reports: {dict(zip([r[0] for r in runs], same))}"


TITLES = {
    1: "product invariants vanish",
    2: "warped product values",
    3: "warp reconstruction",
    4: "Hopf benchmark",
    5: "Killing closed form",
    6: "Killing equivalence",
    7: "warped equivalence",
    8: "naturality and frame invariance",
    9: "structural identities",
    10: "genericity diagnostics",
    11: "determinism",
}

FUNCS = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
}


@pytest.mark.parametrize("num", sorted(FUNCS), ids=lambda n: f"criterion_{n:02d}")
def test_criterion(num):
    ok, detail = FUNCS[num]()
    _record(num, TITLES[num], ok, detail)
    assert ok, detail


if __name__ == "__main__":
    failures = 0
    for n in sorted(FUNCS):
        ok, detail = FUNCS[n]()
        _record(n, TITLES[n], ok, detail)
        failures += not ok
    sys.exit(1 if failures else 0)
