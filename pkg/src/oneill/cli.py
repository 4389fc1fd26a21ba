"""Command-line entry point: profile, compare, verify, equivalence, reconstruct.

Exit codes: 0 success, 1 verdict FAIL or DISTINCT, 2 input error,
3 numerical or structural failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from typing import Callable

import numpy as np

from . import expr as ex
from . import invariants as inv
from . import models
from . import submersion as sub
from .geometry import GeometryError
from .scenario import Candidates, Scenario, ScenarioError, load, load_candidates

REPORT_VERSION = "1"

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(ValueError):
    pass


def _settings(sc: Scenario, args) -> dict:
    return {
        "samples": args.samples if args.samples is not None else sc.samples,
        "seed": args.seed if args.seed is not None else sc.seed,
        "max_order": args.max_order if args.max_order is not None else sc.max_order,
        "tolerances": sc.tolerances.as_dict(),
    }


def _sample(sc: Scenario, st: dict) -> inv.SignatureSample:
    return inv.sample_signatures(
        sc.spec, sc.box_array(), st["samples"], st["seed"], st["max_order"], sc.tolerances
    )


def _sample_report(s: inv.SignatureSample, rank: inv.RankReport | None) -> dict:
    out = {
        "model": s.model,
        "requested": s.requested,
        "skipped": s.skipped,
        "box": s.box.tolist(),
        "stats": inv.profile_stats(s),
        "profiles": [{"point": p.point, "values": p.as_dict()} for p in s.profiles()],
    }
    if rank is not None:
        out["genericity"] = {
            "rank": rank.rank,
            "dim": rank.dim,
            "stratum": rank.stratum,
            "singular_values": rank.singular_values,
        }
    return out


def _rank_or_none(s: inv.SignatureSample, sc: Scenario) -> inv.RankReport | None:
    if len(s.points) < s.dim + 1:
        return None
    return inv.genericity_rank(s, sc.tolerances)


# ---------------------------------------------------------------------------
# commands


def cmd_profile(args) -> tuple[dict, int]:
    sc = load(args.scenario)
    st = _settings(sc, args)
    s = _sample(sc, st)
    return {
        "scenario": sc.data,
        "settings": st,
        **_sample_report(s, _rank_or_none(s, sc)),
    }, EXIT_OK


def cmd_compare(args) -> tuple[dict, int]:
    if not args.scenario_b:
        raise UsageError("compare needs --scenario-b")
    a, b = load(args.scenario), load(args.scenario_b)
    sa, sb = _settings(a, args), _settings(b, args)
    if sa["max_order"] != sb["max_order"]:
        raise ScenarioError("scenarios use different max_order; profile schemas differ", "/max_order")
    A, B = _sample(a, sa), _sample(b, sb)
    tol = a.tolerances
    res = inv.compare_incremental(A, B, tol.compare, sa["max_order"], tol)
    verdict = {
        "verdict": res.verdict,
        "order": res.order,
        "distance": res.distance,
        "tol_rel": res.tol_rel,
        "driver": res.driver,
        "rank_a": res.rank_a,
        "rank_b": res.rank_b,
        "dim_a": res.dim_a,
        "dim_b": res.dim_b,
        "note": res.note,
        "history": res.history,
        "ranges_a": res.ranges_a,
        "ranges_b": res.ranges_b,
    }
    report = {
        "scenario": a.data,
        "scenario_b": b.data,
        "settings": sa,
        "settings_b": sb,
        "compare": verdict,
    }
    return report, EXIT_FAIL if res.verdict == inv.DISTINCT else EXIT_OK


def _row(name: str, residual: float | None, tol: float, applicable: bool = True, **extra) -> dict:
    ok = (not applicable) or (residual is not None and residual <= tol)
    row = {
        "check": name,
        "applicable": applicable,
        "residual": residual,
        "tolerance": tol,
        "passed": ok,
    }
    row.update(extra)
    return row


def _verify_rows(sc: Scenario, X: np.ndarray, trials: int, seed: int) -> list[dict]:
    spec, tol = sc.spec, sc.tolerances
    rows = []
    rep = sub.check_submersion(spec, X, tol)
    rows.append(_row("submersion", rep.max_deviation, tol.structural, rank=min(c.rank for c in rep.checks)))
    for name, val in sub.structural_residuals(spec, X).items():
        t = tol.orthonormality if name.startswith("frame") else tol.identity
        rows.append(_row(name, val, t))
    integ = sub.integrability_check(spec, X, tol)
    # informational: either verdict is a valid outcome
    rows.append({
        "check": "integrability",
        "applicable": True,
        "residual": integ.max_A,
        "tolerance": tol.structural,
        "passed": True,
        "verdict": integ.verdict,
    })

    def per_point(fn: Callable, name: str):
        worst, app, reason = 0.0, True, ""
        for k, p in enumerate(X):
            r = fn(p, seed + k)
            if not r.applicable:
                app, reason = False, r.reason
                break
            worst = max(worst, r.max_residual)
        if app:
            rows.append(_row(name, worst, tol.identity, trials=trials * len(X)))
        else:
            rows.append(_row(name, None, tol.identity, applicable=False, reason=reason))

    per_point(lambda p, s: sub.verify_horizontal_identity(spec, p, trials, s), "horizontal_curvature_identity")
    per_point(lambda p, s: sub.verify_gauss_identity(spec, None, p, trials, s), "fiber_gauss_identity")

    if isinstance(sc.model_data, models.WarpedProductSpec):
        w = sc.model_data
        dT = dH = 0.0
        for p in X:
            T, H = models.warped_closed_form_TH(w, spec, p)
            dT = max(dT, float(np.abs(T.components - sub.oneill_T_at(spec, p).components).max(initial=0)))
            dH = max(dH, float(np.abs(H - sub.mean_curvature_at(spec, p).components).max(initial=0)))
        rows.append(_row("warped_closed_form_T", dT, tol.structural))
        rows.append(_row("warped_closed_form_H", dH, tol.structural))
    if isinstance(sc.model_data, models.KillingOrbitSpec):
        k = sc.model_data
        dA = dH = 0.0
        for p in X:
            A, H = models.killing_closed_form_AH(k, spec, p)
            dA = max(dA, float(np.abs(A.components - sub.oneill_A_at(spec, p).components).max(initial=0)))
            dH = max(dH, float(np.abs(H - sub.mean_curvature_at(spec, p).components).max(initial=0)))
        rows.append(_row("killing_closed_form_A", dA, tol.structural))
        rows.append(_row("killing_closed_form_H", dH, tol.structural))
    if sc.killing is not None:
        kr = models.killing_check(spec, sc.killing, X, tol)
        rows.append(_row("killing_field", kr.residual, tol.structural, min_norm=kr.min_norm, worst_point=kr.worst_point))
    return rows


def cmd_verify(args) -> tuple[dict, int]:
    sc = load(args.scenario)
    st = _settings(sc, args)
    X = inv.halton_points(sc.box_array(), st["samples"], st["seed"])
    X = X[sc.spec.chart.contains(X)]
    if len(X) == 0:
        raise ScenarioError("no sample point lies inside the chart domain", "/box")
    sub.require_submersion(sc.spec, X, sc.tolerances)
    rows = _verify_rows(sc, X, sc.trials, st["seed"])
    ok = all(r["passed"] for r in rows)
    report = {
        "scenario": sc.data,
        "settings": st,
        "points": X.tolist(),
        "checks": rows,
        "verdict": "PASS" if ok else "FAIL",
    }
    return report, EXIT_OK if ok else EXIT_FAIL


def cmd_equivalence(args) -> tuple[dict, int]:
    if not args.scenario_b or not args.candidates:
        raise UsageError("equivalence needs --scenario-b and --candidates")
    a, b = load(args.scenario), load(args.scenario_b)
    cand: Candidates = load_candidates(args.candidates, a)
    st = _settings(a, args)
    tol = a.tolerances
    sections = {}
    ok = True
    if cand.Phi is None or cand.psi is None:
        raise UsageError("candidates must supply Phi and psi")
    X = inv.halton_points(a.box_array(), st["samples"], st["seed"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        nat = sub.verify_naturality(a.spec, b.spec, cand.Phi, cand.psi, X, tol)
    sections["naturality"] = {
        "passed": nat.passed,
        "residuals": nat.residuals,
        "failed": nat.failed,
        "worst_point": nat.worst_point,
        "checked_points": nat.checked_points,
        "skipped_points": nat.skipped_points,
        "warnings": [str(w.message) for w in caught],
    }
    ok &= nat.passed
    wa, wb = a.model_data, b.model_data
    if isinstance(wa, models.WarpedProductSpec) and isinstance(wb, models.WarpedProductSpec):
        if cand.c is None or cand.fiber_map is None:
            raise UsageError("warped equivalence needs candidates 'c' and 'fiber_map'")
        rep = models.warped_equivalence_check(wa, wb, cand.psi, cand.c, cand.fiber_map, st["samples"], st["seed"], tol)
        sections["warped_criterion"] = rep.__dict__
        ok &= rep.passed
    elif isinstance(wa, models.KillingOrbitSpec) and isinstance(wb, models.KillingOrbitSpec):
        rep = models.killing_equivalence_check(wa, wb, cand.psi, st["samples"], st["seed"], tol)
        sections["killing_criterion"] = rep.__dict__
        ok &= rep.passed
    report = {
        "scenario": a.data,
        "scenario_b": b.data,
        "candidates": cand.raw,
        "settings": st,
        **sections,
        "verdict": "PASS" if ok else "FAIL",
    }
    return report, EXIT_OK if ok else EXIT_FAIL


def cmd_reconstruct(args) -> tuple[dict, int]:
    sc = load(args.scenario)
    if args.path:
        try:
            path = json.loads(args.path)
        except json.JSONDecodeError as e:
            raise UsageError(f"--path is not valid JSON: {e.msg}") from None
    else:
        path = sc.data.get("path")
    if not path:
        raise UsageError("reconstruct needs a path (scenario 'path' or --path)")
    try:
        path = np.asarray(path, dtype=float)
    except ValueError:
        raise UsageError("path must be a list of base points") from None
    if path.ndim != 2 or path.shape[1] != sc.spec.n or len(path) < 2:
        raise UsageError(f"path needs at least two points with {sc.spec.n} coordinates")
    r = models.reconstruct_warp(sc.spec, path, tol=sc.tolerances)
    report = {
        "scenario": sc.data,
        "path": r.vertices,
        "u": r.u,
        "delta_u": r.delta,
        "max_A": r.max_A,
        "evaluations": r.evaluations,
    }
    if r.exact_u is not None:
        report["declared_u"] = r.exact_u
        report["max_error"] = r.max_error
    return report, EXIT_OK


COMMANDS = {
    "profile": cmd_profile,
    "compare": cmd_compare,
    "verify": cmd_verify,
    "equivalence": cmd_equivalence,
    "reconstruct": cmd_reconstruct,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="oneill",
        description="Differential invariants of Riemannian submersions given in charts.",
    )
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--scenario-b", help="second scenario (compare, equivalence)")
    p.add_argument("--candidates", help="candidate maps JSON (equivalence)")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--max-order", type=int, choices=range(4), help="highest profile order")
    p.add_argument("--seed", type=int, help="sampling seed")
    p.add_argument("--samples", type=int, help="number of sample points")
    p.add_argument("--path", help="JSON list of base points (reconstruct)")
    p.add_argument("--no-timing", action="store_true", help="omit the timing block")
    return p


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def render(report: dict) -> str:
    return json.dumps(report, indent=2, default=_jsonable, allow_nan=True) + "\n"


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.samples is not None and args.samples < 1:
        print("error: --samples must be positive", file=sys.stderr)
        return EXIT_INPUT
    t0 = time.perf_counter()
    try:
        body, code = COMMANDS[args.command](args)
    except (ScenarioError, UsageError, ex.ParseError, ex.UndeclaredVariableError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (GeometryError, ex.ExprError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        point = getattr(e, "point", None)
        if point is not None:
            print(f"  at point {np.asarray(point).tolist()}", file=sys.stderr)
        return EXIT_NUMERIC
    report = {
        "version": REPORT_VERSION,
        "command": args.command,
        "schema": inv.SCHEMA,
        **body,
    }
    if not args.no_timing:
        report["timing"] = {"seconds": round(time.perf_counter() - t0, 3)}
    text = render(report)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
