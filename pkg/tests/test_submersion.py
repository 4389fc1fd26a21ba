import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oneill import expr as ex
from oneill import invariants as inv
from oneill import models
from oneill import submersion as sub
from oneill.geometry import Chart, MetricField
from oneill.tensors import change_frame, random_orthogonal, TensorValue, UP, DOWN


def _warped(f, fiber=("y",)):
    w = models.WarpedProductSpec(models.euclidean(["x"]), models.euclidean(list(fiber)), ex.parse(f, ["x"]))
    return w, models.build_warped(w)


PLANE = models.build_product(models.euclidean(["x"]), models.euclidean(["y"]))
PLANE3 = models.build_product(models.euclidean(["x", "z"]), models.euclidean(["y"]))
HOPF = models.build_hopf()
RXS2 = models.build_product(models.euclidean(["x"]), models.round_sphere2())
W_EXP = _warped("exp(x)")[1]


def _models():
    return {
        "plane": PLANE,
        "RxS2": RXS2,
        "warped": W_EXP,
        "warped2": _warped("exp(x^2)", ("y", "z"))[1],
        "hopf": HOPF,
        "killing": models.build_killing_total(models.KillingOrbitSpec(
            models.euclidean(["x", "y"]), ex.parse("exp(x)"), (ex.ZERO, ex.parse("x"))))[0],
    }


# ---------------------------------------------------------------------------
# submersion check


def test_product_is_submersion():
    rep = sub.check_submersion(PLANE, [[0.1, 0.2], [1, -1]])
    assert rep.passed and rep.max_deviation == 0.0


def test_warped_is_submersion():
    assert sub.check_submersion(W_EXP, models.sample_chart(W_EXP.chart, 10)).passed


def test_scaled_base_is_not_submersion():
    spec = sub.SubmersionSpec(
        models.euclidean(["x", "y"]),
        MetricField.diagonal(Chart(("u",)), ["4"]),
        (ex.var("x"),),
        1,
    )
    rep = sub.check_submersion(spec, [[0.0, 0.0]])
    assert not rep.passed and rep.max_deviation == pytest.approx(3.0)
    with pytest.raises(sub.SubmersionError) as info:
        sub.require_submersion(spec, [[0.0, 0.0]])
    assert info.value.point is not None


def test_rank_deficient_map_is_structural():
    spec = sub.SubmersionSpec(models.euclidean(["x", "y"]), models.euclidean(["u"]), (ex.parse("x^2"),), 1)
    rep = sub.check_submersion(spec, [[0.0, 1.0]])
    assert rep.structural_failure and not rep.passed


# ---------------------------------------------------------------------------
# projections and frames


def test_product_projections():
    PH, PV = sub.projections_at(PLANE, [0.3, 0.4])
    np.testing.assert_array_equal(PH.components, np.diag([1.0, 0.0]))
    np.testing.assert_array_equal(PV.components, np.diag([0.0, 1.0]))


@pytest.mark.parametrize("name", sorted(_models()))
def test_projection_identities(name):
    spec = _models()[name]
    X = models.sample_chart(spec.chart, 100, 1)
    loc = spec.local(X, 1)
    PH, PV = loc.PH.value, loc.PV.value
    eye = np.eye(spec.dim)
    assert np.abs(PH + PV - eye).max() <= 1e-10
    assert np.abs(np.einsum("pab,pbc->pac", PH, PV)).max() <= 1e-10
    assert np.abs(np.einsum("pab,pbc->pac", PH, PH) - PH).max() <= 1e-10


def test_product_frame_is_coordinate_frame():
    fr = sub.adapted_frame_at(PLANE, [0.5, -0.5])
    np.testing.assert_allclose(np.abs(fr.horizontal), [[1.0], [0.0]])
    np.testing.assert_allclose(np.abs(fr.vertical), [[0.0], [1.0]])


def test_warped_frame():
    x = 0.7
    fr = sub.adapted_frame_at(W_EXP, [x, 0.1])
    np.testing.assert_allclose(np.abs(fr.horizontal[:, 0]), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(np.abs(fr.vertical[:, 0]), [0.0, math.exp(-x)], rtol=1e-14)


# ---------------------------------------------------------------------------
# A, T, H


def test_product_and_warped_tensors():
    for spec, p in ((PLANE, [0.1, 0.2]), (W_EXP, [0.3, 0.5])):
        assert np.abs(sub.oneill_A_at(spec, p).components).max() == 0.0
    assert np.abs(sub.oneill_T_at(PLANE, [0.1, 0.2]).components).max() == 0.0
    assert np.abs(sub.oneill_T_at(HOPF, [0.6, 0.1, 0.2]).components).max() <= 1e-14


def test_mean_curvature_examples():
    assert np.abs(sub.mean_curvature_at(PLANE, [0.1, 0.2]).components).max() == 0.0
    assert np.abs(sub.mean_curvature_at(HOPF, [0.6, 0.1, 0.2]).components).max() <= 1e-14
    H = sub.mean_curvature_at(W_EXP, [0.4, 0.9]).components
    np.testing.assert_allclose(H, [-1.0, 0.0], atol=1e-14)
    s2 = _warped("exp(2*x)")[1]
    assert inv.profile_at(s2, [0.2, 0.3], 0)["H2"] == pytest.approx(4.0, rel=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-1, 1), st.floats(-1, 1))
def test_warped_T2_matches_log_gradient(a, b, x):
    """|T|^2 = m |grad ln f|^2 and |H|^2 = m^2 |grad ln f|^2 for f = exp(a x + b x^2)."""
    a, b = round(a, 3), round(b, 3)
    _, spec = _warped(f"exp({a}*x + {b}*x^2)", ("y", "z"))
    v = inv.profile_values(spec, [[x, 0.1, 0.2]], 0)[0]
    du2 = (a + 2 * b * x) ** 2
    assert v[1] == pytest.approx(2 * du2, abs=1e-10)
    assert v[2] == pytest.approx(4 * du2, abs=1e-10)


@pytest.mark.parametrize("name", sorted(_models()))
def test_structural_identities(name):
    spec = _models()[name]
    r = sub.structural_residuals(spec, models.sample_chart(spec.chart, 100, 2))
    assert r["A_antisymmetry"] <= 1e-8
    assert r["T_symmetry"] <= 1e-8
    assert r["bracket"] <= 1e-7
    assert r["bianchi"] <= 1e-8
    assert r["riemann_symmetries"] <= 1e-8
    assert r["metric_compatibility"] <= 1e-8
    for k in ("frame_orthonormality", "frame_vertical", "frame_horizontal_isometry"):
        assert r[k] <= 1e-10


@pytest.mark.parametrize("name", sorted(_models()))
def test_norms_invariant_under_frame_rotation(name):
    spec = _models()[name]
    X = models.sample_chart(spec.chart, 5, 3)
    loc = spec.local(X, 1)
    A, T, H = loc.A_frame(), loc.T_frame(), loc.H.value
    Xf, _ = loc.frames
    Hf = np.einsum("pa,pab,pbi->pi", H, loc.g.value, Xf)
    rng = np.random.default_rng(7)
    for p in range(len(X)):
        a = TensorValue(A[p], (DOWN, DOWN, UP), ("h", "h", "v"))
        t = TensorValue(T[p], (DOWN, DOWN, UP), ("v", "v", "h"))
        h = TensorValue(Hf[p], (UP,), ("h",))
        for _ in range(20):
            Q = (random_orthogonal(spec.n, rng), random_orthogonal(spec.m, rng))
            for val in (a, t, h):
                assert abs(np.sum(change_frame(val, Q).components ** 2) - np.sum(val.components ** 2)) <= 1e-9


@pytest.mark.parametrize("name", sorted(_models()))
def test_mean_curvature_bounded_by_T(name):
    spec = _models()[name]
    X = models.sample_chart(spec.chart, 20, 4)
    loc = spec.local(X, 1)
    T = loc.T_frame()
    Xf, _ = loc.frames
    H_frame = np.einsum("pa,pab,pbi->pi", loc.H.value, loc.g.value, Xf)
    traced = np.einsum("paai->pi", T)
    np.testing.assert_allclose(H_frame, traced, atol=1e-12)
    bound = np.linalg.norm(T[:, np.arange(spec.m), np.arange(spec.m), :], axis=2).sum(axis=1)
    assert np.all(np.linalg.norm(H_frame, axis=1) <= bound + 1e-12)
    if np.abs(T).max() <= 1e-12:
        assert np.abs(loc.H.value).max() <= 1e-12


# ---------------------------------------------------------------------------
# curvature identities


def test_horizontal_identity_product():
    rep = sub.verify_horizontal_identity(PLANE3, [0.1, 0.2, 0.3], trials=5)
    assert rep.applicable and rep.max_residual == 0.0
    assert all(s["K_B"] == 0.0 and s["K_M"] == 0.0 for s in rep.samples)


def test_horizontal_identity_hopf():
    rep = sub.verify_horizontal_identity(HOPF, [0.6, 0.2, 0.9], trials=20, seed=3)
    assert rep.max_residual <= 1e-7
    for s in rep.samples:
        assert s["K_B"] == pytest.approx(4.0, abs=1e-9)
        assert s["K_M"] == pytest.approx(1.0, abs=1e-9)
        assert 3 * s["A_XY_sq"] == pytest.approx(3.0, abs=1e-9)


def test_horizontal_identity_not_applicable():
    assert not sub.verify_horizontal_identity(W_EXP, [0.1, 0.2]).applicable


def test_gauss_identity():
    rep = sub.verify_gauss_identity(RXS2, None, [0.1, 1.2, 0.4], trials=10)
    assert rep.applicable and rep.max_residual <= 1e-8
    w2 = _warped("exp(x^2)", ("y", "z"))[1]
    rep = sub.verify_gauss_identity(w2, None, [0.7, 0.1, 0.2], trials=10)
    assert rep.applicable and rep.max_residual <= 1e-7
    assert not sub.verify_gauss_identity(HOPF, None, [0.6, 0.1, 0.2]).applicable


def test_integrability():
    X = lambda s: models.sample_chart(s.chart, 10)
    assert sub.integrability_check(W_EXP, X(W_EXP)).verdict == "INTEGRABLE"
    assert sub.integrability_check(PLANE, X(PLANE)).verdict == "INTEGRABLE"
    rep = sub.integrability_check(HOPF, X(HOPF))
    assert rep.verdict == "NOT_INTEGRABLE"
    # |A|^2 = 2 means the frame norm of A is sqrt(2)
    np.testing.assert_allclose(rep.per_point, math.sqrt(2), rtol=1e-12)


# ---------------------------------------------------------------------------
# naturality


def test_identity_maps_pass():
    for spec in _models().values():
        X = models.sample_chart(spec.chart, 6)
        Phi = [ex.var(n) for n in spec.chart.names]
        psi = [ex.var(n) for n in spec.base.chart.names]
        assert sub.verify_naturality(spec, spec, Phi, psi, X).passed


def test_warped_homothety_passes_and_mismatch_fails():
    _, a = _warped("exp(x)")
    _, b = _warped("2*exp(x)")
    _, c = _warped("exp(2*x)")
    X = models.sample_chart(a.chart, 8)
    x, y = ex.var("x"), ex.var("y")
    assert sub.verify_naturality(a, b, [x, ex.div(y, ex.const(2.0))], [x], X).passed
    bad = sub.verify_naturality(a, c, [x, y], [x], X)
    assert not bad.passed and "invariants_ATH" in bad.failed


def test_points_leaving_chart_are_skipped():
    spec = models.build_hopf()
    Phi = [ex.parse("eta + 0.5"), ex.var("xi1"), ex.var("xi2")]
    psi = [ex.parse("eta + 0.5"), ex.var("psi")]
    pts = np.array([[0.3, 0.0, 0.0], [1.2, 0.0, 0.0]])
    with pytest.warns(UserWarning):
        rep = sub.verify_naturality(spec, spec, Phi, psi, pts)
    assert rep.skipped_points == 1 and rep.checked_points == 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(sub.GeometryError):
            sub.verify_naturality(spec, spec, Phi, psi, pts[1:])
