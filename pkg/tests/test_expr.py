import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oneill import expr as ex

VARS = ("x", "y")


# ---------------------------------------------------------------------------
# random expressions


def _half(a):
    return ex.mul(ex.const(0.5), a)


# arguments are halved so nested compositions keep derivatives moderate and a
# central difference with step 1e-5 stays accurate
UNARY = (
    lambda a: ex.sin(_half(a)),
    lambda a: ex.cos(_half(a)),
    ex.neg,
    lambda a: ex.exp(ex.sin(_half(a))),
    lambda a: ex.log(ex.add(ex.const(2.0), ex.cos(_half(a)))),
    lambda a: ex.sqrt(ex.add(ex.const(2.0), ex.sin(_half(a)))),
    lambda a: ex.power(ex.add(ex.const(1.5), ex.mul(ex.const(0.5), ex.sin(_half(a)))), 3.0),
    lambda a: ex.power(ex.add(ex.const(2.0), ex.sin(_half(a))), -1.0),
    lambda a: ex.power(ex.add(ex.const(2.0), ex.sin(_half(a))), 0.5),
)

BINARY = (
    ex.add,
    ex.sub,
    ex.mul,
    lambda a, b: ex.div(a, ex.add(ex.const(2.0), ex.cos(b))),
)


@st.composite
def exprs(draw, depth=6):
    """Random expressions of tree depth at most ``depth``, smooth on [-1, 1]^2."""
    kind = draw(st.sampled_from(("leaf", "unary", "binary")) if depth > 0 else st.just("leaf"))
    if kind == "leaf":
        if draw(st.booleans()):
            return ex.var(draw(st.sampled_from(VARS)))
        return ex.const(round(draw(st.floats(-3, 3, allow_nan=False)), 3))
    if kind == "unary":
        return draw(st.sampled_from(UNARY))(draw(exprs(depth - 1)))
    return draw(st.sampled_from(BINARY))(draw(exprs(depth - 1)), draw(exprs(depth - 1)))


POINT = st.tuples(st.floats(-1, 1), st.floats(-1, 1))


# ---------------------------------------------------------------------------
# parsing


def test_parse_power_of_function():
    e = ex.parse("sin(eta)^2", ["eta"])
    assert e.kind == "pow" and e.value == 2.0 and e.args[0].kind == "sin"


def test_parse_exp_product():
    e = ex.parse("exp(2*x)", ["x", "y"])
    assert e.kind == "exp"
    assert e.args[0].kind == "mul" and e.args[0].args[0].value == 2.0


def test_parse_error_offset():
    with pytest.raises(ex.ParseError) as info:
        ex.parse("x+*y", ["x", "y"])
    assert info.value.offset == 2


def test_undeclared_variable():
    with pytest.raises(ex.UndeclaredVariableError):
        ex.parse("x + z", ["x", "y"])


@pytest.mark.parametrize("text", ["x^-1", "x^(-2)", "x^-0.5"])
def test_negative_exponents(text):
    e = ex.parse(text, ["x"])
    assert e.kind == "pow" and e.value < 0


# ---------------------------------------------------------------------------
# differentiation


def test_diff_examples():
    x = ex.var("x")
    assert ex.diff(ex.sin(x), "x") is ex.cos(x)
    d = ex.diff(ex.parse("exp(2*x)"), "x")
    assert ex.evaluate(d, {"x": 0.3}) == pytest.approx(2 * math.exp(0.6), rel=1e-14)
    assert ex.diff(ex.var("y"), "x") is ex.ZERO


def test_substitute_examples():
    u = ex.var("u")
    e = ex.substitute(ex.power(u, 2), {"u": ex.parse("x + y")})
    assert ex.evaluate(e, {"x": 1.0, "y": 2.0}) == 9.0
    assert ex.simplify(ex.substitute(ex.sin(u), {"u": 0.0})) is ex.ZERO
    assert ex.substitute(ex.var("x"), {}) is ex.var("x")


def test_evaluate_examples():
    assert ex.evaluate(ex.parse("exp(2*x)"), {"x": 0.0}) == 1.0
    assert abs(ex.evaluate(ex.parse("sin(x)^2 + cos(x)^2"), {"x": 0.7}) - 1.0) <= 1e-12
    with pytest.raises(ex.DomainError):
        ex.evaluate(ex.parse("1/x"), {"x": 0.0})


def test_simplify_examples():
    x = ex.var("x")
    assert ex.simplify(ex.raw("mul", ex.ZERO, ex.sin(x))) is ex.ZERO
    assert ex.simplify(ex.raw("pow", x, value=1.0)) is x
    five_x = ex.simplify(ex.raw("mul", ex.raw("add", ex.const(2), ex.const(3)), x))
    assert five_x.kind == "mul" and five_x.args[0].value == 5.0
    assert ex.simplify(ex.raw("sub", x, x)) is ex.ZERO


def test_compiled_matches_evaluate():
    es = [ex.parse("sin(x)*exp(y)"), ex.parse("x^2 + y^-1"), ex.parse("3")]
    f = ex.compile_exprs(es, VARS)
    X = np.array([[0.1, 0.5], [-0.4, 2.0]])
    out = f(X)
    for p, row in zip(X, out):
        for e, v in zip(es, row):
            assert v == pytest.approx(ex.evaluate(e, dict(zip(VARS, p))), rel=1e-14)


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=1000, deadline=None)
@given(exprs(), POINT)
def test_diff_matches_central_difference(e, p):
    h = 1e-5
    pt = dict(zip(VARS, p))
    d = ex.evaluate(ex.diff(e, "x"), pt)
    fd = (ex.evaluate(e, {**pt, "x": p[0] + h}) - ex.evaluate(e, {**pt, "x": p[0] - h})) / (2 * h)
    assert abs(d - fd) <= 1e-6 * (1 + abs(d))


@settings(max_examples=200, deadline=None)
@given(exprs(depth=4))
def test_simplify_preserves_values(e):
    s = ex.simplify(e)
    rng = np.random.default_rng(0)
    for p in rng.uniform(-1, 1, size=(100, 2)):
        pt = dict(zip(VARS, p))
        a, b = ex.evaluate(e, pt), ex.evaluate(s, pt)
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@settings(max_examples=300, deadline=None)
@given(exprs())
def test_print_parse_round_trip(e):
    assert ex.parse(ex.to_string(e), VARS) is e
