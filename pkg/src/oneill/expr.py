"""Scalar expressions over named chart coordinates.

Expressions are hash-consed immutable trees: structurally equal expressions are
the same object, so derivative caches keyed by node identity are exact and a
compiled evaluator sees a DAG with shared subexpressions.

Grammar accepted by :func:`parse`::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := ['-'] atom ['^' exponent]
    exponent := ['-'] number | '(' ['-'] number ')'
    atom   := number | ident | func '(' expr ')' | '(' expr ')'
    func   := sin | cos | tan | exp | log | sqrt
"""

from __future__ import annotations

import math
import re
import threading
from typing import Iterable, Mapping, Sequence

import numpy as np

FUNCS = ("sin", "cos", "tan", "exp", "log", "sqrt")

_intern: dict[tuple, "Expr"] = {}
_lock = threading.Lock()


class ExprError(Exception):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


class UndeclaredVariableError(ExprError):
    def __init__(self, name: str, offset: int | None = None):
        where = f" at offset {offset}" if offset is not None else ""
        super().__init__(f"undeclared variable {name!r}{where}")
        self.name = name
        self.offset = offset


class DomainError(ExprError, ArithmeticError):
    """Raised when an expression is evaluated outside its domain."""

    def __init__(self, message: str, subexpr: "Expr | None" = None):
        if subexpr is not None:
            message = f"{message}: {to_string(subexpr)}"
        super().__init__(message)
        self.subexpr = subexpr


class Expr:
    """Base node. Use the module constructors; never instantiate directly."""

    __slots__ = ("kind", "value", "args", "_hash", "_diff", "_free", "__weakref__")

    def __init__(self, kind: str, value, args: tuple):
        self.kind = kind
        self.value = value
        self.args = args
        self._hash = hash((kind, value, tuple(id(a) for a in args)))
        self._diff: dict[str, Expr] = {}
        self._free: frozenset[str] | None = None

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return self is other

    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    # arithmetic sugar, mostly for tests and model builders
    def __add__(self, o):
        return add(self, as_expr(o))

    def __radd__(self, o):
        return add(as_expr(o), self)

    def __sub__(self, o):
        return sub(self, as_expr(o))

    def __rsub__(self, o):
        return sub(as_expr(o), self)

    def __mul__(self, o):
        return mul(self, as_expr(o))

    def __rmul__(self, o):
        return mul(as_expr(o), self)

    def __truediv__(self, o):
        return div(self, as_expr(o))

    def __rtruediv__(self, o):
        return div(as_expr(o), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, o):
        return power(self, float(o))

    @property
    def is_const(self) -> bool:
        return self.kind == "const"

    def free_vars(self) -> frozenset[str]:
        if self._free is None:
            if self.kind == "var":
                self._free = frozenset((self.value,))
            else:
                acc: frozenset[str] = frozenset()
                for a in self.args:
                    acc = acc | a.free_vars()
                self._free = acc
        return self._free


def _make(kind: str, value, args: tuple = ()) -> Expr:
    key = (kind, value, tuple(id(a) for a in args))
    node = _intern.get(key)
    if node is not None:
        return node
    with _lock:
        node = _intern.get(key)
        if node is None:
            node = Expr(kind, value, args)
            _intern[key] = node
    return node


# ---------------------------------------------------------------------------
# raw constructors (what the parser produces; no rewriting)


def const(c: float) -> Expr:
    c = float(c)
    if not math.isfinite(c):
        raise ExprError(f"non-finite constant {c}")
    if c == 0.0:
        c = 0.0  # fold -0.0
    return _make("const", c)


def var(name: str) -> Expr:
    return _make("var", name)


def raw(kind: str, *args: Expr, value=None) -> Expr:
    return _make(kind, value, tuple(args))


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return const(float(x))
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


ZERO = const(0.0)
ONE = const(1.0)


# ---------------------------------------------------------------------------
# simplifying constructors: constant folding, 0/1 absorption, x - x -> 0


def _cval(e: Expr):
    return e.value if e.kind == "const" else None


def add(a: Expr, b: Expr) -> Expr:
    ca, cb = _cval(a), _cval(b)
    if ca is not None and cb is not None:
        return const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    if b.kind == "neg":
        return sub(a, b.args[0])
    return raw("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    ca, cb = _cval(a), _cval(b)
    if ca is not None and cb is not None:
        return const(ca - cb)
    if a is b:
        return ZERO
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    if b.kind == "neg":
        return add(a, b.args[0])
    return raw("sub", a, b)


def neg(a: Expr) -> Expr:
    ca = _cval(a)
    if ca is not None:
        return const(-ca)
    if a.kind == "neg":
        return a.args[0]
    if a.kind == "sub":
        return raw("sub", a.args[1], a.args[0])
    return raw("neg", a)


def mul(a: Expr, b: Expr) -> Expr:
    ca, cb = _cval(a), _cval(b)
    if ca is not None and cb is not None:
        return const(ca * cb)
    if cb is not None:  # constants first
        a, b, ca, cb = b, a, cb, ca
    if ca is not None:
        if ca == 0.0:
            return ZERO
        if ca == 1.0:
            return b
        if ca == -1.0:
            return neg(b)
        if b.kind == "mul" and b.args[0].kind == "const":
            return mul(const(ca * b.args[0].value), b.args[1])
        if b.kind == "neg":
            return mul(const(-ca), b.args[0])
    if a.kind == "neg" and b.kind == "neg":
        return mul(a.args[0], b.args[0])
    if a.kind == "neg":
        return neg(mul(a.args[0], b))
    if b.kind == "neg":
        return neg(mul(a, b.args[0]))
    return raw("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    ca, cb = _cval(a), _cval(b)
    if cb == 0.0:
        return raw("div", a, b)  # left for evaluation to report
    if ca is not None and cb is not None:
        return const(ca / cb)
    if ca == 0.0:
        return ZERO
    if cb == 1.0:
        return a
    if cb is not None:
        return mul(const(1.0 / cb), a)
    return raw("div", a, b)


def power(a: Expr, p: float) -> Expr:
    p = float(p)
    ca = _cval(a)
    if p == 0.0:
        return ONE
    if p == 1.0:
        return a
    if ca is not None:
        try:
            v = _pow_scalar(ca, p)
        except DomainError:
            return raw("pow", a, value=p)
        return const(v)
    return raw("pow", a, value=p)


def func(name: str, a: Expr) -> Expr:
    if name not in FUNCS:
        raise ExprError(f"unknown function {name!r}")
    ca = _cval(a)
    if ca is not None:
        try:
            return const(_FUNC_SCALAR[name](ca))
        except DomainError:
            return raw(name, a)
    return raw(name, a)


def sin(a):
    return func("sin", as_expr(a))


def cos(a):
    return func("cos", as_expr(a))


def tan(a):
    return func("tan", as_expr(a))


def exp(a):
    return func("exp", as_expr(a))


def log(a):
    return func("log", as_expr(a))


def sqrt(a):
    return func("sqrt", as_expr(a))


def sum_exprs(terms: Iterable[Expr]) -> Expr:
    acc = ZERO
    for t in terms:
        acc = add(acc, t)
    return acc


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), start))
        pos = m.end()
    out.append(("end", "", n))
    return out


class _Parser:
    def __init__(self, text: str, names: set[str] | None):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.names = names

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            what = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {what}", pos, self.text)

    def error(self, msg: str):
        _, _, pos = self.peek()
        raise ParseError(msg, pos, self.text)

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.error("empty expression")
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", pos, self.text)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = raw("add" if op == "+" else "sub", e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.factor()
            e = raw("mul" if op == "*" else "div", e, rhs)
        return e

    def factor(self) -> Expr:
        negate = False
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            negate = True
        e = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            # numeric exponent, optionally signed and parenthesized: x^2, x^-1, x^(-1)
            paren = self.peek()[1] == "("
            if paren:
                self.take()
            sign = 1.0
            if self.peek()[0] == "op" and self.peek()[1] == "-":
                self.take()
                sign = -1.0
            kind, val, pos = self.take()
            if kind != "num":
                raise ParseError("exponent must be a number", pos, self.text)
            if paren:
                self.expect(")")
            e = raw("pow", e, value=sign * float(val))
        if negate and e.kind == "const":
            return const(-e.value)  # "-2" is a literal, so printing round-trips
        return raw("neg", e) if negate else e

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "id":
            if val in FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return raw(val, arg)
            if self.names is not None and val not in self.names:
                raise UndeclaredVariableError(val, pos)
            return var(val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {what}", pos, self.text)


def parse(text: str, vars: Sequence[str] | None = None) -> Expr:
    """Parse ``text`` into an expression over the declared ``vars``.

    ``vars=None`` disables the declaration check.
    """
    names = None if vars is None else set(vars)
    return _Parser(text, names).parse()


# ---------------------------------------------------------------------------
# printing (inverse of parse on parser-produced trees)

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2}


def _num(v: float) -> str:
    s = repr(float(v))
    if s.endswith(".0"):
        s = s[:-2]
    return s


def _atom_str(e: Expr) -> str:
    """Render ``e`` so it parses as a single atom."""
    if e.kind == "const":
        return _num(e.value) if e.value >= 0 else f"({_num(e.value)})"
    if e.kind == "var" or e.kind in FUNCS:
        return to_string(e)
    return f"({to_string(e)})"


def to_string(e: Expr) -> str:
    k = e.kind
    if k == "const":
        return _num(e.value) if e.value >= 0 else f"(-{_num(-e.value)})"
    if k == "var":
        return e.value
    if k in FUNCS:
        return f"{k}({to_string(e.args[0])})"
    if k == "pow":
        p = e.value
        return f"{_atom_str(e.args[0])}^{'-' if p < 0 else ''}{_num(abs(p))}"
    if k == "neg":
        a = e.args[0]
        if a.kind == "pow" or (a.kind == "const" and a.value >= 0):
            return f"-{to_string(a)}"
        return f"-{_atom_str(a)}"
    prec = _PREC[k]
    a, b = e.args
    sa = to_string(a)
    if a.kind in _PREC and _PREC[a.kind] < prec:
        sa = f"({sa})"
    sb = to_string(b)
    # right operand: equal precedence needs parentheses (left-associative)
    if b.kind in _PREC and _PREC[b.kind] <= prec:
        sb = f"({sb})"
    op = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[k]
    return f"{sa} {op} {sb}"


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, v: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to coordinate ``v``."""
    hit = e._diff.get(v)
    if hit is not None:
        return hit
    if v not in e.free_vars():
        d = ZERO
    else:
        d = _diff(e, v)
    with _lock:
        e._diff[v] = d
    return d


def _diff(e: Expr, v: str) -> Expr:
    k = e.kind
    if k == "var":
        return ONE if e.value == v else ZERO
    if k == "add":
        return add(diff(e.args[0], v), diff(e.args[1], v))
    if k == "sub":
        return sub(diff(e.args[0], v), diff(e.args[1], v))
    if k == "neg":
        return neg(diff(e.args[0], v))
    if k == "mul":
        a, b = e.args
        return add(mul(diff(a, v), b), mul(a, diff(b, v)))
    if k == "div":
        a, b = e.args
        da, db = diff(a, v), diff(b, v)
        if db is ZERO:
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, 2.0))
    if k == "pow":
        a = e.args[0]
        p = e.value
        return mul(mul(const(p), power(a, p - 1.0)), diff(a, v))
    a = e.args[0]
    da = diff(a, v)
    if k == "sin":
        outer = cos(a)
    elif k == "cos":
        outer = neg(sin(a))
    elif k == "tan":
        outer = add(ONE, power(e, 2.0))
    elif k == "exp":
        outer = e
    elif k == "log":
        return div(da, a)
    elif k == "sqrt":
        return div(da, mul(const(2.0), e))
    else:  # pragma: no cover
        raise ExprError(f"cannot differentiate node {k}")
    return mul(outer, da)


def diff_multi(e: Expr, vs: Iterable[str]) -> Expr:
    for v in vs:
        e = diff(e, v)
    return e


# ---------------------------------------------------------------------------
# rewriting


def simplify(e: Expr) -> Expr:
    """Rebuild ``e`` bottom-up through the simplifying constructors."""
    memo: dict[int, Expr] = {}

    def go(n: Expr) -> Expr:
        hit = memo.get(id(n))
        if hit is not None:
            return hit
        r = _rebuild(n, [go(a) for a in n.args])
        memo[id(n)] = r
        return r

    return go(e)


def _rebuild(n: Expr, args: list[Expr]) -> Expr:
    k = n.kind
    if k in ("const", "var"):
        return n
    if k == "add":
        return add(*args)
    if k == "sub":
        return sub(*args)
    if k == "neg":
        return neg(args[0])
    if k == "mul":
        return mul(*args)
    if k == "div":
        return div(*args)
    if k == "pow":
        return power(args[0], n.value)
    return func(k, args[0])


def substitute(e: Expr, bindings: Mapping[str, Expr | float]) -> Expr:
    """Simultaneous substitution of variables by expressions."""
    if not bindings:
        return e
    bind = {k: as_expr(v) for k, v in bindings.items()}
    memo: dict[int, Expr] = {}

    def go(n: Expr) -> Expr:
        hit = memo.get(id(n))
        if hit is not None:
            return hit
        if n.kind == "var":
            r = bind.get(n.value, n)
        elif not (n.free_vars() & bind.keys()):
            r = n
        else:
            r = _rebuild_raw(n, [go(a) for a in n.args])
        memo[id(n)] = r
        return r

    return go(e)


def _rebuild_raw(n: Expr, args: list[Expr]) -> Expr:
    if n.kind == "pow":
        return raw("pow", args[0], value=n.value)
    return raw(n.kind, *args)


# ---------------------------------------------------------------------------
# scalar evaluation


def _pow_scalar(b: float, p: float) -> float:
    if b == 0.0 and p < 0:
        raise DomainError("zero to a negative power")
    if b < 0 and not float(p).is_integer():
        raise DomainError("negative base with fractional exponent")
    return float(b) ** p


def _log(x: float) -> float:
    if x <= 0:
        raise DomainError("log of non-positive value")
    return math.log(x)


def _sqrt(x: float) -> float:
    if x < 0:
        raise DomainError("sqrt of negative value")
    return math.sqrt(x)


def _tan(x: float) -> float:
    if abs(math.cos(x)) < 1e-300:
        raise DomainError("tan at a pole")
    return math.tan(x)


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        raise DomainError("exp overflow") from None


_FUNC_SCALAR = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": _tan,
    "exp": _exp,
    "log": _log,
    "sqrt": _sqrt,
}


def evaluate(e: Expr, point: Mapping[str, float]) -> float:
    """Evaluate at a point; raises :class:`DomainError` naming the failing node."""
    memo: dict[int, float] = {}

    def go(n: Expr) -> float:
        hit = memo.get(id(n))
        if hit is not None:
            return hit
        k = n.kind
        if k == "const":
            r = n.value
        elif k == "var":
            try:
                r = float(point[n.value])
            except KeyError:
                raise ExprError(f"no value bound for {n.value!r}") from None
        elif k == "add":
            r = go(n.args[0]) + go(n.args[1])
        elif k == "sub":
            r = go(n.args[0]) - go(n.args[1])
        elif k == "neg":
            r = -go(n.args[0])
        elif k == "mul":
            r = go(n.args[0]) * go(n.args[1])
        elif k == "div":
            den = go(n.args[1])
            if den == 0.0:
                raise DomainError("division by zero", n)
            r = go(n.args[0]) / den
        else:
            x = go(n.args[0])
            try:
                r = _pow_scalar(x, n.value) if k == "pow" else _FUNC_SCALAR[k](x)
            except DomainError as err:
                raise DomainError(str(err), n) from None
            except OverflowError:
                raise DomainError("overflow", n) from None
        if not math.isfinite(r):
            raise DomainError("non-finite value", n)
        memo[id(n)] = r
        return r

    return go(e)


# ---------------------------------------------------------------------------
# vectorized evaluation

_NP_FUNCS = {
    "sin": "np.sin",
    "cos": "np.cos",
    "tan": "np.tan",
    "exp": "np.exp",
    "log": "np.log",
    "sqrt": "np.sqrt",
}


class Compiled:
    """A batch of expressions compiled into one numpy function.

    Calling with an array of points of shape ``(P, len(coords))`` returns an
    array of shape ``(P, len(exprs))``. Common subexpressions are evaluated once.
    """

    def __init__(self, exprs: Sequence[Expr], coords: Sequence[str]):
        self.exprs = list(exprs)
        self.coords = list(coords)
        index = {c: i for i, c in enumerate(self.coords)}
        for e in self.exprs:
            missing = e.free_vars() - index.keys()
            if missing:
                raise UndeclaredVariableError(sorted(missing)[0])
        names: dict[int, str] = {}
        lines: list[str] = []

        def ref(n: Expr) -> str:
            if n.kind == "const":
                return repr(n.value)
            return names[id(n)]

        for n in _topo(self.exprs):
            k = n.kind
            if k == "const":
                continue
            if k == "var":
                src = f"X[:, {index[n.value]}]"
            elif k in ("add", "sub", "mul", "div"):
                op = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[k]
                src = f"({ref(n.args[0])} {op} {ref(n.args[1])})"
            elif k == "neg":
                src = f"(-{ref(n.args[0])})"
            elif k == "pow":
                p = n.value
                ptxt = str(int(p)) if p.is_integer() and p > 0 else repr(p)
                src = f"({ref(n.args[0])} ** {ptxt})"
            else:
                src = f"{_NP_FUNCS[k]}({ref(n.args[0])})"
            name = f"t{len(names)}"
            names[id(n)] = name
            lines.append(f"    {name} = {src}")
        outs = ", ".join(f"{ref(e)} + Z" for e in self.exprs)
        body = "\n".join(lines)
        src = (
            "def _f(X):\n"
            "    Z = np.zeros(X.shape[0])\n"
            f"{body}\n"
            f"    return np.stack([{outs}], axis=1)\n"
        )
        ns = {"np": np}
        exec(compile(src, "<oneill.expr.Compiled>", "exec"), ns)
        self._fn = ns["_f"]

    def __call__(self, points) -> np.ndarray:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.exprs:
            return np.zeros((X.shape[0], 0))
        with np.errstate(all="ignore"):
            out = self._fn(X)
        bad = ~np.isfinite(out)
        if bad.any():
            p, j = map(int, np.argwhere(bad)[0])
            self._raise_domain(self.exprs[j], X[p], p)
        return out

    def finite_mask(self, points) -> np.ndarray:
        """Per-point flag: True where every expression evaluates finitely."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.exprs:
            return np.ones(X.shape[0], dtype=bool)
        with np.errstate(all="ignore"):
            out = self._fn(X)
        return np.isfinite(out).all(axis=1)

    def _raise_domain(self, e: Expr, x: np.ndarray, index: int):
        point = dict(zip(self.coords, map(float, x)))
        try:
            evaluate(e, point)
        except DomainError as err:
            err.point = point
            err.point_index = index
            raise
        err = DomainError("non-finite value", e)
        err.point = point
        err.point_index = index
        raise err


def _topo(exprs: Sequence[Expr]) -> list[Expr]:
    seen: set[int] = set()
    order: list[Expr] = []
    for root in exprs:
        stack = [(root, False)]
        while stack:
            n, done = stack.pop()
            if done:
                order.append(n)
                continue
            if id(n) in seen:
                continue
            seen.add(id(n))
            stack.append((n, True))
            for a in reversed(n.args):
                if id(a) not in seen:
                    stack.append((a, False))
    return order


def compile_exprs(exprs: Sequence[Expr], coords: Sequence[str]) -> Compiled:
    return Compiled(exprs, coords)


def node_count(e: Expr) -> int:
    return len(_topo([e]))
