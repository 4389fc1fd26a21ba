"""Scenario files: JSON with a shipped schema, turned into submersion objects."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import expr as ex
from . import models
from .config import DEFAULT, Tolerances
from .geometry import Chart, GeometryError, MetricField
from .submersion import FiberMetric, SubmersionSpec


class ScenarioError(ValueError):
    """Invalid scenario input; carries a location string for diagnostics."""

    def __init__(self, message: str, where: str = "", line: int | None = None):
        loc = where + (f" (line {line})" if line else "")
        super().__init__(f"{loc}: {message}" if loc else message)
        self.where = where
        self.line = line


def load_schema() -> dict:
    text = resources.files("oneill").joinpath("data/scenario.schema.json").read_text()
    return json.loads(text)


_VALIDATOR = None


def _validator():
    global _VALIDATOR
    if _VALIDATOR is None:
        schema = load_schema()
        cls = jsonschema.validators.validator_for(schema)
        _VALIDATOR = cls(schema)
    return _VALIDATOR


def _line_of(text: str, value: Any) -> int | None:
    if not isinstance(value, str) or not text:
        return None
    needle = json.dumps(value)
    pos = text.find(needle)
    return None if pos < 0 else text.count("\n", 0, pos) + 1


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


@dataclass
class Scenario:
    data: dict
    source: str = ""
    text: str = ""
    spec: SubmersionSpec | None = None
    kind: str = ""
    model_data: Any = None  # WarpedProductSpec / KillingOrbitSpec when applicable
    fiber_chart: Chart | None = None
    killing: tuple | None = None
    tolerances: Tolerances = DEFAULT
    box: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.data.get("name", self.kind)

    @property
    def samples(self) -> int:
        return int(self.data.get("samples", 32))

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    @property
    def max_order(self) -> int:
        return int(self.data.get("max_order", 3))

    @property
    def trials(self) -> int:
        return int(self.data.get("trials", 10))

    def box_array(self) -> np.ndarray:
        """Sampling box; coordinates not listed use the (cut) chart domain."""
        chart = self.spec.chart
        b = models.default_box(chart)
        for k, iv in self.box.items():
            b[chart.names.index(k)] = iv
        return b


def parse_expr(text: str, names, where: str, src: str = "") -> ex.Expr:
    try:
        return ex.parse(text, names)
    except ex.ParseError as e:
        raise ScenarioError(f"{e} in {text!r}", where, _line_of(src, text)) from None
    except ex.UndeclaredVariableError as e:
        raise ScenarioError(f"{e} in {text!r}", where, _line_of(src, text)) from None


def _components(d: dict, names, where: str, src: str) -> np.ndarray:
    """Metric matrix from ``metric`` or ``diag`` (Euclidean if neither)."""
    n = len(d["coords"])
    if "metric" in d and "diag" in d:
        raise ScenarioError("give either 'metric' or 'diag', not both", where)
    if "metric" in d:
        rows = d["metric"]
        if len(rows) != n or any(len(r) != n for r in rows):
            raise ScenarioError(f"metric must be {n}x{n}", where + "/metric")
        comps = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                comps[i, j] = parse_expr(rows[i][j], names, f"{where}/metric/{i}/{j}", src)
        return comps
    diag = d.get("diag", ["1"] * n)
    if len(diag) != n:
        raise ScenarioError(f"diag needs {n} entries", where + "/diag")
    comps = np.full((n, n), ex.ZERO, dtype=object)
    for i in range(n):
        comps[i, i] = parse_expr(diag[i], names, f"{where}/diag/{i}", src)
    return comps


def _metric(d: dict | None, default_coords, where: str, src: str) -> MetricField:
    if d is None:
        return models.euclidean(default_coords)
    names = tuple(d["coords"])
    try:
        chart = Chart(names, {k: tuple(v) for k, v in d.get("domain", {}).items()})
        return MetricField(chart, _components(d, names, where, src))
    except GeometryError as e:
        raise ScenarioError(str(e), where) from None


_PRESETS = {
    "RxR": lambda: (models.euclidean(["x"]), models.euclidean(["y"])),
    "RxS1": lambda: (models.euclidean(["x"]), models.circle("theta")),
    "RxS2": lambda: (models.euclidean(["x"]), models.round_sphere2(("th", "ph"))),
}


def _build(sc: Scenario) -> None:
    model = sc.data["model"]
    src = sc.text
    try:
        if "explicit" in model:
            _build_explicit(sc, model["explicit"])
            return
        kind = model["builtin"]
        p = model.get("params", {})
        sc.kind = kind
        if kind == "product":
            if "preset" in p:
                base, fiber = _PRESETS[p["preset"]]()
            else:
                base = _metric(p.get("base"), ["x"], "/model/params/base", src)
                fiber = _metric(p.get("fiber"), ["y"], "/model/params/fiber", src)
            sc.spec = models.build_product(base, fiber)
            sc.fiber_chart = fiber.chart
        elif kind == "warped":
            base = _metric(p.get("base"), ["x"], "/model/params/base", src)
            fiber = _metric(p.get("fiber"), ["y"], "/model/params/fiber", src)
            f = parse_expr(p["f"], base.chart.names, "/model/params/f", src)
            w = models.WarpedProductSpec(base, fiber, f)
            sc.spec = models.build_warped(w)
            sc.model_data = w
            sc.fiber_chart = fiber.chart
        elif kind == "hopf":
            sc.spec = models.build_hopf()
            sc.killing = models.hopf_killing_field()
        elif kind == "killing":
            base = _metric(p.get("base"), ["x", "y"], "/model/params/base", src)
            phi = parse_expr(p["phi"], base.chart.names, "/model/params/phi", src)
            alpha = tuple(
                parse_expr(a, base.chart.names, f"/model/params/alpha/{i}", src)
                for i, a in enumerate(p["alpha"])
            )
            fd = p.get("fiber_domain")
            k = models.KillingOrbitSpec(
                base, phi, alpha, p.get("fiber_coord", "t"), tuple(fd) if fd else None
            )
            sc.spec, sc.killing = models.build_killing_total(k)
            sc.model_data = k
        sc.spec.name = sc.data.get("name", kind)
    except models.ModelError as e:
        raise ScenarioError(str(e), "/model") from None


def _build_explicit(sc: Scenario, d: dict) -> None:
    src = sc.text
    sc.kind = "explicit"
    total = _metric(d["total"], None, "/model/explicit/total", src)
    base = _metric(d["base"], None, "/model/explicit/base", src)
    names = total.chart.names
    pi = tuple(parse_expr(e, names, f"/model/explicit/map/{i}", src) for i, e in enumerate(d["map"]))
    fiber = None
    if "fiber" in d:
        fd = d["fiber"]
        bad = set(fd["coords"]) - set(names)
        if bad:
            raise ScenarioError(
                f"fiber coordinates {sorted(bad)} are not total coordinates", "/model/explicit/fiber"
            )
        # the fiber metric may depend on the remaining total coordinates
        fiber = FiberMetric(tuple(fd["coords"]), _components(fd, names, "/model/explicit/fiber", src))
    try:
        sc.spec = SubmersionSpec(
            total, base, pi, total.dim - base.dim, name=sc.data.get("name", "explicit"), fiber=fiber
        )
    except (GeometryError, ex.ExprError) as e:
        raise ScenarioError(str(e), "/model/explicit") from None
    if "killing" in d:
        sc.killing = tuple(
            parse_expr(e, names, f"/model/explicit/killing/{i}", src) for i, e in enumerate(d["killing"])
        )


def _check_box(sc: Scenario) -> None:
    chart = sc.spec.chart
    dom = chart.bounds()
    for k, (lo, hi) in sc.box.items():
        if k not in chart.names:
            raise ScenarioError(f"unknown coordinate {k!r}", "/box")
        if not lo < hi:
            raise ScenarioError(f"empty interval for {k!r}", "/box")
        dlo, dhi = dom[chart.names.index(k)]
        if lo < dlo or hi > dhi:
            raise ScenarioError(f"interval for {k!r} leaves the chart domain ({dlo}, {dhi})", "/box")


def from_dict(data: dict, text: str = "", source: str = "<dict>") -> Scenario:
    errors = sorted(_validator().iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        line = _line_of(text, e.instance) if isinstance(e.instance, str) else None
        raise ScenarioError(e.message, _pointer(e.absolute_path), line)
    sc = Scenario(data=data, source=source, text=text)
    try:
        sc.tolerances = DEFAULT.updated(data.get("tolerances"))
    except KeyError as e:
        raise ScenarioError(str(e), "/tolerances") from None
    sc.box = {k: tuple(float(x) for x in v) for k, v in data.get("box", {}).items()}
    _build(sc)
    _check_box(sc)
    return sc


def load(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario: {e.strerror}", str(path)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON: {e.msg}", str(path), e.lineno) from None
    if not isinstance(data, dict):
        raise ScenarioError("top level must be an object", str(path))
    return from_dict(data, text, str(path))


@dataclass
class Candidates:
    Phi: list[ex.Expr] | None
    psi: list[ex.Expr] | None
    c: float | None
    fiber_map: list[ex.Expr] | None
    raw: dict


def load_candidates(path: str | Path, a: Scenario) -> Candidates:
    path = Path(path)
    try:
        text = path.read_text()
        data = json.loads(text)
    except OSError as e:
        raise ScenarioError(f"cannot read candidates: {e.strerror}", str(path)) from None
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON: {e.msg}", str(path), e.lineno) from None
    return candidates_from_dict(data, a, text)


def candidates_from_dict(data: dict, a: Scenario, text: str = "") -> Candidates:
    schema = load_schema()
    sub = {"$defs": schema["$defs"], **schema["$defs"]["candidates"]}
    errs = list(jsonschema.validators.validator_for(schema)(sub).iter_errors(data))
    if errs:
        raise ScenarioError(errs[0].message, "candidates" + _pointer(errs[0].absolute_path))
    spec = a.spec

    def exprs(key, names):
        if key not in data:
            return None
        return [parse_expr(s, names, f"candidates/{key}/{i}", text) for i, s in enumerate(data[key])]

    fib_names = a.fiber_chart.names if a.fiber_chart is not None else ()
    c = data.get("c")
    if c is not None and not (isinstance(c, (int, float)) and math.isfinite(c)):
        raise ScenarioError("c must be a finite number", "candidates/c")
    return Candidates(
        exprs("Phi", spec.chart.names),
        exprs("psi", spec.base.chart.names),
        None if c is None else float(c),
        exprs("fiber_map", fib_names),
        data,
    )
