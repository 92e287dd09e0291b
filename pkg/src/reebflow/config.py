"""TOML run configuration: schema, total validation, metric construction.

A config file drives one batch run.  Every key is checked against the schema
below; unknown keys are rejected with their line and column, wrong types and
out-of-range values raise ValidationError with the offending table.key named.
Coefficient entries may be arithmetic expressions in the chart coordinates
(compiled by expressions.compile_expression, so no arbitrary code).

    [metric]
    family  = "flat" | "riemannian_torus" | "conformal_torus" |
              "randers_torus" | "sphere" | "cosh_waist" | "rotating_sphere"
    periods = [1.0, 1.0]            # torus families
    G       = [[...], [...]]        # riemannian_torus (floats or expressions)
    exponent = "0.1*cos(2*pi*q1)"   # conformal_torus
    base    = [[...], [...]]        # conformal_torus, optional constant base
    h       = [[...], [...]]        # randers_torus
    b       = [0.3, 0.1]            # randers_torus
    rho     = 0.3                   # rotating_sphere, |rho| < 1
    half_width = 1.5                # cosh_waist profile
    name    = "custom"              # optional label

    [run]      command, seed, threads, tol, out_dir, svg
    [flow]     tmax, q0, v0
    [orbits]   max_class, orbit, q0, v0, period
    [perturb]  orbit, window, radius, amplitude, profile, budget, margin
    [equidist] k_stages, target_n, target_tol
    [lemma31]  instances
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:   # python < 3.11
    import tomli as _toml

from .charts import cosh_profile, sphere_profile
from .errors import ParseError, ValidationError
from .expressions import compile_expression
from .metrics import (FinslerMetric, MatrixField, VectorField2,
                      conformal_torus, randers_torus, revolution_metric,
                      riemannian_torus, rotating_sphere_metric)

COMMANDS = ("verify", "flow", "orbits", "classify", "perturb", "equidist",
            "check-lemma31", "report")

FAMILIES = ("flat", "riemannian_torus", "conformal_torus", "randers_torus",
            "sphere", "cosh_waist", "rotating_sphere")


# ---------------------------------------------------------------------------
# config dataclasses (defaults are the effective values when a key is absent)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricConfig:
    family: str = "flat"
    periods: tuple[float, float] = (1.0, 1.0)
    G: tuple | None = None
    exponent: str | float | None = None
    base: tuple | None = None
    h: tuple | None = None
    b: tuple | None = None
    rho: float | None = None
    half_width: float = 1.5
    name: str | None = None


@dataclass(frozen=True)
class FlowConfig:
    tmax: float = 10.0
    q0: tuple[float, float] = (0.1, 0.2)
    v0: tuple[float, float] = (1.0, 0.5)


@dataclass(frozen=True)
class OrbitsConfig:
    max_class: int = 2
    orbit: str | None = None
    q0: tuple[float, float] | None = None
    v0: tuple[float, float] | None = None
    period: float | None = None


@dataclass(frozen=True)
class PerturbConfig:
    orbit: str | None = None
    window: tuple[float, float] = (0.5, 0.1)
    radius: float = 0.15
    amplitude: float = 0.05
    profile: str = "orbit_fixing"
    budget: float = 0.1
    margin: float = 1e-4


@dataclass(frozen=True)
class EquidistConfig:
    k_stages: tuple[int, ...] = (2, 4, 8)
    target_n: tuple[int, int] = (128, 128)
    target_tol: float = 1e-9


@dataclass(frozen=True)
class LemmaConfig:
    instances: int = 20


@dataclass(frozen=True)
class RunConfig:
    command: str = "verify"
    seed: int = 0
    threads: int = 1
    tol: float = 1e-10
    out_dir: str = "artifacts"
    svg: bool = False
    metric: MetricConfig = field(default_factory=MetricConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    orbits: OrbitsConfig = field(default_factory=OrbitsConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    equidist: EquidistConfig = field(default_factory=EquidistConfig)
    lemma31: LemmaConfig = field(default_factory=LemmaConfig)

    def config_hash(self) -> str:
        """sha256 over the canonical field dump (17 significant digits)."""
        return hashlib.sha256(_canonical(self).encode()).hexdigest()


def _canonical(obj) -> str:
    if isinstance(obj, float):
        return format(obj, ".17g")
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canonical(x) for x in obj) + "]"
    if hasattr(obj, "__dataclass_fields__"):
        parts = [f"{f.name}={_canonical(getattr(obj, f.name))}"
                 for f in fields(obj)]
        return type(obj).__name__ + "(" + ",".join(parts) + ")"
    return repr(obj)


# ---------------------------------------------------------------------------
# schema-driven validation
# ---------------------------------------------------------------------------

_SCHEMA: dict[str, set[str]] = {
    "metric": {"family", "periods", "G", "exponent", "base", "h", "b", "rho",
               "half_width", "name"},
    "run": {"command", "seed", "threads", "tol", "out_dir", "svg"},
    "flow": {"tmax", "q0", "v0"},
    "orbits": {"max_class", "orbit", "q0", "v0", "period"},
    "perturb": {"orbit", "window", "radius", "amplitude", "profile", "budget",
                "margin"},
    "equidist": {"k_stages", "target_n", "target_tol"},
    "lemma31": {"instances"},
}


def _key_position(source: str, key: str) -> str:
    """Best-effort 'line L, column C' of a bare key in the TOML source."""
    pat = re.compile(rf"^[ \t]*(\[?)[ \t]*{re.escape(key)}[ \t]*[=\].]", re.M)
    hit = pat.search(source)
    if hit is None:
        hit = re.search(re.escape(key), source)
    if hit is None:
        return "position unknown"
    line = source.count("\n", 0, hit.start()) + 1
    col = hit.start() - (source.rfind("\n", 0, hit.start()) + 1) + 1
    return f"line {line}, column {col}"


def _reject_unknown(data: dict, source: str) -> None:
    for table, content in data.items():
        if table not in _SCHEMA:
            raise ValidationError(
                f"unknown table [{table}] at {_key_position(source, table)}")
        if not isinstance(content, dict):
            raise ValidationError(
                f"[{table}] must be a table, got {type(content).__name__} "
                f"at {_key_position(source, table)}")
        for key in content:
            if key not in _SCHEMA[table]:
                raise ValidationError(
                    f"unknown key {table}.{key} at {_key_position(source, key)}")


def _want(cond: bool, what: str, value) -> None:
    if not cond:
        raise ValidationError(f"{what}: invalid value {value!r}")


def _as_float(what, v, positive=False) -> float:
    _want(isinstance(v, (int, float)) and not isinstance(v, bool), what, v)
    v = float(v)
    _want(math.isfinite(v) and (v > 0 or not positive), what, v)
    return v


def _as_int(what, v, minimum=None) -> int:
    _want(isinstance(v, int) and not isinstance(v, bool), what, v)
    if minimum is not None:
        _want(v >= minimum, what, v)
    return v


def _as_pair(what, v, positive=False) -> tuple[float, float]:
    _want(isinstance(v, list) and len(v) == 2, what, v)
    return (_as_float(what, v[0], positive), _as_float(what, v[1], positive))


def _as_entry(what, v) -> float | str:
    """Matrix/form entry: a number, or an expression string (checked later)."""
    if isinstance(v, str):
        return v
    return _as_float(what, v)


def _as_matrix(what, v) -> tuple[tuple, tuple]:
    _want(isinstance(v, list) and len(v) == 2
          and all(isinstance(r, list) and len(r) == 2 for r in v), what, v)
    M = tuple(tuple(_as_entry(what, x) for x in row) for row in v)
    _want(M[0][1] == M[1][0], f"{what} (must be symmetric)", v)
    return M


def _validate_metric(t: dict) -> MetricConfig:
    fam = t.get("family", "flat")
    _want(fam in FAMILIES, "metric.family", fam)
    mc = MetricConfig(
        family=fam,
        periods=_as_pair("metric.periods", t.get("periods", [1.0, 1.0]),
                         positive=True),
        G=_as_matrix("metric.G", t["G"]) if "G" in t else None,
        exponent=t.get("exponent"),
        base=_as_matrix("metric.base", t["base"]) if "base" in t else None,
        h=_as_matrix("metric.h", t["h"]) if "h" in t else None,
        b=tuple(_as_entry("metric.b", x) for x in t["b"]) if "b" in t else None,
        rho=_as_float("metric.rho", t["rho"]) if "rho" in t else None,
        half_width=_as_float("metric.half_width", t.get("half_width", 1.5),
                             positive=True),
        name=t.get("name"),
    )
    if mc.exponent is not None:
        _want(isinstance(mc.exponent, (str, int, float)), "metric.exponent",
              mc.exponent)
    if mc.name is not None:
        _want(isinstance(mc.name, str), "metric.name", mc.name)
    if mc.b is not None:
        _want(len(mc.b) == 2, "metric.b", t["b"])

    if fam == "riemannian_torus":
        _want(mc.G is not None, "metric.G (required for riemannian_torus)", None)
    if fam == "conformal_torus":
        _want(mc.exponent is not None,
              "metric.exponent (required for conformal_torus)", None)
    if fam == "randers_torus":
        _want(mc.h is not None and mc.b is not None,
              "metric.h and metric.b (required for randers_torus)", None)
        if all(isinstance(x, float) for row in mc.h for x in row) \
                and all(isinstance(x, float) for x in mc.b):
            h = np.array(mc.h)
            b = np.array(mc.b)
            try:
                norm = math.sqrt(float(b @ np.linalg.solve(h, b)))
            except np.linalg.LinAlgError:
                raise ValidationError(f"metric.h: singular matrix {mc.h!r}")
            if norm >= 1.0:
                raise ValidationError(
                    f"metric.b: drift norm {norm:.6g} >= 1 breaks convexity")
    if fam == "rotating_sphere":
        _want(mc.rho is not None, "metric.rho (required for rotating_sphere)",
              None)
        if not (0.0 <= mc.rho < 1.0):
            raise ValidationError(
                f"metric.rho: {mc.rho!r} outside [0, 1) breaks the Randers "
                f"drift bound")
    return mc


def parse_config(path: str | Path) -> RunConfig:
    """Read and totally validate a TOML run configuration."""
    path = Path(path)
    try:
        source = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    return parse_config_string(source)


def parse_config_string(source: str) -> RunConfig:
    try:
        data = _toml.loads(source)
    except _toml.TOMLDecodeError as exc:
        raise ParseError(f"TOML syntax: {exc}") from None
    _reject_unknown(data, source)

    run = data.get("run", {})
    command = run.get("command", "verify")
    _want(command in COMMANDS, "run.command", command)
    out_dir = run.get("out_dir", "artifacts")
    _want(isinstance(out_dir, str), "run.out_dir", out_dir)
    svg = run.get("svg", False)
    _want(isinstance(svg, bool), "run.svg", svg)

    flow_t = data.get("flow", {})
    orb_t = data.get("orbits", {})
    pert_t = data.get("perturb", {})
    eq_t = data.get("equidist", {})
    lem_t = data.get("lemma31", {})

    stages = eq_t.get("k_stages", [2, 4, 8])
    _want(isinstance(stages, list) and len(stages) >= 1
          and all(isinstance(k, int) and k >= 1 for k in stages)
          and list(stages) == sorted(set(stages)),
          "equidist.k_stages", stages)
    tn = eq_t.get("target_n", [128, 128])
    _want(isinstance(tn, list) and len(tn) == 2
          and all(isinstance(x, int) and x >= 8 for x in tn),
          "equidist.target_n", tn)

    profile = pert_t.get("profile", "orbit_fixing")
    _want(profile in ("orbit_fixing", "negative_control"),
          "perturb.profile", profile)

    orbit = orb_t.get("orbit")
    if orbit is not None:
        _want(isinstance(orbit, str), "orbits.orbit", orbit)
    porbit = pert_t.get("orbit")
    if porbit is not None:
        _want(isinstance(porbit, str), "perturb.orbit", porbit)

    return RunConfig(
        command=command,
        seed=_as_int("run.seed", run.get("seed", 0), minimum=0),
        threads=_as_int("run.threads", run.get("threads", 1), minimum=1),
        tol=_as_float("run.tol", run.get("tol", 1e-10), positive=True),
        out_dir=out_dir,
        svg=svg,
        metric=_validate_metric(data.get("metric", {})),
        flow=FlowConfig(
            tmax=_as_float("flow.tmax", flow_t.get("tmax", 10.0), positive=True),
            q0=_as_pair("flow.q0", flow_t.get("q0", [0.1, 0.2])),
            v0=_as_pair("flow.v0", flow_t.get("v0", [1.0, 0.5])),
        ),
        orbits=OrbitsConfig(
            max_class=_as_int("orbits.max_class", orb_t.get("max_class", 2),
                              minimum=1),
            orbit=orbit,
            q0=_as_pair("orbits.q0", orb_t["q0"]) if "q0" in orb_t else None,
            v0=_as_pair("orbits.v0", orb_t["v0"]) if "v0" in orb_t else None,
            period=_as_float("orbits.period", orb_t["period"], positive=True)
            if "period" in orb_t else None,
        ),
        perturb=PerturbConfig(
            orbit=porbit,
            window=_as_pair("perturb.window", pert_t.get("window", [0.5, 0.1]),
                            positive=True),
            radius=_as_float("perturb.radius", pert_t.get("radius", 0.15),
                             positive=True),
            amplitude=_as_float("perturb.amplitude",
                                pert_t.get("amplitude", 0.05)),
            profile=profile,
            budget=_as_float("perturb.budget", pert_t.get("budget", 0.1),
                             positive=True),
            margin=_as_float("perturb.margin", pert_t.get("margin", 1e-4),
                             positive=True),
        ),
        equidist=EquidistConfig(
            k_stages=tuple(stages),
            target_n=(tn[0], tn[1]),
            target_tol=_as_float("equidist.target_tol",
                                 eq_t.get("target_tol", 1e-9), positive=True),
        ),
        lemma31=LemmaConfig(
            instances=_as_int("lemma31.instances", lem_t.get("instances", 20),
                              minimum=1),
        ),
    )


# ---------------------------------------------------------------------------
# metric construction
# ---------------------------------------------------------------------------

def _field_matrix(M: tuple[tuple, tuple], variables: tuple[str, str],
                  tag: str) -> MatrixField:
    if all(isinstance(x, float) for row in M for x in row):
        from .metrics import constant_matrix
        return constant_matrix(M)
    entries = [[compile_expression(x, variables) for x in row] for row in M]

    def value(q):
        return np.array([[entries[0][0](*q), entries[0][1](*q)],
                         [entries[1][0](*q), entries[1][1](*q)]])

    return MatrixField(value, tag=f"{tag}:{M!r}")


def _field_form(b: tuple, variables: tuple[str, str], tag: str) -> VectorField2:
    if all(isinstance(x, float) for x in b):
        from .metrics import constant_form
        return constant_form(b)
    entries = [compile_expression(x, variables) for x in b]

    def value(q):
        return np.array([entries[0](*q), entries[1](*q)])

    return VectorField2(value, tag=f"{tag}:{b!r}")


def build_metric(mc: MetricConfig) -> FinslerMetric:
    """Instantiate the configured metric family."""
    if mc.family == "flat":
        return riemannian_torus([[1.0, 0.0], [0.0, 1.0]], mc.periods,
                                mc.name or "flat")
    if mc.family == "riemannian_torus":
        G = _field_matrix(mc.G, ("q1", "q2"), "config_G")
        return riemannian_torus(G, mc.periods, mc.name or "riemannian_torus")
    if mc.family == "conformal_torus":
        expo = compile_expression(mc.exponent, ("q1", "q2"))
        base = None if mc.base is None else \
            tuple(tuple(float(x) for x in row) for row in mc.base)
        return conformal_torus(lambda q: expo(*q), base, mc.periods,
                               mc.name or "conformal_torus")
    if mc.family == "randers_torus":
        h = _field_matrix(mc.h, ("q1", "q2"), "config_h")
        b = _field_form(mc.b, ("q1", "q2"), "config_b")
        return randers_torus(h, b, mc.periods, mc.name or "randers_torus")
    if mc.family == "sphere":
        return revolution_metric(sphere_profile(), mc.name)
    if mc.family == "cosh_waist":
        return revolution_metric(cosh_profile(mc.half_width), mc.name)
    if mc.family == "rotating_sphere":
        return rotating_sphere_metric(mc.rho)
    raise ValidationError(f"metric.family: unhandled family {mc.family!r}")
