"""Experiment configuration: a YAML/JSON document, its schema, and named presets."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Any, Optional

import jsonschema
import yaml

from .model import (
    CoefficientField,
    LevyMeasure,
    MisspecifiedModel,
    Payoff,
    RateCurve,
    SamplingGrid,
    TrueModel,
)
from .pide import SpaceGrid
from .poisson import PoissonModel
from .robust import solve_measure
from .sim import MeasureChange, TimeGrid

__all__ = ["SCHEMA", "PRESETS", "ConfigError", "load_config", "validate_config", "Experiment",
           "build_experiment", "build_coefficient", "solve_measure"]

SCHEMA_VERSION = "1"

_num = {"type": "number"}
_coef = {
    "oneOf": [
        _num,
        {
            "type": "object",
            "required": ["builtin"],
            "properties": {
                "builtin": {"enum": ["constant", "affine", "rho_affine", "example", "saturating",
                                     "piecewise_in_time"]},
                "value": {"oneOf": [_num, {"type": "object", "additionalProperties": _num}]},
                "a": _num, "b": _num, "c": _num, "c0": _num, "c1": _num,
                "values": {"type": "array", "items": _num, "minItems": 1},
                "breakpoints": {"type": "array", "items": _num},
            },
            "additionalProperties": False,
        },
    ]
}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "jumphedge experiment",
    "type": "object",
    "required": ["experiment", "seed"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": ["validate", "price", "hedge", "robust", "poisson", "acceptance-suite"]},
        "seed": {"type": "integer", "minimum": 0, "maximum": 18446744073709551615},
        "n_paths": {"type": "integer", "minimum": 2},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "x0": {"type": "number", "exclusiveMinimum": 0},
        "rate": {
            "oneOf": [
                _num,
                {"type": "object", "required": ["values"],
                 "properties": {"values": {"type": "array", "items": _num, "minItems": 1},
                                "breakpoints": {"type": "array", "items": _num}},
                 "additionalProperties": False},
            ]
        },
        "levy": {"type": "array",
                 "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
        "true_model": {"type": "object",
                       "properties": {"sigma": _coef, "eta": _coef},
                       "additionalProperties": False},
        "model": {"type": "object",
                  "properties": {"gamma": _coef, "gamma_tilde": _coef,
                                 "epsilon_floor": {"type": "number", "exclusiveMinimum": 0}},
                  "additionalProperties": False},
        "payoff": {"type": "object", "required": ["kind"],
                   "properties": {"kind": {"enum": ["call", "put", "straddle", "linear",
                                                    "piecewise-linear"]},
                                  "strike": {"type": "number", "exclusiveMinimum": 0},
                                  "slope": _num, "intercept": _num,
                                  "knots": {"type": "array", "items": _num},
                                  "slopes": {"type": "array", "items": _num}},
                   "additionalProperties": False},
        "grids": {"type": "object",
                  "properties": {"time_steps": {"type": "integer", "minimum": 1},
                                 "pide_time_steps": {"type": "integer", "minimum": 1},
                                 "x_min": {"type": "number", "exclusiveMinimum": 0},
                                 "x_max": {"type": "number", "exclusiveMinimum": 0},
                                 "n_x": {"type": "integer", "minimum": 3},
                                 "spacing": {"enum": ["uniform", "log"]},
                                 "validation_n_t": {"type": "integer", "minimum": 2},
                                 "validation_n_s": {"type": "integer", "minimum": 2}},
                  "additionalProperties": False},
        "checkpoints": {"type": "array", "items": _num, "minItems": 1},
        "measures": {"type": "array",
                     "items": {"type": "object", "required": ["theta"],
                               "properties": {"theta": {"type": "array", "items": _num},
                                              "psi": _num},
                               "additionalProperties": False}},
        "family": {"type": "object", "required": ["kind"],
                   "properties": {"kind": {"enum": ["singleton", "good_deal", "ball", "explicit"]},
                                  "theta_grid": {"type": "array", "items": _num},
                                  "B": _num, "B1": _num, "B2": _num,
                                  "explicit": {"type": "array"},
                                  "condition_I_bound": _num},
                   "additionalProperties": False},
        "poisson": {"type": "object", "required": ["lambda", "gamma_tilde", "eta"],
                    "properties": {"lambda": {"type": "number", "exclusiveMinimum": 0},
                                   "alpha": _num, "gamma_tilde": _num, "eta": _num},
                    "additionalProperties": False},
        "simulation": {"type": "object",
                       "properties": {"scheme": {"enum": ["log", "euler"]},
                                      "positivity": {"enum": ["raise", "stop", "allow"]}},
                       "additionalProperties": False},
        "log_moment_bound": {"type": "number", "exclusiveMinimum": 0},
        "only": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 14}},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """The configuration document is unreadable or violates the schema."""


def validate_config(doc: Any) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/" + "/".join(str(p) for p in e.absolute_path)
            lines.append(f"{where}: {e.message}")
        raise ConfigError("configuration does not match the schema:\n  " + "\n  ".join(lines))


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    validate_config(doc)
    return doc


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------


def build_coefficient(spec, kind: str) -> CoefficientField:
    if isinstance(spec, (int, float)):
        return CoefficientField.constant(float(spec), kind)
    b = spec["builtin"]
    if b == "constant":
        v = spec["value"]
        if isinstance(v, dict):
            v = {float(k): float(x) for k, x in v.items()}
        return CoefficientField.constant(v, kind)
    if b == "affine":
        return CoefficientField.affine(spec["a"], spec["b"], kind)
    if b == "rho_affine":
        return CoefficientField.rho_affine(spec["c0"], spec["c1"], kind)
    if b == "example":
        return CoefficientField.rho_affine(4.0, -2.0, kind)
    if b == "saturating":
        return CoefficientField.saturating(spec["a"], spec["b"], spec["c"], kind)
    if b == "piecewise_in_time":
        return CoefficientField.piecewise_in_time(spec["values"], spec.get("breakpoints", []), kind)
    raise ConfigError(f"unknown builtin {b!r}")


def _rate(spec) -> RateCurve:
    if spec is None:
        return RateCurve.constant(0.0)
    if isinstance(spec, (int, float)):
        return RateCurve.constant(float(spec))
    return RateCurve.piecewise(spec["values"], spec.get("breakpoints", []))


def _payoff(spec) -> Payoff:
    k = spec["kind"]
    if k in ("call", "put", "straddle"):
        if "strike" not in spec:
            raise ConfigError(f"/payoff: {k} needs a strike")
        return getattr(Payoff, k)(spec["strike"])
    if k == "linear":
        return Payoff.linear(spec.get("slope", 1.0), spec.get("intercept", 0.0))
    return Payoff.piecewise_linear(spec["knots"], spec["slopes"], spec.get("intercept", 0.0))


@dataclass(frozen=True, eq=False)
class Experiment:
    doc: dict
    kind: str
    seed: int
    n_paths: int
    T: float
    x0: float
    true: Optional[TrueModel]
    model: Optional[MisspecifiedModel]
    payoff: Payoff
    sim_grid: TimeGrid
    pide_grid: TimeGrid
    space_grid: SpaceGrid
    sampling: SamplingGrid
    checkpoints: tuple[float, ...]
    measures: tuple[MeasureChange, ...]
    family: Optional[dict]
    poisson: Optional[PoissonModel]
    scheme: str
    positivity: str
    log_moment_bound: float


def build_experiment(doc: dict, seed_override: Optional[int] = None) -> Experiment:
    validate_config(doc)
    try:
        return _build(doc, seed_override)
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _build(doc: dict, seed_override: Optional[int]) -> Experiment:
    T = float(doc.get("horizon", 1.0))
    x0 = float(doc.get("x0", 100.0))
    rate = _rate(doc.get("rate"))
    g = doc.get("grids", {})
    poisson = None
    if "poisson" in doc:
        p = doc["poisson"]
        if not rate.is_zero:
            raise ConfigError("/rate: the pure-jump market requires a zero rate")
        poisson = PoissonModel.constant(p["lambda"], p["gamma_tilde"], p["eta"], p.get("alpha", 1.0))
        levy = poisson.levy
        true = poisson.true_model(x0)
        model = poisson.misspecified()
    else:
        levy = LevyMeasure(tuple(tuple(a) for a in doc.get("levy", [])))
        tm = doc.get("true_model", {})
        mm = doc.get("model", {})
        true = TrueModel(x0, rate, build_coefficient(tm.get("sigma", 0.0), "true-vol"),
                         build_coefficient(tm.get("eta", 0.0), "true-jump"), levy)
        model = MisspecifiedModel(rate, build_coefficient(mm.get("gamma", 0.0), "model-vol"),
                                  build_coefficient(mm.get("gamma_tilde", 0.0), "model-jump"),
                                  levy, float(mm.get("epsilon_floor", 0.01)))
    x_min = float(g.get("x_min", x0 / 100.0))
    x_max = float(g.get("x_max", 4.0 * x0))
    space = SpaceGrid(x_min, x_max, int(g.get("n_x", 400)), g.get("spacing", "uniform"))
    steps = int(g.get("time_steps", 100))
    sampling = SamplingGrid(T, x_min, x_max, int(g.get("validation_n_t", 101)),
                            int(g.get("validation_n_s", 201)))
    measures = tuple(
        MeasureChange.constant(m["psi"], m["theta"]) if "psi" in m else solve_measure(model, m["theta"], sampling)
        for m in doc.get("measures", []))
    sim = doc.get("simulation", {})
    seed = int(doc["seed"] if seed_override is None else seed_override)
    return Experiment(doc, doc["experiment"], seed, int(doc.get("n_paths", 10000)), T, x0, true,
                      model, _payoff(doc.get("payoff", {"kind": "call", "strike": x0})),
                      TimeGrid(T, steps), TimeGrid(T, int(g.get("pide_time_steps", 400))), space,
                      sampling, tuple(float(c) for c in doc.get("checkpoints", [0.0, T])), measures,
                      doc.get("family"), poisson, sim.get("scheme", "log"),
                      sim.get("positivity", "raise"), float(doc.get("log_moment_bound", 1.0)))


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

_BASE = {"schema_version": SCHEMA_VERSION, "seed": 20240601, "n_paths": 10000, "horizon": 1.0,
         "x0": 100.0, "rate": 0.0}

PRESETS: dict[str, dict] = {
    "bs-overestimate": {
        **_BASE, "experiment": "hedge",
        "true_model": {"sigma": 0.15}, "model": {"gamma": 0.25},
        "payoff": {"kind": "call", "strike": 100.0},
        "grids": {"time_steps": 100, "pide_time_steps": 400, "x_min": 1.0, "x_max": 400.0, "n_x": 400},
        "checkpoints": [0.0, 0.25, 0.5, 0.75, 1.0],
    },
    "jump-overestimate": {
        **_BASE, "experiment": "hedge",
        "levy": [[1.0, 1.0]],
        "true_model": {"sigma": 0.15, "eta": 0.1}, "model": {"gamma": 0.2, "gamma_tilde": 0.2},
        "payoff": {"kind": "call", "strike": 100.0},
        "grids": {"time_steps": 100, "pide_time_steps": 200, "x_min": 1.0, "x_max": 400.0, "n_x": 400},
        "checkpoints": [0.0, 0.25, 0.5, 0.75, 1.0],
        "measures": [{"theta": [0.0]}, {"theta": [0.2]}, {"theta": [0.4]}],
    },
    "robust-good-deal": {
        **_BASE, "experiment": "robust",
        "levy": [[1.0, 1.0]],
        "true_model": {"sigma": 0.15, "eta": 0.1}, "model": {"gamma": 0.2, "gamma_tilde": 0.2},
        "payoff": {"kind": "call", "strike": 100.0},
        "grids": {"time_steps": 100, "pide_time_steps": 200, "x_min": 1.0, "x_max": 400.0, "n_x": 400},
        "checkpoints": [0.0, 0.25, 0.5, 0.75, 1.0],
        "family": {"kind": "good_deal", "B": 0.1, "theta_grid": [-0.2, -0.1, 0.0, 0.1, 0.2]},
    },
    "poisson-superhedge": {
        **_BASE, "experiment": "poisson",
        "poisson": {"lambda": 0.5, "gamma_tilde": 0.2, "eta": 0.1, "alpha": 1.0},
        "payoff": {"kind": "call", "strike": 100.0},
        "grids": {"time_steps": 200, "pide_time_steps": 200, "x_min": 40.0, "x_max": 300.0,
                  "n_x": 401},
    },
    "example-counterexample": {
        **_BASE, "experiment": "validate", "horizon": 5.0, "x0": 1.0,
        "levy": [[1.0, 0.1]],
        "model": {"gamma_tilde": {"builtin": "example"}},
        "payoff": {"kind": "call", "strike": 1.0},
        "grids": {"time_steps": 500, "x_min": 1.0, "x_max": 4.0, "n_x": 201},
        "simulation": {"scheme": "euler", "positivity": "allow"},
    },
    "linear-payoff": {
        **_BASE, "experiment": "price", "rate": 0.02,
        "levy": [[1.0, 0.5]],
        "true_model": {"sigma": 0.2, "eta": 0.1}, "model": {"gamma": 0.3, "gamma_tilde": 0.2},
        "payoff": {"kind": "linear", "slope": 1.0, "intercept": 0.0},
        "grids": {"time_steps": 100, "pide_time_steps": 200, "x_min": 1.0, "x_max": 400.0, "n_x": 400},
    },
}
for _i in range(1, 15):
    PRESETS[f"acceptance-{_i:02d}"] = {"schema_version": SCHEMA_VERSION, "experiment": "acceptance-suite",
                                       "seed": 20240601, "only": [_i]}
PRESETS["acceptance-suite"] = {"schema_version": SCHEMA_VERSION, "experiment": "acceptance-suite",
                               "seed": 20240601}


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name])


def dump_schema() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True)
