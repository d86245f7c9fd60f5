"""JSON scenario files: schema, overrides and conversion to :class:`Scenario`."""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .erg import ErgParams
from .lti import ContinuousPlant, PolytopicConstraints
from .sim import Scenario


class ScenarioError(ValueError):
    """Raised for unreadable or invalid scenario documents."""


_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_vector = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_bounds = {"type": "array", "minItems": 1, "items": {"type": ["number", "null"]}}
_per_row = {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "plant", "constraints", "cost", "horizon", "flow", "erg", "gamma", "r0", "xi0", "simulation"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "plant": {
            "type": "object",
            "additionalProperties": False,
            "required": ["A_c", "B_c", "C_c", "D_c"],
            "properties": {"A_c": _matrix, "B_c": _matrix, "C_c": _matrix, "D_c": _matrix},
        },
        "constraints": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "state_lower": _bounds,
                "state_upper": _bounds,
                "input_lower": _bounds,
                "input_upper": _bounds,
                "state_rows": {
                    "type": "array",
                    "items": {
                        "type": "object", "additionalProperties": False, "required": ["a", "b"],
                        "properties": {"a": _vector, "b": {"type": "number"}},
                    },
                },
                "input_rows": {
                    "type": "array",
                    "items": {
                        "type": "object", "additionalProperties": False, "required": ["c", "d"],
                        "properties": {"c": _vector, "d": {"type": "number"}},
                    },
                },
            },
        },
        "cost": {
            "type": "object",
            "additionalProperties": False,
            "required": ["Q", "U", "R"],
            "properties": {"Q": _matrix, "U": _matrix, "R": _matrix},
        },
        "horizon": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N", "tau"],
            "properties": {"N": {"type": "integer", "minimum": 1}, "tau": {"type": "number", "exclusiveMinimum": 0}},
        },
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "required": ["alpha", "init"],
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "init": {"enum": ["zeros", "rollout", "oracle"]},
                "integrator": {"enum": ["rk4", "implicit"]},
                "step": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "step_factor": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "erg": {
            "type": "object",
            "additionalProperties": False,
            "required": ["enabled"],
            "properties": {
                "enabled": {"type": "boolean"},
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "delta": _per_row,
                "zeta": _per_row,
                "W": _matrix,
                "W_mode": {"enum": ["identity", "adaptive"]},
            },
            "if": {"properties": {"enabled": {"const": True}}},
            "then": {"required": ["enabled", "kappa", "eta", "delta", "zeta"]},
        },
        "gamma": _vector,
        "r0": _vector,
        "xi0": _vector,
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t_end", "log_interval"],
            "properties": {
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "log_interval": {"type": "number", "exclusiveMinimum": 0},
                "h_plant": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "lyapunov_eps": {"type": "number", "exclusiveMinimum": 0},
                "violation_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "csv": {"type": "string"},
                "plot": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}


def bundled_names():
    root = resources.files("dempc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve(path_or_name) -> Path:
    """A file path, or the name of a bundled scenario."""
    p = Path(path_or_name)
    if p.exists():
        return p
    name = p.name[:-5] if p.name.endswith(".json") else p.name
    cand = resources.files("dempc") / "scenarios" / f"{name}.json"
    if cand.is_file():
        return Path(str(cand))
    raise ScenarioError(f"{path_or_name}: no such file or bundled scenario")


def load_document(path_or_name) -> dict:
    path = resolve(path_or_name)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return doc


def _coerce(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """``key.sub=value`` assignments; values are parsed as JSON when possible."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = _coerce(value.strip())
    return doc


def validate(doc: dict, source="scenario"):
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ScenarioError(f"{source}: {where}: {e.message}")


def _bounds_array(values, size, name):
    if values is None:
        return np.full(size, np.nan)
    if len(values) != size:
        raise ScenarioError(f"constraints.{name} has {len(values)} entries, expected {size}")
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def _constraints(doc, n, m):
    c = doc["constraints"]
    inf = np.inf
    lo = _bounds_array(c.get("state_lower"), n, "state_lower")
    hi = _bounds_array(c.get("state_upper"), n, "state_upper")
    ulo = _bounds_array(c.get("input_lower"), m, "input_lower")
    uhi = _bounds_array(c.get("input_upper"), m, "input_upper")
    cons = PolytopicConstraints.from_boxes(
        np.where(np.isnan(lo), -inf, lo), np.where(np.isnan(hi), inf, hi),
        np.where(np.isnan(ulo), -inf, ulo), np.where(np.isnan(uhi), inf, uhi),
    )
    extra_x = [(np.array(r["a"], float), r["b"]) for r in c.get("state_rows", ())]
    extra_u = [(np.array(r["c"], float), r["d"]) for r in c.get("input_rows", ())]
    if extra_x or extra_u:
        cons = cons.stacked(extra_x, extra_u)
    if cons.n_h == 0:
        raise ScenarioError("constraints: at least one row is required")
    return cons


def _per_row_values(value, n_h, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n_h, float(arr))
    if arr.size != n_h:
        raise ScenarioError(f"erg.{name} needs {n_h} entries (one per constraint row), got {arr.size}")
    return arr


def to_scenario(doc: dict, source="scenario") -> Scenario:
    validate(doc, source)
    try:
        plant = ContinuousPlant(**{k: np.array(v, float) for k, v in doc["plant"].items()})
        n, m, l = plant.n, plant.m, plant.l
        cons = _constraints(doc, n, m)
        cost = doc["cost"]
        e = doc["erg"]
        ergp = None
        if e["enabled"]:
            W = np.array(e.get("W", np.eye(l).tolist()), dtype=float)
            ergp = ErgParams(
                kappa=float(e["kappa"]), eta=float(e["eta"]),
                delta=_per_row_values(e["delta"], cons.n_h, "delta"),
                zeta=_per_row_values(e["zeta"], cons.n_h, "zeta"),
                W=W, W_mode=e.get("W_mode", "identity"),
            )
        f = doc["flow"]
        s = doc["simulation"]
        return Scenario(
            plant=plant, constraints=cons,
            Q=np.array(cost["Q"], float), U=np.array(cost["U"], float), R=np.array(cost["R"], float),
            N=int(doc["horizon"]["N"]), tau=float(doc["horizon"]["tau"]), alpha=float(f["alpha"]),
            gamma=doc["gamma"], r0=doc["r0"], xi0=doc["xi0"],
            t_end=float(s["t_end"]), log_interval=float(s["log_interval"]),
            erg=ergp, init_mode=f["init"], flow_method=f.get("integrator", "rk4"),
            flow_step=f.get("step"), flow_step_factor=float(f.get("step_factor", 0.1)),
            h_plant=s.get("h_plant"), lyapunov_eps=float(s.get("lyapunov_eps", 1e-6)),
            violation_tol=float(s.get("violation_tol", 1e-3)),
            name=doc["name"], seed=int(doc.get("output", {}).get("seed", 0)),
        )
    except ScenarioError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ScenarioError(f"{source}: {exc}") from exc


def load(path_or_name, overrides=()) -> Scenario:
    doc = apply_overrides(load_document(path_or_name), overrides)
    return to_scenario(doc, str(path_or_name))
