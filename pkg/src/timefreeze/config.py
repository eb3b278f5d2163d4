"""Scenario configuration: loading, schema validation and object construction.

A scenario is a TOML (or JSON) tree with one ``kind`` and the blocks
``system``, ``run``, ``converge``, ``aux``, ``ocp`` and ``output`` as needed.
"""
from __future__ import annotations

import json
import sys as _sys
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

if _sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

import numpy as np

from .dynamics import (
    GRAVITY,
    AffineConstraint,
    StepMode,
    assemble_time_frozen,
    bouncing_ball,
    mechanical_system,
    particle_3d,
)

__all__ = ["ConfigError", "SCHEMA", "builtin_scenarios", "build_system", "load_config",
           "scenario_path"]

KINDS = ("simulate", "aux-check", "converge", "ocp")
BUILTINS = ("bouncing-ball", "particle-3d")


class ConfigError(ValueError):
    """Invalid scenario; the message names the offending key."""


_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["kind", "system"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(KINDS)},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "builtin": {"enum": list(BUILTINS)},
                "dimension": {"type": "integer", "minimum": 1},
                "drift": _vec,
                "input_matrix": {"type": "array", "items": _vec},
                "constraints": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["normal"],
                        "additionalProperties": False,
                        "properties": {"normal": _vec, "offset": _num},
                    },
                },
                "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1,
                          "description": "restitution coefficient gamma must lie in (0, 1]"},
                "k": {"anyOf": [{"type": "number", "exclusiveMinimum": 0},
                                {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}}],
                      "description": "auxiliary stiffness k must be positive"},
                "mass": {"type": "number", "exclusiveMinimum": 0},
                "g": _num,
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "y0": _vec,
                "tau_f": {"type": "number", "exclusiveMinimum": 0},
                "t_f": {"type": "number", "exclusiveMinimum": 0},
                "n_jumps": {"type": "integer", "minimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "scheme": {"type": "string"},
                "step_mode": {"enum": ["sign", "midpoint", "smoothed", "lp-kkt"]},
                "step_eps": {"type": "number", "exclusiveMinimum": 0},
                "u": _vec,
                "oracle": {"enum": ["none", "bouncing-ball"]},
            },
        },
        "converge": {
            "type": "object",
            "additionalProperties": False,
            "required": ["M"],
            "properties": {
                "schemes": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "M": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
                "threads": {"type": "integer", "minimum": 1},
            },
        },
        "aux": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x0": _vec,
                "constraint": {"type": "integer", "minimum": 0},
                "fine_dt": {"type": "number", "exclusiveMinimum": 0},
                "k_values": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "ocp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target": _vec,
                "rho": {"type": "number", "minimum": 0},
                "w_max": {"type": "number", "exclusiveMinimum": 1},
                "N": {"type": "integer", "minimum": 1},
                "N_ctrl": {"type": "integer", "minimum": 1},
                "u_lower": {"anyOf": [_num, _vec]},
                "u_upper": {"anyOf": [_num, _vec]},
                "state_guess": {"enum": ["hold", "line"]},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "homotopy": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "mu0": {"type": "number", "exclusiveMinimum": 0},
                        "factor": {"type": "number", "exclusiveMinimum": 1},
                        "count": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _key(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def _schema_node(path) -> dict:
    node = SCHEMA
    for p in path:
        if not isinstance(p, str):
            node = node.get("items", {})
            continue
        node = node.get("properties", {}).get(p, {})
    return node


def validate(cfg: dict) -> dict:
    errors = sorted(_VALIDATOR.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        desc = _schema_node(err.absolute_path).get("description")
        detail = err.message if desc is None else f"{err.message}; {desc}"
        raise ConfigError(f"{_key(err.absolute_path)}: {detail}")
    _check_semantics(cfg)
    return cfg


def _check_semantics(cfg: dict) -> None:
    system = cfg["system"]
    builtin = system.get("builtin")
    if builtin is not None:
        for key in ("dimension", "drift", "input_matrix", "constraints"):
            if key in system:
                raise ConfigError(f"system.{key}: not allowed together with builtin = {builtin!r}")
    else:
        if "drift" not in system:
            raise ConfigError("system.drift: required for custom systems (or set system.builtin)")
        dim = system.get("dimension", len(system["drift"]))
        if len(system["drift"]) != dim:
            raise ConfigError(f"system.drift: expected {dim} entries, got {len(system['drift'])}")
        for i, con in enumerate(system.get("constraints", [])):
            if len(con["normal"]) != dim:
                raise ConfigError(f"system.constraints.{i}.normal: expected {dim} entries")
            if not any(con["normal"]):
                raise ConfigError(f"system.constraints.{i}.normal: must be nonzero")
    kind = cfg["kind"]
    run = cfg.get("run", {})
    if kind == "simulate":
        if "y0" not in run:
            raise ConfigError("run.y0: required for kind = 'simulate'")
    if kind in ("simulate", "converge"):
        if "tau_f" not in run and "t_f" not in run:
            raise ConfigError("run.tau_f: give tau_f or t_f (with n_jumps)")
    if kind == "converge":
        if "converge" not in cfg:
            raise ConfigError("converge: block required for kind = 'converge'")
        if "t_f" not in run:
            raise ConfigError("run.t_f: required to read off the terminal error")
        if run.get("oracle", "bouncing-ball") != "bouncing-ball":
            raise ConfigError("run.oracle: convergence studies need the bouncing-ball oracle")
    if kind == "ocp" and "ocp" not in cfg:
        raise ConfigError("ocp: block required for kind = 'ocp'")
    if kind == "ocp":
        N = cfg["ocp"].get("N", 50)
        n_ctrl = cfg["ocp"].get("N_ctrl", N)
        if N % n_ctrl:
            raise ConfigError(f"ocp.N_ctrl: {n_ctrl} does not divide N = {N}")


def load_config(path) -> dict:
    """Read a TOML or JSON scenario file (or a builtin scenario name) and validate it."""
    p = Path(path)
    if not p.exists():
        builtin = scenario_path(str(path))
        if builtin is None:
            raise ConfigError(f"config file {path} does not exist and is not a builtin scenario")
        p = builtin
    text = p.read_text()
    try:
        cfg = json.loads(text) if p.suffix.lower() == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{p.name}: cannot parse ({exc})") from None
    cfg = validate(cfg)
    cfg.setdefault("name", p.stem)
    return cfg


def builtin_scenarios() -> list:
    """Names of the scenarios shipped with the package."""
    files = resources.files("timefreeze").joinpath("scenarios")
    return sorted(f.name[:-5] for f in files.iterdir() if f.name.endswith(".toml"))


def scenario_path(name: str) -> Optional[Path]:
    f = resources.files("timefreeze").joinpath("scenarios", f"{name}.toml")
    return Path(str(f)) if f.is_file() else None


def build_system(cfg: dict):
    """TimeFrozenSystem described by the ``system`` and ``run`` blocks."""
    s = cfg["system"]
    gamma = s.get("gamma", 0.9)
    g = s.get("g", GRAVITY)
    mass = s.get("mass", 1.0)
    k = s.get("k", 5.0)
    builtin = s.get("builtin")
    if builtin == "bouncing-ball":
        base = bouncing_ball(gamma, g, mass)
    elif builtin == "particle-3d":
        base = particle_3d(gamma, g, mass)
    else:
        cons = [AffineConstraint(c["normal"], c.get("offset", 0.0)) for c in s.get("constraints", [])]
        B = s.get("input_matrix")
        base = mechanical_system(s["drift"], cons, gamma,
                                 None if B is None else np.asarray(B, dtype=float) / mass,
                                 name=cfg.get("name", "custom"))
    run = cfg.get("run", {})
    mode = StepMode.parse(run.get("step_mode", "sign"), run.get("step_eps"))
    if isinstance(k, list) and len(k) != base.n_c:
        raise ConfigError(f"system.k: expected {base.n_c} values, got {len(k)}")
    return assemble_time_frozen(base, k, mode)


def augmented_y0(sys, y0) -> np.ndarray:
    y0 = np.asarray(y0, dtype=float)
    if y0.size == sys.n_x:
        y0 = np.append(y0, 0.0)
    if y0.size != sys.n_y:
        raise ConfigError(f"run.y0: expected {sys.n_x} or {sys.n_y} entries, got {y0.size}")
    return y0


def pseudo_horizon(cfg: dict, sys) -> float:
    run = cfg.get("run", {})
    if "tau_f" in run:
        return float(run["tau_f"])
    tau_jump = max((p.tau_jump for p in sys.aux_params), default=0.0)
    return float(run["t_f"]) + int(run.get("n_jumps", 0)) * tau_jump

