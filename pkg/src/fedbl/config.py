"""Experiment configuration: flat TOML sections with a strict schema.

Unknown sections or keys are rejected by name, every value is
type-checked, and resolve() materializes all defaults so the resolved
mapping can be embedded in summaries and replayed bit-for-bit.
"""
from __future__ import annotations

import sys
from typing import Any

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["SOLVERS", "load_toml", "resolve", "task_section_defaults"]

SOLVERS = ("bilevel-convex", "bilevel-nonconvex", "fedavg", "local", "static-w")

_TASK_KINDS = ("mean_estimation", "linear_regression", "hetero_classification")
_SCHEDULES = ("fixed", "convex_tau1", "convex_taugt1", "nonconvex_tau1",
              "nonconvex_taugt1")
_METRIC_NAMES = ("test", "gap", "dist", "stationarity", "G")
_AUTO = "auto"

# (default, type tuple, allowed-values or None); required keys use _REQUIRED
_REQUIRED = object()

_SCHEMA: dict[str, dict[str, tuple]] = {
    "": {
        "seed": (0, (int,), None),
    },
    "task": {
        "kind": (_REQUIRED, (str,), _TASK_KINDS),
        "nodes": (15, (int,), None),
        "similar": (5, (int,), None),
        "n_train": (500, (int,), None),
        "n_valid": (200, (int,), None),
        "n_test": (2000, (int,), None),
        "loss": (_AUTO, (str,), ("quadratic", "logistic", _AUTO)),
        "ridge": (1e-3, (int, float), None),
        "shift": (1.0, (int, float), None),
        "dim": (2, (int,), None),
        "noise_std": (0.1, (int, float), None),
        "theta_scale": (1.0, (int, float), None),
        "class_sep": (2.0, (int, float), None),
        "prior_similar": (0.5, (int, float), None),
        "prior_other": (0.5, (int, float), None),
        "flip_labels": (False, (bool,), None),
        "rotate": (False, (bool,), None),
        "mc_samples": (100_000, (int,), None),
    },
    "inner": {
        "gamma": (_AUTO, (int, float, str), None),
        "tau": (10, (int,), None),
        "q": (0.02, (int, float), None),
        "iters": (_AUTO, (int, str), None),
        "epochs": (5, (int,), None),
        "schedule": ("fixed", (str,), _SCHEDULES),
    },
    "outer": {
        "solver": ("bilevel-nonconvex", (str,), SOLVERS),
        "rounds": (20, (int,), None),
        "eta": (_AUTO, (int, float, str), None),
        "cap": (1.0 / 3.0, (int, float), None),
        "a1": (1.0, (int, float), None),
        "a2": (1.0, (int, float), None),
        "a3": (1.0, (int, float), None),
        "radius": (_AUTO, (int, float, str), None),
        "warm_start": (False, (bool,), None),
        "weights": (None, (list, type(None)), None),
    },
    "metrics": {
        "compute": (["test", "gap", "dist", "stationarity"], (list,), None),
        "theta_radius": (10.0, (int, float), None),
        "mc_samples": (100_000, (int,), None),
    },
    "output": {
        "dir": ("out", (str,), None),
    },
}


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc


def resolve(raw: dict) -> dict:
    """Validate raw config against the schema and fill in every default.

    The result is a plain nested dict (top-level scalars plus one dict
    per section) that resolves to itself.
    """
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a mapping, got {type(raw).__name__}")
    out: dict[str, Any] = {}
    for key in raw:
        if key in _SCHEMA[""]:
            continue
        if key not in _SCHEMA or key == "":
            raise ConfigError(f"unknown config section or key {key!r}")
        if not isinstance(raw[key], dict):
            raise ConfigError(f"section [{key}] must be a table")

    for key, (default, types, allowed) in _SCHEMA[""].items():
        out[key] = _pick(raw, "", key, default, types, allowed)

    for section, keys in _SCHEMA.items():
        if section == "":
            continue
        given = raw.get(section, {})
        for key in given:
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
        out[section] = {
            key: _pick(given, section, key, default, types, allowed)
            for key, (default, types, allowed) in keys.items()
        }

    _cross_checks(out, raw)
    return out


def _pick(table: dict, section: str, key: str, default, types, allowed):
    where = f"[{section}] {key}" if section else key
    if key not in table:
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {where}")
        return default
    val = table[key]
    if bool in types and isinstance(val, bool):
        pass
    elif isinstance(val, bool) and bool not in types:
        raise ConfigError(f"{where} must not be a boolean")
    elif not isinstance(val, tuple(types)):
        names = "/".join(t.__name__ for t in types)
        raise ConfigError(f"{where} must be {names}, got {type(val).__name__}")
    if allowed is not None and val not in allowed:
        raise ConfigError(f"{where} must be one of {allowed}, got {val!r}")
    return val


def _cross_checks(cfg: dict, raw: dict) -> None:
    seed = cfg["seed"]
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError(f"seed must fit an unsigned 64-bit range, got {seed}")
    task, inner, outer = cfg["task"], cfg["inner"], cfg["outer"]
    if task["kind"] == "mean_estimation":
        if "nodes" not in raw.get("task", {}):
            task["nodes"] = 2
        elif task["nodes"] != 2:
            raise ConfigError("[task] nodes must be 2 for mean estimation")
        if "similar" not in raw.get("task", {}):
            task["similar"] = 0
        # the K = 15 protocol cap would be infeasible at K = 2
        if "cap" not in raw.get("outer", {}):
            outer["cap"] = 1.0
    if not (0 <= task["similar"] <= task["nodes"]):
        raise ConfigError(
            f"[task] similar must lie in 0..{task['nodes']}, got {task['similar']}")
    if task["loss"] == _AUTO:
        cfg["task"]["loss"] = ("logistic" if task["kind"] == "hetero_classification"
                               else "quadratic")
    if task["kind"] == "hetero_classification" and cfg["task"]["loss"] != "logistic":
        raise ConfigError("[task] classification requires the logistic loss")
    if isinstance(inner["gamma"], str) and inner["gamma"] != _AUTO:
        raise ConfigError(f"[inner] gamma must be a number or {_AUTO!r}")
    if isinstance(inner["iters"], str) and inner["iters"] != _AUTO:
        raise ConfigError(f"[inner] iters must be an integer or {_AUTO!r}")
    if isinstance(outer["eta"], str) and outer["eta"] != _AUTO:
        raise ConfigError(f"[outer] eta must be a number or {_AUTO!r}")
    if isinstance(outer["radius"], str) and outer["radius"] != _AUTO:
        raise ConfigError(f"[outer] radius must be a number or {_AUTO!r}")
    if not (0 < outer["cap"] <= 1):
        raise ConfigError(f"[outer] cap must lie in (0, 1], got {outer['cap']}")
    if outer["cap"] * task["nodes"] < 1:
        raise ConfigError(
            f"[outer] cap {outer['cap']} with {task['nodes']} nodes leaves "
            f"no feasible weights")
    if outer["solver"] == "static-w":
        w = outer["weights"]
        if w is None:
            raise ConfigError("[outer] static-w requires weights")
        if len(w) != task["nodes"]:
            raise ConfigError(
                f"[outer] weights has {len(w)} entries for {task['nodes']} nodes")
    sched = inner["schedule"]
    if sched.endswith("_tau1") and inner["tau"] != 1:
        raise ConfigError(f"[inner] schedule {sched} requires tau = 1")
    if sched.endswith("_taugt1") and inner["tau"] <= 1:
        raise ConfigError(f"[inner] schedule {sched} requires tau > 1")
    for name in cfg["metrics"]["compute"]:
        if name not in _METRIC_NAMES:
            raise ConfigError(
                f"[metrics] compute entry {name!r} not among {_METRIC_NAMES}")


def task_section_defaults(kind: str) -> dict:
    """Resolved [task] section for a bare kind (test convenience)."""
    return resolve({"task": {"kind": kind}})["task"]
