"""Experiment configuration: a YAML key-value tree with documented defaults.

Every key has a default (see ``DEFAULTS``); a config file only lists what it
changes. Unknown keys are rejected so typos do not pass silently.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Optional

import yaml

from .errors import ConfigError, LogBsdeError

KINDS = ("forward", "solve", "assumptions", "control")

DEFAULTS: dict = {
    "kind": "solve",
    "name": "experiment",
    "seed": 0,
    "n_paths": 10000,
    "d": 1,
    "x0": [0.0],
    "grid": {"T": 1.0, "n_steps": 50},
    "marks": None,
    "coefficients": {"sigma": 1.0, "gamma": None, "drift": None, "drift_value": 1.0, "tilt": None, "tilt_value": 0.0},
    "terminal": {"name": "state", "params": {}},
    "generator": {"name": "zero", "params": {}},
    "problem": {"name": "bang_bang", "params": {}},
    "solver": {
        "basis": {"kind": "polynomial", "degree": 1, "n_bins": 20},
        "scheme": "joint",
        "outer": False,
        "n_schedule": [4, 8, 16, 32],
        "alpha_exp": 1.0,
        "refine": 3,
        "tol": 0.0,
        "beta": 3.0,
        "alpha_bar": 1.2,
        "kappa": 0.1,
        "A": 50.0,
        "rho_radius": 5.0,
    },
    "control": {"n_random": 20, "n_bins": 20, "reweight": True, "scan": False},
    "assumptions": {"N": 5.0, "count": 4096, "usyz_C2": [0.5, 1.0, 2.0], "schedule": [4, 8, 16, 32]},
    "output": {"csv_paths": 1000, "threads": 1},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown key (known: {', '.join(sorted(base))})", field=where)
        if isinstance(base[key], dict) and key not in ("params",) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where + ".")
        elif isinstance(base[key], dict) and key not in ("params",) and value is not None:
            raise ConfigError("expected a mapping", field=where)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "ExperimentConfig":
        raw = {} if raw is None else raw
        if not isinstance(raw, dict):
            raise ConfigError("top level must be a mapping")
        return cls(_merge(DEFAULTS, raw))

    def __getitem__(self, key):
        return self.data[key]

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def with_seed(self, seed: int) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        data["seed"] = int(seed)
        return ExperimentConfig(data)

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("ascii")).hexdigest()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", field="config") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}", field="config") from exc
    return ExperimentConfig.from_dict(raw)


def validate(cfg: ExperimentConfig) -> list:
    """Every reason the config would fail before any numerics run; empty when it is well formed."""
    from . import registry
    from .engine import RegressionBasis, beta_diagnostics

    out = []
    d = cfg.data

    def check(cond, msg):
        if not cond:
            out.append(msg)

    check(d["kind"] in KINDS, f"kind: {d['kind']!r} is not one of {', '.join(KINDS)}")
    check(isinstance(d["seed"], int) and d["seed"] >= 0, "seed: must be a nonnegative integer")
    check(isinstance(d["n_paths"], int) and d["n_paths"] >= 2, "n_paths: must be an integer >= 2")
    check(isinstance(d["d"], int) and d["d"] >= 1, "d: must be a positive integer")
    check(isinstance(d["x0"], list) and len(d["x0"]) == d["d"], "x0: must list d initial coordinates")
    g = d["grid"]
    check(_num(g["T"]) and g["T"] > 0, "grid.T: must be positive")
    check(isinstance(g["n_steps"], int) and g["n_steps"] >= 1, "grid.n_steps: must be a positive integer")
    s = d["solver"]
    try:
        RegressionBasis(**s["basis"])
    except (ConfigError, TypeError) as exc:
        out.append(f"solver.basis: {exc}")
    check(s["scheme"] in ("joint", "product"), "solver.scheme: must be joint or product")
    sched = s["n_schedule"]
    check(isinstance(sched, list) and len(sched) > 0 and all(isinstance(v, int) and v >= 1 for v in sched)
          and all(b > a for a, b in zip(sched, sched[1:])), "solver.n_schedule: must be increasing positive integers")
    check(_num(s["alpha_exp"]) and s["alpha_exp"] > 0, "solver.alpha_exp: must be positive")
    check(_num(s["tol"]) and s["tol"] >= 0, "solver.tol: must be nonnegative")
    if all(_num(s[k]) for k in ("beta", "alpha_bar", "kappa", "A")) and _num(g["T"]):
        out.extend(f"solver: {m}" for m in beta_diagnostics(s["beta"], s["alpha_bar"], s["kappa"], s["A"], g["T"]))
    else:
        out.append("solver: beta, alpha_bar, kappa and A must be numbers")
    a = d["assumptions"]
    check(_num(a["N"]) and a["N"] > 0, "assumptions.N: must be positive")
    check(isinstance(a["usyz_C2"], list) and all(_num(v) and v > 0 for v in a["usyz_C2"]),
          "assumptions.usyz_C2: must list positive numbers")
    o = d["output"]
    check(o["csv_paths"] is None or (isinstance(o["csv_paths"], int) and o["csv_paths"] >= 0),
          "output.csv_paths: must be a nonnegative integer or null")
    check(isinstance(o["threads"], int) and o["threads"] >= 1, "output.threads: must be a positive integer")
    if out:
        return out
    # registry wiring: build every object the run would build
    try:
        measure = registry.mark_measure(**d["marks"]) if d["marks"] is not None else None
    except (LogBsdeError, TypeError) as exc:
        return [f"marks: {exc}"]
    builders = []
    if d["kind"] in ("forward", "solve", "assumptions"):
        builders.append(("coefficients", lambda: registry.coefficients(d=d["d"], **d["coefficients"])))
        builders.append(("terminal", lambda: registry.terminal(d["terminal"]["name"], **d["terminal"]["params"])))
        if d["coefficients"]["gamma"] is not None and measure is None:
            out.append("marks: a jump coefficient needs a mark measure")
    if d["kind"] in ("solve", "assumptions"):
        builders.append(("generator", lambda: registry.generator(d["generator"]["name"], d=d["d"], measure=measure,
                                                                  **d["generator"]["params"])))
    if d["kind"] == "control":
        builders.append(("problem", lambda: registry.problem(d["problem"]["name"], **d["problem"]["params"])))
    for name, build in builders:
        try:
            build()
        except (LogBsdeError, TypeError) as exc:
            out.append(f"{name}: {exc}" if not str(exc).startswith(name) else str(exc))
    return out


def _num(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)
