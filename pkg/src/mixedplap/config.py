"""Experiment configuration documents (JSON, versioned schema)."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .energy import OperatorParams
from .grid import Grid, GridError, build_grid
from .solver import SolverConfig

SCHEMA_VERSION = 1
TASKS = ("solve", "extremal", "verify", "sweep")
SWEEP_AXES = ("delta", "p", "s", "nodes")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ExperimentConfig:
    task: str
    grid: dict
    operator: dict
    problem: dict
    solver: dict = field(default_factory=dict)
    extremal: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    output: str = "out"
    deterministic: bool = False
    seed: int = 0
    threads: int = 1
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    # builders for the typed objects
    def build_grid(self, nodes: int | None = None) -> Grid:
        g = dict(self.grid)
        if nodes is not None:
            g["nodes_per_axis"] = nodes
        return build_grid(
            g["shape"],
            g["bounds"],
            g["nodes_per_axis"],
            collar_radius=g.get("collar_radius"),
            center=g.get("center"),
            radius=g.get("radius"),
            inner_radius=g.get("inner_radius"),
        )

    def build_operator(self, dim: int, p: float | None = None, s: float | None = None) -> OperatorParams:
        o = self.operator
        return OperatorParams.make(
            o["p"] if p is None else p, o["s"] if s is None else s, dim, o["alpha"], o["beta"]
        )

    def build_solver_config(self) -> SolverConfig:
        kw = dict(self.solver)
        if "n_schedule" in kw:
            kw["n_schedule"] = tuple(kw["n_schedule"])
        return SolverConfig(**kw)

    def sweep_points(self) -> list[dict]:
        """Cartesian product of the sweep axes in a fixed order (delta, p, s, nodes)."""
        axes = [(k, self.sweep[k]) for k in SWEEP_AXES if k in self.sweep]
        points = [{}]
        for name, values in axes:
            points = [dict(pt, **{name: v}) for pt in points for v in values]
        return points


_SOLVER_FIELDS = {f.name for f in fields(SolverConfig)}


def _num(doc, key, path, *, default=None, integer=False):
    if key not in doc:
        if default is None:
            raise ConfigError(f"{path}.{key}", "required field is missing")
        return default
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {val!r}")
    if integer and int(val) != val:
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {val!r}")
    if not math.isfinite(val):
        raise ConfigError(f"{path}.{key}", "must be finite")
    return int(val) if integer else float(val)


def _check_unknown(doc: dict, allowed, path: str):
    extra = sorted(set(doc) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}", "unknown field")


def _parse_grid(doc) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("grid", "expected an object")
    _check_unknown(doc, ("shape", "bounds", "nodes_per_axis", "collar_radius", "center", "radius", "inner_radius"), "grid")
    shape = doc.get("shape", "interval")
    out = {"shape": shape, "nodes_per_axis": _num(doc, "nodes_per_axis", "grid", default=101, integer=True)}
    if shape in ("disk", "annulus"):
        out["radius"] = _num(doc, "radius", "grid", default=1.0)
        out["center"] = [float(c) for c in doc.get("center", [0.0, 0.0])]
        if shape == "annulus":
            out["inner_radius"] = _num(doc, "inner_radius", "grid")
        r = out["radius"]
        default_bounds = [[c - r, c + r] for c in out["center"]]
    elif shape == "rectangle":
        default_bounds = [[0.0, 1.0], [0.0, 1.0]]
    else:
        default_bounds = [[0.0, 1.0]]
    out["bounds"] = [[float(a), float(b)] for a, b in doc.get("bounds", default_bounds)]
    if doc.get("collar_radius") is not None:
        out["collar_radius"] = _num(doc, "collar_radius", "grid")
    return out


def _parse_operator(doc) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("operator", "expected an object")
    _check_unknown(doc, ("p", "s", "alpha", "beta"), "operator")
    out = {
        "p": _num(doc, "p", "operator", default=2.0),
        "s": _num(doc, "s", "operator", default=0.5),
        "alpha": _num(doc, "alpha", "operator", default=1.0),
        "beta": _num(doc, "beta", "operator", default=1.0),
    }
    _check_operator_values(out["p"], out["s"], "operator")
    for key in ("alpha", "beta"):
        if out[key] not in (0.0, 1.0):
            raise ConfigError(f"operator.{key}", f"toggles the local/nonlocal part and must be 0 or 1, got {out[key]}")
    if out["alpha"] + out["beta"] == 0:
        raise ConfigError("operator", "alpha and beta cannot both be 0")
    return out


def _check_operator_values(p, s, path):
    if not p > 1:
        raise ConfigError(f"{path}.p", f"the operator requires p > 1, got {p}")
    if not 0 < s < 1:
        raise ConfigError(f"{path}.s", f"the fractional order requires 0 < s < 1, got {s}")


def _check_delta(delta, task, path):
    if not delta > 0:
        raise ConfigError(path, f"the singular exponent requires delta > 0, got {delta}")
    if task == "extremal" and not delta < 1:
        raise ConfigError(
            path,
            f"the best constant, its extremal and the Sobolev-type inequality require "
            f"0 < delta < 1, got delta={delta}",
        )


def _parse_source(doc, path) -> dict:
    if isinstance(doc, (int, float)) and not isinstance(doc, bool):
        doc = {"kind": "constant", "value": float(doc)}
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected a number or an object")
    kind = doc.get("kind", "constant")
    if kind == "constant":
        _check_unknown(doc, ("kind", "value"), path)
        val = _num(doc, "value", path, default=1.0)
        if not val > 0:
            raise ConfigError(f"{path}.value", "f must be nonnegative and not identically zero")
        return {"kind": kind, "value": val}
    if kind == "radial_power":
        _check_unknown(doc, ("kind", "c", "gamma", "center"), path)
        out = {"kind": kind, "c": _num(doc, "c", path, default=1.0), "gamma": _num(doc, "gamma", path)}
        if not out["c"] > 0:
            raise ConfigError(f"{path}.c", "f must be nonnegative and not identically zero")
        if "center" in doc:
            out["center"] = [float(c) for c in doc["center"]]
        return out
    if kind == "csv":
        _check_unknown(doc, ("kind", "path"), path)
        if not isinstance(doc.get("path"), str):
            raise ConfigError(f"{path}.path", "expected a file path")
        return {"kind": kind, "path": doc["path"]}
    raise ConfigError(f"{path}.kind", f"unknown source kind {kind!r}")


def parse_config(document) -> ExperimentConfig:
    """Validate a configuration document (JSON text, path or parsed tree)."""
    if isinstance(document, Path):
        document = document.read_text()
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"not valid JSON: {exc}") from None
    if not isinstance(document, dict):
        raise ConfigError("<document>", "expected an object at the top level")
    doc = document
    _check_unknown(
        doc,
        ("schema_version", "task", "grid", "operator", "problem", "solver", "extremal", "verify", "sweep",
         "output", "deterministic", "seed", "threads"),
        "<document>",
    )
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported schema version {version!r}")
    task = doc.get("task", "solve")
    if task not in TASKS:
        raise ConfigError("task", f"expected one of {TASKS}, got {task!r}")

    grid = _parse_grid(doc.get("grid", {}))
    operator = _parse_operator(doc.get("operator", {}))

    prob = doc.get("problem", {})
    if not isinstance(prob, dict):
        raise ConfigError("problem", "expected an object")
    _check_unknown(prob, ("delta", "f"), "problem")
    delta = _num(prob, "delta", "problem", default=0.5)
    _check_delta(delta, task, "problem.delta")
    problem = {"delta": delta, "f": _parse_source(prob.get("f", 1.0), "problem.f")}

    solver = doc.get("solver", {})
    if not isinstance(solver, dict):
        raise ConfigError("solver", "expected an object")
    _check_unknown(solver, _SOLVER_FIELDS, "solver")
    solver = copy.deepcopy(solver)
    try:
        SolverConfig(**{k: (tuple(v) if k == "n_schedule" else v) for k, v in solver.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError("solver", str(exc)) from None

    extremal = doc.get("extremal", {})
    _check_unknown(extremal, ("samples", "starts", "slack"), "extremal")
    extremal = {
        "samples": _num(extremal, "samples", "extremal", default=1000, integer=True),
        "starts": _num(extremal, "starts", "extremal", default=8, integer=True),
        "slack": _num(extremal, "slack", "extremal", default=0.01),
    }
    if extremal["samples"] < 1 or extremal["starts"] < 2:
        raise ConfigError("extremal", "need samples >= 1 and starts >= 2")

    verify = doc.get("verify", {})
    _check_unknown(verify, ("compact_margin", "corrupt_report"), "verify")
    verify = {
        "compact_margin": _num(verify, "compact_margin", "verify", default=3, integer=True),
        "corrupt_report": bool(verify.get("corrupt_report", False)),
    }

    sweep = doc.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError("sweep", "expected an object")
    _check_unknown(sweep, SWEEP_AXES, "sweep")
    sweep = {k: list(v) for k, v in sweep.items()}
    for k, values in sweep.items():
        for i, v in enumerate(values):
            sub = {k: v}
            _num(sub, k, f"sweep.{k}[{i}]", integer=k == "nodes")
            if k == "delta":
                _check_delta(v, "sweep", f"sweep.delta[{i}]")
            elif k == "p":
                _check_operator_values(v, operator["s"], f"sweep.p[{i}]")
            elif k == "s":
                _check_operator_values(operator["p"], v, f"sweep.s[{i}]")
    if task == "sweep" and not any(sweep.values()):
        raise ConfigError("sweep", "task=sweep needs at least one non-empty axis")

    cfg = ExperimentConfig(
        task=task,
        grid=grid,
        operator=operator,
        problem=problem,
        solver=solver,
        extremal=extremal,
        verify=verify,
        sweep=sweep,
        output=str(doc.get("output", "out")),
        deterministic=bool(doc.get("deterministic", False)),
        seed=_num(doc, "seed", "<document>", default=0, integer=True),
        threads=_num(doc, "threads", "<document>", default=1, integer=True),
    )
    if cfg.seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    if cfg.threads < 1:
        raise ConfigError("threads", "must be >= 1")
    try:
        cfg.build_grid()
    except GridError as exc:
        raise ConfigError("grid", str(exc)) from None
    return cfg
