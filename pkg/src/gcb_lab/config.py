"""Experiment configuration: TOML (or JSON) files validated against a schema.

Structural problems are reported by :mod:`jsonschema`; semantic problems
(unknown model parameters, checkpoints off the grid, ...) are gathered in
the same list, so a bad file yields every error at once, each naming the
offending key path.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import jsonschema

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

THEOREMS = ("ou", "brownian", "gradient", "coupling", "convex", "descente",
            "faible_descente", "nonmarkov")
FORMATS = ("json", "csv", "md")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_NUM_OR_VEC = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 1}]}


def _table(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _table(
    {
        "experiment": _table(
            {
                "id": {"type": "string", "pattern": "^[a-z0-9][a-z0-9_-]*$"},
                "title": {"type": "string"},
                "topic": {"type": "string"},
                "runtime": {"type": "string"},
                "expect": {"enum": ["PASS", "FAIL", "INCONCLUSIVE"]},
            },
            ("id",),
        ),
        "model": _table(
            {"id": {"type": "string"}, "params": {"type": "object"}},
            ("id",),
        ),
        "init": _table(
            {
                "law": {"enum": ["point", "gaussian", "heavytail", "file"]},
                "x0": _NUM_OR_VEC,
                "mean": _NUM_OR_VEC,
                "var": {"oneOf": [_NONNEG, {"type": "array", "items": _NONNEG, "minItems": 1}]},
                "path": {"type": "string"},
            },
            ("law",),
        ),
        "grid": _table(
            {
                "t0": _NONNEG,
                "t1": _NONNEG,
                "dt": _POS,
                "checkpoints": {"type": "array", "items": _NONNEG, "minItems": 1},
            },
            ("t1", "dt"),
        ),
        "run": _table(
            {
                "n_paths": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "workers": {"type": "integer", "minimum": 1},
            },
            ("n_paths",),
        ),
        "bound": _table(
            {"theorem": {"enum": list(THEOREMS)}, "params": {"type": "object"}},
            ("theorem",),
        ),
        "estimators": _table(
            {
                "family": _table(
                    {
                        "n_random": {"type": "integer", "minimum": 0},
                        "scales": {"type": "array", "items": _POS, "minItems": 1},
                        "truncations": {"type": "array", "items": _POS},
                        "seed": {"type": "integer", "minimum": 0},
                    }
                ),
                "exp_square": _table(
                    {"a": {"oneOf": [_POS, {"const": "admissible"}]},
                     "fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}
                ),
                "chernoff": {"type": "boolean"},
                "coupling": _table({"x": _NUM_OR_VEC, "y": _NUM_OR_VEC}, ("x", "y")),
                "profile": {"type": "boolean"},
                "odd_moments": {"type": "boolean"},
                "burkholder": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            }
        ),
        "output": _table(
            {"dir": {"type": "string"},
             "formats": {"type": "array", "items": {"enum": list(FORMATS)}}}
        ),
    },
    ("experiment", "model", "init", "grid", "run", "bound"),
)

BOUND_PARAMS = {
    "ou": {"d0", "kappa", "sigma"},
    "brownian": {"d0", "c2sq"},
    "gradient": {"d0", "c1", "c2", "rho"},
    "coupling": {"d0", "c2sq"},
    "convex": {"d0", "kappa", "a_norm"},
    "descente": {"alpha_exp", "y_star", "C"},
    "faible_descente": {"alpha", "beta", "theta", "d0", "mu_d"},
    "nonmarkov": {"M", "kappa", "a0_init", "fraction"},
}


class ConfigError(ValueError):
    """Carries every problem found, each as ``"key.path: message"``."""

    def __init__(self, errors: list[str], source: str = ""):
        self.errors = list(errors)
        self.source = source
        head = f"{source}: " if source else ""
        super().__init__(head + "; ".join(self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    model_id: str
    model_params: dict
    init: dict
    t0: float
    t1: float
    dt: float
    checkpoints: tuple
    n_paths: int
    seed: int
    theorem: str
    bound_params: dict = field(default_factory=dict)
    estimators: dict = field(default_factory=dict)
    workers: int = 1
    title: str = ""
    topic: str = ""
    runtime: str = ""
    expect: Optional[str] = None
    output_dir: Optional[str] = None
    formats: tuple = ("json", "csv")
    source: str = ""

    def with_overrides(self, seed: Optional[int] = None, n_paths: Optional[int] = None,
                       dt: Optional[float] = None, workers: Optional[int] = None,
                       output_dir: Optional[str] = None) -> "ExperimentConfig":
        """Return a copy with command-line overrides applied and re-validated."""
        raw = self.to_dict()
        if seed is not None:
            raw["run"]["seed"] = seed
        if n_paths is not None:
            raw["run"]["n_paths"] = n_paths
        if dt is not None:
            raw["grid"]["dt"] = dt
        if workers is not None:
            raw["run"]["workers"] = workers
        if output_dir is not None:
            raw.setdefault("output", {})["dir"] = output_dir
        return from_dict(raw, self.source)

    def to_dict(self) -> dict:
        out = {
            "experiment": {"id": self.id},
            "model": {"id": self.model_id, "params": copy.deepcopy(self.model_params)},
            "init": copy.deepcopy(self.init),
            "grid": {"t0": self.t0, "t1": self.t1, "dt": self.dt,
                     "checkpoints": list(self.checkpoints)},
            "run": {"n_paths": self.n_paths, "seed": self.seed, "workers": self.workers},
            "bound": {"theorem": self.theorem, "params": copy.deepcopy(self.bound_params)},
            "estimators": copy.deepcopy(self.estimators),
            "output": {"formats": list(self.formats)},
        }
        for key in ("title", "topic", "runtime", "expect"):
            val = getattr(self, key)
            if val:
                out["experiment"][key] = val
        if self.output_dir is not None:
            out["output"]["dir"] = self.output_dir
        return out


def _path(parts) -> str:
    return ".".join(str(p) for p in parts) or "<root>"


def _schema_errors(raw: Any) -> list[str]:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errs = []
    for e in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        where = list(e.absolute_path)
        if e.validator == "additionalProperties":
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            errs.extend(f"{_path(where + [k])}: unknown key" for k in extra)
        elif e.validator == "required":
            missing = [k for k in e.validator_value if k not in e.instance]
            errs.extend(f"{_path(where + [k])}: required key missing" for k in missing)
        else:
            errs.append(f"{_path(where)}: {e.message}")
    return errs


def _semantic_errors(raw: dict) -> list[str]:
    from .engine import TimeGrid
    from .laws import LawError, build_law
    from .processes import ModelError, build_model

    errs = []
    spec = None
    params = raw["model"].get("params", {})
    try:
        spec = build_model(raw["model"]["id"], params)
    except (ModelError, TypeError, ValueError) as exc:
        key = "model.id" if "unknown model id" in str(exc) else "model.params"
        errs.append(f"{key}: {exc}")
    if spec is not None:
        init = raw["init"]
        if init.get("law") == "file" and "path" not in init:
            errs.append("init.path: required for law = 'file'")
        else:
            try:
                build_law(init, spec.dim)
            except (LawError, OSError, ValueError) as exc:
                errs.append(f"init: {exc}")
    g = raw["grid"]
    t0 = float(g.get("t0", 0.0))
    grid = None
    try:
        grid = TimeGrid(t0, float(g["t1"]), float(g["dt"]))
    except ValueError as exc:
        errs.append(f"grid: {exc}")
    if grid is not None:
        chk = g.get("checkpoints", [g["t1"]])
        for i, t in enumerate(chk):
            try:
                grid.index(float(t))
            except ValueError as exc:
                errs.append(f"grid.checkpoints.{i}: {exc}")
        if any(b < a for a, b in zip(chk, chk[1:])):
            errs.append("grid.checkpoints: must be non-decreasing")
    theorem = raw["bound"]["theorem"]
    for k in sorted(set(raw["bound"].get("params", {})) - BOUND_PARAMS[theorem]):
        errs.append(f"bound.params.{k}: unknown parameter for theorem {theorem!r}")
    for k, v in raw["bound"].get("params", {}).items():
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            errs.append(f"bound.params.{k}: must be a finite number")
    return errs


def from_dict(raw: dict, source: str = "") -> ExperimentConfig:
    errs = _schema_errors(raw)
    if errs:
        raise ConfigError(errs, source)
    errs = _semantic_errors(raw)
    if errs:
        raise ConfigError(errs, source)
    e, g, r, b = raw["experiment"], raw["grid"], raw["run"], raw["bound"]
    out = raw.get("output", {})
    return ExperimentConfig(
        id=e["id"],
        title=e.get("title", ""),
        topic=e.get("topic", ""),
        runtime=e.get("runtime", ""),
        expect=e.get("expect"),
        model_id=raw["model"]["id"],
        model_params=copy.deepcopy(raw["model"].get("params", {})),
        init=copy.deepcopy(raw["init"]),
        t0=float(g.get("t0", 0.0)),
        t1=float(g["t1"]),
        dt=float(g["dt"]),
        checkpoints=tuple(float(t) for t in g.get("checkpoints", [g["t1"]])),
        n_paths=int(r["n_paths"]),
        seed=int(r.get("seed", 0)),
        workers=int(r.get("workers", 1)),
        theorem=b["theorem"],
        bound_params=dict(b.get("params", {})),
        estimators=copy.deepcopy(raw.get("estimators", {})),
        output_dir=out.get("dir"),
        formats=tuple(out.get("formats", ("json", "csv"))),
        source=source,
    )


def parse_text(text: str, source: str = "") -> dict:
    """Parse TOML, falling back to JSON when the text looks like an object."""
    stripped = text.lstrip()
    try:
        if stripped.startswith("{"):
            return json.loads(text)
        return tomllib.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError([f"<root>: parse error: {exc}"], source) from None


def shipped_dir() -> Path:
    return Path(str(resources.files("gcb_lab") / "experiments"))


def shipped_ids() -> list[str]:
    return sorted(p.stem for p in shipped_dir().glob("*.toml"))


def resolve(name: str) -> Path:
    """A file path, or the id of a shipped experiment."""
    p = Path(name)
    if p.is_file():
        return p
    cand = shipped_dir() / f"{name}.toml"
    if cand.is_file():
        return cand
    raise ConfigError([f"<root>: no config file or shipped experiment named {name!r}"], name)


def load_config(name) -> ExperimentConfig:
    path = resolve(str(name))
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"<root>: {exc}"], str(path)) from None
    return from_dict(parse_text(text, str(path)), str(path))


def load_params(path) -> dict:
    """Flat parameter table from a TOML/JSON file (used by ``bounds`` and ``estimate``)."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"<root>: {exc}"], str(p)) from None
    raw = parse_text(text, str(p))
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: parameter file must hold a table"], str(p))
    return raw


def replace(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return dataclasses.replace(cfg, **kw)
