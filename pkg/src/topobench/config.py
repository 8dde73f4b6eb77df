"""Run configuration files (YAML, schema version 1)."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import jsonschema
import yaml

from .bench import CASE_ALIASES, canonical_case, method_configs, scaled_dims
from .convergence import ConvergenceConfig
from .problem import METHODS, MethodConfig

SCHEMA_VERSION = 1
LARGE_ELEMENTS = 200_000

_PARAM_NAMES = [f.name for f in fields(MethodConfig) if f.name not in ("method", "convergence")]
_CONV_NAMES = [f.name for f in fields(ConvergenceConfig)]

_number = {"type": "number"}
_overrides = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        **{k: _number for k in _PARAM_NAMES},
        "n_steps": {"type": "integer", "minimum": 1},
        "convergence": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **{k: _number for k in _CONV_NAMES},
                "tol_J": {"type": ["number", "null"]},
                "window": {"type": "integer", "minimum": 1},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
    },
}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "topobench run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "case", "methods"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "case": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": sorted(set(CASE_ALIASES) | set(CASE_ALIASES.values()))},
                "scale": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "ndim": {"enum": [2, 3]},
            },
        },
        "methods": {"type": "array", "minItems": 1, "uniqueItems": True,
                    "items": {"enum": list(METHODS)}},
        "overrides": {"type": "object", "additionalProperties": False,
                      "properties": {m: _overrides for m in METHODS}},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "export_fields": {"type": "boolean"},
                "export_history": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer"},
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every schema violation found."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))


@dataclass
class RunConfig:
    """One benchmark case, the methods to run on it and per-method overrides.

    ``seed`` is recorded for provenance only; no algorithm draws random numbers.
    """

    case: str
    methods: list[str]
    scale: float = 0.12
    ndim: int = 3
    overrides: dict[str, dict[str, Any]] = field(default_factory=dict)
    out_dir: str = "out"
    export_fields: bool = True
    export_history: bool = True
    seed: int = 0

    def __post_init__(self):
        self.case = canonical_case(self.case)
        if not self.methods:
            raise ConfigError(["methods: at least one method is required"])

    def method_config(self, method: str) -> MethodConfig:
        """Table defaults for the case with this config's overrides applied."""
        cfg = method_configs(self.case)[method]
        over = dict(self.overrides.get(method, {}))
        return cfg.with_overrides(**over) if over else cfg

    def element_count(self) -> int:
        n = 1
        for d in scaled_dims(self.case, self.scale, self.ndim):
            n *= d
        return n

    def is_large(self) -> bool:
        return self.element_count() > LARGE_ELEMENTS

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "case": {"name": self.case, "scale": self.scale, "ndim": self.ndim},
            "methods": list(self.methods),
            "output": {"dir": self.out_dir, "export_fields": self.export_fields,
                       "export_history": self.export_history},
            "seed": self.seed,
        }
        if self.overrides:
            d["overrides"] = {k: dict(v) for k, v in self.overrides.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        validate(d)
        case, out = d["case"], d.get("output", {})
        return cls(case=case["name"], methods=list(d["methods"]),
                   scale=float(case.get("scale", 0.12)), ndim=int(case.get("ndim", 3)),
                   overrides={k: dict(v) for k, v in d.get("overrides", {}).items()},
                   out_dir=out.get("dir", "out"), export_fields=out.get("export_fields", True),
                   export_history=out.get("export_history", True), seed=int(d.get("seed", 0)))


def validate(d: Any) -> None:
    """Raise :class:`ConfigError` listing all schema violations."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(d), key=lambda e: list(map(str, e.path)))
    if errors:
        raise ConfigError([f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors])


def loads(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML syntax: {exc}"]) from exc
    return RunConfig.from_dict(data)


def load(path: str | Path) -> RunConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def dumps(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def dump(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps(cfg), encoding="utf-8")
    return path


def schema_dict() -> dict[str, Any]:
    """A copy of the published JSON schema."""
    return copy.deepcopy(SCHEMA)
