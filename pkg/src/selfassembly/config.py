"""Run configuration and report documents.

A run is described by one JSON document. Every random quantity in a run
derives from its top-level ``seed`` through :func:`selfassembly.design.derive_seed`
with a purpose label (``"design"``, ``"validate"``, ``"simulate"``), so a
report plus its echoed configuration is enough to reproduce it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib.metadata import PackageNotFoundError, version

import jsonschema

from .core import Geometry
from .design import DesignOptions, derive_seed
from .roa import Pattern
from .steady import NoiseParams

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0+unknown"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


CONFIG_SCHEMA = {
    "type": "object",
    "required": ["geometry", "pattern", "sigma"],
    "additionalProperties": False,
    "properties": {
        "geometry": {
            "type": "object",
            "required": ["N", "d0", "gaps", "n"],
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 2, "maximum": 10_000},
                "d0": {"type": "number", "exclusiveMinimum": 0},
                "gaps": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
                "n": {"type": "integer", "minimum": 1},
            },
        },
        "pattern": {"type": "string", "pattern": "^[01]+$"},
        "sigma": {"type": "number", "exclusiveMinimum": 0, "maximum": 100},
        "model": {"enum": ["continuous", "discrete", "both"]},
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "restarts": {"type": "integer", "minimum": 1, "maximum": 1000},
                "u_max": {"type": "number", "exclusiveMinimum": 0},
                "u_min": {"type": "number", "exclusiveMinimum": 0},
                "samples": {"type": "integer", "minimum": 1000},
                "final_samples": {"type": "integer", "minimum": 1000},
                "maxfev": {"type": "integer", "minimum": 10},
                "max_sequences": {"type": "integer", "minimum": 1},
                "restart_spread": {"type": "number", "minimum": 0},
                "xatol": {"type": "number", "exclusiveMinimum": 0},
                "fatol": {"type": "number", "exclusiveMinimum": 0},
                "surrogate": {"enum": ["inf-norm", "mean-square"]},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "sequence": {
            "type": ["array", "null"],
            "items": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        },
        "n_min": {"type": ["integer", "null"], "minimum": 1},
        "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
        "trials": {"type": "integer", "minimum": 100},
        "dt": {"type": "number", "exclusiveMinimum": 0},
    },
}


@dataclass
class RunConfig:
    n_cells: int
    d0: float
    gaps: list[int]
    n: int
    pattern: str
    sigma: float
    model: str = "continuous"
    optimizer: dict = field(default_factory=dict)
    seed: int = 0
    sequence: list[list[int]] | None = None
    n_min: int | None = None
    epsilon: float = 0.01
    trials: int = 2000
    dt: float = 1e-4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if sum(self.gaps) != self.n_cells:
            raise ConfigError(f"gaps sum to {sum(self.gaps)}, expected N={self.n_cells}", "geometry.gaps")
        if not 0 < self.n < self.n_cells:
            raise ConfigError("need 0 < n < N", "geometry.n")
        if len(self.pattern) != self.n_cells:
            raise ConfigError(f"pattern has length {len(self.pattern)}, expected N={self.n_cells}", "pattern")
        if self.pattern.count("1") != self.n:
            raise ConfigError(f"pattern has {self.pattern.count('1')} ones, expected n={self.n}", "pattern")
        c = len(self.gaps)
        if self.sequence is not None:
            flat = sorted(e for b in self.sequence for e in b)
            if flat != list(range(1, c)):
                raise ConfigError(f"blocks must cover interior electrodes 1..{c - 1} exactly once", "sequence")
        if self.n_min is not None and self.n_min * c > self.n_cells:
            raise ConfigError(f"{c} gaps of at least {self.n_min} cells exceed N", "n_min")
        if self.model not in ("continuous", "discrete", "both"):
            raise ConfigError(f"unknown model {self.model!r}", "model")
        unknown = set(self.optimizer) - set(DesignOptions().to_dict())
        if unknown:
            raise ConfigError(f"unknown options {sorted(unknown)}", "optimizer")

    @property
    def geometry(self) -> Geometry:
        return Geometry.from_gaps(self.gaps, self.d0, self.n)

    @property
    def pattern_obj(self) -> Pattern:
        return Pattern.from_string(self.pattern)

    @property
    def noise(self) -> NoiseParams:
        return NoiseParams(self.sigma)

    def design_options(self) -> DesignOptions:
        return DesignOptions(**{**self.optimizer, "seed": derive_seed(self.seed, "design")})

    def to_dict(self) -> dict:
        d = {
            "geometry": {"N": self.n_cells, "d0": self.d0, "gaps": list(self.gaps), "n": self.n},
            "pattern": self.pattern,
            "sigma": self.sigma,
            "model": self.model,
            "optimizer": dict(self.optimizer),
            "seed": self.seed,
            "sequence": None if self.sequence is None else [list(b) for b in self.sequence],
            "n_min": self.n_min,
            "epsilon": self.epsilon,
            "trials": self.trials,
            "dt": self.dt,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            jsonschema.validate(d, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = ".".join(str(p) for p in exc.absolute_path)
            raise ConfigError(exc.message, path) from None
        gd = d["geometry"]
        return cls(
            n_cells=gd["N"], d0=float(gd["d0"]), gaps=list(gd["gaps"]), n=gd["n"],
            pattern=d["pattern"], sigma=float(d["sigma"]),
            model=d.get("model", "continuous"),
            optimizer=dict(d.get("optimizer", {})),
            seed=d.get("seed", 0),
            sequence=d.get("sequence"),
            n_min=d.get("n_min"),
            epsilon=float(d.get("epsilon", 0.01)),
            trials=d.get("trials", 2000),
            dt=float(d.get("dt", 1e-4)),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


_PROB = {
    "type": "object",
    "required": ["value", "std_err", "method"],
    "properties": {
        "value": {"type": "number", "minimum": 0, "maximum": 1},
        "std_err": {"type": "number", "minimum": 0},
        "method": {"type": "string"},
    },
}

_STAGE = {
    "type": "object",
    "required": ["active", "u", "x_ss", "p_stage", "duration"],
    "properties": {
        "active": {"type": "array", "items": {"type": "integer"}},
        "u": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "x_ss": {"type": "array", "items": {"type": "number"}},
        "p_stage": _PROB,
        "duration": {"type": "number", "exclusiveMinimum": 0},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["command", "config", "config_hash", "version", "seeds", "timings"],
    "properties": {
        "command": {"enum": ["design", "validate", "simulate", "sweep"]},
        "config": CONFIG_SCHEMA,
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "version": {"type": "string"},
        "seeds": {"type": "object", "additionalProperties": {"type": "integer"}},
        "timings": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
        "schedule": {
            "type": "object",
            "required": ["geometry", "pattern", "stages", "static", "switch_times", "p_total"],
            "properties": {
                "stages": {"type": "array", "items": _STAGE},
                "static": _STAGE,
                "switch_times": {"type": "array", "items": {"type": "number"}},
                "p_total": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "p_total": {"type": "number", "minimum": 0, "maximum": 1},
        "stage_probabilities": {"type": "array", "items": _PROB},
        "epsilon": {
            "type": "object",
            "required": ["requested", "achieved", "met"],
            "properties": {
                "requested": {"type": "number"},
                "achieved": {"type": "number"},
                "met": {"type": "boolean"},
            },
        },
        "sequence_table": {"type": "array"},
        "electrode_table": {"type": "array"},
        "validation": {"type": "object", "additionalProperties": _PROB},
        "validation_gap": {"type": "number"},
    },
}


@dataclass
class RunReport:
    command: str
    config: dict
    config_hash: str
    seeds: dict
    timings: dict = field(default_factory=dict)
    version: str = __version__
    schedule: dict | None = None
    p_total: float | None = None
    stage_probabilities: list | None = None
    epsilon: dict | None = None
    sequence_table: list | None = None
    electrode_table: list | None = None
    validation: dict | None = None
    validation_gap: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def validate(self) -> "RunReport":
        jsonschema.validate(self.to_dict(), REPORT_SCHEMA)
        return self

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
