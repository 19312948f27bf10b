"""Run configuration: a YAML tree with dotted command-line overrides."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .continuation import ContinuationConfig
from .discretization import Mesh1D
from .errors import ConfigError, DomainError
from .problem import ProblemSpec
from .solvers import SolveOptions

OUTPUT_DIR_ENV = "PLAPCONT_OUTPUT_DIR"

# default tolerance of each verification check, keyed by check name
DEFAULT_TOLERANCES = {
    "eigen_p2": 1e-3,
    "eigen_p3": 5e-3,
    "torsion_p2": 1e-4,
    "torsion_p3": 1e-3,
    "base_scaling": 1e-2,
    "fold_bound": 1e-2,
    "multiplicity": 0.0,
    "nonexistence": 0.0,
    "upper_slope": 2e-2,
    "asymptote": 2e-2,
    "asymptote_ratio": 3e-2,
    "eps_monotone": 1e-4,
    "monotone_iteration": 1e-6,
    "sandwich": 0.0,
    "uniqueness": 10.0,
    "jacobian": 1e-5,
    "max_location": 0.25,
}


@dataclass
class VerifyOptions:
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    p_grid: list = field(default_factory=lambda: [1.5, 2.0, 3.0])
    delta_grid: list = field(default_factory=lambda: [0.5, 1.5])
    eps_list: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    n_list: list = field(default_factory=lambda: [5, 10, 20])
    truncation_eps: float = 0.1
    base_lambdas: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2])
    nonexistence_factor: float = 1.1
    jacobian_states: int = 20
    workers: int = 1

    def __post_init__(self):
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown key verify.tolerances.{sorted(unknown)[0]}")
        self.tolerances = {**DEFAULT_TOLERANCES, **self.tolerances}


@dataclass
class RunConfig:
    spec: ProblemSpec = field(default_factory=ProblemSpec)
    mesh: dict = field(default_factory=lambda: {"num_interior": 400, "grading": "graded", "gamma": 2.0})
    solve: SolveOptions = field(default_factory=SolveOptions)
    continuation: ContinuationConfig = field(default_factory=ContinuationConfig)
    verify: VerifyOptions = field(default_factory=VerifyOptions)
    output_dir: str = "out"
    seed: int = 0

    def build_mesh(self, spec: ProblemSpec | None = None) -> Mesh1D:
        spec = spec or self.spec
        return Mesh1D(
            int(self.mesh["num_interior"]), spec.domain_length, str(self.mesh["grading"]), float(self.mesh["gamma"])
        )

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "mesh": dict(self.mesh),
            "solve": asdict(self.solve),
            "continuation": asdict(self.continuation),
            "verify": asdict(self.verify),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }


_SECTIONS = {
    "spec": ProblemSpec,
    "solve": SolveOptions,
    "continuation": ContinuationConfig,
    "verify": VerifyOptions,
}
_MESH_KEYS = {"num_interior", "grading", "gamma"}
_TOP_KEYS = set(_SECTIONS) | {"mesh", "output_dir", "seed"}


def _coerce(cls, section: str, data) -> object:
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    names = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
    if cls is ProblemSpec:
        try:
            return ProblemSpec.from_dict({**ProblemSpec().to_dict(), **data})
        except (DomainError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid spec: {exc}") from exc
    defaults = cls()
    typed = {}
    for key, value in data.items():
        try:
            typed[key] = _like(getattr(defaults, key), value)
        except (TypeError, ValueError, OverflowError) as exc:
            raise ConfigError(f"invalid value for {section}.{key}: {value!r}") from exc
    try:
        return cls(**typed)
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section}: {exc}") from exc


def _number(value, kind):
    # YAML 1.1 reads "1e-6" as a string
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise TypeError(f"expected a number, got {value!r}")
    if kind is int:
        as_float = float(value)
        if as_float != int(as_float):
            raise ValueError(f"expected an integer, got {value!r}")
        return int(as_float)
    return float(value)


def _like(default, value):
    """Convert ``value`` to the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {value!r}")
        return value
    if isinstance(default, (int, float)):
        return _number(value, type(default))
    if isinstance(default, list):
        if not isinstance(value, list):
            raise TypeError(f"expected a list, got {value!r}")
        kind = type(default[0]) if default else float
        return [_number(v, kind) for v in value]
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise TypeError(f"expected a mapping, got {value!r}")
        return {k: _number(v, float) for k, v in value.items()}
    return value


def config_from_dict(data: dict | None) -> RunConfig:
    """Validate a nested mapping into a :class:`RunConfig`; unknown keys are errors."""
    data = dict(data or {})
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key}")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        if section in data:
            kwargs[section] = _coerce(cls, section, data[section])
    if "mesh" in data:
        mesh = data["mesh"]
        if not isinstance(mesh, dict):
            raise ConfigError("section 'mesh' must be a mapping")
        for key in mesh:
            if key not in _MESH_KEYS:
                raise ConfigError(f"unknown key mesh.{key}")
        merged = {**RunConfig().mesh, **mesh}
        try:
            Mesh1D(int(merged["num_interior"]), 1.0, str(merged["grading"]), float(merged["gamma"]))
        except (DomainError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid mesh: {exc}") from exc
        kwargs["mesh"] = merged
    if "output_dir" in data:
        kwargs["output_dir"] = str(data["output_dir"])
    if "seed" in data:
        if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
            raise ConfigError("seed must be an integer")
        kwargs["seed"] = data["seed"]
    return RunConfig(**kwargs)


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` strings; values are parsed as YAML scalars."""
    data = dict(data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            child = node.get(part)
            child = dict(child) if isinstance(child, dict) else {}
            node[part] = child
            node = child
        try:
            node[parts[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value for {key}: {exc}") from exc
    return data


def load_config(path=None, overrides=None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping at the top level")
    return config_from_dict(apply_overrides(data, overrides))


def dump_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
