"""Run configuration: nested dataclasses with validation, JSON/YAML loading,
dotted-key overrides and a canonical hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

EXPERIMENTS = ("massgap", "volume", "largen", "factorization", "cluster-compare", "beta-derivative", "sample")
SAMPLER_KINDS = ("un", "joint", "langevin")


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


@dataclass
class GeometryConfig:
    d: int = 2
    L: int = 2


@dataclass
class ModelConfig:
    N: int = 2
    beta: float = 0.1
    beta_map: dict | None = None     # plaquette index -> beta_p (per-plaquette mode)
    c_d_star: float = 1.0


@dataclass
class SamplerConfig:
    kind: str = "un"
    sweeps: int = 10000
    burn_in: int = 500
    h: float = 0.01
    n_inner: int = 16
    gradient: str = "quadrature"
    nodes: int = 12
    n_batches: int = 32
    reunitarize_every: int = 100
    checkpoint_every: int = 0


@dataclass
class ExperimentConfig:
    name: str = "sample"
    params: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    seed: int = 0
    output: str = "runs/default"
    threads: int = 1

    # -- validation --------------------------------------------------------
    def validate(self) -> "RunConfig":
        g, m, s, e = self.geometry, self.model, self.sampler, self.experiment
        _check(g.d >= 2, "geometry.d", "must be >= 2")
        _check(g.L >= 1, "geometry.L", "must be >= 1")
        _check(m.N >= 1, "model.N", "must be >= 1")
        _check(m.beta >= 0, "model.beta", "must be >= 0")
        _check(m.c_d_star > 0, "model.c_d_star", "must be > 0")
        if m.beta_map is not None:
            _check(isinstance(m.beta_map, dict), "model.beta_map", "must be a mapping")
            for k, v in m.beta_map.items():
                _check(str(k).isdigit() and float(v) >= 0, f"model.beta_map.{k}",
                       "keys must be plaquette indices and values >= 0")
        _check(s.kind in SAMPLER_KINDS, "sampler.kind", f"must be one of {SAMPLER_KINDS}")
        _check(s.sweeps >= 1, "sampler.sweeps", "must be >= 1")
        _check(s.burn_in >= 0, "sampler.burn_in", "must be >= 0")
        _check(0 < s.h <= 0.1, "sampler.h", "must be in (0, 0.1]")
        _check(s.n_inner >= 1, "sampler.n_inner", "must be >= 1")
        _check(s.gradient in ("quadrature", "mc"), "sampler.gradient", "must be quadrature or mc")
        _check(s.nodes >= 2, "sampler.nodes", "must be >= 2")
        _check(s.n_batches >= 8, "sampler.n_batches", "must be >= 8")
        _check(s.reunitarize_every >= 1, "sampler.reunitarize_every", "must be >= 1")
        _check(s.checkpoint_every >= 0, "sampler.checkpoint_every", "must be >= 0")
        _check(e.name in EXPERIMENTS, "experiment.name", f"unknown experiment {e.name!r}; one of {EXPERIMENTS}")
        _check(isinstance(e.params, dict), "experiment.params", "must be a mapping")
        _check(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        _check(self.threads >= 1, "threads", "must be >= 1")
        _check(bool(self.output), "output", "must be non-empty")
        return self

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        kw = _fill(cls, data, "")
        return cls(**kw).validate()

    def with_overrides(self, assignments) -> "RunConfig":
        d = self.to_dict()
        for a in assignments:
            apply_override(d, a)
        return RunConfig.from_dict(d)


_SECTIONS = {"geometry": GeometryConfig, "model": ModelConfig, "sampler": SamplerConfig,
             "experiment": ExperimentConfig}


def _check(ok: bool, key: str, msg: str):
    if not ok:
        raise ConfigError(f"{key}: {msg}")


def _coerce(key: str, value: Any, default: Any):
    if default is None or isinstance(default, dict):
        return value
    if isinstance(default, bool):
        _check(isinstance(value, bool), key, "expected a boolean")
        return value
    if isinstance(default, int):
        _check(isinstance(value, int) and not isinstance(value, bool), key, "expected an integer")
        return value
    if isinstance(default, float):
        _check(isinstance(value, (int, float)) and not isinstance(value, bool), key, "expected a number")
        return float(value)
    if isinstance(default, str):
        _check(isinstance(value, str), key, "expected a string")
        return value
    return value


def _fill(cls, data: dict, prefix: str) -> dict:
    known = {f.name: f for f in fields(cls)}
    out = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if k not in known:
            raise ConfigError(f"{key}: unknown key")
        if k in _SECTIONS and cls is RunConfig:
            _check(isinstance(v, dict), key, "expected a mapping")
            out[k] = _SECTIONS[k](**_fill(_SECTIONS[k], v, key + "."))
        else:
            out[k] = _coerce(key, v, getattr(cls(), k))
    if cls is ModelConfig and out.get("beta_map") is not None:
        out["beta_map"] = {str(k): float(v) for k, v in out["beta_map"].items()}
    return out


def _parse_scalar(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def apply_override(d: dict, assignment: str) -> None:
    """Apply ``a.b.c=value`` to a nested dict; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"{assignment}: override must look like key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    cur = d
    for p in parts[:-1]:
        if not isinstance(cur, dict) or p not in cur:
            raise ConfigError(f"{key}: unknown key")
        if cur[p] is None and p in ("params", "beta_map"):
            cur[p] = {}
        cur = cur[p]
    leaf = parts[-1]
    if not isinstance(cur, dict) or (leaf not in cur and not (len(parts) >= 2 and parts[-2] in ("params", "beta_map"))):
        raise ConfigError(f"{key}: unknown key")
    cur[leaf] = _parse_scalar(text)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return RunConfig.from_dict(data or {})


def diff_configs(a: dict, b: dict, prefix: str = "") -> list[str]:
    """Human-readable list of differing keys between two nested dicts."""
    out = []
    for k in sorted(set(a) | set(b), key=str):
        key = f"{prefix}{k}"
        va, vb = a.get(k, "<missing>"), b.get(k, "<missing>")
        if isinstance(va, dict) and isinstance(vb, dict):
            out += diff_configs(va, vb, key + ".")
        elif va != vb:
            out.append(f"{key}: {va!r} -> {vb!r}")
    return out
