"""Run configuration: YAML loading, validation, materialization and hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .agent import AgentConfig
from .env import ArrivalParams, EnvConfig
from .models import ChannelParams, ConfigError, RotorParams, WptParams
from .training import ALGORITHMS

_NESTED = {"channel": ChannelParams, "wpt": WptParams, "rotor": RotorParams, "arrivals": ArrivalParams}
REQUIRED = ("algorithm", "episodes", "seeds")


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    agent: AgentConfig
    algorithm: str
    episodes: int
    seeds: tuple[int, ...]
    out: str = "runs/run"
    ablate: tuple[str, ...] = ()
    eval_episodes: int = 10
    eval_seeds: tuple[int, ...] = (1000,)
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"run.algorithm: expected one of {list(ALGORITHMS)}, got {self.algorithm!r}")
        if self.episodes < 1:
            raise ConfigError("run.episodes must be >= 1")
        if not self.seeds:
            raise ConfigError("run.seeds must be a non-empty list")
        if self.eval_episodes < 1:
            raise ConfigError("run.eval_episodes must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("run.checkpoint_every must be >= 1")
        bad = set(self.ablate) - {"pfam", "per", "vrc"}
        if bad:
            raise ConfigError(f"run.ablate: unknown flag(s) {sorted(bad)}")

    @property
    def effective_agent(self) -> AgentConfig:
        return self.agent.ablate(*self.ablate) if self.ablate else self.agent


def _coerce(value: Any, tp, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if origin is typing.Literal:
        if value not in args:
            raise ConfigError(f"{path}: expected one of {list(args)}, got {value!r}")
        return value
    if origin is typing.Union or origin is types.UnionType:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
    raise ConfigError(f"{path}: unsupported field type {tp!r}")


def _build(cls, data: dict | None, path: str):
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    kwargs = {}
    for name, value in data.items():
        p = f"{path}.{name}"
        if name in _NESTED and cls is EnvConfig:
            kwargs[name] = _build(_NESTED[name], value, p)
        else:
            kwargs[name] = _coerce(value, hints[name], p)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def from_dict(raw: dict, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from a parsed document plus CLI overrides (non-None values win)."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    unknown = sorted(set(raw) - {"env", "agent", "run"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown top-level section")
    run = dict(raw.get("run") or {})
    env_raw = dict(raw.get("env") or {})
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "n_sensors":
            env_raw["n_sensors"] = v
        else:
            run[k] = v
    for key in REQUIRED:
        if key not in run:
            raise ConfigError(f"run.{key}: required field is missing")
    env = _build(EnvConfig, env_raw, "env")
    agent = _build(AgentConfig, raw.get("agent"), "agent")
    run_hints = typing.get_type_hints(RunConfig)
    kwargs = {}
    for name, value in run.items():
        if name in ("env", "agent") or name not in run_hints:
            raise ConfigError(f"run.{name}: unknown key")
        kwargs[name] = _coerce(value, run_hints[name], f"run.{name}")
    try:
        return RunConfig(env=env, agent=agent, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"run: {exc}") from exc


def load(path, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return from_dict(raw, overrides)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


def materialize(cfg: RunConfig) -> dict:
    """Every field, defaults included, in the same layout the loader reads."""
    run = {f.name: _plain(getattr(cfg, f.name)) for f in dataclasses.fields(cfg) if f.name not in ("env", "agent")}
    return {"env": _plain(cfg.env), "agent": _plain(cfg.agent), "run": run}


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(materialize(cfg), sort_keys=False)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(materialize(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def tiny_env(**kw) -> EnvConfig:
    """Small desk-scale scenario: 3 sensors on a 100 m square, 50 slots."""
    base = dict(n_sensors=3, x_max=100.0, y_max=100.0, start_x=50.0, start_y=50.0, horizon=50)
    base.update(kw)
    return EnvConfig(**base)
