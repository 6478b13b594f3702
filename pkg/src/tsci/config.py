"""Run configuration: one strict JSON document drives every pipeline stage.

A run is reproducible from (config, code version); the config's canonical
hash names the run, and every artifact carries that id.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .agent import PpoConfig
from .causal import TsciConfig
from .envs import ENV_IDS
from .errors import ConfigError

# environment-specific training budgets used when the config omits total_steps
ENV_DEFAULT_STEPS = {"corridor-dodge": 2_000_000, "pellet-pursuit": 3_000_000}


@dataclass
class EvalConfig:
    episodes: int = 7        # paired rollouts per comparison
    t_eval: int | None = None  # rollout horizon; None = environment step cap

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("eval.episodes must be positive")


@dataclass
class RunConfig:
    env: str = "corridor-dodge"
    structure: str = "recurrent"
    m: int = 4
    algo: str = "ppo"
    seed: int = 0
    out_dir: str = "runs"
    agent: PpoConfig = field(default_factory=PpoConfig)
    tsci: TsciConfig = field(default_factory=TsciConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.env not in ENV_IDS:
            raise ConfigError(f"env must be one of {ENV_IDS}, got {self.env!r}")
        if self.m < 1 or self.m > 8:
            raise ConfigError(f"m must be in 1..8, got {self.m}")


_NESTED = {"agent": PpoConfig, "tsci": TsciConfig, "eval": EvalConfig}


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    """Strict construction: any key not in the schema is an error."""
    if not isinstance(data, dict):
        raise ConfigError("run config must be a JSON object")
    data = dict(data)
    env = data.get("env", "corridor-dodge")
    if env not in ENV_IDS:
        raise ConfigError(f"env must be one of {ENV_IDS}, got {env!r}")
    kwargs = {}
    for key, cls in _NESTED.items():
        sub = data.pop(key, None)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"{key!r} must be a JSON object")
        if key == "agent" and "total_steps" not in sub:
            sub = dict(sub, total_steps=ENV_DEFAULT_STEPS[env])
        kwargs[key] = _build(cls, sub, f"config.{key}")
    if "agent" not in kwargs:
        kwargs["agent"] = PpoConfig(total_steps=ENV_DEFAULT_STEPS[env])
    cfg = _build(RunConfig, {**data, **kwargs}, "config")
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def run_id(cfg: RunConfig) -> str:
    """Short run name: the first 12 hex digits of the config hash."""
    return config_hash(cfg)[:12]
