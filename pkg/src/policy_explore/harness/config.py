"""Experiment configuration: YAML documents layered over preset defaults.

A config names a preset and may override any part of the preset's default
document; ``--override a.b.c=value`` flags are applied last (values are
parsed as YAML; a mapping value is merged into an existing mapping).
"""

from __future__ import annotations

import copy
import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..exceptions import ConfigError

DEFAULT_SEEDS = list(range(10))
DEFAULT_TUNING_SEEDS = [1000, 1001, 1002]


class Preset(str, enum.Enum):
    OLR_DIM_SWEEP = "OlrDimSweep"
    BANDIT_D_VS_P = "BanditDvsP"
    HORIZON_SWEEP = "HorizonSweep"
    LQR_NOISE_SWEEP = "LqrNoiseSweep"
    VALIDATE_PROPERTIES = "ValidateProperties"

    @classmethod
    def parse(cls, name: str) -> "Preset":
        for p in cls:
            if name == p.value or name.lower() == p.value.lower():
                return p
        raise ConfigError(f"unknown preset {name!r}; choose from {[p.value for p in cls]}")


@dataclass
class ExperimentConfig:
    preset: Preset
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    tuning_seeds: list[int] = field(default_factory=lambda: list(DEFAULT_TUNING_SEEDS))
    algorithms: list[str] = field(default_factory=list)
    env: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    hyperparams: dict = field(default_factory=dict)
    budget: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset.value,
            "seeds": list(self.seeds),
            "tuning_seeds": list(self.tuning_seeds),
            "algorithms": list(self.algorithms),
            "env": copy.deepcopy(self.env),
            "grid": copy.deepcopy(self.grid),
            "hyperparams": copy.deepcopy(self.hyperparams),
            "budget": copy.deepcopy(self.budget),
            "options": copy.deepcopy(self.options),
        }

    # --- sweep structure -------------------------------------------------

    def swept_env(self) -> list[str]:
        """Env keys whose value is a list; their cartesian product defines the cells."""
        return [k for k, v in self.env.items() if isinstance(v, list)]

    def env_points(self) -> list[dict]:
        keys = self.swept_env()
        values = [self.env[k] for k in keys]
        points = []
        for combo in itertools.product(*values):
            point = dict(self.env)
            point.update(zip(keys, combo))
            points.append(point)
        return points

    def cell_key(self, env_point: dict) -> str:
        keys = self.swept_env()
        if not keys:
            return "default"
        return ";".join(f"{k}={env_point[k]}" for k in keys)

    def hyperparams_for(self, algorithm: str, cell_key: str) -> dict:
        table = self.hyperparams.get(algorithm, {}) or {}
        out = dict(table.get("default", {}) or {})
        out.update(table.get(cell_key, {}) or {})
        return out

    def grid_for(self, algorithm: str) -> list[dict]:
        """Grid points in declaration order (first key varies slowest)."""
        grid = self.grid.get(algorithm, self.grid.get("default"))
        if not grid:
            raise ConfigError(f"no tuning grid for algorithm {algorithm!r}")
        keys = list(grid)
        for k in keys:
            if not isinstance(grid[k], list) or not grid[k]:
                raise ConfigError(f"grid entry {algorithm}.{k} must be a non-empty list")
        return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from None
    return path, value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for text in overrides or ():
        path, value = parse_override(text)
        node = doc
        for part in path[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        if isinstance(value, dict) and isinstance(node.get(path[-1]), dict):
            # mappings merge, so keys that themselves contain '=' (cell keys) stay addressable
            node[path[-1]] = deep_merge(node[path[-1]], value)
        else:
            node[path[-1]] = value
    return doc


def read_document(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


_KNOWN = {"preset", "seeds", "tuning_seeds", "algorithms", "env", "grid", "hyperparams", "budget", "options"}


def build_config(preset: str | Preset | None = None, path=None, overrides=()) -> ExperimentConfig:
    """Preset defaults, then the YAML file at ``path``, then ``overrides``."""
    from .presets import get_preset

    user = read_document(path) if path is not None else {}
    name = preset if preset is not None else user.get("preset")
    if name is None:
        raise ConfigError("no preset given (positional argument or 'preset' key)")
    p = name if isinstance(name, Preset) else Preset.parse(str(name))
    if "preset" in user and Preset.parse(str(user["preset"])) is not p:
        raise ConfigError(f"config file is for preset {user['preset']!r}, not {p.value!r}")
    doc = deep_merge(get_preset(p).defaults(), {k: v for k, v in user.items() if k != "preset"})
    doc = apply_overrides(doc, overrides)
    unknown = set(doc) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    doc["preset"] = p
    cfg = ExperimentConfig(**doc)
    validate_config(cfg)
    return cfg


def _int_list(name, values) -> list[int]:
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{name} must be a non-empty list")
    try:
        out = [int(v) for v in values]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must contain integers") from None
    if any(v < 0 or v >= 2**64 for v in out):
        raise ConfigError(f"{name} must be 64-bit unsigned integers")
    if len(set(out)) != len(out):
        raise ConfigError(f"{name} contains duplicates")
    return out


def validate_config(cfg: ExperimentConfig) -> None:
    from .presets import get_preset

    cfg.seeds = _int_list("seeds", cfg.seeds)
    cfg.tuning_seeds = _int_list("tuning_seeds", cfg.tuning_seeds)
    overlap = set(cfg.seeds) & set(cfg.tuning_seeds)
    if overlap:
        raise ConfigError(f"tuning and evaluation seeds overlap: {sorted(overlap)}")
    for name in ("env", "grid", "hyperparams", "budget", "options"):
        if not isinstance(getattr(cfg, name), dict):
            raise ConfigError(f"{name} must be a mapping")
    if not isinstance(cfg.algorithms, list):
        raise ConfigError("algorithms must be a list")
    for k in cfg.swept_env():
        if not cfg.env[k]:
            raise ConfigError(f"env.{k} is an empty list")
    for k, v in cfg.budget.items():
        if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
            raise ConfigError(f"budget.{k} must be > 0")
    get_preset(cfg.preset).validate(cfg)
