"""Pipeline parameters: defaults, TOML config files and SUPERTRAJ_* environment overrides."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, fields

import tomli

from .clustering import DEFAULT_MAX_ITER, ConfigError, default_min_region, default_threshold
from .trajectories import DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_SIGMA

ENV_PREFIX = "SUPERTRAJ_"
MODES = ("joint", "flow")


@dataclass
class PipelineConfig:
    gamma: float = DEFAULT_GAMMA
    sigma: float = DEFAULT_SIGMA
    beta: float = DEFAULT_BETA
    s: int = 16
    m: float = 10.0
    th: int | None = None  # None: ceil(s^2 / 2)
    min_region: int | None = None  # None: ceil(s^2 / 4)
    max_iter: int = DEFAULT_MAX_ITER
    mode: str = "joint"
    threads: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("gamma", "sigma", "beta", "m"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if int(self.s) != self.s or self.s < 2:
            raise ConfigError(f"s must be an integer >= 2, got {self.s!r}")
        for name in ("th", "min_region", "max_iter", "threads"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        return self

    @property
    def threshold(self):
        return default_threshold(self.s) if self.th is None else int(self.th)

    @property
    def region_size(self):
        return default_min_region(self.s) if self.min_region is None else int(self.min_region)

    def resolved(self):
        """Parameters with derived defaults filled in (threads excluded: it never changes results)."""
        d = asdict(self)
        d["th"] = self.threshold
        d["min_region"] = self.region_size
        d.pop("threads")
        return d

    def digest(self):
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def describe(self):
        return " ".join(f"{k}={v}" for k, v in self.resolved().items())


def _coerce(name, raw):
    kinds = {f.name: f.type for f in fields(PipelineConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    if raw is None or name == "mode":
        return raw
    try:
        if name in ("s", "th", "min_region", "max_iter", "threads"):
            val = float(raw)
            if val != int(val):
                raise ValueError
            return int(val)
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def read_config_file(path):
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    # accept either top-level keys or a [pipeline] table
    data = data.get("pipeline", data)
    return {k: _coerce(k, v) for k, v in data.items()}


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    names = {f.name for f in fields(PipelineConfig)}
    out = {}
    for key, raw in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in names:
                out[name] = _coerce(name, raw)
    return out


def load_config(path=None, overrides=None, environ=None):
    """Merge defaults < config file < environment < explicit overrides."""
    merged = {}
    if path is not None:
        merged.update(read_config_file(path))
    merged.update(env_overrides(environ))
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = _coerce(k, v)
    return PipelineConfig(**merged)
