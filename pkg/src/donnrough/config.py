"""Run configuration: dataclasses, named presets, YAML files and env overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .optics import Geometry
from .slr import SlrConfig
from .smoothing import GsConfig

MODES = ("baseline", "A", "B", "C", "D")
ENV_PREFIX = "DONNROUGH_"


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # optics
    n: int = 64
    pixel_pitch: float = 36e-6
    wavelength: float = 532e-9
    distance: float = 0.09
    depth: int = 3
    pad: bool = False
    init: str = "zeros"
    input_power: float = 100.0
    wrap_phase: bool = True  # keep trained phases in [0, 2pi) as on a device
    # data
    train_images: str = "data/mnist5k/train-images-idx3-ubyte"
    train_labels: str = "data/mnist5k/train-labels-idx1-ubyte"
    test_images: str = "data/mnist5k/t10k-images-idx3-ubyte"
    test_labels: str = "data/mnist5k/t10k-labels-idx1-ubyte"
    train_limit: Optional[int] = 10000
    test_limit: Optional[int] = 2000
    # optimisation
    epochs: int = 30
    batch_size: int = 200
    learning_rate: float = 0.2
    seed: int = 0
    mode: str = "baseline"
    p: float = 0.0
    q: float = 0.0
    neighbors: int = 8
    init_checkpoint: Optional[str] = None
    slr: SlrConfig = field(default_factory=SlrConfig)
    gs: GsConfig = field(default_factory=GsConfig)

    def __post_init__(self):
        if isinstance(self.slr, dict):
            self.slr = _build(SlrConfig, self.slr, "slr.")
        if isinstance(self.gs, dict):
            self.gs = _build(GsConfig, self.gs, "gs.")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n < 28:
            raise ConfigError("n must be at least 28, the MNIST side length")
        if self.neighbors not in (4, 8):
            raise ConfigError("neighbors must be 4 or 8")
        for name in ("epochs", "batch_size", "depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("learning_rate", "input_power"):
            if not 0 < getattr(self, name) < math.inf:
                raise ConfigError(f"{name} must be positive")
        if self.p < 0 or self.q < 0:
            raise ConfigError("regularization weights must be non-negative")
        if self.mode in ("A", "C", "D") and not self.p > 0:
            raise ConfigError(f"mode {self.mode} needs p > 0")
        if self.mode == "D" and not self.q > 0:
            raise ConfigError("mode D needs q > 0")
        if self.init not in ("zeros", "uniform"):
            raise ConfigError("init must be 'zeros' or 'uniform'")
        try:
            self.geometry()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.n % self.slr.block_size:
            raise ConfigError(f"block size {self.slr.block_size} does not divide n={self.n}")

    def geometry(self) -> Geometry:
        return Geometry(self.n, self.pixel_pitch, self.wavelength, self.distance)

    @property
    def uses_slr(self) -> bool:
        return self.mode in ("B", "C", "D")

    @property
    def p_eff(self) -> float:
        return self.p if self.mode in ("A", "C", "D") else 0.0

    @property
    def q_eff(self) -> float:
        return self.q if self.mode == "D" else 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        data = self.to_dict()
        for key, value in changes.items():
            _assign(data, key.split("."), value)
        return from_dict(data)


PRESETS = {
    "desk": {},
    "paper": {
        "n": 200,
        "distance": 0.2794,
        "train_limit": None,
        "test_limit": None,
        "train_images": "data/mnist/train-images-idx3-ubyte",
        "train_labels": "data/mnist/train-labels-idx1-ubyte",
        "test_images": "data/mnist/t10k-images-idx3-ubyte",
        "test_labels": "data/mnist/t10k-labels-idx1-ubyte",
        "epochs": 50,
        "slr": {"block_size": 25, "outer_iters": 20},
    },
}


def _build(cls, data: dict, prefix: str = ""):
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    names = set(types)
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + u for u in unknown)}")
    data = {k: _coerce(v, types.get(k)) for k, v in data.items()}
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{prefix or 'config'}: {e}") from None


def _coerce(value, annotation):
    # YAML 1.1 reads 1e-3 (no dot) as a string
    if isinstance(value, str) and annotation in (float, "float", "Optional[float]"):
        try:
            return float(value)
        except ValueError:
            pass
    return value


def _assign(data: dict, path: list, value) -> None:
    for key in path[:-1]:
        if not isinstance(data.get(key), dict):
            raise ConfigError(f"unknown config section {key!r}")
        data = data[key]
    data[path[-1]] = value


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    if isinstance(data.get("slr"), SlrConfig):
        data["slr"] = dataclasses.asdict(data["slr"])
    if isinstance(data.get("gs"), GsConfig):
        data["gs"] = dataclasses.asdict(data["gs"])
    return _build(TrainConfig, data)


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    base = dataclasses.asdict(TrainConfig())
    return _merge(base, PRESETS[name])


def env_overrides(environ=None) -> dict:
    """Collect DONNROUGH_<KEY>=<yaml value>; nested keys use a double underscore."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        node, cls = out, TrainConfig
        for key in path[:-1]:
            node = node.setdefault(key, {})
            cls = SECTIONS.get(key)
        node[_field_name(cls, path[-1])] = yaml.safe_load(raw)
    return out


SECTIONS = {"slr": SlrConfig, "gs": GsConfig}


def _field_name(cls, lowered: str) -> str:
    if cls is not None:
        for f in dataclasses.fields(cls):
            if f.name.lower() == lowered:
                return f.name
    return lowered


def load_config(path=None, preset_name: str = "desk", overrides: dict | None = None, environ=None) -> TrainConfig:
    data = preset(preset_name)
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a mapping")
        data = _merge(data, doc)
    data = _merge(data, env_overrides(environ))
    if overrides:
        data = _merge(data, overrides)
    return from_dict(data)


def dump_config(config: TrainConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
