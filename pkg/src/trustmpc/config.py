"""Experiment configuration: a flat ``key = value`` text file.

Example::

    # US06 sweep with the constant-acceleration estimator
    cycle = us06
    predictor = ca
    alpha = 0, 0.25, 0.5, 0.75, 1.0
    out = results
    seed = 0
    model = results/gru_model.json
    human_weights = 0.25, 0.25, 0.25, 0.25
    param.gap_scale = 10
    train.epochs = 100

``param.<name>`` overrides a :class:`~trustmpc.core.SimParams` field and
``train.<name>`` a :class:`~trustmpc.predict.TrainConfig` field.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import SimParams
from .cycles import PRESET_FILES
from .predict import TrainConfig

DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


class ConfigError(ValueError):
    pass


def _coerce(value: str, like, key: str):
    if value.lower() in ("none", "") and like is None:
        return None
    try:
        if isinstance(like, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(like, int):
            return int(value)
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None


def _floats(value: str, key: str) -> tuple:
    try:
        return tuple(float(x) for x in value.replace(" ", "").split(",") if x)
    except ValueError:
        raise ConfigError(f"{key}: expected a comma-separated list of numbers, got {value!r}") from None


@dataclass
class ExperimentConfig:
    cycles: tuple = ("us06",)
    predictor: str = "ca"
    alphas: tuple = DEFAULT_ALPHAS
    out: str = "results"
    seed: int = 0
    model: Optional[str] = None
    hidden: int = 32
    human_weights: tuple = (0.25, 0.25, 0.25, 0.25)
    params: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def sim_params(self) -> SimParams:
        return SimParams.preset("default", **self.params)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{"seed": self.seed, **self.train})

    @property
    def model_path(self) -> Path:
        return Path(self.model) if self.model else Path(self.out) / "gru_model.json"

    def set(self, key: str, value: str) -> None:
        key = key.strip()
        value = value.strip()
        if key == "cycle":
            self.cycles = tuple(x.strip() for x in value.split(",") if x.strip())
        elif key == "predictor":
            self.predictor = value
        elif key == "alpha":
            self.alphas = _floats(value, key)
        elif key == "out":
            self.out = value
        elif key == "seed":
            self.seed = int(_coerce(value, 0, key))
        elif key == "model":
            self.model = value or None
        elif key == "hidden":
            self.hidden = int(_coerce(value, 0, key))
        elif key == "human_weights":
            self.human_weights = _floats(value, key)
        elif key.startswith("param."):
            name = key[len("param."):]
            fields = {f.name: f for f in dataclasses.fields(SimParams)}
            if name not in fields:
                raise ConfigError(f"unknown simulation parameter {name!r}")
            self.params[name] = _coerce(value, getattr(SimParams(), name), key)
        elif key.startswith("train."):
            name = key[len("train."):]
            defaults = TrainConfig()
            if not hasattr(defaults, name):
                raise ConfigError(f"unknown training option {name!r}")
            self.train[name] = _coerce(value, getattr(defaults, name), key)
        else:
            raise ConfigError(f"unknown config key {key!r}")

    def validate(self, mode: str = "run") -> None:
        if not self.cycles:
            raise ConfigError("no drive cycle given")
        for c in self.cycles:
            if c.lower() not in PRESET_FILES and not Path(c).is_file():
                raise ConfigError(f"drive-cycle file not found: {c}")
        if self.predictor not in ("ca", "gru"):
            raise ConfigError(f"predictor must be 'ca' or 'gru', got {self.predictor!r}")
        if not self.alphas:
            raise ConfigError("alpha list is empty")
        if any(a < 0 for a in self.alphas):
            raise ConfigError(f"alpha values must be >= 0: {self.alphas}")
        if len(self.human_weights) != 4 or any(w < 0 for w in self.human_weights) or not any(self.human_weights):
            raise ConfigError(f"human_weights needs 4 non-negative values, one positive: {self.human_weights}")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        try:
            self.sim_params()
            self.train_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if mode == "run" and self.predictor == "gru" and not self.model_path.is_file():
            raise ConfigError(f"GRU model file not found: {self.model_path}")

    def to_text(self) -> str:
        """Serialize with every default made explicit."""
        lines = [
            f"cycle = {', '.join(self.cycles)}",
            f"predictor = {self.predictor}",
            f"alpha = {', '.join(repr(float(a)) for a in self.alphas)}",
            f"out = {self.out}",
            f"seed = {self.seed}",
            f"model = {self.model or ''}",
            f"hidden = {self.hidden}",
            f"human_weights = {', '.join(repr(float(w)) for w in self.human_weights)}",
        ]
        sp = self.sim_params()
        for f in dataclasses.fields(SimParams):
            if f.name == "alpha":
                continue
            v = getattr(sp, f.name)
            lines.append(f"param.{f.name} = {'none' if v is None else repr(v)}")
        tc = self.train_config()
        for f in dataclasses.fields(TrainConfig):
            if f.name == "seed":
                continue
            lines.append(f"train.{f.name} = {getattr(tc, f.name)!r}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, origin: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        try:
            cfg.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{origin}:{lineno}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))
