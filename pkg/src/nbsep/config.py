"""Flat key=value run configuration shared by all CLI commands.

The file format is one `key = value` per line; blank lines and lines starting
with `#` are ignored. Every key must be one of the dataclass fields below —
unknown keys are rejected so typos fail loudly instead of silently using a
default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .model import ModelConfig
from .stft import StftConfig
from .training import TrainConfig


@dataclass
class Config:
    """All knobs with their standard defaults."""

    # analysis/synthesis
    window_length: int = 512
    hop: int = 256
    sample_rate: int = 16000
    # array and sources
    n_channels: int = 8
    n_speakers: int = 2
    ref_channel: int = 0
    # separator
    hidden1: int = 256
    hidden2: int = 128
    # optimizer and schedule
    lr_init: float = 1e-3
    lr_min: float = 1e-4
    lr_halving: float = 0.5
    plateau_epochs: int = 10
    clip_threshold: float = 5.0
    utterances_per_batch: int = 30
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    seed: int = 0
    # dataset
    duration: float = 4.0
    rt60_min: float = 0.1
    rt60_max: float = 1.0
    n_train_scenes: int = 100
    n_val_scenes: int = 20
    out_dir: str = "runs"

    def stft_config(self) -> StftConfig:
        return StftConfig(window_length=self.window_length, hop=self.hop,
                          sample_rate=self.sample_rate)

    def model_config(self) -> ModelConfig:
        return ModelConfig(n_input=2 * self.n_channels,
                           hidden1=self.hidden1, hidden2=self.hidden2,
                           n_output=2 * self.n_speakers)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr_init=self.lr_init, lr_min=self.lr_min,
            lr_halving=self.lr_halving, plateau_epochs=self.plateau_epochs,
            clip_threshold=self.clip_threshold,
            utterances_per_batch=self.utterances_per_batch,
            adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps, max_epochs=self.max_epochs,
            seed=self.seed)


def _convert(name: str, kind: type, raw: str):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ValueError(f"config key {name}: cannot parse {raw!r} "
                         f"as {kind.__name__}") from exc


def load_config(path) -> Config:
    """Parses a key=value file into a Config; unknown keys are errors."""
    types = {f.name: f.type for f in fields(Config)}
    # dataclass field types may be strings under deferred annotations
    kinds = {name: {"int": int, "float": float, "str": str,
                    "bool": bool}.get(t, t) if isinstance(t, str) else t
             for name, t in types.items()}
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, "
                                 f"got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in kinds:
                raise ValueError(f"{path}:{lineno}: unknown config key "
                                 f"{key!r}")
            values[key] = _convert(key, kinds[key], raw)
    return Config(**values)


def save_config(path, config: Config) -> None:
    with open(path, "w") as f:
        for field in fields(Config):
            f.write(f"{field.name} = {getattr(config, field.name)}\n")
