"""Flat ``section.key = value`` experiment configuration.

The defaults reproduce the reference UJIIndoorLoc experiment. Every
network, optimizer, federation and baseline setting has a key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import KNN_SWEEP, KnnConfig
from .dataset import PreprocessConfig
from .federation import FlConfig
from .network import TrainConfig

__all__ = ["ConfigError", "DEFAULTS", "ExperimentConfig", "parse_config", "emit_config", "load_config"]


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "data.train": "data/UJIndoorLoc/trainingData.csv",
    "data.validation": "data/UJIndoorLoc/validationData.csv",
    "preprocess.sparsity_threshold": 0.98,
    "preprocess.min_rssi": -105.0,
    "preprocess.beta": math.e,
    "preprocess.sentinel": 100.0,
    "preprocess.strict_sparsity": True,
    "model.hidden": (256, 64),
    "model.dropout": (0.25, 0.1),
    "train.learning_rate": 0.0005,
    "train.adam_beta1": 0.9,
    "train.adam_beta2": 0.999,
    "train.batch_size": 32,
    "train.dropout_enabled": True,
    "fl.rounds": 100,
    "fl.local_epochs": 10,
    "fl.convergence_eps": 0.0,
    "fl.patience": 1,
    "fl.clients": "",  # e.g. "0:0,0:1"; empty means every floor
    "fl.n_jobs": 1,
    "cl.epochs": 1000,
    "knn.k": 3,
    "knn.sweep": KNN_SWEEP,
    "knn.raw_rssi": False,
    "knn.validation": "validation",  # or "train" to score on the training rows
    "run.seed": 0,
    "run.output_dir": "runs",
    "run.deterministic": True,
}


def _coerce(key: str, text: str):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, value) if isinstance(value, str) else value

    def override(self, assignments) -> "ExperimentConfig":
        for item in assignments or ():
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            self.set(k.strip(), v)
        return self

    # typed views -----------------------------------------------------------
    def preprocess(self) -> PreprocessConfig:
        try:
            return PreprocessConfig(
                sparsity_threshold=self["preprocess.sparsity_threshold"],
                min_rssi=self["preprocess.min_rssi"],
                beta=self["preprocess.beta"],
                sentinel=self["preprocess.sentinel"],
                strict_sparsity=self["preprocess.strict_sparsity"],
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def train(self, epochs: int) -> TrainConfig:
        try:
            return TrainConfig(
                learning_rate=self["train.learning_rate"],
                adam_beta1=self["train.adam_beta1"],
                adam_beta2=self["train.adam_beta2"],
                batch_size=self["train.batch_size"],
                epochs=epochs,
                seed=self["run.seed"],
                dropout_enabled=self["train.dropout_enabled"],
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def fl(self) -> FlConfig:
        try:
            return FlConfig(
                rounds=self["fl.rounds"],
                local_epochs=self["fl.local_epochs"],
                convergence_eps=self["fl.convergence_eps"],
                patience=self["fl.patience"],
                train=self.train(self["fl.local_epochs"]),
                deterministic=self["run.deterministic"],
                n_jobs=self["fl.n_jobs"],
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def knn(self) -> KnnConfig:
        if self["knn.validation"] not in ("validation", "train"):
            raise ConfigError(f"knn.validation must be 'validation' or 'train', got {self['knn.validation']!r}")
        try:
            return KnnConfig(k=self["knn.k"], raw_rssi=self["knn.raw_rssi"])
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def layer_dims(self, n_inputs: int) -> tuple:
        if len(self["model.dropout"]) != len(self["model.hidden"]):
            raise ConfigError("model.dropout needs one rate per hidden layer")
        sizes = (n_inputs, *self["model.hidden"], 2)
        return tuple((o, i) for i, o in zip(sizes, sizes[1:]))

    def clients(self):
        text = self["fl.clients"].strip()
        if not text:
            return None
        out = []
        for item in text.split(","):
            try:
                b, f = item.split(":")
                out.append((int(b), int(f)))
            except ValueError:
                raise ConfigError(f"fl.clients: bad client id {item!r}, expected building:floor") from None
        return out


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        cfg.values[key] = _coerce(key, value)
    return cfg


def emit_config(cfg: ExperimentConfig) -> str:
    lines = []
    section = None
    for key in DEFAULTS:
        head = key.split(".", 1)[0]
        if head != section:
            if section is not None:
                lines.append("")
            section = head
        lines.append(f"{key} = {_format(cfg.values[key])}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())
