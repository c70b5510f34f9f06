"""Run configuration: defaults < config file < CLI flags; ``CPAT_SEED`` beats ``--seed``.

Config files are UTF-8 ``key = value`` lines with ``#`` comments.  Keys are
the field names of :class:`~cpat.model.CPATConfig` and
:class:`~cpat.train.TrainSettings`, plus ``seed`` and ``max_params``.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .model import CPATConfig, ConfigError
from .train import TrainSettings

FIELD_DOCS = {
    "c_in": "input image channels",
    "c_out": "output image channels",
    "channels": "embedding channels C (multiple of 3*heads)",
    "groups": "number of residual groups",
    "blocks": "attention blocks per group",
    "ws": "window size (even)",
    "heads": "attention heads per branch",
    "mlp_ratio": "MLP expansion ratio",
    "scale": "upscaling factor (2, 3 or 4)",
    "overlap_alpha": "overlap ratio of the cross-attention halo",
    "enhanced_windows": "use H x ws / ws x W windows (false: all ws x ws)",
    "shift": "one-direction shift on every second block",
    "sfim": "spatial-frequency module (false: plain 3x3 conv)",
    "freq_domain": "FFT sub-branch inside the frequency branch",
    "group_sfim": "frequency module inside each residual group",
    "final_sfim": "frequency module after the last group",
    "outer_residual": "add the second expansion output after the last module",
    "iters": "training iterations",
    "batch": "patches per step",
    "patch": "LR patch side in pixels",
    "lr": "Adam learning rate",
    "beta1": "Adam beta1",
    "beta2": "Adam beta2",
    "eps": "Adam epsilon",
    "lr_halve_every": "halve the learning rate every N iterations (0: constant)",
    "n_images": "synthetic training images",
    "image_size": "synthetic training image side",
    "eval_images": "held-out synthetic images",
    "eval_size": "held-out image side (HR)",
    "dtype": "runtime float type (float32 or float64)",
    "seed": "master seed for init and data",
    "max_params": "refuse to train models larger than this",
}

MODEL_FIELDS = {f.name: f for f in fields(CPATConfig)}
TRAIN_FIELDS = {f.name: f for f in fields(TrainSettings)}
EXTRA_FIELDS = {"seed": 0, "max_params": 5_000_000}


def _coerce(value: Any, default: Any) -> Any:
    if not isinstance(value, str):
        return value
    if isinstance(default, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"cannot parse {value!r} as {type(default).__name__}") from None
    return value.strip()


def _default(name: str) -> Any:
    if name in MODEL_FIELDS:
        return MODEL_FIELDS[name].default
    if name in TRAIN_FIELDS:
        return TRAIN_FIELDS[name].default
    return EXTRA_FIELDS[name]


def known_keys() -> list[str]:
    return list(MODEL_FIELDS) + list(TRAIN_FIELDS) + list(EXTRA_FIELDS)


def read_config_file(path) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                       delimiters=("=",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[cpat]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values = dict(parser["cpat"])
    unknown = [k for k in values if k not in known_keys()]
    if unknown:
        raise ConfigError(f"{path}: unknown key {unknown[0]!r}")
    return values


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)

    def __getattr__(self, name: str) -> Any:
        if name == "values":
            raise AttributeError(name)
        if name in self.values:
            return self.values[name]
        if name in known_keys():
            return _default(name)
        raise AttributeError(name)

    @classmethod
    def build(cls, file_values: Mapping[str, Any] | None = None, cli_values: Mapping[str, Any] | None = None,
              env: Mapping[str, str] | None = None, base: Mapping[str, Any] | None = None) -> "RunConfig":
        """``base`` replaces the built-in defaults for a subcommand; files and flags still win."""
        merged: dict[str, Any] = {k: _default(k) for k in known_keys()}
        layers = (base or {}, file_values or {}, {k: v for k, v in (cli_values or {}).items() if v is not None})
        for layer in layers:
            for k, v in layer.items():
                if k not in merged:
                    raise ConfigError(f"unknown setting {k!r}")
                merged[k] = _coerce(v, _default(k))
        env = os.environ if env is None else env
        if env.get("CPAT_SEED"):
            merged["seed"] = _coerce(env["CPAT_SEED"], 0)
        return cls(merged)

    def model_values(self) -> dict[str, Any]:
        return {k: self.values[k] for k in MODEL_FIELDS}

    def model_config(self) -> CPATConfig:
        return CPATConfig(**self.model_values())

    @staticmethod
    def toy_base() -> dict[str, Any]:
        return {**CPATConfig.toy().to_dict(), **asdict(TrainSettings.toy())}

    def train_settings(self) -> TrainSettings:
        return TrainSettings(**{k: self.values[k] for k in TRAIN_FIELDS})
