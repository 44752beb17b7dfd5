"""Experiment configuration: one flat, typed TOML file per run.

Unknown keys are rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .augment import AugOp, normalize_ops
from .model import EncoderConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid, unknown, or ill-typed configuration key."""


@dataclass(frozen=True)
class ExperimentConfig:
    # run
    run_name: str = "run"
    # data
    train_path: str = ""
    dev_path: str = ""
    test_path: str = ""
    lexicon_path: str = ""
    stopwords_path: str = ""
    min_freq: int = 1
    # model
    num_layers: int = 2
    num_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_len: int = 128
    dropout: float = 0.1
    # training
    regime: str = "unregularized"
    lambda_: float = 0.0
    lr_max: float = 2e-5
    warmup_proportion: float = 0.06
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-6
    epochs: int = 10
    batch_size: int = 16
    grad_accum_steps: int = 1
    seed: int = 0
    p_mask: float = 0.15
    aug_rate: float = 0.1
    active_ops: tuple[str, ...] = ("SR", "RI", "RS", "RD")
    tapt_epochs: int = 10
    # evaluation
    precision: int = 32
    eval_test_each_epoch: bool = False

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            regime=self.regime, lambda_=self.lambda_, lr_max=self.lr_max,
            warmup_proportion=self.warmup_proportion, weight_decay=self.weight_decay,
            beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
            epochs=self.epochs, batch_size=self.batch_size,
            grad_accum_steps=self.grad_accum_steps, seed=self.seed,
            p_mask=self.p_mask, aug_rate=self.aug_rate,
            active_ops=normalize_ops(self.active_ops), tapt_epochs=self.tapt_epochs,
        )

    def to_encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size, num_layers=self.num_layers, num_heads=self.num_heads,
            d_model=self.d_model, d_ff=self.d_ff, max_len=self.max_len,
            dropout=self.dropout,
        )

    def validate(self) -> None:
        if not self.train_path or not self.dev_path:
            raise ConfigError("train_path and dev_path are required")
        if self.min_freq < 1:
            raise ConfigError(f"min_freq must be >= 1, got {self.min_freq}")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        try:
            normalize_ops(self.active_ops)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"active_ops: {exc}") from None
        try:
            self.to_train_config().validate()
            # Encoder shape constraints, checked with a placeholder vocab size.
            self.to_encoder_config(vocab_size=6)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


# TOML key -> dataclass field; "lambda" is a Python keyword.
_KEY_TO_FIELD = {"lambda": "lambda_"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


def _coerce(key: str, value, target_type):
    if target_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if target_type is bool and not isinstance(value, bool):
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if not isinstance(value, target_type):
        raise ConfigError(f"{key}: expected {target_type.__name__}, got {value!r}")
    return value


def config_from_dict(raw: dict, source: str = "<config>") -> ExperimentConfig:
    known = {f.name: f for f in fields(ExperimentConfig)}
    values = {}
    for key, value in raw.items():
        name = _KEY_TO_FIELD.get(key, key)
        if name not in known:
            raise ConfigError(f"{source}: unknown key {key!r}")
        ftype = known[name].type
        if name == "active_ops":
            if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
                raise ConfigError(f"{source}: active_ops must be a list of strings")
            values[name] = tuple(value)
        elif ftype in ("int", int):
            values[name] = _coerce(key, value, int)
        elif ftype in ("float", float):
            values[name] = _coerce(key, value, float)
        elif ftype in ("bool", bool):
            values[name] = _coerce(key, value, bool)
        else:
            values[name] = _coerce(key, value, str)
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    return config_from_dict(raw, str(path))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = list(value)
        out[_FIELD_TO_KEY.get(f.name, f.name)] = value
    return out
