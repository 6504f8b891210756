"""Experiment configuration: YAML file with data/model/loss/train/eval sections.

Unknown sections or keys are rejected.  Command-line overrides use the
``section.key=value`` form with YAML scalar parsing of the value.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import yaml

from .errors import ConfigError
from .losses import LossWeights
from .nets import NetworkConfig


@dataclass
class DataConfig:
    domains: str = "matched"  # matched | smaller_synth | unscaled_real
    aoi: str = "rotation_deg"
    real_style: str = "real_proxy_handwritten"
    pool_size: int = 20000
    seed: int = 1234
    archive: str = ""  # directory written by generate-data
    idx_images: str = ""  # external real domain
    idx_labels: str = ""


@dataclass
class TrainConfig:
    gen_lr: float = 2e-4
    disc_lr: float = 5e-5
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    lr_end_fraction: float = 0.01
    lr_power: float = 1.0
    batch_size: int = 16
    total_steps: int = 20000
    noise_sigma: float = 0.2
    noise_decay_steps: int = -1  # -1: half of total_steps
    seed: int = 0
    baseline_mode: bool = False
    checkpoint_every: int = 1000
    threads: int = 1

    def __post_init__(self):
        if self.gen_lr <= 0 or self.disc_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class EvalConfig:
    n_pairs: int = 2000
    n_vrest_inputs: int = 64
    n_references: int = 16
    seed: int = 777
    classifier_steps: int = 1500
    classifier_pool: int = 12000
    saturation: bool = False


SECTIONS = {
    "data": DataConfig,
    "model": NetworkConfig,
    "loss": LossWeights,
    "train": TrainConfig,
    "eval": EvalConfig,
}


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def hash(self) -> str:
        """Digest of everything that shapes the trained parameters (eval excluded)."""
        d = self.to_dict()
        d.pop("eval")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    # domain shift configurations
    "smaller_synth": {"data": {"domains": "smaller_synth"}},
    "unscaled_real": {"data": {"domains": "unscaled_real", "aoi": "size_scale"}},
    "size": {"data": {"aoi": "size_scale"}},
    # CycleGAN-style baseline
    "baseline": {"train": {"baseline_mode": True}},
    # ablations
    "two_enc": {"model": {"shared_encoder": False}},
    "one_dec": {"model": {"shared_decoder": True}},
    "k16": {"model": {"attr_dim_k": 16}},
    "d64": {"model": {"attr_dim_k": 16, "bottleneck_total": 64}},
    # tiny settings for smoke tests
    "smoke": {
        "data": {"pool_size": 256},
        "model": {"base_channels": 4, "num_residual_blocks": 1},
        "train": {"batch_size": 8, "total_steps": 100, "checkpoint_every": 50},
        "eval": {"n_pairs": 200, "n_vrest_inputs": 8, "n_references": 4,
                 "classifier_steps": 300, "classifier_pool": 2000},
    },
}


def _build(cls, values: Dict[str, Any], section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def from_dict(raw: Optional[Dict[str, Any]]) -> ExperimentConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    built = {}
    for name, cls in SECTIONS.items():
        values = raw.get(name) or {}
        if not isinstance(values, dict):
            raise ConfigError(f"section [{name}] must be a mapping")
        built[name] = _build(cls, _coerce(cls, values, name), name)
    return ExperimentConfig(**built)


def _coerce(cls, values: Dict[str, Any], section: str) -> Dict[str, Any]:
    # YAML may read 2e-4 as a string and 1 as an int where a float is meant
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for k, v in values.items():
        t = types.get(k)
        try:
            if t in (float, "float") and isinstance(v, (int, str)) and not isinstance(v, bool):
                v = float(v)
            elif t in (int, "int") and isinstance(v, str):
                v = int(v)
            elif t in (bool, "bool") and not isinstance(v, bool):
                raise ConfigError(f"[{section}] {k} expects true/false, got {v!r}")
        except ValueError as exc:
            raise ConfigError(f"[{section}] {k}: {exc}") from exc
        out[k] = v
    return out


def merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for section, values in overlay.items():
        out.setdefault(section, {})
        out[section] = {**(out[section] or {}), **values}
    return out


def parse_overrides(items: Iterable[str]) -> Dict[str, Dict[str, Any]]:
    """``["train.total_steps=1", "--loss.w_dis=5"]`` -> nested dict."""
    out: Dict[str, Dict[str, Any]] = {}
    for item in items:
        text = item[2:] if item.startswith("--") else item
        if "=" not in text or "." not in text.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        lhs, value = text.split("=", 1)
        section, key = lhs.split(".", 1)
        out.setdefault(section, {})[key] = yaml.safe_load(value) if value != "" else ""
    return out


def load_config(path=None, presets: Iterable[str] = (), overrides: Iterable[str] = ()) -> ExperimentConfig:
    raw: Dict[str, Any] = {}
    if path:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
    for name in presets:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
        raw = merge(raw, PRESETS[name])
    raw = merge(raw, parse_overrides(overrides))
    return from_dict(raw)


def summary(cfg: ExperimentConfig) -> str:
    m = cfg.model
    return (f"slots={m.num_attr_slots} k={m.attr_dim_k} rest={m.rest_dim} "
            f"total={m.bottleneck_total} steps={cfg.train.total_steps} "
            f"batch={cfg.train.batch_size} domains={cfg.data.domains}")
