"""Experiment configuration: nested dataclasses loaded from YAML.

Every field has a default, so an empty file is a valid config.  The four
ablation variants constrain the loss weight and the DA-layers; conflicting
settings are rejected here, before any training starts.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..data import ShiftSpec
from ..errors import ConfigError, SpecError


class Variant(enum.Enum):
    SOURCE = "source"
    ENTROPY = "entropy"
    AUTODIAL_FIXED = "autodial_fixed"
    AUTODIAL = "autodial"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(v.value for v in cls)
            raise ConfigError(f"unknown variant {value!r} (expected one of {names})") from None

    @property
    def has_da_layers(self) -> bool:
        return self in (Variant.AUTODIAL_FIXED, Variant.AUTODIAL)


@dataclass
class NetworkConfig:
    hidden: list = field(default_factory=lambda: [32, 32])
    da_on_output: bool = True
    alpha_init: float | None = None  # None: 1.0 for autodial_fixed, 0.75 otherwise
    eps: float = 1e-5
    momentum_ma: float = 0.1


@dataclass
class LossSection:
    lam: float | None = None  # None: 0 for source, 0.1 otherwise


@dataclass
class OptimizerConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "inv"
    drop_epoch: int | None = None  # step schedule; defaults to 90% of the epochs
    gamma: float = 10.0
    beta: float = 0.75


@dataclass
class BatchConfig:
    mode: str = "fixed"  # fixed | proportional
    n_source: int = 32
    n_target: int = 32
    total: int = 64  # proportional mode only


@dataclass
class DataConfig:
    synthetic: dict = field(default_factory=dict)
    source_path: str | None = None
    target_path: str | None = None
    target_labeled: bool = True


@dataclass
class HistogramConfig:
    bins: int = 30
    channels: int = 4
    seed: int = 0


@dataclass
class GridSearchConfig:
    candidates: list = field(default_factory=lambda: [0.0, 0.1, 0.3])
    holdout_fraction: float = 0.2


@dataclass
class ExperimentConfig:
    variant: Variant = Variant.AUTODIAL
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    epochs: int = 20
    output_dir: str = "runs/default"
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch: BatchConfig = field(default_factory=BatchConfig)
    data: DataConfig = field(default_factory=DataConfig)
    histograms: HistogramConfig = field(default_factory=HistogramConfig)
    gridsearch: GridSearchConfig = field(default_factory=GridSearchConfig)

    # resolved values ---------------------------------------------------

    @property
    def lam(self) -> float:
        if self.loss.lam is not None:
            return float(self.loss.lam)
        return 0.0 if self.variant is Variant.SOURCE else 0.1

    @property
    def alpha_init(self) -> float:
        if self.network.alpha_init is not None:
            return float(self.network.alpha_init)
        return 1.0 if self.variant is Variant.AUTODIAL_FIXED else 0.75

    def shift_spec(self, seed: int | None = None) -> ShiftSpec:
        opts = dict(self.data.synthetic)
        if "translation" in opts and isinstance(opts["translation"], list):
            opts["translation"] = tuple(opts["translation"])
        if seed is not None:
            opts["seed"] = int(opts.get("seed", 0)) * 1000 + int(seed)
        try:
            return ShiftSpec(**opts)
        except TypeError as exc:
            raise ConfigError(f"data.synthetic: {exc}") from None
        except SpecError as exc:
            raise ConfigError(f"data.synthetic: {exc}") from None

    def validate(self) -> "ExperimentConfig":
        v = self.variant
        lam = self.lam
        if lam < 0:
            raise ConfigError("loss.lam must be non-negative")
        if v is Variant.SOURCE and lam != 0:
            raise ConfigError("variant 'source' requires loss.lam = 0")
        if v is Variant.ENTROPY and not lam > 0:
            raise ConfigError("variant 'entropy' requires loss.lam > 0")
        if v is Variant.AUTODIAL_FIXED and self.alpha_init != 1.0:
            raise ConfigError("variant 'autodial_fixed' pins alpha at 1.0; network.alpha_init must be 1.0")
        if v.has_da_layers and not 0.5 <= self.alpha_init <= 1.0:
            raise ConfigError("network.alpha_init must lie in [0.5, 1]")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not all(int(h) >= 1 for h in self.network.hidden):
            raise ConfigError("hidden layer widths must be positive")
        if not self.network.eps > 0 or not 0 < self.network.momentum_ma <= 1:
            raise ConfigError("network.eps must be > 0 and network.momentum_ma in (0, 1]")
        if not self.optimizer.lr > 0:
            raise ConfigError("optimizer.lr must be positive")
        if self.optimizer.schedule not in ("inv", "step", "constant"):
            raise ConfigError(f"unknown schedule {self.optimizer.schedule!r}")
        if self.batch.mode not in ("fixed", "proportional"):
            raise ConfigError(f"unknown batch mode {self.batch.mode!r}")
        if self.batch.mode == "fixed" and (self.batch.n_source < 1 or self.batch.n_target < 1):
            raise ConfigError("batch.n_source and batch.n_target must be at least 1")
        if self.batch.mode == "proportional" and self.batch.total < 2:
            raise ConfigError("batch.total must be at least 2")
        if bool(self.data.source_path) != bool(self.data.target_path):
            raise ConfigError("data.source_path and data.target_path must be given together")
        if not self.data.source_path:
            self.shift_spec()
        if not 0 < self.gridsearch.holdout_fraction < 1:
            raise ConfigError("gridsearch.holdout_fraction must lie in (0, 1)")
        if self.histograms.bins < 1 or self.histograms.channels < 1:
            raise ConfigError("histogram bins and channels must be positive")
        return self

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["variant"] = self.variant.value
        out["loss"]["lam"] = self.lam
        out["network"]["alpha_init"] = self.alpha_init
        return out


_SECTIONS = {
    "network": NetworkConfig,
    "loss": LossSection,
    "optimizer": OptimizerConfig,
    "batch": BatchConfig,
    "data": DataConfig,
    "histograms": HistogramConfig,
    "gridsearch": GridSearchConfig,
}


def _build(cls, values, where):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(sorted(unknown))}")
    return cls(**values)


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw or {})
    sections = {name: _build(cls, raw.pop(name, None), name) for name, cls in _SECTIONS.items()}
    top = _build(ExperimentConfig, raw, "")
    for name, value in sections.items():
        setattr(top, name, value)
    top.variant = Variant.parse(top.variant)
    try:
        top.seeds = [int(s) for s in top.seeds]
        top.epochs = int(top.epochs)
    except (TypeError, ValueError):
        raise ConfigError("seeds must be integers and epochs an integer") from None
    return top.validate()


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars."""
    raw = dict(raw or {})
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {text!r}: {exc}") from None
        node = raw
        parts = key.strip().split(".")
        for part in parts[:-1]:
            child = node.get(part)
            child = dict(child) if isinstance(child, dict) else {}
            node[part] = child
            node = child
        node[parts[-1]] = value
    return raw


def read_config_dict(path) -> dict:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def load_config(path=None, overrides=()) -> ExperimentConfig:
    raw = read_config_dict(path) if path is not None else {}
    return config_from_dict(apply_overrides(raw, overrides))


def dump_config(cfg: ExperimentConfig, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
