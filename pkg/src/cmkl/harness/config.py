"""Experiment configuration: dataclasses, YAML/JSON loading and method resolution."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from cmkl.continual.ewc import DEFAULT_LAMBDAS, UNIFORM_LAMBDA, EWCConfig
from cmkl.kgdata import SynthConfig
from cmkl.model import ModelConfig

METHODS = ("cmkl", "naive", "joint", "ewc-only", "ewc-uniform", "struct-only", "text-only", "mol-only")
TRACKS = ("link-prediction", "classification")
DEFAULT_SEEDS = (42, 123, 456, 789, 1024)


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str | None = None
    # seeds data generation and file-level splits; independent of the run seeds
    seed: int = 0
    synthetic: SynthConfig = field(default_factory=SynthConfig)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 512
    margin: float = 1.0
    n_neg: int = 8
    # None trains on the full task each epoch
    triples_per_epoch: int | None = None
    fisher_batches: int = 10


@dataclass
class CLConfig:
    ewc_mode: str = "per-group"
    lambdas: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LAMBDAS))
    uniform_lambda: float = UNIFORM_LAMBDA
    accumulate: str = "sum"
    buffer_size: int = 1000
    alpha: float = 1.0

    def ewc(self) -> EWCConfig:
        return EWCConfig(dict(self.lambdas), self.ewc_mode, self.uniform_lambda, self.accumulate)


@dataclass
class OutputConfig:
    dir: str = "results"
    # router-weight and buffer CSV dumps
    analysis: bool = False


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    method: str = "cmkl"
    track: str = "link-prediction"
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cl: CLConfig = field(default_factory=CLConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.track not in TRACKS:
            raise ConfigError(f"track must be one of {TRACKS}, got {self.track!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.data.source not in ("synthetic", "files"):
            raise ConfigError(f"data.source must be 'synthetic' or 'files', got {self.data.source!r}")
        if self.data.source == "files":
            if not self.data.path or not Path(self.data.path).is_dir():
                raise ConfigError(f"data.path {self.data.path!r} is not a directory")
        t = self.train
        if t.lr <= 0 or t.epochs < 1 or t.batch_size < 1 or t.n_neg < 1 or t.margin <= 0 or t.fisher_batches < 1:
            raise ConfigError("train: lr, margin must be > 0; epochs, batch_size, n_neg, fisher_batches >= 1")
        if self.cl.buffer_size < 0 or self.cl.alpha < 0:
            raise ConfigError("cl.buffer_size and cl.alpha must be nonnegative")
        try:
            self.cl.ewc()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        fusion = resolve(self).fusion
        if self.track == "classification" and fusion == "score":
            raise ConfigError("score-level fusion has no fused embedding; it supports the link-prediction track only")
        if fusion == "gated" and self.model.dim % self.model.attn_heads:
            raise ConfigError(f"model.dim {self.model.dim} must be divisible by attn_heads {self.model.attn_heads}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self, seed: int | None = None) -> str:
        payload = {"config": self.to_dict(), "seed": seed}
        return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def _build(cls, raw: dict | None, where: str):
    raw = dict(raw or {})
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    nested = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig, "cl": CLConfig, "output": OutputConfig, "synthetic": SynthConfig}
    kwargs = {}
    for key, value in raw.items():
        if key in nested and (isinstance(value, dict) or value is None):
            kwargs[key] = _build(nested[key], value, f"{where}.{key}")
        elif key == "lambdas" and value is not None:
            kwargs[key] = {**DEFAULT_LAMBDAS, **{k: float(v) for k, v in value.items()}}
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, raw, "config")
    cfg.seeds = [int(s) for s in cfg.seeds]
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def with_overrides(cfg: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """Copy of ``cfg`` with dotted-key overrides, e.g. ``{"cl.buffer_size": 500}``."""
    raw = cfg.to_dict()
    for dotted, value in overrides.items():
        node = raw
        *path, last = dotted.split(".")
        for key in path:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"override {dotted!r}: no section {key!r}")
            node = node[key]
        if last not in node:
            raise ConfigError(f"override {dotted!r}: unknown key {last!r}")
        node[last] = value
    return config_from_dict(raw)


@dataclass(frozen=True)
class ResolvedMethod:
    fusion: str
    ewc: EWCConfig
    buffer_size: int
    alpha: float
    joint: bool

    @property
    def uses_ewc(self) -> bool:
        return self.ewc.mode != "off" and any(self.ewc.strength(g) > 0 for g in DEFAULT_LAMBDAS)

    @property
    def uses_replay(self) -> bool:
        return self.buffer_size > 0


_DEFAULT_FUSION = {
    "cmkl": "moe",
    "naive": "structural",
    "joint": "structural",
    "ewc-only": "structural",
    "ewc-uniform": "moe",
    "struct-only": "structural",
    "text-only": "text",
    "mol-only": "molecular",
}

_FORCED = {"struct-only": "structural", "text-only": "text", "mol-only": "molecular"}


def resolve(cfg: ExperimentConfig) -> ResolvedMethod:
    """Effective fusion and CL settings for the configured method."""
    m = cfg.method
    fusion = _FORCED.get(m) or cfg.model.fusion or _DEFAULT_FUSION[m]
    ewc = cfg.cl.ewc()
    buffer_size, alpha = cfg.cl.buffer_size, cfg.cl.alpha
    if m in ("naive", "joint"):
        ewc = dataclasses.replace(ewc, mode="off")
        buffer_size = 0
    elif m == "ewc-only":
        ewc = dataclasses.replace(ewc, mode="uniform")
        buffer_size = 0
    elif m == "ewc-uniform":
        ewc = dataclasses.replace(ewc, mode="uniform")
    return ResolvedMethod(fusion, ewc, buffer_size, alpha, joint=m == "joint")
