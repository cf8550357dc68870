"""Experiment configuration: versioned JSON, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .inference import PolicyKind, make_policy
from .model import ModelConfig
from .noising import MaskStrategy
from .synthetic import CorruptionConfig, bundled_lexicon_path
from .training import TrainConfig
from .vocab import DEFAULT_CHARSET, Vocab, build_vocab

CONFIG_VERSION = 1


@dataclass
class ModelSection:
    L: int = 12
    D: int = 64
    N: int = 2
    heads: int = 4
    d_ff: int = 256


@dataclass
class DataConfig:
    charset: str = DEFAULT_CHARSET
    lexicon_path: Optional[str] = None  # None = bundled 500-word lexicon
    n_train: int = 20000
    n_eval: int = 1000
    corruption: CorruptionConfig = field(default_factory=lambda: CorruptionConfig(0.25, 0.1, 0.0))
    seed: int = 0


@dataclass
class InferConfig:
    policy: str = "blc"
    K: int = 3
    timing_samples: int = 200


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    version: int = CONFIG_VERSION

    def vocab(self) -> Vocab:
        return build_vocab(self.data.charset)

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(L=m.L, vocab_size=self.vocab().size, D=m.D, N=m.N,
                           heads=m.heads, d_ff=m.d_ff, S=m.L)

    def lexicon_path(self) -> Path:
        return Path(self.data.lexicon_path) if self.data.lexicon_path else bundled_lexicon_path()

    def validate(self) -> "ExperimentConfig":
        if self.version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {self.version}")
        self.model_config()
        if not self.lexicon_path().is_file():
            raise ValueError(f"lexicon not found: {self.lexicon_path()}")
        for s in self.train.mask_strategy_set:
            MaskStrategy(s)
        if not self.train.mask_strategy_set:
            raise ValueError("mask_strategy_set is empty")
        if not 0.0 <= self.train.branch_correction_prob <= 1.0:
            raise ValueError("branch_correction_prob must be in [0, 1]")
        K = None if PolicyKind(self.infer.policy) in (PolicyKind.PD, PolicyKind.AR) else self.infer.K
        make_policy(self.infer.policy, self.model.L, K)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"]["mask_strategy_set"] = list(d["train"]["mask_strategy_set"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **sections: dict) -> "ExperimentConfig":
        """Copy with per-section overrides, e.g. ``replace(train={"trn_enabled": False})``."""
        d = self.to_dict()
        for sec, vals in sections.items():
            if sec not in d or not isinstance(d[sec], dict):
                raise KeyError(f"unknown config section {sec!r}")
            d[sec].update(vals)
        return from_dict(d)


def _build(cls, data: Any, path: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, val in data.items():
        ftype = fields[name].type
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, val, f"{path}.{name}")
        elif name == "mask_strategy_set":
            kwargs[name] = tuple(val)
        else:
            kwargs[name] = val
    return cls(**kwargs)


_SECTIONS = {
    (ExperimentConfig, "model"): ModelSection,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "infer"): InferConfig,
    (DataConfig, "corruption"): CorruptionConfig,
}


def from_dict(d: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, d, "config").validate()


def loads(text: str) -> ExperimentConfig:
    return from_dict(json.loads(text))


def load_config(path) -> ExperimentConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.to_json() + "\n", encoding="utf-8")
