"""Experiment configuration: one YAML file, defaults at full scale.

Every key is optional; anything left out falls back to the defaults below
(reference SE / SID layouts, 25 ms / 10 ms / 512-point frontend, 3 s
segments, Adam at 1e-3 decayed by 0.9 per epoch).  ``configs/toy.yaml``
shrinks widths and segment size for desk-scale runs.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .audio import SpectrogramConfig
from .mixer import CATEGORIES, SNR_LEVELS
from .models import VARIANTS
from .senet import SE_LAYOUT, ConvSpec, SENetConfig
from .sidnet import SID_LAYOUT, SID_LAYOUT_LITERAL, ResBlockSpec, SIDNetConfig
from .training import TrainConfig

OUTPUT_ENV = "CASCADEID_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    data_dir: str = "data"
    output_dir: str = "out"


@dataclass
class CorpusConfig:
    n_speakers: int = 8
    utts_per_speaker: int = 20
    seconds: float = 4.0
    test_fraction: float = 0.25
    noise_per_category: int = 6
    noise_seconds: float = 6.0
    noise_train_ratio: float = 0.5


@dataclass
class FrontendConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    segment_seconds: float = 3.0

    def spectrogram(self) -> SpectrogramConfig:
        return SpectrogramConfig(self.window_ms, self.hop_ms, self.fft_size, self.segment_seconds)


@dataclass
class SEConfig:
    # rows: [kT, kF, channels, dT, dF, ms]; empty means the reference SE layout (optionally at `width`)
    rows: list = field(default_factory=list)
    width: int = 48

    def build(self) -> SENetConfig:
        if not self.rows:
            return SENetConfig.with_width(self.width)
        try:
            blocks = tuple(ConvSpec((int(r[0]), int(r[1])), int(r[2]), (int(r[3]), int(r[4])),
                                    bool(r[5]) if len(r) > 5 else True) for r in self.rows)
        except (TypeError, IndexError, ValueError) as exc:
            raise ConfigError(f"se.rows: {exc}") from exc
        return SENetConfig(blocks)


@dataclass
class SIDConfig:
    layout: str = "pool"  # "pool": Blocks 4/8 widened to 256/512; "literal": printed 128
    widths: list = field(default_factory=list)
    strides: list = field(default_factory=list)
    embedding_dim: int = 512

    def build(self, input_shape, num_speakers: int) -> SIDNetConfig:
        if self.layout not in ("pool", "literal"):
            raise ConfigError(f"sid.layout must be 'pool' or 'literal', got {self.layout!r}")
        base = SID_LAYOUT if self.layout == "pool" else SID_LAYOUT_LITERAL
        blocks = list(base)
        if self.widths:
            if len(self.widths) != len(base):
                raise ConfigError(f"sid.widths needs {len(base)} entries")
            blocks = [ResBlockSpec(tuple(int(w) for _ in b.channels), b.stride, b.ms)
                      for b, w in zip(blocks, self.widths)]
        if self.strides:
            if len(self.strides) != len(base):
                raise ConfigError(f"sid.strides needs {len(base)} entries")
            blocks = [ResBlockSpec(b.channels, int(s), b.ms) for b, s in zip(blocks, self.strides)]
        return SIDNetConfig(tuple(blocks), tuple(input_shape), self.embedding_dim, num_speakers)


@dataclass
class TrainSection:
    lr0: float = 1e-3
    decay: float = 0.9
    batch_size: int = 8
    pretrain_se_epochs: int = 5
    pretrain_sid_epochs: int = 10
    epochs: int = 15
    segments_per_utt: int = 1
    categories: list = field(default_factory=lambda: list(CATEGORIES))
    snrs: list = field(default_factory=lambda: list(SNR_LEVELS))

    def build(self, seed: int, regime: str = "joint", ms_placement: str = "none") -> TrainConfig:
        return TrainConfig(self.lr0, self.decay, self.batch_size, self.epochs, seed, regime, ms_placement,
                           self.pretrain_se_epochs, self.pretrain_sid_epochs, self.segments_per_utt)


@dataclass
class EvalSection:
    categories: list = field(default_factory=lambda: list(CATEGORIES))
    snrs: list = field(default_factory=lambda: list(SNR_LEVELS))
    include_original: bool = True
    segments_per_utt: int = 4
    n_trials: int = 1000
    fuse: list = field(default_factory=lambda: ["SE-MS+SID", "SE+SID-MS"])
    alphas: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])

    def conditions(self) -> list[tuple[str, str]]:
        conds = [(c, str(s)) for c in self.categories for s in self.snrs]
        if self.include_original:
            conds.append(("original", "-"))
        return conds


@dataclass
class ExperimentConfig:
    seed: int = 7
    variants: list = field(default_factory=lambda: ["SID", "SE+SID", "SE-MS+SID", "SE+SID-MS"])
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    se: SEConfig = field(default_factory=SEConfig)
    sid: SIDConfig = field(default_factory=SIDConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    base_dir: str = field(default=".", compare=False)

    def validate(self) -> "ExperimentConfig":
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        for c in list(self.train.categories) + list(self.eval.categories):
            if c not in CATEGORIES:
                raise ConfigError(f"unknown noise category {c!r}")
        for s in list(self.train.snrs) + list(self.eval.snrs):
            if s not in SNR_LEVELS:
                raise ConfigError(f"SNR {s} is not on the grid {SNR_LEVELS}")
        for v in self.eval.fuse:
            if v not in VARIANTS:
                raise ConfigError(f"unknown fuse variant {v!r}")
        try:
            self.frontend.spectrogram()
            self.se.build()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @property
    def data_dir(self) -> Path:
        return Path(self.base_dir) / self.paths.data_dir

    @property
    def output_dir(self) -> Path:
        override = os.environ.get(OUTPUT_ENV)
        return Path(override) if override else Path(self.base_dir) / self.paths.output_dir

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        d.pop("paths")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fill(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {where}.{key}" if where else f"unknown key {key}")
        default = known[key].default_factory() if callable(known[key].default_factory) else known[key].default
        if is_dataclass(default):
            kwargs[key] = _fill(type(default), value, f"{where}.{key}".strip("."))
        else:
            kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict | None, base_dir=".") -> ExperimentConfig:
    cfg = _fill(ExperimentConfig, data or {}, "")
    cfg.base_dir = str(base_dir)
    return cfg.validate()


def load_config(path=None, seed: int | None = None) -> ExperimentConfig:
    if path is None:
        cfg = from_dict({})
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        cfg = from_dict(data, p.parent)
    if seed is not None:
        cfg.seed = int(seed)
    return cfg
