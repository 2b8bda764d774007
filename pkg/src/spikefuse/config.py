"""Experiment configuration and its JSON representation.

A config file has up to four sections whose keys are exactly the field
names of the dataclasses below::

    {"model": {...}, "train": {...}, "noise": {...}, "data": {...}}
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

MODES = ("scmrl", "baseline", "audio", "visual")


@dataclass(frozen=True)
class ModelConfig:
    T: int = 4
    embed_dim: int = 64
    depth: int = 2
    image_size: int = 32
    sps_stages: int = 2
    audio_channels: int = 1
    visual_channels: int = 3
    num_classes: int = 4
    alpha: float = 1.5
    attn_scale: float = 0.125
    # None: attn_scale * N / T, so both CCSSA branches see the same score magnitude per key
    temporal_attn_scale: float | None = None
    heads: int = 1
    mlp_ratio: int = 4
    tau: float = 2.0
    v_th: float = 1.0
    surrogate_slope: float = 4.0
    sao_temperature: float = 0.1
    sao: bool = True
    sao_symmetric: bool = False
    mode: str = "scmrl"
    relaxed: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.temporal_attn_scale is not None and self.temporal_attn_scale <= 0:
            raise ValueError("temporal_attn_scale must be positive")

    @property
    def modalities(self) -> tuple[str, ...]:
        if self.mode in ("scmrl", "baseline"):
            return ("audio", "visual")
        return (self.mode,)

    @property
    def uses_sao(self) -> bool:
        return self.mode == "scmrl" and self.sao


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    epochs: int = 100
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class NoiseConfig:
    snr_db: float = 20.0
    target: str = "both"
    seed: int = 0

    def __post_init__(self):
        if self.target not in ("audio", "visual", "both"):
            raise ValueError(f"noise target must be audio, visual or both, got {self.target!r}")


@dataclass(frozen=True)
class DataConfig:
    """Synthetic set parameters, or ``root`` pointing at a dataset directory."""

    classes: int = 4
    n_per_class: int = 24
    seed: int = 0
    root: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseConfig | None = None
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        out = {"model": asdict(self.model), "train": asdict(self.train), "data": asdict(self.data)}
        if self.noise is not None:
            out["noise"] = asdict(self.noise)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        unknown = set(raw) - {"model", "train", "noise", "data"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        noise = _build(NoiseConfig, raw["noise"]) if raw.get("noise") is not None else None
        return cls(
            model=_build(ModelConfig, raw.get("model", {})),
            train=_build(TrainConfig, raw.get("train", {})),
            noise=noise,
            data=_build(DataConfig, raw.get("data", {})),
        )


def _build(kind, values: dict):
    names = {f.name for f in fields(kind)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {kind.__name__} fields: {sorted(unknown)}")
    return kind(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2))


def desk_preset(**model_overrides) -> ExperimentConfig:
    """CPU-minutes preset: T=4, D=64, depth 2, 32x32 inputs, 2 SPS stages, B=32, 20 epochs."""
    return ExperimentConfig(
        model=replace(ModelConfig(), **model_overrides),
        train=TrainConfig(epochs=20, batch_size=32),
        data=DataConfig(),
    )
