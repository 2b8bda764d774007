"""Input encoding: direct coding, event frames, log spectrograms, spiking patch splitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import tensor as tf
from .neuron import LIF, LifConfig
from .nn import BatchNorm, Conv2d, Module, zeros_param
from .tensor import ShapeError, Tensor


def direct_code(x: Tensor, T: int) -> Tensor:
    """Replicate a static input along a new leading time axis."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return tf.broadcast_expand(tf.as_tensor(x), 0, T)


# ---------------------------------------------------------------------------
# event streams
# ---------------------------------------------------------------------------

@dataclass
class EventStream:
    """Events as parallel arrays; polarity is +1 / -1."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event arrays differ in length")
        if n and np.any(np.diff(self.t) < 0):
            raise ValueError("event timestamps must be non-decreasing")
        if n and not np.all(np.isin(self.p, (-1, 1))):
            raise ValueError("polarity must be +1 or -1")

    def __len__(self) -> int:
        return len(self.t)


def aggregate_events(stream: EventStream, T: int, H: int, W: int, clip: bool = True) -> np.ndarray:
    """Bin events into ``[T, 2, H, W]`` frames (channel 0: negative, 1: positive).

    The time range ``[t_first, t_last]`` is split into ``T`` equal bins; an
    event at ``t_last`` lands in the final bin.
    """
    if len(stream) == 0:
        raise ValueError("empty event stream")
    if np.any((stream.x < 0) | (stream.x >= W) | (stream.y < 0) | (stream.y >= H)):
        raise ValueError(f"event coordinates outside a {H}x{W} sensor")
    t0, t1 = stream.t[0], stream.t[-1]
    span = max(int(t1 - t0), 1)
    bins = np.minimum((stream.t - t0) * T // span, T - 1)
    channel = (stream.p > 0).astype(np.int64)
    frames = np.zeros((T, 2, H, W), dtype=np.float64)
    np.add.at(frames, (bins, channel, stream.y, stream.x), 1.0)
    if clip:
        np.clip(frames, 0.0, 1.0, out=frames)
    return frames


# ---------------------------------------------------------------------------
# audio
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AudioPipelineConfig:
    sample_rate: int = 22050
    n_fft: int = 512
    hop: int = 353
    log_offset: float = 1e-7
    target_hw: tuple[int, int] | None = (32, 32)

    def __post_init__(self):
        if self.hop > self.n_fft:
            raise ValueError("hop must not exceed n_fft")
        if self.log_offset <= 0:
            raise ValueError("log_offset must be positive")


def resample_linear(x: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return x
    n_out = int(round(len(x) * dst_rate / src_rate))
    t_out = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(t_out, np.arange(len(x)), x)


def hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centered, zero-padded, Hann-windowed STFT magnitude ``[n_fft//2+1, frames]``.

    Zero padding keeps the edge frames free of the mirror-image kink that
    reflect padding puts at the signal boundary.
    """
    pad = n_fft // 2
    xp = np.pad(x, pad)
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop]
    spec = np.fft.rfft(frames * hann(n_fft), axis=-1)
    return np.abs(spec).T


def resize_bilinear(img: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a 2-D float image (PIL's filter widens on downscale)."""
    h, w = hw
    out = Image.fromarray(np.asarray(img, dtype=np.float32), mode="F").resize((w, h), Image.BILINEAR)
    return np.asarray(out, dtype=np.float64)


def log_spectrogram(waveform: np.ndarray, cfg: AudioPipelineConfig, source_rate: int | None = None) -> np.ndarray:
    """Peak-normalize, resample, STFT, ``log(|X| + offset)``; no resize."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise ValueError("empty waveform")
    peak = np.abs(x).max()
    if peak > 0:
        x = x / peak
    x = resample_linear(x, source_rate or cfg.sample_rate, cfg.sample_rate)
    if len(x) < cfg.n_fft:
        raise ValueError(f"waveform shorter than n_fft={cfg.n_fft} after resampling ({len(x)} samples)")
    return np.log(stft_magnitude(x, cfg.n_fft, cfg.hop) + cfg.log_offset)


def audio_to_logspec(waveform: np.ndarray, cfg: AudioPipelineConfig, source_rate: int | None = None) -> np.ndarray:
    """Full audio path; returns ``[1, H, W]`` with frequency along H."""
    spec = log_spectrogram(waveform, cfg, source_rate)
    if cfg.target_hw is not None:
        spec = resize_bilinear(spec, cfg.target_hw)
    return spec[None]


# ---------------------------------------------------------------------------
# spiking patch splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpsConfig:
    in_channels: int
    embed_dim: int
    stages: int = 4
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    pool: int = 2

    def stage_channels(self) -> list[int]:
        if self.embed_dim <= 0:
            raise ValueError("embed_dim must be positive")
        if self.embed_dim % 2 ** (self.stages - 1):
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by 2^{self.stages - 1}")
        return [self.embed_dim // 2 ** (self.stages - 1 - i) for i in range(self.stages)]

    def num_patches(self, h: int, w: int) -> int:
        f = self.pool ** self.stages
        if h % f or w % f:
            raise ShapeError(f"input {h}x{w} not divisible by {f} for {self.stages} pooling stages")
        return (h // f) * (w // f)


class SPS(Module):
    """Per stage conv -> BN -> LIF -> maxpool; output ``[T, B, N, D]`` spikes."""

    def __init__(self, cfg: SpsConfig, lif: LifConfig, seed: int, name: str):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.in_channels] + cfg.stage_channels()
        self.convs = [
            Conv2d(chans[i], chans[i + 1], seed, f"{name}.conv{i}", cfg.kernel, cfg.stride, cfg.padding)
            for i in range(cfg.stages)
        ]
        self.bns = [BatchNorm(chans[i + 1], f"{name}.bn{i}", axis=2) for i in range(cfg.stages)]
        self.lifs = [LIF(lif) for _ in range(cfg.stages)]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 5:
            raise ShapeError(f"SPS expects [T,B,C,H,W], got {x.shape}")
        T, B = x.shape[:2]
        self.cfg.num_patches(*x.shape[3:])
        for conv, bn, lif in zip(self.convs, self.bns, self.lifs):
            y = conv(x.reshape(T * B, *x.shape[2:]))
            y = bn(y.reshape(T, B, *y.shape[1:]))
            x = tf.maxpool2d(lif(y), self.cfg.pool)
        D, h, w = x.shape[2:]
        return x.reshape(T, B, D, h * w).permute(0, 1, 3, 2)


def sps_forward(x: Tensor, sps: SPS) -> Tensor:
    return sps(x)


def add_positional(x: Tensor, pe: Tensor) -> Tensor:
    if x.shape[-2:] != pe.shape:
        raise ShapeError(f"positional embedding {pe.shape} does not match patches {x.shape[-2:]}")
    return x + pe


class PositionalEmbedding(Module):
    """Learned additive ``[N, D]`` embedding shared across time and batch; starts at zero."""

    def __init__(self, n: int, d: int, name: str):
        super().__init__()
        self.pe = zeros_param((n, d), name + ".pe")

    def forward(self, x: Tensor) -> Tensor:
        return add_positional(x, self.pe)
