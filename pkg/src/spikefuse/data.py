"""Datasets: synthetic audio-visual generator, directory layout IO, SNR noise."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.io import wavfile

from .config import DataConfig, NoiseConfig
from .encoding import AudioPipelineConfig, EventStream, aggregate_events, audio_to_logspec
from .model import Batch

log = logging.getLogger(__name__)

SYNTH_RATE = 22050
SYNTH_SECONDS = 0.5
GLYPH = 9


@dataclass
class Dataset:
    """Paired raw modalities.

    ``waveforms`` is a list of 1-D float arrays (one per sample, each at
    ``sample_rates[i]``); ``visual`` is ``[n, C, H, W]`` images or
    ``[n, T, 2, H, W]`` event frames.
    """

    waveforms: list[np.ndarray]
    sample_rates: np.ndarray
    visual: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    ids: list[str] = field(default_factory=list)
    audio_cfg: AudioPipelineConfig = field(default_factory=AudioPipelineConfig)
    _spec_cache: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def spectrograms(self) -> np.ndarray:
        if self._spec_cache is None:
            self._spec_cache = spectrograms(self.waveforms, self.sample_rates, self.audio_cfg)
        return self._spec_cache

    def batch(self, idx, noise: NoiseConfig | None = None) -> Batch:
        idx = np.asarray(idx, dtype=int)
        labels = self.labels[idx]
        visual = self.visual[idx]
        if noise is None:
            return Batch(self.spectrograms()[idx], visual, labels)
        rng = np.random.default_rng([noise.seed, *idx[:1].tolist(), len(idx)])
        if noise.target in ("visual", "both"):
            visual = np.stack([inject_noise(v, noise.snr_db, rng) for v in visual])
        if noise.target in ("audio", "both"):
            waves = [inject_noise(self.waveforms[i], noise.snr_db, rng) for i in idx]
            audio = spectrograms(waves, self.sample_rates[idx], self.audio_cfg)
        else:
            audio = self.spectrograms()[idx]
        return Batch(audio, visual, labels)


def spectrograms(waveforms, rates, cfg: AudioPipelineConfig) -> np.ndarray:
    return np.stack([audio_to_logspec(w, cfg, int(r)) for w, r in zip(waveforms, rates)])


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then the first ``train_fraction`` of samples train."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * train_fraction))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

def noise_std(x: np.ndarray, snr_db: float) -> float:
    power = float(np.mean(np.square(x, dtype=np.float64)))
    # 10^(-snr/10) underflows to 0 for huge snr instead of overflowing
    return float(np.sqrt(power * 10.0 ** (-snr_db / 10.0)))


def inject_noise(x: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise with power ``E[x^2] / 10^(snr/10)``."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("cannot add noise to an empty input")
    if not np.any(x):
        warnings.warn("signal power is zero; input returned unchanged", stacklevel=2)
        return x.copy()
    std = noise_std(x, snr_db)
    return x + std * rng.standard_normal(x.shape)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def class_glyph(k: int) -> np.ndarray:
    """Fixed binary 9x9 pattern for class ``k`` (independent of the dataset seed)."""
    rng = np.random.default_rng([7919, k])
    glyph = rng.random((GLYPH, GLYPH)) < 0.45
    glyph[GLYPH // 2, :] |= k % 2 == 0
    glyph[:, GLYPH // 2] |= k % 2 == 1
    return glyph.astype(np.float64)


def class_frequency(k: int) -> float:
    return 500.0 * (k + 1)


def synth_dataset(classes: int = 4, n_per_class: int = 40, seed: int = 0, image_size: int = 32,
                  pixel_noise: float = 0.15, audio_noise: float = 0.3) -> Dataset:
    """Class ``k``: a glyph at a jittered position in an RGB image, and a
    sine at ``500 (k+1)`` Hz plus white noise. Both modalities identify the
    class on their own."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if class_frequency(classes - 1) >= SYNTH_RATE / 2:
        raise ValueError(f"{classes} classes put tones above Nyquist")
    rng = np.random.default_rng(seed)
    n_samples = int(SYNTH_RATE * SYNTH_SECONDS)
    t = np.arange(n_samples) / SYNTH_RATE
    waves, images, labels, ids = [], [], [], []
    for k in range(classes):
        glyph = class_glyph(k)
        for j in range(n_per_class):
            img = np.zeros((3, image_size, image_size))
            r, c = rng.integers(0, image_size - GLYPH + 1, size=2)
            tint = rng.uniform(0.6, 1.0, size=3)
            img[:, r:r + GLYPH, c:c + GLYPH] = tint[:, None, None] * glyph
            img = np.clip(img + pixel_noise * rng.standard_normal(img.shape), 0.0, 1.0)
            amp = rng.uniform(0.5, 1.0)
            phase = rng.uniform(0, 2 * np.pi)
            wave = amp * np.sin(2 * np.pi * class_frequency(k) * t + phase)
            wave = wave + audio_noise * amp * rng.standard_normal(n_samples)
            waves.append(wave)
            images.append(img)
            labels.append(k)
            ids.append(f"{k:02d}_{j:04d}")
    return Dataset(
        waveforms=waves,
        sample_rates=np.full(len(waves), SYNTH_RATE),
        visual=np.stack(images),
        labels=np.array(labels),
        class_names=[f"class{k}" for k in range(classes)],
        ids=ids,
        audio_cfg=AudioPipelineConfig(target_hw=(image_size, image_size)),
    )


def glyph_events(img: np.ndarray, rng: np.random.Generator, steps: int = 16, duration_us: int = 100_000,
                 rate: float = 0.3) -> EventStream:
    """Events from a static image: bright pixels fire ON, others rarely OFF."""
    gray = img.mean(axis=0)
    ts, xs, ys, ps = [], [], [], []
    for b in range(steps):
        fire = rng.random(gray.shape) < rate * gray
        off = rng.random(gray.shape) < 0.01
        for mask, pol in ((fire, 1), (off, -1)):
            yy, xx = np.nonzero(mask)
            ts.append(rng.integers(b * duration_us // steps, (b + 1) * duration_us // steps, size=len(yy)))
            xs.append(xx)
            ys.append(yy)
            ps.append(np.full(len(yy), pol))
    t = np.concatenate(ts)
    order = np.argsort(t, kind="stable")
    return EventStream(t[order], np.concatenate(xs)[order], np.concatenate(ys)[order], np.concatenate(ps)[order])


# ---------------------------------------------------------------------------
# files: root/<class>/<id>.{wav,png,evt}
# ---------------------------------------------------------------------------

def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    rate, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / np.iinfo(data.dtype).max
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return data, int(rate)


def write_wav(path: str | Path, wave: np.ndarray, rate: int) -> None:
    peak = np.abs(wave).max()
    scaled = wave / peak if peak > 0 else wave
    wavfile.write(str(path), rate, (scaled * 32767).astype(np.int16))


def read_png(path: str | Path, size: int | None = None) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


def write_png(path: str | Path, img: np.ndarray) -> None:
    arr = np.clip(np.round(img.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_events(path: str | Path) -> EventStream:
    """Text lines ``t x y p`` with ``p`` in {0, 1}."""
    raw = np.loadtxt(path, dtype=np.int64, ndmin=2)
    if raw.size == 0:
        raise ValueError(f"{path}: no events")
    if raw.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 columns, got {raw.shape[1]}")
    if not np.all(np.isin(raw[:, 3], (0, 1))):
        raise ValueError(f"{path}: polarity must be 0 or 1")
    return EventStream(raw[:, 0], raw[:, 1], raw[:, 2], 2 * raw[:, 3] - 1)


def write_events(path: str | Path, stream: EventStream) -> None:
    rows = np.stack([stream.t, stream.x, stream.y, (stream.p > 0).astype(np.int64)], axis=1)
    np.savetxt(path, rows, fmt="%d")


def save_dataset(ds: Dataset, root: str | Path, events: bool = False, event_seed: int = 0) -> Path:
    root = Path(root)
    rng = np.random.default_rng(event_seed)
    for i in range(len(ds)):
        cls_dir = root / ds.class_names[ds.labels[i]]
        cls_dir.mkdir(parents=True, exist_ok=True)
        stem = ds.ids[i] if ds.ids else f"{i:05d}"
        write_wav(cls_dir / f"{stem}.wav", ds.waveforms[i], int(ds.sample_rates[i]))
        if ds.visual.ndim == 4:
            write_png(cls_dir / f"{stem}.png", ds.visual[i])
            if events:
                write_events(cls_dir / f"{stem}.evt", glyph_events(ds.visual[i], rng))
    return root


def load_dataset(root: str | Path, image_size: int = 32, T: int = 4, prefer_events: bool = False) -> Dataset:
    """Load ``root/<class>/<id>.wav`` paired with ``<id>.png`` (or ``<id>.evt``)."""
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"no class directories under {root}")
    waves, rates, visual, labels, ids = [], [], [], [], []
    for k, d in enumerate(class_dirs):
        for wav in sorted(d.glob("*.wav")):
            png, evt = wav.with_suffix(".png"), wav.with_suffix(".evt")
            if prefer_events and evt.exists():
                stream = read_events(evt)
                visual.append(aggregate_events(stream, T, image_size, image_size))
            elif png.exists():
                visual.append(read_png(png, image_size))
            elif evt.exists():
                visual.append(aggregate_events(read_events(evt), T, image_size, image_size))
            else:
                log.warning("skipping %s: no paired visual file", wav)
                continue
            w, r = read_wav(wav)
            waves.append(w)
            rates.append(r)
            labels.append(k)
            ids.append(wav.stem)
    if not labels:
        raise ValueError(f"no paired samples under {root}")
    return Dataset(
        waveforms=waves,
        sample_rates=np.array(rates),
        visual=np.stack(visual),
        labels=np.array(labels),
        class_names=[d.name for d in class_dirs],
        ids=ids,
        audio_cfg=AudioPipelineConfig(target_hw=(image_size, image_size)),
    )


def dataset_from_config(data: DataConfig, image_size: int = 32, T: int = 4) -> Dataset:
    """Synthetic set, or the directory at ``data.root`` when it is set."""
    if data.root:
        return load_dataset(data.root, image_size, T)
    return synth_dataset(data.classes, data.n_per_class, data.seed, image_size)
