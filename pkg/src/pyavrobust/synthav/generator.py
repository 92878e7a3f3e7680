from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np
from scipy import stats

from pyavrobust.synthav.sample import AVDataset, DatasetSplits

SPLIT_RATIO = (7, 2, 1)


@dataclass(frozen=True)
class GenConfig:
    """
    Synthetic audio-visual event generator settings.

    Attributes
    -----------
    n_classes: int = 6
    samples_per_class: int = 60
    n_frames: int = 8
        T, shared by both modalities.
    seed: int = 0
    redundancy: float = 0.7
        r in [0, 1]; each frame is blended towards the clip mean with weight r,
        r = 1 makes all frames identical.
    correlation: float = 0.9
        kappa in [0, 1]; audio phase = visual phase + (1 - kappa) * U(-pi, pi).
    noise: float = 0.05
        sigma >= 0 of the additive visual noise.
    audio_noise_scale: float = 2.0
        Audio noise is ``audio_noise_scale * noise``; > 1 gives the visual
        channel the higher class signal-to-noise ratio.
    contrast: float = 0.08
        Peak blob intensity over the zero background; the loudest harmonic has
        the same level. An 8/255 perturbation is about 0.4 of it.
    channels: int = 1
    height: int = 16
    width: int = 16
    n_bins: int = 16
    """

    n_classes: int = 6
    samples_per_class: int = 60
    n_frames: int = 8
    seed: int = 0
    redundancy: float = 0.7
    correlation: float = 0.9
    noise: float = 0.05
    audio_noise_scale: float = 2.0
    contrast: float = 0.08
    channels: int = 1
    height: int = 16
    width: int = 16
    n_bins: int = 16

    def __post_init__(self) -> None:
        for name in ("n_classes", "samples_per_class", "n_frames", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_classes > 6:
            raise ValueError(f"n_classes must be <= 6, got {self.n_classes}")
        if self.height < 8 or self.width < 8 or self.n_bins < 8:
            raise ValueError("frames need height, width and n_bins >= 8")
        for name in ("redundancy", "correlation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(
                    f"{name} must lie in [0, 1], got {getattr(self, name)}"
                )
        if self.noise < 0 or self.audio_noise_scale < 0:
            raise ValueError("noise levels must be >= 0")
        if not 0.0 < self.contrast <= 1.0:
            raise ValueError(f"contrast must lie in (0, 1], got {self.contrast}")
        if self.samples_per_class * SPLIT_RATIO[2] < sum(SPLIT_RATIO):
            raise ValueError(
                f"samples_per_class={self.samples_per_class} leaves an empty test split; "
                f"use at least {sum(SPLIT_RATIO)}"
            )

    def to_meta(self) -> dict:
        return asdict(self)


def _latent(label: int, n_frames: int, phase: float) -> np.ndarray:
    """Class oscillation s_c(t) in [-1, 1]: frequency and waveform depend on c."""
    t = np.arange(n_frames)
    cycles = 1 + label % 3
    wave = np.sin(2 * np.pi * cycles * t / n_frames + phase)
    if label >= 3:
        # sharpened waveform for the upper half of the classes
        wave = np.tanh(3.0 * wave) / np.tanh(3.0)
    return wave


def _render_video(cfg: GenConfig, label: int, latent: np.ndarray) -> np.ndarray:
    rows = np.arange(cfg.height)[:, None]
    cols = np.arange(cfg.width)[None, :]
    centre_row = cfg.height * (0.25 + 0.45 * (label // 3))
    base_col = cfg.width * (0.25 + 0.25 * (label % 3))
    frames = np.empty((cfg.n_frames, cfg.channels, cfg.height, cfg.width))
    for t, s in enumerate(latent):
        width = 1.2 + 0.6 * (1.0 + s) / 2.0
        col = base_col + 1.5 * s
        blob = cfg.contrast * np.exp(
            -((rows - centre_row) ** 2 + (cols - col) ** 2) / (2.0 * width**2)
        )
        frames[t] = blob[None]
    return frames


def _render_audio(cfg: GenConfig, label: int, latent: np.ndarray) -> np.ndarray:
    bins = np.arange(cfg.n_bins)
    fundamental = 1.0 + 1.5 * label
    harmonics = [
        h for h in (1, 2, 3) if h * fundamental + 2.5 < cfg.n_bins
    ]
    frames = np.zeros((cfg.n_frames, cfg.n_bins))
    for t, s in enumerate(latent):
        level = cfg.contrast * (0.5 + 0.5 * (1.0 + s) / 2.0)
        for h in harmonics:
            centre = h * fundamental + 0.5 * s
            frames[t] += (level / h) * np.exp(-((bins - centre) ** 2) / (2.0 * 0.7**2))
    return frames


def _low_pass(frames: np.ndarray, redundancy: float) -> np.ndarray:
    return redundancy * frames.mean(axis=0, keepdims=True) + (1.0 - redundancy) * frames


def _generate_class(
    cfg: GenConfig, label: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    videos, audios = [], []
    for _ in range(cfg.samples_per_class):
        phase = rng.uniform(-np.pi, np.pi)
        audio_phase = phase + (1.0 - cfg.correlation) * rng.uniform(-np.pi, np.pi)
        video = _render_video(cfg, label, _latent(label, cfg.n_frames, phase))
        audio = _render_audio(cfg, label, _latent(label, cfg.n_frames, audio_phase))
        video = video + rng.normal(0.0, cfg.noise, size=video.shape)
        audio = audio + rng.normal(
            0.0, cfg.noise * cfg.audio_noise_scale, size=audio.shape
        )
        videos.append(np.clip(_low_pass(video, cfg.redundancy), 0.0, 1.0))
        audios.append(np.clip(_low_pass(audio, cfg.redundancy), 0.0, 1.0))
    return np.stack(videos), np.stack(audios)


def _as_stored(values: np.ndarray) -> np.ndarray:
    # round-trip through float32 so in-memory data equals what containers hold
    return values.astype(np.float32).astype(np.float64)


def generate_dataset(cfg: GenConfig) -> DatasetSplits:
    """
    Generate a stratified 7:2:1 train/val/test split.

    Each class has a latent oscillation that drives the position and size of a
    Gaussian blob in the video and the level and position of a harmonic stack
    in the audio. Deterministic for a given ``cfg``.

    Parameters
    ----------
    cfg:
        Generator settings.

    Returns
    -------
    splits: DatasetSplits
    """
    rng = np.random.default_rng(cfg.seed)
    total = sum(SPLIT_RATIO)
    n_train = cfg.samples_per_class * SPLIT_RATIO[0] // total
    n_val = cfg.samples_per_class * SPLIT_RATIO[1] // total

    parts: List[List[Tuple[np.ndarray, np.ndarray, np.ndarray]]] = [[], [], []]
    for label in range(cfg.n_classes):
        video, audio = _generate_class(cfg, label, rng)
        labels = np.full(cfg.samples_per_class, label, dtype=np.int64)
        order = rng.permutation(cfg.samples_per_class)
        bounds = [
            order[:n_train],
            order[n_train : n_train + n_val],
            order[n_train + n_val :],
        ]
        for part, index in zip(parts, bounds):
            part.append((video[index], audio[index], labels[index]))

    datasets = []
    for part in parts:
        datasets.append(
            AVDataset(
                x_v=_as_stored(np.concatenate([p[0] for p in part])),
                x_a=_as_stored(np.concatenate([p[1] for p in part])),
                y=np.concatenate([p[2] for p in part]),
            )
        )
    splits = DatasetSplits(*datasets)
    logging.info(
        f"Generated {len(splits.train)}/{len(splits.val)}/{len(splits.test)} "
        f"train/val/test samples with {cfg.n_classes} classes."
    )
    return splits


def frame_energy_correlation(dataset: AVDataset) -> np.ndarray:
    """
    Per-sample Pearson correlation between video and audio frame energies.

    Returns
    -------
    correlation: np.ndarray
        (N,) values; NaN where a modality is constant over time.
    """
    energy_v = dataset.x_v.reshape(len(dataset), dataset.x_v.shape[1], -1).sum(axis=-1)
    energy_a = dataset.x_a.sum(axis=-1)
    out = np.full(len(dataset), np.nan)
    for index in range(len(dataset)):
        if np.ptp(energy_v[index]) > 0 and np.ptp(energy_a[index]) > 0:
            out[index] = stats.pearsonr(energy_v[index], energy_a[index])[0]
    return out
