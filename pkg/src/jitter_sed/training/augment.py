"""Spectrogram augmentations for the SED stages.

All functions act on standardised log-mel batches (B, 500, 128) with frame
targets on the 100-step label grid, so one label frame spans five feature
frames.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigurationError
from .data import SEDBatch

FEATURES_PER_LABEL = 5


@dataclass(frozen=True)
class AugmentationConfig:
    frame_shift_max: int = 10          # feature frames
    mixup_alpha: float = 0.2
    mixup_prob: float = 0.5
    time_mask_max: int = 25            # feature frames
    time_mask_prob: float = 0.5
    filter_bands: tuple[int, int] = (2, 5)
    filter_db: float = 6.0
    freq_distortion: float = 2.0       # max mel-bin displacement
    enabled: bool = True

    def __post_init__(self):
        if self.mixup_alpha <= 0:
            raise ConfigurationError("mixup_alpha must be > 0")
        if self.frame_shift_max < 0 or self.time_mask_max < 0:
            raise ConfigurationError("augmentation widths must be >= 0")


def frame_shift(x: np.ndarray, labels: np.ndarray, shift: int) -> tuple[np.ndarray, np.ndarray]:
    """Roll features by ``shift`` frames and labels by the rate-converted, rounded offset."""
    label_shift = int(np.floor(shift / FEATURES_PER_LABEL + 0.5))
    return np.roll(x, shift, axis=0), np.roll(labels, label_shift, axis=0)


def mixup(x1, y1, x2, y2, lam: float):
    return lam * x1 + (1.0 - lam) * x2, lam * y1 + (1.0 - lam) * y2


def time_mask(x: np.ndarray, labels: np.ndarray, start: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero feature frames [start, start+width) and the label frames whose centres fall inside."""
    if width <= 0:
        return x, labels
    x = x.copy()
    labels = labels.copy()
    x[start:start + width] = 0.0
    centres = np.arange(labels.shape[0]) * FEATURES_PER_LABEL + FEATURES_PER_LABEL / 2
    labels[(centres >= start) & (centres < start + width)] = 0.0
    return x, labels


def filter_augment(x: np.ndarray, edges: np.ndarray, gains_db: np.ndarray) -> np.ndarray:
    """Add a per-band log-magnitude gain to contiguous mel bands delimited by ``edges``."""
    gain = np.zeros(x.shape[-1], dtype=np.float64)
    for lo, hi, g in zip(edges[:-1], edges[1:], gains_db):
        gain[lo:hi] = g * np.log(10.0) / 20.0
    return (x + gain).astype(x.dtype)


def frequency_distortion(x: np.ndarray, knots: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Resample the mel axis through a piecewise-linear warp with fixed end points."""
    n = x.shape[-1]
    src = np.clip(np.arange(n) + np.interp(np.arange(n), knots, shifts), 0, n - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    w = (src - i0).astype(x.dtype)
    return x[..., i0] * (1 - w) + x[..., i1] * w


def _spectral(x: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[-1]
    lo, hi = cfg.filter_bands
    k = int(rng.integers(lo, hi + 1))
    edges = np.concatenate([[0], np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False)), [n]])
    x = filter_augment(x, edges, rng.uniform(-cfg.filter_db, cfg.filter_db, size=k))
    if cfg.freq_distortion > 0:
        knots = np.linspace(0, n - 1, 6)
        shifts = rng.uniform(-cfg.freq_distortion, cfg.freq_distortion, size=6)
        shifts[0] = shifts[-1] = 0.0
        x = frequency_distortion(x, knots, shifts)
    return x


def augment(batch: SEDBatch, cfg: AugmentationConfig, rng: np.random.Generator) -> SEDBatch:
    if not cfg.enabled:
        return batch
    x = batch.x.copy()
    strong = batch.strong.copy()
    weak = batch.weak.copy()
    b = len(x)
    for i in range(b):
        x[i] = _spectral(x[i], cfg, rng)
        if cfg.frame_shift_max:
            s = int(rng.integers(-cfg.frame_shift_max, cfg.frame_shift_max + 1))
            x[i], strong[i] = frame_shift(x[i], strong[i], s)
    # mixup within the strong group and within the weak group
    for sl in (batch.strong_slice, batch.weak_slice):
        idx = np.arange(b)[sl]
        if len(idx) < 2 or rng.random() >= cfg.mixup_prob:
            continue
        lam = float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
        perm = idx[rng.permutation(len(idx))]
        x[idx], strong[idx] = mixup(x[idx], strong[idx], x[perm], strong[perm], lam)
        weak[idx] = lam * weak[idx] + (1 - lam) * weak[perm]
    for i in range(b):
        if cfg.time_mask_max and rng.random() < cfg.time_mask_prob:
            width = int(rng.integers(0, cfg.time_mask_max + 1))
            start = int(rng.integers(0, x.shape[1] - width + 1))
            x[i], strong[i] = time_mask(x[i], strong[i], start, width)
    # clip-level targets of strong clips follow their (possibly masked) frame targets
    weak[batch.strong_slice] = strong[batch.strong_slice].max(axis=1)
    return replace(batch, x=x.astype(np.float32), strong=strong, weak=weak)
