"""Frame-probability post-processing and event decoding."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from .events import Event, EventList

FRAME_SECONDS = 0.1
TRANSIENT_WINDOW = 5
STATIONARY_WINDOW = 20


def weak_mask(strong: np.ndarray, weak: np.ndarray, rule: str = "min") -> np.ndarray:
    """Cap frame probabilities by clip-level confidence.

    ``rule="min"`` takes the element-wise minimum; ``rule="hard"`` zeroes a
    class whose clip probability is below 0.5.
    """
    strong = np.asarray(strong)
    weak = np.asarray(weak)
    if rule == "min":
        return np.minimum(strong, weak[None, :])
    if rule == "hard":
        return strong * (weak >= 0.5)[None, :]
    raise ConfigurationError(f"unknown weak-mask rule {rule!r}")


def median_filter_1d(x: np.ndarray, window: int) -> np.ndarray:
    """Sliding median with edge replication.

    Frame t sees frames t - (w-1)//2 .. t + w//2, so odd windows are centred
    and even windows lean one frame to the right; an even window takes the
    mean of its two middle values.
    """
    x = np.asarray(x)
    t = x.shape[0]
    if window < 1 or window > t:
        raise ConfigurationError(f"median window {window} invalid for sequence of length {t}")
    if window == 1:
        return x.copy()
    padded = np.pad(x, ((window - 1) // 2, window // 2), mode="edge")
    return np.median(np.lib.stride_tricks.sliding_window_view(padded, window), axis=-1)


def median_filter(strong: np.ndarray, windows) -> np.ndarray:
    """Per-class median filter of a (T, C) array; ``windows`` is an int or one int per class."""
    strong = np.asarray(strong)
    n_classes = strong.shape[1]
    if np.isscalar(windows):
        windows = [int(windows)] * n_classes
    if len(windows) != n_classes:
        raise ConfigurationError(f"{len(windows)} windows for {n_classes} classes")
    out = np.empty_like(strong)
    for c, w in enumerate(windows):
        out[:, c] = median_filter_1d(strong[:, c], int(w))
    return out


def class_windows(categories: Sequence[str]) -> list[int]:
    return [TRANSIENT_WINDOW if cat == "transient" else STATIONARY_WINDOW for cat in categories]


def decode(strong: np.ndarray, threshold: float, classes: Sequence[str], clip_id: str = "",
           frame_seconds: float = FRAME_SECONDS) -> EventList:
    """Maximal runs of frames >= threshold become events; no gap merging."""
    active = np.asarray(strong) >= threshold
    events = []
    for c, label in enumerate(classes):
        col = np.concatenate([[False], active[:, c], [False]]).astype(np.int8)
        edges = np.flatnonzero(np.diff(col))
        for start, stop in zip(edges[::2], edges[1::2]):
            events.append(Event(label, round(start * frame_seconds, 6), round(stop * frame_seconds, 6)))
    return EventList(clip_id, events)
