"""Feature datasets, label rasterisation and batch sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DependencyError
from ..evaluation.events import CLIP_DURATION, EventList, read_events, read_weak
from ..features import read_cache
from ..numerics.tensorio import load_tensor

LABEL_FRAMES = 100
FRAME_SECONDS = CLIP_DURATION / LABEL_FRAMES


def rasterize(events: EventList, classes: Sequence[str], n_frames: int = LABEL_FRAMES,
              frame_seconds: float = FRAME_SECONDS) -> np.ndarray:
    """(n_frames, C) 0/1 targets: a frame is active when an event covers >= half of it.

    An event too short to cover half of any frame still marks its
    best-overlapping frame, so every event leaves at least one active frame.
    """
    out = np.zeros((n_frames, len(classes)), dtype=np.float32)
    index = {c: i for i, c in enumerate(classes)}
    starts = np.arange(n_frames) * frame_seconds
    for ev in events:
        overlap = np.clip(np.minimum(starts + frame_seconds, ev.offset) - np.maximum(starts, ev.onset), 0, None)
        hit = overlap >= 0.5 * frame_seconds - 1e-9
        if not hit.any():
            hit = np.zeros(n_frames, dtype=bool)
            hit[int(np.argmax(overlap))] = True
        out[hit, index[ev.label]] = 1.0
    return out


def weak_vector(labels: set[str], classes: Sequence[str]) -> np.ndarray:
    return np.array([1.0 if c in labels else 0.0 for c in classes], dtype=np.float32)


@dataclass
class FeatureSet:
    """All cached spectrograms of one feature directory, standardised, in memory."""

    root: Path
    classes: list[str]
    categories: list[str]
    splits: dict[str, list[str]]
    features: dict[str, np.ndarray]          # split -> (N, 500, 128) float32
    strong_labels: np.ndarray                # (N_strong, 100, C)
    weak_labels: np.ndarray                  # (N_weak, C)
    validation_events: dict[str, EventList]
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def load(cls, root, splits: Sequence[str] = ("strong", "weak", "unlabeled", "validation")) -> "FeatureSet":
        root = Path(root)
        mpath = root / "manifest.json"
        if not mpath.exists():
            raise DependencyError(f"{root} has no manifest.json; run `featurize` first")
        doc = json.loads(mpath.read_text())
        classes = doc["classes"]
        stats = load_tensor(root / "stats.jtt")
        mean, std = stats[0], stats[1]
        feats = {}
        for split in splits:
            ids = doc["splits"][split]
            arr = np.empty((len(ids), doc["n_frames"], doc["n_mels"]), dtype=np.float32)
            for i, cid in enumerate(ids):
                arr[i] = (read_cache(root / split, cid) - mean) / std
            feats[split] = arr
        strong_ev = read_events(root / "strong.tsv", doc["splits"]["strong"])
        strong = np.stack([rasterize(strong_ev[c], classes) for c in doc["splits"]["strong"]]) \
            if doc["splits"]["strong"] else np.zeros((0, LABEL_FRAMES, len(classes)), np.float32)
        weak_sets = read_weak(root / "weak.tsv")
        weak = np.stack([weak_vector(weak_sets.get(c, set()), classes) for c in doc["splits"]["weak"]]) \
            if doc["splits"]["weak"] else np.zeros((0, len(classes)), np.float32)
        val = read_events(root / "validation.tsv", doc["splits"]["validation"])
        return cls(root, classes, [doc["categories"][c] for c in classes], doc["splits"], feats,
                   strong, weak, val, mean, std)


class EpochSampler:
    """Endless shuffled indices over ``n`` items, reshuffled each epoch."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.order = np.zeros(0, dtype=np.int64)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        if self.n == 0 or k == 0:
            return np.zeros(0, dtype=np.int64)
        out = []
        while k > 0:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            chunk = self.order[self.pos:self.pos + k]
            out.append(chunk)
            self.pos += len(chunk)
            k -= len(chunk)
        return np.concatenate(out)


@dataclass
class SEDBatch:
    x: np.ndarray            # (B, 500, 128) standardised log-mel
    strong: np.ndarray       # (B, 100, C) frame targets (rows of non-strong clips unused)
    weak: np.ndarray         # (B, C) clip targets (rows of non-weak clips unused)
    n_strong: int
    n_weak: int

    @property
    def strong_slice(self) -> slice:
        return slice(0, self.n_strong)

    @property
    def weak_slice(self) -> slice:
        return slice(self.n_strong, self.n_strong + self.n_weak)


class SEDBatcher:
    """Fixed strong:weak:unlabeled composition per batch."""

    def __init__(self, data: FeatureSet, batch_size: int, ratio=(1, 1, 2), seed: int = 0):
        total = sum(ratio)
        self.sizes = [batch_size * r // total for r in ratio]
        self.sizes[-1] = batch_size - sum(self.sizes[:-1])
        self.data = data
        rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
        self.samplers = [EpochSampler(len(data.features[s]), rng.spawn(1)[0])
                         for s in ("strong", "weak", "unlabeled")]

    def next(self) -> SEDBatch:
        d = self.data
        ns, nw, nu = self.sizes
        si = self.samplers[0].take(ns)
        wi = self.samplers[1].take(nw)
        ui = self.samplers[2].take(nu)
        x = np.concatenate([d.features["strong"][si], d.features["weak"][wi], d.features["unlabeled"][ui]])
        c = len(d.classes)
        b = len(x)
        strong = np.zeros((b, LABEL_FRAMES, c), dtype=np.float32)
        strong[:len(si)] = d.strong_labels[si]
        weak = np.zeros((b, c), dtype=np.float32)
        weak[:len(si)] = d.strong_labels[si].max(axis=1)
        weak[len(si):len(si) + len(wi)] = d.weak_labels[wi]
        return SEDBatch(x, strong, weak, len(si), len(wi))
