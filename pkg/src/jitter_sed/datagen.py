"""
Synthetic stand-in for a domestic SED corpus.

Ten classes: five transient (enveloped tone bursts, 0.05-0.3 s) and five
stationary (band-limited noise, 1-6 s), mixed at random times over a pink
noise bed 30 dB below the event reference level.  Every clip is determined by
(manifest seed, split, index).
"""

from __future__ import annotations

import json
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .evaluation.events import CLIP_DURATION, Event, EventList, write_events, write_weak
from .features import SAMPLE_RATE, Waveform

REFERENCE_RMS = 0.2
BED_DB = -30.0
SPLITS = ("strong", "weak", "unlabeled", "validation")


@dataclass(frozen=True)
class ClassSpec:
    name: str
    category: Literal["transient", "stationary"]
    band: tuple[float, float]        # Hz: tone frequency range or noise passband
    duration: tuple[float, float]    # seconds

    def __post_init__(self):
        lo, hi = self.duration
        if not 0 < lo <= hi <= CLIP_DURATION:
            raise ValueError(f"{self.name}: duration range {self.duration} outside clip bounds")


DEFAULT_CLASSES: tuple[ClassSpec, ...] = (
    ClassSpec("knock", "transient", (400.0, 500.0), (0.05, 0.3)),
    ClassSpec("beep", "transient", (1000.0, 1100.0), (0.05, 0.3)),
    ClassSpec("chime", "transient", (2000.0, 2300.0), (0.05, 0.3)),
    ClassSpec("tick", "transient", (3200.0, 3600.0), (0.05, 0.3)),
    ClassSpec("ping", "transient", (5000.0, 5600.0), (0.05, 0.3)),
    ClassSpec("hum", "stationary", (150.0, 350.0), (1.0, 6.0)),
    ClassSpec("fan", "stationary", (650.0, 900.0), (1.0, 6.0)),
    ClassSpec("water", "stationary", (1300.0, 1800.0), (1.0, 6.0)),
    ClassSpec("hiss", "stationary", (4000.0, 4800.0), (1.0, 6.0)),
    ClassSpec("motor", "stationary", (6000.0, 7500.0), (1.0, 6.0)),
)


@dataclass
class DatasetManifest:
    sizes: dict[str, int] = field(default_factory=lambda: {"strong": 200, "weak": 200,
                                                           "unlabeled": 400, "validation": 100})
    seed: int = 0
    classes: tuple[ClassSpec, ...] = DEFAULT_CLASSES

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    @property
    def categories(self) -> dict[str, str]:
        return {c.name: c.category for c in self.classes}

    def to_json(self) -> dict:
        return {"sizes": dict(self.sizes), "seed": self.seed,
                "classes": [asdict(c) for c in self.classes]}

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetManifest":
        classes = tuple(ClassSpec(c["name"], c["category"], tuple(c["band"]), tuple(c["duration"]))
                        for c in doc["classes"])
        return cls(sizes=dict(doc["sizes"]), seed=int(doc["seed"]), classes=classes)


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    return x / np.sqrt(np.mean(x * x))


def _band_noise(n: int, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / max(np.sqrt(np.mean(x * x)), 1e-12)


def _fade(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = r
        env[n - ramp:] = r[::-1]
    return env


def render_event(spec: ClassSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    gain = REFERENCE_RMS * 10 ** (rng.uniform(-6.0, 0.0) / 20)
    if spec.category == "transient":
        freq = rng.uniform(*spec.band)
        t = np.arange(n) / SAMPLE_RATE
        tone = np.sin(2 * np.pi * freq * t) + 0.3 * np.sin(4 * np.pi * freq * t)
        decay = np.exp(-t / max(n / SAMPLE_RATE / 2.0, 1e-3))
        sig = tone * decay * _fade(n, int(0.004 * SAMPLE_RATE))
        return gain * np.sqrt(2) * sig
    return gain * _band_noise(n, *spec.band, rng) * _fade(n, int(0.02 * SAMPLE_RATE))


def render_clip(events: Sequence[Event], classes: Sequence[ClassSpec], rng: np.random.Generator,
                duration: float = CLIP_DURATION) -> Waveform:
    """Mix the given events over a pink-noise bed."""
    n = int(round(duration * SAMPLE_RATE))
    by_name = {c.name: c for c in classes}
    bed_rms = REFERENCE_RMS * 10 ** (BED_DB / 20)
    x = bed_rms * pink_noise(n, rng)
    for ev in events:
        a = int(round(ev.onset * SAMPLE_RATE))
        b = min(int(round(ev.offset * SAMPLE_RATE)), n)
        x[a:b] += render_event(by_name[ev.label], b - a, rng)
    return Waveform(x.astype(np.float32))


def sample_events(classes: Sequence[ClassSpec], rng: np.random.Generator,
                  duration: float = CLIP_DURATION) -> list[Event]:
    if not classes:
        return []
    events = []
    for _ in range(int(rng.integers(1, 5))):
        spec = classes[int(rng.integers(len(classes)))]
        dur = round(float(rng.uniform(*spec.duration)), 3)
        onset = round(float(rng.uniform(0.0, duration - dur)), 3)
        events.append(Event(spec.name, onset, round(onset + dur, 3)))
    return sorted(events, key=lambda e: (e.onset, e.label))


def synth_clip(seed: int, classes: Sequence[ClassSpec] = DEFAULT_CLASSES,
               clip_id: str = "") -> tuple[Waveform, EventList]:
    """One 10 s clip with 1-4 events (none if ``classes`` is empty)."""
    rng = np.random.default_rng(seed)
    events = sample_events(classes, rng)
    return render_clip(events, classes, rng), EventList(clip_id, events)


def clip_seed(seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([int(seed), SPLITS.index(split), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def clip_ids(split: str, n: int) -> list[str]:
    return [f"{split}_{i:04d}" for i in range(n)]


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        sr = fh.getframerate()
        pcm = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    return Waveform(pcm.astype(np.float32) / 32768.0, sr)


def build_dataset(manifest: DatasetManifest, out_dir) -> Path:
    """Write audio, labels and manifest.json under ``out_dir`` (which must not already hold files)."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"output directory {out} is not empty")
    labels: dict[str, list[EventList]] = {}
    for split in SPLITS:
        (out / split).mkdir(parents=True, exist_ok=True)
        labels[split] = []
        for i, cid in enumerate(clip_ids(split, manifest.sizes.get(split, 0))):
            w, ev = synth_clip(clip_seed(manifest.seed, split, i), manifest.classes, cid)
            write_wav(out / split / f"{cid}.wav", w)
            labels[split].append(ev)
    write_events(out / "strong.tsv", labels["strong"])
    write_events(out / "validation.tsv", labels["validation"])
    write_weak(out / "weak.tsv", {el.clip_id: el.labels() for el in labels["weak"]})
    # timings of the weak split, kept only for auditing label consistency
    write_events(out / "weak_hidden_strong.tsv", labels["weak"])
    doc = manifest.to_json()
    doc["splits"] = {s: clip_ids(s, manifest.sizes.get(s, 0)) for s in SPLITS}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2))
    return out


def load_manifest(data_dir) -> tuple[DatasetManifest, dict[str, list[str]]]:
    doc = json.loads((Path(data_dir) / "manifest.json").read_text())
    return DatasetManifest.from_json(doc), doc["splits"]
