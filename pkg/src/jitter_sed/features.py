"""Waveform normalisation and log-mel spectrograms (16 kHz, 1024-point FFT, hop 320, 128 mel bins)."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .numerics.tensorio import load_tensor, save_tensor

SAMPLE_RATE = 16000
N_FFT = 1024
HOP = 320
N_MELS = 128
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR = 1e-8


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def normalize(w: Waveform) -> Waveform:
    """Scale to unit peak amplitude; an all-zero clip is returned unchanged."""
    peak = float(np.max(np.abs(w.samples))) if len(w.samples) else 0.0
    if peak == 0.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    return Waveform((w.samples.astype(np.float64) / peak).astype(np.float32), w.sample_rate)


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    lin = f / f_sp
    with np.errstate(divide="ignore"):
        logpart = min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep
    return np.where(f >= min_log_hz, logpart, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_band_edges(n_mels: int = N_MELS, fmin: float = F_MIN, fmax: float = F_MAX) -> np.ndarray:
    """The n_mels + 2 corner frequencies (Hz) of the triangular filters."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


@lru_cache(maxsize=4)
def mel_filterbank(sr: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS,
                   fmin: float = F_MIN, fmax: float = F_MAX) -> np.ndarray:
    """Area-normalised triangular filters, shape (n_mels, 1 + n_fft // 2)."""
    fft_freqs = np.linspace(0.0, sr / 2.0, 1 + n_fft // 2)
    edges = mel_band_edges(n_mels, fmin, fmax)
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def num_frames(n_samples: int, hop: int = HOP) -> int:
    return -(-n_samples // hop)


def frame_signal(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Reflect-pad by n_fft // 2 and cut ceil(len / hop) frames centred on multiples of hop."""
    pad = n_fft // 2
    mode = "reflect" if len(x) > pad else "constant"
    xp = np.pad(np.asarray(x, dtype=np.float64), pad, mode=mode)
    n = num_frames(len(x), hop)
    win = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop]
    return win[:n]


def stft(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """One-sided complex STFT, shape (frames, 1 + n_fft // 2)."""
    return np.fft.rfft(frame_signal(x, n_fft, hop) * hann(n_fft), axis=-1)


def logmel(w: Waveform) -> np.ndarray:
    """log(mel-filtered STFT magnitude + 1e-8), shape (ceil(len / 320), 128), float32."""
    if w.sample_rate != SAMPLE_RATE:
        raise ConfigurationError(f"sample rate {w.sample_rate} Hz unsupported; expected {SAMPLE_RATE}")
    mag = np.abs(stft(w.samples))
    mel = mag @ mel_filterbank().T
    return np.log(mel + LOG_FLOOR).astype(np.float32)


def extract(w: Waveform) -> np.ndarray:
    return logmel(normalize(w))


def feature_stats(specs) -> tuple[np.ndarray, np.ndarray]:
    """Per-mel-bin mean and standard deviation over a collection of spectrograms."""
    total = None
    total_sq = None
    count = 0
    for s in specs:
        s = np.asarray(s, dtype=np.float64)
        total = s.sum(axis=0) if total is None else total + s.sum(axis=0)
        total_sq = (s * s).sum(axis=0) if total_sq is None else total_sq + (s * s).sum(axis=0)
        count += s.shape[0]
    if not count:
        raise ConfigurationError("cannot compute feature statistics of an empty collection")
    mu = total / count
    var = np.maximum(total_sq / count - mu * mu, 0.0)
    return mu.astype(np.float32), np.sqrt(var + 1e-8).astype(np.float32)


def standardize(spec: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return ((spec - mu) / sigma).astype(np.float32)


def write_cache(directory, clip_id: str, spec: np.ndarray) -> Path:
    path = Path(directory) / f"{clip_id}.jtt"
    save_tensor(path, spec)
    return path


def read_cache(directory, clip_id: str) -> np.ndarray:
    return load_tensor(Path(directory) / f"{clip_id}.jtt")
