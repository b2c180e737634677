"""Log-mel spectrogram with delta and delta-delta rows, file-level normalized.

Frame geometry at 44.1 kHz: 1024-sample Hann window (23.2 ms), 441-sample
hop (10 ms), no padding, so ``N = (len - 1024) // 441 + 1`` frames.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .audio_io import TARGET_RATE, AudioClip
from .errors import TooShort

N_FFT = 1024
HOP = 441
N_MELS = 64
N_FEATURES = 3 * N_MELS
LOG_FLOOR = 1e-10
DELTA_WIDTH = 2

FEATURE_MAGIC = b"CVAF"


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (n_filters, n_fft // 2 + 1)
    centers_hz: np.ndarray
    f_min: float
    f_max: float

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]

    @property
    def n_fft_bins(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (192, n_frames)
    source_id: str = field(default="")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def n_frames_for(n_samples: int, window: int = N_FFT, hop: int = HOP) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def stft_power(clip: AudioClip | np.ndarray, window: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Squared-magnitude half spectrum of each Hann-windowed frame, ``(window//2+1, N)``."""
    x = np.asarray(clip.samples if isinstance(clip, AudioClip) else clip, dtype=np.float64)
    if len(x) < window:
        raise TooShort(f"need at least {window} samples, got {len(x)}")
    frames = sliding_window_view(x, window)[::hop]
    spec = np.fft.rfft(frames * get_window("hann", window), axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


@lru_cache(maxsize=8)
def build_mel_filterbank(n_filters: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = TARGET_RATE,
                         f_min: float = 0.0, f_max: float | None = None) -> MelFilterbank:
    """Unit-peak triangular filters with centers evenly spaced in HTK mel."""
    if f_max is None:
        f_max = sample_rate / 2
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2))
    bins_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bins_hz - lo) / (mid - lo)
    falling = (hi - bins_hz) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights.flags.writeable = False
    return MelFilterbank(weights, edges_hz[1:-1], f_min, f_max)


def log_mel(power: np.ndarray, fb: MelFilterbank | None = None) -> np.ndarray:
    fb = fb or build_mel_filterbank()
    return np.log(fb.weights @ power + LOG_FLOOR)


def deltas(x: np.ndarray, width: int = DELTA_WIDTH) -> np.ndarray:
    """Regression deltas along time with edge-replicated padding."""
    n = np.arange(1, width + 1)
    padded = np.pad(x, ((0, 0), (width, width)), mode="edge")
    T = x.shape[1]
    out = np.zeros_like(x, dtype=np.float64)
    for k in n:
        out += k * (padded[:, width + k:width + k + T] - padded[:, width - k:width - k + T])
    return out / (2.0 * np.sum(n ** 2))


def append_deltas(logmel: np.ndarray) -> np.ndarray:
    d1 = deltas(logmel)
    return np.vstack([logmel, d1, deltas(d1)])


def mvn_normalize(feat: np.ndarray, source_id: str = "") -> FeatureMatrix:
    """Per-row zero mean / unit variance; near-constant rows become zeros."""
    feat = np.asarray(feat, dtype=np.float64)
    mean = feat.mean(axis=1, keepdims=True)
    centered = feat - mean
    var = np.mean(centered ** 2, axis=1, keepdims=True)
    flat = var[:, 0] < 1e-12
    out = centered / np.sqrt(np.where(flat[:, None], 1.0, var))
    out[flat] = 0.0
    return FeatureMatrix(out, source_id)


def extract_features(clip: AudioClip) -> FeatureMatrix:
    """Pre-processed clip -> 192 x N normalized log-mel + deltas."""
    if clip.sample_rate != TARGET_RATE:
        raise ValueError(f"expected {TARGET_RATE} Hz audio, got {clip.sample_rate}")
    power = stft_power(clip)
    return mvn_normalize(append_deltas(log_mel(power)), clip.source_id)


# -------------------------------------------------------------- persistence
# header: magic, u32 rows, u32 cols; then column-major little-endian float32

def save_features(feat: FeatureMatrix, path) -> None:
    rows, cols = feat.values.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<II", rows, cols))
        fh.write(np.asarray(feat.values, dtype="<f4").tobytes(order="F"))


def load_features(path, source_id: str | None = None) -> FeatureMatrix:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature file")
    rows, cols = struct.unpack_from("<II", data, 4)
    values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=12)
    values = values.reshape((rows, cols), order="F").astype(np.float64)
    return FeatureMatrix(values, path.stem if source_id is None else source_id)
