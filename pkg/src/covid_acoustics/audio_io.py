"""Audio decoding, resampling to 44.1 kHz, peak normalization and activity trimming."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import gcd
from pathlib import Path

import numpy as np
import soundfile as sf
from scipy import signal

from .errors import DegenerateAudio, SilentAudio, UnreadableAudio

TARGET_RATE = 44100
ACTIVITY_THRESHOLD = 0.01
ACTIVITY_BUFFER_S = 0.050

# windowed-sinc resampler: taps per polyphase branch and Kaiser shape
RESAMPLER_TAPS = 64
KAISER_BETA = 8.6


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: str = field(default="")

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self.samples) else 0.0


def resample(samples: np.ndarray, in_rate: int, out_rate: int = TARGET_RATE) -> np.ndarray:
    """Polyphase windowed-sinc resampling (64 taps per phase, Kaiser window)."""
    if in_rate == out_rate:
        return np.asarray(samples, dtype=np.float64)
    g = gcd(in_rate, out_rate)
    up, down = out_rate // g, in_rate // g
    factor = max(up, down)
    n_taps = RESAMPLER_TAPS * factor + 1
    # resample_poly applies the interpolation gain (x up) itself
    taps = signal.firwin(n_taps, 1.0 / factor, window=("kaiser", KAISER_BETA))
    return signal.resample_poly(np.asarray(samples, dtype=np.float64), up, down, window=taps)


def load_audio(path, source_id: str | None = None) -> AudioClip:
    """Read a FLAC/WAV file, mean-downmix to mono and resample to 44.1 kHz."""
    path = Path(path)
    try:
        data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, sf.LibsndfileError, OSError) as exc:
        raise UnreadableAudio(f"{path}: {exc}") from exc
    if data.shape[0] == 0:
        raise UnreadableAudio(f"{path}: zero-length stream")
    mono = data.mean(axis=1)
    return AudioClip(resample(mono, rate), TARGET_RATE, source_id if source_id is not None else path.stem)


def save_audio(clip: AudioClip, path, subtype: str | None = None) -> None:
    """Write a clip; format follows the extension (``.flac`` or ``.wav``)."""
    sf.write(str(path), clip.samples, clip.sample_rate, subtype=subtype)


def normalize(clip: AudioClip) -> AudioClip:
    peak = clip.peak
    if peak == 0.0:
        raise DegenerateAudio(f"{clip.source_id or 'clip'}: all-zero signal")
    # x / x == 1 exactly in IEEE arithmetic, so the peak lands on +-1.0
    return replace(clip, samples=np.asarray(clip.samples, dtype=np.float64) / peak)


def activity_mask(samples: np.ndarray, threshold: float, radius: int) -> np.ndarray:
    """True where some sample within ``radius`` indices exceeds ``threshold`` in magnitude."""
    active = np.abs(samples) > threshold
    if radius == 0:
        return active
    # dilation by a box of width 2*radius+1, via prefix sums
    csum = np.concatenate([[0], np.cumsum(active, dtype=np.int64)])
    n = len(samples)
    idx = np.arange(n)
    lo = np.clip(idx - radius, 0, n)
    hi = np.clip(idx + radius + 1, 0, n)
    return (csum[hi] - csum[lo]) > 0


def trim_low_activity(clip: AudioClip, threshold: float = ACTIVITY_THRESHOLD,
                      buffer: float = ACTIVITY_BUFFER_S) -> AudioClip:
    """Keep samples within ``buffer`` seconds of an above-threshold sample."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if buffer < 0:
        raise ValueError("buffer must be non-negative")
    radius = int(round(buffer * clip.sample_rate))
    mask = activity_mask(clip.samples, threshold, radius)
    if not mask.any():
        raise SilentAudio(f"{clip.source_id or 'clip'}: nothing above {threshold}")
    return replace(clip, samples=clip.samples[mask])


def preprocess(clip: AudioClip) -> AudioClip:
    """Normalize to unit peak, then drop low-activity regions."""
    return trim_low_activity(normalize(clip))


def load_and_preprocess(path, source_id: str | None = None) -> AudioClip:
    return preprocess(load_audio(path, source_id))
