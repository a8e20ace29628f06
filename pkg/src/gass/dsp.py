"""Signal primitives shared by the mixer, the oracle, the metrics and the toy model."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .audio_io import AudioClip

__all__ = [
    "EPS", "SILENCE_FLOOR", "SilentSourceError", "StftConfig", "Spectrogram",
    "stft", "istft", "window_sum", "resample", "resample_array", "peak_normalize",
    "mean_energy_db", "energy_db",
]

EPS = 1e-12
SILENCE_FLOOR = 1e-6

# resampler design
KAISER_BETA = 12.0
TAPS_PER_PHASE = 64
CUTOFF = 0.95


class SilentSourceError(ValueError):
    """Raised when a clip has no sample above the silence floor."""


@dataclass(frozen=True)
class StftConfig:
    """Frame length and hop in samples. Defaults are 32 ms / 8 ms at 48 kHz."""

    frame_len: int = 1536
    hop: int = 384
    window: str = "hann"

    def __post_init__(self):
        if self.frame_len <= 0 or self.frame_len % 2:
            raise ValueError(f"frame_len must be a positive even integer, got {self.frame_len}")
        if not 0 < self.hop <= self.frame_len:
            raise ValueError(f"hop must be in (0, frame_len], got {self.hop}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")
        # every sample must see a nonzero squared-window sum to be invertible
        w2 = self.analysis_window() ** 2
        period = np.zeros(self.hop)
        for start in range(0, self.frame_len, self.hop):
            seg = w2[start:start + self.hop]
            period[:len(seg)] += seg
        if period.min() <= 0:
            raise ValueError(f"hop {self.hop} leaves zero window overlap for frame {self.frame_len}")

    @classmethod
    def for_rate(cls, sample_rate_hz: int, frame_ms: float = 32.0, hop_ms: float = 8.0):
        frame = 2 * round(frame_ms * 1e-3 * sample_rate_hz / 2)
        hop = max(1, round(hop_ms * 1e-3 * sample_rate_hz))
        return cls(frame, hop)

    @property
    def num_bins(self) -> int:
        return self.frame_len // 2 + 1

    @property
    def pad(self) -> int:
        return self.frame_len // 2

    def analysis_window(self) -> np.ndarray:
        return _hann(self.frame_len)

    def num_frames(self, length: int) -> int:
        return 1 + -(-length // self.hop)


@lru_cache(maxsize=16)
def _hann(n: int) -> np.ndarray:
    w = signal.get_window("hann", n, fftbins=True)
    w.flags.writeable = False
    return w


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """T x B complex STFT plus what is needed to invert it.

    ``reflect`` records whether the frame_len/2 edge padding was a
    reflection (clips longer than the pad) or zeros.
    """

    frames: np.ndarray
    config: StftConfig
    original_len: int
    reflect: bool = True

    def __post_init__(self):
        f = self.frames
        if f.ndim != 2 or f.shape[1] != self.config.num_bins:
            raise ValueError(f"frames shape {f.shape} does not match {self.config.num_bins} bins")
        if f.shape[0] != self.config.num_frames(self.original_len):
            raise ValueError(f"{f.shape[0]} frames inconsistent with length {self.original_len}")

    def with_frames(self, frames) -> "Spectrogram":
        return Spectrogram(np.asarray(frames), self.config, self.original_len, self.reflect)


def _padded(x: np.ndarray, config: StftConfig) -> tuple[np.ndarray, bool]:
    p = config.pad
    n_frames = config.num_frames(len(x))
    total = (n_frames - 1) * config.hop + config.frame_len
    reflect = len(x) > p
    xp = np.pad(x, (p, p), mode="reflect" if reflect else "constant")
    return np.pad(xp, (0, total - len(xp))), reflect


def stft(clip, config: StftConfig = StftConfig()) -> Spectrogram:
    """Hann-windowed STFT with frame_len/2 padding on both ends.

    The signal is reflected into the pad (zeros for clips no longer than
    the pad) and zero-extended on the right so the last frame is full;
    T = 1 + ceil(len / hop).
    """
    x = np.asarray(clip.samples if isinstance(clip, AudioClip) else clip, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot take the STFT of an empty signal")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite samples in STFT input")
    xp, reflect = _padded(x, config)
    frames = np.lib.stride_tricks.sliding_window_view(xp, config.frame_len)[::config.hop]
    spec = np.fft.rfft(frames * config.analysis_window(), axis=-1)
    return Spectrogram(spec, config, len(x), reflect)


@lru_cache(maxsize=32)
def window_sum(config: StftConfig, n_frames: int) -> np.ndarray:
    """Overlap-added squared window, the iSTFT normalizer."""
    w2 = config.analysis_window() ** 2
    out = overlap_add(np.broadcast_to(w2, (n_frames, config.frame_len)), config.hop)
    out.flags.writeable = False
    return out


def overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n_frames, n = frames.shape
    out = np.zeros((n_frames - 1) * hop + n)
    if n % hop == 0:
        for r in range(n // hop):
            out[r * hop:r * hop + n_frames * hop] += frames[:, r * hop:(r + 1) * hop].reshape(-1)
    else:
        for t in range(n_frames):
            out[t * hop:t * hop + n] += frames[t]
    return out


def istft(spec: Spectrogram, sample_rate_hz: int | None = None):
    """Inverse of :func:`stft` by weighted overlap-add.

    Returns an AudioClip when ``sample_rate_hz`` is given, else the raw
    float64 array of ``spec.original_len`` samples.
    """
    cfg = spec.config
    if not np.all(np.isfinite(spec.frames)):
        raise ValueError("non-finite spectrogram")
    frames = np.fft.irfft(spec.frames, n=cfg.frame_len, axis=-1) * cfg.analysis_window()
    sl = slice(cfg.pad, cfg.pad + spec.original_len)
    y = overlap_add(frames, cfg.hop)[sl] / window_sum(cfg, frames.shape[0])[sl]
    return y if sample_rate_hz is None else AudioClip(y, sample_rate_hz)


@lru_cache(maxsize=32)
def _kaiser_sinc(up: int, down: int) -> np.ndarray:
    m = max(up, down)
    h = signal.firwin(TAPS_PER_PHASE * m + 1, CUTOFF / m, window=("kaiser", KAISER_BETA))
    h.flags.writeable = False
    return h


def resample_array(x: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    """Polyphase Kaiser-windowed-sinc resampling of a 1-D array.

    Output length is round(len * target / source).
    """
    if target_rate <= 0 or source_rate <= 0:
        raise ValueError("sample rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    if source_rate == target_rate:
        return x.copy()
    n_out = int(round(len(x) * target_rate / source_rate))
    if len(x) == 0:
        return np.zeros(0)
    g = math.gcd(source_rate, target_rate)
    up, down = target_rate // g, source_rate // g
    y = signal.resample_poly(x, up, down, window=np.array(_kaiser_sinc(up, down)))
    if len(y) >= n_out:
        return y[:n_out]
    return np.pad(y, (0, n_out - len(y)))


def resample(clip: AudioClip, target_rate_hz: int) -> AudioClip:
    if target_rate_hz == clip.sample_rate_hz:
        return clip
    return AudioClip(resample_array(clip.samples, clip.sample_rate_hz, target_rate_hz), target_rate_hz)


def peak_normalize(clip: AudioClip) -> AudioClip:
    """Scale so that max |x| is exactly 1."""
    x = clip.samples
    peak = np.max(np.abs(x)) if x.size else 0.0
    if not peak > SILENCE_FLOOR:
        raise SilentSourceError(f"clip peak {peak:.3g} is below the silence floor {SILENCE_FLOOR}")
    return clip.with_samples(x / peak)


def energy_db(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    ms = float(np.mean(x * x)) if x.size else 0.0
    return 10.0 * math.log10(ms + EPS)


def mean_energy_db(clip) -> float:
    """10 log10(mean(x^2) + 1e-12); silence gives -120 dB."""
    return energy_db(clip.samples if isinstance(clip, AudioClip) else clip)
