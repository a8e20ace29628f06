"""Ideal ratio mask oracle computed from ground-truth stems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip
from .dsp import EPS, StftConfig, istft, stft

__all__ = ["IrmMaskSet", "irm_masks", "irm_separate"]


@dataclass(frozen=True, eq=False)
class IrmMaskSet:
    masks: np.ndarray  # (sources, T, B), values in [0, 1]
    config: StftConfig


def _samples(x):
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def irm_masks(stems, config: StftConfig = StftConfig()) -> IrmMaskSet:
    """mask_k = |S_k| / (sum_j |S_j| + eps); all-zero where no stem has energy."""
    arrays = [_samples(s) for s in stems]
    if len({a.shape for a in arrays}) != 1:
        raise ValueError(f"stem lengths differ: {[a.shape[0] for a in arrays]}")
    mags = np.stack([np.abs(stft(a, config).frames) for a in arrays])
    total = mags.sum(axis=0)
    masks = np.where(total > EPS, mags / (total + EPS), 0.0)
    return IrmMaskSet(masks, config)


def irm_separate(mixture, stems, config: StftConfig = StftConfig()) -> list[AudioClip]:
    """Apply the oracle masks to the complex mixture STFT (mixture phase kept)."""
    m = _samples(mixture)
    if any(_samples(s).shape != m.shape for s in stems):
        raise ValueError("mixture and stems must have equal lengths")
    # plain arrays in, plain arrays out
    rate = getattr(mixture, "sample_rate_hz", None) or getattr(stems[0], "sample_rate_hz", None)
    X = stft(m, config)
    masks = irm_masks(stems, config).masks
    return [istft(X.with_frames(mask * X.frames), rate) for mask in masks]
