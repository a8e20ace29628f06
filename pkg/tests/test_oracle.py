import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gass.audio_io import AudioClip
from gass.dsp import StftConfig, mean_energy_db, stft
from gass.metrics import si_sdr
from gass.oracle import irm_masks, irm_separate

CFG = StftConfig(256, 64)
RATE = 8000


def _bin_tone(k, n=RATE, amp=1.0):
    return amp * np.cos(2 * np.pi * k * RATE / CFG.frame_len * np.arange(n) / RATE)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_mask_range_and_partition(seed, k):
    rng = np.random.default_rng(seed)
    stems = [rng.standard_normal(2000) * rng.uniform(0.01, 3) if i < k else np.zeros(2000)
             for i in range(4)]
    masks = irm_masks(stems, CFG).masks
    assert masks.min() >= 0.0 and masks.max() <= 1.0
    total = np.sum([np.abs(stft(s, CFG).frames) for s in stems], axis=0)
    summed = masks.sum(axis=0)
    np.testing.assert_allclose(summed[total > 1e-12], 1.0, atol=1e-6)
    assert not np.any(masks[k:])


def test_single_active_stem(rng):
    x = rng.standard_normal(4000)
    masks = irm_masks([x, np.zeros(4000), np.zeros(4000), np.zeros(4000)], CFG).masks
    energetic = np.abs(stft(x, CFG).frames) > 1e-6
    np.testing.assert_allclose(masks[0][energetic], 1.0, atol=1e-9)
    assert not np.any(masks[1:])


def test_identical_stems_split_evenly(rng):
    x = rng.standard_normal(4000)
    masks = irm_masks([x, x, np.zeros(4000), np.zeros(4000)], CFG).masks
    energetic = np.abs(stft(x, CFG).frames) > 1e-6
    np.testing.assert_allclose(masks[0][energetic], 0.5, atol=1e-9)
    np.testing.assert_allclose(masks[1][energetic], 0.5, atol=1e-9)


def test_disjoint_sinusoids():
    a, b = _bin_tone(10), _bin_tone(40, amp=0.3)
    zero = np.zeros_like(a)
    masks = irm_masks([a, b, zero, zero], CFG).masks
    mid = masks.shape[1] // 2
    assert masks[0, mid, 10] == pytest.approx(1.0, abs=1e-6)
    assert masks[1, mid, 40] == pytest.approx(1.0, abs=1e-6)
    est = irm_separate(a + b, [a, b, zero, zero], CFG)
    assert si_sdr(a, est[0]) >= 25
    assert si_sdr(b, est[1]) >= 25


def test_k1_bypass(rng):
    x = rng.standard_normal(RATE)
    zero = np.zeros(RATE)
    clip = AudioClip(x, RATE)
    est = irm_separate(clip, [clip] + [AudioClip(zero, RATE)] * 3, CFG)
    assert all(isinstance(e, AudioClip) and e.sample_rate_hz == RATE for e in est)
    assert si_sdr(x, est[0]) >= 40
    for e in est[1:]:
        assert mean_energy_db(e) <= -60


def test_plain_arrays_in_plain_arrays_out(rng):
    x = rng.standard_normal(1000)
    est = irm_separate(x, [x, 0 * x, 0 * x, 0 * x], CFG)
    assert all(isinstance(e, np.ndarray) for e in est)


def test_length_mismatch():
    with pytest.raises(ValueError):
        irm_masks([np.ones(10), np.ones(11), np.ones(10), np.ones(10)], CFG)
    with pytest.raises(ValueError):
        irm_separate(np.ones(12), [np.ones(10)] * 4, CFG)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_energy_non_expansion(seed):
    rng = np.random.default_rng(seed)
    stems = [rng.standard_normal(3000) * rng.uniform(0.1, 2) for _ in range(4)]
    mix = np.sum(stems, axis=0)
    X = stft(mix, CFG).frames
    masks = irm_masks(stems, CFG).masks
    assert np.all(np.abs(masks * X) <= np.abs(X) + 1e-12)
    mix_energy = float(mix @ mix)
    for e in irm_separate(mix, stems, CFG):
        assert float(e @ e) <= mix_energy * (1 + 1e-6)
