"""
Deterministic synthetic source corpus for tests, demos and smoke runs.

Twenty-five short recordings, one JSONL manifest:
10 speech_fg, 6 event_fg, 4 event_bg, 3 music_fg, 2 music_bg. Files
vary in sample rate (16 to 48 kHz), channel count and encoding so the
ingestion path (down-mix, int16/int24/float32 decode, resampling,
header probing) is exercised end to end.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import signal

from .audio_io import write_frames

__all__ = ["FIXTURE_COUNTS", "make_fixture_corpus", "synth_source"]

FIXTURE_COUNTS = {"speech_fg": 10, "event_fg": 6, "event_bg": 4, "music_fg": 3, "music_bg": 2}

RATES = (16000, 22050, 44100, 48000)
ENCODINGS = ("float32", "int16", "int24")


def _speech(rng, n, rate):
    t = np.arange(n) / rate
    f0 = rng.uniform(95, 240) * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * t))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    formants = rng.uniform([500, 1200, 2400], [900, 2000, 3200])
    x = np.zeros(n)
    for h in range(1, int(0.45 * rate / f0.max())):
        fh = h * f0.mean()
        amp = sum(np.exp(-((fh - f) / 180.0) ** 2) for f in formants) + 0.02 / h
        x += amp * np.sin(h * phase)
    # syllables: ~4 Hz bursts separated by short pauses
    env = np.zeros(n)
    pos = 0
    while pos < n:
        length = int(rng.uniform(0.12, 0.3) * rate)
        seg = np.hanning(max(length, 2))[:max(0, min(length, n - pos))]
        env[pos:pos + len(seg)] = seg * rng.uniform(0.4, 1.0)
        pos += length + int(rng.uniform(0.02, 0.25) * rate)
    return x * env + 0.01 * rng.standard_normal(n) * env


def _event_fg(rng, n, rate):
    x = np.zeros(n)
    kind = rng.integers(3)
    for _ in range(int(rng.integers(1, 4))):
        start = int(rng.uniform(0, 0.7) * n)
        length = min(n - start, int(rng.uniform(0.15, 0.6) * rate))
        t = np.arange(length) / rate
        decay = np.exp(-t * rng.uniform(4, 15))
        if kind == 0:  # chirp
            burst = signal.chirp(t, rng.uniform(300, 1500), t[-1] + 1e-9, rng.uniform(2000, 6000))
        elif kind == 1:  # band-passed noise knock
            lo = rng.uniform(200, 2000)
            sos = signal.butter(4, [lo, min(2.5 * lo, 0.45 * rate)], "bandpass", fs=rate, output="sos")
            burst = signal.sosfilt(sos, rng.standard_normal(length))
        else:  # ringing tone
            burst = np.sin(2 * np.pi * rng.uniform(600, 3000) * t)
        x[start:start + length] += burst * decay
    return x


def _event_bg(rng, n, rate):
    white = rng.standard_normal(n)
    b, a = [0.049922035, -0.095993537, 0.050612699, -0.004408786], [1, -2.494956002, 2.017265875, -0.522189400]
    pink = signal.lfilter(b, a, white)
    sos = signal.butter(2, rng.uniform(1500, 6000), "lowpass", fs=rate, output="sos")
    t = np.arange(n) / rate
    swell = 1 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.05, 0.3) * t + rng.uniform(0, 6.28))
    return signal.sosfilt(sos, pink) * swell


def _note(f, length, rate, n_harm, rng):
    t = np.arange(length) / rate
    tone = sum(np.sin(2 * np.pi * f * h * t) / h ** rng.uniform(1.0, 1.8)
               for h in range(1, n_harm + 1) if f * h < 0.45 * rate)
    attack = min(length, int(0.01 * rate))
    env = np.exp(-t * rng.uniform(1, 4))
    env[:attack] *= np.linspace(0, 1, attack)
    return tone * env


def _music_fg(rng, n, rate):
    x = np.zeros(n)
    base = rng.uniform(110, 330)
    step = int(rng.uniform(0.2, 0.5) * rate)
    for start in range(0, n, step):
        f = base * 2.0 ** (rng.choice([0, 2, 4, 5, 7, 9, 11, 12]) / 12)
        length = min(n - start, int(step * rng.uniform(1.0, 1.6)))
        x[start:start + length] += _note(f, length, rate, 8, rng)
    return x


def _music_bg(rng, n, rate):
    x = np.zeros(n)
    bar = int(rng.uniform(1.5, 2.5) * rate)
    root = rng.uniform(80, 200)
    for start in range(0, n, bar):
        length = min(n - start, bar)
        chord = root * 2.0 ** (rng.choice([0, 3, 5, 7]) / 12)
        for interval in (0, 4, 7, 12):
            x[start:start + length] += _note(chord * 2 ** (interval / 12), length, rate, 5, rng)
    hiss = signal.sosfilt(signal.butter(2, 4000, "highpass", fs=rate, output="sos"),
                          rng.standard_normal(n))
    return x + 0.02 * hiss


_SYNTH = {"speech_fg": _speech, "event_fg": _event_fg, "event_bg": _event_bg,
          "music_fg": _music_fg, "music_bg": _music_bg}

# duration range in seconds per type; event_fg stays under 8 s, backgrounds over
_DURATIONS = {"speech_fg": (2.0, 10.0), "event_fg": (0.6, 4.0), "event_bg": (9.0, 11.0),
              "music_fg": (5.0, 10.0), "music_bg": (9.0, 11.0)}


def synth_source(source_type: str, rng: np.random.Generator, duration_s: float,
                 rate: int) -> np.ndarray:
    """One mono synthetic recording of the given type, peak 0.9."""
    n = int(round(duration_s * rate))
    x = _SYNTH[source_type](rng, n, rate)
    return 0.9 * x / np.max(np.abs(x))


def make_fixture_corpus(out_dir, seed: int = 0, counts=FIXTURE_COUNTS) -> Path:
    """Write the corpus under ``out_dir`` and return the manifest path.

    Every third file is stereo (identical-content channels at different
    levels); every other manifest line omits duration/sample rate so they
    are probed from the file header.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    n = 0
    for stype, count in counts.items():
        for i in range(count):
            rate = int(RATES[n % len(RATES)])
            encoding = ENCODINGS[n % len(ENCODINGS)]
            dur = float(np.round(rng.uniform(*_DURATIONS[stype]), 3))
            x = synth_source(stype, rng, dur, rate)
            frames = np.stack([x, 0.6 * x], axis=1) if n % 3 == 2 else x[:, None]
            name = f"{stype}_{i:02d}.wav"
            write_frames(out_dir / name, frames, rate, encoding)
            rec = {"id": f"{stype}_{i:02d}", "path": name, "source_type": stype}
            if n % 2 == 0:
                rec.update(duration_s=len(x) / rate, sample_rate_hz=rate)
            lines.append(json.dumps(rec))
            n += 1
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
