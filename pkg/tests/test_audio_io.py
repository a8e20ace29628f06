import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gass.audio_io import (AudioClip, MalformedWavError, ManifestError, MissingFileError,
                           SourceType, UnsupportedEncodingError, load_manifest, probe_wav,
                           read_wav, write_frames, write_wav)
from gass.fixtures import FIXTURE_COUNTS


def test_audio_clip_rejects_nonfinite():
    with pytest.raises(ValueError):
        AudioClip(np.array([0.0, np.nan]), 16000)
    with pytest.raises(ValueError):
        AudioClip(np.zeros(3), 0)


def test_duration_derived():
    assert AudioClip(np.zeros(48000), 16000).duration_s == 3.0


def test_stereo_opposite_channels_downmix_to_zero(tmp_path):
    frames = np.stack([np.ones(100), -np.ones(100)], axis=1)
    write_frames(tmp_path / "s.wav", frames, 8000)
    clip = read_wav(tmp_path / "s.wav")
    assert np.array_equal(clip.samples, np.zeros(100))


def test_int16_min_reads_as_minus_one(tmp_path):
    write_frames(tmp_path / "m.wav", np.array([-1.0, 0.5]), 8000, "int16")
    clip = read_wav(tmp_path / "m.wav")
    assert clip.samples[0] == -1.0
    assert clip.samples[1] == 0.5


def test_three_second_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, 48000).astype(np.float32)
    write_wav(tmp_path / "a.wav", AudioClip(x, 16000))
    clip = read_wav(tmp_path / "a.wav")
    assert len(clip) == 48000 and clip.sample_rate_hz == 16000


@pytest.mark.parametrize("samples", [np.zeros(10), np.array([0.5, -0.25])])
def test_float32_exact(tmp_path, samples):
    clip = AudioClip(samples, 44100)
    write_wav(tmp_path / "x.wav", clip)
    assert read_wav(tmp_path / "x.wav") == clip


def test_int16_clipping_reported(tmp_path):
    res = write_wav(tmp_path / "c.wav", AudioClip(np.array([1.5, 0.0]), 8000), "int16")
    assert res.clipped == 1
    raw = (tmp_path / "c.wav").read_bytes()
    assert struct.unpack("<h", raw[-4:-2])[0] == 32767


def test_int24_round_trip(tmp_path):
    x = np.array([-1.0, -0.5, 0.0, 0.25, 1 - 2 ** -23])
    write_frames(tmp_path / "i24.wav", x, 22050, "int24")
    assert probe_wav(tmp_path / "i24.wav").encoding == "int24"
    np.testing.assert_array_equal(read_wav(tmp_path / "i24.wav").samples, x)


def test_error_kinds(tmp_path):
    with pytest.raises(MissingFileError):
        read_wav(tmp_path / "nope.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(MalformedWavError):
        read_wav(tmp_path / "junk.wav")
    # 8-bit PCM is valid RIFF but not a supported encoding
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 8000, 1, 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 2) + b"\x80\x80"
    (tmp_path / "u8.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(UnsupportedEncodingError):
        read_wav(tmp_path / "u8.wav")
    with pytest.raises(UnsupportedEncodingError):
        write_wav(tmp_path / "o.wav", AudioClip(np.zeros(2), 8000), "mp3")


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.integers(0, 300),
              elements=st.floats(-1e6, 1e6, allow_nan=False, width=32)))
def test_float32_round_trip_property(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("rt") / "p.wav"
    clip = AudioClip(x, 48000)
    write_wav(path, clip)
    back = read_wav(path)
    assert back.samples.tobytes() == x.astype(np.float64).tobytes()


def test_downmix_is_linear(tmp_path, rng):
    a = rng.uniform(-1, 1, 500).astype(np.float32)
    b = rng.uniform(-1, 1, 500).astype(np.float32)
    write_frames(tmp_path / "st.wav", np.stack([a, b], axis=1), 8000)
    write_frames(tmp_path / "a.wav", a, 8000)
    write_frames(tmp_path / "b.wav", b, 8000)
    st_ = read_wav(tmp_path / "st.wav").samples
    mean = (read_wav(tmp_path / "a.wav").samples + read_wav(tmp_path / "b.wav").samples) / 2
    np.testing.assert_array_equal(st_, mean)


def _write_manifest(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")


def test_manifest_one_per_type(tmp_path):
    write_wav(tmp_path / "a.wav", AudioClip(np.full(800, 0.1), 8000))
    rows = [{"path": "a.wav", "id": t.value, "source_type": t.value} for t in SourceType]
    _write_manifest(tmp_path / "m.jsonl", rows)
    cat = load_manifest(tmp_path / "m.jsonl")
    assert cat.counts() == {t.value: 1 for t in SourceType}
    assert cat["speech_fg"].duration_s == 0.1 and cat["speech_fg"].sample_rate_hz == 8000


def test_manifest_unknown_type_names_line(tmp_path):
    write_wav(tmp_path / "a.wav", AudioClip(np.full(800, 0.1), 8000))
    _write_manifest(tmp_path / "m.jsonl", [
        {"path": "a.wav", "id": "ok", "source_type": "speech_fg"},
        {"path": "a.wav", "id": "bad", "source_type": "speech"},
    ])
    with pytest.raises(ManifestError, match=r"m\.jsonl:2:.*speech"):
        load_manifest(tmp_path / "m.jsonl")
    cat = load_manifest(tmp_path / "m.jsonl", skip_bad=True)
    assert len(cat) == 1


def test_manifest_duplicates_and_missing_types(tmp_path):
    write_wav(tmp_path / "a.wav", AudioClip(np.full(800, 0.1), 8000))
    _write_manifest(tmp_path / "m.jsonl", [
        {"path": "a.wav", "source_type": "speech_fg"},
        {"path": "a.wav", "source_type": "music_fg"},
    ])
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(tmp_path / "m.jsonl")
    _write_manifest(tmp_path / "m2.jsonl", [{"path": "a.wav", "source_type": "speech_fg"}])
    with pytest.raises(ManifestError, match="music_fg"):
        load_manifest(tmp_path / "m2.jsonl", required_types=["music_fg"])


def test_fixture_manifest_counts(catalog):
    assert catalog.counts() == FIXTURE_COUNTS


def test_manifest_counts_order_independent(manifest, tmp_path):
    lines = manifest.read_text().splitlines()
    shuffled = tmp_path / "shuffled.jsonl"
    rows = [json.loads(line) for line in lines[::-1]]
    for r in rows:
        r["path"] = str(manifest.parent / r["path"])
    _write_manifest(shuffled, rows)
    assert load_manifest(shuffled).counts() == load_manifest(manifest).counts()
    assert load_manifest(manifest).counts() == load_manifest(manifest).counts()
