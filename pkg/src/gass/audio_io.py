"""
WAV reading/writing and source-manifest ingestion.

Only RIFF/WAVE is handled: PCM int16/int24 and IEEE float32 on read,
float32/int16 on write. Every clip is down-mixed to mono on read by
averaging channels.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "AudioError", "MissingFileError", "MalformedWavError", "UnsupportedEncodingError",
    "ManifestError", "AudioClip", "WavInfo", "WriteResult", "SourceType",
    "SourceRecord", "SourceCatalog", "read_wav", "probe_wav", "write_wav", "write_frames",
    "load_manifest",
]

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class AudioError(Exception):
    pass


class MissingFileError(AudioError, FileNotFoundError):
    pass


class MalformedWavError(AudioError):
    pass


class UnsupportedEncodingError(AudioError):
    pass


class ManifestError(AudioError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono sample buffer with its sampling rate.

    ``samples`` keeps the dtype it was built with (float32 clips stay float32
    so stored stems and mixtures sum exactly); any finite float array works.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim != 1:
            raise ValueError(f"AudioClip needs a 1-D buffer, got shape {x.shape}")
        if not np.issubdtype(x.dtype, np.floating):
            x = x.astype(np.float64)
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be a positive integer, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioClip samples must be finite")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return (self.sample_rate_hz == other.sample_rate_hz
                and np.array_equal(self.samples, other.samples))

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class WavInfo:
    sample_rate_hz: int
    num_frames: int
    channels: int
    encoding: str  # "int16" | "int24" | "float32"

    @property
    def duration_s(self) -> float:
        return self.num_frames / self.sample_rate_hz


@dataclass(frozen=True)
class WriteResult:
    path: Path
    encoding: str
    clipped: int = 0


def _parse_header(fh, path) -> tuple[WavInfo, int, int]:
    """Walk the RIFF chunks; return (info, data_offset, data_size)."""
    head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    while True:
        chunk = fh.read(8)
        if len(chunk) < 8:
            break
        cid, size = struct.unpack("<4sI", chunk)
        if cid == b"fmt ":
            body = fh.read(size)
            if len(body) < 16:
                raise MalformedWavError(f"{path}: truncated fmt chunk")
            tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", body[:16])
            if tag == WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise MalformedWavError(f"{path}: truncated WAVE_FORMAT_EXTENSIBLE header")
                tag = struct.unpack("<H", body[24:26])[0]
            fmt = (tag, channels, rate, block_align, bits)
            if size % 2:
                fh.read(1)
        elif cid == b"data":
            if fmt is None:
                raise MalformedWavError(f"{path}: data chunk before fmt chunk")
            tag, channels, rate, block_align, bits = fmt
            if channels < 1 or rate < 1:
                raise MalformedWavError(f"{path}: {channels} channels at {rate} Hz")
            if tag == WAVE_FORMAT_PCM and bits in (16, 24):
                encoding = f"int{bits}"
            elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
                encoding = "float32"
            else:
                raise UnsupportedEncodingError(
                    f"{path}: format tag 0x{tag:04x} with {bits} bits is not supported")
            if block_align != channels * bits // 8:
                raise MalformedWavError(f"{path}: block align {block_align} inconsistent")
            offset = fh.tell()
            # tolerate a data size running past EOF (streamed writers leave it unset)
            avail = os.fstat(fh.fileno()).st_size - offset
            size = min(size, avail)
            frames = size // block_align
            return WavInfo(rate, frames, channels, encoding), offset, frames * block_align
        else:
            fh.seek(size + (size % 2), os.SEEK_CUR)
    raise MalformedWavError(f"{path}: no fmt/data chunk found")


def probe_wav(path) -> WavInfo:
    """Read only the header of a WAV file."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such audio file: {path}")
    with open(path, "rb") as fh:
        return _parse_header(fh, path)[0]


def read_wav(path) -> AudioClip:
    """Load a WAV file as a mono float64 clip.

    Integer PCM is scaled by 2**(bits-1); float32 data is kept as stored.
    Multi-channel files are averaged to mono.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such audio file: {path}")
    with open(path, "rb") as fh:
        info, offset, size = _parse_header(fh, path)
        fh.seek(offset)
        raw = fh.read(size)

    if info.encoding == "float32":
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    elif info.encoding == "int16":
        data = np.frombuffer(raw, dtype="<i2") / 32768.0
    else:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        data = v / float(1 << 23)
    if not np.all(np.isfinite(data)):
        raise MalformedWavError(f"{path}: non-finite samples")

    data = data.reshape(-1, info.channels)
    mono = data[:, 0].copy() if info.channels == 1 else data.mean(axis=1)
    return AudioClip(mono, info.sample_rate_hz)


def write_wav(path, clip: AudioClip, encoding: str = "float32") -> WriteResult:
    """Write a mono clip. float32 is lossless for float32-representable data.

    int16 saturates out-of-range samples; the number of samples with
    ``|x| > 1`` is returned in ``WriteResult.clipped``.
    """
    return write_frames(path, np.asarray(clip.samples)[:, None], clip.sample_rate_hz, encoding)


def write_frames(path, frames: np.ndarray, sample_rate_hz: int,
                 encoding: str = "float32") -> WriteResult:
    """Write an (n_frames, n_channels) array; also accepts ``int24``."""
    path = Path(path)
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, channels = x.shape
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot write non-finite samples")
    clipped = 0
    if encoding == "float32":
        width, tag = 4, WAVE_FORMAT_IEEE_FLOAT
        payload = x.astype("<f4").tobytes()
    elif encoding in ("int16", "int24"):
        bits = int(encoding[3:])
        width, tag = bits // 8, WAVE_FORMAT_PCM
        scale = float(1 << (bits - 1))
        clipped = int(np.count_nonzero(np.abs(x) > 1.0))
        q = np.clip(np.round(x * scale), -scale, scale - 1).astype(np.int64).reshape(-1)
        if bits == 16:
            payload = q.astype("<i2").tobytes()
        else:
            u = (q & 0xFFFFFF).astype("<u4").view(np.uint8).reshape(-1, 4)[:, :3]
            payload = u.tobytes()
        if clipped:
            log.warning("%s: %d samples clipped to %s range", path, clipped, encoding)
    else:
        raise UnsupportedEncodingError(f"cannot write encoding {encoding!r}")

    block = channels * width
    fmt = struct.pack("<HHIIHH", tag, channels, sample_rate_hz, sample_rate_hz * block,
                      block, width * 8)
    if tag == WAVE_FORMAT_IEEE_FLOAT:
        fmt += struct.pack("<H", 0)
        extra = b"fact" + struct.pack("<II", 4, n)
    else:
        extra = b""
    body = (b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + extra
            + b"data" + struct.pack("<I", len(payload)) + payload)
    if len(payload) % 2:
        body += b"\x00"
    try:
        with open(path, "wb") as fh:
            fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
    except OSError as exc:
        raise AudioError(f"cannot write {path}: {exc}") from exc
    return WriteResult(path, encoding, clipped)


class SourceType(str, enum.Enum):
    SPEECH_FG = "speech_fg"
    EVENT_FG = "event_fg"
    EVENT_BG = "event_bg"
    MUSIC_FG = "music_fg"
    MUSIC_BG = "music_bg"

    @property
    def is_background(self) -> bool:
        return self.value.endswith("_bg")

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SourceRecord:
    id: str
    path: Path
    source_type: SourceType
    duration_s: float
    sample_rate_hz: int


@dataclass(frozen=True)
class SourceCatalog:
    """Immutable set of source records bucketed by source type."""

    records: tuple[SourceRecord, ...]
    index: Mapping[SourceType, tuple[str, ...]] = field(default=None)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate record ids: {dup[:5]}")
        index = {t: tuple(r.id for r in self.records if r.source_type is t) for t in SourceType}
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "_by_id", {r.id: r for r in self.records})

    def __len__(self):
        return len(self.records)

    def __getitem__(self, record_id: str) -> SourceRecord:
        return self._by_id[record_id]

    def bucket(self, source_type) -> tuple[str, ...]:
        return self.index[SourceType(source_type)]

    def counts(self) -> dict[str, int]:
        return {t.value: len(ids) for t, ids in self.index.items()}

    def require(self, types: Iterable) -> None:
        empty = [SourceType(t).value for t in types if not self.index[SourceType(t)]]
        if empty:
            raise ManifestError(f"catalog has no records of required type(s): {', '.join(empty)}")


def load_manifest(path, skip_bad: bool = False, required_types: Iterable = ()) -> SourceCatalog:
    """Parse a JSONL manifest into a :class:`SourceCatalog`.

    Relative paths resolve against the manifest's directory. Missing
    ``duration_s``/``sample_rate_hz`` are probed from the WAV header.
    Malformed lines raise :class:`ManifestError` unless ``skip_bad``.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such manifest: {path}")
    root = path.parent
    records, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(_parse_line(line, root))
            except (ManifestError, AudioError, ValueError, KeyError, TypeError) as exc:
                msg = f"{path}:{lineno}: {exc}"
                if not skip_bad:
                    raise ManifestError(msg) from exc
                log.warning("skipping %s", msg)
                skipped += 1
    catalog = SourceCatalog(tuple(records))
    catalog.require(required_types)
    log.info("loaded %d records (%d skipped): %s", len(catalog), skipped, catalog.counts())
    return catalog


def _parse_line(line: str, root: Path) -> SourceRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ManifestError("record is not a JSON object")
    raw_type = obj["source_type"]
    try:
        stype = SourceType(raw_type)
    except ValueError:
        raise ManifestError(
            f"unknown source_type {raw_type!r}; expected one of "
            f"{[t.value for t in SourceType]}") from None
    rel = obj["path"]
    p = Path(rel)
    if not p.is_absolute():
        p = root / p
    dur, rate = obj.get("duration_s"), obj.get("sample_rate_hz")
    if dur is None or rate is None:
        info = probe_wav(p)
        dur = info.duration_s if dur is None else dur
        rate = info.sample_rate_hz if rate is None else rate
    dur, rate = float(dur), int(rate)
    if not dur > 0:
        raise ManifestError(f"non-positive duration {dur}")
    if rate <= 0:
        raise ManifestError(f"non-positive sample rate {rate}")
    return SourceRecord(str(obj.get("id", rel)), p, stype, dur, rate)
