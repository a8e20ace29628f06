"""
Dynamic mixture synthesis.

A mix is drawn as: task -> number of sources K -> per-slot source type,
recording, fragment offset and gain. Rendering then reads each recording,
resamples it to the mix rate, cuts or pads it to the mix length at the
drawn offsets, peak-normalizes it and applies its gain. The mixture is
the plain sum of the stems; slots beyond K are all-zero stems.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy import special

from . import __version__
from .audio_io import (AudioClip, SourceCatalog, SourceRecord, SourceType, load_manifest,
                       read_wav, write_wav)
from .dsp import SILENCE_FLOOR, SilentSourceError, peak_normalize, resample_array
from .pit import NUM_SOURCES

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

__all__ = [
    "MixError", "Task", "TASK_RULES", "DEFAULT_GAIN_RANGES_DB", "MixConfig", "Component",
    "MixtureSpec", "StemSet", "mix_seed", "sample_gain_db", "sample_task", "sample_k",
    "sample_components", "sample_spec", "render_mixture", "generate_dataset",
    "load_stem_set", "write_stem_set", "list_mix_dirs",
]


class MixError(RuntimeError):
    pass


class Task(str, enum.Enum):
    SPEECH = "speech"
    SOUND_EVENT = "sound_event"
    MUSIC = "music"

    def __str__(self):
        return self.value


# task -> (type forced into slot 1, types allowed in the other slots)
TASK_RULES: dict[Task, tuple[SourceType, tuple[SourceType, ...]]] = {
    Task.SPEECH: (SourceType.SPEECH_FG, (SourceType.SPEECH_FG, SourceType.EVENT_FG,
                                         SourceType.EVENT_BG, SourceType.MUSIC_BG)),
    Task.SOUND_EVENT: (SourceType.EVENT_FG, (SourceType.EVENT_FG, SourceType.EVENT_BG,
                                             SourceType.MUSIC_BG)),
    Task.MUSIC: (SourceType.MUSIC_FG, (SourceType.MUSIC_FG, SourceType.EVENT_BG)),
}

DEFAULT_GAIN_RANGES_DB = {
    "speech_fg": (-10.0, 0.0),
    "event_fg": (-10.0, 0.0),
    "event_bg": (-20.0, -10.0),
    "music_fg": (-3.0, 0.0),
    "music_bg": (-20.0, -10.0),
}


@dataclass(frozen=True)
class MixConfig:
    task_probs: Mapping[str, float] = field(
        default_factory=lambda: {"speech": 0.25, "sound_event": 0.25, "music": 0.5})
    k_values: tuple[int, ...] = (1, 2, 3, 4)
    duration_s: float = 8.0
    sample_rate_hz: int = 48000
    gain_ranges_db: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_GAIN_RANGES_DB))
    beta_params: tuple[float, float] = (2.0, 1.0)
    max_bg_per_type: int = 1
    max_silent_retries: int = 10

    def __post_init__(self):
        probs = {str(Task(k)): float(v) for k, v in self.task_probs.items()}
        if any(p < 0 for p in probs.values()) or not math.isclose(sum(probs.values()), 1.0,
                                                                    abs_tol=1e-9):
            raise ValueError(f"task probabilities must be nonnegative and sum to 1: {probs}")
        object.__setattr__(self, "task_probs", probs)
        ranges = dict(DEFAULT_GAIN_RANGES_DB)
        for k, v in self.gain_ranges_db.items():
            lo, hi = map(float, v)
            if lo > hi:
                raise ValueError(f"gain range for {k} has low > high: {v}")
            ranges[SourceType(k).value] = (lo, hi)
        object.__setattr__(self, "gain_ranges_db", ranges)
        ks = tuple(int(k) for k in self.k_values)
        if not ks or any(not 1 <= k <= NUM_SOURCES for k in ks):
            raise ValueError(f"k_values must lie in 1..{NUM_SOURCES}: {ks}")
        object.__setattr__(self, "k_values", ks)
        object.__setattr__(self, "beta_params", tuple(float(b) for b in self.beta_params))
        if self.duration_s <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("duration and sample rate must be positive")

    @property
    def num_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gain_ranges_db"] = {k: list(v) for k, v in self.gain_ranges_db.items()}
        d["k_values"] = list(self.k_values)
        d["beta_params"] = list(self.beta_params)
        return d

    @classmethod
    def from_mapping(cls, values: Mapping, base: "MixConfig | None" = None) -> "MixConfig":
        base = base or cls()
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown MixConfig keys: {sorted(unknown)}")
        values = dict(values)
        if "gain_ranges_db" in values:
            values["gain_ranges_db"] = {**base.gain_ranges_db, **values["gain_ranges_db"]}
        return replace(base, **values)

    @classmethod
    def from_file(cls, path) -> "MixConfig":
        """Read a JSON or TOML file; a ``[mix]`` table is used when present."""
        data = read_config_file(path)
        return cls.from_mapping(data.get("mix", data))


def read_config_file(path) -> dict:
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass(frozen=True)
class Component:
    record_id: str
    source_type: SourceType
    gain_db: float
    clip_offset_s: float
    mix_onset_s: float

    def to_dict(self):
        return {"record_id": self.record_id, "source_type": self.source_type.value,
                "gain_db": self.gain_db, "clip_offset_s": self.clip_offset_s,
                "mix_onset_s": self.mix_onset_s}


@dataclass(frozen=True)
class MixtureSpec:
    mix_id: str
    task: Task
    k: int
    components: tuple[Component, ...]
    seed: int

    def to_dict(self) -> dict:
        return {"mix_id": self.mix_id, "task": self.task.value, "k": self.k,
                "components": [c.to_dict() for c in self.components], "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MixtureSpec":
        comps = tuple(Component(c["record_id"], SourceType(c["source_type"]), float(c["gain_db"]),
                                float(c["clip_offset_s"]), float(c["mix_onset_s"]))
                      for c in d["components"])
        return cls(str(d["mix_id"]), Task(d["task"]), int(d["k"]), comps, int(d["seed"]))

    def validate(self, config: MixConfig = MixConfig()) -> list[str]:
        """Return human-readable rule violations (empty if the spec is valid)."""
        problems = []
        if len(self.components) != self.k:
            problems.append(f"k={self.k} but {len(self.components)} components")
        if self.k not in config.k_values:
            problems.append(f"k={self.k} outside {config.k_values}")
        forced, allowed = TASK_RULES[self.task]
        if self.components and self.components[0].source_type is not forced:
            problems.append(f"slot 1 is {self.components[0].source_type}, task {self.task} "
                            f"requires {forced}")
        for n, c in enumerate(self.components, 1):
            lo, hi = config.gain_ranges_db[c.source_type.value]
            if not lo <= c.gain_db <= hi:
                problems.append(f"component {n} ({c.source_type}) gain {c.gain_db:.4f} dB "
                                f"outside [{lo:g}, {hi:g}]")
            if c.source_type not in allowed:
                problems.append(f"component {n} type {c.source_type} not allowed for {self.task}")
        for t in SourceType:
            if t.is_background:
                n_bg = sum(c.source_type is t for c in self.components)
                if n_bg > config.max_bg_per_type:
                    problems.append(f"{n_bg} {t} components > {config.max_bg_per_type}")
        ids = [c.record_id for c in self.components]
        if len(set(ids)) != len(ids):
            problems.append("a recording appears twice")
        return problems


@dataclass(frozen=True, eq=False)
class StemSet:
    """Rendered mix. Stems are float32 and ``mixture`` is their
    left-to-right float32 sum, so the identity survives float32 storage."""

    mixture: AudioClip
    stems: tuple[AudioClip, ...]
    spec: MixtureSpec

    def sum_identity_holds(self) -> bool:
        return np.array_equal(self.mixture.samples, _sum_stems([s.samples for s in self.stems]))


def _sum_stems(stems) -> np.ndarray:
    out = np.asarray(stems[0], dtype=np.float32).copy()
    for s in stems[1:]:
        out = out + np.asarray(s, dtype=np.float32)
    return out


def mix_seed(global_seed: int, index: int) -> int:
    """Per-mix 64-bit seed: first 8 bytes (little endian) of
    BLAKE2b("<global_seed>:<index>")."""
    digest = hashlib.blake2b(f"{int(global_seed)}:{int(index)}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def sample_gain_db(rng: np.random.Generator, gain_range, beta_params=(2.0, 1.0)) -> float:
    """Draw a gain in dB: u ~ U(0,1), x = BetaCDF^-1(u), low + x (high - low).

    For Beta(a, 1) the inverse CDF is u**(1/a), i.e. sqrt(u) for Beta(2, 1),
    which puts most mass near the loud end of the range.
    """
    lo, hi = gain_range
    if lo > hi:
        raise ValueError(f"empty gain range {gain_range}")
    a, b = beta_params
    u = rng.random()
    x = u ** (1.0 / a) if b == 1.0 else float(special.betaincinv(a, b, u))
    return lo + x * (hi - lo)


def sample_task(rng: np.random.Generator, config: MixConfig = MixConfig()) -> Task:
    u = rng.random()
    acc = 0.0
    last = None
    for task in Task:
        p = config.task_probs.get(task.value, 0.0)
        if p <= 0:
            continue
        acc += p
        last = task
        if u < acc:
            return task
    return last


def sample_k(rng: np.random.Generator, config: MixConfig = MixConfig()) -> int:
    return config.k_values[int(rng.integers(len(config.k_values)))]


def _draw_offsets(rng, duration_s: float, mix_s: float) -> tuple[float, float]:
    if duration_s > mix_s:
        return float(rng.uniform(0.0, duration_s - mix_s)), 0.0
    return 0.0, float(rng.uniform(0.0, mix_s - duration_s))


def sample_components(rng: np.random.Generator, task, k: int, catalog: SourceCatalog,
                      config: MixConfig = MixConfig(),
                      is_silent: Callable[[SourceRecord, float, float], bool] | None = None
                      ) -> tuple[Component, ...]:
    """Pick K components obeying the task's type rules.

    Slot 1 gets the task's foreground type; every other slot draws a type
    uniformly from the allowed types that still have unused recordings
    and, for backgrounds, have not hit ``max_bg_per_type``. A recording is
    used at most once per mix. ``is_silent(record, clip_offset_s,
    mix_onset_s)`` lets the caller reject silent fragments; each slot
    retries up to ``max_silent_retries`` recordings of its type.
    """
    task = Task(task)
    forced, allowed = TASK_RULES[task]
    catalog.require([forced])
    used: set[str] = set()
    n_bg: dict[SourceType, int] = {}
    components = []

    def free(t):
        return [rid for rid in catalog.bucket(t) if rid not in used]

    for slot in range(k):
        if slot == 0:
            stype = forced
        else:
            candidates = [t for t in allowed if free(t)
                          and not (t.is_background and n_bg.get(t, 0) >= config.max_bg_per_type)]
            if not candidates:
                raise MixError(f"no source type left for slot {slot + 1} of a {task} mix "
                               f"with k={k}")
            stype = candidates[int(rng.integers(len(candidates)))]
        pool = free(stype)
        if not pool:
            raise MixError(f"no unused {stype} recording for slot {slot + 1}")
        for _ in range(config.max_silent_retries):
            rid = pool[int(rng.integers(len(pool)))]
            rec = catalog[rid]
            clip_offset, onset = _draw_offsets(rng, rec.duration_s, config.duration_s)
            if is_silent is None or not is_silent(rec, clip_offset, onset):
                break
            log.debug("silent fragment of %s at %.3f s; redrawing", rid, clip_offset)
            pool = [p for p in pool if p != rid]
            if not pool:
                raise SilentSourceError(f"every {stype} candidate is silent")
        else:
            raise SilentSourceError(
                f"{config.max_silent_retries} silent {stype} fragments in a row")
        gain = sample_gain_db(rng, config.gain_ranges_db[stype.value], config.beta_params)
        used.add(rid)
        if stype.is_background:
            n_bg[stype] = n_bg.get(stype, 0) + 1
        components.append(Component(rid, stype, gain, clip_offset, onset))
    return tuple(components)


def sample_spec(seed: int, mix_id: str, catalog: SourceCatalog, config: MixConfig = MixConfig(),
                is_silent=None) -> MixtureSpec:
    rng = np.random.default_rng(seed)
    task = sample_task(rng, config)
    k = sample_k(rng, config)
    comps = sample_components(rng, task, k, catalog, config, is_silent)
    return MixtureSpec(mix_id, task, k, comps, int(seed))


@lru_cache(maxsize=64)
def _load_source(path: str, rate: int) -> np.ndarray:
    clip = read_wav(path)
    y = resample_array(clip.samples, clip.sample_rate_hz, rate)
    y.flags.writeable = False
    return y


def _fragment(record: SourceRecord, clip_offset_s: float, mix_onset_s: float,
              config: MixConfig) -> np.ndarray:
    x = _load_source(str(record.path), config.sample_rate_hz)
    n = config.num_samples
    rate = config.sample_rate_hz
    start = int(round(clip_offset_s * rate))
    onset = min(int(round(mix_onset_s * rate)), n)
    piece = x[start:start + n - onset]
    out = np.zeros(n)
    out[onset:onset + len(piece)] = piece
    return out


def fragment_is_silent(catalog: SourceCatalog, config: MixConfig):
    def check(record, clip_offset_s, mix_onset_s):
        frag = _fragment(record, clip_offset_s, mix_onset_s, config)
        return not np.max(np.abs(frag), initial=0.0) > SILENCE_FLOOR
    return check


def render_mixture(spec: MixtureSpec, catalog: SourceCatalog,
                   config: MixConfig = MixConfig()) -> StemSet:
    """Render the mixture and its 4 stems at ``config.sample_rate_hz``."""
    n, rate = config.num_samples, config.sample_rate_hz
    stems = []
    for c in spec.components:
        frag = _fragment(catalog[c.record_id], c.clip_offset_s, c.mix_onset_s, config)
        try:
            unit = peak_normalize(AudioClip(frag, rate)).samples
        except SilentSourceError as exc:
            raise SilentSourceError(f"{spec.mix_id}: fragment of {c.record_id}: {exc}") from None
        stems.append((unit * 10.0 ** (c.gain_db / 20.0)).astype(np.float32))
    stems += [np.zeros(n, dtype=np.float32)] * (NUM_SOURCES - len(stems))
    mixture = _sum_stems(stems)
    return StemSet(AudioClip(mixture, rate), tuple(AudioClip(s, rate) for s in stems), spec)


def write_stem_set(stem_set: StemSet, mix_dir) -> None:
    mix_dir = Path(mix_dir)
    mix_dir.mkdir(parents=True, exist_ok=True)
    write_wav(mix_dir / "mixture.wav", stem_set.mixture)
    for i, s in enumerate(stem_set.stems, 1):
        write_wav(mix_dir / f"stem{i}.wav", s)
    meta = {**stem_set.spec.to_dict(), "toolkit_version": __version__}
    (mix_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_stem_set(mix_dir) -> StemSet:
    """Read back a mix directory written by :func:`write_stem_set`."""
    mix_dir = Path(mix_dir)
    meta = json.loads((mix_dir / "meta.json").read_text())
    mixture = read_wav(mix_dir / "mixture.wav")
    stems = tuple(read_wav(mix_dir / f"stem{i}.wav") for i in range(1, NUM_SOURCES + 1))
    f32 = lambda c: AudioClip(c.samples.astype(np.float32), c.sample_rate_hz)  # noqa: E731
    return StemSet(f32(mixture), tuple(f32(s) for s in stems), MixtureSpec.from_dict(meta))


def list_mix_dirs(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.iterdir() if (p / "meta.json").is_file())


# worker-process state for generate_dataset
_CTX: dict = {}


def _init_worker(catalog, config, seed, out_dir):
    _CTX.update(catalog=catalog, config=config, seed=seed, out_dir=out_dir)


def _make_one(index: int) -> tuple[str, int]:
    catalog, config = _CTX["catalog"], _CTX["config"]
    mix_id = f"mix_{index:06d}"
    try:
        spec = sample_spec(mix_seed(_CTX["seed"], index), mix_id, catalog, config,
                           fragment_is_silent(catalog, config))
        write_stem_set(render_mixture(spec, catalog, config), Path(_CTX["out_dir"]) / mix_id)
    except Exception as exc:
        raise MixError(f"mix {index}: {exc}") from exc
    return spec.task.value, spec.k


def generate_dataset(manifest, config: MixConfig = MixConfig(), n: int = 1, seed: int = 0,
                     out_dir=".", workers: int = 1) -> dict:
    """Render ``n`` mixes into ``out_dir/mix_XXXXXX/``.

    ``manifest`` is a JSONL path or a :class:`SourceCatalog`. Mix i is
    seeded by :func:`mix_seed` (seed, i), so the tree on disk is the same
    for any number of workers.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    catalog = manifest if isinstance(manifest, SourceCatalog) else load_manifest(manifest)
    needed = {TASK_RULES[Task(t)][0] for t, p in config.task_probs.items() if p > 0}
    catalog.require(needed)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise MixError(f"cannot create {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise MixError(f"{out_dir} is not writable")

    args = (catalog, config, int(seed), str(out_dir))
    if workers <= 1:
        _init_worker(*args)
        results = [_make_one(i) for i in range(n)]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=args) as pool:
            results = list(pool.map(_make_one, range(n), chunksize=max(1, n // (4 * workers))))

    tasks = [t for t, _ in results]
    ks = [k for _, k in results]
    report = {
        "num_mixes": n, "seed": int(seed), "toolkit_version": __version__,
        "task_counts": {t.value: tasks.count(t.value) for t in Task},
        "k_counts": {str(k): ks.count(k) for k in range(1, NUM_SOURCES + 1)},
        "catalog_counts": catalog.counts(),
        "config": config.to_dict(),
    }
    (out_dir / "dataset.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
