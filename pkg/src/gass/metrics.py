"""
Separation metrics: SI-SDR, SI-SDRs (single-source bypass), SI-SDRi,
source counting (US/ES/OS) and chunked median SDR, plus per-dataset
aggregation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .audio_io import AudioClip
from .dsp import EPS, energy_db, resample_array
from .pit import NUM_SOURCES, PERMUTATIONS

__all__ = [
    "ACTIVE_FLOOR_DB", "COUNT_MARGIN_DB", "SilentReferenceError", "EvalItem", "MetricsReport",
    "si_sdr", "align_for_eval", "si_sdrs", "si_sdri", "source_count_class", "chunk_sdrs",
    "chunked_median_sdr", "active_mask", "evaluate_at_native_rate", "aggregate_report",
    "ALL_METRICS",
]

# a target is active iff its mean energy exceeds this
ACTIVE_FLOOR_DB = -80.0
# estimates count as nonzero above (softest active target - margin)
COUNT_MARGIN_DB = 20.0
ALL_METRICS = ("sisdr", "counting", "chunked-sdr")


class SilentReferenceError(ValueError):
    pass


def _arr(x):
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB.

    The reference is projected onto the estimate's scale; both energies
    carry a 1e-12 guard so perfect estimates give a large finite value.
    """
    s, s_hat = _arr(reference), _arr(estimate)
    if s.shape != s_hat.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {s_hat.shape}")
    ref_energy = float(s @ s)
    if ref_energy == 0.0:
        raise SilentReferenceError("SI-SDR is undefined for an all-zero reference")
    alpha = float(s_hat @ s) / (ref_energy + EPS)
    target = alpha * s
    resid = s_hat - target
    return 10.0 * math.log10((float(target @ target) + EPS) / (float(resid @ resid) + EPS))


def active_mask(targets) -> np.ndarray:
    return np.array([energy_db(_arr(t)) > ACTIVE_FLOOR_DB for t in targets])


def align_for_eval(targets, estimates) -> tuple[int, ...]:
    """Assignment (estimate i -> target perm[i]) maximizing summed SI-SDR.

    Only pairs with an active target contribute; ties resolve to the
    lexicographically smallest permutation.
    """
    active = active_mask(targets)
    score = np.zeros((NUM_SOURCES, NUM_SOURCES))
    for j in np.flatnonzero(active):
        for i in range(NUM_SOURCES):
            score[i, j] = si_sdr(targets[j], estimates[i])
    best, best_perm = -math.inf, PERMUTATIONS[0]
    for perm in PERMUTATIONS:
        value = sum(score[i, perm[i]] for i in range(NUM_SOURCES))
        if value > best:
            best, best_perm = value, perm
    return best_perm


def si_sdrs(mixture, aligned_estimate) -> float:
    """Single-source score: SI-SDR of the estimate against the mixture itself."""
    return si_sdr(mixture, aligned_estimate)


def si_sdri(target, estimate, mixture) -> float:
    """SI-SDR improvement over passing the mixture through unchanged."""
    return si_sdr(target, estimate) - si_sdr(target, mixture)


def source_count_class(targets, estimates) -> str:
    """Return "US", "ES" or "OS" by comparing nonzero estimate and target counts."""
    t_db = np.array([energy_db(_arr(t)) for t in targets])
    active = t_db > ACTIVE_FLOOR_DB
    if not active.any():
        raise ValueError("no active target: cannot classify source count")
    threshold = t_db[active].min() - COUNT_MARGIN_DB
    n_est = sum(energy_db(_arr(e)) > threshold for e in estimates)
    n_tgt = int(active.sum())
    if n_est < n_tgt:
        return "US"
    return "ES" if n_est == n_tgt else "OS"


def chunk_sdrs(reference, estimate, sample_rate_hz: int, chunk_s: float = 1.0) -> np.ndarray:
    """Plain energy-ratio SDR of each full, non-silent chunk.

    A trailing partial chunk is dropped unless the track is shorter than
    one chunk, in which case the whole track is the only chunk.
    """
    s, s_hat = _arr(reference), _arr(estimate)
    if s.shape != s_hat.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {s_hat.shape}")
    size = int(round(chunk_s * sample_rate_hz))
    if size <= 0:
        raise ValueError("chunk length must be positive")
    n = max(1, len(s) // size)
    size = size if len(s) >= size else len(s)
    out = []
    for c in range(n):
        ref = s[c * size:(c + 1) * size]
        if energy_db(ref) <= ACTIVE_FLOOR_DB:
            continue
        err = ref - s_hat[c * size:(c + 1) * size]
        out.append(10.0 * math.log10((float(ref @ ref) + EPS) / (float(err @ err) + EPS)))
    return np.array(out)


def chunked_median_sdr(reference_track, estimate_track, sample_rate_hz: int | None = None,
                       chunk_s: float = 1.0) -> float:
    """Median over 1 s chunks of the per-chunk SDR, skipping silent chunks."""
    if sample_rate_hz is None:
        sample_rate_hz = reference_track.sample_rate_hz
    values = chunk_sdrs(reference_track, estimate_track, sample_rate_hz, chunk_s)
    if values.size == 0:
        raise SilentReferenceError("every chunk of the reference is silent")
    return float(np.median(values))


@dataclass
class EvalItem:
    """Ground truth at its native rate plus estimates at any rate."""

    mix_id: str
    targets: Sequence[AudioClip]
    estimates: Sequence[AudioClip]
    mixture: AudioClip
    native_rate_hz: int | None = None

    def __post_init__(self):
        if self.native_rate_hz is None:
            self.native_rate_hz = self.mixture.sample_rate_hz
        if len(self.targets) != NUM_SOURCES or len(self.estimates) != NUM_SOURCES:
            raise ValueError(f"{self.mix_id}: need {NUM_SOURCES} targets and estimates")


def _to_native(clip: AudioClip, rate: int, length: int) -> np.ndarray:
    x = resample_array(clip.samples, clip.sample_rate_hz, rate)
    if len(x) >= length:
        return x[:length]
    return np.pad(x, (0, length - len(x)))


def evaluate_at_native_rate(item: EvalItem, metrics: Sequence[str] = ("sisdr", "counting")) -> dict:
    """Score one mix against its original-rate ground truth.

    Ground truth is brought to ``native_rate_hz`` if needed; estimates
    produced at another rate (e.g. 48 kHz) are resampled back first.
    """
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    rate = item.native_rate_hz
    mix = _to_native(item.mixture, rate, round(len(item.mixture) * rate / item.mixture.sample_rate_hz))
    n = len(mix)
    targets = [_to_native(t, rate, n) for t in item.targets]
    estimates = [_to_native(e, rate, n) for e in item.estimates]

    active = active_mask(targets)
    rec: dict = {"mix_id": item.mix_id, "n_active": int(active.sum())}
    perm = align_for_eval(targets, estimates)
    # inverse: target j is matched by estimate inv[j]
    inv = [0] * NUM_SOURCES
    for i, j in enumerate(perm):
        inv[j] = i
    rec["permutation"] = list(perm)

    if "sisdr" in metrics:
        per_source = [si_sdr(targets[j], estimates[inv[j]]) if active[j] else None
                      for j in range(NUM_SOURCES)]
        rec["per_source_si_sdr"] = per_source
        rec["si_sdrs"] = None
        rec["si_sdri"] = None
        rec["si_sdri_pairs"] = []
        if rec["n_active"] == 1:
            j = int(np.flatnonzero(active)[0])
            rec["si_sdrs"] = si_sdrs(mix, estimates[inv[j]])
        elif rec["n_active"] > 1:
            pairs = [si_sdri(targets[j], estimates[inv[j]], mix) for j in np.flatnonzero(active)]
            rec["si_sdri_pairs"] = pairs
            rec["si_sdri"] = float(np.mean(pairs))
    if "counting" in metrics:
        rec["count_class"] = source_count_class(targets, estimates)
    if "chunked-sdr" in metrics:
        chunked = []
        for j in range(NUM_SOURCES):
            try:
                chunked.append(chunked_median_sdr(targets[j], estimates[inv[j]], rate)
                               if active[j] else None)
            except SilentReferenceError:
                chunked.append(None)
        rec["chunked_sdr"] = chunked
    return rec


@dataclass
class MetricsReport:
    per_mix: list
    aggregates: dict = field(default_factory=dict)

    def lines(self, decimals: int = 4) -> list[dict]:
        return ([_rounded(r, decimals) for r in self.per_mix]
                + [{"aggregate": _rounded(self.aggregates, decimals)}])


def _rounded(obj, decimals):
    if isinstance(obj, float):
        return round(obj, decimals) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _rounded(v, decimals) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v, decimals) for v in obj]
    if isinstance(obj, np.generic):
        return _rounded(obj.item(), decimals)
    return obj


def aggregate_report(records: Sequence[dict]) -> MetricsReport:
    """Fold per-mix records into dataset-level numbers.

    SI-SDRs is averaged over single-source mixes, SI-SDRi over all active
    pairs of multi-source mixes, counting rates over all mixes, and
    chunked SDR as a per-source median across tracks.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    agg: dict = {"num_mixes": len(records), "si_sdri_averaging": "pairs"}

    if any("per_source_si_sdr" in r for r in records):
        s = [r["si_sdrs"] for r in records if r.get("si_sdrs") is not None]
        p = [v for r in records for v in r.get("si_sdri_pairs", [])]
        agg["mean_si_sdrs"] = float(np.mean(s)) if s else None
        agg["mean_si_sdri"] = float(np.mean(p)) if p else None
        agg["num_single_source"] = len(s)
        agg["num_active_pairs"] = len(p)

    classes = [r["count_class"] for r in records if "count_class" in r]
    if classes:
        n = len(classes)
        for c in ("US", "ES", "OS"):
            agg[f"{c.lower()}_pct"] = 100.0 * classes.count(c) / n

    if any("chunked_sdr" in r for r in records):
        medians = []
        for j in range(NUM_SOURCES):
            vals = [r["chunked_sdr"][j] for r in records
                    if "chunked_sdr" in r and r["chunked_sdr"][j] is not None]
            medians.append(float(np.median(vals)) if vals else None)
        agg["median_chunked_sdr"] = medians
    return MetricsReport(records, agg)
