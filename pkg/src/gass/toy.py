"""
A per-frame linear STFT-mask separator trained with the PIT log-MSE loss.

Each STFT frame's log-magnitude vector (B bins) is mapped by one affine
layer to 4*B logits; a logistic turns them into 4 masks that are applied
to the complex mixture STFT (mixture phase kept) and inverted. Gradients
are written out by hand: waveform loss gradient -> adjoint of the
overlap-add synthesis -> complex-bin gradient -> mask -> logits -> W, b.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .audio_io import AudioClip
from .dsp import EPS, StftConfig, istft, stft, window_sum
from .mixgen import StemSet, list_mix_dirs, load_stem_set
from .pit import ENERGY_FLOOR, NUM_SOURCES, LossConfig, pit_loss

log = logging.getLogger(__name__)

__all__ = ["NonFiniteError", "ToyModel", "ToyGradient", "TrainConfig", "TrainResult", "forward",
           "loss_and_grad", "batch_loss_and_grad", "train", "smooth", "gradient_check",
           "save_model", "load_model", "MODEL_MAGIC", "MODEL_VERSION"]

MODEL_MAGIC = b"GASSTOY\0"
MODEL_VERSION = 1
_DB = 10.0 / math.log(10.0)


class NonFiniteError(FloatingPointError):
    pass


def _check(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite values in {name}")


@dataclass(eq=False)
class ToyModel:
    weights: np.ndarray  # (B, 4B)
    bias: np.ndarray  # (4B,)
    stft_config: StftConfig
    sample_rate_hz: int

    def __post_init__(self):
        b = self.stft_config.num_bins
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.shape != (b, NUM_SOURCES * b) or self.bias.shape != (NUM_SOURCES * b,):
            raise ValueError(f"parameter shapes {self.weights.shape}, {self.bias.shape} "
                             f"do not match {b} bins")

    @classmethod
    def init(cls, sample_rate_hz: int = 8000, stft_config: StftConfig | None = None,
             seed: int = 0, weight_scale: float = 1e-3, bias_scale: float = 0.0) -> "ToyModel":
        cfg = stft_config or StftConfig.for_rate(sample_rate_hz)
        rng = np.random.default_rng(seed)
        b = cfg.num_bins
        return cls(weight_scale * rng.standard_normal((b, NUM_SOURCES * b)),
                   bias_scale * rng.standard_normal(NUM_SOURCES * b), cfg, sample_rate_hz)

    @property
    def num_params(self) -> int:
        return self.weights.size + self.bias.size

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def set_flat(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        nw = self.weights.size
        self.weights = theta[:nw].reshape(self.weights.shape).copy()
        self.bias = theta[nw:].copy()

    def copy(self) -> "ToyModel":
        return ToyModel(self.weights.copy(), self.bias.copy(), self.stft_config, self.sample_rate_hz)


@dataclass
class ToyGradient:
    weights: np.ndarray
    bias: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])


def _samples(x):
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def _run(model: ToyModel, mixture: np.ndarray) -> dict:
    _check("parameters", model.weights, model.bias)
    spec = stft(mixture, model.stft_config)
    X = spec.frames
    feats = np.log(np.abs(X) + EPS)
    logits = feats @ model.weights + model.bias
    T, B = X.shape
    masks = expit(logits).reshape(T, NUM_SOURCES, B).transpose(1, 0, 2)
    ests = np.stack([istft(spec.with_frames(m * X)) for m in masks])
    _check("forward", ests)
    return {"spec": spec, "feats": feats, "masks": masks, "estimates": ests}


def forward(model: ToyModel, mixture) -> list[AudioClip]:
    """Return the 4 estimated sources for one mixture."""
    if isinstance(mixture, AudioClip) and mixture.sample_rate_hz != model.sample_rate_hz:
        raise ValueError(f"mixture at {mixture.sample_rate_hz} Hz, model expects "
                         f"{model.sample_rate_hz} Hz")
    ests = _run(model, _samples(mixture))["estimates"]
    return [AudioClip(e, model.sample_rate_hz) for e in ests]


def _istft_adjoint(grad: np.ndarray, spec) -> np.ndarray:
    """Adjoint of ``istft`` w.r.t. (Re Z, Im Z), packed as a complex array.

    ``grad`` has shape (sources, original_len); returns (sources, T, B).
    """
    cfg = spec.config
    T = spec.frames.shape[0]
    n, N, P = spec.original_len, cfg.frame_len, cfg.pad
    ws = window_sum(cfg, T)
    gp = np.zeros(grad.shape[:-1] + ((T - 1) * cfg.hop + N,))
    gp[..., P:P + n] = grad / ws[P:P + n]
    frames = np.lib.stride_tricks.sliding_window_view(gp, N, axis=-1)[..., ::cfg.hop, :]
    frames = frames * cfg.analysis_window()
    # irfft counts interior bins twice (Hermitian mirror), DC and Nyquist once
    weight = np.full(cfg.num_bins, 2.0)
    weight[0] = weight[-1] = 1.0
    return np.fft.rfft(frames, axis=-1) * (weight / N)


def _targets_of(stem_set):
    if isinstance(stem_set, StemSet):
        return _samples(stem_set.mixture), [_samples(s) for s in stem_set.stems]
    mixture, targets = stem_set
    return _samples(mixture), [_samples(t) for t in targets]


def loss_and_grad(model: ToyModel, stem_set, config: LossConfig = LossConfig()
                  ) -> tuple[float, ToyGradient, tuple[int, ...]]:
    """PIT loss of one item and its exact gradient.

    The permutation is held at the current optimum. ``stem_set`` is a
    :class:`StemSet` or a ``(mixture, targets)`` pair.
    """
    mixture, targets = _targets_of(stem_set)
    cache = _run(model, mixture)
    ests = cache["estimates"]
    res = pit_loss(targets, list(ests), mixture, config)
    _check("loss", np.array([res.loss]))

    tau = config.tau
    g = np.zeros_like(ests)
    for i, j in enumerate(res.permutation):
        s, s_hat = targets[j], ests[i]
        if not np.any(s):
            energy = float(s_hat @ s_hat) + tau * float(mixture @ mixture)
            # below the floor the loss is constant, so the gradient vanishes
            g[i] = 2.0 * s_hat / energy if energy > ENERGY_FLOOR else 0.0
        else:
            r = s - s_hat
            energy = float(r @ r) + tau * float(s @ s)
            g[i] = -2.0 * r / energy if energy > ENERGY_FLOOR else 0.0
    g *= _DB / NUM_SOURCES

    X = cache["spec"].frames
    bin_grad = _istft_adjoint(g, cache["spec"])
    mask_grad = np.real(np.conj(X)[None] * bin_grad)
    _check("mask gradient", mask_grad)
    m = cache["masks"]
    logit_grad = (mask_grad * m * (1.0 - m)).transpose(1, 0, 2).reshape(X.shape[0], -1)
    grad = ToyGradient(cache["feats"].T @ logit_grad, logit_grad.sum(axis=0))
    _check("parameter gradient", grad.weights, grad.bias)
    return res.loss, grad, res.permutation


def batch_loss_and_grad(model: ToyModel, items, config: LossConfig = LossConfig()
                        ) -> tuple[float, ToyGradient]:
    """Mean loss and gradient over a batch, reduced in item order."""
    total, gw, gb = 0.0, np.zeros_like(model.weights), np.zeros_like(model.bias)
    for item in items:
        loss, grad, _ = loss_and_grad(model, item, config)
        total += loss
        gw += grad.weights
        gb += grad.bias
    n = len(items)
    return total / n, ToyGradient(gw / n, gb / n)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    steps: int = 2000
    batch_size: int = 4
    seed: int = 0
    tau_db: float = -30.0
    momentum: float = 0.9
    log_every: int = 50

    def __post_init__(self):
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be a finite nonnegative number")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class TrainResult:
    model: ToyModel
    losses: np.ndarray  # per-step batch loss
    smoothed: np.ndarray = field(default=None)


def smooth(losses, window: int = 50) -> np.ndarray:
    """Trailing moving average (shorter window at the start)."""
    x = np.asarray(losses, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def _load_items(dataset, rate):
    if isinstance(dataset, (str, Path)):
        items = [load_stem_set(d) for d in list_mix_dirs(dataset)]
    else:
        items = list(dataset)
    if not items:
        raise ValueError(f"empty dataset: {dataset}")
    for it in items:
        if isinstance(it, StemSet) and it.mixture.sample_rate_hz != rate:
            raise ValueError(f"{it.spec.mix_id} is at {it.mixture.sample_rate_hz} Hz, "
                             f"model runs at {rate} Hz")
    return items


def train(model: ToyModel, dataset, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch gradient descent with optional momentum.

    ``dataset`` is a directory produced by the mixer or a list of items.
    The input model is left untouched; batches are drawn from a generator
    seeded by ``config.seed`` so runs are bit-reproducible.
    """
    items = _load_items(dataset, model.sample_rate_hz)
    model = model.copy()
    loss_cfg = LossConfig(config.tau_db)
    rng = np.random.default_rng(config.seed)
    theta = model.get_flat()
    velocity = np.zeros_like(theta)
    losses = np.empty(config.steps)
    replace_draw = len(items) < config.batch_size
    for step in range(config.steps):
        batch = rng.choice(len(items), size=config.batch_size, replace=replace_draw)
        loss, grad = batch_loss_and_grad(model, [items[i] for i in batch], loss_cfg)
        velocity = config.momentum * velocity - config.learning_rate * grad.flat()
        theta = theta + velocity
        model.set_flat(theta)
        losses[step] = loss
        if (step + 1) % config.log_every == 0:
            log.info("step %d  loss %.3f dB  (smoothed %.3f)", step + 1, loss,
                     losses[max(0, step + 1 - config.log_every):step + 1].mean())
    return TrainResult(model, losses, smooth(losses, config.log_every))


def random_instance(rng: np.random.Generator, rate: int = 8000, duration_s: float = 0.25):
    """Small random (mixture, 4 targets) item: K ~ U{1..4} broadband noise
    sources with a random spectral tilt and level, the rest all-zero.

    Sources keep energy in every bin so no parameter's gradient sits at
    the finite-difference round-off floor.
    """
    n = int(round(rate * duration_s))
    k = int(rng.integers(1, NUM_SOURCES + 1))
    targets = []
    for _ in range(k):
        tilt = rng.uniform(-0.6, 0.6)
        x = np.convolve(rng.standard_normal(n), [1.0, tilt], mode="same")
        targets.append(x * rng.uniform(0.1, 1.0) / np.max(np.abs(x)))
    targets += [np.zeros(n)] * (NUM_SOURCES - k)
    return np.sum(targets, axis=0), targets


def gradient_check(seed: int = 0, instances: int = 10, params_per_instance: int = 50,
                   step: float = 1e-4, rate: int = 8000, duration_s: float = 0.25) -> list[float]:
    """Max relative error of the analytic gradient vs central differences.

    Each instance draws a random model and item, then compares 50 random
    coordinates. The numerical side evaluates the loss through
    :func:`forward` and :func:`pit_loss` only. Relative error is
    |a - n| / max(|a|, |n|, 1e-12).
    """
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    worst = []
    for _ in range(instances):
        model = ToyModel.init(rate, seed=int(rng.integers(2 ** 32)), weight_scale=0.02,
                              bias_scale=1.0)
        mixture, targets = random_instance(rng, rate, duration_s)
        _, grad, _ = loss_and_grad(model, (mixture, targets), cfg)
        analytic = grad.flat()
        theta = model.get_flat()
        idx = rng.choice(theta.size, size=params_per_instance, replace=False)
        probe = model.copy()
        errs = []
        for p in idx:
            vals = []
            for sign in (1.0, -1.0):
                t = theta.copy()
                t[p] += sign * step
                probe.set_flat(t)
                ests = [e.samples for e in forward(probe, mixture)]
                vals.append(pit_loss(targets, ests, mixture, cfg).loss)
            numeric = (vals[0] - vals[1]) / (2.0 * step)
            a = analytic[p]
            errs.append(abs(a - numeric) / max(abs(a), abs(numeric), 1e-12))
        worst.append(float(max(errs)))
    return worst


def save_model(path, model: ToyModel) -> None:
    """Little-endian dump.

    Layout: 8-byte magic ``GASSTOY\\0``; uint32 version, sources, bins,
    frame_len, hop, sample_rate; float64 weights (bins x sources*bins,
    row-major); float64 bias (sources*bins).
    """
    cfg = model.stft_config
    head = MODEL_MAGIC + struct.pack("<6I", MODEL_VERSION, NUM_SOURCES, cfg.num_bins,
                                     cfg.frame_len, cfg.hop, model.sample_rate_hz)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(model.weights.astype("<f8").tobytes())
        fh.write(model.bias.astype("<f8").tobytes())


def load_model(path) -> ToyModel:
    data = Path(path).read_bytes()
    if data[:8] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a toy model file")
    version, sources, bins, frame_len, hop, rate = struct.unpack("<6I", data[8:32])
    if version != MODEL_VERSION or sources != NUM_SOURCES:
        raise ValueError(f"{path}: unsupported model version {version} / {sources} sources")
    nw = bins * sources * bins
    body = np.frombuffer(data[32:], dtype="<f8")
    if body.size != nw + sources * bins:
        raise ValueError(f"{path}: truncated parameter block")
    cfg = StftConfig(frame_len, hop)
    return ToyModel(body[:nw].reshape(bins, sources * bins).copy(), body[nw:].copy(), cfg, rate)
