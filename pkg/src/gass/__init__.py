"""General audio source separation toolkit.

Dynamic mixing of speech / sound-event / music recordings, the
thresholded log-MSE PIT loss, an ideal-ratio-mask oracle, the SI-SDR
family of evaluation metrics and a small trainable mask separator.
"""

__version__ = "0.1.0"

from .audio_io import AudioClip, SourceCatalog, SourceRecord, SourceType, load_manifest, read_wav, write_wav
from .dsp import StftConfig, istft, mean_energy_db, peak_normalize, resample, stft
from .metrics import (EvalItem, aggregate_report, align_for_eval, chunked_median_sdr, evaluate_at_native_rate,
                      si_sdr, si_sdri, si_sdrs, source_count_class)
from .mixgen import (MixConfig, MixtureSpec, StemSet, generate_dataset, list_mix_dirs,
                     load_stem_set, mix_seed, render_mixture, sample_spec)
from .oracle import irm_masks, irm_separate
from .pit import LossConfig, PitResult, log_mse_single, pit_loss

__all__ = [
    "AudioClip", "SourceCatalog", "SourceRecord", "SourceType", "load_manifest", "read_wav",
    "write_wav", "StftConfig", "istft", "mean_energy_db", "peak_normalize", "resample", "stft",
    "EvalItem", "aggregate_report", "align_for_eval", "chunked_median_sdr", "evaluate_at_native_rate",
    "si_sdr", "si_sdri", "si_sdrs", "source_count_class", "MixConfig", "MixtureSpec", "StemSet",
    "generate_dataset", "list_mix_dirs", "load_stem_set", "mix_seed", "render_mixture",
    "sample_spec", "irm_masks", "irm_separate",
    "LossConfig", "PitResult", "log_mse_single", "pit_loss",
]
