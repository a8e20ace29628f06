"""
A toy mask separator trained with PIT
=====================================

A per-frame linear map from log-magnitude features to four sigmoid
masks, trained by gradient descent on the thresholded PIT loss. The
gradients are derived by hand through the inverse STFT; a
finite-difference check confirms them before training.
"""

import tempfile
from pathlib import Path

from gass import MixConfig, generate_dataset
from gass.fixtures import make_fixture_corpus
from gass.toy import ToyModel, TrainConfig, gradient_check, train

# %%
# Analytic vs central-difference gradients on a few random models.
errs = gradient_check(seed=0, instances=3, params_per_instance=20)
print("max relative gradient error per instance:", ["%.1e" % e for e in errs])

# %%
# A small 8 kHz training set and a short run. The smoothed loss falls as
# the masks learn to route energy to the right outputs.
work = Path(tempfile.mkdtemp(prefix="gass_toy_"))
manifest = make_fixture_corpus(work / "corpus", seed=0)
generate_dataset(manifest, MixConfig(duration_s=1.0, sample_rate_hz=8000), n=8, seed=3,
                 out_dir=work / "mixes")
model = ToyModel.init(8000, seed=0)
result = train(model, work / "mixes", TrainConfig(steps=200, learning_rate=3e-3, log_every=50))
for step in range(49, 200, 50):
    print("step %3d  smoothed loss %.2f dB" % (step + 1, result.smoothed[step]))
