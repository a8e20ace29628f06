import numpy as np
import pytest

from gass.audio_io import load_manifest
from gass.fixtures import make_fixture_corpus
from gass.mixgen import MixConfig, generate_dataset


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    make_fixture_corpus(d, seed=0)
    return d


@pytest.fixture(scope="session")
def manifest(corpus_dir):
    return corpus_dir / "manifest.jsonl"


@pytest.fixture(scope="session")
def catalog(manifest):
    return load_manifest(manifest)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, catalog):
    """12 short mixes at 16 kHz for integration tests."""
    out = tmp_path_factory.mktemp("small_ds")
    cfg = MixConfig(sample_rate_hz=16000, duration_s=2.0)
    generate_dataset(catalog, cfg, n=12, seed=11, out_dir=out)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
