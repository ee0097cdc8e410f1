import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lassr.config import run_config_from_dict
from lassr.synth import generate_classify_corpus, generate_sr_corpus


def micro_run_doc(**train_overrides) -> dict:
    """Smallest trainable configuration: 1 RRDB, 8 channels, 64px crops."""
    return {
        "seed": 3,
        "data": {"crop_size": 64},
        "model": {
            "generator": {"num_rrdb": 1, "base_channels": 8, "growth_channels": 4},
            "discriminator": {"input_size": 64, "block_channels": [8, 8, 16, 16, 32, 32]},
        },
        "train": {"epochs": 3, "batch_size": 8, "checkpoint_every": 0, **train_overrides},
    }


@pytest.fixture()
def micro_run():
    return run_config_from_dict(micro_run_doc())


@pytest.fixture(scope="session")
def small_sr_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("sr_corpus_small")
    return generate_sr_corpus(out, n_images=24, seed=7, image_size=96)


@pytest.fixture(scope="session")
def small_classify_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("classify_corpus_small")
    return generate_classify_corpus(out, n_images=120, seed=7, image_size=64)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
