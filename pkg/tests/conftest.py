import numpy as np
import pytest
import torch

from dmfnet.config import DmfConfig
from dmfnet.data import make_synthetic_corpus
from dmfnet.model import DmfNet


@pytest.fixture(scope="session")
def tiny_cfg():
    return DmfConfig.tiny()


@pytest.fixture(scope="session")
def tiny_model(tiny_cfg):
    torch.manual_seed(0)
    return DmfNet(tiny_cfg)


@pytest.fixture(scope="session")
def corpus_48k(tmp_path_factory):
    """Ten 2 s clips at 48 kHz with moderate SNR, no reverberation."""
    root = tmp_path_factory.mktemp("corpus48")
    return make_synthetic_corpus(root, num_items=10, rate=48000, duration_s=2.0,
                                 seed=7, snr_range=(3.0, 8.0))


@pytest.fixture(scope="session")
def corpus_rir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus_rir")
    return make_synthetic_corpus(root, num_items=4, rate=48000, duration_s=1.5,
                                 seed=11, snr_range=(0.0, 10.0), with_rir=True)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
