import numpy as np
import pytest
import torch

from streamdiff.denoiser import DenoiserModel, ModelConfig, NetworkDenoiser
from streamdiff.diffusion import make_schedule
from streamdiff.synthgen import SynthConfig, generate_dataset

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_cfg():
    return SynthConfig(n_frames=60)


@pytest.fixture(scope="session")
def short_sequences(synth_cfg):
    return generate_dataset(synth_cfg, 8)


@pytest.fixture(scope="session")
def sched():
    return make_schedule(100, "cosine")


@pytest.fixture(scope="session")
def tiny_model():
    return DenoiserModel(ModelConfig(dim=21, h=2, f=3, width=16, n_blocks=1, heads=2), seed=3)


@pytest.fixture(scope="session")
def tiny_denoiser(tiny_model):
    return NetworkDenoiser(tiny_model)
