import time

import numpy as np
import pytest
import torch

from mra.config import RunConfig
from mra.data import make_synthetic
from mra.mae import MaskedAutoencoder, preset
from mra.training import run_pretraining

torch.set_num_threads(1)

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_mae():
    torch.manual_seed(0)
    return MaskedAutoencoder(preset("mae-tiny-test"))


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """A briefly pretrained tiny autoencoder (checkpoint path)."""
    out = tmp_path_factory.mktemp("tiny_pretrain")
    cfg = RunConfig(task="pretrain", dataset="synthetic:blobs10", n_train=256, n_eval=32,
                    model_preset="mae-tiny-test", max_steps=30, batch_size=32, out_dir=str(out))
    return run_pretraining(cfg).checkpoint


@pytest.fixture(scope="session")
def desk_pretrain(tmp_path_factory):
    """The desk-scale preset after 200 steps on 5,000 synthetic gradient images.

    Returns (result, data, seconds).
    """
    out = tmp_path_factory.mktemp("desk_pretrain")
    t0 = time.perf_counter()
    data = make_synthetic("gradients", n_train=5000, n_eval=500, seed=0)
    cfg = RunConfig(task="pretrain", dataset="synthetic:gradients", model_preset="mae-mini-desk",
                    max_steps=200, batch_size=64, out_dir=str(out))
    result = run_pretraining(cfg, data=data)
    return result, data, time.perf_counter() - t0
