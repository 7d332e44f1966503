import time

import numpy as np
import pytest

from scenehgn import rvnn as rv
from scenehgn import synth


@pytest.fixture(scope="session")
def synth_corpus():
    """Five deterministic planted scenes, one per template plus one extra."""
    return [s for s, _ in synth.corpus(5)]


@pytest.fixture(scope="session")
def overfit_model(synth_corpus):
    """One full training run shared by the VAE tests and the acceptance suite.

    Returns (params, cfg, curve, wall_seconds).
    """
    cfg = rv.ModelConfig()
    tcfg = rv.TrainConfig(epochs=2000, seed=0)
    start = time.time()
    params, curve = rv.train(synth_corpus, cfg, tcfg)
    seconds = time.time() - start
    return params, cfg, curve, seconds


@pytest.fixture()
def rng():
    return np.random.default_rng(20240809)
