import numpy as np
import pytest
from hypothesis import settings

from diffava.numerics import Rng

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return Rng(12345)


def random_spd(rng, dim, ridge=0.1):
    a = rng.normal((dim, dim))
    return a @ a.T / dim + ridge * np.eye(dim)


# A run config small enough for end-to-end CLI tests in a few seconds.
TINY_RUN = {
    "data": {"n_train": 64, "n_val": 32, "n_test": 16},
    "encoders": {"dim": 16, "hidden": 16},
    "align": {"depth": 1, "heads": 2, "fusion_hidden": 16, "batch": 16, "epochs": 1},
    "codec": {"epochs": 1, "decoder_hidden": 8},
    "diffusion": {"N": 20, "beta_max": 0.5, "hidden": 32, "layers": 1, "time_dim": 8, "epochs": 1, "batch": 32},
    "eval": {"classifier_epochs": 2},
}
