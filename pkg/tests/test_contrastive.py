import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffava.contrastive import (ContrastiveConfig, infonce_from_similarities, retrieval_top1, similarities,
                                 temporal_infonce)
from diffava.errors import InvalidArgumentError
from diffava.gradcheck import contrastive_suite
from diffava.numerics import Rng, l2_normalize


def _unit(rng, *shape):
    return l2_normalize(rng.normal(shape))


def test_equal_similarities_give_T_log_B():
    B, T, D = 4, 10, 8
    row = l2_normalize(np.arange(1.0, D + 1))
    x = np.broadcast_to(row, (B, T, D)).copy()
    loss, _ = temporal_infonce(x, x, ContrastiveConfig(tau=0.07))
    assert abs(loss - T * math.log(B)) < 1e-10
    assert abs(loss - 13.862943611198906) < 1e-10


def test_two_sample_closed_form():
    e = np.eye(2)
    audio = e[:, None, :]
    loss, _ = temporal_infonce(audio, audio.copy(), ContrastiveConfig(tau=1.0))
    assert abs(loss - math.log(1 + math.exp(-1))) < 1e-10
    assert abs(loss - 0.31326168751822283) < 1e-10


def test_errors(rng):
    x = _unit(rng, 1, 3, 4)
    with pytest.raises(InvalidArgumentError):
        temporal_infonce(x, x)
    y = _unit(rng, 2, 3, 4)
    with pytest.raises(InvalidArgumentError):
        temporal_infonce(y, 2 * y)
    with pytest.raises(InvalidArgumentError):
        ContrastiveConfig(tau=0)
    with pytest.raises(InvalidArgumentError):
        ContrastiveConfig(contrast_target="pixels")


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    assert contrastive_suite(seed) < 1e-4


def test_symmetric_variant_gradient(rng):
    from diffava.numerics import finite_diff_grad

    S = rng.uniform(-1, 1, (3, 5, 5))
    loss, dS = infonce_from_similarities(S, 0.2, symmetric=True)
    num = finite_diff_grad(lambda s: infonce_from_similarities(s, 0.2, symmetric=True)[0], S)
    np.testing.assert_allclose(dS, num, atol=1e-8)
    one_way = infonce_from_similarities(S, 0.2)[0]
    other_way = infonce_from_similarities(S.transpose(0, 2, 1), 0.2)[0]
    assert abs(loss - 0.5 * (one_way + other_way)) < 1e-12


@given(st.integers(0, 2**32), st.integers(2, 9), st.integers(1, 6), st.floats(0.02, 2.0))
def test_bounds(seed, B, T, tau):
    r = Rng(seed)
    loss, _ = temporal_infonce(_unit(r, B, T, 5), _unit(r, B, T, 5), ContrastiveConfig(tau=tau))
    assert 0 <= loss <= T * (2 / tau + math.log(B)) + 1e-9


@given(st.integers(0, 2**32), st.floats(-5, 5))
def test_shift_invariance_per_timestep(seed, c):
    r = Rng(seed)
    a, t = _unit(r, 6, 4, 8), _unit(r, 6, 4, 8)
    cfg = ContrastiveConfig(tau=0.1)
    base, _ = temporal_infonce(a, t, cfg)

    def hook(S):
        S = S.copy()
        S[2] += c
        return S

    shifted, _ = temporal_infonce(a, t, cfg, sim_hook=hook)
    assert abs(base - shifted) < 1e-9


def test_perfect_alignment_limit(rng):
    B, T, D = 5, 3, 8
    x = np.zeros((B, T, D))
    for b in range(B):
        x[b, :, b] = 1.0
    taus = [1.0, 0.5, 0.2, 0.1, 0.05, 0.02]
    losses = [temporal_infonce(x, x, ContrastiveConfig(tau=t))[0] for t in taus]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-18


def test_batch_permutation_invariance(rng):
    a, t = _unit(rng, 8, 5, 6), _unit(rng, 8, 5, 6)
    perm = rng.permutation(8)
    cfg = ContrastiveConfig()
    assert abs(temporal_infonce(a, t, cfg)[0] - temporal_infonce(a[perm], t[perm], cfg)[0]) < 1e-12


def test_negatives_only_at_same_timestep(rng):
    """Changing text at timestep 1 cannot affect the timestep-0 term."""
    a, t = _unit(rng, 4, 2, 6), _unit(rng, 4, 2, 6)
    S = similarities(a, t)
    t2 = t.copy()
    t2[:, 1] = _unit(rng, 4, 6)
    S2 = similarities(a, t2)
    np.testing.assert_array_equal(S[0], S2[0])


def test_retrieval_top1():
    x = np.zeros((4, 2, 4))
    for b in range(4):
        x[b, :, b] = 1.0
    assert retrieval_top1(x, x) == 1.0
    tied = np.broadcast_to(x[:1], x.shape)
    assert retrieval_top1(x, tied) == 0.0
