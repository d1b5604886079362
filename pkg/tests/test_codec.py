import numpy as np
import pytest

from diffava import synthdata as sd
from diffava.codec import Codec, CodecConfig, train_codec
from diffava.errors import InvalidArgumentError, ShapeError
from diffava.numerics import Rng, finite_diff_grad, relative_error


def test_latent_shape():
    c = Codec(CodecConfig(C=8, r=2, T=10, F=64))
    z = c.encode_mel(np.ones((10, 64)))
    assert z.shape == (8, 5, 32)
    assert c.decode_latent(z).shape == (10, 64)


@pytest.mark.parametrize("T,F,r,C", [(10, 64, 2, 8), (8, 16, 4, 3), (6, 6, 1, 2), (12, 30, 3, 5)])
def test_round_trip_shapes(T, F, r, C):
    c = Codec(CodecConfig(C=C, r=r, T=T, F=F))
    mel = np.abs(Rng(1).normal((3, T, F)))
    z = c.encode_mel(mel)
    assert z.shape == (3, C, T // r, F // r)
    assert c.decode_latent(z).shape == mel.shape


def test_divisibility_and_shape_errors():
    with pytest.raises(ShapeError):
        CodecConfig(T=10, F=64, r=3)
    c = Codec(CodecConfig())
    with pytest.raises(ShapeError):
        c.encode_mel(np.zeros((9, 64)))
    with pytest.raises(ShapeError):
        c.decode_latent(np.zeros((8, 5, 31)))


def test_zero_inputs_finite_and_nonnegative():
    c = Codec(CodecConfig())
    z = c.encode_mel(np.zeros((10, 64)))
    assert np.all(np.isfinite(z))
    # constant input maps every patch to the same latent vector
    np.testing.assert_array_equal(z, np.broadcast_to(z[:, :1, :1], z.shape))
    mel = c.decode_latent(np.zeros((8, 5, 32)))
    assert np.all(np.isfinite(mel)) and np.all(mel >= 0)


def test_reconstruction_gradient():
    c = Codec(CodecConfig(C=3, r=2, T=4, F=6, decoder_hidden=5, seed=2))
    mel = 0.5 + np.abs(Rng(3).normal((2, 4, 6)))
    _, grads = c.reconstruction_loss(mel)
    for name in Codec.TRAINABLE:
        p = c.params[name]
        num = finite_diff_grad(lambda x: (p.__setitem__(..., x), c.reconstruction_loss(mel)[0])[1], p.copy())
        assert relative_error(grads[name], num) < 1e-4, name


def test_empty_dataset():
    with pytest.raises(InvalidArgumentError):
        train_codec(np.zeros((0, 10, 64)), CodecConfig())


@pytest.fixture(scope="module")
def trained():
    cfg = sd.DataConfig()
    train, _ = sd.stack(sd.generate_dataset(cfg, 512, seed=1))
    val, _ = sd.stack(sd.generate_dataset(cfg, 128, seed=2))
    ccfg = CodecConfig(epochs=8)
    codec, curve = train_codec(train, ccfg, val)
    return codec, curve, train, val, ccfg


def test_training_reduces_validation_error(trained):
    _, curve, *_ = trained
    val = [v for e, s, v in curve if s == "val"]
    assert val[-1] <= 0.5 * val[1]
    assert val[-1] < val[0]


def test_latent_calibration(trained):
    codec, _, train, *_ = trained
    var = codec.encode_mel(train).var(axis=(0, 2, 3))
    assert np.all((var > 0.5) & (var < 2.0))


def test_reconstruction_preserves_event_rows(trained):
    codec, _, _, val, _ = trained
    rec = codec.decode_latent(codec.encode_mel(val))
    assert np.mean((rec - val) ** 2) < 0.05
    np.testing.assert_array_equal(sd.mel_activity(rec, 0.1), sd.mel_activity(val, 0.1))


def test_training_deterministic(trained):
    codec, _, train, val, ccfg = trained
    again, _ = train_codec(train, ccfg, val)
    for k in codec.params:
        np.testing.assert_array_equal(codec.params[k], again.params[k])


def test_zero_epochs_returns_initial_params(trained):
    *_, train, val, ccfg = trained
    import dataclasses

    c0, curve = train_codec(train, dataclasses.replace(ccfg, epochs=0), val)
    init = Codec(ccfg)
    for k in Codec.TRAINABLE:
        np.testing.assert_array_equal(c0.params[k], init.params[k])
    assert len(curve) == 1


def test_snapshot_round_trip(trained, tmp_path):
    codec, *_ = trained
    codec.save(tmp_path / "codec")
    back = Codec.load(tmp_path / "codec")
    for k in codec.params:
        np.testing.assert_array_equal(back.params[k], codec.params[k])
