import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffava import synthdata as sd
from diffava.errors import DataFormatError
from diffava.numerics import Rng

CFG = sd.DataConfig()


def test_single_event_script():
    script = sd.generate_script(Rng(0), 10, 1)
    assert len(script) == 1
    assert script[0].onset + script[0].duration <= 10


def test_script_deterministic():
    assert sd.generate_script(Rng(4), 10, 3) == sd.generate_script(Rng(4), 10, 3)


def test_script_invariants_over_1000_seeds():
    for seed in range(1000):
        script = sd.generate_script(Rng(seed), 10, 3, n_classes=8)
        assert 1 <= len(script) <= 3
        sd.validate_script(script, 10, 8)
        for a, b in zip(script, script[1:]):
            assert a.onset + a.duration <= b.onset


@given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 2**40))
def test_script_fits_any_clip(clip_len, max_events, seed):
    script = sd.generate_script(Rng(seed), clip_len, max_events)
    sd.validate_script(script, clip_len, 8)
    assert all(ev.duration >= 1 for ev in script)


def test_event_rows_dominate_noise_floor():
    s = sd.render_triplet([sd.Event(3.0, 2.0, 5)], Rng(1), CFG)
    energy = s.mel.astype(np.float64).mean(axis=1)
    quiet = np.r_[energy[:3], energy[5:]]
    assert energy[3:5].mean() > 5 * quiet.mean()
    np.testing.assert_allclose(quiet, CFG.noise_floor, rtol=0.1)
    assert np.all(s.mel >= 0)


def test_tokens_encode_ordered_classes():
    script = [sd.Event(0.0, 1.0, 3), sd.Event(4.0, 2.0, 0)]
    s = sd.render_triplet(script, Rng(2), CFG)
    assert list(s.token_ids) == [sd.BOS, 5, 2, sd.EOS]
    assert len(s.token_ids) == len(script) + 2


@pytest.fixture(scope="module")
def samples():
    return sd.generate_dataset(CFG, 100, seed=17)


def test_activity_recoverable_from_both_modalities(samples):
    for s in samples:
        truth = sd.script_activity(s.script, CFG.T)
        np.testing.assert_array_equal(sd.mel_activity(s.mel, CFG.noise_floor), truth)
        np.testing.assert_array_equal(sd.video_activity(s.frame_features, CFG), truth)


def test_generation_is_pure(samples):
    again = sd.generate_dataset(CFG, 100, seed=17)
    assert again == samples
    script = samples[0].script
    assert sd.render_triplet(script, Rng(8), CFG) == sd.render_triplet(script, Rng(8), CFG)


def test_shapes(samples):
    s = samples[0]
    assert s.mel.shape == (CFG.T, CFG.F) and s.mel.dtype == np.float32
    assert s.frame_features.shape == (CFG.T, CFG.D_v)


def test_dominant_class():
    assert sd.dominant_class([sd.Event(0, 1, 4), sd.Event(2, 3, 6)]) == 6
    assert sd.dominant_class([sd.Event(0, 2, 4), sd.Event(5, 2, 6)]) == 4


class TestFileFormat:
    def test_round_trip(self, samples, tmp_path):
        path = tmp_path / "d.dava"
        sd.write_dataset(path, samples[:16], CFG)
        back = sd.read_dataset(path)
        assert len(back) == 16
        for a, b in zip(samples[:16], back):
            assert a == b
            assert a.mel.tobytes() == b.mel.tobytes()

    def test_header_layout(self, samples, tmp_path):
        path = tmp_path / "d.dava"
        sd.write_dataset(path, samples[:2], CFG)
        raw = path.read_bytes()
        assert raw[:8] == b"DAVADATA"
        assert struct.unpack("<6I", raw[8:32]) == (1, 2, CFG.T, CFG.F, CFG.D_v, CFG.K)
        n_ev = struct.unpack("<I", raw[32:36])[0]
        assert n_ev == len(samples[0].script)
        onset, dur, cls = struct.unpack("<ffI", raw[36:48])
        assert (onset, dur, cls) == tuple(samples[0].script[0])

    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.dava"
        sd.write_dataset(path, [], CFG)
        assert path.stat().st_size == 32
        assert sd.read_dataset(path) == []

    def test_truncated_file(self, samples, tmp_path):
        path = tmp_path / "d.dava"
        sd.write_dataset(path, samples[:3], CFG)
        raw = path.read_bytes()
        path.write_bytes(raw[:-7])
        with pytest.raises(DataFormatError) as info:
            sd.read_dataset(path)
        assert info.value.offset is not None and info.value.offset < len(raw)
        path.write_bytes(raw[:20])
        with pytest.raises(DataFormatError):
            sd.read_dataset(path)

    def test_bad_magic_and_version(self, samples, tmp_path):
        path = tmp_path / "d.dava"
        sd.write_dataset(path, samples[:1], CFG)
        raw = bytearray(path.read_bytes())
        bad = bytes(raw)
        path.write_bytes(b"NOTADAVA" + bad[8:])
        with pytest.raises(DataFormatError, match="magic"):
            sd.read_dataset(path)
        raw[8:12] = struct.pack("<I", 2)
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="version"):
            sd.read_dataset(path)

    def test_trailing_bytes_rejected(self, samples, tmp_path):
        path = tmp_path / "d.dava"
        sd.write_dataset(path, samples[:1], CFG)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(DataFormatError, match="trailing"):
            sd.read_dataset(path)
