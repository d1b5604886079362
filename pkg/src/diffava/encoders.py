"""Frozen stand-ins for the pretrained text, audio and video encoders.

Each encoder is a seeded two-layer tanh random projection followed by unit
normalization. Weights are rounded to float32 at construction (so a float32
snapshot is lossless) and the arrays are made read-only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import snapshot
from .errors import InvalidArgumentError, ShapeError
from .numerics import Rng, l2_normalize

MODALITIES = ("text", "audio", "video")

# log-mel front end: log(mel + LOG_EPS) - log(REF_LEVEL)
LOG_EPS = 1e-2
REF_LEVEL = 0.1


@dataclass(frozen=True, eq=False)
class EncoderWeights:
    modality: str
    params: dict
    dim: int
    input_dim: int
    seed: int

    def save(self, stem, meta=None):
        info = {"modality": self.modality, "dim": self.dim, "input_dim": self.input_dim,
                "seed": self.seed, **(meta or {})}
        return snapshot.save_params(stem, self.params, info, dtype="f4")

    @classmethod
    def load(cls, stem):
        params, meta = snapshot.load_params(stem)
        for a in params.values():
            a.setflags(write=False)
        return cls(meta["modality"], params, meta["dim"], meta["input_dim"], meta["seed"])


def _frozen(a):
    a = np.asarray(a, dtype=np.float32).astype(np.float64)
    a.setflags(write=False)
    return a


def make_encoder(modality: str, input_dim: int, dim: int = 64, hidden: int = 128, seed: int = 0,
                 input_gain: float = 1.0) -> EncoderWeights:
    """Build frozen weights. For text, ``input_dim`` is the vocabulary size."""
    if modality not in MODALITIES:
        raise InvalidArgumentError(f"unknown modality {modality!r}")
    rng = Rng(seed).spawn(modality)
    p = {}
    if modality == "text":
        p["table"] = rng.normal((input_dim, dim))
        fan_in = dim
    else:
        fan_in = input_dim
    p["w1"] = rng.normal((fan_in, hidden)) * (input_gain / np.sqrt(fan_in))
    p["b1"] = 0.5 * rng.normal(hidden)
    p["w2"] = rng.normal((hidden, dim)) / np.sqrt(hidden)
    p["b2"] = 0.2 * rng.normal(dim)
    return EncoderWeights(modality, {k: _frozen(v) for k, v in p.items()}, dim, input_dim, seed)


def _check(w: EncoderWeights, modality: str):
    if w.modality != modality:
        raise InvalidArgumentError(f"{modality} encoder called with {w.modality} weights")


def _project(w: EncoderWeights, x):
    h = np.tanh(x @ w.params["w1"] + w.params["b1"])
    return l2_normalize(h @ w.params["w2"] + w.params["b2"])


def encode_text(w: EncoderWeights, tokens):
    """Per-token embeddings ``(L, D)`` and their renormalized mean ``(D,)``."""
    _check(w, "text")
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ShapeError("tokens must be a non-empty 1-D sequence")
    if tokens.min() < 0 or tokens.max() >= w.input_dim:
        raise InvalidArgumentError(f"token id outside vocabulary of size {w.input_dim}")
    seq = _project(w, w.params["table"][tokens])
    return seq, l2_normalize(seq.mean(axis=0))


def pooled_text_batch(w: EncoderWeights, token_lists) -> np.ndarray:
    return np.stack([encode_text(w, t)[1] for t in token_lists])


def audio_features(mel):
    return np.log(np.asarray(mel, dtype=np.float64) + LOG_EPS) - np.log(REF_LEVEL)


def encode_audio(w: EncoderWeights, mel) -> np.ndarray:
    """One unit embedding per one-second mel row; accepts ``(..., T, F)``."""
    _check(w, "audio")
    mel = np.asarray(mel, dtype=np.float64)
    if mel.shape[-1] != w.input_dim:
        raise ShapeError(f"mel has {mel.shape[-1]} bins, encoder expects {w.input_dim}")
    return _project(w, audio_features(mel))


def encode_video(w: EncoderWeights, frame_features) -> np.ndarray:
    """One unit embedding per frame; accepts ``(..., T, D_v)``."""
    _check(w, "video")
    x = np.asarray(frame_features, dtype=np.float64)
    if x.shape[-1] != w.input_dim:
        raise ShapeError(f"frame features have dim {x.shape[-1]}, encoder expects {w.input_dim}")
    return _project(w, x)


@dataclass(frozen=True, eq=False)
class EncoderSet:
    text: EncoderWeights
    audio: EncoderWeights
    video: EncoderWeights

    @classmethod
    def build(cls, vocab_size: int, n_bins: int, frame_dim: int, dim: int = 64, hidden: int = 128,
              seed: int = 0):
        return cls(
            make_encoder("text", vocab_size, dim, hidden, seed),
            make_encoder("audio", n_bins, dim, hidden, seed, input_gain=1.0),
            make_encoder("video", frame_dim, dim, hidden, seed, input_gain=1.0),
        )

    def save(self, directory, meta=None):
        paths = []
        for name in MODALITIES:
            paths.extend(getattr(self, name).save(f"{directory}/encoder_{name}", meta))
        return paths

    @classmethod
    def load(cls, directory):
        return cls(*(EncoderWeights.load(f"{directory}/encoder_{m}") for m in MODALITIES))
