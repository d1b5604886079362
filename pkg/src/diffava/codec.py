"""Patch autoencoder that maps a ``T x F`` mel to the ``C x T/r x F/r`` audio prior.

Each non-overlapping ``r x r`` patch of the log-mel is mapped to ``C`` channels
(linear, tanh, 1x1 channel mixing); the decoder mirrors it and clamps the
reconstructed mel at zero. Latents are standardized per channel with
statistics measured on the training set after fitting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, snapshot
from .encoders import audio_features
from .errors import InvalidArgumentError, ShapeError
from .numerics import Rng


@dataclass(frozen=True)
class CodecConfig:
    C: int = 8
    r: int = 2
    T: int = 10
    F: int = 64
    decoder_hidden: int = 32
    lr: float = 3e-3
    batch: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.T % self.r or self.F % self.r:
            raise ShapeError(f"compression r={self.r} must divide T={self.T} and F={self.F}")

    @property
    def latent_shape(self) -> tuple:
        return (self.C, self.T // self.r, self.F // self.r)


def _init(cfg: CodecConfig) -> dict:
    rng = Rng(cfg.seed).spawn("codec")
    rr, C, Hd = cfg.r * cfg.r, cfg.C, cfg.decoder_hidden
    p = {}
    p["enc_w"], p["enc_b"] = nn.init_linear(rng, rr, C)
    p["mix_w"], p["mix_b"] = nn.init_linear(rng, C, C)
    p["dec_w1"], p["dec_b1"] = nn.init_linear(rng, C, Hd)
    p["dec_w2"], p["dec_b2"] = nn.init_linear(rng, Hd, rr, bias=0.1)
    p["lat_mean"] = np.zeros(C)
    p["lat_std"] = np.ones(C)
    return p


class Codec:
    TRAINABLE = ("enc_w", "enc_b", "mix_w", "mix_b", "dec_w1", "dec_b1", "dec_w2", "dec_b2")

    def __init__(self, cfg: CodecConfig, params: dict | None = None):
        self.cfg = cfg
        self.params = _init(cfg) if params is None else params

    # (B, T, F) <-> (B, T/r, F/r, r*r)
    def _patchify(self, mel):
        r = self.cfg.r
        B, T, F = mel.shape
        return mel.reshape(B, T // r, r, F // r, r).transpose(0, 1, 3, 2, 4).reshape(B, T // r, F // r, r * r)

    def _unpatchify(self, x):
        r = self.cfg.r
        B, Tr, Fr, _ = x.shape
        return x.reshape(B, Tr, Fr, r, r).transpose(0, 1, 3, 2, 4).reshape(B, Tr * r, Fr * r)

    def _check_mel(self, mel):
        mel = np.asarray(mel, dtype=np.float64)
        squeeze = mel.ndim == 2
        mel = mel[None] if squeeze else mel
        if mel.shape[1:] != (self.cfg.T, self.cfg.F):
            raise ShapeError(f"mel shape {mel.shape[1:]} != {(self.cfg.T, self.cfg.F)}")
        return mel, squeeze

    def _encode_raw(self, mel):
        p = self.params
        x = self._patchify(audio_features(mel))
        h = np.tanh(nn.linear(x, p["enc_w"], p["enc_b"]))
        return nn.linear(h, p["mix_w"], p["mix_b"]), (x, h)

    def _decode_raw(self, zraw):
        p = self.params
        g = np.tanh(nn.linear(zraw, p["dec_w1"], p["dec_b1"]))
        y = nn.linear(g, p["dec_w2"], p["dec_b2"])
        return self._unpatchify(np.maximum(y, 0.0)), (g, y)

    def encode_mel(self, mel):
        """``(T, F)`` or ``(B, T, F)`` mel -> standardized latent ``(B?, C, T/r, F/r)``."""
        mel, squeeze = self._check_mel(mel)
        zraw, _ = self._encode_raw(mel)
        z = ((zraw - self.params["lat_mean"]) / self.params["lat_std"]).transpose(0, 3, 1, 2)
        return z[0] if squeeze else z

    def decode_latent(self, z):
        z = np.asarray(z, dtype=np.float64)
        squeeze = z.ndim == 3
        z = z[None] if squeeze else z
        if z.shape[1:] != self.cfg.latent_shape:
            raise ShapeError(f"latent shape {z.shape[1:]} != {self.cfg.latent_shape}")
        zraw = z.transpose(0, 2, 3, 1) * self.params["lat_std"] + self.params["lat_mean"]
        mel, _ = self._decode_raw(zraw)
        return mel[0] if squeeze else mel

    def reconstruction_loss(self, mel):
        """MSE of decode(encode(mel)) before standardization, with gradients."""
        p = self.params
        mel, _ = self._check_mel(mel)
        zraw, (x, h) = self._encode_raw(mel)
        rec, (g, y) = self._decode_raw(zraw)
        diff = rec - mel
        loss = float(np.mean(diff * diff))
        grads = {}
        dy = self._patchify(2.0 * diff / diff.size) * (y > 0)
        dg, grads["dec_w2"], grads["dec_b2"] = nn.linear_backward(dy, g, p["dec_w2"])
        dz, grads["dec_w1"], grads["dec_b1"] = nn.linear_backward(dg * (1 - g * g), zraw, p["dec_w1"])
        dh, grads["mix_w"], grads["mix_b"] = nn.linear_backward(dz, h, p["mix_w"])
        _, grads["enc_w"], grads["enc_b"] = nn.linear_backward(dh * (1 - h * h), x, p["enc_w"])
        return loss, grads

    def calibrate(self, mels, batch: int = 256):
        """Set per-channel latent mean/std from training mels."""
        zs = np.concatenate([self._encode_raw(self._check_mel(mels[i:i + batch])[0])[0].reshape(-1, self.cfg.C)
                             for i in range(0, len(mels), batch)])
        self.params["lat_mean"] = zs.mean(axis=0)
        self.params["lat_std"] = np.maximum(zs.std(axis=0), 1e-6)

    def mse(self, mels, batch: int = 256) -> float:
        tot = 0.0
        for i in range(0, len(mels), batch):
            m, _ = self._check_mel(mels[i:i + batch])
            rec, _ = self._decode_raw(self._encode_raw(m)[0])
            tot += float(((rec - m) ** 2).sum())
        return tot / np.size(mels)

    def save(self, stem, meta=None):
        return snapshot.save_params(stem, self.params, {"config": self.cfg.__dict__, **(meta or {})})

    @classmethod
    def load(cls, stem):
        params, meta = snapshot.load_params(stem)
        return cls(CodecConfig(**meta["config"]), params)


def train_codec(train_mels, cfg: CodecConfig, val_mels=None, log=None):
    """Fit the codec with Adam on reconstruction MSE.

    Returns ``(codec, curve)`` where curve rows are ``(epoch, split, value)``;
    epoch 0 is the untrained model.
    """
    train_mels = np.asarray(train_mels, dtype=np.float64)
    if len(train_mels) == 0:
        raise InvalidArgumentError("cannot train the codec on an empty dataset")
    val_mels = train_mels if val_mels is None else np.asarray(val_mels, dtype=np.float64)
    codec = Codec(cfg)
    opt = nn.Adam(codec.params, lr=cfg.lr, trainable=Codec.TRAINABLE)
    rng = Rng(cfg.seed).spawn("codec-train")
    curve = [(0, "val", codec.mse(val_mels))]
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(train_mels))
        losses = []
        for i in range(0, len(perm), cfg.batch):
            loss, grads = codec.reconstruction_loss(train_mels[perm[i:i + cfg.batch]])
            opt.step(grads)
            losses.append(loss)
        curve.append((epoch, "train", float(np.mean(losses))))
        curve.append((epoch, "val", codec.mse(val_mels)))
        if log:
            log(f"codec epoch {epoch}: train {curve[-2][2]:.5f} val {curve[-1][2]:.5f}")
    codec.calibrate(train_mels)
    return codec, curve
