"""Generation metrics: Frechet distance, Inception Score, paired KL, onset error.

FD is computed on clip-level (row-mean) audio embeddings and FAD on the
per-second embeddings, both from the frozen stub audio encoder. IS and KL use
posteriors from a small softmax classifier trained on real clips.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InvalidArgumentError, ShapeError
from .numerics import Rng, log_softmax, softmax, spd_sqrt, symmetrize


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def fit_gaussian(embeddings) -> GaussianStats:
    """Sample mean and unbiased covariance plus ``1e-6 * trace / D`` ridge."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidArgumentError("need an (M, D) array with M >= 2")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = symmetrize(xc.T @ xc / (x.shape[0] - 1))
    lam = 1e-6 * np.trace(cov) / x.shape[1]
    return GaussianStats(mu, cov + lam * np.eye(x.shape[1]), x.shape[0])


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    """``|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)``."""
    if g1.mean.shape != g2.mean.shape:
        raise ShapeError("Gaussians have different dimensions")
    r1 = spd_sqrt(g1.cov)
    cross = spd_sqrt(symmetrize(r1 @ g2.cov @ r1))
    d = g1.mean - g2.mean
    val = float(d @ d + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def _check_probs(p, name):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"{name} must be (M, K)")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise InvalidArgumentError(f"{name} rows must be probability vectors")
    return p


def _xlogy_ratio(p, q):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log(p / q), 0.0)
    return t


def inception_score(probs) -> float:
    """``exp(mean_m KL(p_m || p_bar))``; lies in ``[1, K]``."""
    p = _check_probs(probs, "probs")
    marginal = p.mean(axis=0, keepdims=True)
    kl = _xlogy_ratio(p, marginal).sum(axis=1)
    return float(np.exp(kl.mean()))


def paired_kl(gen_probs, ref_probs, floor: float = 1e-12) -> float:
    """Mean over pairs of ``KL(ref_m || gen_m)`` with entries floored at ``floor``."""
    gen = _check_probs(gen_probs, "gen_probs")
    ref = _check_probs(ref_probs, "ref_probs")
    if gen.shape != ref.shape:
        raise InvalidArgumentError(f"paired inputs differ in shape: {gen.shape} vs {ref.shape}")
    g = np.maximum(gen, floor)
    r = np.maximum(ref, floor)
    return float(max((r * np.log(r / g)).sum(axis=1).mean(), 0.0))


def energy_distance(x, y) -> float:
    """Two-sample energy distance ``2E|X-Y| - E|X-X'| - E|Y-Y'|`` (V-statistic)."""
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)

    def mean_dist(a, b):
        d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None] - 2 * a @ b.T
        return np.sqrt(np.maximum(d2, 0.0)).mean()

    return float(2 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y))


def energy_null_threshold(x, y, rng: Rng, n_perm: int = 200, quantile: float = 0.99) -> float:
    """Permutation-null quantile of the energy distance between pooled samples."""
    pooled = np.concatenate([np.asarray(x).reshape(len(x), -1), np.asarray(y).reshape(len(y), -1)])
    stats = []
    for _ in range(n_perm):
        perm = rng.permutation(len(pooled))
        stats.append(energy_distance(pooled[perm[:len(x)]], pooled[perm[len(x):]]))
    return float(np.quantile(stats, quantile))


# --- onset alignment ------------------------------------------------------------

def energy_onset(mel, noise_floor: float) -> np.ndarray:
    """First row whose mean energy exceeds ``3 * noise_floor``; ``T`` if none does."""
    mel = np.asarray(mel, dtype=np.float64)
    active = mel.mean(axis=-1) > 3.0 * noise_floor
    T = mel.shape[-2]
    return np.where(active.any(axis=-1), active.argmax(axis=-1), T).astype(np.float64)


def onset_error(mels, scripted_onsets, noise_floor: float) -> np.ndarray:
    return np.abs(energy_onset(mels, noise_floor) - np.asarray(scripted_onsets, dtype=np.float64))


# --- posterior classifier -------------------------------------------------------

def classifier_features(audio_emb) -> np.ndarray:
    """Mean- and max-pooled per-second audio embeddings, ``(M, 2D)``."""
    a = np.asarray(audio_emb, dtype=np.float64)
    return np.concatenate([a.mean(axis=-2), a.max(axis=-2)], axis=-1)


@dataclass
class Classifier:
    w: np.ndarray
    b: np.ndarray

    @property
    def params(self):
        return {"w": self.w, "b": self.b}

    def probs(self, features) -> np.ndarray:
        return softmax(np.asarray(features) @ self.w + self.b, axis=-1)

    def accuracy(self, features, labels) -> float:
        return float((self.probs(features).argmax(axis=1) == np.asarray(labels)).mean())


def train_classifier(features, labels, n_classes: int, rng: Rng, epochs: int = 60, lr: float = 1e-2,
                     batch: int = 64, l2: float = 1e-4) -> Classifier:
    """Multinomial logistic regression fitted with Adam on cross-entropy."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) == 0:
        raise InvalidArgumentError("cannot train a classifier on an empty dataset")
    params = {"w": np.zeros((x.shape[1], n_classes)), "b": np.zeros(n_classes)}
    opt = nn.Adam(params, lr=lr)
    onehot = np.eye(n_classes)[y]
    for _ in range(epochs):
        perm = rng.permutation(len(x))
        for i in range(0, len(x), batch):
            idx = perm[i:i + batch]
            logp = log_softmax(x[idx] @ params["w"] + params["b"])
            dlogits = (np.exp(logp) - onehot[idx]) / len(idx)
            opt.step({"w": x[idx].T @ dlogits + l2 * params["w"], "b": dlogits.sum(axis=0)})
    return Classifier(params["w"], params["b"])
