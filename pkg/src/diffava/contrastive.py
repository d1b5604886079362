"""Per-timestep InfoNCE between audio rows and visual-aligned text rows.

For each second ``i`` the batch forms a ``B x B`` similarity matrix
``S[i, b, m] = a_{b,i} . t_{m,i}``; row ``b`` is a ``B``-way classification whose
correct answer is ``m = b``. Negatives are the other clips at the same second.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .numerics import log_softmax


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.07
    contrast_target: str = "aligned_text"  # or "raw_visual"
    symmetric: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidArgumentError("tau must be positive")
        if self.contrast_target not in ("aligned_text", "raw_visual"):
            raise InvalidArgumentError(f"unknown contrast_target {self.contrast_target!r}")


def similarities(audio, text) -> np.ndarray:
    """``(T, B, B)`` matrix of per-second dot products."""
    return np.einsum("bid,mid->ibm", audio, text)


def infonce_from_similarities(S, tau: float, symmetric: bool = False):
    """Loss and dL/dS for a ``(T, B, B)`` similarity tensor."""
    T, B, _ = S.shape
    logits = S / tau
    eye = np.eye(B)
    logp = log_softmax(logits, axis=-1)
    loss = -np.trace(logp, axis1=1, axis2=2).sum() / B
    dlogits = (np.exp(logp) - eye) / B
    if symmetric:
        logq = log_softmax(logits, axis=-2)
        loss_t = -np.trace(logq, axis1=1, axis2=2).sum() / B
        dlogits_t = (np.exp(logq) - eye) / B
        loss = 0.5 * (loss + loss_t)
        dlogits = 0.5 * (dlogits + dlogits_t)
    return float(loss), dlogits / tau


def _check_unit(x, name, tol=1e-6):
    norms = np.sqrt((x * x).sum(axis=-1))
    if np.abs(norms - 1.0).max() > tol:
        raise InvalidArgumentError(f"{name} rows must be unit norm (max deviation {np.abs(norms - 1).max():.3g})")


def temporal_infonce(audio, aligned_text, cfg: ContrastiveConfig = ContrastiveConfig(), sim_hook=None):
    """Returns ``(loss, d loss / d aligned_text)``; the audio side is treated as frozen.

    ``sim_hook``, if given, maps the ``(T, B, B)`` similarity tensor before the
    softmax (used to probe shift invariance).
    """
    audio = np.asarray(audio, dtype=np.float64)
    text = np.asarray(aligned_text, dtype=np.float64)
    if audio.shape != text.shape or audio.ndim != 3:
        raise ShapeError(f"expected matching (B, T, D) tensors, got {audio.shape} and {text.shape}")
    if audio.shape[0] < 2:
        raise InvalidArgumentError("temporal InfoNCE needs a batch of at least 2")
    _check_unit(audio, "audio")
    _check_unit(text, "aligned_text")
    S = similarities(audio, text)
    if sim_hook is not None:
        S = sim_hook(S)
    loss, dS = infonce_from_similarities(S, cfg.tau, cfg.symmetric)
    dtext = np.einsum("ibm,bid->mid", dS, audio)
    return loss, dtext


def retrieval_top1(audio, aligned_text) -> float:
    """Fraction of (b, i) where audio row ``a_{b,i}`` scores its own text row strictly highest."""
    S = similarities(np.asarray(audio), np.asarray(aligned_text))
    B = S.shape[1]
    pos = S[:, np.arange(B), np.arange(B)]
    others = S.copy()
    others[:, np.arange(B), np.arange(B)] = -np.inf
    return float((pos > others.max(axis=-1)).mean())
