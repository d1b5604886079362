"""Trainable visual-text alignment module.

A pre-norm multi-head self-attention stack aggregates the per-second video
embeddings over time; a gated dual residual network then fuses the result
with the pooled text embedding, producing one unit-norm visual-aligned text
row per second.

All passes are batched over a leading batch axis: video ``(B, T, D)``,
pooled text ``(B, D)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, snapshot
from .errors import ShapeError
from .numerics import Rng


@dataclass(frozen=True)
class AlignConfig:
    dim: int = 64
    depth: int = 4
    heads: int = 8
    ff_mult: int = 4
    fusion_hidden: int = 128
    positional_encoding: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ShapeError(f"dim {self.dim} not divisible by heads {self.heads}")


def attention_param_count(dim: int, depth: int, ff_mult: int = 4) -> int:
    """Closed form: ``depth * ((4 + 2m) D^2 + (9 + m) D) + 2D``; independent of head count."""
    m = ff_mult
    return depth * ((4 + 2 * m) * dim * dim + (9 + m) * dim) + 2 * dim


def fusion_param_count(dim: int, hidden: int) -> int:
    return 5 * dim * hidden + 2 * hidden + 2 * dim + 2


def init_params(cfg: AlignConfig) -> dict:
    rng = Rng(cfg.seed).spawn("alignment")
    D, H = cfg.dim, cfg.ff_mult * cfg.dim
    out_gain = 1.0 / np.sqrt(2 * cfg.depth)
    p = {}
    for l in range(cfg.depth):
        pre = f"layer{l}."
        p[pre + "ln1_g"], p[pre + "ln1_b"] = np.ones(D), np.zeros(D)
        for name in ("q", "k", "v"):
            p[pre + "w" + name], p[pre + "b" + name] = nn.init_linear(rng, D, D)
        p[pre + "wo"], p[pre + "bo"] = nn.init_linear(rng, D, D, gain=out_gain)
        p[pre + "ln2_g"], p[pre + "ln2_b"] = np.ones(D), np.zeros(D)
        p[pre + "wf1"], p[pre + "bf1"] = nn.init_linear(rng, D, H)
        p[pre + "wf2"], p[pre + "bf2"] = nn.init_linear(rng, H, D, gain=out_gain)
    p["lnf_g"], p["lnf_b"] = np.ones(D), np.zeros(D)
    Hf = cfg.fusion_hidden
    p["fuse1_w1"], p["fuse1_b1"] = nn.init_linear(rng, 2 * D, Hf)
    p["fuse1_w2"], p["fuse1_b2"] = nn.init_linear(rng, Hf, D)
    p["fuse2_w1"], p["fuse2_b1"] = nn.init_linear(rng, D, Hf)
    p["fuse2_w2"], p["fuse2_b2"] = nn.init_linear(rng, Hf, D)
    p["gate1"] = np.zeros(1)
    p["gate2"] = np.zeros(1)
    return p


def positional_encoding(T: int, dim: int) -> np.ndarray:
    return nn.sinusoidal_embedding(np.arange(T), dim) / np.sqrt(dim)


# --- temporal attention -------------------------------------------------------

def _split(x, heads):
    B, T, D = x.shape
    return x.reshape(B, T, heads, D // heads).transpose(0, 2, 1, 3)


def _merge(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def attend_temporal(p: dict, video, cfg: AlignConfig, positional: bool | None = None):
    """Encode ``(B, T, D)`` (or ``(T, D)``) video embeddings; returns ``(out, cache)``."""
    video = np.asarray(video, dtype=np.float64)
    squeeze = video.ndim == 2
    x = video[None] if squeeze else video
    if x.shape[-1] != cfg.dim:
        raise ShapeError(f"video embeddings have dim {x.shape[-1]}, expected {cfg.dim}")
    positional = cfg.positional_encoding if positional is None else positional
    if positional:
        x = x + positional_encoding(x.shape[1], cfg.dim)
    dh = cfg.dim // cfg.heads
    layers = []
    for l in range(cfg.depth):
        pre = f"layer{l}."
        h, ln1 = nn.layer_norm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
        q = _split(nn.linear(h, p[pre + "wq"], p[pre + "bq"]), cfg.heads)
        k = _split(nn.linear(h, p[pre + "wk"], p[pre + "bk"]), cfg.heads)
        v = _split(nn.linear(h, p[pre + "wv"], p[pre + "bv"]), cfg.heads)
        s = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
        s = s - s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        o = _merge(a @ v)
        x = x + nn.linear(o, p[pre + "wo"], p[pre + "bo"])
        h2, ln2 = nn.layer_norm(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
        u = nn.linear(h2, p[pre + "wf1"], p[pre + "bf1"])
        g = nn.gelu(u)
        x = x + nn.linear(g, p[pre + "wf2"], p[pre + "bf2"])
        layers.append((h, ln1, q, k, v, a, o, h2, ln2, u, g))
    out, lnf = nn.layer_norm(x, p["lnf_g"], p["lnf_b"])
    cache = (layers, lnf, squeeze)
    return (out[0] if squeeze else out), cache


def attend_temporal_backward(p: dict, dout, cache, cfg: AlignConfig, grads: dict):
    """Accumulate parameter gradients into ``grads``; returns d(video)."""
    layers, lnf, squeeze = cache
    dout = dout[None] if squeeze else dout
    dx, dg, db = nn.layer_norm_backward(dout, lnf, p["lnf_g"])
    grads["lnf_g"] += dg
    grads["lnf_b"] += db
    dh_scale = 1.0 / np.sqrt(cfg.dim // cfg.heads)
    for l in reversed(range(cfg.depth)):
        pre = f"layer{l}."
        h, ln1, q, k, v, a, o, h2, ln2, u, g = layers[l]
        dg_, dw, dbias = nn.linear_backward(dx, g, p[pre + "wf2"])
        grads[pre + "wf2"] += dw
        grads[pre + "bf2"] += dbias
        du = nn.gelu_backward(dg_, u)
        dh2, dw, dbias = nn.linear_backward(du, h2, p[pre + "wf1"])
        grads[pre + "wf1"] += dw
        grads[pre + "bf1"] += dbias
        dxi, dgam, dbet = nn.layer_norm_backward(dh2, ln2, p[pre + "ln2_g"])
        grads[pre + "ln2_g"] += dgam
        grads[pre + "ln2_b"] += dbet
        dx = dx + dxi
        do, dw, dbias = nn.linear_backward(dx, o, p[pre + "wo"])
        grads[pre + "wo"] += dw
        grads[pre + "bo"] += dbias
        do = _split(do, cfg.heads)
        da = do @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * dh_scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dh = 0.0
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dpart, dw, dbias = nn.linear_backward(_merge(dproj), h, p[pre + "w" + name])
            grads[pre + "w" + name] += dw
            grads[pre + "b" + name] += dbias
            dh = dh + dpart
        dxi, dgam, dbet = nn.layer_norm_backward(dh, ln1, p[pre + "ln1_g"])
        grads[pre + "ln1_g"] += dgam
        grads[pre + "ln1_b"] += dbet
        dx = dx + dxi
    return dx[0] if squeeze else dx


# --- dual residual fusion -----------------------------------------------------

def fuse(p: dict, text_pooled, v_agg):
    """Visual-aligned text rows ``(B, T, D)`` from pooled text ``(B, D)`` and ``(B, T, D)``.

    row_i = normalize(t + gate1 * MLP1([t, v_i]) + gate2 * MLP2(v_i))
    """
    text_pooled = np.asarray(text_pooled, dtype=np.float64)
    v_agg = np.asarray(v_agg, dtype=np.float64)
    squeeze = v_agg.ndim == 2
    if squeeze:
        text_pooled, v_agg = text_pooled[None], v_agg[None]
    B, T, D = v_agg.shape
    if text_pooled.shape != (B, D):
        raise ShapeError(f"pooled text shape {text_pooled.shape} does not match {(B, D)}")
    tb = np.broadcast_to(text_pooled[:, None, :], (B, T, D))
    c = np.concatenate([tb, v_agg], axis=-1)
    h1 = np.tanh(nn.linear(c, p["fuse1_w1"], p["fuse1_b1"]))
    m1 = nn.linear(h1, p["fuse1_w2"], p["fuse1_b2"])
    h2 = np.tanh(nn.linear(v_agg, p["fuse2_w1"], p["fuse2_b1"]))
    m2 = nn.linear(h2, p["fuse2_w2"], p["fuse2_b2"])
    r = tb + p["gate1"][0] * m1 + p["gate2"][0] * m2
    y, norms = nn.normalize_rows(r)
    cache = (c, h1, m1, v_agg, h2, m2, y, norms, squeeze)
    return (y[0] if squeeze else y), cache


def fuse_backward(p: dict, dy, cache, grads: dict):
    """Accumulate fusion gradients; returns d(v_agg)."""
    c, h1, m1, v_agg, h2, m2, y, norms, squeeze = cache
    dy = dy[None] if squeeze else dy
    dr = nn.normalize_rows_backward(dy, y, norms)
    grads["gate1"] += np.array([(dr * m1).sum()])
    grads["gate2"] += np.array([(dr * m2).sum()])
    D = v_agg.shape[-1]
    dh1, dw, db = nn.linear_backward(p["gate1"][0] * dr, h1, p["fuse1_w2"])
    grads["fuse1_w2"] += dw
    grads["fuse1_b2"] += db
    dpre1 = dh1 * (1.0 - h1 * h1)
    dc, dw, db = nn.linear_backward(dpre1, c, p["fuse1_w1"])
    grads["fuse1_w1"] += dw
    grads["fuse1_b1"] += db
    dh2, dw, db = nn.linear_backward(p["gate2"][0] * dr, h2, p["fuse2_w2"])
    grads["fuse2_w2"] += dw
    grads["fuse2_b2"] += db
    dpre2 = dh2 * (1.0 - h2 * h2)
    dv, dw, db = nn.linear_backward(dpre2, v_agg, p["fuse2_w1"])
    grads["fuse2_w1"] += dw
    grads["fuse2_b1"] += db
    dv = dv + dc[..., D:]
    return dv[0] if squeeze else dv


# --- full module --------------------------------------------------------------

class AlignmentModule:
    """Attention stack + fusion with a single parameter dict."""

    def __init__(self, cfg: AlignConfig, params: dict | None = None):
        self.cfg = cfg
        self.params = init_params(cfg) if params is None else params

    @property
    def num_params(self) -> int:
        return nn.param_count(self.params)

    def forward(self, text_pooled, video_emb):
        v_agg, att_cache = attend_temporal(self.params, video_emb, self.cfg)
        out, fuse_cache = fuse(self.params, text_pooled, v_agg)
        return out, (att_cache, fuse_cache)

    def __call__(self, text_pooled, video_emb):
        return self.forward(text_pooled, video_emb)[0]

    def backward(self, dout, cache) -> dict:
        att_cache, fuse_cache = cache
        grads = nn.zeros_like_params(self.params)
        dv = fuse_backward(self.params, dout, fuse_cache, grads)
        attend_temporal_backward(self.params, dv, att_cache, self.cfg, grads)
        return grads

    def save(self, stem, meta=None):
        info = {"config": self.cfg.__dict__, **(meta or {})}
        return snapshot.save_params(stem, self.params, info)

    @classmethod
    def load(cls, stem):
        params, meta = snapshot.load_params(stem)
        return cls(AlignConfig(**meta["config"]), params)
