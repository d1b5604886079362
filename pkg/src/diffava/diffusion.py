"""Conditional latent diffusion: schedule, forward process, denoiser, sampler."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, snapshot
from .errors import ConfigError, DegenerateInputError, InvalidArgumentError, NumericalDivergenceError, ShapeError
from .numerics import Rng


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays are 0-indexed: ``beta[n - 1]`` is the variance of step ``n``."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def N(self) -> int:
        return len(self.beta)

    def check_step(self, n):
        n = np.asarray(n)
        if np.any(n < 1) or np.any(n > self.N):
            raise InvalidArgumentError(f"diffusion step must lie in 1..{self.N}")


def build_schedule(N: int = 100, beta_min: float = 1e-4, beta_max: float = 0.1, kind: str = "linear",
                   max_terminal_alpha_bar: float | None = 0.01) -> NoiseSchedule:
    """Linear beta schedule.

    ``max_terminal_alpha_bar`` enforces a near-isotropic terminal state; pass
    ``None`` to build short schedules that stop before reaching it.
    """
    if kind != "linear":
        raise ConfigError(f"unsupported schedule kind {kind!r}")
    if N < 1 or not (0 < beta_min <= beta_max < 1):
        raise ConfigError(f"need N >= 1 and 0 < beta_min <= beta_max < 1, got N={N}, [{beta_min}, {beta_max}]")
    beta = np.linspace(beta_min, beta_max, N) if N > 1 else np.array([beta_min])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if N > 1 and not np.all(np.diff(alpha_bar) < 0):
        raise ConfigError("alpha_bar is not strictly decreasing")
    if max_terminal_alpha_bar is not None and alpha_bar[-1] >= max_terminal_alpha_bar:
        raise ConfigError(f"terminal alpha_bar {alpha_bar[-1]:.4g} >= {max_terminal_alpha_bar}; "
                          "increase N or beta_max")
    for a in (beta, alpha, alpha_bar):
        a.setflags(write=False)
    return NoiseSchedule(beta, alpha, alpha_bar)


def _bcast(v, like):
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))


def forward_diffuse(s: NoiseSchedule, z0, n, eps):
    """Closed-form marginal ``sqrt(abar_n) z0 + sqrt(1 - abar_n) eps``.

    ``n`` is a scalar or one step per leading batch entry.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ShapeError(f"noise shape {eps.shape} differs from latent shape {z0.shape}")
    s.check_step(n)
    ab = _bcast(s.alpha_bar[np.asarray(n) - 1], z0)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def forward_step(s: NoiseSchedule, z_prev, n, xi):
    """One transition ``q(z_n | z_{n-1})``."""
    s.check_step(n)
    b = _bcast(s.beta[np.asarray(n) - 1], np.asarray(z_prev))
    return np.sqrt(1.0 - b) * z_prev + np.sqrt(b) * xi


# --- denoiser -----------------------------------------------------------------

@dataclass(frozen=True)
class DenoiserConfig:
    latent_shape: tuple = (8, 5, 32)
    cond_dim: int = 64
    hidden: int = 512
    layers: int = 3
    time_dim: int = 32
    seed: int = 0

    @property
    def latent_size(self) -> int:
        return int(np.prod(self.latent_shape))


class Denoiser:
    """Residual MLP noise predictor over flattened latents.

    Input is ``[z_n, time_embedding(n), cond]``. Every hidden block is
    LayerNorm -> Linear -> FiLM(cond, time) -> GELU, added back to the stream.
    The output adds ``gate(n) * z_n``, a scalar linear in the time embedding.
    For Gaussian data the best noise estimate is ``sqrt(1 - alpha_bar_n) z_n``,
    which the hidden width could not otherwise carry for wide latents.
    """

    def __init__(self, cfg: DenoiserConfig, params: dict | None = None):
        self.cfg = cfg
        self.params = self._init() if params is None else params

    def _init(self):
        cfg = self.cfg
        rng = Rng(cfg.seed).spawn("denoiser")
        P, E, C, H = cfg.latent_size, cfg.time_dim, cfg.cond_dim, cfg.hidden
        p = {}
        p["in_w"], p["in_b"] = nn.init_linear(rng, P + E + C, H)
        for l in range(cfg.layers):
            p[f"ln{l}_g"], p[f"ln{l}_b"] = np.ones(H), np.zeros(H)
            p[f"w{l}"], p[f"b{l}"] = nn.init_linear(rng, H, H)
            p[f"film{l}_w"], p[f"film{l}_b"] = nn.init_linear(rng, C + E, 2 * H, gain=0.1)
        p["lnf_g"], p["lnf_b"] = np.ones(H), np.zeros(H)
        p["out_w"], p["out_b"] = nn.init_linear(rng, H, P, gain=0.1)
        p["skip_w"], p["skip_b"] = np.zeros((E, 1)), np.zeros(1)
        return p

    @property
    def num_params(self) -> int:
        return nn.param_count(self.params)

    def time_embedding(self, n):
        return nn.sinusoidal_embedding(np.asarray(n, dtype=np.float64), self.cfg.time_dim)

    def forward(self, z, n, cond):
        """Predicted noise with ``z``'s shape; ``z`` is ``(B, *latent_shape)``, ``cond`` ``(B, cond_dim)``."""
        cfg, p = self.cfg, self.params
        z = np.asarray(z, dtype=np.float64)
        B = z.shape[0]
        if z.shape[1:] != tuple(cfg.latent_shape):
            raise ShapeError(f"latent shape {z.shape[1:]} != {tuple(cfg.latent_shape)}")
        cond = np.asarray(cond, dtype=np.float64).reshape(B, -1)
        if cond.shape[1] != cfg.cond_dim:
            raise ShapeError(f"condition dim {cond.shape[1]} != {cfg.cond_dim}")
        temb = np.broadcast_to(self.time_embedding(n), (B, cfg.time_dim))
        e = np.concatenate([cond, temb], axis=1)
        x = np.concatenate([z.reshape(B, -1), temb, cond], axis=1)
        h = nn.linear(x, p["in_w"], p["in_b"])
        H = cfg.hidden
        blocks = []
        for l in range(cfg.layers):
            a, ln = nn.layer_norm(h, p[f"ln{l}_g"], p[f"ln{l}_b"])
            u = nn.linear(a, p[f"w{l}"], p[f"b{l}"])
            fs = nn.linear(e, p[f"film{l}_w"], p[f"film{l}_b"])
            scale, shift = fs[:, :H], fs[:, H:]
            v = u * (1.0 + scale) + shift
            h = h + nn.gelu(v)
            blocks.append((a, ln, u, scale, v))
        a, lnf = nn.layer_norm(h, p["lnf_g"], p["lnf_b"])
        zf = z.reshape(B, -1)
        gate = nn.linear(temb, p["skip_w"], p["skip_b"])
        out = nn.linear(a, p["out_w"], p["out_b"]) + gate * zf
        cache = (x, e, blocks, a, lnf, zf, temb)
        return out.reshape(z.shape), cache

    def __call__(self, z, n, cond):
        return self.forward(z, n, cond)[0]

    def backward(self, dout, cache) -> dict:
        p, cfg = self.params, self.cfg
        x, e, blocks, a, lnf, zf, temb = cache
        B = x.shape[0]
        g = nn.zeros_like_params(p)
        dout = dout.reshape(B, -1)
        dgate = (dout * zf).sum(axis=1, keepdims=True)
        _, g["skip_w"], g["skip_b"] = nn.linear_backward(dgate, temb, p["skip_w"])
        da, g["out_w"], g["out_b"] = nn.linear_backward(dout, a, p["out_w"])
        dh, g["lnf_g"], g["lnf_b"] = nn.layer_norm_backward(da, lnf, p["lnf_g"])
        for l in reversed(range(cfg.layers)):
            a_l, ln, u, scale, v = blocks[l]
            dv = nn.gelu_backward(dh, v)
            du = dv * (1.0 + scale)
            dfs = np.concatenate([dv * u, dv], axis=1)
            _, g[f"film{l}_w"], g[f"film{l}_b"] = nn.linear_backward(dfs, e, p[f"film{l}_w"])
            da_l, g[f"w{l}"], g[f"b{l}"] = nn.linear_backward(du, a_l, p[f"w{l}"])
            dxi, g[f"ln{l}_g"], g[f"ln{l}_b"] = nn.layer_norm_backward(da_l, ln, p[f"ln{l}_g"])
            dh = dh + dxi
        _, g["in_w"], g["in_b"] = nn.linear_backward(dh, x, p["in_w"])
        return g

    def save(self, stem, meta=None):
        info = {"config": {**self.cfg.__dict__, "latent_shape": list(self.cfg.latent_shape)}, **(meta or {})}
        return snapshot.save_params(stem, self.params, info)

    @classmethod
    def load(cls, stem):
        params, meta = snapshot.load_params(stem)
        c = dict(meta["config"])
        c["latent_shape"] = tuple(c["latent_shape"])
        return cls(DenoiserConfig(**c), params)


def loss_step(den: Denoiser, s: NoiseSchedule, z0, cond, rng: Rng, norm: str = "mse",
              cond_dropout: float = 0.0):
    """One noise-prediction objective evaluation with analytic parameter gradients.

    Draws ``n ~ U{1..N}`` and ``eps ~ N(0, I)`` per batch entry from ``rng``.
    ``norm="mse"`` averages squared error over all elements; ``norm="l2"`` averages
    the unsquared per-sample Euclidean norm. With ``cond_dropout > 0`` a random
    subset of conditions is zeroed (classifier-free guidance training).
    """
    z0 = np.asarray(z0, dtype=np.float64)
    B = z0.shape[0]
    n = rng.integers(1, s.N + 1, B)
    eps = rng.normal(z0.shape)
    cond = np.array(cond, dtype=np.float64).reshape(B, -1)
    if cond_dropout > 0:
        cond[rng.random(B) < cond_dropout] = 0.0
    zn = forward_diffuse(s, z0, n, eps)
    pred, cache = den.forward(zn, n, cond)
    diff = pred - eps
    if norm == "mse":
        loss = float(np.mean(diff * diff))
        dpred = 2.0 * diff / diff.size
    elif norm == "l2":
        per = np.sqrt((diff.reshape(B, -1) ** 2).sum(axis=1))
        loss = float(per.mean())
        dpred = (diff.reshape(B, -1) / (B * np.maximum(per, 1e-300))[:, None]).reshape(diff.shape)
    else:
        raise InvalidArgumentError(f"unknown loss norm {norm!r}")
    return loss, den.backward(dpred, cache)


def fit(den: Denoiser, s: NoiseSchedule, latents, conds, rng: Rng, epochs: int, batch: int, lr: float,
        norm: str = "mse", cond_dropout: float = 0.0, log=None) -> list:
    """Adam on the noise-prediction objective; returns ``[(epoch, "train", mean loss)]``."""
    opt = nn.Adam(den.params, lr=lr)
    curve = []
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(latents))
        losses = []
        for i in range(0, len(perm), batch):
            idx = perm[i:i + batch]
            loss, grads = loss_step(den, s, latents[idx], conds[idx], rng, norm, cond_dropout)
            opt.step(grads)
            losses.append(loss)
        curve.append((epoch, "train", float(np.mean(losses))))
        if log is not None:
            log(epoch, curve[-1][2])
    return curve


def ddpm_sample(den: Denoiser, s: NoiseSchedule, cond, rng: Rng, guidance_scale: float | None = None):
    """Ancestral sampling from ``z_N ~ N(0, I)`` down to a ``z_0`` estimate.

    ``cond`` is ``(B, cond_dim)``; returns ``(B, *latent_shape)``. With a
    ``guidance_scale`` the prediction is ``eps_u + w (eps_c - eps_u)`` where
    ``eps_u`` uses the zero condition.
    """
    cond = np.asarray(cond, dtype=np.float64)
    B = cond.shape[0]
    shape = (B,) + tuple(den.cfg.latent_shape)
    z = rng.normal(shape)
    zero = np.zeros_like(cond)
    for n in range(s.N, 0, -1):
        eps = den(z, n, cond)
        if guidance_scale is not None:
            eps_u = den(z, n, zero)
            eps = eps_u + guidance_scale * (eps - eps_u)
        b, a, ab = s.beta[n - 1], s.alpha[n - 1], s.alpha_bar[n - 1]
        z = (z - (b / np.sqrt(1.0 - ab)) * eps) / np.sqrt(a)
        if n > 1:
            z = z + np.sqrt(b) * rng.normal(shape)
        if not np.all(np.isfinite(z)):
            raise NumericalDivergenceError(f"non-finite latent at diffusion step {n}")
    return z


def pool_condition(aligned_text) -> np.ndarray:
    """Renormalized mean over the time axis of ``(T, D)`` or ``(B, T, D)`` rows."""
    x = np.asarray(aligned_text, dtype=np.float64)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError("need at least one row to pool")
    m = x.mean(axis=-2)
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    if np.any(norms < 1e-12):
        raise DegenerateInputError("rows cancel out; pooled condition is the zero vector")
    return m / norms
