"""Finite-difference verification of the hand-written gradients.

Each suite builds a small random instance, computes the analytic gradient and
compares it with central differences on a random subset of coordinates drawn
from every parameter tensor.
"""
from __future__ import annotations

import time

import numpy as np

from .numerics import Rng, finite_diff_grad, relative_error


def check_param_grads(loss_fn, params: dict, grads: dict, rng: Rng, per_tensor: int = 12,
                      h: float = 1e-5) -> float:
    """Relative error between ``grads`` and differences of ``loss_fn()`` over sampled coordinates.

    ``loss_fn`` takes no arguments and reads ``params`` in place.
    """
    analytic, numeric = [], []
    for name, arr in params.items():
        flat = arr.reshape(-1)
        k = min(per_tensor, flat.size)
        idx = np.sort(rng.permutation(flat.size)[:k])
        x0 = flat[idx].copy()

        def f(x, flat=flat, idx=idx):
            flat[idx] = x
            return loss_fn()

        num = finite_diff_grad(f, x0, h)
        flat[idx] = x0
        analytic.append(grads[name].reshape(-1)[idx])
        numeric.append(num)
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


def contrastive_suite(seed: int) -> float:
    from .contrastive import ContrastiveConfig, temporal_infonce
    from .numerics import l2_normalize

    rng = Rng(seed).spawn("gc-contrastive")
    B, T, D = 8, 5, 16
    audio = l2_normalize(rng.normal((B, T, D)))
    text = l2_normalize(rng.normal((B, T, D)))
    cfg = ContrastiveConfig(tau=0.3 + 0.5 * rng.random())
    _, g = temporal_infonce(audio, text, cfg)
    # differentiate through a normalization so perturbed points stay on the unit sphere
    raw = text * (1.0 + 0.5 * rng.random((B, T, 1)))
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    g_raw = (g - text * (text * g).sum(-1, keepdims=True)) / norms

    def f(x):
        return temporal_infonce(audio, l2_normalize(x), cfg)[0]

    idx = rng.permutation(raw.size)[:80]
    num = finite_diff_grad(f, raw, indices=idx).reshape(-1)[idx]
    return relative_error(g_raw.reshape(-1)[idx], num)


def alignment_suite(seed: int) -> float:
    from .alignment import AlignConfig, AlignmentModule
    from .contrastive import ContrastiveConfig, temporal_infonce
    from .numerics import l2_normalize

    rng = Rng(seed).spawn("gc-alignment")
    B, T, D = 4, 5, 16
    model = AlignmentModule(AlignConfig(dim=D, depth=2, heads=4, fusion_hidden=12, seed=seed))
    # move off the zero-gate initialization so every branch carries gradient
    model.params["gate1"][:] = 0.5 + rng.random()
    model.params["gate2"][:] = 0.5 + rng.random()
    for k in model.params:
        if k.endswith(("_g", "_b")) or k.startswith("layer"):
            model.params[k] += 0.1 * rng.normal(model.params[k].shape)
    video = l2_normalize(rng.normal((B, T, D)))
    text = l2_normalize(rng.normal((B, D)))
    audio = l2_normalize(rng.normal((B, T, D)))
    cfg = ContrastiveConfig(tau=0.5)

    def loss_fn():
        return temporal_infonce(audio, model(text, video), cfg)[0]

    out, cache = model.forward(text, video)
    _, dout = temporal_infonce(audio, out, cfg)
    grads = model.backward(dout, cache)
    return check_param_grads(loss_fn, model.params, grads, rng, per_tensor=6)


def diffusion_suite(seed: int) -> float:
    from .diffusion import Denoiser, DenoiserConfig, build_schedule, loss_step

    rng = Rng(seed).spawn("gc-diffusion")
    cfg = DenoiserConfig(latent_shape=(2, 3, 4), cond_dim=6, hidden=16, layers=3, time_dim=8, seed=seed)
    den = Denoiser(cfg)
    for k in den.params:
        den.params[k] += 0.1 * rng.normal(den.params[k].shape)
    sched = build_schedule(N=20, beta_min=1e-3, beta_max=0.2, max_terminal_alpha_bar=None)
    z0 = rng.normal((3,) + cfg.latent_shape)
    cond = rng.normal((3, cfg.cond_dim))
    state = rng.counter

    def loss_fn():
        return loss_step(den, sched, z0, cond, Rng(rng.seed, state))[0]

    _, grads = loss_step(den, sched, z0, cond, Rng(rng.seed, state))
    return check_param_grads(loss_fn, den.params, grads, rng, per_tensor=6)


SUITES = {
    "contrastive": contrastive_suite,
    "alignment": alignment_suite,
    "diffusion": diffusion_suite,
}


def run_all(seeds=range(10), suites=None) -> dict:
    """Max relative error and runtime per suite over ``seeds``."""
    report = {}
    for name in suites or SUITES:
        t0 = time.perf_counter()
        errs = [SUITES[name](int(s)) for s in seeds]
        report[name] = {"max_rel_error": max(errs), "seeds": len(errs),
                        "seconds": time.perf_counter() - t0}
    return report
