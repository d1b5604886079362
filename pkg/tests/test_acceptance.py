"""End-to-end acceptance criteria for the desk configuration.

Each test prints one ``[criterion N] PASS|FAIL`` line. The desk pipeline is
run once per session (about a quarter of an hour on one core) and shared by
criteria 3, 7, 8 and 9; criterion 8 reruns it from scratch for comparison.
"""
import csv
import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import random_spd
from diffava import cli
from diffava.contrastive import ContrastiveConfig, temporal_infonce
from diffava.diffusion import Denoiser, DenoiserConfig, build_schedule, ddpm_sample, fit, forward_diffuse
from diffava.gradcheck import run_all
from diffava.metrics import GaussianStats, frechet_distance
from diffava.numerics import Rng, l2_normalize

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _digests(directory: Path, patterns) -> dict:
    return {p.name: _digest(p) for pat in patterns for p in sorted(directory.glob(pat))}


def _cli(*args):
    code = cli.main([str(a) for a in args])
    assert code == 0, f"diffava {' '.join(map(str, args))} exited {code}"


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Desk pipeline stage by stage, snapshotting frozen files around train-align."""
    run = tmp_path_factory.mktemp("desk")
    data, models = run / "data", run / "models"
    timings = {}
    t0 = time.perf_counter()
    _cli("gen-data", "--out", data)
    _cli("train-codec", "--data", data, "--out", models)
    _cli("train-diffusion", "--data", data, "--models", models, "--cond-source", "raw_text")
    frozen = ["encoder_*.bin", "encoder_*.json", "codec.*", "denoiser_raw_text.*"]
    before = _digests(models, frozen)
    t1 = time.perf_counter()
    _cli("train-align", "--data", data, "--out", models)
    timings["train_align"] = time.perf_counter() - t1
    after = _digests(models, frozen)
    _cli("train-diffusion", "--data", data, "--models", models)
    for mode in ("visual", "text"):
        extra = [] if mode == "visual" else ["--no-visual"]
        _cli("sample", "--models", models, "--prompts", data / "test.dava", "--out", run / f"samples/{mode}.dava", *extra)
        _cli("evaluate", "--models", models, "--data", data, "--generated", run / f"samples/{mode}.dava",
             "--out", run / f"reports/{mode}.json")
    timings["total"] = time.perf_counter() - t0
    return {"dir": run, "frozen_before": before, "frozen_after": after, "timings": timings}


def test_criterion_1_gradient_suites(verdict):
    t0 = time.perf_counter()
    report = run_all(range(10))
    elapsed = time.perf_counter() - t0
    worst = max(r["max_rel_error"] for r in report.values())
    detail = ", ".join(f"{k} {v['max_rel_error']:.1e}" for k, v in report.items())
    verdict(1, worst < 1e-4 and elapsed < 120 and all(r["seeds"] >= 10 for r in report.values()),
            f"max rel error {detail}; {elapsed:.1f}s for 10 seeds")


def test_criterion_2_contrastive_value_oracles(verdict):
    B, T = 4, 10
    row = l2_normalize(np.arange(1.0, 9.0))
    x = np.broadcast_to(row, (B, T, 8)).copy()
    equal, _ = temporal_infonce(x, x, ContrastiveConfig())
    e = np.eye(2)[:, None, :]
    pair, _ = temporal_infonce(e, e.copy(), ContrastiveConfig(tau=1.0))
    err1, err2 = abs(equal - T * math.log(B)), abs(pair - math.log(1 + math.exp(-1)))
    verdict(2, err1 < 1e-10 and err2 < 1e-10, f"T ln B error {err1:.1e}, B=2 closed form error {err2:.1e}")


def test_criterion_3_alignment_retrieval(desk_run, verdict):
    with open(desk_run["dir"] / "models/alignment_loss.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["split"] == "val_top1"]
    init, final = float(rows[0]["value"]), float(rows[-1]["value"])
    secs = desk_run["timings"]["train_align"]
    verdict(3, final >= 0.90 and init <= 0.06 and secs < 600,
            f"val top-1 {init:.3f} at init -> {final:.3f} trained; train-align {secs:.0f}s")


def test_criterion_4_frechet_oracle(verdict):
    def oracle(m1, c1, m2, c2):
        ev = np.linalg.eigvals(c1 @ c2)
        return float(np.sum((m1 - m2) ** 2) + np.trace(c1) + np.trace(c2) - 2 * np.sum(np.sqrt(ev.real.clip(0))))

    worst, self_worst = 0.0, 0.0
    for seed in range(100):
        r = Rng(1000 + seed)
        m1, m2, c1, c2 = r.normal(8), r.normal(8), random_spd(r, 8), random_spd(r, 8)
        g1, g2 = GaussianStats(m1, c1, 2), GaussianStats(m2, c2, 2)
        worst = max(worst, abs(frechet_distance(g1, g2) - oracle(m1, c1, m2, c2)))
        self_worst = max(self_worst, frechet_distance(g1, g1))
    verdict(4, worst < 1e-8 and self_worst < 1e-8, f"max |FD - oracle| {worst:.1e}, max FD(g,g) {self_worst:.1e}")


def test_criterion_5_forward_statistics(verdict):
    s = build_schedule()
    M = 100_000
    z0 = np.array([1.5, -2.0, 0.3, 0.0])
    zN = forward_diffuse(s, np.broadcast_to(z0, (M, 4)), s.N, Rng(5).normal((M, 4)))
    ab = s.alpha_bar[-1]
    var = 1 - ab
    mean_z = np.abs(zN.mean(0) - np.sqrt(ab) * z0) / np.sqrt(var / M)
    var_z = np.abs(zN.var(0, ddof=1) - var) / (var * np.sqrt(2 / (M - 1)))
    ok = mean_z.max() < 3 and var_z.max() < 3 and ab < 0.01
    verdict(5, ok, f"max |z| mean {mean_z.max():.2f} var {var_z.max():.2f} (limit 3); alpha_bar_N {ab:.4g}")


def test_criterion_6_two_mode_recovery(verdict):
    r = Rng(0)
    M, w = 4000, 0.3
    centers = np.array([[-2.0, -2.0], [2.0, 2.0]])
    mode = np.where(r.random(M) < w, 0, 1)
    z0 = (centers[mode] + 0.3 * r.normal((M, 2))).reshape(M, 1, 1, 2)
    den = Denoiser(DenoiserConfig(latent_shape=(1, 1, 2), cond_dim=1, hidden=64, layers=2, time_dim=16))
    s = build_schedule()
    fit(den, s, z0, np.zeros((M, 1)), Rng(1), epochs=30, batch=64, lr=2e-3)
    x = ddpm_sample(den, s, np.zeros((2000, 1)), Rng(2)).reshape(2000, 2)
    nearest = ((x[:, None] - centers[None]) ** 2).sum(-1).argmin(1)
    w_hat = float((nearest == 0).mean())
    verdict(6, abs(w_hat - w) <= 0.1 and abs((1 - w_hat) - (1 - w)) <= 0.1,
            f"mode weights {w_hat:.3f}/{1 - w_hat:.3f} vs true {w:.1f}/{1 - w:.1f}")


def test_criterion_7_onset_alignment(desk_run, verdict):
    reports = {m: json.loads((desk_run["dir"] / f"reports/{m}.json").read_text()) for m in ("visual", "text")}
    vis, txt = reports["visual"]["onset_error"], reports["text"]["onset_error"]
    secs = desk_run["timings"]["total"]
    verdict(7, vis < txt and txt - vis >= 1.0 and secs < 1800,
            f"mean onset error visual {vis:.3f}s vs raw text {txt:.3f}s (gap {txt - vis:.3f}); end-to-end {secs / 60:.1f} min")


def test_criterion_8_determinism(desk_run, tmp_path, verdict):
    first = desk_run["dir"]
    _cli("run-all", "--run-dir", tmp_path)
    patterns = ["*.bin", "*.json", "*.csv"]
    a = _digests(first / "models", patterns) | {"r_" + k: v for k, v in _digests(first / "reports", ["*.json"]).items()}
    b = _digests(tmp_path / "models", patterns) | {"r_" + k: v for k, v in _digests(tmp_path / "reports", ["*.json"]).items()}
    diff = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    verdict(8, not diff and len(a) > 10, f"{len(a)} snapshot/report files compared; differing: {diff or 'none'}")


def test_criterion_9_frozen_parameters(desk_run, verdict):
    before, after = desk_run["frozen_before"], desk_run["frozen_after"]
    changed = sorted(k for k in before if before[k] != after.get(k))
    verdict(9, len(before) == 10 and not changed,
            f"{len(before)} encoder/codec/denoiser files hashed around train-align; changed: {changed or 'none'}")
