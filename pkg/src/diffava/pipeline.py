"""End-to-end stages shared by the CLI, the scripts and the acceptance suite.

Run directory layout::

    <run>/config.json
    <run>/data/{train,val,test}.dava (+ .json sidecars)
    <run>/models/encoder_{text,audio,video}.{bin,json}
    <run>/models/{alignment,codec,denoiser,denoiser_raw_text}.{bin,json}
    <run>/models/*_loss.csv
    <run>/samples/{visual,text}.dava
    <run>/reports/{visual,text}.json
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from . import nn, synthdata
from .alignment import AlignmentModule
from .codec import Codec, train_codec
from .config import RunConfig
from .contrastive import retrieval_top1, temporal_infonce
from .diffusion import Denoiser, ddpm_sample, fit, pool_condition
from .encoders import EncoderSet, encode_audio, encode_video, pooled_text_batch
from .errors import ConfigError, DataFormatError, InvalidArgumentError
from .metrics import (classifier_features, fit_gaussian, frechet_distance, inception_score, onset_error,
                      paired_kl, train_classifier)
from .numerics import Rng

log = logging.getLogger("diffava")

SPLITS = ("train", "val", "test")


# --- stamping -----------------------------------------------------------------

def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def stamp(path, cfg: RunConfig, **extra):
    _sidecar(path).write_text(json.dumps({"config_hash": cfg.hash(), **extra}, indent=2, sort_keys=True) + "\n")


def check_stamp(path, cfg: RunConfig, force: bool = False, meta: dict | None = None):
    """Raise ConfigError if the artifact was produced under a different config."""
    if meta is None:
        side = _sidecar(path)
        if not side.exists():
            raise DataFormatError(f"{path}: missing config stamp {side.name}")
        meta = json.loads(side.read_text())
    found = meta.get("config_hash")
    if found != cfg.hash() and not force:
        raise ConfigError(f"{path} was produced with config {found}, current config is {cfg.hash()} "
                          "(use --force to override)")


def write_curve(path, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "value"])
        for epoch, split, value in rows:
            w.writerow([epoch, split, repr(float(value))])


# --- data ---------------------------------------------------------------------

def gen_data(cfg: RunConfig, out_dir) -> dict:
    dc = cfg.data_config()
    out = Path(out_dir)
    paths = {}
    for split in SPLITS:
        n = getattr(cfg.data, f"n_{split}")
        samples = synthdata.generate_dataset(dc, n, getattr(cfg.data, f"{split}_seed"))
        path = out / f"{split}.dava"
        synthdata.write_dataset(path, samples, dc)
        stamp(path, cfg, split=split, count=n)
        paths[split] = path
        log.info("wrote %d %s samples to %s", n, split, path)
    return paths


def load_split(cfg: RunConfig, data_dir, split: str, force: bool = False):
    path = Path(data_dir) / f"{split}.dava"
    check_stamp(path, cfg, force)
    return synthdata.read_dataset(path)


# --- encoders -----------------------------------------------------------------

def ensure_encoders(cfg: RunConfig, models_dir, force: bool = False) -> EncoderSet:
    """Load frozen encoders from ``models_dir`` or build and snapshot them."""
    models_dir = Path(models_dir)
    if (models_dir / "encoder_text.json").exists():
        enc = EncoderSet.load(models_dir)
        for m in ("text", "audio", "video"):
            meta = json.loads((models_dir / f"encoder_{m}.json").read_text())["meta"]
            check_stamp(models_dir / f"encoder_{m}", cfg, force, meta=meta)
        return enc
    d = cfg.data
    enc = EncoderSet.build(d.K + 2, d.F, d.D_v, cfg.encoders.dim, cfg.encoders.hidden, cfg.encoders.seed)
    enc.save(models_dir, {"config_hash": cfg.hash()})
    return enc


def embed(enc: EncoderSet, samples):
    """(audio rows (M,T,D), video rows (M,T,D), pooled text (M,D))."""
    mel, frames = synthdata.stack(samples)
    return (encode_audio(enc.audio, mel), encode_video(enc.video, frames),
            pooled_text_batch(enc.text, [s.token_ids for s in samples]))


# --- alignment ------------------------------------------------------------------

def _batched_align(model: AlignmentModule, text, video, batch=256):
    return np.concatenate([model(text[i:i + batch], video[i:i + batch]) for i in range(0, len(text), batch)])


def evaluate_alignment(model: AlignmentModule, audio, video, text, batch: int, cfg: RunConfig):
    """Mean contrastive loss and top-1 retrieval over consecutive batches."""
    cc = cfg.contrastive_config()
    losses, accs = [], []
    for i in range(0, len(audio) - batch + 1, batch):
        sl = slice(i, i + batch)
        target = video[sl] if cc.contrast_target == "raw_visual" else model(text[sl], video[sl])
        losses.append(temporal_infonce(audio[sl], target, cc)[0])
        accs.append(retrieval_top1(audio[sl], target))
    return float(np.mean(losses)), float(np.mean(accs))


def train_alignment(cfg: RunConfig, train, val, enc: EncoderSet):
    """Visual-aligned contrastive pre-training. Returns ``(model, curve)``.

    Only the alignment parameters are updated; encoder outputs are computed once
    up front and never differentiated.
    """
    a = cfg.align
    cc = cfg.contrastive_config()
    model = AlignmentModule(cfg.align_config())
    A, V, Tx = embed(enc, train)
    Av, Vv, Tv = embed(enc, val)
    opt = nn.Adam(model.params, lr=a.lr)
    rng = Rng(a.seed).spawn("align-train")
    vloss, vacc = evaluate_alignment(model, Av, Vv, Tv, a.batch, cfg)
    curve = [(0, "val_loss", vloss), (0, "val_top1", vacc)]
    for epoch in range(1, a.epochs + 1):
        perm = rng.permutation(len(A))
        losses = []
        for i in range(0, len(perm) - a.batch + 1, a.batch):
            idx = perm[i:i + a.batch]
            if cc.contrast_target == "raw_visual":
                losses.append(temporal_infonce(A[idx], V[idx], cc)[0])
                continue
            out, cache = model.forward(Tx[idx], V[idx])
            loss, dout = temporal_infonce(A[idx], out, cc)
            opt.step(model.backward(dout, cache))
            losses.append(loss)
        vloss, vacc = evaluate_alignment(model, Av, Vv, Tv, a.batch, cfg)
        curve += [(epoch, "train_loss", float(np.mean(losses))), (epoch, "val_loss", vloss), (epoch, "val_top1", vacc)]
        log.info("align epoch %d: train %.4f val %.4f top1 %.4f", epoch, np.mean(losses), vloss, vacc)
    return model, curve


# --- conditions -----------------------------------------------------------------

def condition_vectors(cfg: RunConfig, samples, enc: EncoderSet, align: AlignmentModule | None, source: str):
    """Denoiser conditions for ``samples`` from one of the three condition sources."""
    A, V, Tx = embed(enc, samples)
    T = cfg.data.T
    if source == "aligned_text":
        if align is None:
            raise InvalidArgumentError("aligned_text conditioning needs a trained alignment module")
        rows = _batched_align(align, Tx, V)
    elif source == "raw_text":
        rows = np.repeat(Tx[:, None, :], T, axis=1)
    elif source == "audio_embedding":
        rows = A
    else:
        raise InvalidArgumentError(f"unknown condition source {source!r}")
    if cfg.diffusion.cond_mode == "pooled":
        return pool_condition(rows)
    return rows.reshape(len(samples), -1) / np.sqrt(T)


# --- diffusion ------------------------------------------------------------------

def train_denoiser(cfg: RunConfig, latents, conds, tag: str = "denoiser"):
    """Fit the noise predictor on (latent, condition) pairs. Returns ``(denoiser, curve)``."""
    s = cfg.diffusion
    sched = cfg.schedule()
    den = Denoiser(cfg.denoiser_config())
    dropout = s.cond_dropout if s.cfg_guidance else 0.0
    curve = fit(den, sched, latents, conds, Rng(s.seed).spawn("diffusion-train"), s.epochs, s.batch, s.lr,
                s.loss_norm, dropout, log=lambda e, v: log.info("%s epoch %d: loss %.5f", tag, e, v))
    return den, curve


def generate(cfg: RunConfig, den: Denoiser, codec: Codec, conds, seed_key="sample", batch: int = 256):
    """Decode ancestral samples for each condition row into mels ``(M, T, F)``."""
    sched = cfg.schedule()
    rng = Rng(cfg.diffusion.seed).spawn(seed_key)
    guidance = cfg.diffusion.guidance_scale if cfg.diffusion.cfg_guidance else None
    mels = []
    for i in range(0, len(conds), batch):
        z = ddpm_sample(den, sched, conds[i:i + batch], rng, guidance)
        mels.append(codec.decode_latent(z))
    return np.concatenate(mels)


def generated_dataset(prompts, mels):
    return [synthdata.TripletSample(m.astype(np.float32), p.frame_features, p.token_ids, p.script)
            for p, m in zip(prompts, mels)]


# --- evaluation -----------------------------------------------------------------

def fit_eval_classifier(cfg: RunConfig, train, enc: EncoderSet):
    A, _, _ = embed(enc, train)
    labels = [synthdata.dominant_class(s.script) for s in train]
    return train_classifier(classifier_features(A), labels, cfg.data.K, Rng(cfg.eval.seed).spawn("classifier"),
                            epochs=cfg.eval.classifier_epochs, lr=cfg.eval.classifier_lr)


def evaluate_generation(cfg: RunConfig, generated, reference, enc: EncoderSet, classifier) -> dict:
    """IS / paired KL / FAD / FD / onset error of ``generated`` against paired ``reference``."""
    if len(generated) != len(reference):
        raise InvalidArgumentError("generated and reference sets must be paired one to one")
    gen_mel, _ = synthdata.stack(generated)
    ref_mel, _ = synthdata.stack(reference)
    ga = encode_audio(enc.audio, gen_mel)
    ra = encode_audio(enc.audio, ref_mel)
    gp = classifier.probs(classifier_features(ga))
    rp = classifier.probs(classifier_features(ra))
    D = ga.shape[-1]
    onsets = [s.script[0].onset for s in reference]
    return {
        "is": inception_score(gp),
        "kl": paired_kl(gp, rp),
        "fad": frechet_distance(fit_gaussian(ga.reshape(-1, D)), fit_gaussian(ra.reshape(-1, D))),
        "fd": frechet_distance(fit_gaussian(ga.mean(axis=1)), fit_gaussian(ra.mean(axis=1))),
        "onset_error": float(onset_error(gen_mel, onsets, cfg.data_config().noise_floor).mean()),
        "sample_counts": {"generated": len(generated), "reference": len(reference)},
        "config_hash": cfg.hash(),
    }


def write_report(path, report: dict):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


# --- whole pipeline ---------------------------------------------------------------

def run_all(cfg: RunConfig, run_dir) -> dict:
    """gen-data -> train-align -> train-codec -> train-diffusion (x2) -> sample (x2) -> evaluate (x2)."""
    run = Path(run_dir)
    from .config import save_config

    save_config(cfg, run / "config.json")
    data, models = run / "data", run / "models"
    gen_data(cfg, data)
    stage_train_align(cfg, data, models)
    stage_train_codec(cfg, data, models)
    stage_train_diffusion(cfg, data, models, "config")
    stage_train_diffusion(cfg, data, models, "raw_text")
    reports = {}
    for mode in ("visual", "text"):
        out = run / "samples" / f"{mode}.dava"
        stage_sample(cfg, models, data / "test.dava", out, visual=(mode == "visual"))
        reports[mode] = stage_evaluate(cfg, models, data, out, run / "reports" / f"{mode}.json")
    return reports


def stage_train_align(cfg, data_dir, models_dir, force=False):
    enc = ensure_encoders(cfg, models_dir, force)
    model, curve = train_alignment(cfg, load_split(cfg, data_dir, "train", force),
                                   load_split(cfg, data_dir, "val", force), enc)
    model.save(Path(models_dir) / "alignment", {"config_hash": cfg.hash()})
    write_curve(Path(models_dir) / "alignment_loss.csv", curve)
    return model, curve


def stage_train_codec(cfg, data_dir, models_dir, force=False):
    ensure_encoders(cfg, models_dir, force)
    train_mel, _ = synthdata.stack(load_split(cfg, data_dir, "train", force))
    val_mel, _ = synthdata.stack(load_split(cfg, data_dir, "val", force))
    codec, curve = train_codec(train_mel, cfg.codec_config(), val_mel, log=log.info)
    codec.save(Path(models_dir) / "codec", {"config_hash": cfg.hash()})
    write_curve(Path(models_dir) / "codec_loss.csv", curve)
    return codec, curve


def _load_model(cls, stem, cfg, force):
    model = cls.load(stem)
    check_stamp(stem, cfg, force, meta=json.loads(Path(str(stem) + ".json").read_text())["meta"])
    return model


def load_alignment(cfg, models_dir, force=False):
    return _load_model(AlignmentModule, Path(models_dir) / "alignment", cfg, force)


def load_codec(cfg, models_dir, force=False):
    return _load_model(Codec, Path(models_dir) / "codec", cfg, force)


def denoiser_stem(models_dir, cond_source: str) -> Path:
    return Path(models_dir) / ("denoiser_raw_text" if cond_source == "raw_text" else "denoiser")


def stage_train_diffusion(cfg, data_dir, models_dir, cond_source="config", force=False):
    """``cond_source="config"`` trains the main model on ``diffusion.train_cond``;
    ``"raw_text"`` trains the text-only baseline with the same architecture and seeds."""
    source = cfg.diffusion.train_cond if cond_source == "config" else cond_source
    enc = ensure_encoders(cfg, models_dir, force)
    train = load_split(cfg, data_dir, "train", force)
    codec = load_codec(cfg, models_dir, force)
    align = load_alignment(cfg, models_dir, force) if source == "aligned_text" else None
    mel, _ = synthdata.stack(train)
    latents = codec.encode_mel(mel)
    conds = condition_vectors(cfg, train, enc, align, source)
    den, curve = train_denoiser(cfg, latents, conds, tag=f"denoiser[{source}]")
    stem = denoiser_stem(models_dir, cond_source)
    den.save(stem, {"config_hash": cfg.hash(), "cond_source": source})
    write_curve(str(stem) + "_loss.csv", curve)
    return den, curve


def stage_sample(cfg, models_dir, prompts_path, out_path, visual=True, force=False):
    """Visual mode conditions the main denoiser on aligned text; text mode the raw-text baseline."""
    enc = ensure_encoders(cfg, models_dir, force)
    prompts = synthdata.read_dataset(prompts_path)
    check_stamp(prompts_path, cfg, force)
    codec = load_codec(cfg, models_dir, force)
    if visual:
        den = _load_model(Denoiser, denoiser_stem(models_dir, "config"), cfg, force)
        source = "aligned_text"
        align = load_alignment(cfg, models_dir, force)
    else:
        den = _load_model(Denoiser, denoiser_stem(models_dir, "raw_text"), cfg, force)
        source, align = "raw_text", None
    conds = condition_vectors(cfg, prompts, enc, align, source)
    mels = generate(cfg, den, codec, conds)
    synthdata.write_dataset(out_path, generated_dataset(prompts, mels), cfg.data_config())
    stamp(out_path, cfg, mode="visual" if visual else "text", count=len(prompts))
    return mels


def stage_evaluate(cfg, models_dir, data_dir, generated_path, report_path, reference_path=None, force=False):
    enc = ensure_encoders(cfg, models_dir, force)
    train = load_split(cfg, data_dir, "train", force)
    reference = (synthdata.read_dataset(reference_path) if reference_path
                 else load_split(cfg, data_dir, "test", force))
    if reference_path:
        check_stamp(reference_path, cfg, force)
    check_stamp(generated_path, cfg, force)
    generated = synthdata.read_dataset(generated_path)
    clf = fit_eval_classifier(cfg, train, enc)
    report = evaluate_generation(cfg, generated, reference, enc, clf)
    write_report(report_path, report)
    return report
