"""Onset error of sequence vs pooled visual conditioning, reusing trained stages.

Needs a run directory from run_desk_pipeline.py (data, encoders, alignment and
codec are reused; only the denoisers are retrained per variant).

    python scripts/conditioning_ablation.py --run-dir runs/desk --set diffusion.epochs=20
"""
import argparse
import logging
from pathlib import Path

from diffava import synthdata
from diffava.config import load_config
from diffava.pipeline import (condition_vectors, ensure_encoders, evaluate_generation, fit_eval_classifier,
                              generate, generated_dataset, load_alignment, load_codec, load_split,
                              train_denoiser)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run-dir", type=Path, required=True)
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    data, models = args.run_dir / "data", args.run_dir / "models"
    base = load_config(None, args.overrides)
    enc = ensure_encoders(base, models, force=True)
    train = load_split(base, data, "train", force=True)
    test = load_split(base, data, "test", force=True)
    codec, align = load_codec(base, models, force=True), load_alignment(base, models, force=True)
    latents = codec.encode_mel(synthdata.stack(train)[0])
    clf = fit_eval_classifier(base, train, enc)

    rows = []
    for mode in ("sequence", "pooled"):
        for source in ("aligned_text", "raw_text"):
            cfg = load_config(None, args.overrides + [f"diffusion.cond_mode={mode}"])
            den, _ = train_denoiser(cfg, latents, condition_vectors(cfg, train, enc, align, source), f"{mode}/{source}")
            mels = generate(cfg, den, codec, condition_vectors(cfg, test, enc, align, source))
            rep = evaluate_generation(cfg, generated_dataset(test, mels), test, enc, clf)
            rows.append((mode, source, rep["onset_error"], rep["fd"]))
    print(f"{'mode':10s} {'source':14s} {'onset_err':>10s} {'fd':>10s}")
    for r in rows:
        print(f"{r[0]:10s} {r[1]:14s} {r[2]:10.3f} {r[3]:10.3f}")


if __name__ == "__main__":
    main()
