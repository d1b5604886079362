"""Command-line entry point: ``diffava <subcommand>``.

Exit codes: 0 ok, 2 config error, 3 data-format or missing-file error,
4 numerical divergence, 5 acceptance-threshold failure (``evaluate --assert``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config, save_config
from .errors import AcceptanceFailure, DiffavaError


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON run config (defaults to the desk preset)")
    p.add_argument("--preset", choices=["desk", "paper-scale"])
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--force", action="store_true", help="accept artifacts stamped with another config hash")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="diffava", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write train/val/test dataset files")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("train-align", parents=[common], help="visual-aligned contrastive pre-training")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="models directory")

    p = sub.add_parser("train-codec", parents=[common], help="fit the latent audio codec")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="models directory")

    p = sub.add_parser("train-diffusion", parents=[common], help="fit the conditional denoiser")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--cond-source", choices=["config", "raw_text"], default="config",
                   help="'config' uses diffusion.train_cond; 'raw_text' trains the text-only baseline")

    p = sub.add_parser("sample", parents=[common], help="generate mels for a prompt dataset")
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--prompts", type=Path, required=True, help="dataset file supplying tokens and frame features")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-visual", action="store_true", help="ignore frame features; condition on raw text")

    p = sub.add_parser("evaluate", parents=[common], help="IS / KL / FAD / FD / onset-error report")
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--generated", type=Path, required=True)
    p.add_argument("--reference", type=Path, help="paired reference set (default: <data>/test.dava)")
    p.add_argument("--out", type=Path, required=True, help="report JSON path")
    p.add_argument("--baseline-report", type=Path, help="report of the text-only baseline")
    p.add_argument("--assert", dest="assert_", action="store_true",
                   help="exit 5 unless onset error beats the baseline by eval.onset_gap_min")

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient suites")
    p.add_argument("--seeds", type=int, default=10)

    p = sub.add_parser("run-all", parents=[common], help="every stage in order under one run directory")
    p.add_argument("--run-dir", type=Path, required=True)
    return parser


def _onset_assert(report: dict, baseline_path: Path | None, gap: float):
    if baseline_path is None:
        raise AcceptanceFailure("--assert needs --baseline-report")
    base = json.loads(baseline_path.read_text())
    diff = base["onset_error"] - report["onset_error"]
    if diff < gap:
        raise AcceptanceFailure(f"onset error {report['onset_error']:.3f} vs baseline "
                                f"{base['onset_error']:.3f}: gap {diff:.3f} < {gap}")


def run(args) -> dict | None:
    cfg = load_config(args.config, args.overrides, args.preset)
    cmd = args.command
    if cmd == "gen-data":
        save_config(cfg, args.out / "config.json")
        return {k: str(v) for k, v in pipeline.gen_data(cfg, args.out).items()}
    if cmd == "train-align":
        _, curve = pipeline.stage_train_align(cfg, args.data, args.out, args.force)
        return {"final": dict((s, v) for e, s, v in curve if e == curve[-1][0])}
    if cmd == "train-codec":
        _, curve = pipeline.stage_train_codec(cfg, args.data, args.out, args.force)
        return {"final_val_mse": curve[-1][2]}
    if cmd == "train-diffusion":
        _, curve = pipeline.stage_train_diffusion(cfg, args.data, args.models, args.cond_source, args.force)
        return {"final_loss": curve[-1][2]}
    if cmd == "sample":
        mels = pipeline.stage_sample(cfg, args.models, args.prompts, args.out, not args.no_visual, args.force)
        return {"samples": len(mels), "out": str(args.out)}
    if cmd == "evaluate":
        report = pipeline.stage_evaluate(cfg, args.models, args.data, args.generated, args.out,
                                         args.reference, args.force)
        if args.assert_:
            _onset_assert(report, args.baseline_report, cfg.eval.onset_gap_min)
        return report
    if cmd == "grad-check":
        from .gradcheck import run_all

        report = run_all(range(args.seeds))
        for name, r in report.items():
            print(f"{name:12s} max_rel_error={r['max_rel_error']:.3e} seeds={r['seeds']} time={r['seconds']:.1f}s")
        if any(r["max_rel_error"] >= 1e-4 for r in report.values()):
            raise AcceptanceFailure("gradient check relative error >= 1e-4")
        return None
    if cmd == "run-all":
        return pipeline.run_all(cfg, args.run_dir)
    raise AssertionError(cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        result = run(args)
    except DiffavaError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(json.dumps({"error": "FileNotFoundError", "message": str(exc)}), file=sys.stderr)
        return 3
    if result is not None:
        print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
