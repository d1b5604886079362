"""Finite-difference check of every hand-written backward pass.

    python scripts/grad_check.py --seeds 10
"""
import argparse

from diffava.gradcheck import SUITES, run_all


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--suite", choices=sorted(SUITES), action="append")
    args = ap.parse_args()
    report = run_all(range(args.seeds), args.suite)
    for name, r in report.items():
        flag = "ok" if r["max_rel_error"] < 1e-4 else "FAIL"
        print(f"{name:12s} {r['max_rel_error']:.3e} over {r['seeds']} seeds in {r['seconds']:.1f}s  {flag}")


if __name__ == "__main__":
    main()
