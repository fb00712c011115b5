"""Positive privacy audit plus the two negative controls.

    python scripts/run_audits.py [--runs 1000]
"""

import argparse
import sys
from pathlib import Path

from titan.cli import main

CONFIGS = ["audit_ring5.json", "audit_sum_control.json", "audit_star_control.json"]


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=None)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    root = Path(__file__).resolve().parent.parent / "configs"
    worst = 0
    for name in CONFIGS:
        argv = ["audit", "--config", str(root / name), "--out", str(args.out / Path(name).stem)]
        if args.runs:
            argv += ["--runs", str(args.runs)]
        print(f"== {name}")
        worst = max(worst, main(argv))
    sys.exit(worst)
