"""Generate a Gaussian system and solve it privately, as in the solver experiments.

    python scripts/run_solver_experiment.py configs/small_solve.json
    python scripts/run_solver_experiment.py configs/large_solve.json   # a few minutes
"""

import argparse
import json
import sys
import time
from pathlib import Path

from titan.cli import main


def run(config: Path, out: Path) -> int:
    cfg = json.loads(config.read_text())
    data = (config.parent / cfg["data"]).resolve()
    code = main(["gen", "--config", str(config), "--out", str(data)])
    if code:
        return code
    start = time.perf_counter()
    code = main(["solve", "--config", str(config), "--out", str(out)])
    print(f"solve finished in {time.perf_counter() - start:.1f}s (exit {code})")
    return code


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("config", type=Path)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    out = args.out or Path("results") / args.config.stem
    sys.exit(run(args.config, out))
