"""Rounds and per-node memory as k sweeps from 1 to m (plot-ready CSV on stdout).

    python scripts/tradeoff_table.py --m 20 > tradeoff.csv
"""

import argparse
import csv
import math
import sys

import numpy as np

from titan.graph import diameter, generate_graph
from titan.protocol import run_titan
from titan.simnet import cost_report

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--m", type=int, default=20)
    ap.add_argument("--graph", default="ring")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    g = generate_graph(args.graph, args.m, seed=args.seed)
    T = diameter(g)
    x = np.random.default_rng(args.seed).uniform(0, 1, args.m)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["k", "recovery_rounds", "predicted_rounds", "peak_memory_units", "predicted_memory", "message_units_node1"])
    for k in range(1, args.m + 1):
        res = run_titan(x, g, T, k, 1, seed=args.seed, record_internal=False)
        cr = cost_report(res.trace)
        w.writerow([k, res.recovery_rounds, T * math.ceil(args.m / k), cr.peak_memory_units[1], 2 * k + args.m,
                    cr.message_units[1]])
