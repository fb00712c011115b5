"""Acceptance criteria, one test per criterion.

Each test records a single ``[PASS]``/``[FAIL]`` line and then asserts; the
lines are printed together in pytest's terminal summary (see conftest.py).
"""

import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from titan.audit import AuditConfig, make_equivalent_inputs, view_indistinguishability_test
from titan.cli import main as cli_main
from titan.graph import diameter, generate_graph
from titan.protocol import estimate_node_count, run_titan, run_topk
from titan.simnet import cost_report
from titan.solver import (
    LinearSystem,
    choose_shift_and_range,
    direct_lssol,
    even_row_counts,
    local_update,
    partition_system,
    solve_private,
)


RESULTS: list[str] = []


def report(n, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)


def random_strong_graph(rng, m):
    chords = int(rng.integers(0, m * (m - 1) - m + 1)) if m > 1 else 0
    return generate_graph("ring-plus-chords", m, seed=int(rng.integers(2**31)), chords=min(chords, 3 * m))


def topk_oracle(values, k, exclude=()):
    pairs = sorted(((v, i) for i, v in enumerate(values, start=1) if i not in exclude), reverse=True)[:k]
    L = [v for v, _ in pairs] + [None] * (k - len(pairs))
    ell = [i for _, i in pairs] + [None] * (k - len(pairs))
    return L, ell


# ----------------------------------------------------------------- 1 and 2

def test_c1_c2_exact_average_and_round_count():
    rng = np.random.default_rng(20240101)
    exact_ok = rounds_ok = True
    start = time.perf_counter()
    for trial in range(200):
        m = int(rng.integers(2, 31))
        g = random_strong_graph(rng, m)
        k = int(rng.integers(1, m + 1))
        T = diameter(g)
        a = 8
        x = rng.uniform(0, a, m)
        res = run_titan(x, g, T, k, a, seed=trial, record_internal=False)
        direct = res.direct_average_exact()[0]
        exact_ok &= all(res.average_exact(i)[0] == direct for i in g.nodes)
        rounds_ok &= res.recovery_rounds == T * math.ceil(m / k)
    elapsed = time.perf_counter() - start
    ok1 = exact_ok and elapsed < 30
    report(1, ok1, f"200 random graphs exact={exact_ok}, {elapsed:.1f}s (< 30s)")
    report("2a", rounds_ok, f"recovery rounds == T*ceil(m/k) in all 200 runs: {rounds_ok}")
    assert exact_ok and rounds_ok
    assert elapsed < 30


def test_c2_large_config_round_count():
    start = time.perf_counter()
    g = generate_graph("ring", 100)
    x = np.random.default_rng(5).uniform(0, 1, 100)
    res = run_titan(x, g, 100, 10, 1, seed=1, record_internal=False)
    elapsed = time.perf_counter() - start
    ok = res.recovery_rounds == 1000 and res.agree and elapsed < 60
    report("2b", ok, f"m=100 ring, T=100, k=10: {res.recovery_rounds} recovery rounds, {elapsed:.1f}s (< 60s)")
    assert res.recovery_rounds == 1000
    assert res.agree
    assert elapsed < 60


# ----------------------------------------------------------------------- 3

def test_c3_topk_oracle():
    rng = np.random.default_rng(3)
    agree = 0
    for trial in range(500):
        m = int(rng.integers(1, 13))
        g = random_strong_graph(rng, m)
        k = int(rng.integers(1, m + 1))
        T = max(1, diameter(g))
        # small integer range so ties are common
        values = [float(v) for v in rng.integers(0, 4, m)]
        outs = run_topk(values, g, T, k)
        expected = topk_oracle(values, k)
        agree += all(outs[i].lists(0) == expected for i in g.nodes)

    disagreements = 0
    for m in range(4, 13):
        g = generate_graph("ring", m)
        values = [float(v) for v in rng.permutation(m)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            outs = run_topk(values, g, diameter(g) - 1, 1)
        expected = topk_oracle(values, 1)
        disagreements += any(outs[i].lists(0) != expected for i in g.nodes)
    ok = agree == 500 and disagreements >= 1
    report(3, ok, f"oracle agreement {agree}/500; negative control T = diameter - 1 disagreed on {disagreements}/9 rings")
    assert agree == 500
    assert disagreements >= 1


# ----------------------------------------------------------------------- 4

def test_c4_aggregate_invariance():
    rng = np.random.default_rng(4)
    exact_ok, worst = 0, 0.0
    for trial in range(1000):
        m = int(rng.integers(2, 11))
        g = random_strong_graph(rng, m)
        x = rng.uniform(0, 2, m)
        res = run_titan(x, g, diameter(g), m, 2, seed=trial, record_internal=False)
        exact_ok += res.ctx.sum(res.perturbations[:, 0]) == 0
    for trial in range(200):
        m = int(rng.integers(2, 11))
        g = random_strong_graph(rng, m)
        x = rng.uniform(0, 2, m)
        res = run_titan(x, g, diameter(g), m, 2, seed=trial, backend="float", record_internal=False)
        M = res.ctx.modulus_units
        s = float(np.mod(np.sum(res.perturbations[:, 0]), M))
        worst = max(worst, min(s, M - s) / M)
    ok = exact_ok == 1000 and worst <= 1e-9
    report(4, ok, f"exact: {exact_ok}/1000 sums are 0; float: worst |sum t| = {worst:.2e} * M (<= 1e-9)")
    assert exact_ok == 1000
    assert worst <= 1e-9


# ----------------------------------------------------------------------- 5

def gaussian_system(seed, p, n):
    rng = np.random.default_rng(seed)
    return LinearSystem(rng.normal(0, math.sqrt(2), (p, n)), rng.normal(0, math.sqrt(2), p))


def run_solver_experiment(m, p, n, T, k, seed):
    system = gaussian_system(seed, p, n)
    part = partition_system(system, even_row_counts(p, m))
    c, a = choose_shift_and_range([local_update(blk) for blk in part.blocks])
    g = generate_graph("ring", m)
    res = solve_private(part, g, T, k, a, seed=seed, offset=c, keep_traces=False)
    direct = direct_lssol(system)
    return res, float(np.linalg.norm(res.x - direct) / np.linalg.norm(direct))


def test_c5a_small_solver():
    res, rel = run_solver_experiment(5, 15, 5, 5, 5, seed=11)
    ok = rel <= 1e-6 and res.recovery_rounds == 5
    report("5a", ok, f"m=5 p=15 n=5: relative error {rel:.2e} (<= 1e-6), recovery rounds {res.recovery_rounds} (== 5)")
    assert rel <= 1e-6
    assert res.recovery_rounds == 5


@pytest.mark.slow
def test_c5b_large_solver():
    start = time.perf_counter()
    res, rel = run_solver_experiment(100, 10000, 100, 100, 10, seed=12)
    elapsed = time.perf_counter() - start
    ok = rel <= 1e-6 and res.recovery_rounds == 1000 and elapsed < 600
    report("5b", ok, f"m=100 p=10000 n=100: relative error {rel:.2e}, recovery rounds {res.recovery_rounds}, {elapsed:.0f}s (< 600s)")
    assert rel <= 1e-6
    assert res.recovery_rounds == 1000
    assert elapsed < 600


# ------------------------------------------------------------------- 6 and 7

X5 = [1.0, 2.0, 3.0, 4.0, 5.0]


def test_c6_audit_positive():
    start = time.perf_counter()
    g = generate_graph("ring", 5)
    conf = AuditConfig(g, diameter(g), 1, 10.0, frozenset({1}), tau=1)
    xp = make_equivalent_inputs(X5, {1}, 0.75, 2, 4, 10.0)
    rep = view_indistinguishability_test(conf, X5, xp, runs=1000, alpha=0.01, seed=0)
    elapsed = time.perf_counter() - start
    ok = rep.passed and elapsed < 120
    report(6, ok, f"5-ring, tau=1, N=1000: corrected p = {rep.p_value:.3f} over {rep.details['coordinates']} coordinates, {elapsed:.0f}s")
    assert rep.passed
    assert elapsed < 120


def test_c7_audit_negative_controls():
    ring = generate_graph("ring", 5)
    conf = AuditConfig(ring, diameter(ring), 1, 10.0, frozenset({1}), tau=1)
    shifted = [1.0, 2.0, 3.0, 4.0, 6.0]
    rep_a = view_indistinguishability_test(conf, X5, shifted, runs=500, seed=1, expect_distinguishable=True)

    star = generate_graph("star", 5)
    conf_b = AuditConfig(star, diameter(star), 1, 10.0, frozenset({1}), tau=1)
    xp = make_equivalent_inputs(X5, {1}, 0.75, 2, 4, 10.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep_b = view_indistinguishability_test(conf_b, X5, xp, runs=500, seed=2, expect_distinguishable=True)
    ok = rep_a.passed and rep_b.passed
    report(7, ok, f"differing sums distinguishable (p={rep_a.p_value:.1e}); corrupted star hub distinguishable (p={rep_b.p_value:.1e}, kappa={rep_b.details['kappa']})")
    assert rep_a.passed
    assert rep_b.passed


# ----------------------------------------------------------------------- 8

def test_c8_node_count_estimation():
    rng = np.random.default_rng(8)
    hits = 0
    for trial in range(50):
        m = int(rng.integers(1, 51))
        bound = m + int(rng.integers(0, 2 * m + 1))
        g = random_strong_graph(rng, m)
        k = int(rng.integers(1, bound + 1))
        hits += estimate_node_count(g, bound, max(1, diameter(g)), k=k, seed=trial) == m
    report(8, hits == 50, f"estimate_node_count exact on {hits}/50 (m, m_bound) pairs")
    assert hits == 50


# ----------------------------------------------------------------------- 9

def test_c9_cost_accounting():
    rng = np.random.default_rng(9)
    ok_units = ok_mem = 0
    for trial in range(20):
        m = int(rng.integers(2, 16))
        g = random_strong_graph(rng, m)
        k = int(rng.integers(1, m + 1))
        d = int(rng.integers(1, 4))
        T = diameter(g)
        x = rng.uniform(0, 1, (m, d))
        res = run_titan(x, g, T, k, 1, seed=trial, record_internal=False)
        cr = cost_report(res.trace)
        sweeps = math.ceil(m / k)
        ok_units += all(
            cr.message_units[i] == len(g.out_neighbors(i)) * (2 * k * T * sweeps + 1) * d for i in g.nodes
        )
        ok_mem += all(cr.peak_memory_units[i] == (2 * k + m) * d for i in g.nodes)

    g = generate_graph("ring", 8)
    T = diameter(g)
    lo = run_titan(np.arange(8) / 8, g, T, 1, 1, record_internal=False)
    hi = run_titan(np.arange(8) / 8, g, T, 8, 1, record_internal=False)
    mem_lo = cost_report(lo.trace).peak_memory_units[1]
    mem_hi = cost_report(hi.trace).peak_memory_units[1]
    trade = (lo.recovery_rounds, hi.recovery_rounds, mem_lo, mem_hi) == (T * 8, T, 2 + 8, 2 * 8 + 8)
    ok = ok_units == 20 and ok_mem == 20 and trade
    report(9, ok, f"message units {ok_units}/20, peak memory {ok_mem}/20; k=1 vs k=m: rounds {lo.recovery_rounds} vs {hi.recovery_rounds}, memory {mem_lo} vs {mem_hi}")
    assert ok_units == 20 and ok_mem == 20
    assert trade


# ---------------------------------------------------------------------- 10

def test_c10_cli_determinism(tmp_path: Path, capsys):
    cfg = tmp_path / "consensus.json"
    cfg.write_text('{"graph": "ring-plus-chords:6:3:4", "inputs": [0.5, 1, 1.5, 2, 2.5, 3], "a": 4, "k": 2, "seed": 77}')
    audit_cfg = tmp_path / "audit.json"
    audit_cfg.write_text(
        '{"graph": "ring:5", "a": 10, "corrupted": "1", "seed": 5,'
        ' "audit": {"x": [1, 2, 3, 4, 5], "donor": 2, "recipient": 3, "delta": 0.5, "runs": 100}}'
    )
    sys_dir = tmp_path / "sys"
    commands = {
        "gen": ["gen", "--m", "4", "--p", "12", "--n", "3", "--seed", "9"],
        "consensus": ["consensus", "--config", str(cfg), "--trace"],
        "solve": ["solve", "--graph", "ring:4", "--data", str(sys_dir), "--k", "2", "--trace"],
        "audit": ["audit", "--config", str(audit_cfg)],
        "estimate-m": ["estimate-m", "--graph", "ring-plus-chords:9:2:5", "--m-bound", "15", "--seed", "3"],
        "graph-info": ["graph-info", "--graph", "star:6"],
    }
    mismatched = []
    for name, argv in commands.items():
        outputs = []
        for rep in range(2):
            out = sys_dir if name == "gen" and rep == 0 else tmp_path / f"{name}-{rep}"
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                code = cli_main([*argv, "--out", str(out)])
            assert code == 0, name
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "metadata.json"})
        if outputs[0] != outputs[1] or not outputs[0]:
            mismatched.append(name)
    capsys.readouterr()
    ok = not mismatched
    report(10, ok, f"byte-identical reports and traces for {len(commands) - len(mismatched)}/{len(commands)} commands")
    assert not mismatched


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
