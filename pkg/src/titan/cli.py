"""Command-line front end.

Every command reads an optional JSON config (``--config``) and lets flags
override individual keys.  Reports are JSON with sorted keys and no
timestamps, so re-running a command with the same config and seed gives
byte-identical output; run metadata (time, versions) goes to a separate
``metadata.json``.

Exit codes: 0 success, 1 precondition violation, 2 verification mismatch,
3 I/O or parse error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import platform
import sys
import warnings
from pathlib import Path

import numpy as np

from titan import audit as audit_mod
from titan import io
from titan.errors import DomainError, ParseError, ProtocolError, RankError, TitanError
from titan.graph import (
    DirectedGraph,
    diameter,
    generate_graph,
    is_strongly_connected,
    load_graph,
    weak_vertex_connectivity,
)
from titan.modreal import EXACT, FLOAT
from titan.protocol import estimate_node_count, run_titan
from titan.simnet import cost_report
from titan.solver import (
    choose_shift_and_range,
    direct_lssol,
    even_row_counts,
    local_update,
    solve_private,
)

log = logging.getLogger("titan")

EXIT_OK, EXIT_PRECONDITION, EXIT_MISMATCH, EXIT_IO = 0, 1, 2, 3
GEN_ATTEMPTS = 10


class Mismatch(Exception):
    """A run finished but failed its own verification."""


# ---------------------------------------------------------------- config

def _load_config(path) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    doc = io.read_json(p)
    if not isinstance(doc, dict):
        raise ParseError(f"{p}: top level must be an object")
    return doc, p.resolve().parent


def _parse_ids(text) -> list[int]:
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return sorted(int(v) for v in text)
    parts = [t for t in str(text).replace(" ", "").split(",") if t]
    try:
        return sorted(int(t) for t in parts)
    except ValueError:
        raise ParseError(f"bad node list {text!r}") from None


def _parse_values(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ParseError(f"bad value list {text!r}") from None


def resolve_graph(spec, base: Path) -> DirectedGraph:
    """Graph from a file path, ``kind:m[:seed[:chords]]``, or an inline object."""
    if spec is None:
        raise DomainError("no graph given (use --graph or a 'graph' config key)")
    if isinstance(spec, dict):
        if "edges" in spec:
            return DirectedGraph(int(spec["m"]), tuple(tuple(e) for e in spec["edges"]))
        if "kind" in spec:
            return generate_graph(spec["kind"], int(spec["m"]), int(spec.get("seed", 0)), int(spec.get("chords", 0)))
        if "path" in spec:
            return load_graph(base / spec["path"])
        raise ParseError("graph object needs 'edges', 'kind' or 'path'")
    spec = str(spec)
    for path in (base / spec, Path(spec)):
        if path.exists():
            return load_graph(path)
    if ":" in spec:
        kind, *rest = spec.split(":")
        try:
            nums = [int(v) for v in rest]
        except ValueError:
            raise ParseError(f"bad graph spec {spec!r}") from None
        return generate_graph(kind, *nums)
    raise OSError(f"graph file {spec!r} not found")


def _merge(config: dict, args: argparse.Namespace, keys) -> dict:
    out = dict(config)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _common_params(cfg: dict, g: DirectedGraph) -> dict:
    T = cfg.get("T")
    if T is None:
        if not is_strongly_connected(g):
            raise DomainError("graph is not strongly connected; T cannot default to its diameter")
        T = diameter(g)
    k = int(cfg.get("k", 1))
    backend = cfg.get("backend", EXACT)
    if backend not in (EXACT, FLOAT):
        raise DomainError(f"backend must be {EXACT!r} or {FLOAT!r}")
    if int(T) < 1 or not 1 <= k <= g.m:
        raise DomainError(f"need T >= 1 and 1 <= k <= m = {g.m}")
    return {
        "T": int(T),
        "k": k,
        "seed": int(cfg.get("seed", 0)),
        "corrupted": _parse_ids(cfg.get("corrupted")),
        "tau": cfg.get("tau"),
        "backend": backend,
    }


def _num(v):
    """Keep integers as integers in reports."""
    if isinstance(v, (int, np.integer)):
        return int(v)
    f = float(v)
    return int(f) if f.is_integer() and abs(f) < 2**53 else f


# --------------------------------------------------------------- outputs

def _emit(args, report: dict, files: dict[str, str] | None = None, summary: str | None = None) -> None:
    text = io.dumps(report)
    if args.out is None:
        sys.stdout.write(text)
        return
    out = io.ensure_dir(args.out)
    (out / "report.json").write_text(text)
    for name, body in (files or {}).items():
        (out / name).write_text(body)
    meta = {
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "command": report.get("command"),
    }
    (out / "metadata.json").write_text(io.dumps(meta))
    if summary:
        print(summary)


# -------------------------------------------------------------- commands

def cmd_gen(args, cfg: dict, base: Path) -> int:
    gen = dict(cfg.get("gen", {}))
    for key in ("m", "p", "n"):
        if getattr(args, key) is not None:
            gen[key] = getattr(args, key)
    if args.identity:
        gen["identity"] = True
    try:
        m, p, n = int(gen["m"]), int(gen["p"]), int(gen["n"])
    except KeyError as exc:
        raise DomainError(f"gen needs {exc.args[0]!r}") from None
    seed = int(cfg.get("seed", 0)) if args.seed is None else args.seed
    mean = float(gen.get("mean", 0.0))
    var = float(gen.get("variance", 2.0))
    if p < n:
        raise DomainError(f"need p >= n, got p={p}, n={n}")
    if m < 1 or m > p:
        raise DomainError(f"need 1 <= m <= p, got m={m}")
    attempts = 0
    if gen.get("identity"):
        if p != n:
            raise DomainError("the identity system needs p == n")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        A = np.eye(n)
        b = rng.normal(mean, math.sqrt(var), n)
    else:
        for attempt in range(GEN_ATTEMPTS):
            rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
            A = rng.normal(mean, math.sqrt(var), (p, n))
            b = rng.normal(mean, math.sqrt(var), p)
            attempts = attempt + 1
            if np.linalg.matrix_rank(A) == n:
                break
        else:
            raise RankError(f"no full-rank system after {GEN_ATTEMPTS} attempts")
    counts = even_row_counts(p, m)
    out = io.ensure_dir(args.out or ".")
    io.write_matrix_csv(out / "A.csv", A)
    io.write_matrix_csv(out / "b.csv", b.reshape(-1, 1))
    io.write_partition(out / "partition.json", counts)
    report = {
        "command": "gen",
        "config": {"m": m, "p": p, "n": n, "mean": mean, "variance": var, "seed": seed,
                   "identity": bool(gen.get("identity", False))},
        "attempts": attempts,
        "row_counts": counts,
        "files": ["A.csv", "b.csv", "partition.json"],
    }
    (out / "gen.json").write_text(io.dumps(report))
    print(f"wrote {p}x{n} system in {m} blocks to {out}")
    return EXIT_OK


def cmd_consensus(args, cfg: dict, base: Path) -> int:
    g = resolve_graph(cfg.get("graph"), base)
    params = _common_params(cfg, g)
    if cfg.get("inputs") is None:
        raise DomainError("consensus needs per-node inputs (--inputs or 'inputs')")
    inputs = cfg["inputs"]
    if isinstance(inputs, str) and (base / inputs).exists():
        inputs = io.read_vector_csv(base / inputs).tolist()
    x = _parse_values(inputs)
    if len(x) != g.m:
        raise DomainError(f"{len(x)} inputs for {g.m} nodes")
    a = cfg.get("a")
    if a is None:
        a = math.floor(max(x)) + 1
    res = run_titan(
        x, g, params["T"], params["k"], float(a), seed=params["seed"],
        corrupted=params["corrupted"], tau=params["tau"], backend=params["backend"],
        record_internal=False,
    )
    costs = cost_report(res.trace)
    exact = res.ctx.is_exact
    report = {
        "command": "consensus",
        "config": {"graph": cfg.get("graph"), "m": g.m, "a": _num(a), "inputs": x, **params},
        "averages": {str(i): float(res.ctx.decode(out.aggregate[0])) / g.m for i, out in res.outputs.items()},
        "agree": res.agree,
        "recovery_rounds": res.recovery_rounds,
        "total_rounds": res.total_rounds,
        "cost": costs.to_json(),
    }
    if exact:
        avg = res.average_exact(1)[0]
        direct = res.direct_average_exact()[0]
        report["average_exact"] = str(avg)
        report["direct_average_exact"] = str(direct)
        report["matches_direct"] = avg == direct
    files = {"trace.csv": res.trace.to_csv()} if args.trace else {}
    _emit(args, report, files, f"average {report['averages']['1']!r}, agree={res.agree}, "
          f"recovery rounds {res.recovery_rounds}")
    if not res.agree or (exact and not report["matches_direct"]):
        raise Mismatch("nodes disagree or the aggregate differs from the direct average")
    return EXIT_OK


def cmd_solve(args, cfg: dict, base: Path) -> int:
    g = resolve_graph(cfg.get("graph"), base)
    params = _common_params(cfg, g)
    data = cfg.get("data")
    if data is None:
        raise DomainError("solve needs a system directory (--data or 'data')")
    system, part = io.load_system_dir(base / data)
    if part.m != g.m:
        raise DomainError(f"partition has {part.m} blocks but the graph has {g.m} nodes")
    c, a = cfg.get("offset"), cfg.get("a")
    if c is None or a is None:
        c_auto, a_auto = choose_shift_and_range([local_update(blk) for blk in part.blocks])
        c = c_auto if c is None else c
        a = a_auto if a is None else a
    tol = float(cfg.get("tolerance", 1e-6))
    res = solve_private(
        part, g, params["T"], params["k"], a, seed=params["seed"], offset=c,
        backend=params["backend"], corrupted=params["corrupted"], tau=params["tau"],
        chunk_size=int(cfg.get("chunk_size", 1024)),
    )
    direct = direct_lssol(system)
    rel = float(np.linalg.norm(res.x - direct) / np.linalg.norm(direct))
    costs = [cost_report(t) for t in res.traces]
    units = {str(i): sum(cr.message_units[i] for cr in costs) for i in g.nodes}
    peak = {str(i): max(cr.peak_memory_units[i] for cr in costs) for i in g.nodes}
    report = {
        "command": "solve",
        "config": {"graph": cfg.get("graph"), "data": str(data), "m": g.m, "a": _num(a), "offset": _num(c),
                   "tolerance": tol, **params},
        "x": res.x.tolist(),
        "direct": direct.tolist(),
        "relative_error": rel,
        "within_tolerance": rel <= tol,
        "recovery_rounds": res.recovery_rounds,
        "total_rounds": res.total_rounds,
        "chunks": len(res.traces),
        "cost": {"message_units": units, "peak_memory_units_per_chunk": peak},
    }
    files = {f"trace_{i}.csv": t.to_csv() for i, t in enumerate(res.traces)} if args.trace else {}
    _emit(args, report, files, f"relative error {rel:.3e}, recovery rounds {res.recovery_rounds}")
    if rel > tol:
        raise Mismatch(f"relative error {rel:.3e} exceeds {tol:g}")
    return EXIT_OK


def cmd_audit(args, cfg: dict, base: Path) -> int:
    g = resolve_graph(cfg.get("graph"), base)
    params = _common_params(cfg, g)
    spec = dict(cfg.get("audit", {}))
    if args.runs is not None:
        spec["runs"] = args.runs
    runs = int(spec.get("runs", 1000))
    alpha = float(spec.get("alpha", 0.01))
    if "x" not in spec:
        raise DomainError("audit config needs 'audit.x'")
    x = _parse_values(spec["x"])
    a = float(cfg.get("a", math.floor(max(x)) + 1))
    if "x_prime" in spec:
        xp = _parse_values(spec["x_prime"])
    else:
        xp = audit_mod.make_equivalent_inputs(
            x, params["corrupted"], spec.get("delta", 0.5), int(spec.get("donor", 0)),
            int(spec.get("recipient", 0)), a,
        )
    expect = bool(spec.get("expect_distinguishable", False))
    conf = audit_mod.AuditConfig(g, params["T"], params["k"], a, frozenset(params["corrupted"]), params["tau"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        reports = [audit_mod.view_indistinguishability_test(conf, x, xp, runs, alpha, params["seed"], expect)]
        node = spec.get("uniformity_node")
        if node is not None:
            t_s, xt_s = audit_mod.perturbation_samples(g, params["T"], params["k"], a, x, int(node), runs, params["seed"])
            reports += [audit_mod.uniformity_test(t_s, alpha), audit_mod.uniformity_test(xt_s, alpha)]
    report = {
        "command": "audit",
        "config": {"graph": cfg.get("graph"), "m": g.m, "a": _num(a), "x": x, "x_prime": xp,
                   "runs": runs, "alpha": alpha, "expect_distinguishable": expect, **params},
        "reports": [r.to_json() for r in reports],
        "warnings": sorted({str(w.message) for w in caught}),
        "all_passed": all(r.passed for r in reports),
    }
    table = "\n".join(
        f"{'PASS' if r.passed else 'FAIL'}  {r.test:<28} p={r.p_value:.4g}"
        + ("  (expected distinguishable)" if r.expect_distinguishable else "")
        for r in reports
    )
    _emit(args, report, None, table)
    if args.out is None:
        print(table, file=sys.stderr)
    if not report["all_passed"]:
        raise Mismatch("audit outcome differs from the expectation")
    return EXIT_OK


def cmd_estimate_m(args, cfg: dict, base: Path) -> int:
    g = resolve_graph(cfg.get("graph"), base)
    bound = cfg.get("m_bound")
    if bound is None:
        raise DomainError("estimate-m needs --m-bound")
    bound = int(bound)
    T = int(cfg["T"]) if cfg.get("T") is not None else diameter(g)
    k = int(cfg.get("k", 1))
    seed = int(cfg.get("seed", 0))
    if bound < g.m:
        warnings.warn(f"m_bound {bound} is below the true node count; the estimate is meaningless")
    est = estimate_node_count(g, bound, T, k, seed)
    report = {
        "command": "estimate-m",
        "config": {"graph": cfg.get("graph"), "m_bound": bound, "T": T, "k": k, "seed": seed},
        "estimate": est,
        "m": g.m,
        "matches": est == g.m,
    }
    _emit(args, report, None, f"estimated m = {est}")
    if est != g.m:
        raise Mismatch(f"estimate {est} differs from m = {g.m}")
    return EXIT_OK


def cmd_graph_info(args, cfg: dict, base: Path) -> int:
    g = resolve_graph(cfg.get("graph"), base)
    sc = is_strongly_connected(g)
    report = {
        "command": "graph-info",
        "graph": cfg.get("graph"),
        "m": g.m,
        "edges": len(g.edges),
        "strongly_connected": sc,
        "diameter": diameter(g) if sc else None,
        "weak_vertex_connectivity": weak_vertex_connectivity(g),
    }
    _emit(args, report, None, json.dumps({k: report[k] for k in ("strongly_connected", "diameter", "weak_vertex_connectivity")}))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "consensus": cmd_consensus,
    "solve": cmd_solve,
    "audit": cmd_audit,
    "estimate-m": cmd_estimate_m,
    "graph-info": cmd_graph_info,
}

OVERRIDES = ("graph", "T", "k", "a", "offset", "corrupted", "backend", "inputs", "data", "m_bound", "tau")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="titan", description="Private finite-time average consensus over directed graphs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--graph", help="edge-list file or kind:m[:seed[:chords]]")
        p.add_argument("--T", type=int, help="rounds per Top-k sweep (default: graph diameter)")
        p.add_argument("--k", type=int)
        p.add_argument("--a", type=float, help="inputs lie in [0, a)")
        p.add_argument("--offset", type=float, help="public shift for solver entries")
        p.add_argument("--corrupted", help='comma-separated node ids, e.g. "1,3"')
        p.add_argument("--tau", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--backend", choices=(EXACT, FLOAT))
        p.add_argument("--trace", action="store_true", help="also write the round trace CSV")
        if name == "gen":
            p.add_argument("--m", type=int)
            p.add_argument("--p", type=int)
            p.add_argument("--n", type=int)
            p.add_argument("--identity", action="store_true")
        if name == "consensus":
            p.add_argument("--inputs", help="comma-separated values or a CSV file")
        if name == "solve":
            p.add_argument("--data", help="directory with A.csv, b.csv, partition.json")
        if name == "audit":
            p.add_argument("--runs", type=int)
        if name == "estimate-m":
            p.add_argument("--m-bound", dest="m_bound", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, base = _load_config(args.config)
        cfg = _merge(cfg, args, OVERRIDES + ("seed",))
        return COMMANDS[args.command](args, cfg, base)
    except Mismatch as exc:
        print(f"verification mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ProtocolError as exc:
        print(f"verification mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (DomainError, TitanError, ValueError) as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
