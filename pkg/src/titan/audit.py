"""Monte Carlo checks of TITAN's privacy behaviour.

Two kinds of audit:

* uniformity: one-sample Kolmogorov-Smirnov test of perturbations or
  perturbed inputs against ``U[0, M)``;
* indistinguishability: run TITAN many times on two input vectors that agree
  on the corrupted nodes and on the total, extract scalar coordinates of the
  adversary's view from every run, and compare the two populations
  coordinate by coordinate with a two-sample KS test (Bonferroni-corrected).

Besides the raw observations (honest perturbed inputs as first seen and the
noise on every edge touching a corrupted node) the view is summarised by
two derived coordinates an adversary can always compute:

* ``sum``: the wrapped sum of every perturbed input it has gathered;
* ``component:<ids>``: for each connected piece of the symmetrised graph left
  after deleting the corrupted nodes, the wrapped sum of that piece's
  perturbed inputs with the observable part of its perturbations removed.
  Noise on edges inside a piece cancels, so this is the piece's input total.

With enough connectivity there is a single piece and both derived values are
fixed by the public total; when corrupted nodes cut the graph, piece totals
differ between equivalent inputs and the audit reports a leak.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from titan.errors import DomainError
from titan.graph import DirectedGraph, honest_components, weak_vertex_connectivity
from titan.modreal import ModulusContext
from titan.protocol import TitanResult, run_titan
from titan.simnet import EDGE_NOISE, TOPK_LISTS
from titan.solver import Partition

log = logging.getLogger(__name__)

MIN_SAMPLES = 500


@dataclass(frozen=True)
class SampleSet:
    label: str
    samples: np.ndarray
    modulus: float

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", arr)
        if arr.size and (arr.min() < 0 or arr.max() >= self.modulus):
            raise DomainError(f"samples of {self.label!r} leave [0, {self.modulus})")


@dataclass
class AuditReport:
    test: str
    statistic: float
    p_value: float
    threshold: float
    passed: bool
    sample_sizes: tuple[int, int] | tuple[int]
    expect_distinguishable: bool = False
    details: dict = field(default_factory=dict)

    @property
    def distinguishable(self) -> bool:
        return self.p_value < self.threshold

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["sample_sizes"] = list(self.sample_sizes)
        doc["distinguishable"] = self.distinguishable
        return doc


def uniformity_test(s: SampleSet, alpha: float = 0.01) -> AuditReport:
    """One-sample KS test of ``s`` against the uniform law on ``[0, modulus)``."""
    if s.samples.size == 0:
        raise DomainError("no samples to test")
    if s.samples.size < MIN_SAMPLES:
        warnings.warn(f"uniformity test on {s.samples.size} < {MIN_SAMPLES} samples has little power")
    res = stats.kstest(s.samples / s.modulus, "uniform")
    p = float(res.pvalue)
    return AuditReport(
        test=f"uniformity:{s.label}",
        statistic=float(res.statistic),
        p_value=p,
        threshold=alpha,
        passed=p >= alpha,
        sample_sizes=(int(s.samples.size),),
    )


def perturbation_samples(
    graph: DirectedGraph, T: int, k: int, a, x, node: int, runs: int, seed: int = 0
) -> tuple[SampleSet, SampleSet]:
    """Per-run ``t_node`` and ``x~_node`` over independent seeds, in real units."""
    t_vals, xt_vals, modulus = [], [], None
    for s in _seeds(seed, runs):
        res = run_titan(x, graph, T, k, a, seed=s, record_internal=False)
        out = res.outputs[node]
        t_vals.append(float(res.ctx.decode(out.perturbation[0])))
        xt_vals.append(float(res.ctx.decode(out.perturbed[0])))
        modulus = float(res.ctx.modulus)
    return (
        SampleSet(f"t_{node}", np.array(t_vals), modulus),
        SampleSet(f"x~_{node}", np.array(xt_vals), modulus),
    )


def _seeds(seed: int, n: int, offset: int = 0) -> list[int]:
    states = np.random.SeedSequence([int(seed) & (2**64 - 1), offset]).generate_state(n, np.uint64)
    return [int(s) for s in states]


def make_equivalent_inputs(x, corrupted, delta, donor: int, recipient: int, a, ctx: ModulusContext | None = None):
    """Move ``delta`` from honest ``donor`` to honest ``recipient``.

    Works on the exact grid so the total is preserved bit-for-bit.  Returns
    the new inputs as floats on the grid.
    """
    ctx = ctx or ModulusContext.exact(1)
    corrupted = set(corrupted)
    x = list(x)
    m = len(x)
    for node in (donor, recipient):
        if not 1 <= node <= m:
            raise DomainError(f"node {node} outside 1..{m}")
        if node in corrupted:
            raise DomainError(f"node {node} is corrupted; only honest inputs may change")
    if donor == recipient:
        raise DomainError("donor and recipient must differ")
    units = [ctx.quantize(v) for v in x]
    d = ctx.quantize(delta)
    a_units = ctx.quantize(a)
    units[donor - 1] -= d
    units[recipient - 1] += d
    for node in (donor, recipient):
        if not 0 <= units[node - 1] < a_units:
            raise DomainError(f"moving {delta} pushes node {node} outside [0, {a})")
    return [float(ctx.decode(u)) for u in units]


def make_equivalent_system(
    partition: Partition, corrupted, row: int, donor: int, recipient: int, position: int | None = None
) -> Partition:
    """Move equation ``row`` of honest ``donor`` into honest ``recipient``'s block.

    The stacked rows form the same multiset, so the summed Gram and moment
    terms and the least-squares solution are unchanged.  ``position`` is the
    insertion index in the recipient block (default: append).
    """
    corrupted = set(corrupted)
    m = partition.m
    for node in (donor, recipient):
        if not 1 <= node <= m:
            raise DomainError(f"node {node} outside 1..{m}")
        if node in corrupted:
            raise DomainError(f"node {node} is corrupted; its equations are fixed")
    if donor == recipient:
        raise DomainError("donor and recipient must differ")
    A_j, b_j = partition.blocks[donor - 1]
    if A_j.shape[0] < 2:
        raise DomainError(f"node {donor} needs at least two equations to give one away")
    if not 0 <= row < A_j.shape[0]:
        raise DomainError(f"row {row} outside node {donor}'s {A_j.shape[0]} equations")
    A_l, b_l = partition.blocks[recipient - 1]
    pos = A_l.shape[0] if position is None else position
    if not 0 <= pos <= A_l.shape[0]:
        raise DomainError(f"insert position {pos} outside 0..{A_l.shape[0]}")
    blocks = list(partition.blocks)
    blocks[donor - 1] = (np.delete(A_j, row, axis=0), np.delete(b_j, row))
    blocks[recipient - 1] = (np.insert(A_l, pos, A_j[row], axis=0), np.insert(b_l, pos, b_j[row]))
    return Partition(tuple(blocks))


def view_coordinates(result: TitanResult, graph: DirectedGraph) -> dict[str, float]:
    """Scalar coordinates of the corrupted nodes' view for one run (in units)."""
    view = result.view
    ctx = result.ctx
    corrupted = view.corrupted
    d = result.input_units.shape[1]
    coords: dict[str, float] = {}
    noise: dict[tuple[int, int], np.ndarray] = {}
    seen: dict[int, np.ndarray] = {}
    for msg in sorted(view.messages(), key=lambda mm: (mm.round, mm.sender, mm.receiver)):
        payload = msg.payload
        if payload.kind == EDGE_NOISE:
            noise[(msg.sender, msg.receiver)] = payload.values
        elif payload.kind == TOPK_LISTS:
            values, ids, present = payload.values, payload.ids, payload.present
            for c in range(d):
                for v, i, p in zip(values[c], ids[c], present[c]):
                    i = int(i)
                    if p and i not in corrupted:
                        arr = seen.setdefault(i, np.full(d, np.nan))
                        if np.isnan(arr[c]):
                            arr[c] = v
    for (i, j), vals in sorted(noise.items()):
        for c in range(d):
            coords[f"r[{i}->{j}][{c}]"] = float(vals[c])
    for i, vals in sorted(seen.items()):
        for c in range(d):
            coords[f"xt[{i}][{c}]"] = float(vals[c])

    own = {c: result.outputs[c].perturbed for c in corrupted}
    honest = [i for i in graph.nodes if i not in corrupted]
    if all(i in seen for i in honest):
        gathered = [seen[i].astype(np.float64) for i in honest] + [own[c] for c in corrupted]
        if not any(np.isnan(g).any() for g in gathered):
            units = np.stack([np.asarray(g).astype(ctx.dtype) for g in gathered])
            total = ctx.sum(units, axis=0)
            for c in range(d):
                coords[f"sum[{c}]"] = float(total[c])
    for comp in honest_components(graph, corrupted):
        if not all(i in seen and not np.isnan(seen[i]).any() for i in comp):
            continue
        acc = np.zeros(d, dtype=ctx.dtype)
        for i in comp:
            acc = ctx.add(acc, seen[i].astype(ctx.dtype))
            for j in graph.in_neighbors(i):
                if j in corrupted:
                    acc = ctx.sub(acc, noise[(j, i)])
            for j in graph.out_neighbors(i):
                if j in corrupted:
                    acc = ctx.add(acc, noise[(i, j)])
        label = ",".join(str(i) for i in sorted(comp))
        for c in range(d):
            coords[f"component[{label}][{c}]"] = float(acc[c])
    return coords


@dataclass(frozen=True)
class AuditConfig:
    graph: DirectedGraph
    T: int
    k: int
    a: float
    corrupted: frozenset[int]
    tau: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "corrupted", frozenset(int(c) for c in self.corrupted))

    @property
    def effective_tau(self) -> int:
        return len(self.corrupted) if self.tau is None else self.tau


def view_indistinguishability_test(
    config: AuditConfig,
    x,
    x_prime,
    runs: int = 1000,
    alpha: float = 0.01,
    seed: int = 0,
    expect_distinguishable: bool = False,
) -> AuditReport:
    """Two-sample KS comparison of adversary views under ``x`` and ``x_prime``.

    ``passed`` means "behaved as expected": indistinguishable for a normal
    audit, distinguishable when ``expect_distinguishable`` is set (negative
    controls).
    """
    g = config.graph
    ctx = ModulusContext.exact(1)
    if len(x) != g.m or len(x_prime) != g.m:
        raise DomainError(f"both input vectors need {g.m} entries")
    for c in config.corrupted:
        if ctx.quantize(x[c - 1]) != ctx.quantize(x_prime[c - 1]):
            raise DomainError(f"corrupted node {c} has different inputs in the two worlds")
    if runs < MIN_SAMPLES:
        warnings.warn(f"{runs} runs per side is below the recommended {MIN_SAMPLES}")
    kappa = weak_vertex_connectivity(g)
    tau = config.effective_tau
    if kappa < tau + 1:
        warnings.warn(f"weak vertex-connectivity {kappa} < tau + 1 = {tau + 1}; privacy is not guaranteed")

    def population(inputs, offset):
        rows = []
        for s in _seeds(seed, runs, offset):
            res = run_titan(
                inputs, g, config.T, config.k, config.a, seed=s,
                corrupted=config.corrupted, tau=config.tau, record_internal=False,
            )
            rows.append(view_coordinates(res, g))
        return rows

    left, right = population(x, 1), population(x_prime, 2)
    names = sorted(set().union(*left) & set().union(*right))
    if not names:
        raise DomainError("the adversary view has no coordinates to compare")
    worst = (None, 0.0, 1.0)
    pvalues = {}
    for name in names:
        a_s = np.array([r[name] for r in left if name in r])
        b_s = np.array([r[name] for r in right if name in r])
        res = stats.ks_2samp(a_s, b_s)
        pvalues[name] = float(res.pvalue)
        if res.pvalue < worst[2]:
            worst = (name, float(res.statistic), float(res.pvalue))
    corrected = min(1.0, worst[2] * len(names))
    distinguishable = corrected < alpha
    log.info("audit: %d coordinates, worst %s p=%.3g (corrected %.3g)", len(names), worst[0], worst[2], corrected)
    return AuditReport(
        test="view-indistinguishability",
        statistic=worst[1],
        p_value=corrected,
        threshold=alpha,
        passed=distinguishable if expect_distinguishable else not distinguishable,
        sample_sizes=(len(left), len(right)),
        expect_distinguishable=expect_distinguishable,
        details={
            "coordinates": len(names),
            "worst_coordinate": worst[0],
            "raw_p_value": worst[2],
            "kappa": kappa,
            "tau": tau,
        },
    )


def report_bundle_json(reports: list[AuditReport]) -> str:
    return json.dumps([r.to_json() for r in reports], sort_keys=True, indent=2)
