"""Private least-squares solver for a horizontally partitioned system.

Node ``i`` holds rows ``(A_i, b_i)``.  It forms its local normal-equation
terms ``A_i^T A_i`` and ``A_i^T b_i``, shifts every entry by a public offset
``c`` so it lands in ``[0, a)``, and the network aggregates them entry-wise
with TITAN.  Each node then removes ``m * c`` and solves
``(sum A_i^T A_i) x = sum A_i^T b_i``.

Only the upper triangle of the symmetric Gram term is aggregated; the result
is mirrored afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from titan.errors import DomainError, ProtocolError, RankError
from titan.graph import DirectedGraph
from titan.modreal import EXACT, ModulusContext
from titan.protocol import TitanResult, make_context, run_titan
from titan.simnet import AdversaryView, RoundTrace

RANK_RTOL = 1e-12


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    b: np.ndarray
    check_rank: bool = True

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise DomainError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise DomainError("non-finite entries in A or b")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.check_rank and np.linalg.matrix_rank(A) < A.shape[1]:
            raise RankError(f"A^T A is rank deficient (rank {np.linalg.matrix_rank(A)} < n = {A.shape[1]})")

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class Partition:
    blocks: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        blocks = tuple(
            (np.atleast_2d(np.asarray(A, dtype=np.float64)), np.asarray(b, dtype=np.float64).reshape(-1))
            for A, b in self.blocks
        )
        if not blocks:
            raise DomainError("a partition needs at least one block")
        n = blocks[0][0].shape[1]
        for i, (A, b) in enumerate(blocks, start=1):
            if A.shape[1] != n or A.shape[0] != b.shape[0]:
                raise DomainError(f"block {i} has inconsistent shapes {A.shape}, {b.shape}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def n(self) -> int:
        return self.blocks[0][0].shape[1]

    @property
    def row_counts(self) -> tuple[int, ...]:
        return tuple(A.shape[0] for A, _ in self.blocks)

    def stack(self, check_rank: bool = True) -> LinearSystem:
        A = np.vstack([A for A, _ in self.blocks])
        b = np.concatenate([b for _, b in self.blocks])
        return LinearSystem(A, b, check_rank=check_rank)


@dataclass(frozen=True)
class LocalUpdate:
    gram: np.ndarray
    moment: np.ndarray

    def entries(self) -> np.ndarray:
        """Upper-triangle Gram entries followed by the moment vector."""
        iu = np.triu_indices(self.gram.shape[0])
        return np.concatenate([self.gram[iu], self.moment])


def partition_system(system: LinearSystem, row_counts: Sequence[int]) -> Partition:
    counts = [int(c) for c in row_counts]
    if any(c < 0 for c in counts) or sum(counts) != system.p:
        raise DomainError(f"row counts {counts} do not add up to p = {system.p}")
    edges = np.cumsum([0, *counts])
    return Partition(tuple((system.A[lo:hi], system.b[lo:hi]) for lo, hi in zip(edges[:-1], edges[1:])))


def even_row_counts(p: int, m: int) -> list[int]:
    base, extra = divmod(p, m)
    return [base + (1 if i < extra else 0) for i in range(m)]


def _symmetric(G: np.ndarray) -> np.ndarray:
    upper = np.triu(G)
    return upper + np.triu(G, 1).T


def local_update(block: tuple[np.ndarray, np.ndarray], ctx: ModulusContext | None = None) -> LocalUpdate:
    """``A_i^T A_i`` and ``A_i^T b_i``, snapped to the grid of ``ctx`` if exact."""
    A, b = block
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    gram = _symmetric(A.T @ A)
    moment = A.T @ np.asarray(b, dtype=np.float64).reshape(-1)
    if ctx is not None and ctx.is_exact:
        gram = ctx.decode(ctx.quantize(gram))
        moment = ctx.decode(ctx.quantize(moment))
    return LocalUpdate(gram, moment)


def choose_shift_and_range(updates: Sequence[LocalUpdate], slack: float = 2.0) -> tuple[int, int]:
    """Public offset ``c`` and range bound ``a`` covering every shifted entry.

    ``c`` is the smallest integer with ``entry + c >= 0`` everywhere and ``a``
    is ``slack`` times the largest shifted entry, rounded up to an integer.
    Both are integers so they sit on any power-of-two grid.
    """
    entries = np.concatenate([u.entries() for u in updates])
    if not np.all(np.isfinite(entries)):
        raise DomainError("non-finite entries in local updates")
    lo, hi = float(entries.min()), float(entries.max())
    c = max(0, math.ceil(-lo))
    a = max(1, math.ceil(slack * (hi + c)))
    if a <= hi + c:
        a = math.floor(hi + c) + 1
    return c, a


def check_range(updates: Sequence[LocalUpdate], c, a) -> bool:
    entries = np.concatenate([u.entries() for u in updates]) + c
    return bool(np.all(entries >= 0) and np.all(entries < a))


def direct_lssol(system: LinearSystem) -> np.ndarray:
    """Least-squares solution via a QR factorisation of ``A``."""
    Q, R = np.linalg.qr(system.A, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= RANK_RTOL * diag.max():
        raise RankError("A^T A is numerically singular")
    return np.linalg.solve(R, Q.T @ system.b)


def solve_normal(gram_sum: np.ndarray, moment_sum: np.ndarray) -> np.ndarray:
    """Solve ``(sum gram) x = sum moment``; the left side must be positive definite."""
    try:
        L = np.linalg.cholesky(gram_sum)
    except np.linalg.LinAlgError:
        raise RankError("aggregated Gram matrix is not positive definite") from None
    diag = np.abs(np.diag(L))
    if diag.min() <= math.sqrt(RANK_RTOL) * diag.max():
        raise RankError("aggregated Gram matrix is numerically singular")
    y = np.linalg.solve(L, moment_sum)
    return np.linalg.solve(L.T, y)


@dataclass
class SolveResult:
    x: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    node_solutions: dict[int, np.ndarray]
    offset: int | float
    a: int | float
    recovery_rounds: int
    total_rounds: int
    views: list[AdversaryView] = field(default_factory=list)
    traces: list[RoundTrace] = field(default_factory=list)
    gram_sum_units: np.ndarray | None = None
    moment_sum_units: np.ndarray | None = None


def _chunk_seed(seed: int, chunk: int) -> int:
    if chunk == 0:
        return seed
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), chunk]).generate_state(1, np.uint64)[0])


def solve_private(
    partition: Partition,
    graph: DirectedGraph,
    T: int,
    k: int,
    a,
    seed: int = 0,
    *,
    offset=0,
    backend: str = EXACT,
    scale: int | None = None,
    corrupted=frozenset(),
    tau: int | None = None,
    chunk_size: int = 1024,
    record_internal: bool = False,
    keep_traces: bool = True,
) -> SolveResult:
    """Aggregate every node's local update with TITAN and solve at each node.

    ``offset`` and ``a`` are public parameters: every shifted entry must lie in
    ``[0, a)``.  Coordinates are processed in blocks of ``chunk_size``; each
    block is one TITAN run with its own noise seed.
    """
    m, n = partition.m, partition.n
    if m != graph.m:
        raise DomainError(f"partition has {m} blocks but the graph has {graph.m} nodes")
    ctx = make_context(m, a, backend, scale)
    updates = [local_update(block, ctx) for block in partition.blocks]
    entries = np.stack([u.entries() for u in updates])
    if ctx.is_exact:
        c_units = ctx.encode(offset)
        units = ctx.quantize(entries) + c_units
        a_units = ctx.modulus_units // m
    else:
        c_units = float(offset)
        units = entries + c_units
        a_units = float(a)
    if np.any(units < 0) or np.any(units >= a_units):
        raise DomainError("shifted local-update entries fall outside [0, a); raise the offset or a")

    D = units.shape[1]
    aggregates = {i: [] for i in graph.nodes}
    views, traces, rounds = [], [], None
    for chunk, lo in enumerate(range(0, D, chunk_size)):
        res: TitanResult = run_titan(
            units[:, lo : lo + chunk_size],
            graph,
            T,
            k,
            a,
            seed=_chunk_seed(seed, chunk),
            corrupted=corrupted,
            tau=tau,
            backend=backend,
            scale=scale,
            input_units=True,
            record_internal=record_internal,
        )
        for i, out in res.outputs.items():
            aggregates[i].append(out.aggregate)
        rounds = (res.recovery_rounds, res.total_rounds)
        if corrupted:
            views.append(res.view)
        if keep_traces:
            traces.append(res.trace)
        del res

    iu = np.triu_indices(n)
    n_gram = len(iu[0])
    solutions, sums = {}, {}
    for i in graph.nodes:
        agg = np.concatenate(aggregates[i])
        if ctx.is_exact:
            total = agg.astype(object) - m * c_units
            decoded = np.array([float(v) / ctx.scale for v in total])
        else:
            total = agg - m * c_units
            decoded = total
        gram = np.zeros((n, n))
        gram[iu] = decoded[:n_gram]
        gram = _symmetric(gram)
        moment = decoded[n_gram:]
        sums[i] = (gram, moment, total)
        solutions[i] = solve_normal(gram, moment)

    gram, moment, total = sums[1]
    if not all(np.array_equal(sums[i][2], total) for i in graph.nodes):
        raise ProtocolError("nodes disagree on the aggregate; is T below the graph diameter?")
    return SolveResult(
        x=solutions[1],
        X=gram / m,
        Y=moment / m,
        node_solutions=solutions,
        offset=offset,
        a=a,
        recovery_rounds=rounds[0],
        total_rounds=rounds[1],
        views=views,
        traces=traces,
        gram_sum_units=total[:n_gram] if ctx.is_exact else None,
        moment_sum_units=total[n_gram:] if ctx.is_exact else None,
    )
