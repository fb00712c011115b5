"""TITAN: private finite-time average consensus over a directed graph.

A run has two phases:

1. Obfuscation (round 0).  Node ``i`` sends a uniform noise ``r_ij`` on
   ``[0, M)`` to every out-neighbour, where ``M = m * a``.  Its perturbation is
   ``t_i = mod(sum of received noise - sum of sent noise, M)`` and it
   publishes ``x~_i = mod(x_i + t_i, M)``.  Every noise is added once and
   subtracted once, so ``mod(sum t_i, M) = 0``.
2. Recovery.  ``ceil(m/k)`` sweeps of top-k consensus, ``T`` rounds each.
   Every sweep gathers the ``k`` largest perturbed values not yet recovered;
   ids already recovered are excluded.  Afterwards each node holds all ``m``
   perturbed values and returns ``mod(sum x~_i, M) / m``, which equals the
   exact average because ``sum x_i < M``.

Vector inputs run one independent instance per coordinate.  Coordinates are
packed into a single message per edge and round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from titan.errors import DomainError, ProtocolError
from titan.graph import DirectedGraph, is_strongly_connected
from titan.modreal import EXACT, ModulusContext
from titan.simnet import (
    EDGE_NOISE,
    TOPK_LISTS,
    AdversaryView,
    EdgeNoise,
    Message,
    NodeProgram,
    RoundTrace,
    RunConfig,
    TopkLists,
    run_protocol,
)

OBFUSCATION = "obfuscation"
RECOVERY = "recovery"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# top-k selection


def merge_topk(values: np.ndarray, ids: np.ndarray, present: np.ndarray, k: int):
    """Keep the ``k`` largest distinct ``(value, id)`` entries of each row.

    Rows are ordered by value, then by id, both descending, so ties go to the
    larger id.  Entries sharing an id are collapsed; within one sweep an id
    always carries the same value, so duplicates are adjacent after sorting.
    Returns ``(values, ids, present)`` of shape ``(d, k)``.
    """
    values = np.asarray(values)
    ids = np.asarray(ids, dtype=np.int64)
    present = np.asarray(present, dtype=bool)
    d, c = values.shape
    low = -np.inf if values.dtype.kind == "f" else np.iinfo(np.int64).min
    v = np.where(present, values, low)
    i = np.where(present, ids, -1)
    order = np.lexsort((i, v), axis=-1)[:, ::-1]
    v = np.take_along_axis(v, order, axis=1)
    i = np.take_along_axis(i, order, axis=1)
    p = np.take_along_axis(present, order, axis=1)
    if c > 1:
        dup = np.zeros_like(p)
        dup[:, 1:] = p[:, 1:] & p[:, :-1] & (i[:, 1:] == i[:, :-1])
        p &= ~dup
    rank = np.cumsum(p, axis=1) - 1
    rows, cols = np.nonzero(p & (rank < k))
    slots = rank[rows, cols]
    out_v = np.zeros((d, k), dtype=values.dtype)
    out_i = np.zeros((d, k), dtype=np.int64)
    out_p = np.zeros((d, k), dtype=bool)
    out_v[rows, slots] = v[rows, cols]
    out_i[rows, slots] = i[rows, cols]
    out_p[rows, slots] = True
    return out_v, out_i, out_p


def _as_arrays(L: Sequence, ell: Sequence):
    if len(L) != len(ell):
        raise ProtocolError(f"value list has length {len(L)} but id list has length {len(ell)}")
    for v, i in zip(L, ell):
        if (v is None) != (i is None):
            raise ProtocolError("empty slots of the value and id lists do not line up")
    present = np.array([[v is not None for v in L]], dtype=bool)
    vals = np.array([[v if v is not None else 0 for v in L]])
    ids = np.array([[i if i is not None else 0 for i in ell]], dtype=np.int64)
    return vals, ids, present


def topk_merge(own: tuple[Sequence, Sequence], neighbor_lists: Sequence[tuple[Sequence, Sequence]], k: int):
    """List-level form of :func:`merge_topk` for a single coordinate.

    ``own`` and every neighbour entry are ``(L, ell)`` pairs of equal length
    with ``None`` marking empty slots.  Returns the merged ``(L, ell)``.
    """
    parts = [_as_arrays(*own), *(_as_arrays(*nb) for nb in neighbor_lists)]
    for part in parts:
        if part[0].shape[1] != k:
            raise ProtocolError(f"list of length {part[0].shape[1]} in a k={k} merge")
    vals = np.concatenate([p[0] for p in parts], axis=1)
    if vals.dtype == object:
        raise ProtocolError("non-numeric list entries")
    ids = np.concatenate([p[1] for p in parts], axis=1)
    present = np.concatenate([p[2] for p in parts], axis=1)
    v, i, p = merge_topk(vals, ids, present, k)
    return TopkLists(v, i, p).lists(0)


def key_base(m: int) -> int:
    return m + 1


def keys_fit(ctx: ModulusContext, base: int) -> bool:
    """Whether ``value * base + id`` stays inside int64 for every value."""
    return ctx.is_exact and ctx.modulus_units * base < 2**63


def pack_keys(values: np.ndarray, ids: np.ndarray, present: np.ndarray, base: int) -> np.ndarray:
    return np.where(present, values * base + ids, -1)


def merge_keys(blocks: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Packed-key form of :func:`merge_topk`; returns ``(d, k)`` keys, largest first.

    Keys order exactly like ``(value, id)`` pairs, and a repeated id carries
    the same value, so duplicates are equal keys.
    """
    key = np.concatenate(blocks, axis=1)
    key.sort(axis=1)
    if key.shape[1] > 1:
        dup = key[:, 1:] == key[:, :-1]
        key[:, 1:][dup] = -1
        key.sort(axis=1)
    if key.shape[1] < k:
        key = np.concatenate([np.full((key.shape[0], k - key.shape[1]), -1, dtype=key.dtype), key], axis=1)
    return np.ascontiguousarray(key[:, : -k - 1 : -1])


def _initial_lists(own_value: np.ndarray, node_id: int, include: np.ndarray, k: int):
    d = own_value.shape[0]
    values = np.zeros((d, k), dtype=own_value.dtype)
    ids = np.zeros((d, k), dtype=np.int64)
    present = np.zeros((d, k), dtype=bool)
    values[:, 0] = own_value
    ids[:, 0] = node_id
    present[:, 0] = include
    return values, ids, present


class _TopkMixin:
    """Top-k list handling shared by stand-alone and TITAN nodes.

    With ``_base`` set the lists live as packed keys (exact backend); otherwise
    as explicit ``(values, ids, present)`` arrays.
    """

    node_id: int
    out_nodes: list[int]
    k: int
    _base: int | None = None

    def _reset_lists(self, own_value: np.ndarray, include: np.ndarray) -> None:
        L, ell, present = _initial_lists(own_value, self.node_id, include, self.k)
        if self._base is not None:
            self.keys = pack_keys(L, ell, present, self._base)
        else:
            self.L, self.ell, self.L_present = L, ell, present

    def _lists(self) -> TopkLists:
        if self._base is not None:
            return TopkLists(keys=self.keys, base=self._base)
        return TopkLists(self.L, self.ell, self.L_present)

    def _topk_outbox(self, rnd: int) -> list[Message]:
        if self._base is not None:
            # lists are replaced, never edited in place, so sharing them is safe
            payload = TopkLists(keys=_frozen(self.keys), base=self._base)
        else:
            payload = TopkLists(_frozen(self.L), _frozen(self.ell), _frozen(self.L_present))
        return [Message(self.node_id, j, rnd, payload) for j in self.out_nodes]

    def _check_payload(self, msg: Message, shape) -> TopkLists:
        payload = msg.payload
        if payload.kind != TOPK_LISTS:
            raise ProtocolError(f"node {self.node_id} expected top-k lists, got {payload.kind}")
        if payload.shape != shape:
            raise ProtocolError(f"top-k payload of shape {payload.shape} from node {msg.sender}")
        return payload

    def _topk_deliver(self, messages: list[Message]) -> None:
        if self._base is not None:
            blocks = [self.keys]
            for msg in messages:
                payload = self._check_payload(msg, self.keys.shape)
                if payload.keys is None or payload.base != self._base:
                    blocks.append(pack_keys(payload.values, payload.ids, payload.present, self._base))
                else:
                    blocks.append(payload.keys)
            self.keys = merge_keys(blocks, self.k)
            return
        vals, ids, present = [self.L], [self.ell], [self.L_present]
        for msg in messages:
            payload = self._check_payload(msg, self.L.shape)
            vals.append(payload.values)
            ids.append(payload.ids)
            present.append(payload.present)
        self.L, self.ell, self.L_present = merge_topk(
            np.concatenate(vals, axis=1), np.concatenate(ids, axis=1), np.concatenate(present, axis=1), self.k
        )


class TopkNode(_TopkMixin, NodeProgram):
    """Stand-alone top-k consensus over ``T`` rounds."""

    def __init__(self, node_id: int, graph: DirectedGraph, value, T: int, k: int, include=True):
        super().__init__(node_id)
        self.out_nodes = sorted(graph.out_neighbors(node_id))
        self.k = k
        self.round_budget = T
        own = np.atleast_1d(np.asarray(value))
        self._reset_lists(own, np.broadcast_to(np.asarray(include, dtype=bool), own.shape))
        self._rounds_done = 0

    def outbox(self, rnd):
        return self._topk_outbox(rnd)

    def on_deliver(self, rnd, messages):
        self._topk_deliver(messages)
        self._rounds_done += 1

    @property
    def done(self):
        return self._rounds_done >= self.round_budget

    def output(self) -> TopkLists:
        return self._lists()

    def memory_units(self):
        return 2 * self.k * self._lists().shape[0]


def run_topk(values, graph: DirectedGraph, T: int, k: int, exclude_ids=frozenset()) -> dict[int, TopkLists]:
    """Top-k consensus on one value per node.

    Nodes whose id is in ``exclude_ids`` do not contribute their own entry.
    Returns each node's final lists.
    """
    if len(values) != graph.m:
        raise DomainError(f"expected {graph.m} values, got {len(values)}")
    exclude_ids = frozenset(exclude_ids)
    config = RunConfig(graph, T, k)

    def factory(i, g, value, rng):
        return TopkNode(i, g, value, T, k, include=i not in exclude_ids)

    return run_protocol(config, factory, list(values)).outputs


# ---------------------------------------------------------------------------
# obfuscation step


def draw_edge_noises(rng: np.random.Generator, out_nodes: Sequence[int], d: int, ctx: ModulusContext):
    """One uniform ``[0, M)`` vector per out-neighbour, in ascending id order."""
    return {j: ctx.uniform(rng, d) for j in sorted(out_nodes)}


def compute_perturbation(received: Sequence, sent: Sequence, ctx: ModulusContext, d: int = 1):
    """``mod(sum(received) - sum(sent), M)`` in units.

    ``d`` only matters for an isolated node, whose perturbation is zero.
    """
    first = next(iter([*received, *sent]), None)
    t = np.zeros(d if first is None else np.shape(first), dtype=ctx.dtype)
    for r in received:
        t = ctx.add(t, r)
    for r in sent:
        t = ctx.sub(t, r)
    return t


def perturb_input(x, t, ctx: ModulusContext, a_units):
    """``mod(x + t, M)`` for ``x`` in ``[0, a)`` (all in units)."""
    x = np.asarray(x)
    if np.any(x < 0) or np.any(x >= a_units):
        raise DomainError(f"input outside [0, a) with a = {ctx.decode(a_units)}")
    return ctx.add(x, t)


@dataclass
class TitanNodeOutput:
    aggregate: np.ndarray
    perturbation: np.ndarray
    perturbed: np.ndarray
    recovered_ids: np.ndarray
    recovered_present: np.ndarray


class TitanNode(_TopkMixin, NodeProgram):
    """State machine for one TITAN participant.

    ``slots`` is the (upper bound on the) node count the node works with: the
    modulus is ``slots * a`` and recovery runs ``ceil(slots / k)`` sweeps.
    """

    def __init__(
        self,
        node_id: int,
        graph: DirectedGraph,
        x_units: np.ndarray,
        ctx: ModulusContext,
        a_units,
        T: int,
        k: int,
        slots: int,
        rng: np.random.Generator,
    ):
        super().__init__(node_id)
        self.x = np.atleast_1d(np.asarray(x_units, dtype=ctx.dtype))
        self.d = self.x.shape[0]
        if np.any(self.x < 0) or np.any(self.x >= a_units):
            raise DomainError(f"node {node_id}: input outside [0, a)")
        self.ctx = ctx
        self.a_units = a_units
        self.T, self.k, self.slots = T, k, slots
        self.sweeps = math.ceil(slots / k)
        self.round_budget = 1 + T * self.sweeps
        self.rng = rng
        self.in_nodes = sorted(graph.in_neighbors(node_id))
        self.out_nodes = sorted(graph.out_neighbors(node_id))

        self.sent_noises: dict[int, np.ndarray] | None = None
        self.received_noises: dict[int, np.ndarray] = {}
        self.t = None
        self.x_tilde = None
        base = key_base(graph.m)
        self._base = base if keys_fit(ctx, base) else None
        self._reset_lists(np.zeros(self.d, dtype=ctx.dtype), np.zeros(self.d, dtype=bool))
        self.buf = np.zeros((slots, self.d), dtype=ctx.dtype)
        self.buf_ids = np.zeros((slots, self.d), dtype=np.int64)
        self.buf_present = np.zeros((slots, self.d), dtype=bool)
        # own_recovered[c]: this node's entry was already gathered for coordinate c
        self.own_recovered = np.zeros(self.d, dtype=bool)
        self._rounds_done = 0

    def phase(self, rnd):
        return OBFUSCATION if rnd == 0 else RECOVERY

    def private_input(self):
        return self.x.copy()

    def draw_noises(self) -> dict[int, np.ndarray]:
        if self.sent_noises is not None:
            raise ProtocolError(f"node {self.node_id} already drew its edge noises")
        self.sent_noises = draw_edge_noises(self.rng, self.out_nodes, self.d, self.ctx)
        return self.sent_noises

    def on_round_start(self, rnd):
        if rnd >= 1 and (rnd - 1) % self.T == 0:
            self._reset_lists(self.x_tilde, ~self.own_recovered)

    def outbox(self, rnd):
        if rnd == 0:
            noises = self.draw_noises()
            return [Message(self.node_id, j, 0, EdgeNoise(_frozen(noises[j].copy()))) for j in self.out_nodes]
        return self._topk_outbox(rnd)

    def on_deliver(self, rnd, messages):
        if rnd == 0:
            for msg in messages:
                if msg.payload.kind != EDGE_NOISE:
                    raise ProtocolError(f"node {self.node_id} expected edge noise, got {msg.payload.kind}")
                self.received_noises[msg.sender] = msg.payload.values
            missing = set(self.in_nodes) - set(self.received_noises)
            if missing:
                raise ProtocolError(f"node {self.node_id} is missing noise from in-neighbours {sorted(missing)}")
            self.t = compute_perturbation(
                [self.received_noises[j] for j in self.in_nodes],
                [self.sent_noises[j] for j in self.out_nodes],
                self.ctx,
                self.d,
            )
            self.x_tilde = perturb_input(self.x, self.t, self.ctx, self.a_units)
        else:
            self._topk_deliver(messages)
            if (rnd - 1) % self.T == self.T - 1:
                self._close_sweep((rnd - 1) // self.T)
        self._rounds_done += 1

    def _close_sweep(self, sweep: int) -> None:
        lo = sweep * self.k
        hi = min(lo + self.k, self.slots)
        width = hi - lo
        lists = self._lists()
        self.buf[lo:hi] = lists.values[:, :width].T
        self.buf_ids[lo:hi] = lists.ids[:, :width].T
        self.buf_present[lo:hi] = lists.present[:, :width].T
        self.own_recovered |= np.any(lists.present & (lists.ids == self.node_id), axis=1)

    @property
    def done(self):
        return self._rounds_done >= self.round_budget

    def output(self) -> TitanNodeOutput:
        vals = np.where(self.buf_present, self.buf, 0)
        return TitanNodeOutput(
            aggregate=np.atleast_1d(self.ctx.sum(vals, axis=0)),
            perturbation=self.t,
            perturbed=self.x_tilde,
            recovered_ids=self.buf_ids.copy(),
            recovered_present=self.buf_present.copy(),
        )

    def memory_units(self):
        # L_i and ell_i (k entries each) plus the recovered buffer (slots entries)
        return (2 * self.k + self.slots) * self.d

    def snapshot(self) -> dict:
        return {
            "sent_noises": {j: v.copy() for j, v in (self.sent_noises or {}).items()},
            "received_noises": {j: v.copy() for j, v in self.received_noises.items()},
            "t": None if self.t is None else self.t.copy(),
            "x_tilde": None if self.x_tilde is None else self.x_tilde.copy(),
            "L": [self._lists().lists(c) for c in range(self.d)],
            "recovered": [
                [int(i) if p else None for i, p in zip(self.buf_ids[:, c], self.buf_present[:, c])]
                for c in range(self.d)
            ],
        }


# ---------------------------------------------------------------------------
# full runs


@dataclass
class TitanResult:
    ctx: ModulusContext
    m: int
    input_units: np.ndarray
    outputs: dict[int, TitanNodeOutput]
    view: AdversaryView
    trace: RoundTrace
    T: int
    k: int
    slots: int

    @property
    def aggregate_units(self) -> np.ndarray:
        """``mod(sum x~_i, M)`` as computed by node 1 (in units)."""
        return self.outputs[1].aggregate

    @property
    def agree(self) -> bool:
        first = self.aggregate_units
        return all(np.array_equal(o.aggregate, first) for o in self.outputs.values())

    @property
    def aggregate(self) -> np.ndarray:
        return np.asarray(self.ctx.decode(self.aggregate_units), dtype=np.float64)

    @property
    def average(self) -> np.ndarray:
        return self.aggregate / self.m

    def average_exact(self, node: int = 1) -> list[Fraction]:
        return [self.ctx.to_fraction(u) / self.m for u in self.outputs[node].aggregate]

    def direct_average_exact(self) -> list[Fraction]:
        total = np.asarray(self.input_units, dtype=object).sum(axis=0)
        return [self.ctx.to_fraction(u) / self.m for u in total]

    @property
    def perturbations(self) -> np.ndarray:
        return np.stack([self.outputs[i].perturbation for i in sorted(self.outputs)])

    @property
    def perturbed_inputs(self) -> np.ndarray:
        return np.stack([self.outputs[i].perturbed for i in sorted(self.outputs)])

    @property
    def recovery_rounds(self) -> int:
        return self.trace.phase_rounds.get(RECOVERY, 0)

    @property
    def total_rounds(self) -> int:
        return self.trace.rounds


def _input_matrix(inputs, m: int) -> np.ndarray:
    arr = np.asarray(inputs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != m:
        raise DomainError(f"expected {m} inputs (scalars or equal-length vectors), got shape {np.shape(inputs)}")
    return arr


def make_context(m: int, a, backend: str = EXACT, scale: int | None = None, tolerance: float = 1e-9) -> ModulusContext:
    """Context with modulus ``m * a``; ``a`` must be on the grid."""
    if backend == EXACT:
        base = ModulusContext.exact(1, **({"scale": scale} if scale else {}))
        a_units = base.encode(a)
        if a_units <= 0:
            raise DomainError(f"range bound a must be positive, got {a}")
        return ModulusContext.exact(base.to_fraction(a_units) * m, scale=base.scale)
    if not a > 0:
        raise DomainError(f"range bound a must be positive, got {a}")
    return ModulusContext.floating(float(a) * m, tolerance=tolerance)


def run_titan(
    inputs,
    graph: DirectedGraph,
    T: int,
    k: int,
    a,
    *,
    seed: int = 0,
    corrupted=frozenset(),
    tau: int | None = None,
    backend: str = EXACT,
    scale: int | None = None,
    m_bound: int | None = None,
    input_units: bool = False,
    record_internal: bool = True,
) -> TitanResult:
    """Run TITAN on one scalar or vector input per node.

    Real inputs are quantised to the grid (round half to even) unless
    ``input_units`` says they already are units.  ``m_bound`` replaces the
    node count in the modulus and sweep count when nodes only know an upper
    bound on ``m``.
    """
    m = graph.m
    slots = m if m_bound is None else int(m_bound)
    if slots < 1:
        raise DomainError("m_bound must be positive")
    ctx = make_context(slots, a, backend, scale)
    a_units = ctx.modulus_units // slots if ctx.is_exact else float(a)
    if input_units:
        units = np.asarray(inputs, dtype=ctx.dtype)
        units = units[:, None] if units.ndim == 1 else units
    else:
        units = ctx.quantize(_input_matrix(inputs, m))
    if units.shape[0] != m:
        raise DomainError(f"expected {m} inputs, got {units.shape[0]}")
    if np.any(units < 0) or np.any(units >= a_units):
        raise DomainError(f"inputs must lie in [0, {a})")
    if not 1 <= k <= slots:
        raise DomainError(f"k must lie in 1..{slots}, got {k}")
    config = RunConfig(graph, T, min(k, m), ctx, seed, frozenset(corrupted), tau)

    def factory(i, g, x, rng):
        return TitanNode(i, g, x, ctx, a_units, T, k, slots, rng)

    run = run_protocol(config, factory, {i: units[i - 1] for i in graph.nodes}, record_internal=record_internal)
    return TitanResult(ctx, m, units, run.outputs, run.view, run.trace, T, k, slots)


def estimate_node_count(graph: DirectedGraph, m_bound: int, T: int, k: int = 1, seed: int = 0) -> int:
    """Recover ``m`` when nodes only know ``m_bound >= m``.

    Every node runs TITAN on input 1 with ``a = 2`` and modulus
    ``m_bound * a``; the wrapped sum of perturbed inputs is exactly ``m``.
    The answer is meaningless if ``m_bound < m``.
    """
    if m_bound < 1:
        raise DomainError("m_bound must be positive")
    if not is_strongly_connected(graph):
        raise DomainError("node counting needs a strongly connected graph")
    result = run_titan([1] * graph.m, graph, T, k, 2, seed=seed, m_bound=m_bound, record_internal=False)
    return int(round(float(result.aggregate[0])))
