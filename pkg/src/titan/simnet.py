"""Deterministic synchronous round engine.

Every round the engine first collects the outbox of every node, checks each
message against the graph, records it, and only then delivers.  Nodes can
therefore never react to a message from the round they are sending in.

Everything a corrupted node sees (its own input, every message it sends or
receives, and its internal state after each round) is collected in an
:class:`AdversaryView`.  A :class:`RoundTrace` keeps per-message metadata and
per-node memory use for cost accounting.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from titan.errors import BudgetExceeded, DomainError, ProtocolError
from titan.graph import DirectedGraph, diameter, is_strongly_connected
from titan.modreal import ModulusContext

log = logging.getLogger(__name__)

EDGE_NOISE = "edge-noise"
TOPK_LISTS = "topk-lists"


@dataclass(frozen=True)
class EdgeNoise:
    """One noise value per input coordinate, shape ``(d,)``."""

    values: np.ndarray
    kind = EDGE_NOISE

    @property
    def size(self) -> int:
        return int(self.values.size)

    def to_json(self) -> dict:
        return {"kind": self.kind, "values": self.values.tolist()}


class TopkLists:
    """Per-coordinate top-k values and ids, shape ``(d, k)``, largest first.

    Empty slots are marked by ``present == False``; the numbers stored in
    those slots carry no meaning.  The exact backend may instead hand over
    packed keys ``value * base + id`` (``-1`` for an empty slot), from which
    the three arrays are derived on demand.
    """

    kind = TOPK_LISTS

    def __init__(self, values=None, ids=None, present=None, *, keys=None, base=None):
        if keys is not None:
            if keys.ndim != 2 or base is None:
                raise ProtocolError("packed top-k payload needs 2-d keys and a base")
            self.keys, self.base = keys, int(base)
            self._values = self._ids = self._present = None
            return
        values, ids, present = np.asarray(values), np.asarray(ids), np.asarray(present, dtype=bool)
        if not (values.shape == ids.shape == present.shape) or values.ndim != 2:
            raise ProtocolError(f"malformed top-k payload: shapes {values.shape}, {ids.shape}, {present.shape}")
        self.keys, self.base = None, None
        self._values, self._ids, self._present = values, ids, present

    def _unpack(self):
        present = self.keys >= 0
        self._present = present
        self._values = np.where(present, self.keys // self.base, 0)
        self._ids = np.where(present, self.keys % self.base, 0)

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            self._unpack()
        return self._values

    @property
    def ids(self) -> np.ndarray:
        if self._ids is None:
            self._unpack()
        return self._ids

    @property
    def present(self) -> np.ndarray:
        if self._present is None:
            self._unpack()
        return self._present

    @property
    def shape(self) -> tuple[int, int]:
        return (self.keys if self.keys is not None else self._values).shape

    @property
    def k(self) -> int:
        return self.shape[1]

    @property
    def size(self) -> int:
        d, k = self.shape
        return 2 * d * k

    def lists(self, coord: int = 0) -> tuple[list, list]:
        """``(L, ell)`` for one coordinate with ``None`` in empty slots."""
        mask = self.present[coord]
        L = [v.item() if p else None for v, p in zip(self.values[coord], mask)]
        ell = [int(i) if p else None for i, p in zip(self.ids[coord], mask)]
        return L, ell

    def to_json(self) -> dict:
        pairs = [self.lists(c) for c in range(self.shape[0])]
        return {"kind": self.kind, "L": [p[0] for p in pairs], "ids": [p[1] for p in pairs]}


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    round: int
    payload: EdgeNoise | TopkLists

    def to_json(self) -> dict:
        return {"sender": self.sender, "receiver": self.receiver, "round": self.round, **self.payload.to_json()}


class NodeProgram:
    """Base class for a node's state machine.

    Subclasses set ``round_budget`` and override the hooks they need.  The
    engine calls, for each round ``r``: ``on_round_start(r)`` on every node,
    then ``outbox(r)`` on every node, then ``on_deliver(r, msgs)`` on every
    node.
    """

    round_budget: int = 0

    def __init__(self, node_id: int):
        self.node_id = node_id

    def on_round_start(self, rnd: int) -> None:
        pass

    def outbox(self, rnd: int) -> list[Message]:
        return []

    def on_deliver(self, rnd: int, messages: list[Message]) -> None:
        pass

    def output(self):
        return None

    @property
    def done(self) -> bool:
        return True

    def phase(self, rnd: int) -> str:
        return "main"

    def private_input(self):
        return None

    def snapshot(self) -> dict:
        return {}

    def memory_units(self) -> int:
        return 0


def seed_node_rng(master_seed: int, node_id: int, stream: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for one node."""
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(node_id), int(stream)])
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class RunConfig:
    graph: DirectedGraph
    T: int
    k: int
    ctx: ModulusContext | None = None
    master_seed: int = 0
    corrupted: frozenset[int] = frozenset()
    tau: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "corrupted", frozenset(int(c) for c in self.corrupted))
        m = self.graph.m
        if self.T < 1:
            raise DomainError(f"T must be positive, got {self.T}")
        if not 1 <= self.k <= m:
            raise DomainError(f"k must lie in 1..{m}, got {self.k}")
        for c in self.corrupted:
            if not 1 <= c <= m:
                raise DomainError(f"corrupted node {c} outside 1..{m}")
        if self.tau is not None and len(self.corrupted) > self.tau:
            raise DomainError(f"{len(self.corrupted)} corrupted nodes exceed tau={self.tau}")
        if is_strongly_connected(self.graph):
            delta = diameter(self.graph)
            if self.T < delta:
                warnings.warn(f"T={self.T} is below the graph diameter {delta}; top-k results may disagree")
        else:
            warnings.warn("graph is not strongly connected; consensus is not guaranteed")


@dataclass
class RoundTrace:
    nodes: tuple[int, ...]
    records: list[tuple[int, int, int, str, int]] = field(default_factory=list)
    memory: dict[int, list[int]] = field(default_factory=dict)
    phase_rounds: dict[str, int] = field(default_factory=dict)
    rounds: int = 0
    complete: bool = False

    CSV_HEADER = ("round", "sender", "receiver", "payload_kind", "payload_size")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_HEADER)
        writer.writerows(self.records)
        return buf.getvalue()

    def messages_per_round(self) -> list[int]:
        counts = [0] * self.rounds
        for rec in self.records:
            counts[rec[0]] += 1
        return counts


@dataclass
class AdversaryView:
    corrupted: frozenset[int]
    tau: int | None = None
    private_inputs: dict[int, object] = field(default_factory=dict)
    inbound: list[Message] = field(default_factory=list)
    outbound: list[Message] = field(default_factory=list)
    internal: dict[int, list[dict]] = field(default_factory=dict)

    def messages(self) -> list[Message]:
        return self.inbound + [m for m in self.outbound if m.receiver not in self.corrupted]

    def to_json(self, ctx: ModulusContext | None = None) -> str:
        doc = {
            "corrupted": sorted(self.corrupted),
            "tau": self.tau,
            "private_inputs": {str(i): _jsonable(v) for i, v in sorted(self.private_inputs.items())},
            "inbound": [m.to_json() for m in self.inbound],
            "outbound": [m.to_json() for m in self.outbound],
            "internal": {
                str(i): [{key: _jsonable(val) for key, val in snap.items()} for snap in snaps]
                for i, snaps in sorted(self.internal.items())
            },
        }
        if ctx is not None:
            doc["units"] = {"backend": ctx.backend, "scale": ctx.scale, "modulus": _jsonable(ctx.modulus_units)}
        return json.dumps(doc, sort_keys=True)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v


@dataclass
class RunResult:
    outputs: dict[int, object]
    view: AdversaryView
    trace: RoundTrace


ProgramFactory = Callable[[int, DirectedGraph, object, np.random.Generator], NodeProgram]


def run_protocol(
    config: RunConfig,
    factory: ProgramFactory,
    inputs: Mapping[int, object] | Sequence,
    *,
    record_internal: bool = True,
) -> RunResult:
    """Run one synchronous execution.

    ``inputs`` is indexed by node id (a mapping) or is a sequence whose
    position ``i - 1`` belongs to node ``i``.  Each node gets its own RNG from
    :func:`seed_node_rng`, so the run is a pure function of its arguments.
    """
    g = config.graph
    if not isinstance(inputs, Mapping):
        if len(inputs) != g.m:
            raise DomainError(f"expected {g.m} inputs, got {len(inputs)}")
        inputs = {i: inputs[i - 1] for i in g.nodes}
    programs = {i: factory(i, g, inputs[i], seed_node_rng(config.master_seed, i)) for i in g.nodes}
    return execute(g, programs, corrupted=config.corrupted, tau=config.tau, record_internal=record_internal)


def execute(
    g: DirectedGraph,
    programs: Mapping[int, NodeProgram],
    *,
    corrupted=frozenset(),
    tau: int | None = None,
    record_internal: bool = True,
) -> RunResult:
    corrupted = frozenset(corrupted)
    if sorted(programs) != list(g.nodes):
        raise DomainError("need exactly one program per node")
    view = AdversaryView(corrupted=corrupted, tau=tau)
    for c in sorted(corrupted):
        view.private_inputs[c] = programs[c].private_input()
        view.internal[c] = []
    trace = RoundTrace(nodes=tuple(g.nodes), memory={i: [] for i in g.nodes})
    order = list(g.nodes)
    budget = max((p.round_budget for p in programs.values()), default=0)

    rnd = 0
    while rnd < budget and not all(programs[i].done for i in order):
        for i in order:
            programs[i].on_round_start(rnd)
        inboxes: dict[int, list[Message]] = {i: [] for i in order}
        for i in order:
            for msg in programs[i].outbox(rnd):
                if msg.sender != i:
                    raise ProtocolError(f"node {i} forged a message from {msg.sender}")
                if msg.round != rnd:
                    raise ProtocolError(f"node {i} emitted a round-{msg.round} message in round {rnd}")
                if not g.has_edge(msg.sender, msg.receiver):
                    raise ProtocolError(f"node {i} sent on non-edge ({msg.sender}, {msg.receiver})")
                inboxes[msg.receiver].append(msg)
                trace.records.append((rnd, msg.sender, msg.receiver, msg.payload.kind, msg.payload.size))
                if msg.sender in corrupted:
                    view.outbound.append(msg)
                if msg.receiver in corrupted:
                    view.inbound.append(msg)
        # every outbox of this round is closed before any delivery
        for i in order:
            programs[i].on_deliver(rnd, inboxes[i])
        for i in order:
            trace.memory[i].append(programs[i].memory_units())
        if record_internal:
            for c in sorted(corrupted):
                view.internal[c].append(programs[c].snapshot())
        label = programs[order[0]].phase(rnd)
        trace.phase_rounds[label] = trace.phase_rounds.get(label, 0) + 1
        rnd += 1
    trace.rounds = rnd
    stuck = [i for i in order if not programs[i].done]
    if stuck:
        raise BudgetExceeded(f"nodes {stuck} did not halt within {budget} rounds")
    trace.complete = True
    log.debug("run finished after %d rounds, %d messages", rnd, len(trace.records))
    return RunResult(outputs={i: programs[i].output() for i in order}, view=view, trace=trace)


@dataclass(frozen=True)
class CostReport:
    message_units: dict[int, int]
    peak_memory_units: dict[int, int]
    messages: dict[int, int]

    def to_json(self) -> dict:
        return {
            "message_units": {str(i): v for i, v in self.message_units.items()},
            "peak_memory_units": {str(i): v for i, v in self.peak_memory_units.items()},
            "messages": {str(i): v for i, v in self.messages.items()},
        }


def cost_report(trace: RoundTrace) -> CostReport:
    """Per-node payload units sent and peak memory units held."""
    if not trace.complete:
        raise DomainError("cost report needs a completed trace")
    units = {i: 0 for i in trace.nodes}
    count = {i: 0 for i in trace.nodes}
    for _, sender, _, _, size in trace.records:
        units[sender] += size
        count[sender] += 1
    peak = {i: max(trace.memory.get(i) or [0]) for i in trace.nodes}
    return CostReport(message_units=units, peak_memory_units=peak, messages=count)
