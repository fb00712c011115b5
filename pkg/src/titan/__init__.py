"""Private finite-time average consensus (TITAN) and a private distributed
least-squares solver built on top of it."""

from titan.audit import AuditReport, uniformity_test, view_indistinguishability_test
from titan.errors import (
    BudgetExceeded,
    DomainError,
    ParseError,
    PrecisionError,
    ProtocolError,
    RankError,
    TitanError,
)
from titan.graph import DirectedGraph, generate_graph, parse_graph
from titan.modreal import ModulusContext, ModValue, mod_neg, mod_reduce, mod_sum
from titan.protocol import TitanResult, estimate_node_count, run_titan, run_topk
from titan.solver import LinearSystem, Partition, direct_lssol, partition_system, solve_private

__all__ = [
    "AuditReport",
    "BudgetExceeded",
    "DirectedGraph",
    "DomainError",
    "LinearSystem",
    "ModValue",
    "ModulusContext",
    "ParseError",
    "Partition",
    "PrecisionError",
    "ProtocolError",
    "RankError",
    "TitanError",
    "TitanResult",
    "direct_lssol",
    "estimate_node_count",
    "generate_graph",
    "mod_neg",
    "mod_reduce",
    "mod_sum",
    "parse_graph",
    "partition_system",
    "run_titan",
    "run_topk",
    "solve_private",
    "uniformity_test",
    "view_indistinguishability_test",
]
