"""Label-structure statistics over the original graph and motif views."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Sequence, Union

import numpy as np
from scipy import sparse

from core.graph import DirectedGraph, LabelSet, neighbor_sets
from core.motifs import MotifAdjacency

__all__ = [
    "Undefined",
    "Statistic",
    "bad_rate_lift",
    "heterophily_ratio",
    "edge_retention",
    "view_graph",
    "analysis_payload",
    "as_json",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Undefined:
    """A statistic that cannot be computed, with the reason why."""

    reason: str


Statistic = Union[float, Undefined]


def as_json(value: Statistic) -> dict:
    if isinstance(value, Undefined):
        return {"value": None, "reason": value.reason}
    return {"value": float(value), "reason": None}


def bad_rate_lift(graph: DirectedGraph, labels: LabelSet, order: int = 1, direction: str = "both") -> Statistic:
    """Mean neighbor bad rate of default users over that of normal users.

    A user's neighbor bad rate is the share of defaults among its labeled
    order-``order`` neighbors; users without labeled neighbors are skipped.
    """
    y = labels.y
    present = np.unique(y[y >= 0])
    if present.size == 1:
        # one label everywhere: both groups look alike
        return 1.0
    rates = {0: [], 1: []}
    for u, nbrs in enumerate(neighbor_sets(graph, order, direction)):
        if y[u] not in (0, 1):
            continue
        known = y[nbrs]
        known = known[known >= 0]
        if known.size:
            rates[int(y[u])].append(float(known.mean()))
    if not rates[1]:
        return Undefined("no default user has a labeled neighbor")
    if not rates[0]:
        return Undefined("no normal user has a labeled neighbor")
    normal = float(np.mean(rates[0]))
    if normal == 0.0:
        return Undefined("normal users' neighbors have a zero bad rate")
    return float(np.mean(rates[1])) / normal


def heterophily_ratio(adjacency: Union[MotifAdjacency, sparse.spmatrix], labels: LabelSet) -> Statistic:
    """Share of off-diagonal links whose two labeled endpoints disagree."""
    matrix = adjacency.matrix if isinstance(adjacency, MotifAdjacency) else sparse.csr_matrix(adjacency)
    coo = matrix.tocoo()
    y = labels.y
    keep = coo.row != coo.col
    left, right = y[coo.row[keep]], y[coo.col[keep]]
    both = (left >= 0) & (right >= 0)
    total = int(both.sum())
    if total == 0:
        return Undefined("no link joins two labeled nodes")
    return float((left[both] != right[both]).sum()) / total


def edge_retention(graph: DirectedGraph, motif_adjacency: MotifAdjacency) -> Statistic:
    """Fraction of original directed edges (i, j) that the view keeps."""
    if graph.m == 0:
        return Undefined("graph has no edges")
    return motif_adjacency.preserved_edge_count / graph.m


def view_graph(graph: DirectedGraph, adjacency: MotifAdjacency) -> DirectedGraph:
    """The view's off-diagonal links as a digraph over the same nodes."""
    coo = adjacency.matrix.tocoo()
    off = coo.row != coo.col
    return DirectedGraph(graph.node_ids, np.column_stack([coo.row[off], coo.col[off]]).tolist())


def analysis_payload(graph: DirectedGraph, views: Sequence[MotifAdjacency], labels: LabelSet) -> Dict:
    """Lifts, heterophily and retention for every view, ready for ``analysis.json``."""
    entries = []
    for adjacency in views:
        target = graph if adjacency.index == 0 else view_graph(graph, adjacency)
        entries.append(
            {
                "index": adjacency.index,
                "name": adjacency.name,
                "links": int(target.m),
                "bad_rate_lift_order1": as_json(bad_rate_lift(target, labels, order=1)),
                "bad_rate_lift_order2": as_json(bad_rate_lift(target, labels, order=2)),
                "heterophily": as_json(heterophily_ratio(adjacency, labels)),
                "edge_retention": as_json(edge_retention(graph, adjacency)),
            }
        )
        logger.debug("Analysed view %s", adjacency.name)
    return {
        "nodes": graph.n,
        "edges": graph.m,
        "labeled": len(labels),
        "default_rate": float(labels.y[labels.labeled].mean()) if len(labels) else None,
        "views": entries,
    }
