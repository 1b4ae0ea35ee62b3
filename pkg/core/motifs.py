"""Directed 3-node motif catalog, triad census and motif-based adjacency matrices.

Instances use induced-subgraph semantics: every weakly connected node
triple belongs to exactly one of the 13 triad classes. Class indices
``k = 1..13`` follow ascending canonical code; each class also carries its
standard MAN name (021D, 030T, ...) and a representative edge list so any
other numbering can be mapped onto it.
"""

from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import sparse

from core.errors import ConfigError, MotifRangeError
from core.graph import DirectedGraph

__all__ = [
    "CELLS",
    "SEMANTICS",
    "TriadClass",
    "MotifCatalog",
    "TriadCensus",
    "MotifAdjacency",
    "canonical_code",
    "build_catalog",
    "classify_triple",
    "enumerate_instances",
    "brute_force_census",
    "build_motif_adjacency",
    "original_adjacency",
    "build_views",
    "save_motif_adjacency",
    "census_payload",
]

logger = logging.getLogger(__name__)

# bit i of a 6-bit code is set when the directed edge CELLS[i] is present
CELLS: Tuple[Tuple[int, int], ...] = ((0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1))
SEMANTICS: Tuple[str, ...] = ("pair_cooccurrence", "edge_preserving")
BRUTE_FORCE_LIMIT = 200

_PERMUTATIONS = tuple(itertools.permutations(range(3)))
_MAN_NAMES = ("021D", "021U", "021C", "111D", "111U", "030T", "030C", "201", "120D", "120U", "120C", "210", "300")


def _code_from_edges(edges) -> int:
    code = 0
    for bit, cell in enumerate(CELLS):
        if cell in edges:
            code |= 1 << bit
    return code


def _edges_from_code(code: int) -> Tuple[Tuple[int, int], ...]:
    return tuple(cell for bit, cell in enumerate(CELLS) if code >> bit & 1)


def canonical_code(code: int) -> int:
    """Minimum code over all six relabelings of the three nodes."""
    edges = _edges_from_code(code)
    return min(
        _code_from_edges({(perm[a], perm[b]) for a, b in edges})
        for perm in _PERMUTATIONS
    )


def _weakly_connected(code: int) -> bool:
    linked = {frozenset(cell) for cell in _edges_from_code(code)}
    return len(linked) >= 2


@dataclass(frozen=True)
class TriadClass:
    index: int
    canonical_code: int
    edge_count: int
    contains_triangle: bool
    name: str
    edges: Tuple[Tuple[int, int], ...]

    @property
    def label(self) -> str:
        return f"M{self.index}:{self.name}"


@dataclass(frozen=True)
class MotifCatalog:
    classes: Tuple[TriadClass, ...]
    # raw 6-bit code -> class index (0 for disconnected codes)
    lookup: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def __getitem__(self, k: int) -> TriadClass:
        if not 1 <= k <= len(self.classes):
            raise MotifRangeError(f"motif index {k} outside 1..{len(self.classes)}")
        return self.classes[k - 1]

    def classify_code(self, code: int) -> Optional[TriadClass]:
        k = self.lookup[code]
        return self.classes[k - 1] if k else None


@lru_cache(maxsize=1)
def build_catalog() -> MotifCatalog:
    """Group the 64 labeled 3-node digraphs into the 13 weakly connected classes."""
    groups: Dict[int, List[int]] = {}
    for code in range(64):
        if _weakly_connected(code):
            groups.setdefault(canonical_code(code), []).append(code)

    names: Dict[int, str] = {}
    for name in _MAN_NAMES:
        triad = nx.triad_graph(name)
        position = {node: i for i, node in enumerate(sorted(triad.nodes()))}
        names[canonical_code(_code_from_edges({(position[a], position[b]) for a, b in triad.edges()}))] = name

    classes = []
    lookup = [0] * 64
    for index, canon in enumerate(sorted(groups), start=1):
        edges = _edges_from_code(canon)
        classes.append(
            TriadClass(
                index=index,
                canonical_code=canon,
                edge_count=len(edges),
                contains_triangle=len({frozenset(cell) for cell in edges}) == 3,
                name=names.get(canon, f"T{canon}"),
                edges=edges,
            )
        )
        for code in groups[canon]:
            lookup[code] = index
    return MotifCatalog(classes=tuple(classes), lookup=tuple(lookup))


def _triple_codes(graph: DirectedGraph, triples: np.ndarray) -> np.ndarray:
    codes = np.zeros(triples.shape[0], dtype=np.int64)
    for bit, (a, b) in enumerate(CELLS):
        codes |= graph.has_edges(triples[:, a], triples[:, b]).astype(np.int64) << bit
    return codes


def classify_triple(graph: DirectedGraph, u: int, v: int, w: int) -> Optional[TriadClass]:
    """Class of the induced subgraph on ``(u, v, w)``, or ``None`` if disconnected."""
    if len({u, v, w}) != 3:
        raise ValueError(f"classify_triple needs three distinct nodes; got ({u}, {v}, {w})")
    code = int(_triple_codes(graph, np.array([[u, v, w]], dtype=np.int64))[0])
    return build_catalog().classify_code(code)


@dataclass
class TriadCensus:
    """Whole-graph and per-node triad class counts plus the instance list.

    ``instances`` rows are ascending node triples in lexicographic order and
    ``classes[i]`` is the 1-based class of row ``i``.
    """

    n: int
    counts: np.ndarray
    participation: np.ndarray
    instances: np.ndarray
    classes: np.ndarray
    _by_class: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def count(self, k: int) -> int:
        return int(self.counts[k - 1])

    def instances_of(self, k: int) -> np.ndarray:
        cached = self._by_class.get(k)
        if cached is None:
            cached = self.instances[self.classes == k]
            self._by_class[k] = cached
        return cached

    def equals(self, other: "TriadCensus") -> bool:
        return (
            np.array_equal(self.counts, other.counts)
            and np.array_equal(self.participation, other.participation)
            and np.array_equal(self.instances, other.instances)
            and np.array_equal(self.classes, other.classes)
        )


def _finalize_census(graph: DirectedGraph, triples: np.ndarray) -> TriadCensus:
    catalog = build_catalog()
    size = len(catalog)
    if triples.size:
        triples = np.sort(triples, axis=1)
        triples = triples[np.lexsort((triples[:, 2], triples[:, 1], triples[:, 0]))]
        classes = np.asarray(catalog.lookup, dtype=np.int64)[_triple_codes(graph, triples)]
    else:
        triples = np.zeros((0, 3), dtype=np.int64)
        classes = np.zeros(0, dtype=np.int64)
    if (classes == 0).any():
        raise AssertionError("census produced a disconnected triple")
    counts = np.bincount(classes - 1, minlength=size).astype(np.int64)
    participation = np.zeros(graph.n * size, dtype=np.int64)
    for column in range(3):
        participation += np.bincount(triples[:, column] * size + (classes - 1), minlength=graph.n * size)
    return TriadCensus(
        n=graph.n,
        counts=counts,
        participation=participation.reshape(graph.n, size),
        instances=triples,
        classes=classes,
    )


def _chunks(n: int, parts: int) -> List[Tuple[int, int]]:
    parts = max(1, min(parts, n or 1))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(parts) if bounds[i] < bounds[i + 1]]


def _triangles(oriented: sparse.csr_matrix, start: int, stop: int) -> np.ndarray:
    found: List[np.ndarray] = []
    indptr, indices = oriented.indptr, oriented.indices
    for u in range(start, stop):
        higher = indices[indptr[u]:indptr[u + 1]]
        if higher.size < 2:
            continue
        for v in higher.tolist():
            common = np.intersect1d(higher, indices[indptr[v]:indptr[v + 1]], assume_unique=True)
            if common.size:
                block = np.empty((common.size, 3), dtype=np.int64)
                block[:, 0] = u
                block[:, 1] = v
                block[:, 2] = common
                found.append(block)
    return np.vstack(found) if found else np.zeros((0, 3), dtype=np.int64)


def _open_wedges(skeleton: sparse.csr_matrix, skeleton_keys: np.ndarray, start: int, stop: int) -> np.ndarray:
    n = skeleton.shape[0]
    found: List[np.ndarray] = []
    indptr, indices = skeleton.indptr, skeleton.indices
    for center in range(start, stop):
        nbrs = indices[indptr[center]:indptr[center + 1]].astype(np.int64)
        if nbrs.size < 2:
            continue
        left, right = np.triu_indices(nbrs.size, k=1)
        a, b = nbrs[left], nbrs[right]
        query = a * n + b
        position = np.minimum(np.searchsorted(skeleton_keys, query), skeleton_keys.size - 1)
        open_pairs = skeleton_keys[position] != query
        if open_pairs.any():
            block = np.empty((int(open_pairs.sum()), 3), dtype=np.int64)
            block[:, 0] = center
            block[:, 1] = a[open_pairs]
            block[:, 2] = b[open_pairs]
            found.append(block)
    return np.vstack(found) if found else np.zeros((0, 3), dtype=np.int64)


def enumerate_instances(graph: DirectedGraph, threads: int = 1) -> TriadCensus:
    """Classify every weakly connected triple once, without touching all n^3 triples.

    Triangles of the undirected skeleton come from degree-ordered edge
    iteration; open triples come from pairing the skeleton neighbors of each
    center node. Work is split over node ranges; the instance list is sorted
    before counting so the result does not depend on ``threads``.
    """
    skeleton = graph.skeleton()
    n = graph.n
    degree = np.diff(skeleton.indptr)
    rank = np.empty(n, dtype=np.int64)
    rank[np.lexsort((np.arange(n), degree))] = np.arange(n)

    coo = skeleton.tocoo()
    forward = rank[coo.row] < rank[coo.col]
    oriented = sparse.csr_matrix(
        (np.ones(int(forward.sum()), dtype=np.int8), (coo.row[forward], coo.col[forward])), shape=(n, n)
    )
    oriented.sort_indices()
    skeleton_keys = np.sort(coo.row.astype(np.int64) * n + coo.col.astype(np.int64))

    ranges = _chunks(n, max(1, threads) * 4)
    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            triangle_parts = list(pool.map(lambda span: _triangles(oriented, *span), ranges))
            wedge_parts = list(pool.map(lambda span: _open_wedges(skeleton, skeleton_keys, *span), ranges))
    else:
        triangle_parts = [_triangles(oriented, *span) for span in ranges]
        wedge_parts = [_open_wedges(skeleton, skeleton_keys, *span) for span in ranges]

    parts = [part for part in triangle_parts + wedge_parts if part.size]
    triples = np.vstack(parts) if parts else np.zeros((0, 3), dtype=np.int64)
    census = _finalize_census(graph, triples)
    logger.info("Triad census: %d connected triples over %d nodes", census.total, n)
    return census


def brute_force_census(graph: DirectedGraph) -> TriadCensus:
    """All-triples census via :func:`classify_triple`; the oracle for small graphs."""
    if graph.n > BRUTE_FORCE_LIMIT:
        raise ConfigError(f"brute-force census refuses graphs above {BRUTE_FORCE_LIMIT} nodes (n={graph.n})")
    found = [
        (u, v, w)
        for u, v, w in itertools.combinations(range(graph.n), 3)
        if classify_triple(graph, u, v, w) is not None
    ]
    triples = np.asarray(found, dtype=np.int64).reshape(-1, 3)
    return _finalize_census(graph, triples)


@dataclass
class MotifAdjacency:
    """Binary view adjacency with unit diagonal; ``matrix[i, j] = 1`` reads as i -> j.

    ``index`` 0 is the original graph, 1..13 the motif classes.
    """

    index: int
    name: str
    matrix: sparse.csr_matrix
    preserved_edge_count: int
    semantics: str = "pair_cooccurrence"

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def is_symmetric(self) -> bool:
        return (self.matrix != self.matrix.T).nnz == 0

    def message_edges(self, direction: str = "in") -> Tuple[np.ndarray, np.ndarray]:
        """``(src, dst)`` pairs for aggregation, sorted by destination then source.

        ``in`` aggregates over v with v -> u, ``out`` over u -> v, ``both`` over either.
        The diagonal supplies the self term of every destination.
        """
        coo = self.matrix.tocoo()
        rows, cols = coo.row.astype(np.int64), coo.col.astype(np.int64)
        if direction == "in":
            src, dst = rows, cols
        elif direction == "out":
            src, dst = cols, rows
        elif direction == "both":
            keys = np.unique(np.concatenate([cols * self.n + rows, rows * self.n + cols]))
            dst, src = np.divmod(keys, self.n)
        else:
            raise ValueError(f"direction must be in, out or both; got {direction!r}")
        order = np.lexsort((src, dst))
        return src[order], dst[order]


def _binary_with_diagonal(rows: np.ndarray, cols: np.ndarray, n: int) -> sparse.csr_matrix:
    diagonal = np.arange(n, dtype=np.int64)
    matrix = sparse.csr_matrix(
        (
            np.ones(rows.size + n, dtype=np.int64),
            (np.concatenate([rows, diagonal]), np.concatenate([cols, diagonal])),
        ),
        shape=(n, n),
    )
    matrix.sum_duplicates()
    matrix.data = np.ones_like(matrix.data)
    matrix = matrix.astype(np.int8)
    matrix.sort_indices()
    return matrix


def _preserved(graph: DirectedGraph, matrix: sparse.csr_matrix) -> int:
    coo = matrix.tocoo()
    off = coo.row != coo.col
    return int(graph.has_edges(coo.row[off], coo.col[off]).sum())


def original_adjacency(graph: DirectedGraph) -> MotifAdjacency:
    src, dst = graph.edges()
    return MotifAdjacency(
        index=0,
        name="original",
        matrix=_binary_with_diagonal(src, dst, graph.n),
        preserved_edge_count=graph.m,
        semantics="original",
    )


def build_motif_adjacency(
    graph: DirectedGraph,
    census: TriadCensus,
    k: int,
    semantics: str = "pair_cooccurrence",
) -> MotifAdjacency:
    """Binary motif adjacency for class ``k``.

    ``pair_cooccurrence`` links every pair that shares an instance of class
    ``k`` (symmetric). ``edge_preserving`` keeps only those pairs (i, j) that
    are also original edges i -> j. The diagonal is always 1.
    """
    catalog = build_catalog()
    triad = catalog[k]
    if semantics not in SEMANTICS:
        raise ConfigError(f"semantics must be one of {', '.join(SEMANTICS)}; got {semantics!r}")
    triples = census.instances_of(k)
    pairs = np.vstack([triples[:, [0, 1]], triples[:, [0, 2]], triples[:, [1, 2]]])
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    if semantics == "edge_preserving":
        keep = graph.has_edges(rows, cols)
        rows, cols = rows[keep], cols[keep]
    matrix = _binary_with_diagonal(rows, cols, graph.n)
    return MotifAdjacency(
        index=k,
        name=triad.label,
        matrix=matrix,
        preserved_edge_count=_preserved(graph, matrix),
        semantics=semantics,
    )


def build_views(
    graph: DirectedGraph,
    census: Optional[TriadCensus],
    motifs: Sequence[int],
    semantics: str = "pair_cooccurrence",
    threads: int = 1,
) -> List[MotifAdjacency]:
    """View 0 (the original graph) followed by one adjacency per selected motif, ascending."""
    selected = sorted(set(int(k) for k in motifs))
    if selected and census is None:
        census = enumerate_instances(graph, threads=threads)

    def build(k: int) -> MotifAdjacency:
        return build_motif_adjacency(graph, census, k, semantics)

    if threads > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            motif_views = list(pool.map(build, selected))
    else:
        motif_views = [build(k) for k in selected]
    for view in motif_views:
        logger.debug("View %s keeps %d of %d original edges", view.name, view.preserved_edge_count, graph.m)
    return [original_adjacency(graph)] + motif_views


def save_motif_adjacency(graph: DirectedGraph, adjacency: MotifAdjacency, path: str) -> None:
    """Write the adjacency as an edge list in the input edge-file format, diagonal omitted."""
    coo = adjacency.matrix.tocoo()
    off = coo.row != coo.col
    rows, cols = coo.row[off].astype(np.int64), coo.col[off].astype(np.int64)
    order = np.lexsort((cols, rows))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for u, v in zip(rows[order].tolist(), cols[order].tolist()):
            handle.write(f"{graph.node_ids[u]}\t{graph.node_ids[v]}\n")


def census_payload(
    graph: DirectedGraph,
    census: TriadCensus,
    retention: Optional[Dict[int, Optional[float]]] = None,
    include_participation: bool = False,
) -> dict:
    """JSON-ready census description for ``census.json``."""
    classes = []
    for triad in build_catalog():
        entry = {
            "index": triad.index,
            "name": triad.name,
            "canonical_code": triad.canonical_code,
            "edges": [list(edge) for edge in triad.edges],
            "contains_triangle": triad.contains_triangle,
            "instance_count": census.count(triad.index),
        }
        if retention is not None:
            entry["edge_retention"] = retention.get(triad.index)
        classes.append(entry)
    payload = {
        "nodes": graph.n,
        "edges": graph.m,
        "connected_triples": census.total,
        "classes": classes,
    }
    if include_participation:
        payload["participation"] = {
            graph.node_ids[u]: census.participation[u].tolist() for u in range(graph.n)
        }
    return payload
