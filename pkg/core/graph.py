"""Directed social graph storage plus the edge, feature and label file formats."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from scipy import sparse

from core.errors import EmptyGraphError, FeatureFormatError, GraphFormatError, LabelError

__all__ = [
    "FEATURE_GROUPS",
    "SPLITS",
    "DirectedGraph",
    "FeatureTable",
    "LabelSet",
    "load_graph",
    "save_graph",
    "load_features",
    "save_features",
    "load_labels",
    "save_labels",
    "neighbor_sets",
    "split_nodes",
    "to_networkx",
]

logger = logging.getLogger(__name__)

FEATURE_GROUPS: Tuple[str, ...] = ("profile", "behavior", "loan")
SPLITS: Tuple[str, ...] = ("train", "valid", "test")


class DirectedGraph:
    """Immutable unweighted digraph over dense indices ``0..n-1``.

    Out-edges and in-edges are both held in CSR form; ``in_adj`` is the
    transpose of ``out_adj``. Self-loops and duplicate edges are never stored.
    """

    def __init__(self, node_ids: Sequence[str], edges: Iterable[Tuple[int, int]] = ()) -> None:
        self.node_ids: List[str] = [str(node) for node in node_ids]
        self.index: Dict[str, int] = {}
        for position, node in enumerate(self.node_ids):
            if node in self.index:
                raise GraphFormatError(f"duplicate node id {node!r}")
            self.index[node] = position
        n = len(self.node_ids)

        pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if pairs.size:
            if pairs.min() < 0 or pairs.max() >= n:
                raise GraphFormatError("edge endpoint outside the node range")
            pairs = pairs[pairs[:, 0] != pairs[:, 1]]
            pairs = np.unique(pairs, axis=0)
        self.n = n
        self.out_adj = sparse.csr_matrix(
            (np.ones(pairs.shape[0], dtype=np.int8), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
        )
        self.out_adj.sort_indices()
        self.in_adj = self.out_adj.T.tocsr()
        self.in_adj.sort_indices()
        self.load_stats: Dict[str, int] = {"duplicates": 0, "self_loops": 0}
        self._edge_keys: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return int(self.out_adj.nnz)

    def out_neighbors(self, u: int) -> np.ndarray:
        return self.out_adj.indices[self.out_adj.indptr[u]:self.out_adj.indptr[u + 1]]

    def in_neighbors(self, u: int) -> np.ndarray:
        return self.in_adj.indices[self.in_adj.indptr[u]:self.in_adj.indptr[u + 1]]

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(src, dst)`` arrays sorted by source then destination."""
        coo = self.out_adj.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64)

    def edge_keys(self) -> np.ndarray:
        """Sorted ``src * n + dst`` keys for vectorised edge lookups."""
        if self._edge_keys is None:
            src, dst = self.edges()
            self._edge_keys = np.sort(src * self.n + dst)
        return self._edge_keys

    def has_edges(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        keys = self.edge_keys()
        query = np.asarray(src, dtype=np.int64) * self.n + np.asarray(dst, dtype=np.int64)
        if keys.size == 0:
            return np.zeros(query.shape, dtype=bool)
        position = np.minimum(np.searchsorted(keys, query), keys.size - 1)
        return keys[position] == query

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.has_edges(np.array([u]), np.array([v]))[0])

    def skeleton(self) -> sparse.csr_matrix:
        """Symmetric 0/1 adjacency of the underlying undirected graph."""
        both = (self.out_adj + self.in_adj).tocsr()
        both.data = np.ones_like(both.data, dtype=np.int8)
        both.sort_indices()
        return both

    def __repr__(self) -> str:
        return f"DirectedGraph(n={self.n}, m={self.m})"


@dataclass
class FeatureTable:
    matrix: np.ndarray
    columns: List[str]
    groups: List[str]
    imputed: int = 0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape  # type: ignore[return-value]

    def group_columns(self, group: str) -> List[int]:
        return [i for i, tag in enumerate(self.groups) if tag == group]


@dataclass
class LabelSet:
    """Partial labels over graph indices; ``-1`` marks unlabeled nodes."""

    y: np.ndarray
    split: np.ndarray
    num_classes: int = 2
    _cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @classmethod
    def from_mapping(
        cls,
        n: int,
        labels: Mapping[int, int],
        splits: Optional[Mapping[int, str]] = None,
        num_classes: int = 2,
    ) -> "LabelSet":
        y = np.full(n, -1, dtype=np.int64)
        split = np.full(n, -1, dtype=np.int64)
        for node, value in labels.items():
            y[node] = int(value)
            tag = (splits or {}).get(node, "train")
            if tag not in SPLITS:
                raise LabelError(f"unknown split {tag!r}")
            split[node] = SPLITS.index(tag)
        return cls(y=y, split=split, num_classes=num_classes)

    @property
    def labeled(self) -> np.ndarray:
        return np.flatnonzero(self.y >= 0)

    def __len__(self) -> int:
        return int((self.y >= 0).sum())

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise LabelError(f"unknown split {split!r}")
        cached = self._cache.get(split)
        if cached is None:
            cached = np.flatnonzero((self.split == SPLITS.index(split)) & (self.y >= 0))
            self._cache[split] = cached
        return cached


def _open_text(path: str):
    if not path or not os.path.isfile(path):
        raise FileNotFoundError(f"File not found: {path}")
    return open(path, "r", encoding="utf-8")


def load_graph(edge_file_path: str) -> DirectedGraph:
    """Read ``src<TAB>dst`` lines into a :class:`DirectedGraph`.

    Node ids are reindexed densely in first-seen order. Self-loops and
    duplicate edges are dropped and counted in ``load_stats``.
    """
    node_ids: List[str] = []
    index: Dict[str, int] = {}
    seen: set[Tuple[int, int]] = set()
    edges: List[Tuple[int, int]] = []
    duplicates = self_loops = 0

    def intern(node: str) -> int:
        position = index.get(node)
        if position is None:
            position = len(node_ids)
            index[node] = position
            node_ids.append(node)
        return position

    with _open_text(edge_file_path) as handle:
        for line_number, line in enumerate(handle, 1):
            stripped = line.rstrip("\r\n")
            if not stripped.strip() or stripped.lstrip().startswith("#"):
                continue
            fields = stripped.split("\t")
            if len(fields) != 2 or not fields[0].strip() or not fields[1].strip():
                raise GraphFormatError(f"expected 'src<TAB>dst', got {stripped!r}", line_number)
            src = intern(fields[0].strip())
            dst = intern(fields[1].strip())
            if src == dst:
                self_loops += 1
                continue
            if (src, dst) in seen:
                duplicates += 1
                continue
            seen.add((src, dst))
            edges.append((src, dst))

    if not node_ids:
        raise EmptyGraphError(f"empty graph: {edge_file_path} holds no edges")
    if duplicates or self_loops:
        logger.warning(
            "Dropped %d duplicate edge(s) and %d self-loop(s) from %s", duplicates, self_loops, edge_file_path
        )
    graph = DirectedGraph(node_ids, edges)
    graph.load_stats = {"duplicates": duplicates, "self_loops": self_loops}
    logger.info("Loaded graph with %d nodes and %d edges from %s", graph.n, graph.m, edge_file_path)
    return graph


def save_graph(graph: DirectedGraph, path: str) -> None:
    _write_edge_list(graph.node_ids, *graph.edges(), path)


def _write_edge_list(node_ids: Sequence[str], src: np.ndarray, dst: np.ndarray, path: str) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for u, v in zip(src.tolist(), dst.tolist()):
            handle.write(f"{node_ids[u]}\t{node_ids[v]}\n")


def _group_of(column: str) -> Optional[str]:
    for group in FEATURE_GROUPS:
        if column.startswith(group + "_"):
            return group
    return None


def load_features(csv_path: str, graph: DirectedGraph) -> FeatureTable:
    """Read a feature CSV aligned to ``graph`` by node id.

    Graph nodes missing from the file, and empty cells, get the column median
    over the rows present in the file. Rows for ids the graph does not know
    are skipped. Non-numeric or non-finite cells raise with their row and column.
    """
    if not csv_path or not os.path.isfile(csv_path):
        raise FileNotFoundError(f"File not found: {csv_path}")
    try:
        frame = pd.read_csv(csv_path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise FeatureFormatError("feature file is empty", row=1) from None
    except pd.errors.ParserError as exc:
        raise FeatureFormatError(f"malformed CSV: {exc}") from None
    frame.columns = [str(column).strip() for column in frame.columns]
    if frame.columns.empty or frame.columns[0] != "id":
        first = frame.columns[0] if len(frame.columns) else None
        raise FeatureFormatError("first column must be 'id'", row=1, column=first)
    columns = list(frame.columns[1:])
    groups: List[str] = []
    for column in columns:
        group = _group_of(column)
        if group is None:
            raise FeatureFormatError(
                f"unknown feature group prefix; expected one of {', '.join(g + '_' for g in FEATURE_GROUPS)}",
                row=1,
                column=column,
            )
        groups.append(group)

    raw = frame.fillna("").apply(lambda series: series.str.strip())
    values = pd.DataFrame(
        {column: pd.to_numeric(raw[column], errors="coerce") for column in columns}, index=raw.index, dtype=np.float64
    )
    bad = (raw[columns] != "").to_numpy() & ~np.isfinite(values.to_numpy(dtype=np.float64))
    if bad.any():
        position, offset = np.argwhere(bad)[0]
        raise FeatureFormatError(
            f"non-numeric value {raw[columns].iat[position, offset]!r}",
            row=int(position) + 2,
            column=columns[offset],
        )

    values.index = raw["id"]
    known = values.index.isin(graph.node_ids)
    unknown_rows = int((~known).sum())
    values = values[known]
    if values.index.has_duplicates:
        logger.warning("Kept the last row for %d repeated feature id(s)", int(values.index.duplicated().sum()))
        values = values[~values.index.duplicated(keep="last")]
    imputed = graph.n - len(values)
    empty_cells = int(values.isna().to_numpy().sum())
    values = values.reindex(graph.node_ids)
    values = values.fillna(values.median()).fillna(0.0)

    if imputed:
        logger.warning("Imputed column medians for %d node(s) missing from %s", imputed, csv_path)
    if empty_cells:
        logger.warning("Imputed column medians for %d empty cell(s) in %s", empty_cells, csv_path)
    if unknown_rows:
        logger.warning("Skipped %d feature row(s) for ids not in the graph", unknown_rows)
    matrix = values.to_numpy(dtype=np.float64).reshape(graph.n, len(columns))
    return FeatureTable(matrix=matrix, columns=columns, groups=groups, imputed=imputed)


def save_features(table: FeatureTable, graph: DirectedGraph, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame = pd.DataFrame(table.matrix, columns=table.columns, index=pd.Index(graph.node_ids, name="id"))
    frame.to_csv(path, encoding="utf-8", lineterminator="\n")


def load_labels(label_file: str, graph: DirectedGraph, num_classes: int = 2) -> LabelSet:
    """Read ``id<TAB>label<TAB>split`` lines; labels range over ``0..num_classes-1``."""
    labels: Dict[int, int] = {}
    splits: Dict[int, str] = {}
    with _open_text(label_file) as handle:
        for line_number, line in enumerate(handle, 1):
            stripped = line.rstrip("\r\n")
            if not stripped.strip() or stripped.lstrip().startswith("#"):
                continue
            fields = [cell.strip() for cell in stripped.split("\t")]
            if len(fields) != 3:
                raise LabelError(f"line {line_number}: expected 'id<TAB>label<TAB>split', got {stripped!r}")
            node, raw_label, split = fields
            position = graph.index.get(node)
            if position is None:
                raise LabelError(f"line {line_number}: node {node!r} is not in the graph")
            try:
                value = int(raw_label)
            except ValueError:
                value = -1
            if not 0 <= value < num_classes or raw_label != str(value):
                allowed = "{0,1}" if num_classes == 2 else f"0..{num_classes - 1}"
                raise LabelError(f"line {line_number}: label {raw_label!r} not in {allowed}")
            if split not in SPLITS:
                raise LabelError(f"line {line_number}: split {split!r} not in {{train,valid,test}}")
            if position in labels:
                raise LabelError(f"line {line_number}: node {node!r} labeled twice")
            labels[position] = value
            splits[position] = split
    result = LabelSet.from_mapping(graph.n, labels, splits, num_classes=num_classes)
    logger.info(
        "Loaded %d labels (%s)",
        len(result),
        ", ".join(f"{name}={result.indices(name).size}" for name in SPLITS),
    )
    return result


def save_labels(labels: LabelSet, graph: DirectedGraph, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for position in labels.labeled.tolist():
            tag = SPLITS[int(labels.split[position])]
            handle.write(f"{graph.node_ids[position]}\t{int(labels.y[position])}\t{tag}\n")


def _directed_matrix(graph: DirectedGraph, direction: str) -> sparse.csr_matrix:
    if direction == "out":
        return graph.out_adj
    if direction == "in":
        return graph.in_adj
    if direction == "both":
        return graph.skeleton()
    raise ValueError(f"direction must be out, in or both; got {direction!r}")


def neighbor_sets(graph: DirectedGraph, order: int, direction: str) -> List[np.ndarray]:
    """Per-node sorted neighbor arrays at exactly ``order`` hops (1 or 2).

    Order-2 sets exclude the node itself and its order-1 neighbors.
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2; got {order}")
    first = _directed_matrix(graph, direction).astype(np.int64)
    if order == 1:
        target = first
    else:
        reach = (first @ first).tocsr()
        reach.data = np.ones_like(reach.data)
        exclude = (first + sparse.identity(graph.n, dtype=np.int64, format="csr")).tocsr()
        target = (reach - reach.multiply(exclude)).tocsr()
        target.eliminate_zeros()
    target.sort_indices()
    return [target.indices[target.indptr[u]:target.indptr[u + 1]].astype(np.int64) for u in range(graph.n)]


def to_networkx(graph: DirectedGraph) -> nx.DiGraph:
    result = nx.DiGraph()
    result.add_nodes_from(range(graph.n))
    result.add_edges_from(zip(*(array.tolist() for array in graph.edges())))
    return result


def split_nodes(graph: DirectedGraph, labels: LabelSet) -> Dict[str, np.ndarray]:
    """Ascending dense indices of the labeled nodes in each split."""
    if labels.y.shape[0] != graph.n:
        raise LabelError(f"label set covers {labels.y.shape[0]} nodes, graph has {graph.n}")
    return {split: labels.indices(split).copy() for split in SPLITS}
