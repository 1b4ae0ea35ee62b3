"""Convert the raw Cora citation dataset into the edge, feature and label files."""

from __future__ import annotations

import logging
import os
from typing import Dict, List, Tuple

import numpy as np

from core.errors import ConfigError, FeatureFormatError, GraphFormatError
from core.graph import SPLITS, DirectedGraph, FeatureTable, LabelSet, save_features, save_graph, save_labels

__all__ = ["TEST_FRACTION", "read_content", "read_cites", "convert_cora"]

logger = logging.getLogger(__name__)

TEST_FRACTION = 0.2


def read_content(path: str) -> Tuple[List[str], np.ndarray, List[str]]:
    """Paper ids, binary word matrix and class names from ``cora.content``."""
    ids: List[str] = []
    rows: List[List[float]] = []
    classes: List[str] = []
    width = None
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < 3:
                raise FeatureFormatError(f"{path}: line {line_number} holds no word vector", row=line_number)
            if width is None:
                width = len(fields) - 2
            elif len(fields) - 2 != width:
                raise FeatureFormatError(
                    f"{path}: line {line_number} has {len(fields) - 2} words, expected {width}", row=line_number
                )
            try:
                rows.append([float(value) for value in fields[1:-1]])
            except ValueError as exc:
                raise FeatureFormatError(f"{path}: line {line_number}: {exc}", row=line_number) from exc
            ids.append(fields[0])
            classes.append(fields[-1])
    return ids, np.asarray(rows, dtype=np.float64).reshape(len(ids), width or 0), classes


def read_cites(path: str) -> List[Tuple[str, str]]:
    """``(citing, cited)`` pairs; the raw file lists the cited paper first."""
    pairs = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise GraphFormatError(f"{path}: expected 'cited citing'", line_number)
            cited, citing = fields
            pairs.append((citing, cited))
    return pairs


def convert_cora(raw_dir: str, out_dir: str, train_ratio: float = 0.6, seed: int = 0) -> Dict[str, str]:
    """Write ``edges.tsv``, ``features.csv`` and ``labels.tsv`` for a ratio split.

    Edges point from the citing to the cited paper. Test takes 20% of the
    papers, train takes ``train_ratio`` and validation the rest.
    """
    if not 0.0 < train_ratio <= 1.0 - TEST_FRACTION:
        raise ConfigError(f"train_ratio must lie in (0, {1.0 - TEST_FRACTION}]; got {train_ratio}")
    content_path = os.path.join(raw_dir, "cora.content")
    cites_path = os.path.join(raw_dir, "cora.cites")
    for path in (content_path, cites_path):
        if not os.path.isfile(path):
            raise FileNotFoundError(f"File not found: {path}")

    ids, words, class_names = read_content(content_path)
    position = {paper: i for i, paper in enumerate(ids)}
    pairs = read_cites(cites_path)
    known = [(position[a], position[b]) for a, b in pairs if a in position and b in position]
    if len(known) < len(pairs):
        logger.warning("Dropped %d citation(s) with unknown paper ids", len(pairs) - len(known))

    # The edge file only carries papers that take part in a citation.
    linked = sorted({i for pair in known for i in pair if pair[0] != pair[1]})
    remap = {old: new for new, old in enumerate(linked)}
    graph = DirectedGraph([ids[i] for i in linked], [(remap[a], remap[b]) for a, b in known if a != b])
    if len(linked) < len(ids):
        logger.warning("Skipped %d paper(s) without citations", len(ids) - len(linked))

    classes = sorted(set(class_names))
    y = np.asarray([classes.index(class_names[i]) for i in linked], dtype=np.int64)
    n = graph.n
    order = np.random.default_rng(seed).permutation(n)
    test_count = int(round(TEST_FRACTION * n))
    train_count = int(round(train_ratio * n))
    split = np.full(n, SPLITS.index("valid"), dtype=np.int64)
    split[order[:test_count]] = SPLITS.index("test")
    split[order[test_count:test_count + train_count]] = SPLITS.index("train")
    labels = LabelSet(y=y, split=split, num_classes=len(classes))

    columns = [f"profile_w{i}" for i in range(words.shape[1])]
    features = FeatureTable(matrix=words[linked], columns=columns, groups=["profile"] * len(columns))

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "graph": os.path.join(out_dir, "edges.tsv"),
        "features": os.path.join(out_dir, "features.csv"),
        "labels": os.path.join(out_dir, "labels.tsv"),
    }
    save_graph(graph, paths["graph"])
    save_features(features, graph, paths["features"])
    save_labels(labels, graph, paths["labels"])
    logger.info(
        "Converted Cora: %d papers, %d citations, %d classes, train ratio %.2f",
        n,
        graph.m,
        len(classes),
        train_ratio,
    )
    return paths
