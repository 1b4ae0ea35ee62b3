"""Planted-triangle synthetic credit graph.

A sparse random digraph gets extra transitive triangles around a few seeded
default users. With probability ``signal`` both triangle partners of a seed
default too, so default risk travels along triangles rather than single
edges. Features are heavy-tailed and only weakly tied to the label.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from core.errors import ConfigError
from core.graph import SPLITS, DirectedGraph, FeatureTable, LabelSet, save_features, save_graph, save_labels

__all__ = ["SynthParams", "SyntheticDataset", "generate", "write_dataset", "FEATURE_COLUMNS"]

logger = logging.getLogger(__name__)

FEATURE_COLUMNS: Tuple[str, ...] = (
    "profile_age",
    "profile_income",
    "profile_tenure",
    "behavior_logins",
    "behavior_spend",
    "behavior_night_ratio",
    "loan_amount",
    "loan_term",
    "loan_prior_count",
)


@dataclass(frozen=True)
class SynthParams:
    n: int = 2000
    edge_prob: float = 0.0015
    seed_rate: float = 0.05
    triangles_per_seed: int = 2
    background_triangles: int = 50
    signal: float = 0.8
    base_rate: float = 0.02
    feature_signal: float = 0.3
    transitive_share: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.n < 3:
            raise ConfigError(f"n must be at least 3; got {self.n}")
        for name in ("edge_prob", "seed_rate", "signal", "base_rate", "transitive_share"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]; got {value}")
        if self.triangles_per_seed < 0 or self.background_triangles < 0:
            raise ConfigError("triangle counts must be non-negative")
        if self.feature_signal < 0.0:
            raise ConfigError(f"feature_signal must be non-negative; got {self.feature_signal}")


@dataclass
class SyntheticDataset:
    graph: DirectedGraph
    features: FeatureTable
    labels: LabelSet
    seeds: np.ndarray


def _triangle(rng: np.random.Generator, anchor: int, n: int, transitive_share: float) -> Tuple[np.ndarray, List[int]]:
    others = rng.choice(n - 1, size=2, replace=False)
    others = others + (others >= anchor)
    a, b, c = anchor, int(others[0]), int(others[1])
    if rng.random() < transitive_share:
        edges = [(a, b), (b, c), (a, c)]
    else:
        edges = [(a, b), (b, c), (c, a)]
    return np.asarray(edges, dtype=np.int64), [b, c]


def generate(params: SynthParams = SynthParams()) -> SyntheticDataset:
    """Build the dataset in memory; the same params always give the same data."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    n = params.n

    total = rng.binomial(n * (n - 1), params.edge_prob)
    random_edges = np.stack([rng.integers(0, n, total), rng.integers(0, n, total)], axis=1)

    y = (rng.random(n) < params.base_rate).astype(np.int64)
    seeds = np.sort(rng.choice(n, size=int(round(params.seed_rate * n)), replace=False))
    y[seeds] = 1

    planted: List[np.ndarray] = []
    for seed in seeds.tolist():
        for _ in range(params.triangles_per_seed):
            edges, partners = _triangle(rng, seed, n, params.transitive_share)
            planted.append(edges)
            if rng.random() < params.signal:
                y[partners] = 1
    for _ in range(params.background_triangles):
        edges, _ = _triangle(rng, int(rng.integers(0, n)), n, params.transitive_share)
        planted.append(edges)

    pairs = np.concatenate([random_edges] + planted) if planted else random_edges
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    degree = np.bincount(pairs.reshape(-1), minlength=n)
    isolated = np.flatnonzero(degree == 0)
    if isolated.size:
        targets = (isolated + rng.integers(1, n, isolated.size)) % n
        pairs = np.concatenate([pairs, np.stack([isolated, targets], axis=1)])

    width = max(4, len(str(n - 1)))
    graph = DirectedGraph([f"u{i:0{width}d}" for i in range(n)], pairs.tolist())

    matrix = np.column_stack(
        [
            np.round(rng.normal(38.0, 10.0, n).clip(18, 80)),
            rng.lognormal(10.0, 0.8, n),
            rng.exponential(24.0, n),
            rng.poisson(rng.lognormal(1.5, 1.0, n)).astype(np.float64),
            rng.lognormal(6.0, 1.2, n),
            rng.beta(2.0, 8.0, n),
            rng.lognormal(8.0, 1.0, n) * np.exp(params.feature_signal * y),
            rng.choice([3.0, 6.0, 12.0, 24.0], n),
            rng.poisson(0.5 + params.feature_signal * y).astype(np.float64),
        ]
    )
    features = FeatureTable(
        matrix=matrix,
        columns=list(FEATURE_COLUMNS),
        groups=[column.split("_", 1)[0] for column in FEATURE_COLUMNS],
    )

    order = rng.permutation(n)
    cut_train, cut_valid = int(0.6 * n), int(0.8 * n)
    split = np.empty(n, dtype=np.int64)
    split[order[:cut_train]] = SPLITS.index("train")
    split[order[cut_train:cut_valid]] = SPLITS.index("valid")
    split[order[cut_valid:]] = SPLITS.index("test")
    labels = LabelSet(y=y, split=split)

    logger.info(
        "Synthetic graph: %d nodes, %d edges, %d seeds, default rate %.3f",
        graph.n,
        graph.m,
        seeds.size,
        y.mean(),
    )
    return SyntheticDataset(graph=graph, features=features, labels=labels, seeds=seeds)


def write_dataset(dataset: SyntheticDataset, out_dir: str) -> Dict[str, str]:
    """Write ``edges.tsv``, ``features.csv`` and ``labels.tsv`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "graph": os.path.join(out_dir, "edges.tsv"),
        "features": os.path.join(out_dir, "features.csv"),
        "labels": os.path.join(out_dir, "labels.tsv"),
    }
    save_graph(dataset.graph, paths["graph"])
    save_features(dataset.features, dataset.graph, paths["features"])
    save_labels(dataset.labels, dataset.graph, paths["labels"])
    logger.info("Wrote synthetic dataset to %s", out_dir)
    return paths
