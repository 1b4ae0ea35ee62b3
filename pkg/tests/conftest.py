import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from core.config import resolve_config
from core.graph import DirectedGraph, FeatureTable, LabelSet, save_features, save_graph, save_labels

SIX_IDS = ["a", "b", "c", "d", "e", "f"]
# transitive triangle a->b->c, a->c; cycle d->e->f->d; bridges c->d and b->e
SIX_EDGES = [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (5, 3), (1, 4)]


def random_digraph(n: int, p: float, seed: int) -> DirectedGraph:
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    src, dst = np.nonzero(mask)
    return DirectedGraph([f"n{i}" for i in range(n)], list(zip(src.tolist(), dst.tolist())))


@pytest.fixture
def six_graph():
    return DirectedGraph(SIX_IDS, SIX_EDGES)


@pytest.fixture
def six_features():
    matrix = np.array(
        [
            [25.0, 3.0, 9000.0],
            [31.0, 5.0, 8000.0],
            [28.0, 4.0, 9500.0],
            [45.0, 1.0, 1200.0],
            [52.0, 2.0, 900.0],
            [39.0, 1.0, 1500.0],
        ]
    )
    return FeatureTable(
        matrix=matrix,
        columns=["profile_age", "behavior_logins", "loan_amount"],
        groups=["profile", "behavior", "loan"],
    )


@pytest.fixture
def six_labels():
    return LabelSet(y=np.array([1, 1, 1, 0, 0, 0]), split=np.zeros(6, dtype=np.int64))


@pytest.fixture
def cycle_graph():
    return DirectedGraph(["x", "y", "z"], [(0, 1), (1, 2), (2, 0)])


@pytest.fixture
def tiny_config():
    return resolve_config(
        None,
        {
            "buckets": 3,
            "embed_dim_profile": 2,
            "embed_dim_behavior": 2,
            "embed_dim_loan": 2,
            "hidden_dim": 8,
            "att_dim": 4,
            "head_dim": 4,
            "layers": 2,
            "lambda_reg": 1e-3,
            "batch_size": 6,
            "epochs": 5,
            "threads": 1,
        },
    )


@pytest.fixture
def six_files(tmp_path, six_graph, six_features, six_labels):
    paths = {
        "graph": str(tmp_path / "edges.tsv"),
        "features": str(tmp_path / "features.csv"),
        "labels": str(tmp_path / "labels.tsv"),
    }
    save_graph(six_graph, paths["graph"])
    save_features(six_features, six_graph, paths["features"])
    labels = LabelSet(y=six_labels.y, split=np.array([0, 0, 1, 0, 2, 2]))
    save_labels(labels, six_graph, paths["labels"])
    return paths
