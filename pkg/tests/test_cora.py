import os

import numpy as np
import pytest

from core.analysis import edge_retention
from core.config import resolve_config
from core.cora import convert_cora, read_cites
from core.errors import ConfigError
from core.graph import load_features, load_graph, load_labels
from core.motifs import build_catalog, build_views, enumerate_instances
from core.trainer import train

CORA_DIR = os.environ.get("MOTIFGNN_CORA_DIR")


@pytest.fixture
def raw_dir(tmp_path):
    content = [
        "p1\t1\t0\t0\tNeural_Networks",
        "p2\t0\t1\t0\tTheory",
        "p3\t1\t1\t0\tNeural_Networks",
        "p4\t0\t0\t1\tTheory",
        "p5\t0\t1\t1\tRule_Learning",
        "p6\t1\t0\t1\tTheory",
    ]
    # cited paper first, citing paper second; p6 is never cited nor citing
    cites = ["p2\tp1", "p3\tp1", "p4\tp3", "p5\tp4", "p1\tp5", "p9\tp1"]
    (tmp_path / "cora.content").write_text("\n".join(content) + "\n", encoding="utf-8")
    (tmp_path / "cora.cites").write_text("\n".join(cites) + "\n", encoding="utf-8")
    return tmp_path


def test_read_cites_points_from_citing_paper(raw_dir):
    assert read_cites(str(raw_dir / "cora.cites"))[0] == ("p1", "p2")


def test_convert_writes_loadable_files(tmp_path, raw_dir):
    paths = convert_cora(str(raw_dir), str(tmp_path / "out"), train_ratio=0.6, seed=1)
    graph = load_graph(paths["graph"])
    assert sorted(graph.node_ids) == ["p1", "p2", "p3", "p4", "p5"]
    assert graph.m == 5
    assert graph.has_edge(graph.index["p1"], graph.index["p2"])
    features = load_features(paths["features"], graph)
    assert features.columns == ["profile_w0", "profile_w1", "profile_w2"]
    labels = load_labels(paths["labels"], graph, num_classes=3)
    assert len(labels) == 5
    # classes sort alphabetically: Neural_Networks, Rule_Learning, Theory
    assert labels.y[graph.index["p5"]] == 1
    assert [labels.indices(name).size for name in ("train", "valid", "test")] == [3, 1, 1]


def test_train_ratio_bounds(tmp_path, raw_dir):
    with pytest.raises(ConfigError):
        convert_cora(str(raw_dir), str(tmp_path), train_ratio=0.9)
    with pytest.raises(ConfigError):
        convert_cora(str(raw_dir), str(tmp_path), train_ratio=0.0)


def test_missing_raw_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        convert_cora(str(tmp_path), str(tmp_path / "out"))


@pytest.mark.slow
@pytest.mark.skipif(not CORA_DIR, reason="set MOTIFGNN_CORA_DIR to the raw Cora directory")
def test_cora_reproduction(tmp_path):
    paths = convert_cora(CORA_DIR, str(tmp_path), train_ratio=0.6, seed=0)
    graph = load_graph(paths["graph"])
    features = load_features(paths["features"], graph)
    labels = load_labels(paths["labels"], graph, num_classes=7)

    census = enumerate_instances(graph)
    views = build_views(graph, census, range(1, 14))
    triangles = [view for view in views[1:] if build_catalog()[view.index].contains_triangle]
    sparsest = min(triangles, key=lambda view: census.count(view.index))
    assert edge_retention(graph, sparsest) < 0.05

    base = resolve_config(
        None,
        {"task": "multiclass", "num_classes": 7, "encoder": "passthrough", "hidden_dim": 64, "epochs": 200, "patience": 20},
    )
    full = train(graph, views, features, labels, base)
    plain = train(graph, views, features, labels, resolve_config(dict(base), {"variant": "plain-gat"}))
    assert full.report.accuracy >= 0.75
    assert full.report.accuracy >= plain.report.accuracy
    assert np.isfinite(full.report.splits["test"]["loss"])
