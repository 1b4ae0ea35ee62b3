import logging

import numpy as np
import pytest

from core.errors import EmptyGraphError, FeatureFormatError, GraphFormatError, LabelError
from core.graph import (
    DirectedGraph,
    FeatureTable,
    load_features,
    load_graph,
    load_labels,
    neighbor_sets,
    save_features,
    save_graph,
    split_nodes,
    to_networkx,
)

from conftest import random_digraph


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_graph_basic(tmp_path):
    graph = load_graph(_write(tmp_path, "edges.tsv", "a\tb\nb\tc\n"))
    assert (graph.n, graph.m) == (3, 2)
    assert graph.node_ids == ["a", "b", "c"]
    assert graph.has_edge(0, 1) and graph.has_edge(1, 2)
    assert not graph.has_edge(1, 0)


def test_load_graph_drops_self_loops_and_duplicates(tmp_path, caplog):
    graph = load_graph(_write(tmp_path, "loop.tsv", "a\ta\n"))
    assert (graph.n, graph.m) == (1, 0)
    assert graph.load_stats["self_loops"] == 1

    with caplog.at_level(logging.WARNING, logger="core.graph"):
        graph = load_graph(_write(tmp_path, "dup.tsv", "# comment\na\tb\na\tb\n"))
    assert graph.m == 1
    assert graph.load_stats["duplicates"] == 1
    assert "1 duplicate" in caplog.text


def test_load_graph_errors(tmp_path):
    with pytest.raises(GraphFormatError) as info:
        load_graph(_write(tmp_path, "bad.tsv", "a\tb\nonly-one-field\n"))
    assert info.value.line_number == 2
    assert "line 2" in str(info.value)
    with pytest.raises(EmptyGraphError, match="empty graph"):
        load_graph(_write(tmp_path, "empty.tsv", "# nothing here\n"))


def test_in_index_is_transpose(tmp_path):
    graph = random_digraph(25, 0.15, seed=3)
    assert (graph.in_adj != graph.out_adj.T).nnz == 0


def test_save_then_load_is_idempotent(tmp_path):
    graph = random_digraph(30, 0.1, seed=4)
    path = str(tmp_path / "g.tsv")
    save_graph(graph, path)
    reloaded = load_graph(path)
    original = {(graph.node_ids[u], graph.node_ids[v]) for u, v in zip(*graph.edges())}
    again = {(reloaded.node_ids[u], reloaded.node_ids[v]) for u, v in zip(*reloaded.edges())}
    assert original == again


def test_load_features(tmp_path):
    graph = load_graph(_write(tmp_path, "edges.tsv", "a\tb\nb\tc\n"))
    table = load_features(_write(tmp_path, "f.csv", "id,profile_age,loan_amt\na,30,100\nc,50,300\nzz,1,1\n"), graph)
    assert table.shape == (3, 2)
    assert table.groups == ["profile", "loan"]
    assert table.imputed == 1
    assert np.array_equal(table.matrix[1], [40.0, 200.0])


def test_load_features_errors(tmp_path):
    graph = load_graph(_write(tmp_path, "edges.tsv", "a\tb\n"))
    with pytest.raises(FeatureFormatError, match="prefix"):
        load_features(_write(tmp_path, "f1.csv", "id,income\na,1\n"), graph)
    with pytest.raises(FeatureFormatError) as info:
        load_features(_write(tmp_path, "f2.csv", "id,profile_age\na,old\n"), graph)
    assert info.value.row == 2
    assert info.value.column == "profile_age"


@pytest.mark.parametrize("cell", ["nan", "inf", "-inf", "NaN"])
def test_non_finite_feature_cells_are_rejected(tmp_path, cell):
    graph = load_graph(_write(tmp_path, "edges.tsv", "a\tb\n"))
    with pytest.raises(FeatureFormatError) as info:
        load_features(_write(tmp_path, "f.csv", f"id,profile_age,loan_amt\na,1,2\nb,3,{cell}\n"), graph)
    assert info.value.row == 3
    assert info.value.column == "loan_amt"


def test_empty_cells_take_the_column_median(tmp_path, caplog):
    graph = load_graph(_write(tmp_path, "edges.tsv", "a\tb\nb\tc\n"))
    with caplog.at_level(logging.WARNING):
        table = load_features(_write(tmp_path, "f.csv", "id,profile_age\na,10\nb,\nc,30\n"), graph)
    assert table.imputed == 0
    assert table.matrix[:, 0].tolist() == [10.0, 20.0, 30.0]
    assert "1 empty cell" in caplog.text


def test_saved_features_load_back(tmp_path):
    graph = load_graph(_write(tmp_path, "edges.tsv", "a\tb\nb\tc\n"))
    table = FeatureTable(
        matrix=np.array([[0.1, -2.5], [1e-7, 3.0], [42.0, 0.0]]),
        columns=["behavior_x", "loan_y"],
        groups=["behavior", "loan"],
    )
    path = str(tmp_path / "out" / "features.csv")
    save_features(table, graph, path)
    with open(path, encoding="utf-8") as handle:
        assert handle.readline() == "id,behavior_x,loan_y\n"
    again = load_features(path, graph)
    assert again.columns == table.columns
    assert np.allclose(again.matrix, table.matrix, rtol=1e-15, atol=0)


def test_load_labels(tmp_path):
    graph = load_graph(_write(tmp_path, "edges.tsv", "a\tb\nb\tc\n"))
    labels = load_labels(_write(tmp_path, "l.tsv", "a\t1\ttrain\nc\t0\ttest\n"), graph)
    assert labels.y.tolist() == [1, -1, 0]
    assert labels.indices("train").tolist() == [0]
    assert labels.indices("test").tolist() == [2]
    assert len(labels) == 2


@pytest.mark.parametrize(
    "text, message",
    [
        ("z\t0\ttest\n", "'z'"),
        ("a\t2\ttrain\n", "label"),
        ("a\t1\tholdout\n", "split"),
        ("a\t1\ttrain\na\t0\ttest\n", "twice"),
    ],
)
def test_load_labels_errors(tmp_path, text, message):
    graph = load_graph(_write(tmp_path, "edges.tsv", "a\tb\n"))
    with pytest.raises(LabelError, match=message):
        load_labels(_write(tmp_path, "l.tsv", text), graph)


def test_empty_label_file(tmp_path):
    graph = load_graph(_write(tmp_path, "edges.tsv", "a\tb\n"))
    labels = load_labels(_write(tmp_path, "l.tsv", ""), graph)
    assert len(labels) == 0
    assert labels.indices("train").size == 0


def test_multiclass_labels(tmp_path):
    graph = load_graph(_write(tmp_path, "edges.tsv", "a\tb\n"))
    labels = load_labels(_write(tmp_path, "l.tsv", "a\t4\ttrain\nb\t6\tvalid\n"), graph, num_classes=7)
    assert labels.y.tolist() == [4, 6]


def test_neighbor_sets_path():
    graph = DirectedGraph(["a", "b", "c", "d"], [(0, 1), (1, 2)])
    first = neighbor_sets(graph, 1, "out")
    second = neighbor_sets(graph, 2, "out")
    assert first[0].tolist() == [1]
    assert second[0].tolist() == [2]
    assert first[3].size == 0 and second[3].size == 0


def _bfs_depth_two(graph, direction):
    skeleton = to_networkx(graph)
    if direction == "in":
        skeleton = skeleton.reverse()
    elif direction == "both":
        skeleton = skeleton.to_undirected()
    result = []
    for u in range(graph.n):
        one = set(skeleton.neighbors(u))
        two = {w for v in one for w in skeleton.neighbors(v)} - one - {u}
        result.append(sorted(two))
    return result


@pytest.mark.parametrize("direction", ["out", "in", "both"])
def test_neighbor_sets_order_two_matches_bfs(direction):
    graph = random_digraph(20, 0.12, seed=7)
    got = [nbrs.tolist() for nbrs in neighbor_sets(graph, 2, direction)]
    assert got == _bfs_depth_two(graph, direction)


def test_neighbor_sets_both_is_symmetric():
    graph = random_digraph(20, 0.1, seed=8)
    sets = neighbor_sets(graph, 1, "both")
    for u, nbrs in enumerate(sets):
        for v in nbrs.tolist():
            assert u in sets[v].tolist()


def test_split_nodes(six_graph, six_labels):
    splits = split_nodes(six_graph, six_labels)
    assert splits["train"].tolist() == [0, 1, 2, 3, 4, 5]
    assert splits["valid"].size == 0 and splits["test"].size == 0
