import numpy as np
import pytest

from core.analysis import Undefined, bad_rate_lift, heterophily_ratio
from core.errors import ConfigError
from core.graph import load_features, load_graph, load_labels
from core.motifs import build_catalog, build_views, enumerate_instances
from core.synth import FEATURE_COLUMNS, SynthParams, generate, write_dataset


def test_generator_is_reproducible(tmp_path):
    params = SynthParams(n=300, seed=4)
    first = write_dataset(generate(params), str(tmp_path / "a"))
    second = write_dataset(generate(params), str(tmp_path / "b"))
    for key in ("graph", "features", "labels"):
        with open(first[key], "rb") as left, open(second[key], "rb") as right:
            assert left.read() == right.read()


def test_different_seeds_differ():
    left = generate(SynthParams(n=300, seed=1))
    right = generate(SynthParams(n=300, seed=2))
    assert not np.array_equal(left.labels.y, right.labels.y)


@pytest.mark.parametrize(
    "params",
    [
        SynthParams(n=2),
        SynthParams(edge_prob=1.5),
        SynthParams(signal=-0.1),
        SynthParams(triangles_per_seed=-1),
        SynthParams(feature_signal=-1.0),
    ],
)
def test_invalid_parameters(params):
    with pytest.raises(ConfigError):
        generate(params)


def test_dataset_shape():
    dataset = generate(SynthParams(n=500, seed=3))
    graph, labels = dataset.graph, dataset.labels
    assert graph.n == 500
    assert dataset.features.columns == list(FEATURE_COLUMNS)
    assert np.all(labels.y[dataset.seeds] == 1)
    assert dataset.seeds.size == 25
    assert [labels.indices(name).size for name in ("train", "valid", "test")] == [300, 100, 100]
    degree = np.diff(graph.skeleton().indptr)
    assert degree.min() >= 1


def test_written_files_load_back(tmp_path):
    dataset = generate(SynthParams(n=200, seed=6))
    paths = write_dataset(dataset, str(tmp_path))
    graph = load_graph(paths["graph"])
    features = load_features(paths["features"], graph)
    labels = load_labels(paths["labels"], graph)
    assert graph.m == dataset.graph.m
    assert features.imputed == 0
    assert len(labels) == 200
    assert labels.y.mean() == pytest.approx(dataset.labels.y.mean())


def test_triangle_views_are_less_heterophilous_than_the_graph():
    dataset = generate(SynthParams())
    views = build_views(dataset.graph, enumerate_instances(dataset.graph), range(1, 14))
    original = heterophily_ratio(views[0], dataset.labels)
    triangle_classes = {triad.index for triad in build_catalog() if triad.contains_triangle}
    ratios = [
        heterophily_ratio(view, dataset.labels)
        for view in views[1:]
        if view.index in triangle_classes
    ]
    defined = [value for value in ratios if not isinstance(value, Undefined)]
    assert defined
    assert min(defined) < original


def test_first_order_lift_is_at_least_second_order():
    dataset = generate(SynthParams())
    first = bad_rate_lift(dataset.graph, dataset.labels, order=1)
    second = bad_rate_lift(dataset.graph, dataset.labels, order=2)
    assert first >= second
