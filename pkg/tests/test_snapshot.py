import json

import numpy as np
import pytest

from core.config import resolve_config
from core.errors import SnapshotError
from core.motifs import build_views, enumerate_instances
from core.snapshot import SNAPSHOT_FORMAT, load_snapshot, read_snapshot, save_snapshot, save_state
from core.trainer import Network, evaluate


@pytest.fixture
def network(six_graph, six_features, six_labels, tiny_config):
    views = build_views(six_graph, enumerate_instances(six_graph), tiny_config["motifs"])
    return Network.build(six_features, six_labels, views, tiny_config, np.random.default_rng(5)), views


def test_saved_snapshot_loads_back(tmp_path, network, six_features, six_labels, tiny_config):
    original, views = network
    path = save_snapshot(original, str(tmp_path / "snapshot.json"), feature_columns=six_features.columns)
    loaded = load_snapshot(path, tiny_config, six_features, six_labels, views)
    for name, value in original.state().items():
        assert np.array_equal(loaded.state()[name], value)
    before, _ = evaluate(original, original.edges(views), six_labels)
    after, _ = evaluate(loaded, loaded.edges(views), six_labels)
    assert before == after


def test_snapshot_payload(tmp_path, network, six_features):
    original, _ = network
    payload = read_snapshot(save_snapshot(original, str(tmp_path / "s.json"), feature_columns=six_features.columns))
    assert payload["format"] == SNAPSHOT_FORMAT
    assert payload["config"]["motifs"] == list(range(1, 14))
    assert payload["views"][0] == {"index": 0, "name": "original"}
    assert payload["params"]["head.W1"]["shape"] == list(original.parameters()["head.W1"].shape)


def test_shape_mismatch_is_rejected(tmp_path, network, six_features, six_labels, tiny_config):
    original, views = network
    path = save_snapshot(original, str(tmp_path / "snapshot.json"))
    wider = resolve_config(dict(tiny_config), {"hidden_dim": 12})
    with pytest.raises(SnapshotError, match="does not fit"):
        load_snapshot(path, wider, six_features, six_labels, views)


def test_feature_column_mismatch_is_rejected(tmp_path, network, six_features, six_labels, tiny_config):
    original, views = network
    path = save_snapshot(original, str(tmp_path / "snapshot.json"), feature_columns=["profile_other"])
    with pytest.raises(SnapshotError, match="feature columns"):
        load_snapshot(path, tiny_config, six_features, six_labels, views)


def test_unreadable_snapshots(tmp_path):
    with pytest.raises(SnapshotError, match="not found"):
        read_snapshot(str(tmp_path / "missing.json"))
    garbage = tmp_path / "garbage.json"
    garbage.write_text("{not json", encoding="utf-8")
    with pytest.raises(SnapshotError, match="unreadable"):
        read_snapshot(str(garbage))
    foreign = tmp_path / "foreign.json"
    foreign.write_text(json.dumps({"format": "other"}), encoding="utf-8")
    with pytest.raises(SnapshotError, match="not a model snapshot"):
        read_snapshot(str(foreign))
    future = tmp_path / "future.json"
    future.write_text(json.dumps({"format": SNAPSHOT_FORMAT, "version": 99}), encoding="utf-8")
    with pytest.raises(SnapshotError, match="version"):
        read_snapshot(str(future))


def test_save_state_keeps_arrays(tmp_path, tiny_config):
    state = {"head.W1": np.arange(6.0).reshape(2, 3)}
    payload = read_snapshot(save_state(state, tiny_config, str(tmp_path / "last_good.json"), note="loss is nan"))
    assert payload["note"] == "loss is nan"
    assert payload["params"]["head.W1"] == {"shape": [2, 3], "data": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]}
    assert "lr" not in payload["config"]
