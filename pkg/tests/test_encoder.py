import numpy as np
import pytest

from core.config import resolve_config
from core.encoder import Bucketizer, GroupEmbedding, InputEncoder, encode, fit_bucketizer, one_hot
from core.errors import ConfigError
from core.graph import FeatureTable
from core.tensor import Tensor


def _table(matrix, columns):
    return FeatureTable(
        matrix=np.asarray(matrix, dtype=np.float64),
        columns=list(columns),
        groups=[column.split("_", 1)[0] for column in columns],
    )


def test_constant_column_has_one_bucket():
    bucketizer = fit_bucketizer(np.full((20, 1), 7.0), range(20), buckets=5)
    assert bucketizer.effective_buckets() == [1]
    assert not bucketizer.transform(np.array([[7.0], [-3.0], [99.0]])).any()


def test_equal_frequency_buckets():
    values = np.arange(1.0, 101.0).reshape(-1, 1)
    bucketizer = fit_bucketizer(values, range(100), buckets=4)
    ids = bucketizer.transform(values).reshape(-1)
    assert np.bincount(ids).tolist() == [25, 25, 25, 25]


def test_out_of_range_values_clamp():
    values = np.arange(1.0, 101.0).reshape(-1, 1)
    bucketizer = fit_bucketizer(values, range(100), buckets=4)
    assert bucketizer.transform(np.array([[-1e9], [1e9]])).reshape(-1).tolist() == [0, 3]


def test_fit_uses_training_rows_only():
    values = np.concatenate([np.arange(10.0), np.full(10, 1000.0)]).reshape(-1, 1)
    bucketizer = fit_bucketizer(values, range(10), buckets=2)
    assert bucketizer.boundaries[0].tolist() == [4.5]


def test_fit_errors():
    with pytest.raises(ConfigError):
        fit_bucketizer(np.zeros((3, 1)), [0, 1], buckets=1)
    with pytest.raises(ConfigError):
        fit_bucketizer(np.zeros((3, 1)), [], buckets=4)


def test_bucketizer_json_round_trip():
    bucketizer = fit_bucketizer(np.arange(30.0).reshape(10, 3), range(10), buckets=3)
    again = Bucketizer.from_json(bucketizer.to_json())
    assert again.buckets == 3
    assert all(np.array_equal(a, b) for a, b in zip(again.boundaries, bucketizer.boundaries))


def test_one_hot_blocks():
    encoded = one_hot(np.array([[2, 0]]), 3)
    assert encoded.tolist() == [[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]]


def _embedding(table, buckets, dims, rng=None):
    return GroupEmbedding.initialise(table, buckets, dims, rng or np.random.default_rng(0))


def test_zero_weights_give_zero_vector():
    table = _table([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], ["profile_a", "behavior_b", "loan_c"])
    bucketizer = fit_bucketizer(table, [0, 1], buckets=2)
    embedding = _embedding(table, 2, {"profile": 2, "behavior": 3, "loan": 4})
    for weight in embedding.weights.values():
        weight.data[:] = 0.0
    out = encode(table, bucketizer, embedding, 1)
    assert out.shape == (9,)
    assert not out.any()


def test_single_column_selects_embedding_row():
    values = np.arange(1.0, 101.0).reshape(-1, 1)
    table = _table(values, ["loan_amount"])
    bucketizer = fit_bucketizer(table, range(100), buckets=4)
    embedding = _embedding(table, 4, {"profile": 2, "behavior": 2, "loan": 3})
    # 60 falls in the third quarter
    assert np.array_equal(encode(table, bucketizer, embedding, 59), embedding.weights["loan"].data[2])
    assert embedding.groups == ["loan"]


def test_known_weights_concatenate_by_group():
    table = _table([[0.0, 0.0], [1.0, 1.0]], ["profile_x", "behavior_y"])
    bucketizer = fit_bucketizer(table, [0, 1], buckets=2)
    embedding = _embedding(table, 2, {"profile": 1, "behavior": 2, "loan": 1})
    embedding.weights["profile"].data[:] = [[1.0], [2.0]]
    embedding.weights["behavior"].data[:] = [[3.0, 4.0], [5.0, 6.0]]
    assert encode(table, bucketizer, embedding, 0).tolist() == [1.0, 3.0, 4.0]
    assert encode(table, bucketizer, embedding, 1).tolist() == [2.0, 5.0, 6.0]


def test_value_moves_inside_bucket_keep_encoding():
    values = np.arange(1.0, 101.0).reshape(-1, 1)
    table = _table(values, ["behavior_logins"])
    bucketizer = fit_bucketizer(table, range(100), buckets=4)
    embedding = _embedding(table, 4, {"profile": 1, "behavior": 2, "loan": 1})
    shifted = _table(values + 0.5, ["behavior_logins"])
    # 10 -> 10.5 stays below the first cut point
    assert np.array_equal(encode(table, bucketizer, embedding, 9), encode(shifted, bucketizer, embedding, 9))


def test_encoder_forward_matches_encode(six_features):
    config = resolve_config(None, {"buckets": 3, "embed_dim_profile": 2, "embed_dim_behavior": 2, "embed_dim_loan": 2})
    encoder = InputEncoder.build(six_features, range(6), config, np.random.default_rng(1))
    h0 = encoder.forward()
    assert h0.shape == (6, 6)
    for node in range(6):
        assert np.allclose(h0.data[node], encode(six_features, encoder.bucketizer, encoder.embedding, node))
    assert sorted(encoder.parameters()) == ["encoder.behavior", "encoder.loan", "encoder.profile"]


def test_passthrough_encoder(six_features):
    config = resolve_config(None, {"encoder": "passthrough", "input_dim": 5})
    encoder = InputEncoder.build(six_features, range(6), config, np.random.default_rng(2))
    h0 = encoder.forward()
    expected = six_features.matrix @ encoder.weight.data + encoder.bias.data
    assert h0.shape == (6, 5)
    assert np.allclose(h0.data, expected)
    assert encoder.output_dim == 5
    assert isinstance(encoder.parameters()["encoder.W"], Tensor)
