import numpy as np
import pytest

from core.config import resolve_config
from core.errors import ConfigError, ShapeError, TrainingDivergedError
from core.graph import LabelSet
from core.motifs import build_views, enumerate_instances
from core.synth import SynthParams, generate
from core.tensor import Tensor
from core.trainer import Adam, Network, evaluate, sweep, train, train_seeds, train_step


def _views(graph, config):
    return build_views(graph, enumerate_instances(graph), config["motifs"], config["semantics"])


def _with(config, **overrides):
    return resolve_config(dict(config), overrides)


@pytest.fixture
def mixed_labels():
    # train a, c, d; valid f; test b (default) and e (normal)
    return LabelSet(y=np.array([1, 1, 1, 0, 0, 0]), split=np.array([0, 2, 0, 0, 2, 1]))


def test_adam_first_step_moves_by_learning_rate():
    param = Tensor([[1.0, -1.0]], requires_grad=True)
    idle = Tensor([[3.0]], requires_grad=True)
    param.grad = np.array([[2.0, -0.5]])
    optimizer = Adam({"w": param, "idle": idle}, lr=0.1)
    optimizer.step()
    assert np.allclose(param.data, [[0.9, -0.9]], atol=1e-8, rtol=0)
    assert idle.data.tolist() == [[3.0]]
    assert optimizer.steps == 1


def test_zero_epochs_keep_initial_parameters(six_graph, six_features, six_labels, tiny_config):
    config = _with(tiny_config, epochs=0)
    views = _views(six_graph, config)
    result = train(six_graph, views, six_features, six_labels, config, threads=1)
    init_seq = np.random.SeedSequence(int(config["seed"])).spawn(3)[0]
    fresh = Network.build(six_features, six_labels, views, config, np.random.default_rng(init_seq))
    state = result.network.state()
    assert all(np.array_equal(state[name], value) for name, value in fresh.state().items())
    assert result.report.epochs_run == 0
    assert result.report.history == []
    assert result.report.loss is None


def test_training_is_deterministic(six_graph, six_features, mixed_labels, tiny_config):
    views = _views(six_graph, tiny_config)
    first = train(six_graph, views, six_features, mixed_labels, tiny_config, threads=1)
    second = train(six_graph, views, six_features, mixed_labels, tiny_config, threads=1)
    assert first.report.to_json() == second.report.to_json()
    assert np.array_equal(first.scores, second.scores)


def test_thread_count_does_not_change_results(six_graph, six_features, mixed_labels, tiny_config):
    views = _views(six_graph, tiny_config)
    serial = train(six_graph, views, six_features, mixed_labels, tiny_config, threads=1)
    parallel = train(six_graph, views, six_features, mixed_labels, tiny_config, threads=4)
    assert serial.report.to_json() == parallel.report.to_json()
    assert np.array_equal(serial.alpha, parallel.alpha)


def test_identical_attention_makes_curriculum_a_no_op(six_graph, six_features, six_labels, tiny_config):
    # a single view gives every user the attention vector [1.0]
    config = _with(tiny_config, variant="plain-gat", batch_size=3, patience=0)
    views = _views(six_graph, config)
    weighted = train(six_graph, views, six_features, six_labels, _with(config, curriculum=True), threads=1)
    uniform = train(six_graph, views, six_features, six_labels, _with(config, curriculum=False), threads=1)
    left, right = weighted.network.state(), uniform.network.state()
    assert all(np.array_equal(left[name], right[name]) for name in left)


def test_loss_decreases_and_fits_the_fixture(six_graph, six_features, six_labels, tiny_config):
    config = _with(tiny_config, epochs=200, patience=0, lr=0.02)
    result = train(six_graph, _views(six_graph, config), six_features, six_labels, config, threads=1)
    losses = [entry["train_loss"] for entry in result.report.history]
    assert len(losses) == 200
    assert losses[9] < losses[0]
    assert result.report.loss == losses[-1]
    assert result.report.splits["train"]["accuracy"] == 1.0


def test_divergence_raises_with_last_good_state(monkeypatch, six_graph, six_features, six_labels, tiny_config):
    monkeypatch.setattr("core.trainer.weighted_loss", lambda *args, **kwargs: Tensor(np.nan))
    views = _views(six_graph, tiny_config)
    with pytest.raises(TrainingDivergedError) as info:
        train(six_graph, views, six_features, six_labels, tiny_config, threads=1)
    assert "not finite" in str(info.value) or "nan" in str(info.value)
    assert "head.W1" in info.value.last_good


def test_divergence_rolls_back_to_parameters_before_the_failing_update(
    monkeypatch, six_graph, six_features, six_labels, tiny_config
):
    views = _views(six_graph, tiny_config)
    network = Network.build(six_features, six_labels, views, tiny_config, np.random.default_rng(2))
    edges = network.edges(views)
    optimizer = Adam(network.parameters(), lr=0.01)
    batch = six_labels.indices("train")
    before_update = network.state()
    assert train_step(network, edges, batch, six_labels, optimizer, threads=1) is not None
    after_update = network.state()
    assert not np.array_equal(after_update["head.W1"], before_update["head.W1"])

    monkeypatch.setattr("core.trainer.weighted_loss", lambda *args, **kwargs: Tensor(np.nan))
    with pytest.raises(TrainingDivergedError) as info:
        train_step(network, edges, batch, six_labels, optimizer, threads=1)
    for name, value in before_update.items():
        assert np.array_equal(info.value.last_good[name], value)
        assert np.array_equal(network.state()[name], value)


def test_empty_train_split_is_refused(six_graph, six_features, tiny_config):
    labels = LabelSet(y=np.array([1, 1, 1, 0, 0, 0]), split=np.array([1, 2, 1, 1, 2, 2]))
    with pytest.raises(ConfigError, match="train split"):
        train(six_graph, _views(six_graph, tiny_config), six_features, labels, tiny_config, threads=1)


def test_early_stopping_restores_best_epoch(six_graph, six_features, mixed_labels, tiny_config):
    config = _with(tiny_config, epochs=30, patience=2)
    result = train(six_graph, _views(six_graph, config), six_features, mixed_labels, config, threads=1)
    report = result.report
    monitors = [entry["monitor"] for entry in report.history]
    assert report.best_epoch == int(np.argmax(monitors)) + 1
    if report.stopped_early:
        assert report.epochs_run == report.best_epoch + 2


def test_evaluate_reports_every_split(six_graph, six_features, mixed_labels, tiny_config):
    views = _views(six_graph, tiny_config)
    network = Network.build(six_features, mixed_labels, views, tiny_config, np.random.default_rng(0))
    splits, result = evaluate(network, network.edges(views), mixed_labels)
    assert [splits[name]["count"] for name in ("train", "valid", "test")] == [3, 1, 2]
    assert splits["test"]["auc"] is not None
    assert splits["valid"]["auc"] is None
    assert result.y_hat.shape == (6, 1)


def test_network_rejects_foreign_state_and_views(six_graph, six_features, six_labels, tiny_config):
    views = _views(six_graph, tiny_config)
    network = Network.build(six_features, six_labels, views, tiny_config, np.random.default_rng(0))
    state = network.state()
    state["head.W1"] = np.zeros((1, 1))
    with pytest.raises(ShapeError):
        network.load_state(state)
    with pytest.raises(ShapeError):
        network.load_state({"head.W1": np.zeros((1, 1))})
    with pytest.raises(ShapeError):
        network.edges(views[:2])


def test_biases_are_not_regularized(six_graph, six_features, six_labels, tiny_config):
    views = _views(six_graph, tiny_config)
    network = Network.build(six_features, six_labels, views, tiny_config, np.random.default_rng(0))
    names = [name for name, _ in network.regularized()]
    assert "head.W1" in names and "encoder.loan" in names
    assert not any(name.endswith((".b1", ".b2", ".b_g")) for name in names)


def test_train_seeds_summary(six_graph, six_features, mixed_labels, tiny_config):
    config = _with(tiny_config, epochs=2)
    summary, results = train_seeds(six_graph, _views(six_graph, config), six_features, mixed_labels, config, seeds=[3, 4], threads=1)
    assert summary.seeds == [3, 4]
    assert len(results) == 2
    aucs = [report.auc for report in summary.reports]
    assert summary.mean["auc"] == pytest.approx(np.mean(aucs))
    assert summary.std["auc"] == pytest.approx(np.std(aucs, ddof=1))
    assert sorted(summary.to_json()) == ["mean", "runs", "seeds", "std"]


def test_sweep_rows(six_graph, six_features, mixed_labels, tiny_config):
    config = _with(tiny_config, epochs=1)
    rows = sweep(six_graph, _views(six_graph, config), six_features, mixed_labels, config, hidden_dims=[2, 6], threads=1)
    assert [row["hidden_dim"] for row in rows] == [2, 6]
    assert rows[0]["parameter_count"] < rows[1]["parameter_count"]


@pytest.mark.slow
def test_motif_views_beat_ablations_on_planted_triangles():
    dataset = generate(SynthParams())
    base = resolve_config(None, {"hidden_dim": 32, "epochs": 60, "patience": 10, "threads": 1})
    views = _views(dataset.graph, base)
    over_plain, over_no_gate = [], []
    for seed in range(5):
        auc = {
            variant: train(
                dataset.graph, views, dataset.features, dataset.labels, _with(base, seed=seed, variant=variant)
            ).report.auc
            for variant in ("full", "no-gate", "plain-gat")
        }
        over_plain.append(auc["full"] - auc["plain-gat"])
        over_no_gate.append(auc["full"] - auc["no-gate"])
    assert np.median(over_plain) >= 0.03
    assert np.median(over_no_gate) >= 0.01
