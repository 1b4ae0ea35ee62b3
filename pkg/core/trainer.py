"""Mini-batch training of the motif network with curriculum-weighted loss.

``train`` runs the whole loop: shuffled batches of labeled training users, a
full-graph forward pass per batch on a fresh tape, curriculum weights from
the batch's view attention, Adam updates and early stopping on the
validation split. The best parameters seen are restored before the final
evaluation.
"""

from __future__ import annotations

import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.config import effective_threads, resolve_config
from core.curriculum import curriculum_weights, weighted_loss
from core.encoder import Bucketizer, InputEncoder
from core.errors import ConfigError, ShapeError, TrainingDivergedError
from core.graph import SPLITS, DirectedGraph, FeatureTable, LabelSet
from core.metrics import MetricsReport, attention_report, split_metrics
from core.model import ForwardResult, MotifGNN, ViewEdges, is_bias
from core.motifs import MotifAdjacency
from core.tensor import Tape, Tensor, gather_rows, mul, zero_grad

__all__ = [
    "Adam",
    "Network",
    "TrainResult",
    "SeedSummary",
    "train",
    "train_step",
    "evaluate",
    "train_seeds",
    "sweep",
]

logger = logging.getLogger(__name__)


class Adam:
    """Adam over named tensors, skipping any whose ``grad`` is unset."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 0.005,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for name, param in self.params.items():
            if param.grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * param.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * param.grad ** 2
            param.data -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


@dataclass
class Network:
    """Input encoder and motif model trained together, plus the views they expect."""

    config: Dict
    encoder: InputEncoder
    model: MotifGNN
    view_indices: List[int]
    view_names: List[str]
    last_good: Optional[Dict[str, np.ndarray]] = field(default=None, repr=False)

    @classmethod
    def build(
        cls,
        features: FeatureTable,
        labels: LabelSet,
        views: Sequence[MotifAdjacency],
        config: Mapping,
        rng: np.random.Generator,
        bucketizer: Optional[Bucketizer] = None,
    ) -> "Network":
        train_rows = labels.indices("train")
        if train_rows.size == 0 and bucketizer is None and config["encoder"] == "bucket":
            train_rows = np.arange(features.shape[0])
        encoder = InputEncoder.build(features, train_rows, config, rng, bucketizer=bucketizer)
        model = MotifGNN.from_config(config, encoder.output_dim, len(views), rng)
        return cls(
            config=dict(config),
            encoder=encoder,
            model=model,
            view_indices=[view.index for view in views],
            view_names=[view.name for view in views],
        )

    def parameters(self) -> "OrderedDict[str, Tensor]":
        merged: "OrderedDict[str, Tensor]" = OrderedDict(self.encoder.parameters())
        merged.update(self.model.parameters())
        return merged

    def regularized(self) -> List[Tuple[str, Tensor]]:
        return [(name, tensor) for name, tensor in self.parameters().items() if not is_bias(name)]

    def parameter_count(self) -> int:
        return int(sum(tensor.data.size for tensor in self.parameters().values()))

    def state(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.parameters().items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ShapeError(f"parameter names differ: missing {missing}, unexpected {unexpected}")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ShapeError(f"{name}: expected shape {tensor.shape}, got {value.shape}")
            tensor.data[...] = value

    def edges(self, views: Sequence[MotifAdjacency]) -> List[ViewEdges]:
        if [view.index for view in views] != self.view_indices:
            raise ShapeError(f"network was built for views {self.view_indices}, got {[v.index for v in views]}")
        return [ViewEdges.from_adjacency(view, self.config["aggregate"]) for view in views]

    def forward(self, edges: Sequence[ViewEdges], threads: int = 1, dropout_mask: Optional[np.ndarray] = None) -> ForwardResult:
        h0 = self.encoder.forward()
        if dropout_mask is not None:
            h0 = mul(h0, Tensor(dropout_mask))
        return self.model.forward(h0, edges, threads=threads)


@dataclass
class TrainResult:
    network: Network
    report: MetricsReport
    alpha: np.ndarray
    scores: np.ndarray


@dataclass
class SeedSummary:
    seeds: List[int]
    reports: List[MetricsReport]
    mean: Dict[str, Optional[float]] = field(default_factory=dict)
    std: Dict[str, Optional[float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "mean": self.mean,
            "std": self.std,
            "runs": [report.to_json() for report in self.reports],
        }


def _scores(result: ForwardResult, task: str) -> np.ndarray:
    return result.y_hat.data.reshape(-1) if task == "binary" else result.y_hat.data


def _mean_loss(y_hat: np.ndarray, y: np.ndarray, task: str) -> Optional[float]:
    if y.size == 0:
        return None
    rows = Tensor(y_hat.reshape(y.size, -1))
    uniform = Tensor(np.full((y.size, 1), 1.0 / y.size))
    return weighted_loss(rows, y, uniform, rescale_beta=True, task=task).item()


def evaluate(
    network: Network,
    edges: Sequence[ViewEdges],
    labels: LabelSet,
    threads: int = 1,
) -> Tuple[Dict[str, Dict[str, Optional[float]]], ForwardResult]:
    """Metrics per split from one forward pass without a tape."""
    task = network.config["task"]
    result = network.forward(edges, threads=threads)
    scores = _scores(result, task)
    splits = {}
    for split in SPLITS:
        rows = labels.indices(split)
        y = labels.y[rows]
        chosen = scores[rows]
        splits[split] = split_metrics(chosen, y, task, loss=_mean_loss(np.asarray(chosen), y, task))
    return splits, result


def _dropout_mask(rng: np.random.Generator, shape: Tuple[int, int], rate: float) -> Optional[np.ndarray]:
    if rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _diverged(network: Network, message: str) -> None:
    state = network.last_good if network.last_good is not None else network.state()
    network.load_state(state)
    raise TrainingDivergedError(message, last_good=state)


def train_step(
    network: Network,
    edges: Sequence[ViewEdges],
    batch: np.ndarray,
    labels: LabelSet,
    optimizer: Adam,
    threads: int = 1,
    dropout_rng: Optional[np.random.Generator] = None,
) -> Optional[float]:
    """One Adam update on ``batch``; returns the batch loss, or ``None`` for an empty batch.

    The parameters in effect before the last successful update are kept in
    ``network.last_good``. When the loss or any gradient is not finite the
    network is rolled back to them and ``TrainingDivergedError`` carries them.
    """
    config = network.config
    if batch.size == 0:
        return None
    params = network.parameters()
    zero_grad(params.values())
    mask = None
    if dropout_rng is not None:
        mask = _dropout_mask(dropout_rng, (labels.y.shape[0], network.encoder.output_dim), float(config["dropout"]))
    with Tape() as tape:
        result = network.forward(edges, threads=threads, dropout_mask=mask)
        alpha = gather_rows(result.alpha, batch)
        state = curriculum_weights(alpha.detach() if config["beta_stop_gradient"] else alpha, enabled=config["curriculum"])
        y_hat = gather_rows(result.y_hat, batch)
        loss = weighted_loss(
            y_hat,
            labels.y[batch],
            state.beta,
            params=network.regularized(),
            lambda_reg=float(config["lambda_reg"]),
            rescale_beta=config["rescale_beta"],
            task=config["task"],
        )
    value = loss.item()
    if not np.isfinite(value):
        _diverged(network, f"loss is {value} on a batch of {batch.size}")
    tape.backward(loss)
    for name, tensor in params.items():
        if tensor.grad is not None and not np.all(np.isfinite(tensor.grad)):
            _diverged(network, f"gradient of {name} is not finite")
    network.last_good = network.state()
    optimizer.step()
    return value


def _monitor(valid: Mapping[str, Optional[float]], task: str, train_loss: float) -> float:
    key = "auc" if task == "binary" else "accuracy"
    if valid.get(key) is not None:
        return float(valid[key])
    if valid.get("loss") is not None:
        return -float(valid["loss"])
    return -train_loss


def _batches(rows: np.ndarray, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(rows)
    return [order[start:start + batch_size] for start in range(0, order.size, batch_size)]


def train(
    graph: DirectedGraph,
    views: Sequence[MotifAdjacency],
    features: FeatureTable,
    labels: LabelSet,
    config: Mapping,
    threads: Optional[int] = None,
    bucketizer: Optional[Bucketizer] = None,
    on_epoch: Optional[Callable[[Dict], None]] = None,
) -> TrainResult:
    """Train on the ``train`` split, early-stop on ``valid`` and report all splits.

    ``views`` start with the original graph; a ``plain-gat`` run uses only it.
    """
    if features.shape[0] != graph.n:
        raise ShapeError(f"feature table has {features.shape[0]} rows for {graph.n} nodes")
    if labels.y.shape[0] != graph.n:
        raise ShapeError(f"label set covers {labels.y.shape[0]} nodes for {graph.n} graph nodes")
    if not views:
        raise ConfigError("train needs at least the original-graph view")
    train_rows = labels.indices("train")
    if train_rows.size == 0:
        raise ConfigError("no labeled users in the train split")
    if config["variant"] == "plain-gat":
        views = list(views[:1])
    workers = threads if threads is not None else effective_threads(config)
    init_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(int(config["seed"])).spawn(3)
    network = Network.build(features, labels, views, config, np.random.default_rng(init_seq), bucketizer=bucketizer)
    edges = network.edges(views)
    optimizer = Adam(network.parameters(), lr=float(config["lr"]))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq) if float(config["dropout"]) > 0.0 else None
    task = config["task"]

    logger.info(
        "Training %s model: %d views, %d parameters, %d train users, %d epochs",
        config["variant"],
        len(views),
        network.parameter_count(),
        train_rows.size,
        int(config["epochs"]),
    )
    best_state = network.state()
    best_score = -np.inf
    best_epoch = 0
    stale = 0
    stopped_early = False
    history: List[Dict] = []
    patience = int(config["patience"])
    epochs_run = 0

    for epoch in range(1, int(config["epochs"]) + 1):
        started = time.perf_counter()
        losses = []
        for batch in _batches(train_rows, int(config["batch_size"]), shuffle_rng):
            value = train_step(network, edges, batch, labels, optimizer, threads=workers, dropout_rng=dropout_rng)
            if value is not None:
                losses.append(value)
        epochs_run = epoch
        train_loss = float(np.mean(losses)) if losses else 0.0
        splits, _ = evaluate(network, edges, labels, threads=workers)
        score = _monitor(splits["valid"], task, train_loss)
        entry = {"epoch": epoch, "train_loss": train_loss, "monitor": score}
        entry.update({f"valid_{key}": value for key, value in splits["valid"].items() if key != "count"})
        history.append(entry)
        logger.info("Epoch %d: train loss %.5f, monitor %.5f (%.2fs)", epoch, train_loss, score, time.perf_counter() - started)
        if on_epoch is not None:
            on_epoch(entry)
        if score > best_score:
            best_score, best_epoch, best_state, stale = score, epoch, network.state(), 0
        else:
            stale += 1
            if patience > 0 and stale >= patience:
                stopped_early = True
                logger.info("Early stopping after epoch %d; best epoch %d", epoch, best_epoch)
                break

    network.load_state(best_state)
    splits, result = evaluate(network, edges, labels, threads=workers)
    report = MetricsReport.from_splits(
        splits,
        history=history,
        loss=history[-1]["train_loss"] if history else None,
        attention=attention_report(result.alpha.data, network.view_names),
        best_epoch=best_epoch,
        epochs_run=epochs_run,
        stopped_early=stopped_early,
        parameter_count=network.parameter_count(),
    )
    logger.info("Finished: test auc=%s ks=%s accuracy=%s", report.auc, report.ks, report.accuracy)
    return TrainResult(network=network, report=report, alpha=result.alpha.data.copy(), scores=_scores(result, task).copy())


def _summarise(reports: Sequence[MetricsReport]) -> Tuple[Dict[str, Optional[float]], Dict[str, Optional[float]]]:
    mean: Dict[str, Optional[float]] = {}
    std: Dict[str, Optional[float]] = {}
    for key in ("accuracy", "auc", "ks"):
        values = [getattr(report, key) for report in reports if getattr(report, key) is not None]
        mean[key] = float(np.mean(values)) if values else None
        std[key] = float(np.std(values, ddof=1)) if len(values) > 1 else (0.0 if values else None)
    return mean, std


def train_seeds(
    graph: DirectedGraph,
    views: Sequence[MotifAdjacency],
    features: FeatureTable,
    labels: LabelSet,
    config: Mapping,
    seeds: Sequence[int],
    threads: Optional[int] = None,
) -> Tuple[SeedSummary, List[TrainResult]]:
    """Repeat training for each seed and summarise test metrics as mean and std."""
    results = []
    for seed in seeds:
        logger.info("Seed %d", seed)
        results.append(train(graph, views, features, labels, resolve_config(dict(config), {"seed": seed}), threads=threads))
    reports = [result.report for result in results]
    mean, std = _summarise(reports)
    return SeedSummary(seeds=list(seeds), reports=reports, mean=mean, std=std), results


def sweep(
    graph: DirectedGraph,
    views: Sequence[MotifAdjacency],
    features: FeatureTable,
    labels: LabelSet,
    config: Mapping,
    hidden_dims: Sequence[int],
    threads: Optional[int] = None,
) -> List[Dict]:
    """Train once per hidden width; one summary row per width."""
    rows = []
    for width in hidden_dims:
        run_config = resolve_config(dict(config), {"hidden_dim": int(width)})
        result = train(graph, views, features, labels, run_config, threads=threads)
        rows.append(
            {
                "hidden_dim": int(width),
                "parameter_count": result.report.parameter_count,
                "accuracy": result.report.accuracy,
                "auc": result.report.auc,
                "ks": result.report.ks,
                "best_epoch": result.report.best_epoch,
            }
        )
    return rows
