"""Evaluation metrics and the run report written to metrics.json."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import ks_2samp, rankdata

__all__ = [
    "accuracy",
    "auc",
    "ks",
    "split_metrics",
    "attention_report",
    "plot_attention",
    "MetricsReport",
]

logger = logging.getLogger(__name__)


def _binary_groups(scores: Sequence[float], labels: Sequence[int]):
    values = np.asarray(scores, dtype=np.float64).reshape(-1)
    truth = np.asarray(labels, dtype=np.int64).reshape(-1)
    if values.shape != truth.shape:
        raise ValueError(f"{values.size} scores for {truth.size} labels")
    return values, truth, values[truth == 1], values[truth == 0]


def accuracy(scores: np.ndarray, labels: Sequence[int], task: str = "binary") -> Optional[float]:
    """Share of correct predictions; binary scores are thresholded at 0.5."""
    truth = np.asarray(labels, dtype=np.int64).reshape(-1)
    if truth.size == 0:
        return None
    values = np.asarray(scores, dtype=np.float64)
    if task == "binary":
        predicted = (values.reshape(-1) >= 0.5).astype(np.int64)
    else:
        predicted = np.argmax(values.reshape(truth.size, -1), axis=1)
    return float((predicted == truth).mean())


def auc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """ROC AUC as the Mann-Whitney statistic; ties count one half.

    ``None`` when either class is absent.
    """
    values, truth, positive, negative = _binary_groups(scores, labels)
    if positive.size == 0 or negative.size == 0:
        return None
    ranks = rankdata(values)
    rank_sum = ranks[truth == 1].sum()
    return float((rank_sum - positive.size * (positive.size + 1) / 2.0) / (positive.size * negative.size))


def ks(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """Largest gap between the empirical score CDFs of the two classes."""
    _, _, positive, negative = _binary_groups(scores, labels)
    if positive.size == 0 or negative.size == 0:
        return None
    return float(ks_2samp(positive, negative).statistic)


def split_metrics(scores: np.ndarray, labels: Sequence[int], task: str, loss: Optional[float] = None) -> Dict[str, Optional[float]]:
    truth = np.asarray(labels, dtype=np.int64).reshape(-1)
    result: Dict[str, Optional[float]] = {"count": int(truth.size), "accuracy": accuracy(scores, truth, task)}
    if task == "binary":
        result["auc"] = auc(scores, truth)
        result["ks"] = ks(scores, truth)
        if truth.size and result["auc"] is None:
            logger.warning("AUC and KS undefined: only one class among %d evaluated users", truth.size)
    if loss is not None:
        result["loss"] = float(loss)
    return result


def attention_report(alpha: np.ndarray, view_names: Sequence[str]) -> List[Dict[str, float]]:
    """Mean and quartiles of each view's attention weight across users."""
    weights = np.asarray(alpha, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != len(view_names):
        raise ValueError(f"attention of shape {weights.shape} does not match {len(view_names)} views")
    report = []
    for k, name in enumerate(view_names):
        column = weights[:, k]
        if column.size == 0:
            report.append({"view": name, "mean": None, "q25": None, "median": None, "q75": None})
            continue
        q25, median, q75 = np.quantile(column, [0.25, 0.5, 0.75])
        report.append(
            {"view": name, "mean": float(column.mean()), "q25": float(q25), "median": float(median), "q75": float(q75)}
        )
    return report


def plot_attention(alpha: np.ndarray, view_names: Sequence[str], path: str) -> str:
    """Box plot of attention weights per view, saved as an image."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    weights = np.asarray(alpha, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(view_names) + 2.0), 4.0))
    ax.boxplot([weights[:, k] for k in range(weights.shape[1])], showfliers=False)
    ax.set_xticks(range(1, len(view_names) + 1))
    ax.set_xticklabels(view_names, rotation=45, ha="right")
    ax.set_ylabel("attention weight")
    ax.set_ylim(0.0, 1.0)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info("Attention plot written to %s", path)
    return path


@dataclass
class MetricsReport:
    """Final evaluation of a trained model plus its training history.

    ``accuracy``, ``auc`` and ``ks`` are test-split values; ``None`` means the
    metric is undefined and ``notes`` says why. ``loss`` is the mean training
    loss of the final epoch, ``None`` when no epoch ran.
    """

    accuracy: Optional[float] = None
    auc: Optional[float] = None
    ks: Optional[float] = None
    loss: Optional[float] = None
    splits: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    history: List[Dict[str, Optional[float]]] = field(default_factory=list)
    attention: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    stopped_early: bool = False
    parameter_count: int = 0
    notes: List[str] = field(default_factory=list)

    @classmethod
    def from_splits(cls, splits: Dict[str, Dict[str, Optional[float]]], **kwargs) -> "MetricsReport":
        test = splits.get("test", {})
        report = cls(
            accuracy=test.get("accuracy"),
            auc=test.get("auc"),
            ks=test.get("ks"),
            splits=splits,
            **kwargs,
        )
        for name, values in splits.items():
            if not values.get("count"):
                report.notes.append(f"{name} split is empty")
            elif "auc" in values and values["auc"] is None:
                report.notes.append(f"{name} split holds a single class; AUC and KS undefined")
        return report

    def to_json(self) -> dict:
        return asdict(self)

    def write(self, path: str) -> str:
        folder = os.path.dirname(path)
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_json(), handle, indent=2)
        return path
