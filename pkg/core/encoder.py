"""Input module: quantile bucketing, one-hot bucket ids and group-wise embeddings."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from core.errors import ConfigError, ShapeError
from core.graph import FEATURE_GROUPS, FeatureTable
from core.tensor import Tensor, add_row, concat_cols, glorot_uniform, matmul, zeros

__all__ = [
    "Bucketizer",
    "GroupEmbedding",
    "InputEncoder",
    "fit_bucketizer",
    "one_hot",
    "encode",
]

logger = logging.getLogger(__name__)


@dataclass
class Bucketizer:
    """Per-column cut points; a value's bucket is the number of cut points below it."""

    boundaries: List[np.ndarray]
    buckets: int

    @property
    def columns(self) -> int:
        return len(self.boundaries)

    def effective_buckets(self) -> List[int]:
        return [cuts.size + 1 for cuts in self.boundaries]

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        if values.shape[1] != self.columns:
            raise ShapeError(f"bucketizer fitted on {self.columns} columns, got {values.shape[1]}")
        ids = np.empty(values.shape, dtype=np.int64)
        for column, cuts in enumerate(self.boundaries):
            ids[:, column] = np.searchsorted(cuts, values[:, column], side="left")
        return ids

    def to_json(self) -> dict:
        return {"buckets": self.buckets, "boundaries": [cuts.tolist() for cuts in self.boundaries]}

    @classmethod
    def from_json(cls, payload: Mapping) -> "Bucketizer":
        return cls(
            boundaries=[np.asarray(cuts, dtype=np.float64) for cuts in payload["boundaries"]],
            buckets=int(payload["buckets"]),
        )


def fit_bucketizer(features, train_rows: Sequence[int], buckets: int = 10) -> Bucketizer:
    """Equal-frequency cut points at the j/B quantiles of the training rows.

    Repeated quantiles collapse, and a cut at the column maximum is dropped,
    so skewed or constant columns end up with fewer effective buckets.
    """
    if buckets < 2:
        raise ConfigError(f"buckets must be >= 2; got {buckets}")
    rows = np.asarray(train_rows, dtype=np.int64)
    if rows.size == 0:
        raise ConfigError("fit_bucketizer needs at least one training row")
    matrix = features.matrix if isinstance(features, FeatureTable) else np.asarray(features, dtype=np.float64)
    sample = matrix[rows]
    levels = np.arange(1, buckets) / buckets
    boundaries = []
    for column in range(sample.shape[1]):
        values = sample[:, column]
        cuts = np.unique(np.quantile(values, levels))
        boundaries.append(cuts[cuts < values.max()])
    return Bucketizer(boundaries=boundaries, buckets=buckets)


def one_hot(bucket_ids: np.ndarray, buckets: int) -> np.ndarray:
    """Concatenate per-column one-hot blocks of width ``buckets``."""
    ids = np.atleast_2d(bucket_ids)
    count, columns = ids.shape
    encoded = np.zeros((count, columns * buckets))
    offsets = np.arange(columns) * buckets
    encoded[np.repeat(np.arange(count), columns), (ids + offsets).reshape(-1)] = 1.0
    return encoded


@dataclass
class GroupEmbedding:
    """One linear map per feature group, from its one-hot block to ``d_g``."""

    weights: Dict[str, Tensor]
    columns: Dict[str, List[int]]
    buckets: int

    @property
    def groups(self) -> List[str]:
        return [group for group in FEATURE_GROUPS if group in self.weights]

    @property
    def output_dim(self) -> int:
        return sum(self.weights[group].cols for group in self.groups)

    @classmethod
    def initialise(
        cls,
        table: FeatureTable,
        buckets: int,
        dims: Mapping[str, int],
        rng: np.random.Generator,
    ) -> "GroupEmbedding":
        weights: Dict[str, Tensor] = {}
        columns: Dict[str, List[int]] = {}
        for group in FEATURE_GROUPS:
            members = table.group_columns(group)
            if not members:
                continue
            columns[group] = members
            weights[group] = glorot_uniform(rng, len(members) * buckets, int(dims[group]), name=f"encoder.{group}")
        return cls(weights=weights, columns=columns, buckets=buckets)


def encode(features, bucketizer: Bucketizer, embeddings: GroupEmbedding, node: int) -> np.ndarray:
    """Input embedding of a single node: concatenated group embeddings of its one-hot buckets."""
    matrix = features.matrix if isinstance(features, FeatureTable) else np.asarray(features, dtype=np.float64)
    ids = bucketizer.transform(matrix[node:node + 1])
    parts = []
    for group in embeddings.groups:
        block = one_hot(ids[:, embeddings.columns[group]], embeddings.buckets)
        parts.append(block @ embeddings.weights[group].data)
    if not parts:
        return np.zeros(0)
    return np.hstack(parts).reshape(-1)


@dataclass
class InputEncoder:
    """Produces h0 for every node on the active tape.

    ``bucket`` mode uses the bucketizer and group embeddings; ``passthrough``
    mode feeds the raw feature rows through one affine layer, for featureless
    or bag-of-words benchmark graphs.
    """

    mode: str
    bucketizer: Optional[Bucketizer] = None
    embedding: Optional[GroupEmbedding] = None
    weight: Optional[Tensor] = None
    bias: Optional[Tensor] = None
    _inputs: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @classmethod
    def build(
        cls,
        table: FeatureTable,
        train_rows: Sequence[int],
        config: Mapping,
        rng: np.random.Generator,
        bucketizer: Optional[Bucketizer] = None,
    ) -> "InputEncoder":
        if config["encoder"] == "passthrough":
            encoder = cls(
                mode="passthrough",
                weight=glorot_uniform(rng, table.shape[1], int(config["input_dim"]), name="encoder.W"),
                bias=zeros(1, int(config["input_dim"]), name="encoder.b"),
            )
        else:
            fitted = bucketizer or fit_bucketizer(table, train_rows, int(config["buckets"]))
            dims = {group: int(config[f"embed_dim_{group}"]) for group in FEATURE_GROUPS}
            encoder = cls(
                mode="bucket",
                bucketizer=fitted,
                embedding=GroupEmbedding.initialise(table, fitted.buckets, dims, rng),
            )
        encoder.prepare(table)
        return encoder

    def prepare(self, table: FeatureTable) -> None:
        """Precompute the constant inputs (one-hot blocks or raw rows) for ``table``."""
        self._inputs = {}
        if self.mode == "passthrough":
            self._inputs["raw"] = np.asarray(table.matrix, dtype=np.float64)
            return
        ids = self.bucketizer.transform(table.matrix)
        for group in self.embedding.groups:
            self._inputs[group] = one_hot(ids[:, self.embedding.columns[group]], self.embedding.buckets)

    @property
    def output_dim(self) -> int:
        if self.mode == "passthrough":
            return self.weight.cols
        return self.embedding.output_dim

    def parameters(self) -> Dict[str, Tensor]:
        if self.mode == "passthrough":
            return {"encoder.W": self.weight, "encoder.b": self.bias}
        return {f"encoder.{group}": self.embedding.weights[group] for group in self.embedding.groups}

    def forward(self) -> Tensor:
        if self.mode == "passthrough":
            return add_row(matmul(Tensor(self._inputs["raw"]), self.weight), self.bias)
        parts = [matmul(Tensor(self._inputs[group]), self.embedding.weights[group]) for group in self.embedding.groups]
        if not parts:
            raise ShapeError("feature table holds no columns to encode")
        return concat_cols(parts) if len(parts) > 1 else parts[0]
