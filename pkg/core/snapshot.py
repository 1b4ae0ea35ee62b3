"""JSON snapshots of trained networks: config, bucket boundaries and parameter arrays."""

from __future__ import annotations

import json
import logging
import os
from typing import Mapping, Sequence

import numpy as np

from core.encoder import Bucketizer
from core.errors import ShapeError, SnapshotError
from core.graph import FeatureTable, LabelSet
from core.motifs import MotifAdjacency
from core.trainer import Network

__all__ = ["SNAPSHOT_FORMAT", "SNAPSHOT_VERSION", "MODEL_KEYS", "save_snapshot", "save_state", "read_snapshot", "load_snapshot"]

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "motifgnn-snapshot"
SNAPSHOT_VERSION = 1

# Keys that decide parameter shapes or the forward pass.
MODEL_KEYS = (
    "encoder",
    "buckets",
    "embed_dim_profile",
    "embed_dim_behavior",
    "embed_dim_loan",
    "input_dim",
    "hidden_dim",
    "att_dim",
    "layers",
    "head_dim",
    "motifs",
    "semantics",
    "aggregate",
    "variant",
    "task",
    "num_classes",
)


def _encode_params(state: Mapping[str, np.ndarray]) -> dict:
    return {name: {"shape": list(np.shape(array)), "data": np.asarray(array).reshape(-1).tolist()} for name, array in state.items()}


def _write(payload: dict, path: str) -> None:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle)


def save_state(state: Mapping[str, np.ndarray], config: Mapping, path: str, note: str = "") -> str:
    """Write bare parameter arrays, e.g. the last good state of a diverged run."""
    payload = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "config": {key: list(value) if isinstance(value, tuple) else value for key, value in config.items() if key in MODEL_KEYS},
        "note": note,
        "params": _encode_params(state),
    }
    _write(payload, path)
    logger.warning("Saved %d parameter arrays to %s", len(state), path)
    return path


def save_snapshot(network: Network, path: str, feature_columns: Sequence[str] = ()) -> str:
    payload = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "config": {key: list(value) if isinstance(value, tuple) else value for key, value in network.config.items() if key in MODEL_KEYS},
        "views": [{"index": index, "name": name} for index, name in zip(network.view_indices, network.view_names)],
        "feature_columns": list(feature_columns),
        "bucketizer": network.encoder.bucketizer.to_json() if network.encoder.bucketizer is not None else None,
        "params": _encode_params({name: tensor.data for name, tensor in network.parameters().items()}),
    }
    _write(payload, path)
    logger.info("Saved snapshot with %d tensors to %s", len(payload["params"]), path)
    return path


def read_snapshot(path: str) -> dict:
    if not os.path.isfile(path):
        raise SnapshotError(f"snapshot not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"{path}: unreadable snapshot ({exc})") from exc
    if payload.get("format") != SNAPSHOT_FORMAT:
        raise SnapshotError(f"{path}: not a model snapshot")
    if payload.get("version") != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version {payload.get('version')!r}")
    return payload


def load_snapshot(
    path: str,
    config: Mapping,
    features: FeatureTable,
    labels: LabelSet,
    views: Sequence[MotifAdjacency],
) -> Network:
    """Rebuild a network for ``config`` and fill it from the snapshot at ``path``.

    Fails with :class:`SnapshotError` when the stored tensors do not match the
    shapes the current config produces.
    """
    payload = read_snapshot(path)
    stored_columns = payload.get("feature_columns") or []
    if stored_columns and list(stored_columns) != list(features.columns):
        raise SnapshotError(f"{path}: snapshot was trained on different feature columns")
    bucketizer = Bucketizer.from_json(payload["bucketizer"]) if payload.get("bucketizer") else None
    if config["variant"] == "plain-gat":
        views = list(views[:1])
    try:
        network = Network.build(features, labels, views, config, np.random.default_rng(0), bucketizer=bucketizer)
    except ShapeError as exc:
        raise SnapshotError(f"{path}: {exc}") from exc
    try:
        state = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload["params"].items()
        }
        network.load_state(state)
    except (KeyError, ValueError, ShapeError) as exc:
        raise SnapshotError(f"{path}: snapshot does not fit the current config ({exc})") from exc
    logger.info("Loaded snapshot %s", path)
    return network
