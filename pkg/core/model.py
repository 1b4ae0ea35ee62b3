"""Motif-preserving multi-view graph attention network.

Each view (the original graph plus one graph per selected motif class) runs
its own stack of attention layers. Motif views are gated feature-wise by the
original-graph embedding, concatenated with their own embedding, and all
views are mixed per user by a softmax over view scores before a two-layer
prediction head.
"""

from __future__ import annotations

import logging
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.errors import ShapeError
from core.motifs import MotifAdjacency
from core.tensor import (
    Tape,
    Tensor,
    add,
    add_row,
    concat_cols,
    current_tape,
    gather_rows,
    glorot_uniform,
    matmul,
    mul,
    scale_rows,
    segment_sum,
    sigmoid,
    slice_cols,
    softmax_rows,
    softmax_segments,
    tanh,
    zeros,
)

__all__ = [
    "VARIANTS",
    "ViewEdges",
    "ForwardResult",
    "MotifGNN",
    "attention_score",
    "gat_layer",
    "gate",
    "concat_view",
    "fuse",
    "is_bias",
]

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no-gate", "plain-gat")
_BIAS_NAMES = {"b", "b_g", "b1", "b2"}


def is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in _BIAS_NAMES


@dataclass(frozen=True)
class ViewEdges:
    """Aggregation pairs of one view; every destination also appears as its own source."""

    index: int
    name: str
    src: np.ndarray
    dst: np.ndarray
    n: int

    @classmethod
    def from_adjacency(cls, adjacency: MotifAdjacency, direction: str = "in") -> "ViewEdges":
        src, dst = adjacency.message_edges(direction)
        return cls(index=adjacency.index, name=adjacency.name, src=src, dst=dst, n=adjacency.n)


@dataclass
class ForwardResult:
    h: Tensor
    alpha: Tensor
    y_hat: Tensor
    z: List[Tensor]
    edge_attention: List[List[Tensor]]


def attention_score(h_u: np.ndarray, h_v: np.ndarray, w_s: np.ndarray, w_d: np.ndarray, v: np.ndarray) -> float:
    """Raw score v . tanh(W_s h_u + W_d h_v) for destination u and neighbor v."""
    hidden = np.tanh(np.asarray(h_u) @ np.asarray(w_s) + np.asarray(h_v) @ np.asarray(w_d))
    return float(hidden.reshape(-1) @ np.asarray(v).reshape(-1))


def gat_layer(h: Tensor, edges: ViewEdges, params: Mapping[str, Tensor]) -> Tuple[Tensor, Tensor]:
    """One attention layer over ``edges``; returns the new embeddings and per-pair attention.

    ``params`` holds ``W``, ``W_s``, ``W_d`` and ``v`` for this view and layer.
    """
    weight, w_s, w_d, vector = params["W"], params["W_s"], params["W_d"], params["v"]
    if h.cols != weight.rows or h.cols != w_s.rows or h.cols != w_d.rows:
        raise ShapeError(f"gat_layer: embeddings {h.shape} do not fit W {weight.shape} / W_s {w_s.shape}")
    if h.rows != edges.n:
        raise ShapeError(f"gat_layer: embeddings {h.shape} do not fit a view over {edges.n} nodes")
    projected = matmul(h, weight)
    pre = add(gather_rows(matmul(h, w_s), edges.dst), gather_rows(matmul(h, w_d), edges.src))
    scores = matmul(tanh(pre), vector)
    attention = softmax_segments(scores, edges.dst, edges.n)
    messages = scale_rows(gather_rows(projected, edges.src), attention)
    return tanh(segment_sum(messages, edges.dst, edges.n)), attention


def gate(z_u0: Tensor, z_uk: Tensor, w_g: Tensor, b_g: Tensor) -> Tensor:
    """Feature-wise re-weighting of the original-graph embedding by the motif embedding."""
    if z_u0.shape != (z_uk.rows, w_g.cols):
        raise ShapeError(f"gate: z_0 {z_u0.shape} does not match gate output ({z_uk.rows}, {w_g.cols})")
    return mul(z_u0, sigmoid(add_row(matmul(z_uk, w_g), b_g)))


def concat_view(gated: Tensor, z_uk: Tensor) -> Tensor:
    return concat_cols([gated, z_uk])


def fuse(representations: Sequence[Tensor], w_a: Sequence[Tensor]) -> Tuple[Tensor, Tensor]:
    """Per-user softmax over view scores tanh(w_a^k . h_u^k); returns (h_u, alpha_u)."""
    if len(representations) != len(w_a) or not representations:
        raise ShapeError("fuse needs one scoring vector per view")
    width = representations[0].shape
    for rep in representations[1:]:
        if rep.shape != width:
            raise ShapeError(f"fuse: view representations differ in shape ({width} vs {rep.shape})")
    scores = [tanh(matmul(rep, vector)) for rep, vector in zip(representations, w_a)]
    alpha = softmax_rows(concat_cols(scores) if len(scores) > 1 else scores[0])
    fused = scale_rows(representations[0], slice_cols(alpha, 0, 1))
    for k in range(1, len(representations)):
        fused = add(fused, scale_rows(representations[k], slice_cols(alpha, k, k + 1)))
    return fused, alpha


class MotifGNN:
    """Parameters and forward pass for ``view_count`` views (view 0 = original graph)."""

    def __init__(
        self,
        input_dim: int,
        view_count: int,
        rng: np.random.Generator,
        hidden_dim: int = 64,
        att_dim: int = 16,
        layers: int = 2,
        head_dim: int = 32,
        out_dim: int = 1,
        variant: str = "full",
        task: str = "binary",
    ) -> None:
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {', '.join(VARIANTS)}; got {variant!r}")
        if variant == "plain-gat" and view_count != 1:
            raise ShapeError("plain-gat runs on the original graph only")
        if layers < 1 or view_count < 1:
            raise ShapeError("need at least one layer and one view")
        self.input_dim = input_dim
        self.view_count = view_count
        self.hidden_dim = hidden_dim
        self.att_dim = att_dim
        self.layers = layers
        self.head_dim = head_dim
        self.out_dim = out_dim
        self.variant = variant
        self.task = task
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

        dims = [input_dim] + [hidden_dim] * layers
        for k in range(view_count):
            for layer in range(layers):
                prefix = f"view{k}.layer{layer}"
                self._add(glorot_uniform(rng, dims[layer], dims[layer + 1]), f"{prefix}.W")
                self._add(glorot_uniform(rng, dims[layer], att_dim), f"{prefix}.W_s")
                self._add(glorot_uniform(rng, dims[layer], att_dim), f"{prefix}.W_d")
                self._add(glorot_uniform(rng, att_dim, 1), f"{prefix}.v")
            if k >= 1 and variant == "full":
                self._add(glorot_uniform(rng, hidden_dim, hidden_dim), f"view{k}.gate.W_g")
                self._add(zeros(1, hidden_dim), f"view{k}.gate.b_g")
        for k in range(view_count):
            self._add(glorot_uniform(rng, self.representation_dim, 1), f"view{k}.fuse.w_a")
        self._add(glorot_uniform(rng, self.representation_dim, head_dim), "head.W1")
        self._add(zeros(1, head_dim), "head.b1")
        self._add(glorot_uniform(rng, head_dim, out_dim), "head.W2")
        self._add(zeros(1, out_dim), "head.b2")

    @classmethod
    def from_config(cls, config: Mapping, input_dim: int, view_count: int, rng: np.random.Generator) -> "MotifGNN":
        out_dim = 1 if config["task"] == "binary" else int(config["num_classes"])
        return cls(
            input_dim=input_dim,
            view_count=view_count,
            rng=rng,
            hidden_dim=int(config["hidden_dim"]),
            att_dim=int(config["att_dim"]),
            layers=int(config["layers"]),
            head_dim=int(config["head_dim"]),
            out_dim=out_dim,
            variant=config["variant"],
            task=config["task"],
        )

    def _add(self, tensor: Tensor, name: str) -> None:
        tensor.name = name
        self.params[name] = tensor

    @property
    def representation_dim(self) -> int:
        return self.hidden_dim if self.variant == "no-gate" else 2 * self.hidden_dim

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return self.params

    def parameter_count(self) -> int:
        return int(sum(tensor.data.size for tensor in self.params.values()))

    def layer_params(self, k: int, layer: int) -> Dict[str, Tensor]:
        prefix = f"view{k}.layer{layer}"
        return {key: self.params[f"{prefix}.{key}"] for key in ("W", "W_s", "W_d", "v")}

    def _run_view(self, h0: Tensor, position: int, edges: ViewEdges, recording: bool) -> Tuple[Tensor, List[Tensor], Optional[Tape]]:
        tape = Tape() if recording else None
        started = time.perf_counter()
        attention: List[Tensor] = []
        with tape if tape is not None else nullcontext():
            h = h0
            for layer in range(self.layers):
                h, weights = gat_layer(h, edges, self.layer_params(position, layer))
                attention.append(weights)
        logger.debug("View %s forward in %.3fs", edges.name, time.perf_counter() - started)
        return h, attention, tape

    def forward(self, h0: Tensor, views: Sequence[ViewEdges], threads: int = 1) -> ForwardResult:
        """Full-graph forward pass.

        View stacks run on up to ``threads`` workers, each on its own tape;
        the tapes are merged into the caller's tape in view order.
        """
        if len(views) != self.view_count:
            raise ShapeError(f"model expects {self.view_count} views, got {len(views)}")
        if h0.cols != self.input_dim:
            raise ShapeError(f"input embeddings {h0.shape} do not match input_dim {self.input_dim}")
        parent = current_tape()
        recording = parent is not None

        if threads > 1 and len(views) > 1:
            with ThreadPoolExecutor(max_workers=min(threads, len(views))) as pool:
                outcomes = list(pool.map(lambda item: self._run_view(h0, item[0], item[1], recording), enumerate(views)))
        else:
            outcomes = [self._run_view(h0, position, edges, recording) for position, edges in enumerate(views)]

        z: List[Tensor] = []
        edge_attention: List[List[Tensor]] = []
        for embedding, attention, tape in outcomes:
            if parent is not None and tape is not None:
                parent.extend(tape)
            z.append(embedding)
            edge_attention.append(attention)

        representations = self._representations(z)
        w_a = [self.params[f"view{position}.fuse.w_a"] for position in range(len(views))]
        fused, alpha = fuse(representations, w_a)
        hidden = tanh(add_row(matmul(fused, self.params["head.W1"]), self.params["head.b1"]))
        logits = add_row(matmul(hidden, self.params["head.W2"]), self.params["head.b2"])
        y_hat = sigmoid(logits) if self.task == "binary" else softmax_rows(logits)
        return ForwardResult(h=fused, alpha=alpha, y_hat=y_hat, z=z, edge_attention=edge_attention)

    def _representations(self, z: Sequence[Tensor]) -> List[Tensor]:
        if self.variant == "no-gate":
            return list(z)
        z0 = z[0]
        reps = [concat_view(z0, z0)]
        for position, embedding in enumerate(z[1:], start=1):
            gated = gate(
                z0,
                embedding,
                self.params[f"view{position}.gate.W_g"],
                self.params[f"view{position}.gate.b_g"],
            )
            reps.append(concat_view(gated, embedding))
        return reps

    def state(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.params.items()}
