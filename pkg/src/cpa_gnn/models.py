"""GAT node classifier and GAT-GC graph classifier."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import VARIANTS
from .aggregators import (
    AggregatorSpec,
    Neighborhoods,
    aggregate,
    attention_weights,
    projected_coefficients,
)
from .autodiff import Tensor, ops
from .autodiff.ops import Segments
from .graphs import Graph, one_hot_ids
from .nn import MLP, BatchNorm, Linear, Module, glorot

PSI_HIDDEN = 16
ACTIVATIONS = {"relu": ops.relu, "identity": lambda x: x}


class AttentionLayer(Module):
    """One aggregation layer: GAT attention plus a configurable aggregation rule.

    The post-aggregation transform is ``activation(z + bias)`` for every
    variant, so variants differ only in how cardinality enters ``z``.
    Heads are concatenated.
    """

    def __init__(self, in_dim: int, out_dim: int, variant: str, rng: np.random.Generator,
                 heads: int = 1, leaky_slope: float = 0.2, activation: str = "relu"):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown aggregator {variant!r}; expected one of {VARIANTS}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim, self.out_dim, self.heads = in_dim, out_dim, heads
        self.variant = variant
        self.leaky_slope = leaky_slope
        self.activation = activation
        self.W, self.a, self.w, self.psi = [], [], [], []
        for k in range(heads):
            self.W.append(self.param(f"W{k}", glorot(rng, in_dim, out_dim)))
            self.a.append(self.param(f"a{k}", glorot(rng, 2 * out_dim, 1)))
            if variant == "additive":
                self.w.append(self.param(f"w{k}", np.ones(out_dim)))
            if variant == "scaled":
                self.psi.append(self.child(f"psi{k}", MLP(1, PSI_HIDDEN, out_dim, rng)))
        self.bias = self.param("bias", np.zeros(heads * out_dim))

    @property
    def width(self) -> int:
        return self.heads * self.out_dim

    def attention(self, h: Tensor, nb: Neighborhoods) -> list[Tensor]:
        return [attention_weights(projected_coefficients(ops.matmul(h, W), nb, a, self.leaky_slope), nb)
                for W, a in zip(self.W, self.a)]

    def aggregate(self, h: Tensor, nb: Neighborhoods) -> Tensor:
        """Pre-activation output ``z`` (heads concatenated, no bias)."""
        outs = []
        for k in range(self.heads):
            wh = ops.matmul(h, self.W[k])
            alpha = attention_weights(projected_coefficients(wh, nb, self.a[k], self.leaky_slope), nb)
            spec = AggregatorSpec(
                self.variant,
                w=self.w[k] if self.w else None,
                psi=self.psi[k] if self.psi else None,
            )
            outs.append(aggregate(spec, wh, alpha, nb))
        return outs[0] if len(outs) == 1 else ops.concat_last_axis(outs)

    def __call__(self, h: Tensor, nb: Neighborhoods) -> Tensor:
        return ACTIVATIONS[self.activation](ops.add(self.aggregate(h, nb), self.bias))


@dataclass(frozen=True)
class GraphBatch:
    """Disjoint union of graphs ready for a forward pass."""

    x: np.ndarray
    nb: Neighborhoods
    graph_ids: Segments
    num_graphs: int

    @classmethod
    def from_graphs(cls, graphs: Sequence[Graph], num_categories: int) -> "GraphBatch":
        if not graphs:
            raise ValueError("empty batch")
        for g in graphs:
            if g.num_nodes == 0:
                raise ValueError("graphs must have at least one node")
            if g.node_feature_ids.max() >= num_categories:
                raise ValueError(
                    f"feature id {int(g.node_feature_ids.max())} does not fit input width {num_categories}"
                )
        x = one_hot_ids(np.concatenate([g.node_feature_ids for g in graphs]), num_categories)
        ids = np.repeat(np.arange(len(graphs)), [g.num_nodes for g in graphs])
        return cls(x, Neighborhoods.from_graphs(graphs), Segments.from_ids(ids, len(graphs)), len(graphs))

    @property
    def node_counts(self) -> np.ndarray:
        return self.graph_ids.counts


def readout(h: Tensor, graph_ids: Segments, mode: str) -> Tensor:
    pooled = ops.segment_sum(h, graph_ids)
    if mode == "sum":
        return pooled
    if mode == "mean":
        return ops.mul(pooled, Tensor(1.0 / graph_ids.counts.reshape(-1, 1)))
    raise ValueError(f"readout must be 'sum' or 'mean', got {mode!r}")


def readout_concat(per_layer: Sequence[Tensor], graph_ids: Segments, mode: str) -> Tensor:
    """Concatenate per-layer readouts, in layer order."""
    return ops.concat_last_axis([readout(h, graph_ids, mode) for h in per_layer])


class GatNodeModel(Module):
    """Stacked attention layers followed by a linear node classifier."""

    def __init__(self, in_dim: int, num_classes: int, variant: str = "original",
                 hidden: int = 32, layers: int = 2, heads: int = 1, seed: int = 0,
                 activation: str = "relu"):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.in_dim, self.num_classes, self.variant = in_dim, num_classes, variant
        self.layers = []
        width = in_dim
        for k in range(layers):
            layer = AttentionLayer(width, hidden, variant, rng, heads, activation=activation)
            self.layers.append(self.child(f"layer{k}", layer))
            width = layer.width
        self.classifier = self.child("classifier", Linear(width, num_classes, rng))

    def __call__(self, x: Tensor, nb: Neighborhoods) -> Tensor:
        if x.shape[1] != self.in_dim:
            raise ValueError(f"model expects input width {self.in_dim}, got shape {x.shape}")
        h = x
        for layer in self.layers:
            h = layer(h, nb)
        return self.classifier(h)


class GatGcModel(Module):
    """Graph classifier: attention layers, batch norm, concatenated readouts."""

    def __init__(self, in_dim: int, num_classes: int, variant: str = "original",
                 hidden: int = 32, layers: int = 4, readout: str = "sum", dropout: float = 0.0,
                 heads: int = 1, seed: int = 0, batch_norm: bool = True, activation: str = "relu"):
        super().__init__()
        if readout not in ("sum", "mean"):
            raise ValueError(f"readout must be 'sum' or 'mean', got {readout!r}")
        rng = np.random.default_rng(seed)
        self.in_dim, self.num_classes, self.variant = in_dim, num_classes, variant
        self.readout_mode = readout
        self.dropout = dropout
        self.layers, self.norms = [], []
        width = in_dim
        for k in range(layers):
            layer = AttentionLayer(width, hidden, variant, rng, heads, activation=activation)
            self.layers.append(self.child(f"layer{k}", layer))
            width = layer.width
            if batch_norm:
                self.norms.append(self.child(f"norm{k}", BatchNorm(width)))
        self.embedding_dim = in_dim + sum(layer.width for layer in self.layers)
        self.classifier = self.child("classifier", Linear(self.embedding_dim, num_classes, rng))

    def embed(self, batch: GraphBatch, training: bool = False) -> Tensor:
        x = Tensor(batch.x)
        if x.shape[1] != self.in_dim:
            raise ValueError(f"model expects input width {self.in_dim}, got shape {x.shape}")
        per_layer = [x]
        h = x
        for k, layer in enumerate(self.layers):
            h = layer(h, batch.nb)
            if self.norms:
                h = self.norms[k](h, training)
            per_layer.append(h)
        return readout_concat(per_layer, batch.graph_ids, self.readout_mode)

    def __call__(self, batch: GraphBatch, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        emb = self.embed(batch, training)
        if training and self.dropout > 0:
            if rng is None:
                raise ValueError("dropout in training mode needs an explicit rng")
            emb = ops.dropout(emb, self.dropout, rng)
        return self.classifier(emb)


def forward_node(model: GatNodeModel, graph: Graph) -> Tensor:
    if graph.node_feature_ids.max() >= model.in_dim:
        raise ValueError(
            f"feature id {int(graph.node_feature_ids.max())} does not fit input width {model.in_dim}"
        )
    x = Tensor(one_hot_ids(graph.node_feature_ids, model.in_dim))
    return model(x, Neighborhoods.from_graph(graph))


def forward_graph(model: GatGcModel, graphs: Sequence[Graph], training: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    return model(GraphBatch.from_graphs(graphs, model.in_dim), training, rng)


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_FORMAT = "cpa-gnn-params"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: Module, path: str | Path, meta: dict | None = None) -> None:
    """JSON dump: a shape manifest plus flat row-major values per tensor."""
    entries = [{"name": name, "shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
               for name, t in model.named_parameters()]
    buffers = [{"name": name, "shape": list(b.shape), "data": b.reshape(-1).tolist()}
               for name, b in model.buffers()]
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "meta": meta or {},
           "params": entries, "buffers": buffers}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(model: Module, path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
    params = dict(model.named_parameters())
    if set(params) != {e["name"] for e in doc["params"]}:
        raise ValueError(f"{path}: parameter names do not match the model")
    for e in doc["params"]:
        t = params[e["name"]]
        if list(t.shape) != e["shape"]:
            raise ValueError(f"{path}: {e['name']} has shape {e['shape']}, model expects {list(t.shape)}")
        t.data = np.asarray(e["data"], dtype=np.float64).reshape(e["shape"])
    buffers = dict(model.buffers())
    for e in doc.get("buffers", []):
        buffers[e["name"]][...] = np.asarray(e["data"]).reshape(e["shape"])
    return doc.get("meta", {})
