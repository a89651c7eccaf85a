"""Graph and dataset types, TU-format I/O, and synthetic graph constructors."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed TU dataset file; the message names the file and line."""


def _canonical_edges(edges: Iterable[tuple[int, int]] | np.ndarray) -> np.ndarray:
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    arr = arr[arr[:, 0] != arr[:, 1]]
    arr = np.sort(arr, axis=1)
    arr = np.unique(arr, axis=0)
    return arr


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.int64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with categorical node features.

    ``edges`` holds each undirected pair once as ``(i, j)`` with ``i < j``,
    lexicographically sorted.  Self-loops are never stored; a node's own
    contribution to its neighbourhood is added by the consumers.
    """

    num_nodes: int
    edges: np.ndarray
    node_feature_ids: np.ndarray
    node_labels: np.ndarray | None = None
    graph_label: int | None = None

    def __post_init__(self):
        edges = _canonical_edges(self.edges)
        if edges.size and edges.max() >= self.num_nodes:
            raise ValueError(f"edge endpoint {int(edges.max())} >= num_nodes {self.num_nodes}")
        feats = np.asarray(self.node_feature_ids, dtype=np.int64)
        if feats.shape != (self.num_nodes,):
            raise ValueError(f"expected {self.num_nodes} feature ids, got shape {feats.shape}")
        if feats.size and feats.min() < 0:
            raise ValueError("feature ids must be non-negative")
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "node_feature_ids", _frozen(feats))
        if self.node_labels is not None:
            labels = np.asarray(self.node_labels, dtype=np.int64)
            if labels.shape != (self.num_nodes,):
                raise ValueError(f"expected {self.num_nodes} node labels, got shape {labels.shape}")
            object.__setattr__(self, "node_labels", _frozen(labels))
        if self.graph_label is not None:
            object.__setattr__(self, "graph_label", int(self.graph_label))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        same_labels = (
            (self.node_labels is None and other.node_labels is None)
            or (self.node_labels is not None and other.node_labels is not None
                and np.array_equal(self.node_labels, other.node_labels))
        )
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.node_feature_ids, other.node_feature_ids)
            and same_labels
            and self.graph_label == other.graph_label
        )

    __hash__ = None

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.bincount(self.edges.reshape(-1), minlength=self.num_nodes)
        deg.flags.writeable = False
        return deg

    @cached_property
    def adjacency(self) -> list[np.ndarray]:
        """Sorted neighbour index arrays, one per node."""
        if not self.num_edges:
            return [np.zeros(0, dtype=np.int64) for _ in range(self.num_nodes)]
        both = np.concatenate([self.edges, self.edges[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        splits = np.cumsum(self.degrees)[:-1]
        return np.split(both[:, 1], splits)

    def neighborhood_incidence(self) -> tuple[np.ndarray, np.ndarray]:
        """(centers, members) for every j in Ñ(i), sorted by center then member."""
        return self._incidence

    @cached_property
    def _incidence(self) -> tuple[np.ndarray, np.ndarray]:
        loops = np.repeat(np.arange(self.num_nodes, dtype=np.int64), 2).reshape(-1, 2)
        pairs = np.concatenate([self.edges, self.edges[:, ::-1], loops])
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        centers, members = pairs[order, 0].copy(), pairs[order, 1].copy()
        centers.flags.writeable = False
        members.flags.writeable = False
        return centers, members

    def with_features(self, feature_ids) -> "Graph":
        return replace(self, node_feature_ids=np.asarray(feature_ids))

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        labels = None if self.node_labels is None else self.node_labels[inv]
        return Graph(self.num_nodes, perm[self.edges], self.node_feature_ids[inv], labels, self.graph_label)


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: tuple[Graph, ...]
    num_feature_categories: int
    num_classes: int
    task: str = "graph"
    name: str = ""
    feature_map: dict[int, int] = field(default_factory=dict)
    label_map: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if self.task not in ("node", "graph"):
            raise ValueError(f"task must be 'node' or 'graph', got {self.task!r}")
        for g in self.graphs:
            if g.num_nodes and g.node_feature_ids.max() >= self.num_feature_categories:
                raise ValueError("feature id exceeds num_feature_categories")
            if self.task == "graph":
                if g.graph_label is not None and g.graph_label >= self.num_classes:
                    raise ValueError("graph label exceeds num_classes")
            elif g.node_labels is not None and g.num_nodes and g.node_labels.max() >= self.num_classes:
                raise ValueError("node label exceeds num_classes")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_feature_categories == other.num_feature_categories
            and self.num_classes == other.num_classes
            and self.task == other.task
            and len(self.graphs) == len(other.graphs)
            and all(a == b for a, b in zip(self.graphs, other.graphs))
        )

    __hash__ = None

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i) -> Graph:
        return self.graphs[i]

    @property
    def graph_labels(self) -> np.ndarray:
        return np.array([g.graph_label for g in self.graphs], dtype=np.int64)

    def stats(self) -> dict:
        nodes = [g.num_nodes for g in self.graphs]
        edges = [g.num_edges for g in self.graphs]
        return {
            "graphs": len(self.graphs),
            "classes": self.num_classes,
            "features": self.num_feature_categories,
            "mean_nodes": float(np.mean(nodes)) if nodes else 0.0,
            "mean_edges": float(np.mean(edges)) if edges else 0.0,
        }


@dataclass(frozen=True)
class NeighborhoodMultiset:
    """Feature multiset of Ñ(i): the center's feature plus (ground set, multiplicities)."""

    center_feature: int
    ground_set: tuple[int, ...]
    multiplicities: tuple[int, ...]

    def __post_init__(self):
        if len(self.ground_set) != len(self.multiplicities):
            raise ValueError("ground_set and multiplicities must align")
        if list(self.ground_set) != sorted(set(self.ground_set)):
            raise ValueError("ground_set must be sorted and distinct")
        if any(m < 1 for m in self.multiplicities):
            raise ValueError("multiplicities must be >= 1")
        if self.center_feature not in self.ground_set:
            raise ValueError("center feature must belong to the ground set")

    @classmethod
    def from_features(cls, center: int, features: Iterable[int]) -> "NeighborhoodMultiset":
        """Build from the feature ids of all of Ñ(i), center included."""
        counts = Counter(int(f) for f in features)
        keys = tuple(sorted(counts))
        return cls(int(center), keys, tuple(counts[k] for k in keys))

    @property
    def cardinality(self) -> int:
        return int(sum(self.multiplicities))

    def elements(self) -> list[int]:
        return [s for s, m in zip(self.ground_set, self.multiplicities) for _ in range(m)]

    def scaled(self, k: int) -> "NeighborhoodMultiset":
        return NeighborhoodMultiset(self.center_feature, self.ground_set,
                                    tuple(k * m for m in self.multiplicities))


def neighborhood_multiset(graph: Graph, node: int) -> NeighborhoodMultiset:
    if not 0 <= node < graph.num_nodes:
        raise IndexError(f"node {node} out of range for graph with {graph.num_nodes} nodes")
    feats = graph.node_feature_ids
    members = np.concatenate([[node], graph.adjacency[node]])
    return NeighborhoodMultiset.from_features(int(feats[node]), feats[members].tolist())


# -- encodings ---------------------------------------------------------------

def one_hot_ids(feature_ids: np.ndarray, num_categories: int) -> np.ndarray:
    out = np.zeros((len(feature_ids), num_categories))
    out[np.arange(len(feature_ids)), feature_ids] = 1.0
    return out


def one_hot(dataset: Dataset) -> list[np.ndarray]:
    """One (num_nodes, num_feature_categories) unit-row matrix per graph."""
    if dataset.num_feature_categories < 1:
        raise ValueError("num_feature_categories must be >= 1")
    return [one_hot_ids(g.node_feature_ids, dataset.num_feature_categories) for g in dataset.graphs]


def degree_relabel(dataset: Dataset) -> Dataset:
    """Replace every node's feature with its degree."""
    graphs = [g.with_features(g.degrees) for g in dataset.graphs]
    max_deg = max((int(g.degrees.max()) for g in dataset.graphs if g.num_nodes), default=0)
    return replace(dataset, graphs=tuple(graphs), num_feature_categories=max_deg + 1,
                   feature_map={d: d for d in range(max_deg + 1)})


def uniform_features(dataset: Dataset) -> Dataset:
    graphs = [g.with_features(np.zeros(g.num_nodes, dtype=np.int64)) for g in dataset.graphs]
    return replace(dataset, graphs=tuple(graphs), num_feature_categories=1, feature_map={})


# -- witness constructors ----------------------------------------------------

def make_complete(n: int, feature: int = 0) -> Graph:
    if n < 3:
        raise ValueError(f"complete graph needs n >= 3, got {n}")
    i, j = np.triu_indices(n, k=1)
    return Graph(n, np.stack([i, j], axis=1), np.full(n, feature))


def make_ring(n: int, feature: int = 0) -> Graph:
    if n < 3:
        raise ValueError(f"ring needs n >= 3, got {n}")
    i = np.arange(n)
    return Graph(n, np.stack([i, (i + 1) % n], axis=1), np.full(n, feature))


def make_star(center_feature: int, leaf_features: Sequence[int]) -> Graph:
    """Node 0 is the center; one leaf per entry of ``leaf_features``."""
    n = len(leaf_features) + 1
    edges = [(0, j) for j in range(1, n)]
    return Graph(n, edges, np.array([center_feature, *leaf_features], dtype=np.int64))


def disjoint_union(graphs: Sequence[Graph]) -> Graph:
    offset, edges, feats = 0, [], []
    for g in graphs:
        edges.append(g.edges + offset)
        feats.append(g.node_feature_ids)
        offset += g.num_nodes
    labels = None
    if graphs and all(g.node_labels is not None for g in graphs):
        labels = np.concatenate([g.node_labels for g in graphs])
    return Graph(offset, np.concatenate(edges) if edges else np.zeros((0, 2)),
                 np.concatenate(feats) if feats else np.zeros(0), labels)


# -- TU format ---------------------------------------------------------------

def _read_ints(path: Path, per_line: int) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.replace(",", " ").split()
            if len(parts) != per_line:
                raise ParseError(f"{path}:{lineno}: expected {per_line} value(s), got {len(parts)}")
            try:
                rows.append([int(p) for p in parts])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: not an integer: {text!r}") from None
    return np.asarray(rows, dtype=np.int64).reshape(-1, per_line)


def _dense_map(values: np.ndarray) -> dict[int, int]:
    return {int(v): i for i, v in enumerate(np.unique(values))}


def load_tu_dataset(directory: str | Path, name: str) -> Dataset:
    """Read a dataset in the TU graph-kernel text format.

    Node-label files give categorical features; without one every node gets
    feature 0.  If ``name_node_labels_target.txt`` exists the dataset is a
    node-classification dataset with those per-node classes.
    """
    directory = Path(directory)
    required = {k: directory / f"{name}_{k}.txt" for k in ("A", "graph_indicator", "graph_labels")}
    for path in required.values():
        if not path.exists():
            raise ParseError(f"{path}: required file is missing")

    indicator = _read_ints(required["graph_indicator"], 1)[:, 0]
    graph_labels_raw = _read_ints(required["graph_labels"], 1)[:, 0]
    num_nodes = len(indicator)
    num_graphs = len(graph_labels_raw)
    if num_nodes and (indicator.min() < 1 or indicator.max() > num_graphs):
        bad = int(np.flatnonzero((indicator < 1) | (indicator > num_graphs))[0])
        raise ParseError(f"{required['graph_indicator']}:{bad + 1}: graph id outside 1..{num_graphs}")
    if np.any(np.diff(indicator) < 0):
        bad = int(np.flatnonzero(np.diff(indicator) < 0)[0]) + 2
        raise ParseError(f"{required['graph_indicator']}:{bad}: graph ids must be non-decreasing")

    node_label_path = directory / f"{name}_node_labels.txt"
    if node_label_path.exists():
        raw_feats = _read_ints(node_label_path, 1)[:, 0]
        if len(raw_feats) != num_nodes:
            raise ParseError(f"{node_label_path}:{len(raw_feats)}: has {len(raw_feats)} lines, "
                             f"graph indicator has {num_nodes}")
        feature_map = _dense_map(raw_feats)
        feats = np.array([feature_map[int(v)] for v in raw_feats], dtype=np.int64)
        num_categories = len(feature_map)
    else:
        feature_map = {}
        feats = np.zeros(num_nodes, dtype=np.int64)
        num_categories = 1

    target_path = directory / f"{name}_node_labels_target.txt"
    node_targets = None
    if target_path.exists():
        node_targets = _read_ints(target_path, 1)[:, 0]
        if len(node_targets) != num_nodes:
            raise ParseError(f"{target_path}:{len(node_targets)}: has {len(node_targets)} lines, "
                             f"graph indicator has {num_nodes}")

    edges = _read_ints(required["A"], 2) - 1
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        bad = int(np.flatnonzero((edges.min(axis=1) < 0) | (edges.max(axis=1) >= num_nodes))[0])
        raise ParseError(f"{required['A']}:{bad + 1}: node id outside 1..{num_nodes}")
    if edges.size:
        g_src, g_dst = indicator[edges[:, 0]], indicator[edges[:, 1]]
        if np.any(g_src != g_dst):
            bad = int(np.flatnonzero(g_src != g_dst)[0])
            raise ParseError(f"{required['A']}:{bad + 1}: edge joins nodes of different graphs")
    self_loops = int(np.sum(edges[:, 0] == edges[:, 1])) if edges.size else 0

    starts = np.searchsorted(indicator, np.arange(1, num_graphs + 1), side="left")
    ends = np.searchsorted(indicator, np.arange(1, num_graphs + 1), side="right")
    owner = indicator[edges[:, 0]] - 1 if edges.size else np.zeros(0, dtype=np.int64)
    order = np.argsort(owner, kind="stable")
    edges, owner = edges[order], owner[order]
    edge_bounds = np.searchsorted(owner, np.arange(num_graphs + 1))

    if node_targets is not None:
        label_map = _dense_map(node_targets)
        task = "node"
        num_classes = len(label_map)
    else:
        label_map = _dense_map(graph_labels_raw)
        task = "graph"
        num_classes = len(label_map)

    graphs = []
    directed = 0
    for gi in range(num_graphs):
        lo, hi = starts[gi], ends[gi]
        e = edges[edge_bounds[gi]:edge_bounds[gi + 1]] - lo
        directed += len(e)
        labels = None
        if node_targets is not None:
            labels = np.array([label_map[int(v)] for v in node_targets[lo:hi]], dtype=np.int64)
        glabel = label_map[int(graph_labels_raw[gi])] if task == "graph" else 0
        graphs.append(Graph(int(hi - lo), e, feats[lo:hi], labels, glabel))

    undirected = sum(g.num_edges for g in graphs)
    merged = directed - self_loops - undirected
    # TU dumps list both directions of each edge, so one merge per edge is expected.
    if self_loops or merged > undirected:
        log.warning("%s: dropped %d self-loops, merged %d duplicate directed edges",
                    name, self_loops, merged)
    return Dataset(tuple(graphs), num_categories, num_classes, task, name, feature_map, label_map)


def write_tu_dataset(dataset: Dataset, directory: str | Path, name: str) -> None:
    """Write ``dataset`` in TU format; each undirected edge as two directed lines."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines, feat_lines, target_lines, glabel_lines = [], [], [], [], []
    offset = 0
    for gi, g in enumerate(dataset.graphs, start=1):
        for i, j in g.edges.tolist():
            a_lines.append(f"{i + offset + 1}, {j + offset + 1}")
            a_lines.append(f"{j + offset + 1}, {i + offset + 1}")
        ind_lines.extend([str(gi)] * g.num_nodes)
        feat_lines.extend(str(v) for v in g.node_feature_ids.tolist())
        if dataset.task == "node":
            target_lines.extend(str(v) for v in g.node_labels.tolist())
        glabel_lines.append(str(g.graph_label if g.graph_label is not None else 0))
        offset += g.num_nodes

    def dump(suffix: str, lines: list[str]) -> None:
        (directory / f"{name}_{suffix}.txt").write_text("".join(f"{x}\n" for x in lines))

    dump("A", a_lines)
    dump("graph_indicator", ind_lines)
    dump("graph_labels", glabel_lines)
    dump("node_labels", feat_lines)
    if dataset.task == "node":
        dump("node_labels_target", target_lines)
