"""Executable checks of the collision theory for attention aggregators.

Each check builds small graphs whose center neighbourhoods realise chosen
multisets, evaluates one aggregation layer (or a full graph model) under
random parameters and reports a machine-readable verdict.  "Equal" means
max-abs difference below ``EQUAL_TOL``; "separated" means above
``SEPARATE_TOL``.  The gap between the two leaves no ambiguous cases.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import CPA_VARIANTS, VARIANTS
from .aggregators import (
    AttentionParams,
    Neighborhoods,
    aggregate_additive,
    aggregate_scaled,
    attention_coefficients,
    attention_weights,
)
from .autodiff import Tensor
from .graphs import (
    Dataset,
    Graph,
    NeighborhoodMultiset,
    disjoint_union,
    make_complete,
    make_ring,
    make_star,
    one_hot_ids,
)
from .models import AttentionLayer, GatGcModel, GraphBatch
from .nn import MLP
from .wl import find_colliding_pairs, normalize, wl_distinguish

EQUAL_TOL = 1e-9
SEPARATE_TOL = 1e-6
EMBED_DIM = 8


@dataclass
class CheckReport:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    instances: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "details": self.details,
                "instances": self.instances}


# -- instances -------------------------------------------------------------------

def star_for(ms: NeighborhoodMultiset) -> Graph:
    """Star whose center neighbourhood (center included) is ``ms``."""
    leaves = list(ms.elements())
    leaves.remove(ms.center_feature)
    return make_star(ms.center_feature, leaves)


@dataclass(frozen=True)
class CollisionInstance:
    """Multisets ``X = (S, mu)`` and ``kX = (S, k mu)`` around one center feature."""

    center_feature: int
    ground_set: tuple[int, ...]
    multiplicities: tuple[int, ...]
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        NeighborhoodMultiset(self.center_feature, self.ground_set, self.multiplicities)

    @property
    def small(self) -> NeighborhoodMultiset:
        return NeighborhoodMultiset(self.center_feature, self.ground_set, self.multiplicities)

    @property
    def large(self) -> NeighborhoodMultiset:
        return self.small.scaled(self.k)

    @property
    def graphs(self) -> tuple[Graph, Graph]:
        return star_for(self.small), star_for(self.large)

    @property
    def num_features(self) -> int:
        return max(self.ground_set) + 1

    def perturbed(self) -> tuple[Graph, Graph]:
        """Stars where one leaf of the larger graph takes a feature outside S."""
        small, large = self.graphs
        feats = np.array(large.node_feature_ids)
        feats[-1] = max(self.ground_set) + 1
        return small, large.with_features(feats)

    def to_dict(self) -> dict:
        return {"center_feature": self.center_feature, "ground_set": list(self.ground_set),
                "multiplicities": list(self.multiplicities), "k": self.k}


def random_collision_instance(rng: np.random.Generator, alphabet: int = 3,
                              max_cardinality: int = 8, ks: Sequence[int] = (2, 3)) -> CollisionInstance:
    """Random instance whose larger multiset has at most ``max_cardinality`` elements."""
    k = int(rng.choice(ks))
    base_max = max_cardinality // k
    if base_max < 1:
        raise ValueError(f"max_cardinality {max_cardinality} is too small for k={k}")
    size = int(rng.integers(1, base_max + 1))
    center = int(rng.integers(alphabet))
    elems = [center] + rng.integers(alphabet, size=size - 1).tolist()
    ms = NeighborhoodMultiset.from_features(center, elems)
    return CollisionInstance(center, ms.ground_set, ms.multiplicities, k)


# -- evaluation ------------------------------------------------------------------

def _param_rng(seed: int, variant: str) -> np.random.Generator:
    return np.random.default_rng([seed, VARIANTS.index(variant)])


def center_embeddings(graphs: Sequence[Graph], variant: str, seed: int, num_features: int,
                      dim: int = EMBED_DIM) -> np.ndarray:
    """``f(aggregate(node 0))`` for each graph under one random parameter draw.

    ``f`` is a random two-layer MLP; the layer's own parameters (attention,
    ``w``, ``psi``, bias) are drawn from the same generator.
    """
    rng = _param_rng(seed, variant)
    layer = AttentionLayer(num_features, dim, variant, rng, activation="identity")
    for _, p in layer.named_parameters():
        if p.data.ndim == 1:
            p.data = rng.normal(0.0, 1.0, size=p.shape)
    f = MLP(dim, dim, dim, rng)
    for _, p in f.named_parameters():
        if p.data.ndim == 1:
            p.data = rng.normal(0.0, 0.5, size=p.shape)
    union = disjoint_union(graphs)
    x = Tensor(one_hot_ids(union.node_feature_ids, num_features))
    out = f(layer(x, Neighborhoods.from_graph(union))).data
    centers = np.cumsum([0] + [g.num_nodes for g in graphs[:-1]])
    return out[centers]


def _max_diff(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)))


def _pair_diffs(g1: Graph, g2: Graph, variant: str, seeds: int, num_features: int) -> list[float]:
    diffs = []
    for s in range(seeds):
        e = center_embeddings([g1, g2], variant, s, num_features)
        diffs.append(_max_diff(e[0], e[1]))
    return diffs


# -- collision: forward direction --------------------------------------------------

def check_theorem1_forward(instance: CollisionInstance, seeds: int = 10,
                           negative_control: bool = False) -> CheckReport:
    """The softmax-weighted aggregator maps ``(c, X)`` and ``(c, kX)`` together.

    With ``negative_control`` one leaf of the larger star gets a feature
    outside ``S``; the check must then fail.
    """
    g1, g2 = instance.perturbed() if negative_control else instance.graphs
    nf = instance.num_features + 1
    diffs = _pair_diffs(g1, g2, "original", seeds, nf)
    passed = all(d < EQUAL_TOL for d in diffs)
    name = "collision_forward" + ("_negative_control" if negative_control else "")
    return CheckReport(name, passed, {"seeds": seeds, "max_diff": max(diffs), "tolerance": EQUAL_TOL},
                       [{**instance.to_dict(), "diffs": diffs}])


def check_theorem1_forward_batch(num_instances: int = 100, seeds: int = 10, alphabet: int = 3,
                                 max_cardinality: int = 8, seed: int = 0) -> CheckReport:
    rng = np.random.default_rng(seed)
    reports = [check_theorem1_forward(random_collision_instance(rng, alphabet, max_cardinality), seeds)
               for _ in range(num_instances)]
    worst = max(r.details["max_diff"] for r in reports)
    failed = [r.instances[0] for r in reports if not r.passed]
    return CheckReport("collision_forward_random", not failed,
                       {"instances": num_instances, "seeds": seeds, "max_diff": worst,
                        "tolerance": EQUAL_TOL, "failed": len(failed)}, failed)


# -- collision: converse -----------------------------------------------------------

def enumerate_multisets(alphabet: int, max_cardinality: int) -> list[NeighborhoodMultiset]:
    """Every (center, multiset) with the center's feature included, sizes 1..max."""
    out = []
    for c in range(alphabet):
        for n in range(1, max_cardinality + 1):
            for rest in itertools.combinations_with_replacement(range(alphabet), n - 1):
                out.append(NeighborhoodMultiset.from_features(c, (c, *rest)))
    return out


def collision_condition(x1: NeighborhoodMultiset, x2: NeighborhoodMultiset) -> bool:
    """Same center feature and proportional multiplicity vectors."""
    return normalize(x1)[0] == normalize(x2)[0]


def check_theorem1_converse(alphabet: int = 2, max_cardinality: int = 4,
                            seeds: int = 20) -> CheckReport:
    """Every pair outside the collision condition is separated by some draw.

    A random draw that separates a pair certifies that the aggregator can
    tell it apart; this is weaker than separation for all parameters.
    """
    if alphabet > 3 or max_cardinality > 5:
        raise ValueError("enumeration is limited to alphabet <= 3 and cardinality <= 5")
    items = enumerate_multisets(alphabet, max_cardinality)
    graphs = [star_for(ms) for ms in items]
    pairs = list(itertools.combinations(range(len(items)), 2))
    pending = {p for p in pairs if not collision_condition(items[p[0]], items[p[1]])}
    condition_pairs = len(pairs) - len(pending)
    best = {p: 0.0 for p in pending}
    for s in range(seeds):
        if not pending:
            break
        emb = center_embeddings(graphs, "original", s, alphabet)
        for p in list(pending):
            d = _max_diff(emb[p[0]], emb[p[1]])
            best[p] = max(best[p], d)
            if d > SEPARATE_TOL:
                pending.discard(p)
    unseparated = [{"x1": _ms_dict(items[i]), "x2": _ms_dict(items[j]), "best_diff": best[(i, j)]}
                   for i, j in sorted(pending)]
    details = {
        "alphabet": alphabet, "max_cardinality": max_cardinality, "seeds": seeds,
        "multisets": len(items), "pairs": len(pairs), "condition_pairs": condition_pairs,
        "non_condition_pairs": len(best), "unseparated": len(unseparated),
        "tolerance": SEPARATE_TOL,
        "note": "separation is certified by at least one random parameter draw",
    }
    return CheckReport("collision_converse", not unseparated, details, unseparated)


def _ms_dict(ms: NeighborhoodMultiset) -> dict:
    return {"center_feature": ms.center_feature, "ground_set": list(ms.ground_set),
            "multiplicities": list(ms.multiplicities)}


# -- complete graph versus ring ----------------------------------------------------

def graph_embeddings(graphs: Sequence[Graph], variant: str, seed: int,
                     readout: str = "mean") -> np.ndarray:
    model = GatGcModel(1, 2, variant, readout=readout, seed=seed)
    return model.embed(GraphBatch.from_graphs(list(graphs), 1), training=False).data


def check_corollary1_graphs(n: int = 6, variant: str = "original", seeds: int = 10) -> CheckReport:
    """K_n versus C_n with one shared feature.

    The softmax baseline embeds both graphs identically although 1-WL tells
    them apart; cardinality-aware variants separate them.
    """
    if n < 4:
        raise ValueError("n must be >= 4 (K_3 and C_3 coincide)")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    kn, cn = make_complete(n), make_ring(n)
    diffs = []
    for s in range(seeds):
        emb = graph_embeddings([kn, cn], variant, s)
        diffs.append(_max_diff(emb[0], emb[1]))
    wl = wl_distinguish(kn, cn)
    if variant == "original":
        passed = wl and all(d < EQUAL_TOL for d in diffs)
        rule = f"all diffs < {EQUAL_TOL}"
    else:
        passed = sum(d > SEPARATE_TOL for d in diffs) >= seeds - 1
        rule = f"diff > {SEPARATE_TOL} in at least {seeds - 1} of {seeds} seeds"
    return CheckReport(f"complete_vs_ring[{variant}]", passed,
                       {"n": n, "variant": variant, "seeds": seeds, "wl_distinguishes": wl,
                        "rule": rule, "diffs": diffs})


# -- explicit separating construction ------------------------------------------------

def check_corollary4_witness(instance: CollisionInstance, N: int = 5, seed: int = 0) -> CheckReport:
    """Closed-form separation with ``f(x) = N ** -Z(x)``, ``w = 1`` and ``psi(n) = n``.

    ``Z`` maps feature id ``x`` to ``x``.  The shared attention sum ``H`` is
    the same for both multisets, so the scaled rule must give outputs in
    ratio ``|kX| / |X|`` and the additive rule must differ by
    ``sum_{kX} f - sum_X f``.
    """
    small, large = instance.small, instance.large
    if N <= large.cardinality:
        raise ValueError(f"N={N} must exceed the larger cardinality {large.cardinality}")
    g1, g2 = instance.graphs
    union = disjoint_union([g1, g2])
    nf = instance.num_features
    nb = Neighborhoods.from_graph(union)
    x = Tensor(one_hot_ids(union.node_feature_ids, nf))
    params = AttentionParams.random(nf, EMBED_DIM, np.random.default_rng(seed))
    alpha = attention_weights(attention_coefficients(x, nb, params), nb)
    fx = np.power(float(N), -union.node_feature_ids.astype(np.float64))
    messages = Tensor(np.repeat(fx[:, None], EMBED_DIM, axis=1))
    ones = Tensor(np.ones(EMBED_DIM))
    additive = aggregate_additive(messages, alpha, nb, ones).data
    scaled = aggregate_scaled(messages, alpha, nb, lambda card: Tensor(card.data * np.ones(EMBED_DIM))).data

    c1, c2 = 0, g1.num_nodes
    f_sum = lambda ms: sum(float(N) ** -x for x in ms.elements())
    expected_diff = f_sum(large) - f_sum(small)
    add_diff = additive[c2] - additive[c1]
    add_err = float(np.max(np.abs(add_diff - expected_diff)))
    ratio = large.cardinality / small.cardinality
    scale_err = float(np.max(np.abs(scaled[c2] - ratio * scaled[c1])))
    H = scaled[c1] / small.cardinality
    tol = 1e-12
    passed = add_err <= tol and scale_err <= tol and bool(np.all(H > 0))
    return CheckReport("explicit_witness", passed, {
        **instance.to_dict(), "N": N, "tolerance": tol,
        "additive_expected_diff": expected_diff, "additive_error": add_err,
        "scaled_expected_ratio": ratio, "scaled_error": scale_err, "H_min": float(H.min()),
    })


# -- collisions found in data ------------------------------------------------------

def check_cardinality_loss(dataset: Dataset, seeds: int = 20, scope: str = "across",
                           variants: Sequence[str] = VARIANTS) -> CheckReport:
    """For each collision group in ``dataset``: the baseline collapses, CPA separates.

    Members of a group are the distinct multiset sizes sharing one signature.
    """
    report = find_colliding_pairs(dataset, scope)
    if not report.groups:
        return CheckReport("cardinality_loss", True, {"groups": 0, "seeds": seeds})
    nf = dataset.num_feature_categories
    multisets, owners = [], []
    for gi, group in enumerate(report.groups):
        for member in group.members:
            multisets.append(group.multiset(member.k))
            owners.append(gi)
    graphs = [star_for(ms) for ms in multisets]
    owners = np.array(owners)

    worst_equal = np.zeros(len(report.groups))
    separated = {v: np.zeros(len(report.groups), dtype=np.int64) for v in variants if v != "original"}
    for s in range(seeds):
        for v in variants:
            emb = center_embeddings(graphs, v, s, nf)
            for gi in range(len(report.groups)):
                rows = emb[owners == gi]
                spread = float(np.max(np.abs(rows - rows[0])))
                if v == "original":
                    worst_equal[gi] = max(worst_equal[gi], spread)
                else:
                    # Separation needs every pair of members apart.
                    pair_min = min(_max_diff(a, b) for a, b in itertools.combinations(rows, 2))
                    separated[v][gi] += pair_min > SEPARATE_TOL

    groups = []
    all_ok = True
    for gi, group in enumerate(report.groups):
        entry = {"center_feature": group.center_feature, "ground_set": list(group.ground_set),
                 "base_multiplicities": list(group.base_multiplicities),
                 "ks": [m.k for m in group.members]}
        ok = True
        if "original" in variants:
            entry["original_max_diff"] = float(worst_equal[gi])
            ok &= worst_equal[gi] < EQUAL_TOL
        for v, counts in separated.items():
            entry[f"{v}_separated_seeds"] = int(counts[gi])
            ok &= counts[gi] >= seeds - 1
        entry["passed"] = bool(ok)
        all_ok &= ok
        groups.append(entry)
    return CheckReport("cardinality_loss", bool(all_ok),
                       {"groups": len(groups), "seeds": seeds, "scope": scope,
                        "p_value": report.p_value}, groups)


def degree_contrast_dataset(low: int = 2, high: int = 5, copies: int = 3) -> Dataset:
    """Uniform-feature graphs: rings (degree ``low``=2) and complete graphs on ``high``+1 nodes."""
    if low != 2:
        raise ValueError("rings have degree 2")
    graphs = []
    for i in range(copies):
        for g, label in ((make_ring(4 + i), 0), (make_complete(high + 1), 1)):
            graphs.append(Graph(g.num_nodes, g.edges, g.node_feature_ids, None, label))
    return Dataset(tuple(graphs), 1, 2, "graph", "degree-contrast")


# -- gradients -------------------------------------------------------------------

def random_graph(num_nodes: int, rng: np.random.Generator, num_features: int = 3,
                 edge_prob: float = 0.5) -> Graph:
    pairs = [(i, j) for i in range(num_nodes) for j in range(i + 1, num_nodes)
             if rng.random() < edge_prob]
    return Graph(num_nodes, pairs, rng.integers(num_features, size=num_nodes),
                 rng.integers(2, size=num_nodes), int(rng.integers(2)))


def gradient_suite(seed: int = 0, num_nodes: int = 6, tol: float = 1e-4) -> list[CheckReport]:
    """Finite-difference checks for every layer variant and both full models."""
    from .autodiff import gradient_check, ops
    from .models import GatNodeModel

    rng = np.random.default_rng(seed)
    graph = random_graph(num_nodes, rng)
    nb = Neighborhoods.from_graph(graph)
    x = Tensor(one_hot_ids(graph.node_feature_ids, 3))
    reports = []

    def record(name, result):
        reports.append(CheckReport(name, result.passed, result.to_dict()))

    for v in VARIANTS:
        layer = AttentionLayer(3, 4, v, np.random.default_rng([seed, 1]))
        proj = Tensor(rng.normal(size=(num_nodes, 4)))
        params = [p for _, p in layer.named_parameters()]
        record(f"layer[{v}]", gradient_check(
            lambda xx, *_: ops.sum_all(ops.mul(layer(xx, nb), proj)), [x, *params], tol=tol))

        node_model = GatNodeModel(3, 2, v, hidden=4, seed=seed)
        labels = graph.node_labels
        record(f"node_model[{v}]", gradient_check(
            lambda *_: ops.cross_entropy(node_model(x, nb), labels),
            [p for _, p in node_model.named_parameters()], tol=tol))

        graphs = [graph, random_graph(num_nodes, rng)]
        batch = GraphBatch.from_graphs(graphs, 3)
        gc_model = GatGcModel(3, 2, v, hidden=4, layers=2, seed=seed)
        glabels = np.array([g.graph_label for g in graphs])
        record(f"graph_model[{v}]", gradient_check(
            lambda *_: ops.cross_entropy(gc_model(batch, training=True), glabels),
            [p for _, p in gc_model.named_parameters()], tol=tol))
    return reports


# -- suites ----------------------------------------------------------------------

SUITES = ("theorem1", "corollaries", "all")


def run_suite(suite: str = "all", seed: int = 0) -> dict:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    reports: list[CheckReport] = []
    if suite in ("theorem1", "all"):
        reports.append(check_theorem1_forward_batch(100, 10, seed=seed))
        base = CollisionInstance(0, (0, 1), (1, 1), 2)
        reports.append(check_theorem1_forward(base, 10))
        control = check_theorem1_forward(base, 10, negative_control=True)
        # The control is mandatory in the sense that it must fail.
        reports.append(CheckReport("negative_control_detected", not control.passed, control.details))
        reports.append(check_theorem1_converse(2, 4, 20))
    if suite in ("corollaries", "all"):
        for v in VARIANTS:
            reports.append(check_corollary1_graphs(6, v, 10))
        for k in (1, 2, 3):
            reports.append(check_corollary4_witness(CollisionInstance(0, (0, 1), (1, 1), k), N=7))
        reports.append(check_cardinality_loss(degree_contrast_dataset()))
    return {"suite": suite, "seed": seed, "passed": all(r.passed for r in reports),
            "checks": [r.to_dict() for r in reports]}


def suite_json(result: dict) -> str:
    return json.dumps(result, indent=2, sort_keys=True)


__all__ = [
    "CPA_VARIANTS", "CheckReport", "CollisionInstance", "EQUAL_TOL", "SEPARATE_TOL",
    "center_embeddings", "check_cardinality_loss", "check_corollary1_graphs",
    "check_corollary4_witness", "check_theorem1_converse", "check_theorem1_forward",
    "check_theorem1_forward_batch", "collision_condition", "degree_contrast_dataset",
    "enumerate_multisets", "gradient_suite", "random_collision_instance", "random_graph",
    "run_suite", "star_for",
]
