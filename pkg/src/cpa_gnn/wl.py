"""1-WL colour refinement, the WL non-isomorphism oracle, and collision analysis.

A *collision group* gathers neighbourhood multisets that share a center
feature and a feature distribution, i.e. whose multiplicity vectors are
integer multiples of one primitive vector ``mu / gcd(mu)``.  Softmax
attention followed by a weighted sum cannot tell the members of such a
group apart.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import reduce
from math import gcd
from typing import Iterable

import numpy as np

from .graphs import Dataset, Graph, NeighborhoodMultiset, disjoint_union, neighborhood_multiset


@dataclass
class ColorAssignment:
    colors: list[np.ndarray]
    histograms: list[dict[int, int]]
    stable: bool = False

    @property
    def rounds(self) -> int:
        return len(self.colors) - 1

    def num_colors(self, r: int) -> int:
        return len(self.histograms[r])


def _histogram(colors: np.ndarray) -> dict[int, int]:
    return dict(sorted(Counter(colors.tolist()).items()))


def _refine_once(graph: Graph, colors: np.ndarray) -> np.ndarray:
    palette: dict[tuple, int] = {}
    out = np.empty(graph.num_nodes, dtype=np.int64)
    for i, nbrs in enumerate(graph.adjacency):
        sig = (int(colors[i]), tuple(sorted(colors[nbrs].tolist())))
        out[i] = palette.setdefault(sig, len(palette))
    return out


def wl_refine(graph: Graph, rounds: int) -> ColorAssignment:
    """Run up to ``rounds`` refinement rounds; stops early once stable.

    Round 0 colours are the node feature ids.  Later rounds number the
    signatures ``(own colour, sorted neighbour colours)`` densely in order of
    first appearance, which makes ids deterministic.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    colors = [np.asarray(graph.node_feature_ids, dtype=np.int64)]
    hists = [_histogram(colors[0])]
    stable = False
    for _ in range(rounds):
        nxt = _refine_once(graph, colors[-1])
        colors.append(nxt)
        hists.append(_histogram(nxt))
        # Each round refines the previous partition, so equal counts mean equal partitions.
        if len(hists[-1]) == len(hists[-2]):
            stable = True
            break
    return ColorAssignment(colors, hists, stable)


def wl_distinguish(g1: Graph, g2: Graph, max_rounds: int = 3) -> bool:
    """True when some round's colour histograms differ.

    ``False`` means "not distinguished", not "isomorphic".  Both graphs are
    refined as one disjoint union so that colour ids are shared.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    if g1.num_nodes != g2.num_nodes:
        return True
    union = disjoint_union([g1, g2])
    split = g1.num_nodes
    colors = np.asarray(union.node_feature_ids, dtype=np.int64)
    for r in range(max_rounds + 1):
        if _histogram(colors[:split]) != _histogram(colors[split:]):
            return True
        if r == max_rounds:
            break
        nxt = _refine_once(union, colors)
        if len(set(nxt.tolist())) == len(set(colors.tolist())):
            break
        colors = nxt
    return False


# -- collision analysis ------------------------------------------------------

Signature = tuple[int, tuple[int, ...], tuple[int, ...]]


def normalize(ms: NeighborhoodMultiset) -> tuple[Signature, int]:
    """Split a multiset into its (center, S, mu/gcd) signature and factor k."""
    k = reduce(gcd, ms.multiplicities)
    base = tuple(m // k for m in ms.multiplicities)
    return (ms.center_feature, ms.ground_set, base), k


@dataclass
class CollisionMember:
    k: int
    multiplicities: tuple[int, ...]
    refs: list[tuple[int, int]] = field(default_factory=list)

    @property
    def cardinality(self) -> int:
        return sum(self.multiplicities)


@dataclass
class CollisionGroup:
    center_feature: int
    ground_set: tuple[int, ...]
    base_multiplicities: tuple[int, ...]
    members: list[CollisionMember]

    @property
    def size(self) -> int:
        return sum(len(m.refs) for m in self.members)

    def multiset(self, k: int) -> NeighborhoodMultiset:
        return NeighborhoodMultiset(self.center_feature, self.ground_set,
                                    tuple(k * m for m in self.base_multiplicities))


@dataclass
class CollisionReport:
    groups: list[CollisionGroup]
    p_value: float
    total_multisets: int
    scope: str = "across"

    def to_dict(self, include_refs: bool = False) -> dict:
        groups = []
        for g in self.groups:
            members = []
            for m in g.members:
                entry = {"k": m.k, "multiplicities": list(m.multiplicities), "count": len(m.refs)}
                if include_refs:
                    entry["refs"] = [list(r) for r in m.refs]
                members.append(entry)
            groups.append({
                "center_feature": g.center_feature,
                "ground_set": list(g.ground_set),
                "base_multiplicities": list(g.base_multiplicities),
                "members": members,
            })
        return {
            "scope": self.scope,
            "p_value": self.p_value,
            "total_multisets": self.total_multisets,
            "colliding_multisets": sum(g.size for g in self.groups),
            "num_groups": len(self.groups),
            "groups": groups,
        }

    def to_json(self, include_refs: bool = False) -> str:
        return json.dumps(self.to_dict(include_refs), indent=2, sort_keys=True)


def _all_multisets(dataset: Dataset) -> Iterable[tuple[int, int, NeighborhoodMultiset]]:
    for gi, g in enumerate(dataset.graphs):
        for i in range(g.num_nodes):
            yield gi, i, neighborhood_multiset(g, i)


def find_colliding_pairs(dataset: Dataset, scope: str = "across") -> CollisionReport:
    """Group layer-0 neighbourhood multisets by signature.

    ``scope="within"`` keeps signatures of different graphs apart (node-level
    tasks); ``"across"`` pools the whole dataset (graph-level tasks).  Only
    groups with at least two distinct multisets are reported.
    """
    if scope not in ("across", "within"):
        raise ValueError(f"scope must be 'across' or 'within', got {scope!r}")
    buckets: dict[tuple, dict[int, CollisionMember]] = defaultdict(dict)
    total = 0
    for gi, i, ms in _all_multisets(dataset):
        total += 1
        sig, k = normalize(ms)
        key = (gi, sig) if scope == "within" else sig
        member = buckets[key].get(k)
        if member is None:
            member = buckets[key][k] = CollisionMember(k, ms.multiplicities)
        member.refs.append((gi, i))
    if total == 0:
        raise ValueError("dataset has no nodes")

    groups = []
    for key, members in buckets.items():
        if len(members) < 2:
            continue
        sig = key[1] if scope == "within" else key
        center, ground, base = sig
        groups.append(CollisionGroup(center, ground, base,
                                     [members[k] for k in sorted(members)]))
    groups.sort(key=lambda g: (g.center_feature, g.ground_set, g.base_multiplicities,
                               g.members[0].refs[0]))
    colliding = sum(g.size for g in groups)
    return CollisionReport(groups, colliding / total, total, scope)


def compute_p_statistic(dataset: Dataset, scope: str = "across") -> tuple[float, CollisionReport]:
    """Fraction of neighbourhood multisets that have a distinct collision partner."""
    if len(dataset.graphs) == 0:
        raise ValueError("empty dataset")
    report = find_colliding_pairs(dataset, scope)
    return report.p_value, report


def alternative_p_values(dataset: Dataset) -> dict[str, float]:
    """P under the competing counting rules, for auditing the default one."""
    sig_counts: dict[str, Counter] = {name: Counter() for name in
                                      ("within", "ignore_center", "count_identical")}
    sig_kinds: dict[str, dict] = {name: defaultdict(set) for name in sig_counts}
    keys_per_node = []
    for gi, _, ms in _all_multisets(dataset):
        (center, ground, base), k = normalize(ms)
        keys = {
            "within": (gi, center, ground, base),
            "ignore_center": (ground, base),
            "count_identical": (center, ground, base),
        }
        kinds = {"within": k, "ignore_center": (center, k), "count_identical": None}
        for name, key in keys.items():
            sig_counts[name][key] += 1
            sig_kinds[name][key].add(kinds[name])
        keys_per_node.append(keys)
    total = len(keys_per_node)
    if total == 0:
        raise ValueError("dataset has no nodes")
    out = {"distinct_cardinality_across": compute_p_statistic(dataset, "across")[0]}
    for name in ("within", "ignore_center"):
        hit = sum(1 for keys in keys_per_node if len(sig_kinds[name][keys[name]]) >= 2)
        out[name] = hit / total
    hit = sum(1 for keys in keys_per_node if sig_counts["count_identical"][keys["count_identical"]] >= 2)
    out["count_identical"] = hit / total
    return out
