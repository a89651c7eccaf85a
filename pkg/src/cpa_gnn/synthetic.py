"""TRIANGLE-NODE: one large graph whose node classes mark triangle membership.

Construction:

1. every node draws a log-normal activity weight;
2. ``round(fraction * n / 3)`` disjoint triangles are planted on nodes drawn
   without replacement with probability proportional to
   ``activity ** member_exponent``;
3. the remaining edge budget is filled with pairs drawn proportionally to
   activity, rejecting duplicates and any edge that would close a triangle
   containing a node outside the planted set.

Step 3 keeps the set of triangle members fixed, so the realised member
fraction equals the planted one exactly.  Activity makes degree and
triangle membership correlated, as in natural random graphs, without
making either a function of the other.  The exponent controls how strongly
triangles concentrate on hub nodes; at the default, a degree threshold
alone separates the classes about 89% of the time, while the
distribution of neighbour features carries little signal.
"""

from __future__ import annotations

import numpy as np

from .graphs import Dataset, Graph

DEFAULT_COUNTS = (4000, 400, 400)
DEFAULT_EDGES = 32400
DEFAULT_FRACTION = 0.4058
ACTIVITY_SIGMA = 0.6
MEMBER_EXPONENT = 8.0


class InfeasibleError(ValueError):
    pass


def triangle_members(graph: Graph) -> np.ndarray:
    """Boolean mask: node is a vertex of at least one triangle."""
    adj = [set(a.tolist()) for a in graph.adjacency]
    member = np.zeros(graph.num_nodes, dtype=bool)
    for i, j in graph.edges.tolist():
        if adj[i] & adj[j]:
            member[i] = member[j] = True
    return member


def generate_triangle_node(
    seed: int,
    n_feature0: int = DEFAULT_COUNTS[0],
    n_feature1: int = DEFAULT_COUNTS[1],
    n_feature2: int = DEFAULT_COUNTS[2],
    target_edges: int = DEFAULT_EDGES,
    target_triangle_fraction: float = DEFAULT_FRACTION,
    activity_sigma: float = ACTIVITY_SIGMA,
    member_exponent: float = MEMBER_EXPONENT,
    max_attempts_factor: int = 50,
) -> Graph:
    counts = [n_feature0, n_feature1, n_feature2]
    if any(c < 0 for c in counts) or sum(counts) < 3:
        raise InfeasibleError(f"need at least 3 nodes, got counts {counts}")
    if target_edges <= 0:
        raise InfeasibleError("target_edges must be positive")
    if not 0.0 < target_triangle_fraction <= 1.0:
        raise InfeasibleError("target_triangle_fraction must lie in (0, 1]")
    n = sum(counts)
    num_triangles = max(1, int(round(target_triangle_fraction * n / 3)))
    if 3 * num_triangles > n:
        raise InfeasibleError(f"{num_triangles} disjoint triangles need more than {n} nodes")
    if target_edges < 3 * num_triangles:
        raise InfeasibleError(
            f"edge budget {target_edges} is below the {3 * num_triangles} planted triangle edges"
        )
    if target_edges > n * (n - 1) // 2:
        raise InfeasibleError(f"edge budget {target_edges} exceeds the complete graph on {n} nodes")

    rng = np.random.default_rng(seed)
    activity = rng.lognormal(0.0, activity_sigma, size=n)
    prob = activity / activity.sum()

    bias = activity ** member_exponent
    members = rng.choice(n, size=3 * num_triangles, replace=False, p=bias / bias.sum())
    is_member = np.zeros(n, dtype=bool)
    is_member[members] = True

    adj: list[set[int]] = [set() for _ in range(n)]
    edges: list[tuple[int, int]] = []

    def link(u: int, v: int) -> None:
        adj[u].add(v)
        adj[v].add(u)
        edges.append((u, v) if u < v else (v, u))

    for t in range(num_triangles):
        a, b, c = (int(x) for x in members[3 * t:3 * t + 3])
        link(a, b)
        link(b, c)
        link(a, c)

    attempts = 0
    budget = max_attempts_factor * target_edges
    while len(edges) < target_edges:
        if attempts > budget:
            raise InfeasibleError(
                f"could only place {len(edges)} of {target_edges} edges without new triangle members"
            )
        batch = rng.choice(n, size=(4096, 2), p=prob)
        for u, v in batch.tolist():
            attempts += 1
            if u == v or v in adj[u]:
                continue
            common = adj[u] & adj[v]
            if common and not (is_member[u] and is_member[v]
                               and all(is_member[w] for w in common)):
                continue
            link(u, v)
            if len(edges) == target_edges:
                break

    feats = np.concatenate([np.full(c, k, dtype=np.int64)
                            for k, c in enumerate(c for c in counts if c > 0)])
    feats = rng.permutation(feats)
    graph = Graph(n, np.array(edges), feats, is_member.astype(np.int64), 0)
    return graph


def triangle_node_dataset(graph: Graph, name: str = "TRIANGLE_NODE") -> Dataset:
    categories = int(graph.node_feature_ids.max()) + 1
    classes = max(2, int(graph.node_labels.max()) + 1)
    return Dataset((graph,), categories, classes, "node", name)


def realized_stats(graph: Graph) -> dict:
    member = triangle_members(graph)
    return {
        "nodes": graph.num_nodes,
        "edges": graph.num_edges,
        "triangle_fraction": float(member.mean()),
        "feature_counts": np.bincount(graph.node_feature_ids).tolist(),
        "mean_degree": float(graph.degrees.mean()),
    }
