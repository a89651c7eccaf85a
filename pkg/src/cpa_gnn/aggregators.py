"""GAT attention and the five neighbourhood aggregation rules.

All rules share the same attention weights ``alpha_ij`` (softmax over
Ñ(i) of ``LeakyReLU(a^T [W h_i || W h_j])``); they differ only in how the
cardinality of Ñ(i) enters the weighted sum:

=============  ==================================================
original       f( sum_j alpha_ij h_j )
additive       f( sum_j alpha_ij h_j + w * sum_j h_j )
scaled         f( psi(|Ñ(i)|) * sum_j alpha_ij h_j )
f_additive     f( sum_j (alpha_ij + 1) h_j )
f_scaled       f( |Ñ(i)| * sum_j alpha_ij h_j )
=============  ==================================================
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import VARIANTS
from .autodiff import Tensor, ops
from .autodiff.ops import Segments
from .graphs import Graph

Transform = Callable[[Tensor], Tensor]


def _identity(x: Tensor) -> Tensor:
    return x


@dataclass(frozen=True)
class Neighborhoods:
    """Incidence list of Ñ(i) for every node, grouped by center.

    ``centers[e]`` is the node whose neighbourhood edge ``e`` belongs to and
    ``members[e]`` the node it brings in.  Every node appears as its own
    member exactly once.
    """

    centers: Segments
    members: np.ndarray
    num_nodes: int
    cardinality: np.ndarray

    @classmethod
    def from_incidence(cls, centers, members, num_nodes: int) -> "Neighborhoods":
        centers = np.asarray(centers, dtype=np.int64)
        members = np.asarray(members, dtype=np.int64)
        if centers.shape != members.shape:
            raise ValueError("centers and members must have the same length")
        is_self = centers == members
        self_count = np.bincount(centers[is_self], minlength=num_nodes)
        if np.any(self_count == 0):
            missing = int(np.flatnonzero(self_count == 0)[0])
            raise ValueError(f"node {missing} is missing its self-edge; Ñ(i) must contain i")
        seg = Segments.from_ids(centers, num_nodes)
        card = seg.counts.astype(np.float64).reshape(-1, 1)
        return cls(seg, members, num_nodes, card)

    @classmethod
    def from_graph(cls, graph: Graph) -> "Neighborhoods":
        return cls.from_graphs([graph])

    @classmethod
    def from_graphs(cls, graphs: Sequence[Graph]) -> "Neighborhoods":
        centers, members, offset = [], [], 0
        for g in graphs:
            c, m = g.neighborhood_incidence()
            centers.append(c + offset)
            members.append(m + offset)
            offset += g.num_nodes
        return cls.from_incidence(np.concatenate(centers), np.concatenate(members), offset)

    @property
    def num_entries(self) -> int:
        return int(self.members.shape[0])


@dataclass
class AttentionParams:
    W: Tensor
    a: Tensor
    leaky_slope: float = 0.2

    def __post_init__(self):
        out_dim = self.W.shape[1]
        if self.a.shape != (2 * out_dim, 1):
            raise ValueError(f"attention vector must have shape ({2 * out_dim}, 1), got {self.a.shape}")
        if self.leaky_slope <= 0:
            raise ValueError("leaky_slope must be positive")

    @classmethod
    def random(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
               leaky_slope: float = 0.2) -> "AttentionParams":
        W = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, out_dim))
        a = rng.normal(0.0, 1.0 / np.sqrt(out_dim), size=(2 * out_dim, 1))
        return cls(Tensor(W), Tensor(a), leaky_slope)


def attention_coefficients(h: Tensor, nb: Neighborhoods, params: AttentionParams) -> Tensor:
    """``e_ij = LeakyReLU(a^T [W h_i || W h_j])`` for every (i, j) with j in Ñ(i)."""
    wh = ops.matmul(h, params.W)
    pair = ops.concat_last_axis([ops.gather_rows(wh, nb.centers.ids),
                                 ops.gather_rows(wh, nb.members)])
    return ops.leaky_relu(ops.matmul(pair, params.a), params.leaky_slope)


def projected_coefficients(wh: Tensor, nb: Neighborhoods, a: Tensor, leaky_slope: float) -> Tensor:
    """Same coefficients from already-projected features ``wh = h W``.

    Splits ``a`` into its center and neighbour halves so the per-edge work is
    a scalar gather instead of a concatenation of two feature rows.
    """
    d = wh.shape[1]
    a_center = ops.gather_rows(a, np.arange(d))
    a_member = ops.gather_rows(a, np.arange(d, 2 * d))
    s_center = ops.matmul(wh, a_center)
    s_member = ops.matmul(wh, a_member)
    logits = ops.add(ops.gather_rows(s_center, nb.centers.ids), ops.gather_rows(s_member, nb.members))
    return ops.leaky_relu(logits, leaky_slope)


def attention_weights(e: Tensor, nb: Neighborhoods) -> Tensor:
    return ops.segment_softmax(e, nb.centers)


def weighted_sum(h: Tensor, alpha: Tensor, nb: Neighborhoods) -> Tensor:
    """``sum_{j in Ñ(i)} alpha_ij h_j`` for every center ``i``."""
    return ops.weighted_gather_sum(alpha, h, nb.centers, nb.members)


def neighborhood_sum(h: Tensor, nb: Neighborhoods) -> Tensor:
    return ops.weighted_gather_sum(None, h, nb.centers, nb.members)


def aggregate_original(h: Tensor, alpha: Tensor, nb: Neighborhoods,
                       f: Transform | None = None) -> Tensor:
    return (f or _identity)(weighted_sum(h, alpha, nb))


def aggregate_additive(h: Tensor, alpha: Tensor, nb: Neighborhoods, w: Tensor,
                       f: Transform | None = None) -> Tensor:
    if not np.any(w.data):
        raise ValueError("additive aggregation needs a non-zero w")
    z = ops.add(weighted_sum(h, alpha, nb), ops.mul(w, neighborhood_sum(h, nb)))
    return (f or _identity)(z)


def aggregate_scaled(h: Tensor, alpha: Tensor, nb: Neighborhoods,
                     psi: Callable[[Tensor], Tensor], f: Transform | None = None) -> Tensor:
    scale = psi(Tensor(nb.cardinality))
    return (f or _identity)(ops.mul(scale, weighted_sum(h, alpha, nb)))


def aggregate_f_additive(h: Tensor, alpha: Tensor, nb: Neighborhoods,
                         f: Transform | None = None) -> Tensor:
    shifted = ops.add(alpha, Tensor(np.ones((1, 1))))
    return (f or _identity)(weighted_sum(h, shifted, nb))


def aggregate_f_scaled(h: Tensor, alpha: Tensor, nb: Neighborhoods,
                       f: Transform | None = None) -> Tensor:
    return (f or _identity)(ops.mul(Tensor(nb.cardinality), weighted_sum(h, alpha, nb)))


@dataclass
class AggregatorSpec:
    """Which aggregation rule a layer uses, with the parameters it needs."""

    variant: str
    w: Tensor | None = None
    psi: Callable[[Tensor], Tensor] | None = None
    f: Transform | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown aggregator {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "additive":
            if self.w is None or not np.any(self.w.data):
                raise ValueError("additive aggregator needs a non-zero w")
        if self.variant == "scaled" and self.psi is None:
            raise ValueError("scaled aggregator needs psi")


def aggregate(spec: AggregatorSpec, h: Tensor, alpha: Tensor, nb: Neighborhoods) -> Tensor:
    if spec.variant == "original":
        return aggregate_original(h, alpha, nb, spec.f)
    if spec.variant == "additive":
        return aggregate_additive(h, alpha, nb, spec.w, spec.f)
    if spec.variant == "scaled":
        return aggregate_scaled(h, alpha, nb, spec.psi, spec.f)
    if spec.variant == "f_additive":
        return aggregate_f_additive(h, alpha, nb, spec.f)
    return aggregate_f_scaled(h, alpha, nb, spec.f)
