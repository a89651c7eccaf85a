import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpa_gnn import CPA_VARIANTS, VARIANTS
from cpa_gnn.aggregators import (
    AggregatorSpec,
    AttentionParams,
    Neighborhoods,
    aggregate,
    aggregate_additive,
    aggregate_f_additive,
    aggregate_f_scaled,
    aggregate_original,
    aggregate_scaled,
    attention_coefficients,
    attention_weights,
    neighborhood_sum,
    projected_coefficients,
    weighted_sum,
)
from cpa_gnn.autodiff import Tensor, ops
from cpa_gnn.checks import random_collision_instance, star_for
from cpa_gnn.graphs import Dataset, Graph, disjoint_union, make_complete, make_star
from cpa_gnn.models import AttentionLayer
from cpa_gnn.nn import MLP
from cpa_gnn.wl import find_colliding_pairs

DIM = 4


def _setup(graph: Graph, rng, num_features: int = 3, dim: int = DIM):
    """Feature-determined node vectors, neighbourhoods and random attention."""
    table = rng.normal(size=(num_features, dim))
    h = Tensor(table[graph.node_feature_ids])
    nb = Neighborhoods.from_graph(graph)
    params = AttentionParams.random(dim, dim, rng)
    alpha = attention_weights(attention_coefficients(h, nb, params), nb)
    return h, nb, alpha


def _pair_graph(small: Graph, large: Graph) -> tuple[Graph, int]:
    return disjoint_union([small, large]), small.num_nodes


def _collision_pair():
    """Two star centers with neighbourhoods (0, {0,1}) and (0, {0,0,1,1})."""
    return _pair_graph(make_star(0, [1]), make_star(0, [1, 0, 1]))


# -- attention coefficients ------------------------------------------------------

def _dense_coefficients(h, W, a, slope, graph):
    wh = h @ W
    d = W.shape[1]
    n = graph.num_nodes
    e = np.full((n, n), np.nan)
    adj = np.eye(n, dtype=bool)
    for i, j in graph.edges:
        adj[i, j] = adj[j, i] = True
    for i in range(n):
        for j in range(n):
            if adj[i, j]:
                s = a[:d, 0] @ wh[i] + a[d:, 0] @ wh[j]
                e[i, j] = s if s > 0 else slope * s
    return e


def test_coefficients_match_dense_oracle(rng):
    g = Graph(3, [(0, 1), (1, 2)], [0, 1, 2])
    h = rng.normal(size=(3, 5))
    params = AttentionParams.random(5, DIM, rng)
    nb = Neighborhoods.from_graph(g)
    e = attention_coefficients(Tensor(h), nb, params).data[:, 0]
    dense = _dense_coefficients(h, params.W.data, params.a.data, params.leaky_slope, g)
    expected = dense[nb.centers.ids, nb.members]
    np.testing.assert_allclose(e, expected, rtol=0, atol=1e-12)
    fast = projected_coefficients(ops.matmul(Tensor(h), params.W), nb, params.a, params.leaky_slope)
    np.testing.assert_allclose(fast.data[:, 0], expected, rtol=0, atol=1e-12)


def test_equal_features_give_symmetric_coefficients(rng):
    g = Graph(2, [(0, 1)], [0, 0])
    h = Tensor(np.tile(rng.normal(size=(1, 3)), (2, 1)))
    nb = Neighborhoods.from_graph(g)
    e = attention_coefficients(h, nb, AttentionParams.random(3, DIM, rng)).data[:, 0]
    pairs = dict(zip(zip(nb.centers.ids.tolist(), nb.members.tolist()), e))
    assert pairs[(0, 1)] == pairs[(1, 0)]


def test_zero_attention_vector_gives_zero_coefficients(rng):
    g = make_complete(4)
    params = AttentionParams(Tensor(rng.normal(size=(3, DIM))), Tensor(np.zeros((2 * DIM, 1))))
    e = attention_coefficients(Tensor(rng.normal(size=(4, 3))), Neighborhoods.from_graph(g), params)
    assert np.all(e.data == 0.0)


def test_missing_self_edge_rejected():
    with pytest.raises(ValueError, match="self-edge"):
        Neighborhoods.from_incidence([0, 0, 1], [0, 1, 0], 2)


def test_attention_params_validated(rng):
    with pytest.raises(ValueError):
        AttentionParams(Tensor(np.ones((3, 2))), Tensor(np.ones((3, 1))))
    with pytest.raises(ValueError):
        AttentionParams(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 1))), leaky_slope=0.0)


# -- attention weights -------------------------------------------------------------

def test_equal_coefficients_give_uniform_weights():
    nb = Neighborhoods.from_graph(make_star(0, [0, 0, 0]))
    alpha = attention_weights(Tensor(np.zeros((nb.num_entries, 1))), nb).data[:, 0]
    center = alpha[nb.centers.ids == 0]
    np.testing.assert_allclose(center, 0.25, rtol=0, atol=1e-15)


def test_softmax_exact_values():
    nb = Neighborhoods.from_incidence([0, 0, 0], [0, 1, 2], 1)
    alpha = attention_weights(Tensor(np.log([[2.0], [1.0], [1.0]])), nb).data[:, 0]
    np.testing.assert_allclose(alpha, [0.5, 0.25, 0.25], rtol=0, atol=1e-15)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_weights_are_positive_and_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    g = Graph(8, [tuple(p) for p in rng.integers(8, size=(14, 2))], [0] * 8)
    nb = Neighborhoods.from_graph(g)
    alpha = attention_weights(Tensor(rng.normal(scale=5.0, size=(nb.num_entries, 1))), nb).data[:, 0]
    assert np.all(alpha > 0)
    sums = np.bincount(nb.centers.ids, weights=alpha, minlength=8)
    np.testing.assert_allclose(sums, 1.0, rtol=0, atol=1e-12)


# -- Original ------------------------------------------------------------------------

def test_single_node_original_is_f_of_h(rng):
    h, nb, alpha = _setup(Graph(1, [], [2]), rng)
    out = aggregate_original(h, alpha, nb, ops.relu)
    np.testing.assert_array_equal(alpha.data, [[1.0]])
    np.testing.assert_allclose(out.data, np.maximum(h.data, 0), rtol=0, atol=1e-15)


def test_uniform_features_aggregate_to_the_feature(rng):
    g = make_star(0, [0, 0, 0, 0])
    h, nb, _ = _setup(g, rng, num_features=1)
    alpha = attention_weights(Tensor(rng.normal(size=(nb.num_entries, 1))), nb)
    np.testing.assert_allclose(aggregate_original(h, alpha, nb).data, h.data, rtol=0, atol=1e-14)


def test_collision_pair_from_report_is_not_separated(rng):
    ds = Dataset((make_star(0, [1]), make_star(0, [1, 0, 1])), 2, 1)
    group = next(g for g in find_colliding_pairs(ds).groups
                 if g.center_feature == 0 and g.ground_set == (0, 1))
    g, offset = _pair_graph(star_for(group.multiset(1)), star_for(group.multiset(2)))
    for _ in range(10):
        h, nb, alpha = _setup(g, rng, num_features=2)
        out = aggregate_original(h, alpha, nb).data
        np.testing.assert_allclose(out[0], out[offset], rtol=0, atol=1e-9)


# -- Additive ----------------------------------------------------------------------

def test_additive_requires_nonzero_w(rng):
    h, nb, alpha = _setup(make_star(0, [1]), rng)
    with pytest.raises(ValueError):
        aggregate_additive(h, alpha, nb, Tensor(np.zeros(DIM)))
    with pytest.raises(ValueError):
        AggregatorSpec("additive", w=Tensor(np.zeros(DIM)))
    with pytest.raises(ValueError):
        AggregatorSpec("additive")


def test_additive_uniform_feature(rng):
    g = make_star(0, [0, 0, 0])
    h, nb, alpha = _setup(g, rng, num_features=1)
    out = aggregate_additive(h, alpha, nb, Tensor(np.ones(DIM))).data
    x = h.data[0]
    np.testing.assert_allclose(out[0], x + 4 * x, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out[1], x + 2 * x, rtol=0, atol=1e-12)


def test_additive_minus_second_term_is_original(rng):
    g = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)], [0, 1, 2, 1, 0])
    h, nb, alpha = _setup(g, rng)
    w = Tensor(rng.normal(size=DIM))
    add = aggregate_additive(h, alpha, nb, w).data
    second = w.data * neighborhood_sum(h, nb).data
    np.testing.assert_allclose(add - second, aggregate_original(h, alpha, nb).data, rtol=0, atol=1e-12)


def test_additive_separates_collision_pair(rng):
    g, offset = _collision_pair()
    for _ in range(20):
        h, nb, alpha = _setup(g, rng, num_features=2)
        out = aggregate_additive(h, alpha, nb, Tensor(rng.normal(size=DIM))).data
        assert np.max(np.abs(out[0] - out[offset])) > 1e-6


# -- Scaled ------------------------------------------------------------------------

def _const_psi(c):
    def psi(card):
        return ops.add(ops.mul(card, Tensor(np.zeros((1, DIM)))), Tensor(np.full((1, DIM), c)))
    return psi


def test_scaled_with_unit_psi_is_original(rng):
    g = Graph(4, [(0, 1), (1, 2), (1, 3)], [0, 1, 2, 0])
    h, nb, alpha = _setup(g, rng)
    out = aggregate_scaled(h, alpha, nb, _const_psi(1.0)).data
    np.testing.assert_allclose(out, aggregate_original(h, alpha, nb).data, rtol=0, atol=1e-12)


def test_scaled_with_identity_psi_counts(rng):
    g = make_star(0, [0, 0])
    h, nb, alpha = _setup(g, rng, num_features=1)

    def psi(card):
        return ops.mul(card, Tensor(np.ones((1, DIM))))

    out = aggregate_scaled(h, alpha, nb, psi).data
    x = h.data[0]
    np.testing.assert_allclose(out[0], 3 * x, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out[1], 2 * x, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out, aggregate_f_scaled(h, alpha, nb).data, rtol=0, atol=1e-12)


def test_scaled_random_psi_separates_collision_pair(rng):
    g, offset = _collision_pair()
    for seed in range(20):
        prng = np.random.default_rng(seed)
        h, nb, alpha = _setup(g, prng, num_features=2)
        psi = MLP(1, 16, DIM, prng)
        for _, p in psi.named_parameters():
            if p.data.ndim == 1:
                p.data = prng.normal(size=p.shape)
        out = aggregate_scaled(h, alpha, nb, psi).data
        assert np.max(np.abs(out[0] - out[offset])) > 1e-6, seed


def test_scaled_spec_needs_psi():
    with pytest.raises(ValueError):
        AggregatorSpec("scaled")
    with pytest.raises(ValueError):
        AggregatorSpec("mean")


# -- fixed variants ------------------------------------------------------------------

def test_f_additive_singleton_doubles(rng):
    h, nb, alpha = _setup(Graph(1, [], [0]), rng)
    np.testing.assert_allclose(aggregate_f_additive(h, alpha, nb).data, 2 * h.data, rtol=0, atol=1e-15)


def test_f_additive_is_additive_with_unit_w(rng):
    g = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)], [0, 1, 2, 1, 0])
    h, nb, alpha = _setup(g, rng)
    a = aggregate_f_additive(h, alpha, nb).data
    b = aggregate_additive(h, alpha, nb, Tensor(np.ones(DIM))).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_f_scaled_uniform_feature(rng):
    g = make_star(0, [0, 0, 0, 0, 0])
    h, nb, alpha = _setup(g, rng, num_features=1)
    np.testing.assert_allclose(aggregate_f_scaled(h, alpha, nb).data[0], 6 * h.data[0], rtol=0, atol=1e-12)


def test_f_scaled_collision_pair_is_cardinality_times_h(rng):
    g, offset = _collision_pair()
    h, nb, alpha = _setup(g, rng, num_features=2)
    H = weighted_sum(h, alpha, nb).data
    np.testing.assert_allclose(H[0], H[offset], rtol=0, atol=1e-12)
    out = aggregate_f_scaled(h, alpha, nb).data
    np.testing.assert_allclose(out[0], 2 * H[0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(out[offset], 4 * H[0], rtol=0, atol=1e-12)
    assert np.max(np.abs(out[0] - out[offset])) > 1e-6


def test_f_additive_separates_collision_pair(rng):
    g, offset = _collision_pair()
    for _ in range(20):
        h, nb, alpha = _setup(g, rng, num_features=2)
        out = aggregate_f_additive(h, alpha, nb).data
        assert np.max(np.abs(out[0] - out[offset])) > 1e-6


def test_dispatch_matches_direct_calls(rng):
    g = Graph(4, [(0, 1), (1, 2), (2, 3)], [0, 1, 2, 0])
    h, nb, alpha = _setup(g, rng)
    w = Tensor(rng.normal(size=DIM))
    psi = MLP(1, 8, DIM, rng)
    direct = {
        "original": aggregate_original(h, alpha, nb),
        "additive": aggregate_additive(h, alpha, nb, w),
        "scaled": aggregate_scaled(h, alpha, nb, psi),
        "f_additive": aggregate_f_additive(h, alpha, nb),
        "f_scaled": aggregate_f_scaled(h, alpha, nb),
    }
    for variant in VARIANTS:
        spec = AggregatorSpec(variant, w=w, psi=psi)
        np.testing.assert_array_equal(aggregate(spec, h, alpha, nb).data, direct[variant].data)


# -- shared attention and cross-module properties --------------------------------------

def test_attention_weights_are_bit_identical_across_variants():
    g = Graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)], [0, 1, 2, 0, 1, 2])
    nb = Neighborhoods.from_graph(g)
    h = Tensor(np.random.default_rng(5).normal(size=(6, 3)))
    alphas = [AttentionLayer(3, DIM, v, np.random.default_rng(9)).attention(h, nb)[0].data for v in VARIANTS]
    for other in alphas[1:]:
        assert np.array_equal(alphas[0], other)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_collision_instances_collide_only_under_original(seed):
    rng = np.random.default_rng(seed)
    inst = random_collision_instance(rng)
    g, offset = _pair_graph(*inst.graphs)
    nf = inst.num_features
    for variant in VARIANTS:
        layer = AttentionLayer(nf, DIM, variant, np.random.default_rng([seed, 1]), activation="identity")
        for _, p in layer.named_parameters():
            if p.data.ndim == 1:
                p.data = rng.normal(size=p.shape)
        x = Tensor(np.eye(nf)[g.node_feature_ids])
        out = layer(x, Neighborhoods.from_graph(g)).data
        diff = np.max(np.abs(out[0] - out[offset]))
        if variant == "original":
            assert diff < 1e-9
        else:
            assert variant in CPA_VARIANTS and diff > 1e-6
