import numpy as np
import pytest
import scipy.sparse as sp

from regnn.core import autodiff as ad
from regnn.core.autodiff import Tape, finite_diff_check
from regnn.core.hgraph import add_reverse_relations
from regnn.core.relemb import (
    EmbeddingError,
    NormalizationDomainError,
    RelationEmbeddings,
    aggregate_with_gradients,
    assemble_adjacency,
    build_pattern,
    graph_pattern,
    init_embeddings,
    khop_aggregate,
    normalize_adjacency,
    tau,
)


def _embeddings(alpha, beta, lam=1.0):
    return RelationEmbeddings(
        lam=lam,
        e=[np.asarray(alpha, dtype=float) / lam],
        s=[np.asarray(beta, dtype=float) / lam],
    )


# ============================================================================
# Initialization
# ============================================================================

@pytest.mark.parametrize("lam", [1.0, 10.0, 100.0])
def test_initial_weights_are_one(lam):
    emb = init_embeddings(lam, num_relations=3, num_types=2, num_layers=2)
    for layer in range(2):
        np.testing.assert_allclose(emb.e[layer], 1.0 / lam)
        np.testing.assert_allclose(emb.alpha(layer), 1.0)
        np.testing.assert_allclose(emb.beta(layer), 1.0)
    assert emb.overhead_per_layer() == 5


def test_nonpositive_lambda_rejected():
    with pytest.raises(EmbeddingError):
        init_embeddings(0.0, 2, 2, 1)


def test_layer_out_of_range():
    emb = init_embeddings(1.0, 2, 2, num_layers=2)
    with pytest.raises(EmbeddingError):
        emb.alpha(2)


def test_tau():
    assert tau(-0.5, slope=0.01) == pytest.approx(-0.005)
    assert tau(2.0) == 2.0


# ============================================================================
# Assembly and normalization
# ============================================================================

def test_three_node_weighted_adjacency(three_node_graph):
    wa = assemble_adjacency(three_node_graph, _embeddings([2.0], [0.5, 1.0]), layer=0)
    np.testing.assert_allclose(
        wa.raw.toarray(),
        [[0.5, 2.0, 2.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    )
    np.testing.assert_allclose(wa.degree, [4.5, 1.0, 1.0])


def test_three_node_row_normalization(three_node_graph):
    wa = assemble_adjacency(three_node_graph, _embeddings([2.0], [0.5, 1.0]), layer=0)
    row = normalize_adjacency(wa, "row").matrix.toarray()
    np.testing.assert_allclose(row[0], [1 / 9, 4 / 9, 4 / 9])
    np.testing.assert_allclose(row.sum(axis=1), 1.0)


def test_identity_selfloop_ignores_beta(three_node_graph):
    wa = assemble_adjacency(
        three_node_graph, _embeddings([2.0], [0.5, 7.0]), layer=0, selfloop="identity"
    )
    np.testing.assert_allclose(wa.raw.diagonal(), 1.0)


def test_no_selfloop_leaves_empty_rows_at_zero(three_node_graph):
    emb = _embeddings([1.0], [1.0, 1.0])
    wa = assemble_adjacency(three_node_graph, emb, layer=0, selfloop="none")
    row = normalize_adjacency(wa, "row").matrix.toarray()
    np.testing.assert_allclose(row[1:], 0.0)


def test_overlapping_relations_add():
    a1 = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    a2 = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    pattern = build_pattern([a1, a2], np.zeros(2, dtype=int))
    assert pattern.provenance()[pattern.relation_slots[0][0]] == [0, 1]

    tape = Tape()
    y = aggregate_with_gradients(
        pattern, tape.constant(np.eye(2)), tape.param([2.0, 3.0]), tape.param([1.0]), norm="none",
    )
    assert y.value[0, 1] == pytest.approx(5.0)


def test_symmetric_normalization_rejects_negative(three_node_graph):
    wa = assemble_adjacency(three_node_graph, _embeddings([-1.0], [1.0, 1.0]), layer=0)
    with pytest.raises(NormalizationDomainError):
        normalize_adjacency(wa, "sym")


def test_symmetric_normalization_is_symmetric_for_symmetric_input():
    a = sp.csr_matrix(np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=float))
    pattern = build_pattern([a], np.zeros(3, dtype=int))
    tape = Tape()
    y = aggregate_with_gradients(
        pattern, tape.constant(np.eye(3)), tape.param([1.5]), tape.param([0.5]), norm="sym",
    )
    np.testing.assert_allclose(y.value, y.value.T, atol=1e-12)


# ============================================================================
# Gradients
# ============================================================================

@pytest.mark.parametrize("norm", ["row", "sym", "none"])
def test_aggregate_finite_differences(six_node_graph, norm):
    g = add_reverse_relations(six_node_graph)
    pattern = graph_pattern(g)
    rng = np.random.default_rng(3)
    weights = rng.normal(size=(g.num_nodes, 2))
    params = {
        "H": rng.normal(size=(g.num_nodes, 2)),
        "alpha": rng.uniform(0.5, 2.0, size=(1, g.num_relations)),
        "beta": rng.uniform(0.5, 2.0, size=(1, g.num_types)),
    }

    def build(tape, p):
        y = aggregate_with_gradients(pattern, p["H"], p["alpha"], p["beta"], norm=norm)
        return ad.sum_all(ad.mul(y, tape.constant(weights)))

    assert finite_diff_check(build, params, atol=1e-8) < 1e-4


def test_negative_weights_finite_differences(six_node_graph):
    g = add_reverse_relations(six_node_graph)
    pattern = graph_pattern(g)
    rng = np.random.default_rng(5)
    weights = rng.normal(size=(g.num_nodes, 3))
    params = {
        "alpha": np.array([[2.0, -0.7, 1.3, 0.9]])[:, : g.num_relations],
        "beta": np.array([[1.5, -0.4]]),
    }
    h = rng.normal(size=(g.num_nodes, 3))

    def build(tape, p):
        y = aggregate_with_gradients(pattern, tape.constant(h), p["alpha"], p["beta"], norm="row")
        return ad.sum_all(ad.mul(y, tape.constant(weights)))

    assert finite_diff_check(build, params, atol=1e-8) < 1e-4


@pytest.mark.parametrize("lam", [1.0, 100.0])
def test_embedding_gradient_scales_with_lambda(three_node_graph, lam):
    pattern = graph_pattern(three_node_graph)
    h = np.arange(6.0).reshape(3, 2)
    weights = np.array([[1.0, -1.0], [0.5, 2.0], [0.0, 1.0]])

    def loss(tape, alpha, beta):
        y = aggregate_with_gradients(pattern, tape.constant(h), alpha, beta)
        return ad.sum_all(ad.mul(y, tape.constant(weights)))

    direct = Tape()
    alpha = direct.param([[2.0]])
    beta = direct.param([[0.5, 1.0]])
    direct.backward(loss(direct, alpha, beta))

    scaled = Tape()
    e = scaled.param([[2.0 / lam]])
    s = scaled.param([[0.5 / lam, 1.0 / lam]])
    scaled.backward(loss(scaled, ad.scale(e, lam), ad.scale(s, lam)))

    np.testing.assert_allclose(e.grad, lam * alpha.grad, rtol=1e-12)
    np.testing.assert_allclose(s.grad, lam * beta.grad, rtol=1e-12)


def test_single_hop_matches_row_aggregation(six_node_graph):
    g = add_reverse_relations(six_node_graph)
    pattern = graph_pattern(g)
    rng = np.random.default_rng(1)
    h = rng.normal(size=(g.num_nodes, 2))
    alpha = rng.uniform(0.5, 2.0, size=(1, g.num_relations))
    beta = rng.uniform(0.5, 2.0, size=(1, g.num_types))
    tape = Tape()
    one = khop_aggregate(pattern, tape.constant(h), [tape.param(alpha)], [tape.param(beta)])
    row = aggregate_with_gradients(pattern, tape.constant(h), tape.param(alpha), tape.param(beta))
    np.testing.assert_allclose(one.value, row.value, atol=1e-12)


def test_khop_finite_differences(six_node_graph):
    g = add_reverse_relations(six_node_graph)
    pattern = graph_pattern(g)
    rng = np.random.default_rng(9)
    weights = rng.normal(size=(g.num_nodes, 2))
    h = rng.normal(size=(g.num_nodes, 2))
    params = {
        f"{kind}{k}": rng.uniform(0.5, 2.0, size=(1, n))
        for k in range(2)
        for kind, n in (("alpha", g.num_relations), ("beta", g.num_types))
    }

    def build(tape, p):
        y = khop_aggregate(
            pattern, tape.constant(h), [p["alpha0"], p["alpha1"]], [p["beta0"], p["beta1"]],
        )
        return ad.sum_all(ad.mul(y, tape.constant(weights)))

    assert finite_diff_check(build, params, atol=1e-8) < 1e-4


def test_khop_matches_dense_product(six_node_graph):
    g = add_reverse_relations(six_node_graph)
    pattern = graph_pattern(g)
    rng = np.random.default_rng(12)
    h = rng.normal(size=(g.num_nodes, 3))
    hops = [
        (rng.uniform(0.3, 2.0, size=g.num_relations), rng.uniform(0.3, 2.0, size=g.num_types))
        for _ in range(3)
    ]
    raws = [
        assemble_adjacency(g, _embeddings(a, b), layer=0, pattern=pattern).raw.toarray()
        for a, b in hops
    ]
    product = raws[2] @ raws[1] @ raws[0]
    degree = np.prod([m.sum(axis=1) for m in raws], axis=0)

    tape = Tape()
    y = khop_aggregate(
        pattern, tape.constant(h),
        [tape.constant(a[None, :]) for a, _ in hops],
        [tape.constant(b[None, :]) for _, b in hops],
    )
    np.testing.assert_allclose(y.value, (product @ h) / degree[:, None], rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("betas", [(1.0, 1.0), (0.01, 50.0), (7.0, 0.2)])
def test_khop_selfloop_only_rows_keep_their_features(three_node_graph, betas):
    pattern = graph_pattern(three_node_graph)
    h = np.random.default_rng(1).normal(size=(3, 2))
    tape = Tape()
    y = khop_aggregate(
        pattern, tape.constant(h),
        [tape.constant(np.array([[2.0]])) for _ in betas],
        [tape.constant(np.array([[3.0, beta]])) for beta in betas],
    )
    np.testing.assert_allclose(y.value[1:], h[1:], rtol=1e-12)
