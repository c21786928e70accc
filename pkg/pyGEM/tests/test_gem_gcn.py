#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import numpy as np
import pytest
from scipy.sparse import csr_matrix

from ..gem_errors import GEMDimensionError, GEMUsageError
from ..gem_gcn import GEMGCNParams, init_gcn_params, normalized_adjacency, gcn_forward, gcn_backward, gcn_loss
from ..gem_graph import GEMFeatureMatrix, GEMHeteroGraph, GEMVertexIndex, build_graph, permute_vertices
from ..gem_ingest import GEMDeviceTypeRegistry


def test_normalized_adjacency_single_edge(make_events, two_types):
    graph = build_graph(make_events([("a", "d")]), two_types)
    np.testing.assert_allclose(normalized_adjacency(graph).toarray(), [[0.5, 0.5], [0.5, 0.5]])


def test_normalized_adjacency_isolated_vertex():
    registry = GEMDeviceTypeRegistry(["UMID"])
    graph = GEMHeteroGraph(GEMVertexIndex(["a"], [("d", "UMID")]), registry, [csr_matrix((2, 2))])
    np.testing.assert_array_equal(normalized_adjacency(graph).toarray(), np.eye(2))


def test_normalized_adjacency_collapses_types(make_events, two_types):
    graph = build_graph(make_events([("a", "d", "UMID"), ("a", "m", "MAC")]), two_types)
    a = normalized_adjacency(graph).toarray()
    np.testing.assert_allclose(a, a.T)
    # deg(a) = 3, deg(d) = deg(m) = 2 in A + I.
    assert a[0, 1] == pytest.approx(1 / np.sqrt(6))
    assert a[0, 0] == pytest.approx(1 / 3)


def test_zero_features_score_one_half(random_hetero):
    graph, features, _ = random_hetero(0)
    zero = GEMFeatureMatrix(np.zeros_like(features.values), features.p, features.q, features.n_types)
    _, scores = gcn_forward(init_gcn_params(features.P, 4, 2), graph, zero)
    np.testing.assert_array_equal(scores, np.full(graph.n_accounts, 0.5))


def test_shapes_are_checked(random_hetero):
    graph, features, _ = random_hetero(0)
    params = init_gcn_params(features.P, 4, 3)
    assert params.T == 3
    assert set(params.arrays()) == {"W0", "W1", "W2", "u"}
    with pytest.raises(GEMDimensionError):
        gcn_forward(params, graph, features, T=2)
    with pytest.raises(GEMDimensionError):
        gcn_forward(init_gcn_params(features.P + 1, 4, 3), graph, features)
    with pytest.raises(GEMDimensionError):
        GEMGCNParams([np.zeros((3, 4)), np.zeros((5, 4))], np.zeros(4))
    with pytest.raises(GEMUsageError):
        GEMGCNParams([], np.zeros(4))


def test_gradients_match_finite_differences(random_hetero):
    eps = 1e-5
    for seed in range(3):
        graph, features, labels = random_hetero(20 + seed)
        params = init_gcn_params(features.P, 3, 2, seed=seed)
        trace, _ = gcn_forward(params, graph, features)
        grads = gcn_backward(params, trace, graph, labels)
        assert set(grads) == set(params.arrays())
        for name, value in params.arrays().items():
            numeric = np.zeros_like(value)
            for idx in np.ndindex(*value.shape):
                original = value[idx]
                value[idx] = original + eps
                plus = gcn_loss(params, gcn_forward(params, graph, features)[0], labels)
                value[idx] = original - eps
                minus = gcn_loss(params, gcn_forward(params, graph, features)[0], labels)
                value[idx] = original
                numeric[idx] = (plus - minus) / (2 * eps)
            error = np.linalg.norm(grads[name] - numeric) / max(np.linalg.norm(grads[name]) + np.linalg.norm(numeric),
                                                                1e-12)
            assert error <= 1e-4, name


def test_gcn_permutation_equivariance(random_hetero):
    graph, features, _ = random_hetero(8, n_types=3)
    params = init_gcn_params(features.P, 4, 3, seed=2)
    _, scores = gcn_forward(params, graph, features)
    rng = np.random.default_rng(5)
    account_perm = rng.permutation(graph.n_accounts)
    pg, pf = permute_vertices(graph, features, account_perm, rng.permutation(graph.vertex_index.n_devices))
    _, permuted = gcn_forward(params, pg, pf)
    np.testing.assert_allclose(permuted[account_perm], scores, rtol=1e-12)
