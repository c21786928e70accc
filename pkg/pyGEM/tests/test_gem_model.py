#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import numpy as np
import pytest
from scipy.sparse import csr_matrix

from ..gem_errors import GEMConsistencyError, GEMDimensionError, GEMNumericError, GEMUsageError
from ..gem_graph import GEMFeatureMatrix, GEMHeteroGraph, GEMLabelSet, GEMVertexIndex, build_graph, \
    permute_vertices
from ..gem_ingest import GEMDeviceTypeRegistry
from ..gem_model import (GEMParams, AggregationMode, Activation, NeighbourScaling, init_params, attention_weights,
                         propagation_matrices, forward, backward, loss, head_loss)


def _loss_at(params, graph, features, labels, T, scaling, activation):
    trace, _ = forward(params, graph, features, T, scaling, activation)
    return loss(params, trace, labels)


def _numeric_gradient(params, name, graph, features, labels, T, scaling, activation, eps=1e-5):
    value = params.arrays()[name]
    grad = np.zeros_like(value)
    for idx in np.ndindex(*value.shape):
        original = value[idx]
        value[idx] = original + eps
        plus = _loss_at(params, graph, features, labels, T, scaling, activation)
        value[idx] = original - eps
        minus = _loss_at(params, graph, features, labels, T, scaling, activation)
        value[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def _relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def _empty_graph(n_accounts, n_devices, registry):
    vi = GEMVertexIndex([f"a{i}" for i in range(n_accounts)],
                        [(f"d{j}", registry.names[j % len(registry)]) for j in range(n_devices)])
    n = vi.n_vertices
    return GEMHeteroGraph(vi, registry, [csr_matrix((n, n)) for _ in range(len(registry))])


def test_attention_weights():
    np.testing.assert_allclose(attention_weights([0, 0, 0]), [1 / 3] * 3)
    w = attention_weights([1000.0, 0.0])
    assert np.all(np.isfinite(w))
    np.testing.assert_allclose(w, [1.0, 0.0])
    np.testing.assert_allclose(attention_weights([np.log(3), 0.0]), [0.75, 0.25])


def test_init_params():
    params = init_params(10, 4, 3, seed=2)
    assert params.W.shape == (10, 4)
    assert params.V.shape == (3, 4, 4)
    assert params.u.shape == (4,)
    np.testing.assert_array_equal(params.alpha, np.zeros(3))
    assert np.all(np.abs(params.W) <= np.sqrt(6 / 14))
    assert params.fingerprint() == init_params(10, 4, 3, seed=2).fingerprint()
    assert params.fingerprint() != init_params(10, 4, 3, seed=3).fingerprint()
    assert "alpha" not in params.arrays()
    assert "alpha" in init_params(10, 4, 3, "attention").arrays()
    with pytest.raises(GEMUsageError):
        init_params(10, 0, 3)


def test_params_validation():
    with pytest.raises(GEMDimensionError):
        GEMParams(np.zeros((3, 2)), np.zeros((1, 2, 3)), np.zeros(2), np.zeros(1))
    with pytest.raises(GEMNumericError):
        GEMParams(np.full((3, 2), np.nan), np.zeros((1, 2, 2)), np.zeros(2), np.zeros(1))


def test_zero_params_score_one_half(random_hetero):
    graph, features, _ = random_hetero(0)
    params = GEMParams(np.zeros((features.P, 4)), np.zeros((2, 4, 4)), np.zeros(4), np.zeros(2))
    _, scores = forward(params, graph, features, 3)
    np.testing.assert_array_equal(scores, np.full(graph.n_accounts, 0.5))


def test_edgeless_graph_is_a_per_vertex_model():
    registry = GEMDeviceTypeRegistry(["UMID", "MAC"])
    graph = _empty_graph(4, 3, registry)
    rng = np.random.default_rng(1)
    values = np.zeros((7, 5))
    values[:4, :3] = rng.integers(0, 4, size=(4, 3))
    values[4:, 3:] = [[1, 0], [0, 1], [1, 0]]
    features = GEMFeatureMatrix(values, 3, 0, 2)
    params = init_params(5, 6, 2, seed=4)
    trace, scores = forward(params, graph, features, 5)
    expected_h = np.maximum(values @ params.W, 0.0)
    np.testing.assert_array_equal(trace.embeddings, expected_h)
    np.testing.assert_allclose(scores, 1.0 / (1.0 + np.exp(-(expected_h[:4] @ params.u))), rtol=1e-14)


_WALK_EDGES = [("a0", "d0"), ("a1", "d0"), ("a1", "d1"), ("a2", "d1"), ("a2", "d2"), ("a0", "d2"), ("a0", "d1")]


def _count_walks(neighbours, start, length):
    if length == 0:
        return 1
    return sum(_count_walks(neighbours, nxt, length - 1) for nxt in neighbours[start])


def test_counts_walks_with_identity_activation(make_events):
    graph = build_graph(make_events(_WALK_EDGES), GEMDeviceTypeRegistry(["UMID"]))
    vi = graph.vertex_index
    assert graph.n_vertices == 6
    neighbours = {v: [] for v in range(6)}
    for account, device in _WALK_EDGES:
        a, d = vi.account_index(account), vi.device_index(device, "UMID")
        neighbours[a].append(d)
        neighbours[d].append(a)
    features = GEMFeatureMatrix(np.ones((6, 1)), 0, 0, 1)
    params = GEMParams(np.ones((1, 1)), np.ones((1, 1, 1)), np.ones(1), np.zeros(1))
    for T in range(1, 6):
        trace, _ = forward(params, graph, features, T, activation=Activation.IDENTITY)
        # With H^(0) = 0, H^(T) counts the walks of length 0 .. T-1 starting at each vertex.
        expected = [sum(_count_walks(neighbours, v, s) for s in range(T)) for v in range(6)]
        np.testing.assert_array_equal(trace.embeddings[:, 0], expected)


def test_head_loss_examples():
    h = np.array([[1.0, 2.0]])
    labels = GEMLabelSet.from_arrays([0], [1])
    assert head_loss(h, np.zeros(2), labels) == pytest.approx(np.log(2))
    assert head_loss(h, np.array([1.0, 0.0]), labels) == pytest.approx(np.log(1 + np.exp(-1)))
    assert head_loss(h, np.array([1.0, 0.0]), GEMLabelSet.from_arrays([0], [-1])) == pytest.approx(np.log(1 + np.e))
    assert np.isfinite(head_loss(h, np.array([-1000.0, 0.0]), labels))
    with pytest.raises(GEMUsageError):
        head_loss(h, np.zeros(2), GEMLabelSet.from_arrays([], []))


@pytest.mark.parametrize("mode,scaling,activation", [
    ("mean", "sum", "relu"),
    ("attention", "sum", "relu"),
    ("attention", "degree_scaled", "relu"),
    ("mean", "sum", "identity"),
])
def test_gradients_match_finite_differences(random_hetero, mode, scaling, activation):
    for seed in range(3):
        graph, features, labels = random_hetero(10 + seed)
        params = init_params(features.P, 3, 2, mode, seed=seed)
        params.W *= 0.3
        if mode == "attention":
            params.alpha[:] = np.random.default_rng(seed).normal(size=2)
        trace, _ = forward(params, graph, features, 3, scaling, activation)
        grads = backward(params, trace, graph, features, labels).arrays()
        assert set(grads) == set(params.arrays())
        for name in grads:
            numeric = _numeric_gradient(params, name, graph, features, labels, 3, scaling, activation)
            assert _relative_error(grads[name], numeric) <= 1e-4, name


def test_mean_mode_has_no_attention_gradient(random_hetero):
    graph, features, labels = random_hetero(0)
    params = init_params(features.P, 3, 2)
    trace, _ = forward(params, graph, features, 2)
    assert backward(params, trace, graph, features, labels).dalpha is None


def test_single_type_modes_agree(random_hetero):
    graph, features, _ = random_hetero(6, n_types=1)
    mean = init_params(features.P, 4, 1, "mean", seed=1)
    attention = GEMParams(mean.W, mean.V, mean.u, np.array([2.5]), AggregationMode.ATTENTION)
    np.testing.assert_array_equal(forward(mean, graph, features, 4)[1], forward(attention, graph, features, 4)[1])


@pytest.mark.parametrize("mode", ["mean", "attention"])
def test_permutation_equivariance(random_hetero, mode):
    graph, features, _ = random_hetero(8, n_types=3)
    params = init_params(features.P, 4, 3, mode, seed=3)
    if mode == "attention":
        params.alpha[:] = [0.5, -0.2, 0.1]
    _, scores = forward(params, graph, features, 3)
    rng = np.random.default_rng(9)
    account_perm = rng.permutation(graph.n_accounts)
    device_perm = rng.permutation(graph.vertex_index.n_devices)
    pg, pf = permute_vertices(graph, features, account_perm, device_perm)
    _, permuted = forward(params, pg, pf, 3)
    np.testing.assert_allclose(permuted[account_perm], scores, rtol=1e-12)


def test_degree_scaled_star(make_events):
    graph = build_graph(make_events([(f"a{i}", "hub") for i in range(4)]), GEMDeviceTypeRegistry(["UMID"]))
    summed = propagation_matrices(graph, NeighbourScaling.SUM)[0].toarray()
    scaled = propagation_matrices(graph, NeighbourScaling.DEGREE_SCALED)[0].toarray()
    np.testing.assert_array_equal(summed[4, :4], [1, 1, 1, 1])
    np.testing.assert_allclose(scaled[4, :4], [0.25] * 4)
    np.testing.assert_array_equal(scaled[:4], summed[:4])


def test_gradient_step_reduces_loss(random_hetero):
    graph, features, labels = random_hetero(3)
    params = init_params(features.P, 4, 2, "attention", seed=0)
    params.W *= 0.3
    trace, _ = forward(params, graph, features, 3)
    before = loss(params, trace, labels)
    grads = backward(params, trace, graph, features, labels).arrays()
    for name, value in params.arrays().items():
        value -= 1e-4 * grads[name]
    after = _loss_at(params, graph, features, labels, 3, "sum", "relu")
    assert after < before


def test_stale_trace_is_rejected(random_hetero):
    graph, features, labels = random_hetero(0)
    params = init_params(features.P, 3, 2)
    trace, _ = forward(params, graph, features, 2)
    changed = params.copy()
    changed.u += 1.0
    with pytest.raises(GEMConsistencyError):
        backward(changed, trace, graph, features, labels)


def test_forward_errors(random_hetero):
    graph, features, _ = random_hetero(0)
    with pytest.raises(GEMUsageError):
        forward(init_params(features.P, 3, 2), graph, features, 0)
    with pytest.raises(GEMDimensionError):
        forward(init_params(features.P + 1, 3, 2), graph, features, 2)
    with pytest.raises(GEMDimensionError):
        forward(init_params(features.P, 3, 3), graph, features, 2)


def test_overflow_names_the_layer(random_hetero):
    graph, features, _ = random_hetero(0)
    params = GEMParams(np.full((features.P, 2), 1e308), np.zeros((2, 2, 2)), np.zeros(2), np.zeros(2))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(GEMNumericError) as e:
            forward(params, graph, features, 3)
    assert e.value.layer == 1
