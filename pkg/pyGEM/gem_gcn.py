#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import hashlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from scipy.sparse import csr_matrix, diags, identity

from .gem_config import make_rng
from .gem_errors import GEMConsistencyError, GEMDimensionError, GEMNumericError, GEMUsageError
from .gem_graph import GEMHeteroGraph, GEMFeatureMatrix, GEMLabelSet
from .gem_model import account_scores, head_backward, head_loss, GEMEmbeddingTrace, NeighbourScaling, Activation


@dataclass
class GEMGCNParams:
    """
    The parameters of the homogeneous graph convolutional baseline; one unshared weight matrix per layer and the
    same logistic head as GEM.
    """
    layers: List[npt.NDArray[np.float64]]
    u: npt.NDArray[np.float64]

    def __post_init__(self):
        if len(self.layers) < 1:
            raise GEMUsageError("A GCN needs at least one layer.")
        for t in range(1, len(self.layers)):
            if self.layers[t].shape[0] != self.layers[t - 1].shape[1]:
                raise GEMDimensionError(f"GCN layer {t} has shape {self.layers[t].shape}, which doesn't follow "
                                        f"{self.layers[t - 1].shape}.")
        if self.u.shape != (self.layers[-1].shape[1],):
            raise GEMDimensionError(f"The head has shape {self.u.shape}, expected ({self.layers[-1].shape[1]},).")

    @property
    def P(self) -> int:
        return self.layers[0].shape[0]

    @property
    def T(self) -> int:
        return len(self.layers)

    def arrays(self) -> Dict[str, npt.NDArray[np.float64]]:
        d = {f"W{t}": w for t, w in enumerate(self.layers)}
        d["u"] = self.u
        return d

    def copy(self) -> "GEMGCNParams":
        return GEMGCNParams([w.copy() for w in self.layers], self.u.copy())

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for value in self.layers + [self.u]:
            h.update(np.ascontiguousarray(value, dtype=np.float64).tobytes())
        return h.hexdigest()


def init_gcn_params(P: int, k: int, T: int, seed: int = 0) -> GEMGCNParams:
    rng = make_rng(seed, "gcn-init")
    layers = []
    fan_in = P
    for _ in range(T):
        s = np.sqrt(6.0 / (fan_in + k))
        layers.append(rng.uniform(-s, s, size=(fan_in, k)))
        fan_in = k
    s = np.sqrt(6.0 / (k + 1))
    return GEMGCNParams(layers, rng.uniform(-s, s, size=k))


def normalized_adjacency(graph: GEMHeteroGraph) -> csr_matrix:
    """
    Computes ``D^-1/2 (A + I) D^-1/2`` over the type-collapsed adjacency, where ``D`` is the degree matrix of
    ``A + I``.
    """
    a_hat = (graph.full_adjacency + identity(graph.n_vertices, format="csr")).tocsr()
    inv_sqrt = 1.0 / np.sqrt(np.asarray(a_hat.sum(axis=1)).ravel())
    d = diags(inv_sqrt)
    norm = (d @ a_hat @ d).tocsr()
    norm.sort_indices()
    return norm


def gcn_forward(params: GEMGCNParams, graph: GEMHeteroGraph, features: GEMFeatureMatrix,
                T: Optional[int] = None, a_norm: Optional[csr_matrix] = None
                ) -> Tuple[GEMEmbeddingTrace, npt.NDArray[np.float64]]:
    """
    Runs the graph convolutional baseline ``H^(t+1) = ReLU(A_norm H^(t) W^(t))`` with ``H^(0) = X``.

    :param params: the layer parameters.
    :param graph: the graph; device types are ignored.
    :param features: the feature matrix.
    :param T: the number of layers, must match the parameters when given.
    :param a_norm: optionally, a precomputed ``normalized_adjacency(graph)``.
    :return: (the trace, the score of each account)
    """
    if T is not None and T != params.T:
        raise GEMDimensionError(f"Asked for {T} layers but the parameters have {params.T}.")
    if features.P != params.P:
        raise GEMDimensionError(f"The feature matrix has {features.P} columns but the first layer has {params.P} "
                                f"rows.")
    if features.n_rows != graph.n_vertices:
        raise GEMDimensionError(f"The feature matrix has {features.n_rows} rows, the graph has "
                                f"{graph.n_vertices} vertices.")
    a_norm = normalized_adjacency(graph) if a_norm is None else a_norm
    H = [np.asarray(features.values)]
    Z = []
    for t, w in enumerate(params.layers, start=1):
        z = a_norm @ (H[-1] @ w)
        if not np.all(np.isfinite(z)):
            raise GEMNumericError(f"GCN layer {t} of {params.T} produced non-finite values.", layer=t)
        Z.append(z)
        H.append(np.maximum(z, 0.0))
    trace = GEMEmbeddingTrace(H, Z, params.fingerprint(), NeighbourScaling.SUM, Activation.RELU)
    return trace, account_scores(trace, params.u, graph.n_accounts)


def gcn_loss(params: GEMGCNParams, trace: GEMEmbeddingTrace, labels: GEMLabelSet) -> float:
    return head_loss(trace.embeddings, params.u, labels)


def gcn_backward(params: GEMGCNParams, trace: GEMEmbeddingTrace, graph: GEMHeteroGraph,
                 labels: GEMLabelSet, a_norm: Optional[csr_matrix] = None) -> Dict[str, npt.NDArray[np.float64]]:
    """
    Computes the gradients of the logistic loss with respect to every GCN parameter.

    :return: gradients keyed like ``GEMGCNParams.arrays()``.
    """
    if trace.fingerprint != params.fingerprint():
        raise GEMConsistencyError("The trace was computed with different parameters.")
    a_norm = normalized_adjacency(graph) if a_norm is None else a_norm
    du, g_h = head_backward(trace.embeddings, params.u, labels)
    grads: Dict[str, npt.NDArray[np.float64]] = {"u": du}
    for t in range(params.T, 0, -1):
        g_z = g_h * (trace.Z[t - 1] > 0)
        # A_norm is symmetric.
        g_pre = a_norm @ g_z
        grads[f"W{t - 1}"] = trace.H[t - 1].T @ g_pre
        if t > 1:
            g_h = g_pre @ params.layers[t - 1].T
    return grads
