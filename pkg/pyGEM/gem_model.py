#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.sparse import csr_matrix, diags
from scipy.special import expit

from .gem_config import make_rng
from .gem_errors import GEMConsistencyError, GEMDimensionError, GEMNumericError, GEMUsageError
from .gem_graph import GEMHeteroGraph, GEMFeatureMatrix, GEMLabelSet
from .gem_logging import log


class AggregationMode(Enum):
    """
    How the per device type messages are mixed.
    """
    MEAN = "mean"
    """Every device type gets a weight of ``1/|D|``."""
    ATTENTION = "attention"
    """Device types are weighted by ``softmax(alpha)``."""


class NeighbourScaling(Enum):
    SUM = "sum"
    DEGREE_SCALED = "degree_scaled"


class Activation(Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass
class GEMParams:
    """
    The trainable parameters of a GEM model.
    """
    W: npt.NDArray[np.float64]
    """``P x k`` feature transform."""
    V: npt.NDArray[np.float64]
    """``|D| x k x k`` stack of per device type message transforms."""
    u: npt.NDArray[np.float64]
    """Length ``k`` logistic head."""
    alpha: npt.NDArray[np.float64]
    """Length ``|D|`` attention logits; only used in attention mode."""
    mode: AggregationMode = AggregationMode.MEAN

    def __post_init__(self):
        self.mode = AggregationMode(self.mode)
        self.validate()

    @property
    def P(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]

    @property
    def n_types(self) -> int:
        return self.V.shape[0]

    def validate(self):
        k = self.W.shape[1] if self.W.ndim == 2 else -1
        if self.W.ndim != 2 or self.V.shape != (self.V.shape[0], k, k) or self.u.shape != (k,) \
                or self.alpha.shape != (self.V.shape[0],):
            raise GEMDimensionError(f"Inconsistent parameter shapes: W {self.W.shape}, V {self.V.shape}, "
                                    f"u {self.u.shape}, alpha {self.alpha.shape}.")
        for name, value in self.arrays().items():
            if not np.all(np.isfinite(value)):
                raise GEMNumericError(f"Parameter '{name}' holds non-finite values.")

    def arrays(self) -> Dict[str, npt.NDArray[np.float64]]:
        """
        Gets the trainable arrays by name; ``alpha`` is only included in attention mode.
        """
        d = {"W": self.W, "V": self.V, "u": self.u}
        if self.mode == AggregationMode.ATTENTION:
            d["alpha"] = self.alpha
        return d

    def copy(self) -> "GEMParams":
        return GEMParams(self.W.copy(), self.V.copy(), self.u.copy(), self.alpha.copy(), self.mode)

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(self.mode.value.encode())
        for value in (self.W, self.V, self.u, self.alpha):
            h.update(np.ascontiguousarray(value, dtype=np.float64).tobytes())
        return h.hexdigest()


@dataclass
class GEMGradients:
    dW: npt.NDArray[np.float64]
    dV: npt.NDArray[np.float64]
    du: npt.NDArray[np.float64]
    dalpha: Optional[npt.NDArray[np.float64]] = None
    """Only present in attention mode."""

    def arrays(self) -> Dict[str, npt.NDArray[np.float64]]:
        d = {"W": self.dW, "V": self.dV, "u": self.du}
        if self.dalpha is not None:
            d["alpha"] = self.dalpha
        return d


@dataclass(frozen=True)
class GEMEmbeddingTrace:
    """
    The intermediate values of a forward pass, retained for back propagation.
    """
    H: List[npt.NDArray[np.float64]]
    """Embeddings ``H^(0) ... H^(T)``, each ``N x k``; ``H^(0)`` is all zeros."""
    Z: List[npt.NDArray[np.float64]]
    """Pre-activations ``Z^(1) ... Z^(T)``."""
    fingerprint: str
    scaling: NeighbourScaling
    activation: Activation

    @property
    def T(self) -> int:
        return len(self.Z)

    @property
    def embeddings(self) -> npt.NDArray[np.float64]:
        return self.H[-1]


def init_params(P: int, k: int, n_types: int, mode: Union[AggregationMode, str] = AggregationMode.MEAN,
                seed: int = 0) -> GEMParams:
    """
    Initialises GEM parameters; each matrix is drawn from ``uniform(-s, s)`` with ``s = sqrt(6 / (fan_in +
    fan_out))`` and the attention logits start at 0.

    :param P: the number of input features.
    :param k: the embedding size.
    :param n_types: the number of device types.
    :param mode: the aggregation mode.
    :param seed: the random seed.
    :return: the new parameters.
    """
    if P < 1 or k < 1 or n_types < 1:
        raise GEMUsageError(f"Invalid parameter sizes P={P}, k={k}, |D|={n_types}.")
    rng = make_rng(seed, "gem-init")

    def glorot(*shape: int) -> npt.NDArray[np.float64]:
        s = np.sqrt(6.0 / (shape[-2] + shape[-1]))
        return rng.uniform(-s, s, size=shape)

    W = glorot(P, k)
    V = glorot(n_types, k, k)
    u = glorot(k, 1)[:, 0]
    return GEMParams(W, V, u, np.zeros(n_types), AggregationMode(mode))


def attention_weights(alpha: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """
    Computes ``softmax(alpha)``.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    e = np.exp(alpha - np.max(alpha))
    return e / np.sum(e)


def _mixing(params: GEMParams) -> Tuple[float, npt.NDArray[np.float64]]:
    if params.mode == AggregationMode.ATTENTION:
        return 1.0, attention_weights(params.alpha)
    return 1.0 / params.n_types, np.ones(params.n_types)


def propagation_matrices(graph: GEMHeteroGraph,
                         scaling: Union[NeighbourScaling, str] = NeighbourScaling.SUM) -> List[csr_matrix]:
    """
    Gets the matrices messages are propagated with: ``A^(d)`` itself for sum aggregation, or ``A^(d)`` with each
    row divided by ``max(1, degree)`` for degree scaled aggregation.
    """
    scaling = NeighbourScaling(scaling)
    if scaling == NeighbourScaling.SUM:
        return list(graph.adjacency)
    out = []
    for a in graph.adjacency:
        deg = np.maximum(1.0, np.diff(a.indptr).astype(np.float64))
        out.append((diags(1.0 / deg) @ a).tocsr())
    return out


def _activate(z: npt.NDArray[np.float64], activation: Activation) -> npt.NDArray[np.float64]:
    if activation == Activation.RELU:
        return np.maximum(z, 0.0)
    return z.copy()


def forward(params: GEMParams, graph: GEMHeteroGraph, features: GEMFeatureMatrix, T: int,
            scaling: Union[NeighbourScaling, str] = NeighbourScaling.SUM,
            activation: Union[Activation, str] = Activation.RELU
            ) -> Tuple[GEMEmbeddingTrace, npt.NDArray[np.float64]]:
    """
    Runs ``T`` layers of GEM propagation::

        Z^(t) = X W + c * sum_d w_d A^(d) H^(t-1) V_d
        H^(t) = activation(Z^(t))

    with ``w_d = 1, c = 1/|D|`` in mean mode and ``w = softmax(alpha), c = 1`` in attention mode.

    :param params: the model parameters.
    :param graph: the heterogeneous graph.
    :param features: the feature matrix.
    :param T: the number of layers.
    :param scaling: sum or degree scaled neighbourhood aggregation.
    :param activation: the hidden activation; ``identity`` is only meant for testing.
    :return: (the trace, the score of each account)
    """
    scaling = NeighbourScaling(scaling)
    activation = Activation(activation)
    if T < 1:
        raise GEMUsageError(f"The number of layers must be at least 1, got {T}.")
    if features.P != params.P:
        raise GEMDimensionError(f"The feature matrix has {features.P} columns but W has {params.P} rows.")
    if features.n_rows != graph.n_vertices:
        raise GEMDimensionError(f"The feature matrix has {features.n_rows} rows, the graph has "
                                f"{graph.n_vertices} vertices.")
    if graph.n_types != params.n_types:
        raise GEMDimensionError(f"The graph has {graph.n_types} device types, the parameters have "
                                f"{params.n_types}.")

    c, w = _mixing(params)
    props = propagation_matrices(graph, scaling)
    xw = features.values @ params.W
    H = [np.zeros((graph.n_vertices, params.k))]
    Z = []
    for t in range(1, T + 1):
        z = xw.copy()
        for d in range(params.n_types):
            z += (c * w[d]) * (props[d] @ H[t - 1] @ params.V[d])
        if not np.all(np.isfinite(z)):
            log(f"Layer {t} produced non-finite values.", severity=logging.ERROR)
            raise GEMNumericError(f"Layer {t} of {T} produced non-finite values.", layer=t)
        Z.append(z)
        H.append(_activate(z, activation))

    trace = GEMEmbeddingTrace(H, Z, params.fingerprint(), scaling, activation)
    return trace, account_scores(trace, params.u, graph.n_accounts)


def account_scores(trace: GEMEmbeddingTrace, u: npt.NDArray[np.float64], n_accounts: int) -> npt.NDArray[np.float64]:
    return expit(trace.embeddings[:n_accounts] @ u)


def head_loss(h: npt.NDArray[np.float64], u: npt.NDArray[np.float64], labels: GEMLabelSet) -> float:
    """
    The logistic loss ``sum_i log(1 + exp(-y_i u.h_i))`` over the labelled accounts.
    """
    if len(labels) == 0:
        raise GEMUsageError("The loss needs at least one labelled account.")
    margins = labels.values * (h[labels.indices] @ u)
    return float(np.sum(np.logaddexp(0.0, -margins)))


def head_backward(h: npt.NDArray[np.float64], u: npt.NDArray[np.float64],
                  labels: GEMLabelSet) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """
    Back propagates the logistic loss through the head.

    :return: (gradient w.r.t. ``u``, gradient w.r.t. ``h``)
    """
    if len(labels) == 0:
        raise GEMUsageError("The loss needs at least one labelled account.")
    y = labels.values.astype(np.float64)
    g_logit = -y * expit(-y * (h[labels.indices] @ u))
    du = h[labels.indices].T @ g_logit
    g_h = np.zeros_like(h)
    g_h[labels.indices] = np.outer(g_logit, u)
    return du, g_h


def loss(params: GEMParams, trace: GEMEmbeddingTrace, labels: GEMLabelSet) -> float:
    return head_loss(trace.embeddings, params.u, labels)


def backward(params: GEMParams, trace: GEMEmbeddingTrace, graph: GEMHeteroGraph, features: GEMFeatureMatrix,
             labels: GEMLabelSet) -> GEMGradients:
    """
    Computes the exact gradients of the loss with respect to every parameter by back propagating through the
    unrolled layers. ``W`` and ``V_d`` are shared by all layers so their gradients accumulate; the ReLU subgradient
    at 0 is 0.

    :param params: the parameters the trace was computed with.
    :param trace: the forward trace.
    :param graph: the graph the trace was computed on.
    :param features: the feature matrix the trace was computed on.
    :param labels: the training labels.
    :return: the gradients.
    """
    if trace.fingerprint != params.fingerprint():
        raise GEMConsistencyError("The trace was computed with different parameters.")
    if trace.H[0].shape[0] != graph.n_vertices:
        raise GEMConsistencyError("The trace was computed on a different graph.")

    c, w = _mixing(params)
    props = propagation_matrices(graph, trace.scaling)
    X = features.values
    du, g_h = head_backward(trace.embeddings, params.u, labels)
    dW = np.zeros_like(params.W)
    dV = np.zeros_like(params.V)
    dw = np.zeros(params.n_types)
    for t in range(trace.T, 0, -1):
        z = trace.Z[t - 1]
        g_z = g_h * (z > 0) if trace.activation == Activation.RELU else g_h
        dW += X.T @ g_z
        h_prev = trace.H[t - 1]
        g_h = np.zeros_like(g_h)
        for d in range(params.n_types):
            m = props[d] @ h_prev
            dV[d] += (c * w[d]) * (m.T @ g_z)
            dw[d] += c * np.sum((m @ params.V[d]) * g_z)
            if t > 1:
                g_h += (c * w[d]) * (props[d].T @ (g_z @ params.V[d].T))

    dalpha = None
    if params.mode == AggregationMode.ATTENTION:
        dalpha = w * (dw - np.dot(w, dw))
    return GEMGradients(dW, dV, du, dalpha)
