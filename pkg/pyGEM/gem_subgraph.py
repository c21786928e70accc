#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
import numpy.typing as npt
from scipy.sparse import csr_matrix, triu
from scipy.sparse.csgraph import connected_components

from .gem_errors import GEMUsageError, GEMDimensionError
from .gem_eval import auc, f1_at
from .gem_graph import GEMHeteroGraph, GEMFeatureMatrix, GEMLabelSet
from .gem_logging import log

DEFAULT_DEGREE_CAP = 10000


class SubgraphMetric(Enum):
    F1 = "f1"
    AUC = "auc"


@dataclass(frozen=True)
class GEMAccountGraph:
    """
    An undirected account-account graph. Each edge is stored once with ``rows[e] < cols[e]``; edges are sorted by
    ``(row, col)``.
    """
    n_accounts: int
    rows: npt.NDArray[np.int64]
    cols: npt.NDArray[np.int64]
    weights: Optional[npt.NDArray[np.float64]] = None
    """The inner products of the endpoints' activity vectors, once computed by ``prune``."""

    @property
    def n_edges(self) -> int:
        return len(self.rows)

    def edge_set(self):
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    def to_csr(self) -> csr_matrix:
        data = np.ones(self.n_edges, dtype=np.float64)
        return csr_matrix((data, (self.rows, self.cols)), shape=(self.n_accounts, self.n_accounts))


@dataclass(frozen=True)
class GEMComponentScore:
    """
    The component-size score of every account.
    """
    sizes: npt.NDArray[np.int64]
    """The size of the connected component each account belongs to."""
    component: npt.NDArray[np.int64]
    """The component label of each account."""

    @property
    def n_components(self) -> int:
        return int(self.component.max()) + 1 if len(self.component) > 0 else 0

    def probabilities(self) -> npt.NDArray[np.float64]:
        return component_scores_to_probabilities(self.sizes)


def project(graph: GEMHeteroGraph, degree_cap: int = DEFAULT_DEGREE_CAP) -> GEMAccountGraph:
    """
    Projects the account-device graph onto the accounts; two accounts are linked when they share at least one
    device of any type.

    Devices with more than ``degree_cap`` accounts are still expanded exactly, which costs ``O(deg^2)`` memory for
    each of them; a warning is logged.

    :param graph: the heterogeneous graph.
    :param degree_cap: the device degree above which a warning is logged.
    :return: the account graph.
    """
    incidence = graph.incidence()
    incidence.data[:] = 1.0
    device_degree = np.diff(incidence.tocsc().indptr)
    n_heavy = int(np.sum(device_degree > degree_cap))
    if n_heavy > 0:
        log(f"{n_heavy} devices are shared by more than {degree_cap} accounts; projecting them anyway, the account "
            f"graph may be very large.", severity=logging.WARN)
    shared = triu(incidence @ incidence.T, k=1).tocoo()
    order = np.lexsort((shared.col, shared.row))
    rows = shared.row[order].astype(np.int64)
    cols = shared.col[order].astype(np.int64)
    log(f"Projected {graph.n_accounts} accounts onto {len(rows)} account-account edges.", severity=logging.DEBUG)
    return GEMAccountGraph(graph.n_accounts, rows, cols)


def edge_weights(ag: GEMAccountGraph, features: GEMFeatureMatrix) -> npt.NDArray[np.float64]:
    """
    Computes the inner product of the activity histograms (the first ``p`` feature columns) of each edge's
    endpoints.
    """
    if features.n_rows < ag.n_accounts:
        raise GEMDimensionError(f"Feature matrix has {features.n_rows} rows, expected at least {ag.n_accounts}.")
    act = features.activity
    return np.einsum("ij,ij->i", act[ag.rows], act[ag.cols])


def prune(ag: GEMAccountGraph, features: GEMFeatureMatrix, theta: float) -> GEMAccountGraph:
    """
    Keeps exactly the edges whose endpoints' activity inner product is at least ``theta``.
    """
    weights = ag.weights if ag.weights is not None else edge_weights(ag, features)
    keep = weights >= theta
    return GEMAccountGraph(ag.n_accounts, ag.rows[keep], ag.cols[keep], weights[keep])


def components(ag: GEMAccountGraph) -> GEMComponentScore:
    """
    Scores each account by the number of accounts in its connected component.
    """
    if ag.n_accounts == 0:
        empty = np.zeros(0, dtype=np.int64)
        return GEMComponentScore(empty, empty)
    _, labels = connected_components(ag.to_csr(), directed=False)
    labels = labels.astype(np.int64)
    sizes = np.bincount(labels)[labels]
    return GEMComponentScore(sizes.astype(np.int64), labels)


def component_scores_to_probabilities(sizes: npt.NDArray[np.int64]) -> npt.NDArray[np.float64]:
    """
    Maps component sizes onto ``[0, 1)`` as ``1 - 1/size``; isolated accounts score 0 and any account in a component
    of two or more scores at least 0.5.
    """
    return 1.0 - 1.0 / np.asarray(sizes, dtype=np.float64)


def theta_grid(ag: GEMAccountGraph, features: GEMFeatureMatrix, n: int = 10) -> npt.NDArray[np.float64]:
    """
    Builds candidate thresholds from the quantiles of the account graph's edge weights.

    :param ag: the projected account graph.
    :param features: the feature matrix.
    :param n: the number of quantiles.
    :return: sorted unique candidate thresholds, always including 0.
    """
    weights = ag.weights if ag.weights is not None else edge_weights(ag, features)
    if len(weights) == 0:
        return np.zeros(1)
    qs = np.quantile(weights, np.linspace(0, 1, max(n, 2)))
    return np.unique(np.concatenate([[0.0], qs]))


def tune_theta(ag: GEMAccountGraph, features: GEMFeatureMatrix, labels: GEMLabelSet,
               candidates: Sequence[float], metric: Union[SubgraphMetric, str] = SubgraphMetric.AUC) -> float:
    """
    Picks the pruning threshold whose component scores maximise the metric on the given labels. Ties go to the
    smallest threshold.

    :param ag: the projected account graph.
    :param features: the feature matrix.
    :param labels: the validation labels.
    :param candidates: the candidate thresholds.
    :param metric: ``f1`` (at a threshold of 0.5 on ``1 - 1/size``) or ``auc``.
    :return: the best threshold.
    """
    if len(candidates) == 0:
        raise GEMUsageError("tune_theta needs at least one candidate threshold.")
    if len(labels) == 0:
        raise GEMUsageError("tune_theta needs a non-empty label set.")
    metric = SubgraphMetric(metric)
    weighted = ag if ag.weights is not None else prune(ag, features, -np.inf)
    best_theta, best_value = None, -np.inf
    for theta in sorted(float(c) for c in candidates):
        scores = components(prune(weighted, features, theta)).probabilities()
        if metric == SubgraphMetric.AUC:
            value = auc(scores, labels)
        else:
            value = f1_at(scores, labels, 0.5)[0]
        log(f"theta={theta:.6g} {metric.value}={value:.6f}", severity=logging.DEBUG)
        if value > best_value:
            best_theta, best_value = theta, value
    log(f"Selected theta={best_theta:.6g} ({metric.value}={best_value:.6f}).", severity=logging.INFO)
    assert best_theta is not None
    return best_theta
