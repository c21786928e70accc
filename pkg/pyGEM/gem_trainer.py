#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt

from .gem_callback_dispatcher import GEMCallbackDispatcher
from .gem_config import make_rng
from .gem_errors import GEMConfigError, GEMNumericError
from .gem_eval import auc
from .gem_gcn import GEMGCNParams, gcn_backward, gcn_forward, gcn_loss, init_gcn_params, normalized_adjacency
from .gem_graph import GEMHeteroGraph, GEMFeatureMatrix, GEMLabelSet
from .gem_logging import log
from .gem_model import (GEMParams, GEMEmbeddingTrace, AggregationMode, NeighbourScaling, init_params, forward,
                        backward, loss)

ModelParams = Union[GEMParams, GEMGCNParams]


class OptimizerKind(Enum):
    SGD = "sgd"
    ADAM = "adam"


class TrainStrategy(Enum):
    END_TO_END = "end_to_end"
    """Back propagate through every layer and update all parameters."""
    ALTERNATING = "alternating"
    """Compute embeddings with the current parameters, then only update the logistic head."""


class ModelKind(Enum):
    GEM = "gem"
    GCN = "gcn"


@dataclass
class GEMTrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    optimizer: str = "adam"
    clip_norm: float = 5.0
    """Gradients are rescaled to this global norm at most; 0 disables clipping."""
    seed: int = 0
    validation_fraction: float = 0.2
    early_stop_patience: int = 20
    depth: int = 5
    """The number of propagation layers, ``T``."""
    embedding_size: int = 16
    mode: str = "mean"
    aggregation: str = "sum"
    weight_decay: float = 0.0
    strategy: str = "end_to_end"
    model: str = "gem"

    def validate(self):
        if self.epochs < 1:
            raise GEMConfigError(f"epochs must be at least 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise GEMConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.clip_norm < 0:
            raise GEMConfigError(f"clip_norm must be non-negative, got {self.clip_norm}")
        if not 0 <= self.validation_fraction < 1:
            raise GEMConfigError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")
        if self.early_stop_patience < 1:
            raise GEMConfigError(f"early_stop_patience must be at least 1, got {self.early_stop_patience}")
        if self.depth < 1 or self.embedding_size < 1:
            raise GEMConfigError(f"depth and embedding_size must be at least 1, got {self.depth} and "
                                 f"{self.embedding_size}")
        if self.weight_decay < 0:
            raise GEMConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        for name, enum in (("optimizer", OptimizerKind), ("mode", AggregationMode), ("aggregation", NeighbourScaling),
                           ("strategy", TrainStrategy), ("model", ModelKind)):
            value = getattr(self, name)
            if value not in {e.value for e in enum}:
                raise GEMConfigError(f"Invalid {name} '{value}', expected one of: "
                                     f"{', '.join(e.value for e in enum)}")


@dataclass(frozen=True)
class GEMEpochRecord:
    epoch: int
    train_loss: float
    val_auc: float
    wall_time: float


@dataclass
class GEMTrainReport:
    """
    The history and result of a training run. ``params`` holds the parameters of the best validation epoch.
    """
    records: List[GEMEpochRecord]
    best_epoch: int
    best_val_auc: float
    params: ModelParams
    stopped_early: bool = False

    def to_dict(self, include_times: bool = True) -> Dict[str, object]:
        epochs = []
        for r in self.records:
            row: Dict[str, object] = {"epoch": r.epoch, "train_loss": r.train_loss, "val_auc": r.val_auc}
            if include_times:
                row["wall_time"] = r.wall_time
            epochs.append(row)
        return {"best_epoch": self.best_epoch, "best_val_auc": self.best_val_auc, "stopped_early": self.stopped_early,
                "epochs": epochs}


class _Optimizer(ABC):
    def __init__(self, lr: float):
        self.lr = lr

    @abstractmethod
    def step(self, params: Dict[str, npt.NDArray[np.float64]], grads: Dict[str, npt.NDArray[np.float64]]) -> None:
        """
        Updates the parameters in place; only the entries present in ``grads`` are touched.
        """
        ...


class _SGD(_Optimizer):
    def step(self, params, grads):
        for name, g in grads.items():
            params[name] -= self.lr * g


class _Adam(_Optimizer):
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(lr)
        self.b1 = beta1
        self.b2 = beta2
        self.eps = eps
        self.m: Dict[str, npt.NDArray[np.float64]] = {}
        self.v: Dict[str, npt.NDArray[np.float64]] = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g ** 2
            m_hat = self.m[name] / (1 - self.b1 ** self.t)
            v_hat = self.v[name] / (1 - self.b2 ** self.t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: Union[OptimizerKind, str], lr: float) -> _Optimizer:
    kind = OptimizerKind(kind)
    if kind == OptimizerKind.SGD:
        return _SGD(lr)
    return _Adam(lr)


def clip_gradients(grads: Dict[str, npt.NDArray[np.float64]], clip_norm: float) -> float:
    """
    Rescales the gradients in place so that their global norm is at most ``clip_norm``.

    :return: the global norm before clipping.
    """
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if clip_norm > 0 and norm > clip_norm:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def stratified_split(labels: GEMLabelSet, validation_fraction: float, seed: int) -> Tuple[GEMLabelSet, GEMLabelSet]:
    """
    Splits labels into training and validation sets, keeping the class ratio. Each class keeps at least one
    training label; a class with two or more labels contributes at least one validation label when
    ``validation_fraction > 0``.
    """
    rng = make_rng(seed, "validation-split")
    is_val = np.zeros(len(labels), dtype=bool)
    if validation_fraction > 0:
        for cls in (-1, 1):
            members = np.flatnonzero(labels.values == cls)
            if len(members) < 2:
                continue
            n_val = int(np.clip(round(validation_fraction * len(members)), 1, len(members) - 1))
            is_val[rng.permutation(members)[:n_val]] = True
    return labels.subset(~is_val), labels.subset(is_val)


class _Objective(ABC):
    """
    A differentiable model over a fixed graph.
    """

    @abstractmethod
    def forward(self, params: ModelParams) -> Tuple[GEMEmbeddingTrace, npt.NDArray[np.float64]]:
        ...

    @abstractmethod
    def loss(self, params: ModelParams, trace: GEMEmbeddingTrace, labels: GEMLabelSet) -> float:
        ...

    @abstractmethod
    def gradients(self, params: ModelParams, trace: GEMEmbeddingTrace,
                  labels: GEMLabelSet) -> Dict[str, npt.NDArray[np.float64]]:
        """
        Gets the loss gradients keyed like ``params.arrays()``.
        """
        ...


class _GEMObjective(_Objective):
    def __init__(self, graph: GEMHeteroGraph, features: GEMFeatureMatrix, T: int, scaling: NeighbourScaling):
        self.graph = graph
        self.features = features
        self.T = T
        self.scaling = scaling

    def forward(self, params):
        return forward(params, self.graph, self.features, self.T, self.scaling)

    def loss(self, params, trace, labels):
        return loss(params, trace, labels)

    def gradients(self, params, trace, labels):
        return backward(params, trace, self.graph, self.features, labels).arrays()


class _GCNObjective(_Objective):
    def __init__(self, graph: GEMHeteroGraph, features: GEMFeatureMatrix):
        self.graph = graph
        self.features = features
        self.a_norm = normalized_adjacency(graph)

    def forward(self, params):
        return gcn_forward(params, self.graph, self.features, a_norm=self.a_norm)

    def loss(self, params, trace, labels):
        return gcn_loss(params, trace, labels)

    def gradients(self, params, trace, labels):
        return gcn_backward(params, trace, self.graph, labels, a_norm=self.a_norm)


def _decayed(name: str) -> bool:
    return name not in ("u", "alpha")


class GEMTrainer:
    """
    Full-batch trainer for GEM and the GCN baseline.

    Each epoch runs forward, computes the training loss and validation AUC, back propagates, clips the gradients
    and takes an optimizer step. The parameters of the epoch with the best validation AUC are returned.
    """

    def __init__(self, graph: GEMHeteroGraph, features: GEMFeatureMatrix, labels: GEMLabelSet,
                 config: Optional[GEMTrainConfig] = None):
        """
        :param graph: the training graph.
        :param features: its feature matrix.
        :param labels: all observed labels; they are split into training and validation sets.
        :param config: the training configuration.
        """
        self.config = config if config is not None else GEMTrainConfig()
        self.config.validate()
        labels.validate_for(graph)
        self.graph = graph
        self.features = features
        self.labels = labels
        self.on_epoch: GEMCallbackDispatcher[Callable[[GEMEpochRecord], None]] = GEMCallbackDispatcher()
        """Called with the record of every completed epoch."""

        if ModelKind(self.config.model) == ModelKind.GCN:
            self._objective: _Objective = _GCNObjective(graph, features)
        else:
            self._objective = _GEMObjective(graph, features, self.config.depth,
                                            NeighbourScaling(self.config.aggregation))

    def initial_params(self) -> ModelParams:
        c = self.config
        if ModelKind(c.model) == ModelKind.GCN:
            return init_gcn_params(self.features.P, c.embedding_size, c.depth, c.seed)
        return init_params(self.features.P, c.embedding_size, self.graph.n_types, c.mode, c.seed)

    def train(self, params0: Optional[ModelParams] = None) -> GEMTrainReport:
        c = self.config
        train_labels, val_labels = stratified_split(self.labels, c.validation_fraction, c.seed)
        if val_labels.n_positive == 0 or val_labels.n_negative == 0:
            log("The validation split doesn't hold both classes; early stopping uses the training labels.",
                severity=logging.WARN)
            val_labels = train_labels
        log(f"Training {c.model} ({c.mode}, T={c.depth}, k={c.embedding_size}) on {len(train_labels)} labels, "
            f"validating on {len(val_labels)}.", severity=logging.INFO)

        params = (params0 if params0 is not None else self.initial_params()).copy()
        optimizer = make_optimizer(c.optimizer, c.learning_rate)
        records: List[GEMEpochRecord] = []
        best_params, best_epoch, best_auc = params.copy(), 0, -np.inf
        since_best = 0
        stopped_early = False
        for epoch in range(1, c.epochs + 1):
            start = time.perf_counter()
            trace, scores = self._objective.forward(params)
            train_loss = self._objective.loss(params, trace, train_labels)
            arrays = params.arrays()
            if c.weight_decay > 0:
                train_loss += 0.5 * c.weight_decay * sum(float(np.sum(v * v)) for n, v in arrays.items()
                                                         if _decayed(n))
            if not np.isfinite(train_loss):
                log(f"Training diverged at epoch {epoch}.", severity=logging.ERROR)
                raise GEMNumericError(f"The training loss became non-finite at epoch {epoch}.", epoch=epoch)
            val_auc = auc(scores, val_labels)

            grads = self._objective.gradients(params, trace, train_labels)
            if c.weight_decay > 0:
                for name, g in grads.items():
                    if _decayed(name):
                        g += c.weight_decay * arrays[name]
            if TrainStrategy(c.strategy) == TrainStrategy.ALTERNATING:
                grads = {"u": grads["u"]}
            clip_gradients(grads, c.clip_norm)

            if val_auc > best_auc:
                best_params, best_epoch, best_auc = params.copy(), epoch, val_auc
                since_best = 0
            else:
                since_best += 1
            optimizer.step(arrays, grads)

            record = GEMEpochRecord(epoch, train_loss, val_auc, time.perf_counter() - start)
            records.append(record)
            log(f"epoch {epoch}: loss={train_loss:.6f} val_auc={val_auc:.4f}", severity=logging.DEBUG)
            self.on_epoch(record)
            if since_best >= c.early_stop_patience:
                stopped_early = True
                break

        log(f"Best epoch {best_epoch} of {len(records)} with validation AUC {best_auc:.4f}.", severity=logging.INFO)
        return GEMTrainReport(records, best_epoch, float(best_auc), best_params, stopped_early)


def train(graph: GEMHeteroGraph, features: GEMFeatureMatrix, labels: GEMLabelSet,
          params0: Optional[ModelParams] = None, config: Optional[GEMTrainConfig] = None) -> GEMTrainReport:
    """
    Trains a model; see ``GEMTrainer``.

    :param graph: the training graph.
    :param features: its feature matrix.
    :param labels: the observed labels.
    :param params0: the initial parameters, initialised from the config's seed when not given.
    :param config: the training configuration.
    :return: the training report.
    """
    return GEMTrainer(graph, features, labels, config).train(params0)


def predict(params: ModelParams, graph: GEMHeteroGraph, features: GEMFeatureMatrix, T: int = 5,
            scaling: Union[NeighbourScaling, str] = NeighbourScaling.SUM) -> npt.NDArray[np.float64]:
    """
    Scores every account of a graph; the graph may differ from the one the parameters were trained on.

    :param params: GEM or GCN parameters.
    :param graph: the graph to score.
    :param features: its feature matrix; its width must match the parameters.
    :param T: the number of GEM layers (GCN parameters fix their own depth).
    :param scaling: the GEM neighbourhood aggregation.
    :return: the score of every account.
    """
    if isinstance(params, GEMGCNParams):
        return gcn_forward(params, graph, features)[1]
    return forward(params, graph, features, T, scaling)[1]
