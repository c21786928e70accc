#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .gem_checkpoint import GEMCheckpoint, save_checkpoint
from .gem_config import config_to_dict, derive_seed, resolve_config
from .gem_container import atomic_write_text
from .gem_errors import GEMConfigError, GEMUsageError
from .gem_eval import GEMMetricsReport, attention_report, evaluate, f1_at, format_attention_report, write_pr_csv
from .gem_graph import GEMHeteroGraph, GEMFeatureMatrix, GEMLabelSet, build_features, build_graph
from .gem_ingest import prune_isolated, window_filter
from .gem_logging import log
from .gem_model import NeighbourScaling
from .gem_subgraph import components, project, prune, theta_grid, tune_theta
from .gem_synth import GEMSynthConfig, GEMSynthDataset, split_weeks
from .gem_trainer import GEMTrainConfig, ModelParams, predict, train

METHODS = ("subgraph", "gcn", "gem", "gem-attention")


@dataclass
class GEMExperimentData:
    """
    One prepared dataset: the graph built from a week of events, with the training labels and the held out test
    labels resolved against it.
    """
    name: str
    graph: GEMHeteroGraph
    features: GEMFeatureMatrix
    train_labels: GEMLabelSet
    test_labels: GEMLabelSet


@dataclass
class GEMMethodResult:
    method: str
    scores: npt.NDArray[np.float64]
    metrics: GEMMetricsReport
    params: Optional[ModelParams] = None
    theta: Optional[float] = None


@dataclass
class GEMBenchConfig:
    seed: int = 0
    n_weeks: int = 4
    repeats: int = 1
    methods: Tuple[str, ...] = METHODS
    prune_fixpoint: bool = False
    theta_grid_size: int = 10
    threshold: float = 0.5

    def validate(self):
        if self.n_weeks < 1 or self.repeats < 1:
            raise GEMConfigError(f"n_weeks and repeats must be at least 1, got {self.n_weeks} and {self.repeats}")
        for m in self.methods:
            if m not in METHODS:
                raise GEMConfigError(f"Unknown method '{m}', expected one of: {', '.join(METHODS)}")
        if self.theta_grid_size < 1:
            raise GEMConfigError(f"theta_grid_size must be at least 1, got {self.theta_grid_size}")


@dataclass
class GEMBenchResult:
    f1: Dict[str, List[float]]
    """Median test F-1 of each method, per week."""
    auc: Dict[str, List[float]]
    """Median test AUC of each method, per week."""
    runs: List[Dict[str, Any]] = field(default_factory=list)
    attention: List[Tuple[str, float]] = field(default_factory=list)


def prepare_week(dataset: GEMSynthDataset, prune_fixpoint: bool = False, name: Optional[str] = None
                 ) -> GEMExperimentData:
    """
    Runs the preprocessing pipeline on a dataset: window filter, isolated account pruning, graph and feature
    construction. Labels of pruned accounts are dropped.
    """
    events = prune_isolated(window_filter(dataset.events, dataset.window), fixpoint=prune_fixpoint)
    graph = build_graph(events, dataset.registry)
    features = build_features(events, graph, dataset.window, dataset.demographics or None, q=dataset.config.q)
    return GEMExperimentData(name or dataset.config.id_prefix.rstrip("-") or "data", graph, features,
                             GEMLabelSet.from_mapping(dataset.train_labels, graph),
                             GEMLabelSet.from_mapping(dataset.test_labels, graph))


def method_train_config(method: str, config: GEMTrainConfig) -> GEMTrainConfig:
    if method == "gcn":
        return dataclasses.replace(config, model="gcn")
    if method == "gem":
        return dataclasses.replace(config, model="gem", mode="mean")
    if method == "gem-attention":
        return dataclasses.replace(config, model="gem", mode="attention")
    raise GEMUsageError(f"'{method}' is not a trainable method.")


def run_method(method: str, data: GEMExperimentData, config: GEMTrainConfig, threshold: float = 0.5,
               theta_grid_size: int = 10) -> GEMMethodResult:
    """
    Fits one method on a prepared dataset's training labels and evaluates it on the test labels.

    :param method: one of ``subgraph``, ``gcn``, ``gem`` or ``gem-attention``.
    :param data: the prepared dataset.
    :param config: the training config of the network methods.
    :param threshold: the F-1 decision threshold.
    :param theta_grid_size: the number of candidate thresholds of the subgraph method.
    :return: the scores and metrics.
    """
    log(f"Running {method} on {data.name}.", severity=logging.INFO)
    if method == "subgraph":
        ag = prune(project(data.graph), data.features, -np.inf)
        theta = tune_theta(ag, data.features, data.train_labels, theta_grid(ag, data.features, theta_grid_size))
        scores = components(prune(ag, data.features, theta)).probabilities()
        return GEMMethodResult(method, scores, evaluate(scores, data.test_labels, threshold), theta=theta)

    method_config = method_train_config(method, config)
    report = train(data.graph, data.features, data.train_labels, config=method_config)
    scores = predict(report.params, data.graph, data.features, method_config.depth,
                     NeighbourScaling(method_config.aggregation))
    return GEMMethodResult(method, scores, evaluate(scores, data.test_labels, threshold), params=report.params)


def _check_range(name: str, values: Sequence[int], low: int, high: int):
    if len(values) == 0 or any(not low <= v <= high for v in values):
        raise GEMUsageError(f"{name} must be a non-empty list of values in [{low}, {high}], got {list(values)}.")


def depth_sweep(experiments: Sequence[GEMExperimentData], depths: Sequence[int],
                config: Optional[GEMTrainConfig] = None, threshold: float = 0.5) -> Dict[int, float]:
    """
    Trains one model per depth with otherwise identical settings and reports the median test F-1 over the
    experiments.

    :param experiments: the prepared datasets.
    :param depths: the depths to try, each in ``[1, 10]``.
    :param config: the shared training config.
    :param threshold: the F-1 decision threshold.
    :return: a table of depth to F-1.
    """
    _check_range("depths", depths, 1, 10)
    config = config if config is not None else GEMTrainConfig()
    table = {}
    for depth in depths:
        f1s = []
        for data in experiments:
            c = dataclasses.replace(config, depth=depth)
            report = train(data.graph, data.features, data.train_labels, config=c)
            scores = predict(report.params, data.graph, data.features, depth, NeighbourScaling(c.aggregation))
            f1s.append(f1_at(scores, data.test_labels, threshold)[0])
        table[depth] = float(np.median(f1s))
        log(f"depth {depth}: F-1 {table[depth]:.4f}", severity=logging.INFO)
    return table


def embedding_sweep(experiments: Sequence[GEMExperimentData], sizes: Sequence[int],
                    config: Optional[GEMTrainConfig] = None, threshold: float = 0.5) -> Dict[int, float]:
    _check_range("sizes", sizes, 1, 1024)
    config = config if config is not None else GEMTrainConfig()
    table = {}
    for k in sizes:
        f1s = []
        for data in experiments:
            c = dataclasses.replace(config, embedding_size=k)
            report = train(data.graph, data.features, data.train_labels, config=c)
            scores = predict(report.params, data.graph, data.features, c.depth, NeighbourScaling(c.aggregation))
            f1s.append(f1_at(scores, data.test_labels, threshold)[0])
        table[k] = float(np.median(f1s))
        log(f"embedding size {k}: F-1 {table[k]:.4f}", severity=logging.INFO)
    return table


def resolve_bench_configs(file_values: Optional[Mapping[str, Any]] = None,
                          overrides: Optional[Mapping[str, Any]] = None
                          ) -> Tuple[GEMBenchConfig, GEMSynthConfig, GEMTrainConfig]:
    """
    Resolves the three configs of a bench run from one flat key-value mapping. Keys are routed to the bench config
    first, then the training config, then the generator config; ``seed`` always belongs to the bench config.
    """
    bench_keys = {f.name for f in dataclasses.fields(GEMBenchConfig)}
    train_keys = {f.name for f in dataclasses.fields(GEMTrainConfig)} - bench_keys
    synth_keys = {f.name for f in dataclasses.fields(GEMSynthConfig)} - bench_keys - train_keys
    routed: Dict[str, Tuple[Dict[str, Any], Dict[str, Any]]] = {"bench": ({}, {}), "train": ({}, {}),
                                                                 "synth": ({}, {})}
    for i, source in enumerate((file_values or {}, overrides or {})):
        for key, value in source.items():
            if key in bench_keys:
                routed["bench"][i][key] = value
            elif key in train_keys:
                routed["train"][i][key] = value
            elif key in synth_keys:
                routed["synth"][i][key] = value
            elif value is not None:
                raise GEMConfigError(f"Unknown bench config key '{key}'.")
    return (resolve_config(GEMBenchConfig, *routed["bench"]), resolve_config(GEMSynthConfig, *routed["synth"]),
            resolve_config(GEMTrainConfig, *routed["train"]))


def _write_table(path: str, table: Mapping[str, Sequence[float]], n_weeks: int):
    lines = ["method," + ",".join(f"week_{w + 1}" for w in range(n_weeks))]
    for method, values in table.items():
        lines.append(method + "," + ",".join(f"{v:.6f}" for v in values))
    atomic_write_text(path, "\n".join(lines) + "\n")


def run_bench(bench: GEMBenchConfig, synth: GEMSynthConfig, train_config: GEMTrainConfig,
              out_dir: Optional[str] = None) -> GEMBenchResult:
    """
    Runs the full comparison: generates ``n_weeks`` synthetic weeks, prepares each one and evaluates every method
    on the held out accounts of each week. With ``repeats > 1`` the whole run is repeated with derived seeds and the
    median metrics are reported.

    When ``out_dir`` is given, writes ``bench_f1.csv``, ``bench_auc.csv``, ``bench.json``, the precision-recall
    curves and checkpoints of the first repeat, and the attention report.
    """
    bench.validate()
    f1s: Dict[str, List[List[float]]] = {m: [[] for _ in range(bench.n_weeks)] for m in bench.methods}
    aucs: Dict[str, List[List[float]]] = {m: [[] for _ in range(bench.n_weeks)] for m in bench.methods}
    runs: List[Dict[str, Any]] = []
    attention: List[Tuple[str, float]] = []
    for r in range(bench.repeats):
        synth_r = dataclasses.replace(synth, seed=derive_seed(bench.seed, f"synth-{r}"))
        train_r = dataclasses.replace(train_config, seed=derive_seed(bench.seed, f"train-{r}"))
        for w, week in enumerate(split_weeks(synth_r, bench.n_weeks)):
            data = prepare_week(week, bench.prune_fixpoint, name=f"week_{w + 1}")
            for method in bench.methods:
                result = run_method(method, data, train_r, bench.threshold, bench.theta_grid_size)
                f1s[method][w].append(result.metrics.f1)
                aucs[method][w].append(result.metrics.auc)
                runs.append({"repeat": r, "week": w + 1, "method": method, "f1": result.metrics.f1,
                             "auc": result.metrics.auc, "theta": result.theta})
                if r == 0 and out_dir is not None:
                    write_pr_csv(os.path.join(out_dir, "pr", f"{method}-week_{w + 1}.csv"), result.metrics.pr_points)
                    if result.params is not None:
                        save_checkpoint(os.path.join(out_dir, "checkpoints", f"{method}-week_{w + 1}.gemc"),
                                        GEMCheckpoint(result.params, data.graph.registry, train_r.depth,
                                                      NeighbourScaling(train_r.aggregation)))
                if r == 0 and method == "gem-attention" and result.params is not None:
                    attention = attention_report(result.params, data.graph.registry)  # type: ignore[arg-type]

    result = GEMBenchResult({m: [float(np.median(v)) for v in f1s[m]] for m in bench.methods},
                            {m: [float(np.median(v)) for v in aucs[m]] for m in bench.methods}, runs, attention)
    if out_dir is not None:
        _write_table(os.path.join(out_dir, "bench_f1.csv"), result.f1, bench.n_weeks)
        _write_table(os.path.join(out_dir, "bench_auc.csv"), result.auc, bench.n_weeks)
        summary = {"bench": config_to_dict(bench), "synth": config_to_dict(synth), "train": config_to_dict(train_config),
                   "f1": result.f1, "auc": result.auc, "runs": runs,
                   "attention": [{"device_type": t, "weight": w} for t, w in attention]}
        atomic_write_text(os.path.join(out_dir, "bench.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if len(attention) > 0:
            atomic_write_text(os.path.join(out_dir, "attention.txt"), format_attention_report(attention) + "\n")
    return result


def format_table(title: str, table: Mapping[str, Sequence[float]]) -> str:
    """
    Renders a method x week metric table.
    """
    n_weeks = max((len(v) for v in table.values()), default=0)
    width = max([len("Method")] + [len(m) for m in table])
    header = f"{'Method':<{width}}  " + "  ".join(f"{'Week ' + str(w + 1):>8}" for w in range(n_weeks))
    lines = [title, header, "-" * len(header)]
    for method, values in table.items():
        lines.append(f"{method:<{width}}  " + "  ".join(f"{v:>8.4f}" for v in values))
    return "\n".join(lines)
