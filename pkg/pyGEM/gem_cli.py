#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Sequence, Type

import numpy as np

from .gem_checkpoint import GEMCheckpoint, load_checkpoint, save_checkpoint
from .gem_config import config_to_dict, read_config_file, resolve_config
from .gem_container import atomic_write_text
from .gem_errors import (GEMError, GEMConfigError, GEMConsistencyError, GEMDimensionError, GEMParseError,
                         GEMSchemaError, GEMUsageError)
from .gem_eval import (evaluate, labels_for_scores, read_scores, top_k_threshold, write_metrics_json, write_pr_csv,
                       write_scores, attention_report, format_attention_report)
from .gem_experiment import format_table, resolve_bench_configs, run_bench
from .gem_graph import (GEMLabelSet, build_features, build_graph, graph_summary, load_graph, read_demographics,
                        read_labels, save_graph)
from .gem_ingest import GEMDeviceTypeRegistry, GEMTimeWindow, prune_isolated, read_events, window_filter
from .gem_logging import log, set_severity
from .gem_model import AggregationMode, GEMParams, NeighbourScaling
from .gem_subgraph import SubgraphMetric, components, project, prune, theta_grid, tune_theta
from .gem_synth import GEMSynthConfig, generate, split_weeks, write_dataset
from .gem_trainer import GEMTrainConfig, GEMTrainer, predict

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

_USAGE_ERRORS = (GEMUsageError, GEMConfigError, GEMSchemaError, GEMParseError, GEMDimensionError,
                 GEMConsistencyError, FileNotFoundError)

RUN_MANIFEST = "run_manifest.json"


def _version() -> str:
    from . import __version__
    return __version__


def _add_config_flags(parser: argparse.ArgumentParser, config_type: Type, skip: Sequence[str] = ()):
    """
    Adds a ``--field-name`` flag for every field of a config dataclass. Values are kept as strings and converted
    when the config is resolved.
    """
    group = parser.add_argument_group(f"{config_type.__name__} overrides")
    for f in dataclasses.fields(config_type):
        if f.name in skip:
            continue
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=str, default=None,
                           metavar="VALUE", help=f"(default: {f.default if f.default is not dataclasses.MISSING else ''})")


def _config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}


def _file_values(path: Optional[str]) -> Dict[str, str]:
    return read_config_file(path) if path is not None else {}


def _write_manifest(out_dir: str, args: argparse.Namespace, argv: Sequence[str], config: Dict[str, Any],
                    inputs: Dict[str, str], outputs: Dict[str, str], start: float):
    manifest = {
        "subcommand": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": config.get("seed"),
        "version": _version(),
        "wall_time": time.perf_counter() - start,
    }
    atomic_write_text(os.path.join(out_dir, RUN_MANIFEST), json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(path: str) -> str:
    return os.path.dirname(os.path.abspath(path))


def cmd_synth(args: argparse.Namespace) -> Dict[str, Any]:
    config = resolve_config(GEMSynthConfig, _file_values(args.config), _config_overrides(args))
    outputs: Dict[str, str] = {}
    if args.weeks is None:
        outputs.update(write_dataset(generate(config), args.out, args.format))
    else:
        for w, week in enumerate(split_weeks(config, args.weeks)):
            paths = write_dataset(week, os.path.join(args.out, f"week_{w + 1}"), args.format)
            outputs.update({f"week_{w + 1}_{role}": path for role, path in paths.items()})
    print(f"Wrote synthetic data to '{args.out}'.")
    return {"config": config_to_dict(config), "outputs": outputs, "out_dir": args.out,
            "inputs": {"config": args.config} if args.config else {}}


def cmd_build(args: argparse.Namespace) -> Dict[str, Any]:
    registry = GEMDeviceTypeRegistry(args.registry.split(",")) if args.registry else GEMDeviceTypeRegistry.default()
    events = read_events(args.events, args.format, registry)
    start = args.window_start
    if start is None:
        start = (min(e.timestamp for e in events) // args.slot_width) * args.slot_width if events else 0
    window = GEMTimeWindow.from_slots(start, args.slots, args.slot_width)
    events = window_filter(events, window)
    if not args.no_prune:
        events = prune_isolated(events, fixpoint=args.prune_fixpoint)
    graph = build_graph(events, registry)
    demographics = read_demographics(args.demographics) if args.demographics else None
    features = build_features(events, graph, window, demographics)
    labels = GEMLabelSet.from_mapping(read_labels(args.labels), graph) if args.labels else None
    save_graph(args.out, graph, features, labels,
               extra={"window": {"start": window.start, "end": window.end, "slot_width": window.slot_width}})

    summary = graph_summary(graph, features, labels)
    print(f"{'Vertices (N)':<24}{summary['vertices']}")
    print(f"{'Accounts':<24}{summary['accounts']}")
    print(f"{'Devices':<24}{summary['devices']}")
    print(f"{'Edges (M)':<24}{summary['edges']}")
    for name, count in summary["edges_per_type"].items():  # type: ignore[attr-defined]
        print(f"{'  ' + name:<24}{count}")
    if labels is not None:
        print(f"{'Labels':<24}{summary['labels']} ({summary['labels_positive']} malicious)")
    inputs = {"events": args.events}
    if args.labels:
        inputs["labels"] = args.labels
    return {"config": {"registry": list(registry.names), "window_start": window.start, "slots": args.slots,
                       "slot_width": args.slot_width, "prune": not args.no_prune,
                       "prune_fixpoint": args.prune_fixpoint},
            "inputs": inputs, "outputs": {"graph": args.out}, "out_dir": _out_dir(args.out)}


def _load_labels(args: argparse.Namespace, graph, stored: Optional[GEMLabelSet]) -> GEMLabelSet:
    if getattr(args, "labels", None):
        return GEMLabelSet.from_mapping(read_labels(args.labels), graph)
    if stored is None:
        raise GEMUsageError("The graph file holds no labels; pass --labels.")
    return stored


def cmd_train(args: argparse.Namespace) -> Dict[str, Any]:
    config = resolve_config(GEMTrainConfig, _file_values(args.config), _config_overrides(args))
    graph, features, stored, _ = load_graph(args.graph)
    labels = _load_labels(args, graph, stored)
    trainer = GEMTrainer(graph, features, labels, config)
    report = trainer.train()
    save_checkpoint(args.out, GEMCheckpoint(report.params, graph.registry, config.depth,
                                            NeighbourScaling(config.aggregation), {"train": config_to_dict(config)}))
    report_path = args.report or os.path.splitext(args.out)[0] + ".report.json"
    atomic_write_text(report_path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"Best epoch {report.best_epoch} of {len(report.records)}: validation AUC {report.best_val_auc:.4f}")
    if isinstance(report.params, GEMParams) and report.params.mode == AggregationMode.ATTENTION:
        print(format_attention_report(attention_report(report.params, graph.registry)))
    inputs = {"graph": args.graph}
    if args.labels:
        inputs["labels"] = args.labels
    return {"config": config_to_dict(config), "inputs": inputs,
            "outputs": {"checkpoint": args.out, "report": report_path}, "out_dir": _out_dir(args.out)}


def cmd_score(args: argparse.Namespace) -> Dict[str, Any]:
    graph, features, _, _ = load_graph(args.graph)
    checkpoint = load_checkpoint(args.checkpoint, graph.registry)
    scores = predict(checkpoint.params, graph, features, checkpoint.T, checkpoint.scaling)
    n = write_scores(args.out, graph.vertex_index.account_ids, scores, top_k=args.top_k)
    print(f"Wrote {n} scores to '{args.out}'.")
    return {"config": {"top_k": args.top_k}, "inputs": {"graph": args.graph, "checkpoint": args.checkpoint},
            "outputs": {"scores": args.out}, "out_dir": _out_dir(args.out)}


def cmd_eval(args: argparse.Namespace) -> Dict[str, Any]:
    ids, scores = read_scores(args.scores)
    labels = labels_for_scores(ids, read_labels(args.labels))
    threshold = args.threshold
    if args.top_k is not None:
        threshold = top_k_threshold(scores, args.top_k)
    report = evaluate(scores, labels, threshold)
    write_metrics_json(args.out, report)
    outputs = {"metrics": args.out}
    if args.pr_out:
        write_pr_csv(args.pr_out, report.pr_points)
        outputs["pr"] = args.pr_out
    print(f"F-1 {report.f1:.4f}  AUC {report.auc:.4f}  (threshold {threshold:.6g}, {len(labels)} labels)")
    return {"config": {"threshold": threshold, "top_k": args.top_k},
            "inputs": {"scores": args.scores, "labels": args.labels}, "outputs": outputs,
            "out_dir": _out_dir(args.out)}


def cmd_baseline(args: argparse.Namespace) -> Dict[str, Any]:
    graph, features, stored, _ = load_graph(args.graph)
    ag = prune(project(graph, args.degree_cap), features, -np.inf)
    if args.theta is not None:
        theta = args.theta
    else:
        labels = _load_labels(args, graph, stored)
        if args.theta_grid:
            candidates = [float(v) for v in args.theta_grid.split(",") if v.strip()]
        else:
            candidates = list(theta_grid(ag, features, args.grid_size))
        theta = tune_theta(ag, features, labels, candidates, SubgraphMetric(args.metric))
    score = components(prune(ag, features, theta))
    write_scores(args.out, graph.vertex_index.account_ids, score.probabilities(),
                 extra={"component_size": [int(s) for s in score.sizes]})
    print(f"theta = {theta:.6g}, {score.n_components} components over {graph.n_accounts} accounts")
    inputs = {"graph": args.graph}
    if args.labels:
        inputs["labels"] = args.labels
    return {"config": {"theta": theta, "metric": args.metric}, "inputs": inputs, "outputs": {"scores": args.out},
            "out_dir": _out_dir(args.out)}


def cmd_bench(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for item in args.set or []:
        if "=" not in item:
            raise GEMConfigError(f"Expected KEY=VALUE, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip().replace("-", "_")] = value.strip()
    overrides.update({"seed": args.seed, "repeats": args.repeats, "n_weeks": args.weeks})
    bench, synth, train_config = resolve_bench_configs(_file_values(args.config), overrides)
    result = run_bench(bench, synth, train_config, args.out)
    print(format_table("F-1", result.f1))
    print()
    print(format_table("AUC", result.auc))
    if len(result.attention) > 0:
        print()
        print(format_attention_report(result.attention))
    config = {"bench": config_to_dict(bench), "synth": config_to_dict(synth), "train": config_to_dict(train_config),
              "seed": bench.seed}
    return {"config": config, "inputs": {"config": args.config} if args.config else {},
            "outputs": {"f1": os.path.join(args.out, "bench_f1.csv"), "auc": os.path.join(args.out, "bench_auc.csv"),
                        "summary": os.path.join(args.out, "bench.json")},
            "out_dir": args.out}


def cmd_replay(args: argparse.Namespace) -> Dict[str, Any]:
    if not os.path.isfile(args.manifest):
        raise FileNotFoundError(f"Couldn't find the run manifest: '{args.manifest}'")
    with open(args.manifest, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    argv = manifest.get("argv")
    if not argv or argv[0] == "replay":
        raise GEMUsageError(f"'{args.manifest}' doesn't describe a replayable command.")
    log(f"Replaying '{' '.join(argv)}' in '{manifest['cwd']}'.", severity=logging.INFO)
    cwd = os.getcwd()
    os.chdir(manifest["cwd"])
    try:
        code = main(argv)
    finally:
        os.chdir(cwd)
    if code != EXIT_OK:
        raise GEMError(f"The replayed command failed with exit code {code}.")
    return {}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pygem", description="Heterogeneous graph embeddings for malicious "
                                                               "account detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub_parsers = parser.add_subparsers(dest="command", required=True)

    synth = sub_parsers.add_parser("synth", help="generate a synthetic labelled event log")
    synth.add_argument("--config", "-c", type=str, help="a key = value config file")
    synth.add_argument("--out", "-o", type=str, required=True, help="the output directory")
    synth.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    synth.add_argument("--weeks", type=int, default=None, help="write this many consecutive weeks")
    _add_config_flags(synth, GEMSynthConfig)
    synth.set_defaults(func=cmd_synth)

    build = sub_parsers.add_parser("build", help="build a graph file from an event log")
    build.add_argument("--events", "-e", type=str, required=True)
    build.add_argument("--labels", "-l", type=str, help="an account_id,label CSV to store with the graph")
    build.add_argument("--demographics", type=str, help="an account_id,d0,d1,... CSV")
    build.add_argument("--format", choices=("csv", "jsonl"), default=None,
                       help="the event format (default: from the file extension)")
    build.add_argument("--registry", type=str, default=None,
                       help="comma separated device types (default: UMID,PhoneNumber,MAC,APDID,IMSI,TID)")
    build.add_argument("--window-start", type=int, default=None,
                       help="window start in seconds (default: the first event's slot)")
    build.add_argument("--slots", type=int, default=168, help="the number of activity slots, p")
    build.add_argument("--slot-width", type=int, default=3600, help="the slot width in seconds")
    build.add_argument("--prune-fixpoint", action="store_true", help="prune isolated accounts until none are left")
    build.add_argument("--no-prune", action="store_true", help="skip isolated account pruning")
    build.add_argument("--out", "-o", type=str, required=True, help="the output graph file")
    build.set_defaults(func=cmd_build)

    train = sub_parsers.add_parser("train", help="train GEM (or the GCN baseline)")
    train.add_argument("--graph", "-g", type=str, required=True)
    train.add_argument("--labels", "-l", type=str, help="override the labels stored in the graph file")
    train.add_argument("--config", "-c", type=str, help="a key = value config file")
    train.add_argument("--out", "-o", type=str, required=True, help="the output checkpoint")
    train.add_argument("--report", type=str, default=None, help="the training report JSON path")
    _add_config_flags(train, GEMTrainConfig)
    train.add_argument("--lr", dest="cfg_learning_rate", type=str, default=None, help="alias of --learning-rate")
    train.set_defaults(func=cmd_train)

    score = sub_parsers.add_parser("score", help="score the accounts of a graph with a checkpoint")
    score.add_argument("--checkpoint", type=str, required=True)
    score.add_argument("--graph", "-g", type=str, required=True)
    score.add_argument("--out", "-o", type=str, required=True)
    score.add_argument("--top-k", type=int, default=None, help="only write the k highest scoring accounts")
    score.set_defaults(func=cmd_score)

    evaluate_parser = sub_parsers.add_parser("eval", help="evaluate a score file against labels")
    evaluate_parser.add_argument("--scores", "-s", type=str, required=True)
    evaluate_parser.add_argument("--labels", "-l", type=str, required=True)
    evaluate_parser.add_argument("--out", "-o", type=str, required=True, help="the metrics JSON path")
    evaluate_parser.add_argument("--pr-out", type=str, default=None, help="the recall,precision CSV path")
    threshold = evaluate_parser.add_mutually_exclusive_group()
    threshold.add_argument("--threshold", type=float, default=0.5)
    threshold.add_argument("--top-k", type=int, default=None, help="flag the k highest scoring accounts")
    evaluate_parser.set_defaults(func=cmd_eval)

    baseline = sub_parsers.add_parser("baseline", help="score accounts with the connected subgraph method")
    baseline.add_argument("--graph", "-g", type=str, required=True)
    baseline.add_argument("--labels", "-l", type=str, help="tuning labels (default: the graph's labels)")
    thetas = baseline.add_mutually_exclusive_group()
    thetas.add_argument("--theta", type=float, default=None, help="a fixed pruning threshold")
    thetas.add_argument("--theta-grid", type=str, default=None, help="comma separated candidate thresholds")
    baseline.add_argument("--grid-size", type=int, default=10, help="the number of quantile candidates")
    baseline.add_argument("--metric", choices=("f1", "auc"), default="auc")
    baseline.add_argument("--degree-cap", type=int, default=10000)
    baseline.add_argument("--out", "-o", type=str, required=True)
    baseline.set_defaults(func=cmd_baseline)

    bench = sub_parsers.add_parser("bench", help="run the full four method comparison on synthetic weeks")
    bench.add_argument("--config", "-c", type=str, help="a key = value config file")
    bench.add_argument("--out", "-o", type=str, required=True)
    bench.add_argument("--seed", type=str, default=None)
    bench.add_argument("--repeats", type=str, default=None)
    bench.add_argument("--weeks", type=str, default=None)
    bench.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any bench, synth or train key")
    bench.set_defaults(func=cmd_bench)

    replay = sub_parsers.add_parser("replay", help="re-run the command recorded in a run manifest")
    replay.add_argument("manifest", type=str)
    replay.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    The ``pygem`` entry point.

    :param argv: the command line arguments (default: ``sys.argv[1:]``).
    :return: the exit code: 0 on success, 1 on runtime failures (including malformed manifests), 2 on usage or
             configuration errors.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    if args.verbose:
        set_severity(logging.DEBUG)
    elif args.quiet:
        set_severity(logging.WARN)
    else:
        set_severity(logging.INFO)

    start = time.perf_counter()
    func: Callable[[argparse.Namespace], Dict[str, Any]] = args.func
    try:
        run = func(args)
        if args.command != "replay":
            _write_manifest(run["out_dir"], args, argv, run["config"], run["inputs"], run["outputs"], start)
    except _USAGE_ERRORS as e:
        log(str(e), severity=logging.ERROR)
        return EXIT_USAGE
    except (GEMError, ArithmeticError, OSError, ValueError) as e:
        log(str(e), severity=logging.ERROR)
        return EXIT_RUNTIME
    return EXIT_OK
