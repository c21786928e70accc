#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import csv
import io
import json
import os.path
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np
import numpy.typing as npt
from scipy.stats import rankdata

from .gem_container import atomic_write_text
from .gem_errors import GEMUsageError, GEMDimensionError, GEMParseError
from .gem_graph import GEMLabelSet

if TYPE_CHECKING:
    from .gem_ingest import GEMDeviceTypeRegistry
    from .gem_model import GEMParams

PRPoint = Tuple[float, float]


@dataclass(frozen=True)
class GEMConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp > 0 else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn > 0 else 0.0


@dataclass(frozen=True)
class GEMMetricsReport:
    """
    The metrics of one scored, labelled account set.
    """
    f1: float
    auc: float
    threshold: float
    counts: GEMConfusionCounts
    pr_points: List[PRPoint] = field(default_factory=list)
    """(recall, precision) pairs; recall is non-decreasing."""

    def to_dict(self) -> Dict[str, object]:
        d = asdict(self)
        d["precision"] = self.counts.precision
        d["recall"] = self.counts.recall
        d["pr_points"] = [list(p) for p in self.pr_points]
        return d


def _labelled(scores: npt.ArrayLike, labels: GEMLabelSet) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.int64]]:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise GEMDimensionError(f"Expected a 1D score vector, got shape {scores.shape}.")
    if len(labels) > 0 and labels.indices.max() >= len(scores):
        raise GEMDimensionError(f"Label index {labels.indices.max()} is out of range for {len(scores)} scores.")
    if labels.n_positive == 0 or labels.n_negative == 0:
        raise GEMUsageError(f"Metrics need at least one positive and one negative label, got "
                            f"{labels.n_positive} positive and {labels.n_negative} negative.")
    return scores[labels.indices], labels.values


def f1_at(scores: npt.ArrayLike, labels: GEMLabelSet, threshold: float = 0.5) -> Tuple[float, GEMConfusionCounts]:
    """
    Computes the F-1 score when accounts scoring at least ``threshold`` are predicted malicious.

    :param scores: the score of every account, indexed by account index.
    :param labels: the labels to evaluate against.
    :param threshold: the decision threshold.
    :return: (f1, confusion counts); F-1 is 0 when precision and recall are both 0.
    """
    s, y = _labelled(scores, labels)
    predicted = s >= threshold
    positive = y == 1
    counts = GEMConfusionCounts(tp=int(np.sum(predicted & positive)), fp=int(np.sum(predicted & ~positive)),
                                fn=int(np.sum(~predicted & positive)), tn=int(np.sum(~predicted & ~positive)))
    p, r = counts.precision, counts.recall
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return f1, counts


def auc(scores: npt.ArrayLike, labels: GEMLabelSet) -> float:
    """
    Computes the area under the ROC curve with the Mann-Whitney rank statistic, tied scores get their average rank.
    """
    s, y = _labelled(scores, labels)
    ranks = rankdata(s, method="average")
    positive = y == 1
    n_pos = int(np.sum(positive))
    n_neg = len(y) - n_pos
    return float((np.sum(ranks[positive]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_curve(scores: npt.ArrayLike, labels: GEMLabelSet) -> List[PRPoint]:
    """
    Sweeps the decision threshold over every distinct score in descending order. Accounts with equal scores flip
    to positive together.

    :return: one (recall, precision) pair per distinct score.
    """
    s, y = _labelled(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, positive = s[order], (y[order] == 1)
    tp = np.cumsum(positive)
    seen = np.arange(1, len(s) + 1)
    # Last index of each run of equal scores.
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    n_pos = tp[-1]
    return [(float(tp[i] / n_pos), float(tp[i] / seen[i])) for i in ends]


def evaluate(scores: npt.ArrayLike, labels: GEMLabelSet, threshold: float = 0.5) -> GEMMetricsReport:
    f1, counts = f1_at(scores, labels, threshold)
    return GEMMetricsReport(f1=f1, auc=auc(scores, labels), threshold=threshold, counts=counts,
                            pr_points=pr_curve(scores, labels))


def top_k_threshold(scores: npt.ArrayLike, k: int) -> float:
    """
    Gets the threshold which flags the ``k`` highest scoring accounts (more on ties). When ``k`` exceeds the number
    of scores every account is flagged.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if k < 1:
        raise GEMUsageError(f"top-k needs k >= 1, got {k}.")
    if len(scores) == 0:
        return 0.0
    k = min(k, len(scores))
    return float(np.sort(scores)[::-1][k - 1])


def attention_report(params: "GEMParams", registry: "GEMDeviceTypeRegistry") -> List[Tuple[str, float]]:
    """
    Gets the softmax attention weight of each device type, sorted by descending weight.

    :param params: attention mode parameters.
    :param registry: the device type registry the parameters were trained with.
    :return: (device type, weight) rows.
    """
    from .gem_model import AggregationMode, attention_weights

    if params.mode != AggregationMode.ATTENTION:
        raise GEMUsageError("The attention report needs attention mode parameters.")
    if len(registry) != len(params.alpha):
        raise GEMDimensionError(f"The parameters have {len(params.alpha)} attention logits, the registry has "
                                f"{len(registry)} device types.")
    weights = attention_weights(params.alpha)
    rows = [(name, float(w)) for name, w in zip(registry.names, weights)]
    return sorted(rows, key=lambda r: (-r[1], registry.index(r[0])))


def format_attention_report(rows: Sequence[Tuple[str, float]]) -> str:
    width = max([len("Device type")] + [len(name) for name, _ in rows])
    lines = [f"{'Device type':<{width}}  Attention coefficient", f"{'-' * width}  {'-' * 21}"]
    lines += [f"{name:<{width}}  {weight:.4f}" for name, weight in rows]
    return "\n".join(lines)


def write_pr_csv(path: str, points: Sequence[PRPoint]) -> None:
    """
    Writes a ``recall,precision`` CSV. The first row is the ``(0, 1)`` endpoint.
    """
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("recall", "precision"))
    writer.writerow((repr(0.0), repr(1.0)))
    for recall, precision in points:
        writer.writerow((repr(float(recall)), repr(float(precision))))
    atomic_write_text(path, buf.getvalue())


def write_metrics_json(path: str, report: GEMMetricsReport) -> None:
    atomic_write_text(path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def write_scores(path: str, account_ids: Sequence[str], scores: npt.ArrayLike,
                 extra: Optional[Dict[str, Sequence[object]]] = None, top_k: Optional[int] = None) -> int:
    """
    Writes an ``account_id,score[,extra columns]`` CSV sorted by descending score, ties broken by account id.

    :param path: the output path.
    :param account_ids: the account ids.
    :param scores: the score of each account.
    :param extra: optional additional columns, in order.
    :param top_k: optionally, only write the ``top_k`` highest scoring accounts.
    :return: the number of rows written.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(account_ids) != len(scores):
        raise GEMDimensionError(f"Got {len(account_ids)} account ids but {len(scores)} scores.")
    extra = extra or {}
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], account_ids[i]))
    if top_k is not None:
        if top_k < 1:
            raise GEMUsageError(f"top-k needs k >= 1, got {top_k}.")
        order = order[:top_k]
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["account_id", "score"] + list(extra))
    for i in order:
        writer.writerow([account_ids[i], repr(float(scores[i]))] + [col[i] for col in extra.values()])
    atomic_write_text(path, buf.getvalue())
    return len(order)


def read_scores(path: str) -> Tuple[List[str], npt.NDArray[np.float64]]:
    """
    Reads a CSV with at least the ``account_id`` and ``score`` columns.

    :return: (account ids, scores) in file order.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Couldn't find the score file: '{path}'")
    ids: List[str] = []
    values: List[float] = []
    with open(path, "r", encoding="utf-8-sig", newline="") as f:
        reader = csv.reader(f)
        header = [h.strip() for h in next(reader, [])]
        if "account_id" not in header or "score" not in header:
            raise GEMParseError("Expected the columns 'account_id' and 'score'", line=1, source=path)
        id_col, score_col = header.index("account_id"), header.index("score")
        for row in reader:
            if len(row) == 0:
                continue
            if len(row) != len(header):
                raise GEMParseError(f"Expected {len(header)} fields, got {len(row)}.", line=reader.line_num,
                                    source=path)
            try:
                values.append(float(row[score_col]))
            except ValueError:
                raise GEMParseError(f"Score '{row[score_col]}' is not a number.", line=reader.line_num, source=path)
            ids.append(row[id_col])
    return ids, np.asarray(values, dtype=np.float64)


def labels_for_scores(account_ids: Sequence[str], labels: Mapping[str, int]) -> GEMLabelSet:
    """
    Resolves an ``account_id -> label`` mapping against the order of a score file; labelled accounts without a
    score are dropped.
    """
    lookup = {a: i for i, a in enumerate(account_ids)}
    pairs = sorted((lookup[a], int(y)) for a, y in labels.items() if a in lookup)
    return GEMLabelSet.from_arrays([i for i, _ in pairs], [y for _, y in pairs])
