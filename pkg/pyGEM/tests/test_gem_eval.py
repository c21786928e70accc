#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import numpy as np
import pytest

from ..gem_errors import GEMUsageError, GEMDimensionError
from ..gem_eval import (f1_at, auc, pr_curve, evaluate, top_k_threshold, attention_report, format_attention_report,
                        write_pr_csv, write_scores, read_scores, labels_for_scores, write_metrics_json)
from ..gem_graph import GEMLabelSet
from ..gem_ingest import GEMDeviceTypeRegistry
from ..gem_model import init_params


def _labels(values):
    return GEMLabelSet.from_arrays(range(len(values)), values)


def test_f1_examples():
    f1, counts = f1_at([0.9, 0.4, 0.6, 0.2], _labels([1, 1, -1, -1]))
    assert (counts.tp, counts.fp, counts.fn, counts.tn) == (1, 1, 1, 1)
    assert f1 == pytest.approx(0.5)
    assert f1_at([0.9, 0.8, 0.1], _labels([1, 1, -1]))[0] == 1.0
    assert f1_at([0.1, 0.1, 0.1], _labels([1, 1, -1]))[0] == 0.0
    # The threshold is inclusive.
    assert f1_at([0.5, 0.4], _labels([1, -1]))[0] == 1.0


def test_only_labelled_accounts_count():
    labels = GEMLabelSet.from_arrays([1, 3], [1, -1])
    f1, counts = f1_at([0.9, 0.8, 0.9, 0.1], labels)
    assert counts.total == 2
    assert f1 == 1.0


def test_metrics_need_both_classes():
    with pytest.raises(GEMUsageError):
        auc([0.1, 0.2], _labels([1, 1]))
    with pytest.raises(GEMUsageError):
        f1_at([0.1, 0.2], _labels([-1, -1]))
    with pytest.raises(GEMDimensionError):
        auc([0.1], _labels([1, -1]))


def test_auc_examples():
    assert auc([0.9, 0.1], _labels([1, -1])) == 1.0
    assert auc([0.1, 0.9], _labels([1, -1])) == 0.0
    assert auc([0.5, 0.5], _labels([1, -1])) == 0.5
    assert auc([0.8, 0.4, 0.6, 0.2], _labels([1, 1, -1, -1])) == pytest.approx(0.75)


def _pairwise_auc(scores, values):
    pos = scores[values == 1]
    neg = scores[values == -1]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_matches_pair_counting():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        values = rng.choice([-1, 1], size=n)
        values[:2] = [1, -1]
        # Coarse scores so that ties occur.
        scores = rng.integers(0, 6, size=n) / 5.0
        assert auc(scores, _labels(values)) == pytest.approx(_pairwise_auc(scores, values))


def test_auc_is_invariant_to_monotone_transforms():
    rng = np.random.default_rng(2)
    scores = rng.random(50)
    labels = _labels(np.where(rng.random(50) < 0.3, 1, -1))
    assert auc(np.exp(3 * scores) - 7, labels) == pytest.approx(auc(scores, labels))


def test_pr_curve_examples():
    points = pr_curve([0.9, 0.8, 0.7, 0.6, 0.5], _labels([1, -1, 1, -1, -1]))
    np.testing.assert_allclose(points, [(0.5, 1.0), (0.5, 0.5), (1.0, 2 / 3), (1.0, 0.5), (1.0, 0.4)])
    assert pr_curve([0.5, 0.5], _labels([1, -1])) == [(1.0, 0.5)]


def test_pr_curve_recall_is_monotone():
    rng = np.random.default_rng(4)
    scores = rng.integers(0, 10, size=60) / 10.0
    values = np.where(rng.random(60) < 0.4, 1, -1)
    values[:2] = [1, -1]
    recalls = [r for r, _ in pr_curve(scores, _labels(values))]
    assert np.all(np.diff(recalls) >= 0)
    assert recalls[-1] == 1.0
    assert len(recalls) == len(np.unique(scores))


def test_pr_point_at_threshold_matches_f1():
    scores = np.array([0.9, 0.7, 0.55, 0.5, 0.3, 0.1])
    labels = _labels([1, -1, 1, 1, -1, -1])
    _, counts = f1_at(scores, labels, 0.5)
    points = pr_curve(scores, labels)
    assert points[3] == pytest.approx((counts.recall, counts.precision))


def test_evaluate_report(tmp_path):
    report = evaluate([0.9, 0.2], _labels([1, -1]))
    assert report.f1 == 1.0 and report.auc == 1.0
    d = report.to_dict()
    assert d["precision"] == 1.0 and d["recall"] == 1.0
    write_metrics_json(str(tmp_path / "m.json"), report)
    assert (tmp_path / "m.json").read_text(encoding="utf-8").startswith("{")


def test_top_k_threshold():
    assert top_k_threshold([0.1, 0.9, 0.5], 2) == 0.5
    assert top_k_threshold([0.1, 0.9, 0.5], 10) == 0.1
    with pytest.raises(GEMUsageError):
        top_k_threshold([0.1], 0)


def test_attention_report():
    registry = GEMDeviceTypeRegistry(["UMID", "MAC"])
    params = init_params(4, 2, 2, "attention")
    params.alpha[:] = [0.0, np.log(3)]
    rows = attention_report(params, registry)
    assert [name for name, _ in rows] == ["MAC", "UMID"]
    np.testing.assert_allclose([w for _, w in rows], [0.75, 0.25])
    text = format_attention_report(rows)
    assert "MAC" in text and "0.7500" in text
    with pytest.raises(GEMUsageError):
        attention_report(init_params(4, 2, 2, "mean"), registry)


def test_pr_csv(tmp_path):
    path = str(tmp_path / "pr.csv")
    write_pr_csv(path, [(0.5, 1.0), (1.0, 0.5)])
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines == ["recall,precision", "0.0,1.0", "0.5,1.0", "1.0,0.5"]


def test_score_files(tmp_path):
    path = str(tmp_path / "scores.csv")
    assert write_scores(path, ["b", "a", "c"], [0.5, 0.5, 0.9], extra={"size": [1, 2, 3]}) == 3
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines == ["account_id,score,size", "c,0.9,3", "a,0.5,2", "b,0.5,1"]
    ids, scores = read_scores(path)
    assert ids == ["c", "a", "b"]
    np.testing.assert_array_equal(scores, [0.9, 0.5, 0.5])
    assert write_scores(path, ["b", "a", "c"], [0.5, 0.5, 0.9], top_k=1) == 1
    assert read_scores(path)[0] == ["c"]
    with pytest.raises(GEMDimensionError):
        write_scores(path, ["a"], [0.1, 0.2])


def test_labels_for_scores():
    labels = labels_for_scores(["x", "y", "z"], {"z": 1, "x": -1, "w": 1})
    np.testing.assert_array_equal(labels.indices, [0, 2])
    np.testing.assert_array_equal(labels.values, [-1, 1])
