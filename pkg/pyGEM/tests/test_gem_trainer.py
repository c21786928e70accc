#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import numpy as np
import pytest

from ..gem_checkpoint import GEMCheckpoint, save_checkpoint, load_checkpoint
from ..gem_config import resolve_config
from ..gem_eval import auc
from ..gem_experiment import prepare_week
from ..gem_errors import GEMConfigError, GEMConsistencyError, GEMDimensionError, GEMNumericError
from ..gem_gcn import init_gcn_params
from ..gem_graph import GEMLabelSet
from ..gem_ingest import GEMDeviceTypeRegistry
from ..gem_model import GEMParams, NeighbourScaling, init_params
from ..gem_synth import GEMSynthConfig, split_weeks
from ..gem_trainer import (GEMTrainConfig, GEMTrainer, make_optimizer, clip_gradients, stratified_split, train,
                           predict)


@pytest.mark.parametrize("overrides", [{"epochs": 0}, {"learning_rate": 0.0}, {"learning_rate": -1.0},
                                       {"validation_fraction": 1.0}, {"optimizer": "rmsprop"}, {"mode": "max"},
                                       {"depth": 0}, {"clip_norm": -1.0}])
def test_invalid_configs(overrides):
    with pytest.raises(GEMConfigError):
        resolve_config(GEMTrainConfig, overrides=overrides)


def test_zero_learning_rate_leaves_params_unchanged():
    for kind in ("sgd", "adam"):
        params = {"W": np.ones((2, 2))}
        make_optimizer(kind, 0.0).step(params, {"W": np.full((2, 2), 3.0)})
        np.testing.assert_array_equal(params["W"], np.ones((2, 2)))


def test_optimizer_steps_against_the_gradient():
    grads = {"W": np.array([2.0, -0.5, 0.0])}
    params = {"W": np.zeros(3)}
    make_optimizer("sgd", 0.1).step(params, grads)
    np.testing.assert_allclose(params["W"], [-0.2, 0.05, 0.0])
    params = {"W": np.zeros(3)}
    make_optimizer("adam", 0.1).step(params, grads)
    # The first Adam step has a magnitude of about lr.
    np.testing.assert_allclose(params["W"], [-0.1, 0.1, 0.0], atol=1e-6)


def test_optimizer_only_touches_given_gradients():
    params = {"W": np.ones(2), "u": np.ones(2)}
    make_optimizer("adam", 0.1).step(params, {"u": np.ones(2)})
    np.testing.assert_array_equal(params["W"], np.ones(2))
    assert np.all(params["u"] < 1)


def test_clip_gradients():
    grads = {"a": np.array([6.0]), "b": np.array([8.0])}
    assert clip_gradients(grads, 5.0) == pytest.approx(10.0)
    np.testing.assert_allclose([grads["a"][0], grads["b"][0]], [3.0, 4.0])
    grads = {"a": np.array([6.0])}
    clip_gradients(grads, 0.0)
    assert grads["a"][0] == 6.0


def test_stratified_split():
    labels = GEMLabelSet.from_arrays(range(30), [1] * 10 + [-1] * 20)
    tr, val = stratified_split(labels, 0.2, seed=0)
    assert (val.n_positive, val.n_negative) == (2, 4)
    assert (tr.n_positive, tr.n_negative) == (8, 16)
    assert set(tr.indices.tolist()) | set(val.indices.tolist()) == set(range(30))
    assert not set(tr.indices.tolist()) & set(val.indices.tolist())
    tr2, val2 = stratified_split(labels, 0.2, seed=0)
    np.testing.assert_array_equal(val.indices, val2.indices)
    assert len(stratified_split(labels, 0.0, seed=0)[1]) == 0


def test_learns_separable_structure(separable_gang):
    graph, features, labels = separable_gang
    config = GEMTrainConfig(epochs=60, learning_rate=0.05, depth=3, embedding_size=16, seed=1)
    report = train(graph, features, labels, config=config)
    assert report.best_val_auc == 1.0
    scores = predict(report.params, graph, features, T=3)
    malicious = labels.indices[labels.values == 1]
    normal = labels.indices[labels.values == -1]
    assert scores[malicious].min() > scores[normal].max()


def test_training_is_deterministic(random_hetero):
    graph, features, labels = random_hetero(5)
    config = GEMTrainConfig(epochs=15, depth=2, embedding_size=4, mode="attention", early_stop_patience=100)
    a = train(graph, features, labels, config=config)
    b = train(graph, features, labels, config=config)
    assert a.to_dict(include_times=False) == b.to_dict(include_times=False)
    for name, value in a.params.arrays().items():
        np.testing.assert_array_equal(value, b.params.arrays()[name])


def test_epoch_callbacks_and_early_stopping(random_hetero):
    graph, features, labels = random_hetero(2)
    trainer = GEMTrainer(graph, features, labels, GEMTrainConfig(epochs=50, depth=2, embedding_size=4,
                                                                 early_stop_patience=3, learning_rate=1e-9))
    seen = []
    trainer.on_epoch.register_callback(seen.append)
    report = trainer.train()
    assert [r.epoch for r in seen] == [r.epoch for r in report.records]
    # A vanishing learning rate can't improve the validation AUC after the first epoch.
    assert report.stopped_early
    assert len(report.records) == 4
    assert report.best_epoch == 1


def test_alternating_strategy_only_updates_the_head(random_hetero):
    graph, features, labels = random_hetero(3)
    config = GEMTrainConfig(epochs=10, depth=2, embedding_size=4, strategy="alternating", early_stop_patience=100)
    trainer = GEMTrainer(graph, features, labels, config)
    params0 = trainer.initial_params()
    report = trainer.train(params0)
    np.testing.assert_array_equal(report.params.W, params0.W)
    np.testing.assert_array_equal(report.params.V, params0.V)


def test_gcn_training_runs(random_hetero):
    graph, features, labels = random_hetero(4)
    report = train(graph, features, labels, config=GEMTrainConfig(model="gcn", epochs=5, depth=2, embedding_size=4))
    assert len(report.records) == 5
    assert predict(report.params, graph, features).shape == (graph.n_accounts,)


def test_divergence_is_reported(random_hetero):
    graph, features, labels = random_hetero(0)
    params = GEMParams(np.full((features.P, 2), 1e308), np.zeros((2, 2, 2)), np.zeros(2), np.zeros(2))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(GEMNumericError):
            train(graph, features, labels, params, GEMTrainConfig(epochs=3, depth=2, embedding_size=2))


def test_checkpoint_round_trip(tmp_path, random_hetero):
    graph, features, _ = random_hetero(1)
    params = init_params(features.P, 4, 2, "attention", seed=5)
    params.alpha[:] = [0.3, -0.3]
    path = str(tmp_path / "model.gemc")
    save_checkpoint(path, GEMCheckpoint(params, graph.registry, 3, NeighbourScaling.DEGREE_SCALED))
    first = open(path, "rb").read()
    loaded = load_checkpoint(path, graph.registry)
    assert loaded.kind == "gem"
    assert loaded.T == 3 and loaded.scaling == NeighbourScaling.DEGREE_SCALED
    np.testing.assert_array_equal(predict(loaded.params, graph, features, 3, loaded.scaling),
                                  predict(params, graph, features, 3, NeighbourScaling.DEGREE_SCALED))
    save_checkpoint(path, loaded)
    assert open(path, "rb").read() == first
    with pytest.raises(GEMConsistencyError):
        load_checkpoint(path, GEMDeviceTypeRegistry(["MAC", "UMID"]))


def test_gcn_checkpoint_round_trip(tmp_path, random_hetero):
    graph, features, _ = random_hetero(1)
    params = init_gcn_params(features.P, 4, 2, seed=1)
    path = str(tmp_path / "gcn.gemc")
    save_checkpoint(path, GEMCheckpoint(params, graph.registry, 2))
    loaded = load_checkpoint(path)
    assert loaded.kind == "gcn"
    np.testing.assert_array_equal(predict(loaded.params, graph, features), predict(params, graph, features))


def test_predict_checks_feature_width(random_hetero):
    graph, features, _ = random_hetero(1)
    with pytest.raises(GEMDimensionError):
        predict(init_params(features.P + 2, 4, 2), graph, features)


@pytest.mark.slow
def test_week_one_model_scores_week_two():
    week_1, week_2 = split_weeks(GEMSynthConfig(seed=4), 2)
    train_data, score_data = prepare_week(week_1), prepare_week(week_2)
    report = train(train_data.graph, train_data.features, train_data.train_labels, config=GEMTrainConfig(seed=4))
    scores = predict(report.params, score_data.graph, score_data.features)
    assert auc(scores, GEMLabelSet.from_mapping(week_2.labels, score_data.graph)) > 0.5
