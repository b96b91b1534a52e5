import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import expressml.boosting as boosting
from expressml.analysis import BENCHMARK_CONFIGS, evaluate
from expressml.boosting import (GbmModel, GbmParams, gbm_importance, log_loss, predict_gbm_proba,
                                softmax, train_gbm)
from expressml.cart import Tree
from expressml.errors import InvalidParams, WidthMismatch
from expressml.modelio import dumps_model, loads_model

from conftest import make_matrix


def separated_1d():
    x = np.r_[np.linspace(-3, -1, 15), np.linspace(1, 3, 15)][:, None]
    return make_matrix(x, ["a"] * 15 + ["b"] * 15)


def test_single_class_rejected():
    with pytest.raises(InvalidParams):
        train_gbm(make_matrix(np.arange(4.0)[:, None], ["a"] * 4))


def test_loss_strictly_decreases_on_separated_classes():
    model = train_gbm(separated_1d(), GbmParams(n_rounds=10, shrinkage=0.1))
    trace = model.training_loss_trace
    assert len(trace) == len(model.rounds) == 10
    assert np.all(np.diff(trace) < 0)
    assert all(len(r) == 2 for r in model.rounds)


def test_non_improving_round_halts(monkeypatch):
    real = boosting.log_loss
    calls = {"n": 0}

    def stalling(scores, y):
        calls["n"] += 1
        # the initial loss plus three improving rounds, then a stall
        return real(scores, y) if calls["n"] <= 4 else 10.0

    monkeypatch.setattr(boosting, "log_loss", stalling)
    model = train_gbm(separated_1d(), GbmParams(n_rounds=10))
    assert len(model.rounds) == 3 and len(model.training_loss_trace) == 3
    assert calls["n"] == 5


def test_softmax_uniform():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)


@given(st.lists(st.floats(-500, 500), min_size=1, max_size=6), st.floats(-1000, 1000))
def test_softmax_shift_invariant_and_normalized(scores, shift):
    p = softmax(scores)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(softmax(np.asarray(scores) + shift), p, atol=1e-9)


def test_softmax_stable_for_large_scores():
    p = softmax([1000.0, 1000.0])
    np.testing.assert_allclose(p, [0.5, 0.5])


def test_log_loss_matches_definition():
    s = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]])
    y = np.array([1, 2])
    manual = -np.mean([math.log(math.exp(2) / (math.exp(1) + math.exp(2) + math.exp(0.5))),
                       math.log(math.exp(3) / (1 + math.exp(-1) + math.exp(3)))])
    assert log_loss(s, y) == pytest.approx(manual, abs=1e-12)


def stump(feature, threshold, left_value, right_value):
    return Tree(np.array([feature, -1, -1], np.int32), np.array([threshold, 0, 0]),
                np.array([1, -1, -1], np.int32), np.array([2, -1, -1], np.int32),
                np.array([0.0, left_value, right_value]), np.array([4.0, 2, 2]),
                np.array([0.5, 0, 0]))


def fixture_model(rounds, base=(0.0, 0.0, 0.0), shrinkage=0.1):
    return GbmModel(rounds, np.array(base), ("a", "b", "c"), ("g0", "g1"),
                    GbmParams(shrinkage=shrinkage), np.zeros(2), np.zeros(len(rounds)))


def test_zero_rounds_uniform_priors():
    model = fixture_model([], base=(-1.0, -1.0, -1.0))
    np.testing.assert_allclose(predict_gbm_proba(model, [5.0, -2.0]), [1 / 3] * 3, atol=1e-15)


def test_hand_traced_probabilities():
    rounds = [[stump(0, 0.5, 1.0, -1.0), stump(1, 0.0, 2.0, 0.0), stump(0, 1.5, 0.0, 3.0)],
              [stump(1, 1.0, -2.0, 4.0), stump(0, 0.0, 1.0, 1.0), stump(1, -5.0, 0.0, 0.5)]]
    model = fixture_model(rounds, base=(math.log(0.5), math.log(0.25), math.log(0.25)))
    sample = [1.0, 2.0]
    # class a: base + 0.1*(-1) + 0.1*(4); b: base + 0.1*0 + 0.1*1; c: base + 0.1*0 + 0.1*0.5
    s = [math.log(0.5) - 0.1 + 0.4, math.log(0.25) + 0.1, math.log(0.25) + 0.05]
    z = sum(math.exp(v) for v in s)
    manual = [math.exp(v) / z for v in s]
    np.testing.assert_allclose(predict_gbm_proba(model, sample), manual, atol=1e-12, rtol=0)


def test_width_mismatch():
    with pytest.raises(WidthMismatch):
        fixture_model([]).predict_proba([1.0])


def test_one_round_boundary_is_tree_plus_priors():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [2.0, 0.5], [0.5, 2.0]])
    m = make_matrix(x, ["a", "a", "b", "b", "b", "a"])
    model = train_gbm(m, GbmParams(n_rounds=1, shrinkage=1.0, tree_depth=2))
    assert len(model.rounds) == 1
    trees = model.rounds[0]
    grid = np.array(list(product(np.linspace(-1, 3, 9), repeat=2)))
    for point in grid:
        scores = model.base_scores + np.array([t.value[t.apply(point[None])[0]] for t in trees])
        assert model.predict(point[None])[0] == int(np.argmax(scores))
        np.testing.assert_allclose(model.predict_proba(point[None])[0], softmax(scores), atol=1e-15)


def test_base_scores_are_log_priors():
    m = make_matrix(np.arange(6.0)[:, None], ["a", "a", "a", "a", "b", "b"])
    model = train_gbm(m, GbmParams(n_rounds=0))
    np.testing.assert_allclose(model.base_scores, np.log([4 / 6, 2 / 6]))


def test_importance_single_gene():
    x = np.array([[0.0, 7.0], [0.1, 7.0], [1.0, 7.0], [1.1, 7.0]])
    model = train_gbm(make_matrix(x, ["a", "a", "b", "b"], ["g1", "g2"]), GbmParams(n_rounds=3))
    ranking = gbm_importance(model)
    assert ranking.genes[0] == "g1"
    np.testing.assert_array_equal(ranking.scores, [1.0, 0.0])


def test_workers_and_round_trip(small_synth):
    _, _, train, test = small_synth
    params = GbmParams(n_rounds=8, mtry="sqrt", seed=4)
    a = train_gbm(train, params, workers=1)
    b = train_gbm(train, params, workers=3)
    assert dumps_model(a) == dumps_model(b)
    back = loads_model(dumps_model(a))
    np.testing.assert_array_equal(back.decision_scores(test.values), a.decision_scores(test.values))


def test_subsample_reproducible(small_synth):
    _, _, train, _ = small_synth
    params = GbmParams(n_rounds=5, subsample=0.5, seed=2)
    assert dumps_model(train_gbm(train, params)) == dumps_model(train_gbm(train, params))


@pytest.mark.parametrize("kwargs", [dict(shrinkage=0.0), dict(shrinkage=1.5), dict(n_rounds=-1),
                                    dict(subsample=0.0), dict(mtry=0), dict(mtry="half"),
                                    dict(min_leaf=0)])
def test_invalid_params(small_synth, kwargs):
    _, _, train, _ = small_synth
    with pytest.raises(InvalidParams):
        train_gbm(train, GbmParams(**kwargs))


@pytest.mark.slow
def test_benchmark_accuracy_and_monotone_trace(benchmark_seed1):
    _, planted, train, test = benchmark_seed1
    model = train_gbm(train, BENCHMARK_CONFIGS.gbm)
    assert evaluate(model, test).macro_average >= 0.95
    assert np.all(np.diff(model.training_loss_trace) < 0)
    assert len(set(gbm_importance(model).top(50)) & set(planted)) >= 40
