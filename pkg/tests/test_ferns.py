import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expressml.errors import InvalidParams, WidthMismatch
from expressml.ferns import (Fern, FernsModel, FernsParams, fern_bucket, predict_ferns,
                             train_ferns)
from expressml.modelio import dumps_model, loads_model

from conftest import make_matrix


def test_bucket_binary_encoding():
    fern = Fern(np.array([0, 1, 2]), np.array([0.0, 0.0, 0.0]), np.zeros((2, 8)))
    # outcomes (true, false, true) -> bits 0 and 2
    assert fern_bucket(fern, [1.0, -1.0, 1.0]) == 0b101 == 5


def test_all_false_is_bucket_zero():
    fern = Fern(np.array([0, 1, 2]), np.array([5.0, 5.0, 5.0]), np.zeros((2, 8)))
    assert fern_bucket(fern, [1.0, 2.0, 5.0]) == 0


def test_hand_built_fern():
    fern = Fern(np.array([3, 0, 3, 1]), np.array([0.5, -1.0, 2.0, 0.0]), np.zeros((2, 16)))
    sample = [0.0, -0.5, 9.0, 1.0]
    # x3=1.0>0.5 yes (bit0); x0=0.0>-1 yes (bit1); x3=1.0>2 no; x1=-0.5>0 no
    assert fern_bucket(fern, sample) == 0b0011


def test_bucket_width_check():
    fern = Fern(np.array([4]), np.array([0.0]), np.zeros((2, 2)))
    with pytest.raises(WidthMismatch):
        fern_bucket(fern, [0.0, 1.0])


def test_single_fern_separates_straddling_classes():
    x = np.array([[-1.0], [-1.0], [-1.0], [1.0], [1.0], [1.0]])
    m = make_matrix(x, ["a"] * 3 + ["b"] * 3)
    model = train_ferns(m, FernsParams(n_ferns=1, depth=1, seed=3))
    # thresholds are drawn inside [-1, 1) so both buckets are occupied by one class each
    np.testing.assert_array_equal(model.predict(x), m.y)
    assert {predict_ferns(model, row)[0] for row in x[:3]} == {"a"}


def test_same_seed_same_model(small_synth):
    _, _, train, _ = small_synth
    p = FernsParams(n_ferns=30, depth=4, seed=8)
    assert dumps_model(train_ferns(train, p)) == dumps_model(train_ferns(train, p))
    assert dumps_model(train_ferns(train, p)) != dumps_model(train_ferns(train, FernsParams(30, 4, 9)))


def test_fern_tables_shape_and_finite(small_synth):
    _, _, train, _ = small_synth
    model = train_ferns(train, FernsParams(n_ferns=5, depth=3))
    for fern in model.ferns:
        assert fern.class_log_counts.shape == (train.n_classes, 8)
        assert np.all(np.isfinite(fern.class_log_counts))
        assert fern.depth == 3


def bayes_oracle(x_train, y_train, n_classes, features, thresholds, query):
    """Exhaustive single-fern Bayes: count training rows per (class, bucket)."""
    depth = len(features)
    n_buckets = 2 ** depth

    def bucket(row):
        return sum(1 << i for i in range(depth) if row[features[i]] > thresholds[i])

    counts = [[0] * n_buckets for _ in range(n_classes)]
    for row, c in zip(x_train, y_train):
        counts[c][bucket(row)] += 1
    n = len(y_train)
    b = bucket(query)
    scores = []
    for c in range(n_classes):
        n_c = sum(counts[c])
        prior = math.log(max(n_c, 0.5) / n)
        scores.append(prior + math.log(counts[c][b] + 1) - math.log(n_c + n_buckets))
    return scores


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 40), st.integers(1, 6), st.integers(1, 5), st.integers(2, 4),
       st.integers(0, 2**32 - 1))
def test_single_fern_matches_exhaustive_bayes(n, m, depth, n_classes, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(-4, 5, size=(n, m)).astype(np.float32) / 2
    y = np.r_[np.arange(n_classes), rng.integers(0, n_classes, n - n_classes)]
    labels = [f"c{c}" for c in y]
    model = train_ferns(make_matrix(x, labels), FernsParams(n_ferns=1, depth=depth, seed=seed))
    fern = model.ferns[0]
    queries = rng.integers(-5, 6, size=(10, m)).astype(np.float32) / 2
    got = model.log_posterior(queries)
    for q, row in zip(queries, got):
        want = bayes_oracle(x, y, n_classes, fern.features, fern.thresholds.astype(np.float32), q)
        np.testing.assert_allclose(row, want, atol=1e-12, rtol=0)
        assert int(np.argmax(row)) == int(np.argmax(want))


def uniform_model(n_ferns=3, depth=2, n_classes=3):
    tables = np.full((n_ferns, 2 ** depth, n_classes), math.log(0.25))
    return FernsModel(np.zeros((n_ferns, depth), np.int64), np.zeros((n_ferns, depth)), tables,
                      np.full(n_classes, math.log(1 / n_classes)), ("a", "b", "c"), ("g",),
                      FernsParams(n_ferns, depth))


def test_uniform_tables_tie_to_class_zero():
    assert predict_ferns(uniform_model(), [0.3])[0] == "a"


def test_permuting_ferns_keeps_predictions(small_synth):
    _, _, train, test = small_synth
    model = train_ferns(train, FernsParams(n_ferns=40, depth=3, seed=1))
    perm = np.random.default_rng(0).permutation(40)
    shuffled = FernsModel(model.features[perm], model.thresholds[perm], model.tables[perm],
                          model.log_prior, model.classes, model.gene_names, model.params)
    np.testing.assert_allclose(shuffled.log_posterior(test.values), model.log_posterior(test.values),
                               rtol=1e-12)
    np.testing.assert_array_equal(shuffled.predict(test.values), model.predict(test.values))


def test_round_trip(small_synth):
    _, _, train, test = small_synth
    model = train_ferns(train, FernsParams(n_ferns=20, depth=4))
    back = loads_model(dumps_model(model))
    np.testing.assert_array_equal(back.log_posterior(test.values), model.log_posterior(test.values))


@pytest.mark.parametrize("kwargs", [dict(n_ferns=0), dict(depth=0), dict(depth=21), dict(seed=-3)])
def test_invalid_params(small_synth, kwargs):
    _, _, train, _ = small_synth
    with pytest.raises(InvalidParams):
        train_ferns(train, FernsParams(**kwargs))


def test_width_mismatch(small_synth):
    _, _, train, _ = small_synth
    model = train_ferns(train, FernsParams(n_ferns=2, depth=2))
    with pytest.raises(WidthMismatch):
        model.predict(np.zeros((1, 3)))


def best_time(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


@pytest.mark.slow
def test_training_time_linear_in_fern_count(benchmark_seed1):
    _, _, train, _ = benchmark_seed1
    train_ferns(train, FernsParams(n_ferns=64, depth=8))  # warm caches
    t1 = best_time(lambda: train_ferns(train, FernsParams(n_ferns=2000, depth=8)))
    t2 = best_time(lambda: train_ferns(train, FernsParams(n_ferns=4000, depth=8)))
    assert 1.6 <= t2 / t1 <= 2.6
