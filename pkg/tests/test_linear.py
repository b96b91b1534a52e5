import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expressml.errors import InvalidParams, WidthMismatch
from expressml.linear import (LinearOvrModel, LinearParams, objective, ovr_targets, predict_linear,
                              train_linear_ovr)
from expressml.modelio import dumps_model, loads_model

from conftest import make_matrix


def separable_2d():
    rng = np.random.default_rng(0)
    a = rng.uniform(0.5, 2.0, size=(20, 2))
    # class "neg" sits across the line x0 + x1 = 0 with a margin of at least 1/sqrt(2)
    return make_matrix(np.r_[a, -a], ["pos"] * 20 + ["neg"] * 20)


def test_separable_fixture_trains_to_100_percent():
    m = separable_2d()
    model = train_linear_ovr(m, LinearParams(lam=1e-4, epochs=50))
    np.testing.assert_array_equal(model.predict(m.values), m.y)


def test_single_class_rejected():
    with pytest.raises(InvalidParams):
        train_linear_ovr(make_matrix(np.zeros((3, 2)), ["a"] * 3))


def manual_model(weights, biases, labels=("a", "b")):
    weights = np.asarray(weights, float)
    return LinearOvrModel(weights, np.asarray(biases, float), tuple(labels),
                          tuple(f"g{j}" for j in range(weights.shape[1])), LinearParams())


def test_zero_weights_tie_to_class_zero():
    assert predict_linear(manual_model(np.zeros((2, 2)), [0, 0]), [3.0, -1.0])[0] == "a"


def test_hand_set_margins():
    model = manual_model([[1.0, -2.0], [0.5, 1.0]], [0.25, -1.0])
    label, margins = predict_linear(model, [2.0, 1.0])
    # a: 2 - 2 + 0.25 = 0.25 ; b: 1 + 1 - 1 = 1.0
    np.testing.assert_allclose(margins, [0.25, 1.0])
    assert label == "b"


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3), st.integers(0, 10**6))
def test_argmax_invariant_to_positive_rescaling(scale, seed):
    rng = np.random.default_rng(seed)
    w, b = rng.normal(size=(4, 3)), rng.normal(size=4)
    x = rng.normal(size=(20, 3))
    a = manual_model(w, b, "abcd").predict(x)
    s = manual_model(w * scale, b * scale, "abcd").predict(x)
    np.testing.assert_array_equal(a, s)


def test_deterministic_weights(small_synth):
    _, _, train, _ = small_synth
    p = LinearParams(epochs=3, seed=5)
    a, b = train_linear_ovr(train, p), train_linear_ovr(train, p)
    assert a.weights.tobytes() == b.weights.tobytes() and a.biases.tobytes() == b.biases.tobytes()


def test_weights_finite_and_shaped(small_synth):
    _, _, train, _ = small_synth
    model = train_linear_ovr(train, LinearParams(epochs=2))
    assert model.weights.shape == (train.n_classes, train.n_genes)
    assert np.all(np.isfinite(model.weights)) and np.all(np.isfinite(model.biases))


def test_training_lowers_objective(small_synth):
    _, _, train, _ = small_synth
    lam = 1e-2
    model = train_linear_ovr(train, LinearParams(lam=lam, epochs=30))
    zero = objective(np.zeros_like(model.weights), np.zeros_like(model.biases),
                     train.values, train.y, lam)
    np.testing.assert_allclose(zero, 1.0)
    trained = objective(model.weights, model.biases, train.values, train.y, lam)
    assert np.all(trained < zero)


def test_ovr_targets():
    np.testing.assert_array_equal(ovr_targets([0, 2], 3), [[1, -1, -1], [-1, -1, 1]])


def test_round_trip(small_synth):
    _, _, train, test = small_synth
    model = train_linear_ovr(train, LinearParams(epochs=2))
    back = loads_model(dumps_model(model))
    np.testing.assert_array_equal(back.margins(test.values), model.margins(test.values))


@pytest.mark.parametrize("kwargs", [dict(lam=0.0), dict(lam=-1.0), dict(lam=float("inf")),
                                    dict(epochs=0)])
def test_invalid_params(small_synth, kwargs):
    _, _, train, _ = small_synth
    with pytest.raises(InvalidParams):
        train_linear_ovr(train, LinearParams(**kwargs))


def test_width_mismatch():
    with pytest.raises(WidthMismatch):
        manual_model(np.zeros((2, 2)), [0, 0]).predict([[1.0, 2.0, 3.0]])
