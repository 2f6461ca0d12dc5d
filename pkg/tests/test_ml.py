from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsubset import ml


def test_relu():
    np.testing.assert_array_equal(ml.relu(np.array([-2.0, 0.0, 3.0])), [0.0, 0.0, 3.0])


def test_softmax_ce_uniform_logits():
    loss, grad = ml.softmax_cross_entropy(np.array([0.0, 0.0]), 1)
    assert loss == pytest.approx(math.log(2))
    np.testing.assert_allclose(grad, [0.5, -0.5])


def test_softmax_ce_is_stable_for_large_logits():
    loss, grad = ml.softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))
    loss, _ = ml.softmax_cross_entropy(np.array([1000.0, 0.0]), 1)
    assert loss == pytest.approx(1000.0)


def test_squared_error_scalar():
    loss, grad = ml.squared_error(3.0, 1.0)
    assert (loss, float(grad)) == (4.0, 4.0)


def test_forward_known_weights():
    model = ml.Mlp([2, 2, 1], [np.array([[1.0, -1.0], [2.0, 0.5]]), np.array([[1.0], [3.0]])],
                   [np.array([0.0, -1.0]), np.array([0.5])])
    # hidden = relu([1+4, -1+1-1]) = [5, 0]; output = 5 + 0.5
    assert model(np.array([1.0, 2.0]))[0] == pytest.approx(5.5)


def test_backward_zero_upstream_gives_zero_grads():
    model = ml.Mlp.init([4, 5, 3], seed=0)
    _, cache = ml.forward(model, np.ones(4))
    assert all(np.all(g == 0) for g in ml.backward(model, cache, np.zeros(3)))


def test_single_layer_gradient_is_outer_product():
    model = ml.Mlp.init([3, 2], seed=1)
    x = np.array([1.0, -2.0, 0.5])
    up = np.array([0.3, -0.7])
    _, cache = ml.forward(model, x)
    gW, gb = ml.backward(model, cache, up)
    np.testing.assert_allclose(gW, np.outer(x, up))
    np.testing.assert_allclose(gb, up)


def test_layer_shape_validation():
    with pytest.raises(ValueError):
        ml.Mlp([2, 3], [np.zeros((3, 2))], [np.zeros(3)])


@pytest.mark.parametrize("seed", range(3))
def test_gradient_check_classifier(seed):
    rng = np.random.default_rng(seed)
    model = ml.Mlp.init([23, 100, 2], seed)
    err = ml.gradient_check(model, rng.normal(size=(4, 23)), rng.integers(0, 2, 4), ml.CROSS_ENTROPY)
    assert err < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_gradient_check_regressor(seed):
    rng = np.random.default_rng(100 + seed)
    model = ml.Mlp.init([23, 200, 1], seed)
    err = ml.gradient_check(model, rng.normal(size=(3, 23)), rng.normal(size=3) * 10, ml.SQUARED)
    assert err < 1e-4


def test_adam_first_step_by_hand():
    # m1 = 0.1 g, v1 = 0.001 g^2; bias-corrected both give g and g^2, so the
    # step is -lr * g / (|g| + eps) = -0.001 / (1 + 1e-8) for g = 1
    w = np.zeros(1)
    ml.adam_step(ml.AdamState(), [w], [np.ones(1)])
    assert abs(w[0] - (-0.001 / (1 + 1e-8))) < 1e-15
    assert abs(w[0] - (-0.001)) < 1e-9


def test_adam_second_step_by_hand():
    w = np.zeros(1)
    st_ = ml.AdamState()
    ml.adam_step(st_, [w], [np.array([1.0])])
    ml.adam_step(st_, [w], [np.array([-2.0])])
    m = 0.9 * 0.1 + 0.1 * -2.0
    v = 0.999 * 0.001 + 0.001 * 4.0
    step = 0.001 * (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert w[0] == pytest.approx(-0.001 / (1 + 1e-8) - step, abs=1e-15)


def test_adam_rejects_bad_betas():
    with pytest.raises(ValueError):
        ml.AdamState(beta1=1.0)


def test_xor_is_learned():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    model = ml.Mlp.init([2, 8, 2], seed=0)
    curve = ml.train(model, X, y, ml.CROSS_ENTROPY, ml.AdamState(learning_rate=0.01), 2000, batch_size=4)
    assert len(curve) == 2000
    np.testing.assert_array_equal(ml.predict_classes(model, X), y)


def test_train_is_deterministic():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(50, 3)), rng.normal(size=50)
    runs = []
    for _ in range(2):
        m = ml.Mlp.init([3, 4, 1], seed=9)
        ml.train(m, X, y, ml.SQUARED, ml.AdamState(), 30, seed=9)
        runs.append(ml.model_bytes(ml.SavedModel(ml.SQUARED, m)))
    assert runs[0] == runs[1]


def test_train_rejects_empty_and_wrong_width():
    m = ml.Mlp.init([3, 2], seed=0)
    with pytest.raises(ValueError):
        ml.train(m, np.zeros((0, 3)), np.zeros(0), ml.SQUARED, ml.AdamState(), 1)
    with pytest.raises(ValueError):
        ml.train(m, np.zeros((4, 2)), np.zeros(4), ml.SQUARED, ml.AdamState(), 1)


def test_split_indices_partition():
    tr, te = ml.split_indices(10, 7, seed=1)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(10))
    with pytest.raises(ValueError):
        ml.split_indices(10, 10, seed=1)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.integers(1, 5), st.integers(0, 2**31))
def test_standardizer_inverse(n, d, seed):
    X = np.random.default_rng(seed).normal(size=(n, d)) * 50 + 3
    X[:, 0] = 4.0  # a constant column keeps unit scale
    s = ml.Standardizer.fit(X)
    np.testing.assert_allclose(s.inverse(s.transform(X)), X, atol=1e-10)
    assert s.std[0] == 1.0


# -- SVM -------------------------------------------------------------------------------

def test_svm_separates_blobs():
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(-2, 0.5, (50, 2)), rng.normal(2, 0.5, (50, 2))])
    y = np.repeat([0, 1], 50)
    svm = ml.svm_train(X, y, seed=1)
    assert np.mean(ml.svm_predict(svm, X) == y) == 1.0
    assert ml.svm_predict(svm, np.array([3.0, 3.0])) == 1


def test_svm_single_class_rejected():
    with pytest.raises(ValueError, match="single-class"):
        ml.svm_train(np.zeros((5, 2)), np.ones(5))


def test_svm_objective_decreases():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 4))
    y = (X[:, 0] + 0.3 * rng.normal(size=200) > 0).astype(int)
    objs = []
    ml.svm_train(X, y, epochs=10, seed=0, on_epoch=lambda e, m: objs.append(ml.hinge_objective(m, X, y)))
    assert objs[-1] < objs[0] + 1e-9 and len(objs) == 10


# -- model files -------------------------------------------------------------------------

def test_model_file_round_trip_mlp(tmp_path):
    m = ml.Mlp.init([23, 100, 2], seed=3)
    scaler = ml.Standardizer(np.arange(23.0), np.full(23, 2.0))
    ml.save_model(ml.SavedModel(ml.CROSS_ENTROPY, m, scaler), tmp_path / "m.bin")
    back = ml.load_model(tmp_path / "m.bin")
    assert back.kind == ml.CROSS_ENTROPY and back.layer_dims == [23, 100, 2]
    for a, b in zip(m.params(), back.model.params()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.scaler.mean, scaler.mean)


def test_model_file_round_trip_svm(tmp_path):
    svm = ml.LinearSvm(np.array([1.5, -2.0]), 0.25, 1e-3)
    ml.save_model(ml.SavedModel(ml.SVM_HINGE, svm), tmp_path / "s.bin")
    back = ml.load_model(tmp_path / "s.bin")
    np.testing.assert_array_equal(back.model.weights, svm.weights)
    assert back.model.bias == 0.25 and back.model.regularization == 1e-3 and back.scaler is None


def test_model_file_layout():
    m = ml.Mlp([1, 1], [np.array([[2.0]])], [np.array([0.5])])
    data = ml.model_bytes(ml.SavedModel(ml.SQUARED, m))
    kind = ml.SQUARED.encode()
    assert data[:8] == b"GRIDSUBS"
    assert data[8:12] == (1).to_bytes(4, "little") and data[12] == len(kind)
    rest = data[13 + len(kind):]
    assert rest[:12] == (2).to_bytes(4, "little") + (1).to_bytes(4, "little") * 2
    assert np.frombuffer(rest[12:28], "<f8").tolist() == [2.0, 0.5]
    assert rest[28:] == b"\x00"


@pytest.mark.parametrize("mutate", [
    lambda d: b"NOTMODEL" + d[8:],
    lambda d: d[:-3],
    lambda d: d + b"\x00",
    lambda d: d[:8] + (2).to_bytes(4, "little") + d[12:],
])
def test_model_file_corruption(mutate):
    data = ml.model_bytes(ml.SavedModel(ml.SQUARED, ml.Mlp.init([3, 2, 1], 0)))
    with pytest.raises(ml.ModelFileError):
        ml.parse_model(mutate(data))
