import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relu_constraints.rectifier_net import (ConstraintNet, DimensionError, LabeledFeatureExample,
                                            TrainConfig, TrainingError, classification_accuracy,
                                            dumps_net, forward_raw, hidden_activations, init_net, loads_net,
                                            loss_and_grad, predict, select_and_train, train)

from oracles import finite_difference_grad, mean_cross_entropy, net_score


def ex(psi, label):
    return LabeledFeatureExample(np.asarray(psi, dtype=float), label)


def random_net(rng, K, d, scale=1.0):
    return ConstraintNet(rng.normal(0, scale, (K, d)), rng.normal(0, scale, K))


# -- forward / predict ------------------------------------------------------

def test_zero_net_scores_one():
    net = ConstraintNet(np.zeros((3, 4)), np.zeros(3))
    assert forward_raw(net, np.array([5.0, -2, 0.1, 7])) == 1.0
    assert predict(net, np.ones(4)) == 1


def test_single_unit_example():
    net = ConstraintNet(np.array([[1.0, 0.0]]), np.array([-0.5]))
    assert forward_raw(net, np.array([2.0, 0.0])) == pytest.approx(-0.5)
    assert predict(net, np.array([2.0, 0.0])) == -1


def test_zero_score_predicts_positive():
    # w=1, b=1, psi=0 gives activation 1, so the score is exactly 0
    net = ConstraintNet(np.array([[1.0]]), np.array([1.0]))
    assert forward_raw(net, np.array([0.0])) == 0.0
    assert predict(net, np.array([0.0])) == 1


def test_dimension_mismatch_names_both_sizes():
    net = ConstraintNet(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(DimensionError, match="3.*2|2.*3"):
        forward_raw(net, np.zeros(2))


def test_batch_forward_matches_loop():
    rng = np.random.default_rng(0)
    net = random_net(rng, 4, 6)
    X = rng.normal(size=(20, 6))
    batch = forward_raw(net, X)
    for i in range(20):
        assert batch[i] == pytest.approx(net_score(net.weights, net.biases, X[i]), abs=1e-12)


def test_net_is_read_only():
    net = ConstraintNet(np.zeros((1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        net.weights[0, 0] = 1.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.01, 10.0))
def test_scaling_one_unit(seed, c):
    rng = np.random.default_rng(seed)
    K, d = int(rng.integers(1, 5)), int(rng.integers(1, 6))
    net = random_net(rng, K, d)
    k = int(rng.integers(K))
    W, b = net.weights.copy(), net.biases.copy()
    W[k] *= c
    b[k] *= c
    scaled = ConstraintNet(W, b)
    psi = rng.normal(size=d)
    act = max(0.0, hidden_activations(net, psi)[k])
    assert max(0.0, hidden_activations(scaled, psi)[k]) == pytest.approx(c * act, rel=1e-9, abs=1e-12)
    assert forward_raw(scaled, psi) == pytest.approx(forward_raw(net, psi) - (c - 1) * act, abs=1e-9)


# -- loss and gradient ------------------------------------------------------

def test_loss_at_zero_score_is_log2():
    net = ConstraintNet(np.array([[1.0]]), np.array([1.0]))
    loss, _, _ = loss_and_grad(net, [ex([0.0], 1)])
    assert loss == pytest.approx(math.log(2))


def test_loss_matches_oracle():
    rng = np.random.default_rng(3)
    net = random_net(rng, 3, 5)
    X = rng.normal(size=(12, 5))
    y = rng.choice([-1, 1], size=12)
    loss, _, _ = loss_and_grad(net, [ex(x, int(l)) for x, l in zip(X, y)])
    assert loss == pytest.approx(mean_cross_entropy(net.weights, net.biases, X, y), rel=1e-12)


def _kink_free(net, X, margin=1e-3):
    return np.all(np.abs(X @ net.weights.T + net.biases) > margin)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 10:
        K, d, B = int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(1, 8))
        net = random_net(rng, K, d)
        X = rng.normal(size=(B, d))
        if not _kink_free(net, X):
            continue
        y = rng.choice([-1, 1], size=B)
        _, gW, gb = loss_and_grad(net, [ex(x, int(l)) for x, l in zip(X, y)])
        nW, nb = finite_difference_grad(net.weights, net.biases, X, y)
        np.testing.assert_allclose(gW, nW, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(gb, nb, rtol=1e-5, atol=1e-8)
        checked += 1


def test_inactive_unit_gets_no_gradient():
    net = ConstraintNet(np.array([[1.0, 1.0], [0.5, -0.2]]), np.array([-100.0, 0.1]))
    batch = [ex([1.0, 2.0], 1), ex([-1.0, 0.5], -1), ex([3.0, 3.0], -1)]
    _, gW, gb = loss_and_grad(net, batch)
    assert np.all(gW[0] == 0.0) and gb[0] == 0.0
    assert np.any(gW[1] != 0.0)


def test_empty_batch_rejected():
    net = ConstraintNet(np.zeros((1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        loss_and_grad(net, [])


def test_batch_dimension_mismatch_rejected():
    net = ConstraintNet(np.zeros((1, 2)), np.zeros(1))
    with pytest.raises(DimensionError):
        loss_and_grad(net, [ex([1.0, 2.0, 3.0], 1)])


# -- training ---------------------------------------------------------------

def test_separable_1d_problem_is_learned():
    data = [ex([0.0], 1)] * 5 + [ex([2.0], -1)] * 5
    net, history = train(1, 1, data, TrainConfig(seed=1))
    assert classification_accuracy(net, data) == 1.0
    assert len(history) == 1000
    assert history[-1] < history[0]


def test_training_is_deterministic():
    rng = np.random.default_rng(5)
    data = [ex(rng.normal(size=4), int(rng.choice([-1, 1]))) for _ in range(30)]
    cfg = TrainConfig(epochs=50, seed=9, learning_rate=0.1, batch_size=7)
    a, ha = train(4, 3, data, cfg)
    b, hb = train(4, 3, data, cfg)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)
    assert ha == hb


def test_different_seeds_differ():
    rng = np.random.default_rng(5)
    data = [ex(rng.normal(size=4), int(rng.choice([-1, 1]))) for _ in range(30)]
    a, _ = train(4, 3, data, TrainConfig(epochs=5, seed=1))
    b, _ = train(4, 3, data, TrainConfig(epochs=5, seed=2))
    assert not np.array_equal(a.weights, b.weights)


def test_single_class_data_rejected():
    with pytest.raises(TrainingError, match="degenerate training set"):
        train(2, 2, [ex([0.0, 1.0], 1), ex([1.0, 1.0], 1)])


def test_divergent_training_reports_epoch():
    # a seed whose initial weight is positive, so huge positives overflow the summed loss
    seed = next(s for s in range(100) if init_net(1, 1, np.random.default_rng(s)).weights[0, 0] > 0.5)
    data = [ex([1.7e308], 1), ex([1.7e308], 1), ex([0.0], -1)]
    with np.errstate(all="ignore"), pytest.raises(TrainingError, match="epoch 0"):
        train(1, 1, data, TrainConfig(epochs=5, seed=seed))


@pytest.mark.parametrize("kwargs", [{"learning_rate": 0}, {"lr_decay": -1}, {"epochs": 0},
                                    {"moment1": 1.0}, {"moment2": 0.0}, {"epsilon_stab": 0},
                                    {"batch_size": 0}, {"seed": -1}])
def test_bad_config_rejected(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_selection_is_deterministic_and_reports_grid():
    rng = np.random.default_rng(2)
    data = [ex(rng.normal(size=3), 1) for _ in range(15)] + [ex(rng.normal(size=3) + 3, -1) for _ in range(15)]
    a = select_and_train(3, 2, data, seed=4, epochs=20)
    b = select_and_train(3, 2, data, seed=4, epochs=20)
    assert len(a.scores) == 9
    assert a.config == b.config
    assert np.array_equal(a.net.weights, b.net.weights)


# -- accuracy ---------------------------------------------------------------

def test_accuracy_of_zero_net():
    net = ConstraintNet(np.zeros((1, 2)), np.zeros(1))
    pos = [ex([1.0, 0.0], 1), ex([0.0, 3.0], 1)]
    neg = [ex([1.0, 0.0], -1), ex([0.0, 3.0], -1)]
    assert classification_accuracy(net, pos) == 1.0
    assert classification_accuracy(net, neg) == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mirrored_data_scores_half(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng, 3, 4)
    data = [ex(rng.normal(size=4), int(rng.choice([-1, 1]))) for _ in range(int(rng.integers(1, 20)))]
    mirrored = data + [ex(e.psi, -e.label) for e in data]
    assert classification_accuracy(net, mirrored) == 0.5


def test_accuracy_of_empty_data_rejected():
    with pytest.raises(ValueError):
        classification_accuracy(ConstraintNet(np.zeros((1, 2)), np.zeros(1)), [])


def test_bad_label_rejected():
    with pytest.raises(ValueError):
        ex([0.0], 0)


# -- serialization ----------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_net_round_trip_is_exact(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng, int(rng.integers(1, 6)), int(rng.integers(1, 6)), scale=float(rng.uniform(1e-8, 1e8)))
    back, meta = loads_net(dumps_net(net, note="x"))
    assert np.array_equal(back.weights, net.weights) and np.array_equal(back.biases, net.biases)
    assert meta == {"note": "x"}
    assert dumps_net(back, note="x") == dumps_net(net, note="x")


def test_truncated_weights_rejected():
    text = dumps_net(ConstraintNet(np.ones((2, 2)), np.zeros(2))).replace("1, 1, 1, 1", "1, 1, 1")
    with pytest.raises(DimensionError):
        loads_net(text)
