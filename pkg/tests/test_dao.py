import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daomtl import tensor as T
from daomtl.dao import DaoConfig, DaoNetwork
from daomtl.errors import FormatError, NumericError


def zero_grads(net):
    return {n: np.zeros(net.store[n].shape) for n in net.fc_names()}


def test_zero_fc2_gives_equal_weights():
    net = DaoNetwork()
    np.testing.assert_array_equal(net(0.3, 1.7).data, [0.5, 0.5])


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 50), st.floats(0, 50), st.integers(0, 1000))
def test_weights_on_simplex(a, b, seed):
    # weighted losses of this size cover training; far larger gaps underflow a component to 0.0
    net = DaoNetwork(DaoConfig(fc2_init="xavier", seed=seed))
    w = net(a, b).data
    assert abs(w.sum() - 1.0) <= 1e-12 and np.all(w > 0)


def test_non_finite_inputs_rejected():
    with pytest.raises(NumericError):
        DaoNetwork()(math.nan, 1.0)


def test_zero_gradients_leave_parameters_unchanged():
    net = DaoNetwork(DaoConfig(fc2_init="xavier"))
    before = {n: p.data.copy() for n, p in net.store.items()}
    net.step(zero_grads(net), 0.0, 0.0)
    assert net.optimizer.t == 1
    for n, p in net.store.items():
        assert p.data.tobytes() == before[n].tobytes()


def test_clamp_holds_boundaries():
    net = DaoNetwork(DaoConfig(alpha_init=0.0, beta_init=5.0))
    for _ in range(5):
        net.step(zero_grads(net), 1.0, -1.0)
    assert net.alpha_value == 0.0 and net.beta_value == 5.0


def test_adam_recurrence_by_hand():
    net = DaoNetwork(DaoConfig(fc2_init="xavier"))
    a0, lr, b1, b2, eps = net.alpha_value, 1e-3, 0.9, 0.999, 1e-8
    grads = [0.7, -0.2]
    m = v = 0.0
    a = a0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        a -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        net.step(zero_grads(net), g, 0.0)
    assert abs(net.alpha_value - a) <= 1e-10
    assert abs((a0 - lr * 0.7 / (0.7 + eps)) - (a0 - 1e-3)) < 1e-10


def test_lr_zero_keeps_outputs_constant():
    net = DaoNetwork(DaoConfig(lr=0.0, fc2_init="xavier"))
    w0 = net(0.4, 0.2).data.copy()
    for _ in range(3):
        net.step({n: np.ones(net.store[n].shape) for n in net.fc_names()}, 1.0, 1.0)
    np.testing.assert_array_equal(net(0.4, 0.2).data, w0)


def test_fc1_gradient_matches_finite_differences():
    net = DaoNetwork(DaoConfig(fc2_init="xavier", seed=3))
    net.fc1.b.data[...] = 0.3

    def f():
        w = net(0.8, 0.5)
        return T.add(T.scale(T.take(w, [0]), 0.8), T.scale(T.take(w, [1]), 0.5))

    T.backward(f())
    params = {"W": net.fc1.W, "b": net.fc1.b}
    fd = T.finite_diff(f, params)
    for n, p in params.items():
        assert np.linalg.norm(p.grad - fd[n]) / (np.linalg.norm(fd[n]) + 1e-8) < 1e-4


def test_snapshot_round_trip_is_bitwise():
    net = DaoNetwork(DaoConfig(fc2_init="xavier"))
    for g in (0.3, -1.2, 0.05):
        net.step({n: np.full(net.store[n].shape, g) for n in net.fc_names()}, g, -g)
    record = json.loads(json.dumps(net.snapshot()))
    clone = DaoNetwork.from_snapshot(record)
    assert clone.alpha_value == net.alpha_value and clone.beta_value == net.beta_value
    assert clone(0.2, 0.9).data.tobytes() == net(0.2, 0.9).data.tobytes()
    clone.step(zero_grads(clone), 0.1, 0.1)
    net.step(zero_grads(net), 0.1, 0.1)
    assert clone.alpha_value == net.alpha_value


def test_snapshot_version_mismatch_and_corruption_rejected():
    record = DaoNetwork().snapshot()
    with pytest.raises(FormatError):
        DaoNetwork.from_snapshot({**record, "version": 99})
    with pytest.raises(FormatError):
        DaoNetwork.from_snapshot({k: v for k, v in record.items() if k != "params"})
