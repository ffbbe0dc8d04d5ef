import numpy as np
import pytest

from daomtl import tensor as T
from daomtl.errors import ConfigError, DimensionError
from daomtl.layers import Dropout, Linear, LoraLinear, ParameterStore, set_trainable
from daomtl.optim import Adam


def test_linear_identity_and_constant(rng):
    store = ParameterStore()
    lin = Linear(store, "l", 3, 3, rng)
    lin.W.data[...] = np.eye(3)
    x = T.tensor(rng.normal(size=(4, 3)))
    np.testing.assert_array_equal(lin(x).data, x.data)
    lin.W.data[...] = 0.0
    lin.b.data[...] = [1.0, 2.0, 3.0]
    np.testing.assert_array_equal(lin(x).data, np.tile([1.0, 2.0, 3.0], (4, 1)))


def test_linear_rejects_wrong_width(rng):
    lin = Linear(ParameterStore(), "l", 3, 2, rng)
    with pytest.raises(DimensionError):
        lin(T.tensor(np.ones((1, 4))))


def test_linear_gradient_matches_finite_differences(rng):
    store = ParameterStore()
    lin = Linear(store, "l", 4, 3, rng)
    x = T.tensor(rng.normal(size=(5, 4)))

    def f():
        return T.sum(T.tanh(lin(x)))

    T.backward(f())
    fd = T.finite_diff(f, store)
    for name, p in store.items():
        assert np.linalg.norm(p.grad - fd[name]) / (np.linalg.norm(fd[name]) + 1e-8) < 1e-4


def test_xavier_init_is_bounded(rng):
    lin = Linear(ParameterStore(), "l", 40, 60, rng)
    limit = np.sqrt(6.0 / 100)
    assert np.all(np.abs(lin.W.data) <= limit) and not lin.b.data.any()


def test_dropout_eval_and_p_zero_are_identity(rng):
    x = T.tensor(rng.normal(size=(3, 3)))
    d = Dropout(0.5, np.random.default_rng(0))
    d.eval()
    assert d(x) is x
    d0 = Dropout(0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(d0(x).data, x.data)


def test_dropout_rejects_p_one():
    with pytest.raises(ConfigError):
        Dropout(1.0, np.random.default_rng(0))


def test_dropout_monte_carlo():
    d = Dropout(0.5, np.random.default_rng(7))
    x = np.random.default_rng(8).uniform(1.0, 2.0, size=100_000)
    out = d(T.tensor(x)).data
    assert 0.49 <= np.mean(out != 0) <= 0.51
    assert abs(out.mean() - x.mean()) <= 0.02 * x.mean()


def test_dropout_masks_are_seed_deterministic():
    x = T.tensor(np.ones(50))
    a, b = Dropout(0.3, np.random.default_rng(5)), Dropout(0.3, np.random.default_rng(5))
    for _ in range(3):
        np.testing.assert_array_equal(a(x).data, b(x).data)


def _lora(rng, rank=4, d_in=6, d_out=5):
    store = ParameterStore()
    base = Linear(store, "backbone.fc", d_in, d_out, rng)
    return store, base, LoraLinear(store, base, rank, rng)


def test_lora_zero_delta_at_init(rng):
    store, base, lora = _lora(rng)
    lora.eval()
    x = T.tensor(rng.normal(size=(7, 6)))
    assert np.max(np.abs(lora(x).data - base(x).data)) < 1e-12


def test_lora_trainable_count_and_frozen_base(rng):
    store, base, lora = _lora(rng, rank=3)
    assert store.num_parameters(trainable_only=True) == 3 * (5 + 6) == lora.num_adapter_parameters()
    assert not base.W.requires_grad and not base.b.requires_grad


def test_lora_scale_and_rank_validation(rng):
    store = ParameterStore()
    base = Linear(store, "f", 2, 2, rng)
    assert LoraLinear(store, base, 8, rng).scale == 1.0
    with pytest.raises(ConfigError):
        LoraLinear(ParameterStore(), Linear(ParameterStore(), "g", 2, 2, rng), 0, rng)


@pytest.mark.parametrize("rank", [8, 16, 32, 64, 128, 256, 384, 512])
def test_lora_rank_sweep_accepted(rng, rank):
    store, _, lora = _lora(rng, rank=rank, d_in=64, d_out=64)
    assert lora.num_adapter_parameters() == rank * 128


def test_lora_only_adapter_receives_updates(rng):
    store, base, lora = _lora(rng)
    before = {n: p.data.copy() for n, p in store.items()}
    opt = Adam(lr=1e-2, weight_decay=0.01, variant="adamw")
    x = T.tensor(rng.normal(size=(8, 6)))
    for _ in range(20):
        store.zero_grad()
        T.backward(T.sum(T.mul(lora(x), lora(x))))
        opt.step(store, T.gradient_map(store))
    assert base.W.data.tobytes() == before["backbone.fc.W"].tobytes()
    assert base.b.data.tobytes() == before["backbone.fc.b"].tobytes()
    assert not np.array_equal(lora.V.data, before["backbone.fc.lora_V"])


def test_set_trainable_freeze_and_restore(rng):
    store = ParameterStore()
    Linear(store, "backbone.a", 3, 3, rng)
    Linear(store, "head", 3, 1, rng)
    full = store.num_parameters(trainable_only=True)
    assert set_trainable(store, "backbone.*", False) == 2
    w = store["backbone.a.W"]
    T.backward(T.sum(T.matmul(T.tensor(np.ones((1, 3))), w)))
    assert "backbone.a.W" not in T.gradient_map(store)
    assert set_trainable(store, "nothing.*", False) == 0
    set_trainable(store, "backbone.*", True)
    assert store.num_parameters(trainable_only=True) == full


def test_store_names_are_unique_and_ordered(rng):
    store = ParameterStore()
    store.add("z", 1.0)
    store.add("a", 2.0)
    assert list(store.names()) == ["z", "a"]
    with pytest.raises(Exception):
        store.add("z", 3.0)
