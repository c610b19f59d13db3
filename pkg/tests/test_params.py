import numpy as np
import pytest

from retmil.errors import ConfigError, NumericError, StateError
from retmil.gradcheck import finite_diff_check
from retmil.params import ParamStore, adam_step, ones, xavier_uniform, zeros
from retmil.tensor import Tensor, exp, mul, precision, scale, tensor_sum


def test_store_iterates_in_name_order():
    store = ParamStore({"b.x": zeros(2), "a.y": zeros(3), "a.x": zeros(1)})
    assert list(store) == ["a.x", "a.y", "b.x"]
    assert [name for name, _ in store.items()] == ["a.x", "a.y", "b.x"]
    assert store.num_values() == 6
    assert "a.y" in store and "c" not in store


def test_store_snapshot_restore():
    store = ParamStore({"w": ones(2, 2)})
    snapshot = store.snapshot()
    store["w"].data += 5
    store.restore(snapshot)
    np.testing.assert_array_equal(store["w"].data, np.ones((2, 2)))


def test_zero_grad():
    store = ParamStore({"w": ones(3)})
    store["w"].grad = np.ones(3)
    store.zero_grad()
    assert store["w"].grad is None


def test_adam_single_step():
    with precision("f64"):
        store = ParamStore({"theta": zeros(1)})
        store["theta"].grad = np.ones(1)
        adam_step(store, lr=1e-4)
    assert store["theta"].data[0] == pytest.approx(-1e-4, rel=1e-6)
    state = store.adam_state("theta")
    assert state.step == 1
    assert state.m.shape == state.v.shape == (1,)


def test_adam_zero_gradient_keeps_parameters():
    store = ParamStore({"theta": ones(2, 3)})
    store["theta"].grad = np.zeros((2, 3))
    adam_step(store, lr=1e-3, wd=0.0)
    np.testing.assert_array_equal(store["theta"].data, np.ones((2, 3)))


def test_adam_weight_decay_is_added_to_gradient():
    with precision("f64"):
        store = ParamStore({"theta": ones(1)})
        store["theta"].grad = np.zeros(1)
        adam_step(store, lr=1e-2, wd=0.1)
    # The first Adam step has magnitude lr whatever the gradient size.
    assert store["theta"].data[0] == pytest.approx(1.0 - 1e-2, rel=1e-6)


def test_adam_missing_gradient():
    store = ParamStore({"a": zeros(1), "b": zeros(1)})
    store["a"].grad = np.ones(1)
    with pytest.raises(StateError, match="b"):
        adam_step(store)


def test_adam_bad_settings():
    store = ParamStore({"a": zeros(1)})
    store["a"].grad = np.ones(1)
    with pytest.raises(ConfigError):
        adam_step(store, betas=(1.0, 0.999))
    with pytest.raises(ConfigError):
        adam_step(store, wd=-1.0)


def test_adam_registration_order_does_not_matter():
    rng = np.random.default_rng(0)
    a0, b0 = rng.normal(size=(2, 2)), rng.normal(size=3)
    ga, gb = rng.normal(size=(2, 2)), rng.normal(size=3)
    stores = []
    for order in [("a", "b"), ("b", "a")]:
        values = {"a": Tensor(a0, requires_grad=True), "b": Tensor(b0, requires_grad=True)}
        store = ParamStore()
        for name in order:
            store.add(name, values[name])
        for _ in range(3):
            store["a"].grad, store["b"].grad = ga.copy(), gb.copy()
            adam_step(store, lr=1e-2, wd=1e-3)
        stores.append(store)
    for name in ("a", "b"):
        np.testing.assert_array_equal(stores[0][name].data, stores[1][name].data)


def test_xavier_uniform_range():
    rng = np.random.default_rng(1)
    w = xavier_uniform(rng, 64, 32)
    assert w.shape == (64, 32)
    assert np.abs(w.data).max() <= np.sqrt(6 / 96)
    assert w.requires_grad


def test_gradcheck_quadratic():
    with precision("f64"):
        rng = np.random.default_rng(2)
        store = ParamStore({"theta": Tensor(rng.uniform(0.5, 1.5, size=5), requires_grad=True)})
        error = finite_diff_check(lambda s: tensor_sum(mul(s["theta"], s["theta"])), store)
    assert error < 1e-8


def test_gradcheck_constant_function():
    with precision("f64"):
        store = ParamStore({"theta": Tensor(np.ones(3), requires_grad=True)})
        error = finite_diff_check(lambda s: scale(tensor_sum(s["theta"]), 0.0), store)
    assert error < 1e-8


def test_gradcheck_errors():
    with precision("f64"):
        store = ParamStore({"theta": Tensor(np.ones(2), requires_grad=True)})
        with pytest.raises(ConfigError):
            finite_diff_check(lambda s: tensor_sum(s["theta"]), store, h=0.0)
        with pytest.raises(NumericError):
            finite_diff_check(lambda s: tensor_sum(exp(scale(s["theta"], 1000.0))), store)
