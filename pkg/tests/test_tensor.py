import math

import numpy as np
import pytest

from retmil.errors import ConfigError, DimensionError, InputError, NumericError, StateError
from retmil.gradcheck import finite_diff_check
from retmil.params import ParamStore
from retmil.tensor import (AllocationMeter, Tensor, add, concat, cross_entropy_logits, elementwise,
                           exp, get_precision, group_norm, matmul, mul, no_grad, precision, reshape,
                           set_precision, sigmoid, softmax, softmax_row, stack, swish, tanh,
                           tensor_sum, transpose)


def param(values):
    return Tensor(values, requires_grad=True)


def test_matmul_identity():
    with precision("f64"):
        M = np.random.default_rng(0).normal(size=(2, 2))
        np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(M)).data, M)


def test_matmul_by_hand():
    out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 1))))


def test_matmul_gradient():
    with precision("f64"):
        rng = np.random.default_rng(1)
        store = ParamStore({"A": param(rng.normal(size=(3, 4))), "B": param(rng.normal(size=(4, 2)))})
        error = finite_diff_check(lambda s: tensor_sum(matmul(s["A"], s["B"])), store)
    assert error < 1e-6


def test_elementwise_values():
    assert swish(Tensor(0.0)).item() == 0.0
    assert sigmoid(Tensor(0.0)).item() == 0.5
    a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
    np.testing.assert_array_equal(elementwise("hadamard", a, b).data, [3.0, 8.0])
    np.testing.assert_array_equal(elementwise("add", a, b).data, [4.0, 6.0])
    np.testing.assert_array_equal(elementwise("scale", a, 0.5).data, [0.5, 1.0])


def test_elementwise_unknown_op():
    with pytest.raises(ConfigError):
        elementwise("relu", Tensor(1.0))


def test_broadcasting_only_scalars():
    out = add(Tensor(np.ones((2, 3))), Tensor(2.0))
    np.testing.assert_array_equal(out.data, np.full((2, 3), 3.0))
    with pytest.raises(DimensionError):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
    with pytest.raises(DimensionError):
        mul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


@pytest.mark.parametrize("op", ["tanh", "sigmoid", "swish", "exp"])
def test_unary_gradients(op):
    with precision("f64"):
        rng = np.random.default_rng(2)
        store = ParamStore({"x": param(rng.uniform(-2, 2, size=(3, 4)))})
        error = finite_diff_check(lambda s: tensor_sum(elementwise(op, s["x"])), store)
    assert error < 1e-6


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_binary_gradients(op):
    with precision("f64"):
        rng = np.random.default_rng(3)
        store = ParamStore({"a": param(rng.normal(size=(2, 3))), "b": param(rng.normal(size=(2, 3))),
                            "c": param(rng.normal())})
        w = Tensor(rng.normal(size=(2, 3)))

        def f(s):
            return tensor_sum(mul(elementwise(op, elementwise(op, s["a"], s["b"]), s["c"]), w))

        error = finite_diff_check(f, store)
    assert error < 1e-6


def test_structural_gradients():
    with precision("f64"):
        rng = np.random.default_rng(4)
        store = ParamStore({"a": param(rng.normal(size=(2, 3))), "b": param(rng.normal(size=(2, 3)))})
        w1, w2 = Tensor(rng.normal(size=6)), Tensor(rng.normal(size=(2, 6)))

        def f(s):
            picked = reshape(transpose(stack([s["a"], s["b"]])[1]), 6)
            joined = concat([s["a"][0:1], s["b"][1:2]], axis=0)
            return (tensor_sum(mul(picked, w1)) + tensor_sum(mul(concat([joined, s["a"]], axis=1), w2)))

        error = finite_diff_check(f, store)
    assert error < 1e-6


def test_softmax_examples():
    np.testing.assert_allclose(softmax(Tensor([2.0, 2.0, 2.0])).data, [1 / 3] * 3, rtol=1e-6)
    with precision("f64"):
        np.testing.assert_allclose(softmax_row(Tensor([0.0, math.log(3)])).data, [0.25, 0.75],
                                   rtol=1e-12)
    np.testing.assert_array_equal(softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])


def test_softmax_empty():
    with pytest.raises(DimensionError):
        softmax(Tensor(np.zeros(0)))


def test_softmax_sums_to_one():
    x = Tensor(np.random.default_rng(5).normal(size=(4, 7)) * 10)
    out = softmax(x).data
    assert np.all(out > 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_gradient():
    with precision("f64"):
        rng = np.random.default_rng(6)
        store = ParamStore({"x": param(rng.normal(size=(3, 5)))})
        w = Tensor(rng.normal(size=(3, 5)))
        error = finite_diff_check(lambda s: tensor_sum(mul(softmax(s["x"]), w)), store)
    assert error < 1e-6


def test_group_norm_constant_row():
    out = group_norm(Tensor(np.full((1, 4), 3.0)), 2, affine=(np.ones(4), np.zeros(4)))
    np.testing.assert_array_equal(out.data, np.zeros((1, 4)))


def test_group_norm_normalized_row():
    with precision("f64"):
        out = group_norm(Tensor([[1.0, -1.0]]), 1, eps=1e-12, affine=(np.ones(2), np.zeros(2)))
    np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-9)


def test_group_norm_statistics():
    with precision("f64"):
        x = np.random.default_rng(7).normal(size=(4, 8))
        out = group_norm(Tensor(x), 2, eps=1e-8).data.reshape(4, 2, 4)
    assert np.max(np.abs(out.mean(axis=-1))) < 1e-6
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)


def test_group_norm_bad_groups():
    with pytest.raises(ConfigError):
        group_norm(Tensor(np.ones((2, 6))), 4)


def test_group_norm_gradient():
    with precision("f64"):
        rng = np.random.default_rng(8)
        store = ParamStore({"x": param(rng.normal(size=(3, 8))), "gain": param(rng.normal(size=8)),
                            "bias": param(rng.normal(size=8))})
        w = Tensor(rng.normal(size=(3, 8)))

        def f(s):
            return tensor_sum(mul(group_norm(s["x"], 2, affine=(s["gain"], s["bias"])), w))

        error = finite_diff_check(f, store)
    assert error < 1e-4


def test_cross_entropy_values():
    with precision("f64"):
        assert cross_entropy_logits(Tensor([0.0, 0.0]), 1).item() == pytest.approx(math.log(2))
        loss = cross_entropy_logits(Tensor([10.0, -10.0]), 0).item()
    assert loss == pytest.approx(math.log1p(math.exp(-20)), rel=1e-6)
    assert loss == pytest.approx(2.06e-9, rel=1e-2)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(InputError):
        cross_entropy_logits(Tensor([0.0, 1.0]), 2)
    with pytest.raises(InputError):
        cross_entropy_logits(Tensor([0.0, 1.0]), -1)


def test_cross_entropy_gradient():
    with precision("f64"):
        store = ParamStore({"z": param(np.random.default_rng(9).normal(size=4))})
        error = finite_diff_check(lambda s: cross_entropy_logits(s["z"], 2), store)
        z = store["z"]
        cross_entropy_logits(z, 2).backward()
        expected = np.exp(z.data) / np.exp(z.data).sum()
        expected[2] -= 1
    assert error < 1e-6
    np.testing.assert_allclose(z.grad, expected, atol=1e-12)


def test_non_finite_output():
    with precision("f64"):
        with pytest.raises(NumericError):
            exp(Tensor([1000.0]))


def test_rank_limit():
    Tensor(np.zeros((1, 1, 1)))
    with pytest.raises(DimensionError):
        Tensor(np.zeros((1, 1, 1, 1)))


def test_backward_accumulates():
    x = param([1.0, 2.0])
    tensor_sum(mul(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])
    tensor_sum(mul(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])


def test_backward_errors():
    with pytest.raises(StateError):
        tensor_sum(Tensor([1.0, 2.0])).backward()
    with pytest.raises(StateError):
        mul(param([1.0, 2.0]), 2.0).backward()


def test_no_grad():
    x = param([1.0, 2.0])
    with no_grad():
        y = mul(x, x)
    assert not y.requires_grad
    assert mul(x, x).requires_grad


def test_precision_switching():
    assert get_precision() == "f32"
    with precision("f64"):
        assert Tensor(1.0).dtype == np.float64
    assert Tensor(1.0).dtype == np.float32
    with pytest.raises(ConfigError):
        set_precision("f16")


def test_meter_counts_live_tensors():
    with precision("f64"), AllocationMeter() as meter:
        t = Tensor(np.zeros((10, 10)))
        assert meter.current_bytes == 800
        del t
        assert meter.current_bytes == 0
    assert meter.peak_bytes == 800


def test_meter_limit():
    a, b = Tensor(np.ones((20, 20))), Tensor(np.ones((20, 20)))
    with AllocationMeter(limit=1000) as meter:
        with pytest.raises(MemoryError):
            matmul(a, b)
    assert meter.peak_bytes == 0


def test_meter_is_deterministic():
    rng = np.random.default_rng(10)
    a, b = Tensor(rng.normal(size=(30, 20))), Tensor(rng.normal(size=(20, 10)))
    peaks = []
    for _ in range(2):
        with AllocationMeter() as meter:
            tanh(matmul(a, b))
        peaks.append(meter.peak_bytes)
    assert peaks[0] == peaks[1] > 0
