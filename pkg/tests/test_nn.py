import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convgat.errors import ArgumentError, FormatError, NumericError, ShapeError
from convgat.nn import (
    ParamStore,
    dropout,
    elu,
    grad_check,
    leaky_relu,
    load_checkpoint,
    masked_softmax,
    matmul,
    save_checkpoint,
    sigmoid,
)


def test_matmul_identity_and_loop_oracle(rng):
    a = rng.standard_normal((3, 4))
    assert np.array_equal(matmul(np.eye(3), a), a)
    x, y = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    loop = [[sum(x[i, k] * y[k, j] for k in range(4)) for j in range(3)] for i in range(5)]
    assert np.max(np.abs(matmul(x, y) - np.array(loop))) <= 1e-15


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_activation_points():
    assert leaky_relu(-1.0, 0.2) == -0.2
    assert elu(0.0) == 0.0
    assert elu(-1.0) == pytest.approx(math.exp(-1) - 1, abs=1e-16)
    assert sigmoid(0.0) == 0.5
    assert np.isfinite(sigmoid(np.array([-1000.0, 1000.0]))).all()


def test_masked_softmax_examples(rng):
    assert np.array_equal(masked_softmax([3.0, 3.0, 9.0], [0, 1]), [0.5, 0.5, 0.0])
    assert np.array_equal(masked_softmax([1.0, -5.0], [1]), [0.0, 1.0])
    scores = rng.standard_normal(10)
    active = [0, 2, 3, 7, 9]
    direct = np.zeros(10)
    total = sum(math.exp(scores[i]) for i in active)
    for i in active:
        direct[i] = math.exp(scores[i]) / total
    assert np.max(np.abs(masked_softmax(scores, active) - direct)) <= 1e-12
    with pytest.raises(ArgumentError):
        masked_softmax(scores, [])


@settings(max_examples=50, deadline=None)
@given(
    scores=st.lists(st.floats(-50, 50), min_size=1, max_size=12),
    shift=st.floats(-100, 100),
    data=st.data(),
)
def test_masked_softmax_shift_invariant(scores, shift, data):
    active = data.draw(st.sets(st.integers(0, len(scores) - 1), min_size=1))
    base = masked_softmax(scores, active)
    assert abs(base.sum() - 1.0) <= 1e-12
    assert all(base[i] == 0 for i in range(len(scores)) if i not in active)
    shifted = masked_softmax(np.array(scores) + shift, active)
    assert np.max(np.abs(base - shifted)) <= 1e-12


def test_dropout_modes(rng):
    x = rng.standard_normal((3, 4))
    out, mask = dropout(x, 0.4, False, rng)
    assert out is x and mask is None
    out, mask = dropout(x, 0.0, True, rng)
    assert np.array_equal(out, x) and np.array_equal(mask, np.ones_like(x))
    for p in (-0.1, 1.0):
        with pytest.raises(ArgumentError):
            dropout(x, p, True, rng)


def test_dropout_statistics(rng):
    out, mask = dropout(np.ones(100_000), 0.5, True, rng)
    assert abs(out.mean() - 1.0) <= 0.02
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert np.array_equal(out, mask)


def test_grad_check_linear():
    rng = np.random.default_rng(0)
    params = ParamStore()
    params.add("W", rng.standard_normal((3, 4)))
    x = rng.standard_normal(4)

    def f(p, backward):
        y = p["W"] @ x
        if backward:
            p.accumulate("W", np.outer(y, x))
        return 0.5 * y @ y

    assert grad_check(f, params, 1e-6) <= 1e-9


def test_grad_check_sigmoid_bce():
    rng = np.random.default_rng(1)
    params = ParamStore()
    params.add("w", rng.standard_normal(5))
    params.add("b", np.zeros(1))
    x = rng.standard_normal(5)

    def f(p, backward):
        prob = sigmoid(p["w"] @ x + p["b"][0])
        if backward:
            p.accumulate("w", (prob - 1) * x)
            p.accumulate("b", np.array([prob - 1]))
        return -np.log(prob)

    assert grad_check(f, params, 1e-6) <= 1e-7


def test_grad_check_constant():
    params = ParamStore()
    params.add("w", np.ones(3))
    assert grad_check(lambda p, backward: 4.0, params) == 0.0
    assert np.array_equal(params.grads["w"], np.zeros(3))


def test_grad_check_detects_wrong_gradient():
    params = ParamStore()
    params.add("w", np.array([1.5]))

    def f(p, backward):
        if backward:
            p.accumulate("w", 3 * p["w"])  # true gradient is 2w
        return p["w"][0] ** 2

    assert grad_check(f, params) > 0.1


def test_grad_check_non_finite():
    params = ParamStore()
    params.add("w", np.ones(1))
    with pytest.raises(NumericError):
        grad_check(lambda p, backward: float("nan"), params)


def test_param_store_basics(rng):
    params = ParamStore(7)
    params.add("a", rng.standard_normal((2, 3)))
    with pytest.raises(ArgumentError):
        params.add("a", np.zeros(1))
    params.accumulate("a", np.ones((2, 3)))
    params.accumulate("a", np.ones((2, 3)))
    assert np.array_equal(params.grads["a"], 2 * np.ones((2, 3)))
    params.zero_grad()
    assert not params.grads["a"].any()
    assert params.num_parameters() == 6
    twin = params.copy()
    twin["a"][0, 0] += 1
    assert twin["a"][0, 0] != params["a"][0, 0]


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    tensors = {"layer1.W": rng.standard_normal((2, 3, 3)), "b": np.array([np.pi, -0.0, 1e-300]), "s": rng.standard_normal(())}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tensors, {"model": "gat", "layers": 1})
    loaded, meta = load_checkpoint(path)
    assert list(loaded) == list(tensors)
    for name, value in tensors.items():
        assert loaded[name].tobytes() == value.tobytes() and loaded[name].shape == value.shape
    assert meta == {"model": "gat", "layers": 1}


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, {"w": np.ones(4)})
    good.write_bytes(good.read_bytes()[:-5])
    with pytest.raises(FormatError):
        load_checkpoint(good)
