"""Kernels against their loop oracles, plus the documented edge cases."""

import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modelzoo.errors import DimensionError, ParameterError
from modelzoo.naive import (
    naive_activation,
    naive_batchnorm,
    naive_concat,
    naive_conv2d,
    naive_dense,
    naive_pool2d,
)
from modelzoo.tensor import (
    ConvSpec,
    Tensor,
    activation,
    batchnorm_infer,
    concat,
    conv2d,
    dense,
    pool2d,
    tensor_equal,
)

from conftest import max_rel_err

RNG = np.random.default_rng(20240101)


def rnd(*shape):
    return Tensor(RNG.standard_normal(shape).astype(np.float32))


# ---------------------------------------------------------------------------
# conv2d


def test_conv_identity_kernel():
    x = rnd(1, 1, 5, 5)
    kernel = Tensor(np.ones((1, 1, 1, 1), np.float32))
    bias = Tensor(np.zeros(1, np.float32))
    out = conv2d(x, kernel, bias, ConvSpec((1, 1, 1, 1)))
    assert np.array_equal(out.array, x.array)


def test_conv_zero_kernel_gives_bias():
    x = rnd(2, 3, 4, 4)
    kernel = Tensor(np.zeros((5, 3, 3, 3), np.float32))
    bias = Tensor(np.arange(5, dtype=np.float32))
    out = conv2d(x, kernel, bias, ConvSpec((5, 3, 3, 3), padding="same"))
    for ch in range(5):
        assert np.all(out.array[:, ch] == np.float32(ch))


def test_conv_matches_loop_oracle_fixed_case():
    x = rnd(1, 2, 5, 5)
    kernel = rnd(3, 2, 3, 3)
    bias = rnd(3)
    fast = conv2d(x, kernel, bias, ConvSpec((3, 2, 3, 3)))
    slow = naive_conv2d(x, kernel, bias, (1, 1), "valid")
    assert fast.shape == (1, 3, 3, 3)
    assert max_rel_err(fast.array, slow.array) <= 1e-5


@pytest.mark.parametrize("padding", ["same", "valid"])
def test_conv_matches_loop_oracle_randomized(padding):
    for _ in range(60):
        n, c, o = (int(v) for v in RNG.integers(1, 4, size=3))
        h, w = (int(v) for v in RNG.integers(3, 8, size=2))
        kh = int(RNG.integers(1, min(4, h + 1)))
        kw = int(RNG.integers(1, min(4, w + 1)))
        stride = (int(RNG.integers(1, 3)), int(RNG.integers(1, 3)))
        x, kernel, bias = rnd(n, c, h, w), rnd(o, c, kh, kw), rnd(o)
        spec = ConvSpec((o, c, kh, kw), stride, padding)
        fast = conv2d(x, kernel, bias, spec)
        slow = naive_conv2d(x, kernel, bias, stride, padding)
        assert fast.shape == slow.shape
        assert max_rel_err(fast.array, slow.array) <= 1e-5


def test_conv_channel_mismatch_names_axis():
    x = rnd(1, 3, 4, 4)
    with pytest.raises(DimensionError, match="axis 1"):
        conv2d(x, rnd(2, 2, 3, 3), rnd(2), ConvSpec((2, 2, 3, 3)))


def test_conv_window_too_large():
    with pytest.raises(DimensionError, match="axis 2"):
        conv2d(rnd(1, 1, 2, 2), rnd(1, 1, 3, 3), rnd(1), ConvSpec((1, 1, 3, 3)))


# ---------------------------------------------------------------------------
# pool2d


@pytest.mark.parametrize("mode", ["max", "avg"])
def test_pool_constant_input(mode):
    x = Tensor.full((1, 2, 6, 6), 3.5)
    out = pool2d(x, (3, 3), (2, 2), "same", mode)
    assert np.all(out.array == np.float32(3.5))


def test_pool_unit_window_is_identity():
    x = rnd(2, 3, 4, 5)
    for mode in ("max", "avg"):
        out = pool2d(x, (1, 1), (1, 1), "valid", mode)
        assert np.array_equal(out.array, x.array)


def test_pool_matches_loop_oracle_fixed_case():
    x = rnd(1, 1, 6, 6)
    fast = pool2d(x, (2, 2), (2, 2), "valid", "max")
    slow = naive_pool2d(x, (2, 2), (2, 2), "valid", "max")
    assert fast.shape == (1, 1, 3, 3)
    assert np.array_equal(fast.array, slow.array)


@pytest.mark.parametrize("mode", ["max", "avg"])
@pytest.mark.parametrize("padding", ["same", "valid"])
def test_pool_matches_loop_oracle_randomized(mode, padding):
    for _ in range(40):
        n, c = (int(v) for v in RNG.integers(1, 3, size=2))
        h, w = (int(v) for v in RNG.integers(2, 8, size=2))
        kh = int(RNG.integers(1, min(4, h + 1)))
        kw = int(RNG.integers(1, min(4, w + 1)))
        stride = (int(RNG.integers(1, 4)), int(RNG.integers(1, 4)))
        x = rnd(n, c, h, w)
        fast = pool2d(x, (kh, kw), stride, padding, mode)
        slow = naive_pool2d(x, (kh, kw), stride, padding, mode)
        assert fast.shape == slow.shape
        assert max_rel_err(fast.array, slow.array) <= 1e-5


def test_pool_window_exceeding_input_is_an_error():
    with pytest.raises(DimensionError, match="axis 2"):
        pool2d(rnd(1, 1, 2, 2), (3, 3), (1, 1), "valid", "max")


def test_avg_pool_excludes_padding_from_divisor():
    # one row/column of SAME padding: the corner window sees only one cell
    x = Tensor(np.ones((1, 1, 3, 3), np.float32))
    out = pool2d(x, (2, 2), (2, 2), "same", "avg")
    assert np.all(out.array == np.float32(1.0))  # would be < 1 with padded divisor


# ---------------------------------------------------------------------------
# dense


def test_dense_identity_weight():
    x = rnd(3, 4)
    w = Tensor(np.eye(4, dtype=np.float32))
    out = dense(x, w, Tensor.zeros((4,)))
    assert np.array_equal(out.array, x.array)


def test_dense_zero_weight_gives_bias_rows():
    x = rnd(3, 4)
    b = rnd(5)
    out = dense(x, Tensor.zeros((4, 5)), b)
    assert np.array_equal(out.array, np.tile(b.array, (3, 1)))


def test_dense_matches_triple_loop_oracle():
    x, w, b = rnd(2, 3), rnd(3, 4), rnd(4)
    fast = dense(x, w, b)
    slow = naive_dense(x, w, b)
    assert max_rel_err(fast.array, slow.array) <= 1e-5


def test_dense_inner_dim_mismatch():
    with pytest.raises(DimensionError, match="axis 1"):
        dense(rnd(2, 3), rnd(4, 5), rnd(5))


# ---------------------------------------------------------------------------
# activations


def test_softmax_constant_row_is_uniform():
    for n in (1, 4, 9):
        x = Tensor.full((2, n), 0.7)
        out = activation(x, "softmax")
        assert np.allclose(out.array, 1.0 / n, atol=1e-7)


def test_relu_fixed_example():
    out = activation(Tensor(np.array([-1.0, 0.0, 2.0], np.float32)), "relu")
    assert np.array_equal(out.array, np.array([0.0, 0.0, 2.0], np.float32))


@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-30, 30, width=32)))
def test_softmax_shift_invariance(data):
    x = Tensor(data)
    shifted = Tensor(data + np.float32(3.25))
    a = activation(x, "softmax").array
    b = activation(shifted, "softmax").array
    assert np.max(np.abs(a - b)) <= 1e-6


@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50, width=32)))
def test_softmax_rows_sum_to_one(data):
    out = activation(Tensor(data), "softmax").array
    assert np.all(out > 0) and np.all(out < 1 + 1e-6)
    assert np.max(np.abs(out.sum(axis=-1) - 1.0)) <= 1e-6


@pytest.mark.parametrize("kind", ["relu", "tanh", "softmax"])
def test_activation_matches_loop_oracle(kind):
    for _ in range(50):
        shape = tuple(int(v) for v in RNG.integers(1, 5, size=int(RNG.integers(1, 5))))
        x = Tensor(RNG.standard_normal(shape).astype(np.float32) * 3)
        assert max_rel_err(activation(x, kind).array,
                           naive_activation(x, kind).array) <= 1e-5


# ---------------------------------------------------------------------------
# batchnorm


def test_batchnorm_identity_params():
    x = rnd(2, 3, 4, 4)
    ones, zeros = Tensor.full((3,), 1.0), Tensor.zeros((3,))
    out = batchnorm_infer(x, ones, zeros, zeros, ones, 0.0)
    assert np.array_equal(out.array, x.array)


def test_batchnorm_zero_gamma_gives_beta():
    x = rnd(1, 2, 3, 3)
    beta = Tensor(np.array([4.0, -1.0], np.float32))
    out = batchnorm_infer(x, Tensor.zeros((2,)), beta, rnd(2),
                          Tensor.full((2,), 0.5), 1e-3)
    assert np.all(out.array[0, 0] == np.float32(4.0))
    assert np.all(out.array[0, 1] == np.float32(-1.0))


def test_batchnorm_matches_formula_oracle():
    for _ in range(50):
        c = int(RNG.integers(1, 5))
        x = rnd(2, c, 3, 3)
        gamma, beta, mean = rnd(c), rnd(c), rnd(c)
        var = Tensor(np.abs(RNG.standard_normal(c)).astype(np.float32) + 0.1)
        fast = batchnorm_infer(x, gamma, beta, mean, var, 1e-3)
        slow = naive_batchnorm(x, gamma, beta, mean, var, 1e-3)
        assert max_rel_err(fast.array, slow.array) <= 1e-5


def test_batchnorm_negative_variance_rejected():
    x = rnd(1, 2, 2, 2)
    bad = Tensor(np.array([0.5, -0.5], np.float32))
    with pytest.raises(ParameterError):
        batchnorm_infer(x, rnd(2), rnd(2), rnd(2), bad, 1e-3)


def test_batchnorm_param_length_mismatch():
    with pytest.raises(DimensionError, match="axis 1"):
        batchnorm_infer(rnd(1, 3, 2, 2), rnd(2), rnd(3), rnd(3), Tensor.full((3,), 1.0), 0.0)


# ---------------------------------------------------------------------------
# concat


def test_concat_single_tensor_is_identity():
    x = rnd(1, 2, 3, 3)
    assert tensor_equal(concat([x], 1), x)


def test_concat_split_round_trip_bit_exact():
    parts = [rnd(2, int(c), 3, 3) for c in RNG.integers(1, 4, size=3)]
    merged = concat(parts, 1)
    offset = 0
    for part in parts:
        span = merged.array[:, offset:offset + part.shape[1]]
        assert span.tobytes() == part.array.tobytes()
        offset += part.shape[1]


def test_concat_matches_index_map_oracle():
    a, b = rnd(1, 2, 2, 2), rnd(1, 2, 2, 2)
    fast = concat([a, b], 1)
    slow = naive_concat([a, b], 1)
    assert fast.shape == (1, 4, 2, 2)
    assert tensor_equal(fast, slow)


def test_concat_mismatched_dim_names_axis():
    with pytest.raises(DimensionError, match="axis 2"):
        concat([rnd(1, 2, 3, 3), rnd(1, 2, 4, 3)], 1)


@given(st.integers(0, 3), st.data())
def test_concat_round_trip_property(axis, data):
    base = [int(v) for v in RNG.integers(1, 4, size=4)]
    parts = []
    for _ in range(data.draw(st.integers(1, 3))):
        shape = list(base)
        shape[axis] = data.draw(st.integers(1, 3))
        parts.append(Tensor(RNG.standard_normal(shape).astype(np.float32)))
    merged = concat(parts, axis)
    assert merged.shape[axis] == sum(p.shape[axis] for p in parts)
    offset = 0
    for part in parts:
        idx = [slice(None)] * 4
        idx[axis] = slice(offset, offset + part.shape[axis])
        assert merged.array[tuple(idx)].tobytes() == part.array.tobytes()
        offset += part.shape[axis]


# ---------------------------------------------------------------------------
# purity and concurrency


def test_kernels_are_pure_across_runs_and_threads():
    x, kernel, bias = rnd(1, 2, 6, 6), rnd(3, 2, 3, 3), rnd(3)
    spec = ConvSpec((3, 2, 3, 3), (1, 1), "same")
    reference = conv2d(x, kernel, bias, spec)
    assert tensor_equal(conv2d(x, kernel, bias, spec), reference)

    results = [None] * 8
    def work(i):
        results[i] = conv2d(x, kernel, bias, spec)
    threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for r in results:
        assert tensor_equal(r, reference)


def test_tensor_is_immutable():
    x = rnd(2, 2)
    with pytest.raises(ValueError):
        x.array[0, 0] = 5.0


def test_tensor_rejects_zero_size_and_high_rank():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 2), np.float32))
    with pytest.raises(DimensionError):
        Tensor(np.zeros((1, 1, 1, 1, 1), np.float32))


def test_f64_path_supported():
    gen = np.random.default_rng(6)
    x = Tensor(gen.standard_normal((2, 3)))  # float64 by default
    w = Tensor(gen.standard_normal((3, 4)))
    out = dense(x, w, Tensor(np.zeros(4)))
    assert out.dtype == "f64"
    probs = activation(out, "softmax")
    assert probs.dtype == "f64"
    assert np.allclose(probs.array.sum(axis=-1), 1.0, atol=1e-12)
