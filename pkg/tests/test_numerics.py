import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from degrpo import numerics as nx
from degrpo.numerics import (
    ContractError,
    DimensionError,
    ParamTensor,
    Tape,
    Tensor,
    grad_check,
    relative_error,
    token_matrix,
)
from degrpo.numerics.ops import gelu_value


def _backward(fn, *params):
    with Tape() as tape:
        out = fn()
        grads = tape.backward(out)
    return out, grads


# ---- matmul

def test_matmul_scalar_product():
    assert nx.matmul(np.array([[2.0]]), np.array([[3.0]])).data.tolist() == [[6.0]]


def test_matmul_identity_left():
    m = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_array_equal(nx.matmul(np.eye(3), m).data, m)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        nx.matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_matmul_gradient_tight():
    rng = np.random.default_rng(3)
    a, b = ParamTensor("a", rng.normal(size=(4, 5))), ParamTensor("b", rng.normal(size=(5, 3)))
    c = rng.normal(size=(4, 3))
    report = grad_check(lambda: nx.sum_squares(nx.add(nx.matmul(a, b), c)), [a, b], tol=1e-6)
    assert report.passed, report


# ---- softmax

def test_softmax_uniform_rows():
    out = nx.row_softmax(np.array([[0.0, 0.0], [7.0, 7.0]])).data
    np.testing.assert_allclose(out, 0.5, atol=1e-15)


@pytest.mark.parametrize("c", [-1e3, -2.5, 0.0, 40.0, 800.0])
def test_softmax_shift_invariant_constant_row(c):
    np.testing.assert_allclose(nx.row_softmax(np.full((1, 3), c)).data, 1 / 3, atol=1e-15)


def test_softmax_one_zero():
    e = math.e
    np.testing.assert_allclose(nx.row_softmax(np.array([[1.0, 0.0]])).data, [[e / (e + 1), 1 / (e + 1)]], rtol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
              elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift(x, c):
    y = nx.row_softmax(x).data
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(nx.row_softmax(x + c).data, y, atol=1e-12)


def test_softmax_sum_has_zero_gradient():
    x = ParamTensor("x", np.random.default_rng(1).normal(size=(3, 4)))
    _, g = _backward(lambda: nx.total(nx.row_softmax(x)))
    np.testing.assert_allclose(g["x"], 0.0, atol=1e-15)


# ---- layer norm

def test_layer_norm_fixed_point():
    row = np.array([[1.0, -1.0, 1.0, -1.0]])
    out = nx.layer_norm(row, np.ones(4), np.zeros(4)).data
    np.testing.assert_allclose(out, row, atol=1e-5)


def test_layer_norm_constant_row_is_zero():
    np.testing.assert_array_equal(nx.layer_norm(np.full((1, 4), 5.0), np.ones(4), np.zeros(4)).data, 0.0)


def test_layer_norm_rejects_width_one():
    with pytest.raises(DimensionError):
        nx.layer_norm(np.ones((2, 1)), np.ones(1), np.zeros(1))


def test_layer_norm_gradient():
    rng = np.random.default_rng(5)
    x, g, b = (ParamTensor(n, rng.normal(size=s)) for n, s in (("x", (3, 8)), ("g", 8), ("b", 8)))
    c = rng.normal(size=(3, 8))
    report = grad_check(lambda: nx.sum_squares(nx.add(nx.layer_norm(x, g, b), c)), [x, g, b], tol=1e-5)
    assert report.passed, report


# ---- gelu

def test_gelu_center_and_asymptotes():
    assert nx.gelu(np.array([0.0])).data[0] == 0.0
    np.testing.assert_allclose(nx.gelu(np.array([30.0])).data, [30.0], rtol=1e-12)
    np.testing.assert_allclose(nx.gelu(np.array([-30.0])).data, [0.0], atol=1e-12)


def test_gelu_at_one_matches_high_precision():
    import mpmath
    mpmath.mp.dps = 40
    x = mpmath.mpf(1)
    ref = 0.5 * x * (1 + mpmath.tanh(mpmath.sqrt(2 / mpmath.pi) * (x + mpmath.mpf("0.044715") * x ** 3)))
    assert abs(gelu_value(np.array(1.0)) - float(ref)) < 1e-15


# ---- mean pool

def test_mean_pool_single_row_and_symmetry():
    np.testing.assert_array_equal(nx.mean_pool_rows(np.array([[4.0, 5.0]])).data, [4.0, 5.0])
    np.testing.assert_array_equal(nx.mean_pool_rows(np.array([[1.0, 3.0], [3.0, 1.0]])).data, [2.0, 2.0])


def test_mean_pool_backward_distributes_one_over_l():
    x = ParamTensor("x", np.random.default_rng(2).normal(size=(5, 4)))
    _, g = _backward(lambda: nx.total(nx.mean_pool_rows(x)))
    np.testing.assert_allclose(g["x"], 0.2)


# ---- softmax pair

def test_softmax_pair_sums_exactly():
    for a, b in [(0.3, -2.0), (50.0, -50.0), (1e-9, 0.0), (-700.0, 700.0)]:
        wa, wb = nx.softmax_pair(np.array(a), np.array(b))
        assert float(wa) + float(wb) == 1.0
        assert 0.0 <= float(wa) <= 1.0


# ---- tape mechanics

def test_tape_replay_is_bit_identical():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 4))
    f = lambda: nx.gelu(nx.layer_norm(nx.matmul(a, b), np.ones(4), np.zeros(4))).data
    assert f().tobytes() == f().tobytes()


def test_tape_records_in_order_and_resets_grads():
    w = ParamTensor("w", np.array([[3.0]]))
    with Tape() as tape:
        out = nx.sum_squares(w)
        first = tape.backward(out)
        second = tape.backward(out)
    assert [n.op for n in tape.nodes][-1] == "sum_squares"
    np.testing.assert_array_equal(first["w"], second["w"])


def test_backward_rejects_non_scalar():
    w = ParamTensor("w", np.ones((2, 2)))
    with Tape() as tape:
        out = nx.scale(w, 2.0)
        with pytest.raises(ValueError):
            tape.backward(out)


def test_no_recording_without_tape():
    w = ParamTensor("w", np.ones(2))
    assert isinstance(nx.scale(w, 2.0), Tensor)


def test_token_matrix_validation():
    assert token_matrix([[1.0, 2.0]]).shape == (1, 2)
    with pytest.raises(DimensionError):
        token_matrix(np.ones(3))
    with pytest.raises(ValueError):
        token_matrix([[np.nan]])


def test_glorot_bounds():
    p = nx.glorot("w", 6, 10, np.random.default_rng(0))
    assert p.shape == (6, 10) and np.abs(p.data).max() <= math.sqrt(6 / 16)


# ---- grad_check contract

def test_grad_check_quadratic():
    w = ParamTensor("w", np.array(3.0))
    with Tape() as tape:
        out = nx.sum_squares(w)
        g = tape.backward(out)
    assert abs(g["w"] - 6.0) < 1e-12
    report = grad_check(lambda: nx.sum_squares(w), [w])
    assert report.max_rel_error["w"] < 1e-8


def test_grad_check_rejects_vector_output():
    w = ParamTensor("w", np.ones(3))
    with pytest.raises(ContractError):
        grad_check(lambda: nx.scale(w, 1.0), [w])


def test_grad_check_detects_wrong_gradient():
    from degrpo.numerics.tape import _record

    w = ParamTensor("w", np.array([1.5, -0.5]))
    # forward sums w^3 but backward claims 2w
    wrong = lambda: _record(np.asarray(np.sum(w.data ** 3)), (w,), "cube", lambda g: w.accumulate(2.0 * g * w.data))
    assert not grad_check(wrong, [w]).passed


def test_grad_check_leaves_params_unchanged():
    rng = np.random.default_rng(0)
    w = ParamTensor("w", rng.normal(size=(3, 3)))
    before = w.data.copy()
    grad_check(lambda: nx.sum_squares(nx.gelu(w)), [w])
    np.testing.assert_array_equal(w.data, before)


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9]))[0] == pytest.approx(1e-3)
    assert relative_error(np.array([2.0]), np.array([2.0]))[0] == 0.0
