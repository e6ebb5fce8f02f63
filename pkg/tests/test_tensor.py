import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from jointsan import tensor as T
from jointsan.errors import ConfigError, DimensionError, GraphError, NumericError
from jointsan.gradcheck import GradcheckReport, check_ops, numeric_gradient
from jointsan.tensor import Tensor


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_sigmoid_midpoint_and_relu():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert_array_equal(T.relu(Tensor([-3.0, 3.0])).data, [0.0, 3.0])
    assert_array_equal(T.elementwise("relu", Tensor([-3.0, 3.0])).data, [0.0, 3.0])


def test_sigmoid_derivative_at_zero():
    x = leaf([0.0])
    T.backward(T.sigmoid(x).sum())
    fd = numeric_gradient(lambda: float(T.sigmoid(Tensor(x.data)).data[0]), x.data, 0)
    assert_allclose(x.grad, [0.25], rtol=1e-12)
    assert_allclose(fd, 0.25, rtol=1e-6)


def test_sigmoid_saturates_without_overflow():
    with np.errstate(over="raise"):
        out = T.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert_array_equal(out, [0.0, 1.0])


def test_log_rejects_nonpositive():
    with pytest.raises(NumericError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(NumericError):
        T.log(Tensor([np.nan]))


def test_unknown_elementwise_name():
    with pytest.raises(ValueError, match="unknown"):
        T.elementwise("softplus", Tensor(1.0))


def test_concat_values_and_shapes():
    out = T.concat([Tensor([1.0, 2.0]), Tensor([3.0])], axis=0)
    assert_array_equal(out.data, [1, 2, 3])
    d, n = 4, 5
    wide = T.concat([Tensor(np.ones((n, 4 * d))), Tensor(np.ones((n, 4 * d)))], axis=-1)
    assert wide.shape == (n, 8 * d)


def test_concat_routes_ones_back():
    a, b = leaf([[1.0, 2.0]]), leaf([[3.0]])
    T.backward(T.concat([a, b], axis=1).sum())
    assert_array_equal(a.grad, [[1, 1]])
    assert_array_equal(b.grad, [[1]])


def test_concat_ragged_raises():
    with pytest.raises(DimensionError):
        T.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


def test_matmul_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_dropout_identity_cases():
    x = Tensor(np.arange(6.0))
    rng = T.make_rng(0)
    assert T.dropout(x, 0.0, True, rng) is x
    assert T.dropout(x, 0.5, False, rng) is x
    with pytest.raises(ConfigError):
        T.dropout(x, 1.0, True, rng)


def test_dropout_statistics():
    n, rate = 100_000, 0.1
    x = Tensor(np.ones(n))
    a = T.dropout(x, rate, True, T.make_rng(3)).data
    b = T.dropout(x, rate, True, T.make_rng(3)).data
    assert_array_equal(a, b)
    zero_frac = np.mean(a == 0)
    sigma = np.sqrt(rate * (1 - rate) / n)
    assert abs(zero_frac - rate) < 3 * sigma
    # inverted scaling keeps the expectation
    assert_allclose(a[a != 0], 1 / (1 - rate))
    assert abs(a.mean() - 1.0) < 3 * np.sqrt(rate / (1 - rate) / n)


def test_square_gradient():
    x = leaf(3.0)
    T.backward(x * x)
    assert x.grad == 6.0


def test_disconnected_leaf_gets_zero():
    x, y = leaf([1.0, 2.0]), leaf([5.0])
    T.backward((x * 2).sum(), wrt=[x, y])
    assert_array_equal(y.grad, [0.0])


def test_backward_requires_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(GraphError):
        T.backward(x * 2)


def test_second_backward_raises():
    x = leaf([1.0, 2.0])
    loss = (x * x).sum()
    T.backward(loss)
    with pytest.raises(GraphError):
        T.backward(loss)


def test_shared_subexpression_accumulates():
    x = leaf(2.0)
    y = x * x
    T.backward(y * y + y)  # x^4 + x^2
    assert_allclose(x.grad, 4 * 8 + 2 * 2)


def test_leaf_grads_accumulate_across_graphs():
    x = leaf(1.5)
    T.backward(x * 2)
    T.backward(x * 3)
    assert x.grad == 5.0


def test_softmax_extreme_logits_match_high_precision():
    out = T.softmax(Tensor([1000.0, 0.0])).data
    mpmath.mp.dps = 50
    z = mpmath.exp(1000) + 1
    expected = [float(mpmath.exp(1000) / z), float(1 / z)]
    assert_allclose(out, expected, rtol=1e-12, atol=0)
    assert np.all(np.isfinite(out))


def test_softmax_mask_and_fully_masked_row():
    out = T.softmax(Tensor([[1.0, 2.0, 3.0], [1.0, 1.0, 1.0]]),
                    mask=np.array([[True, False, True], [False, False, False]])).data
    assert out[0, 1] == 0.0
    assert_allclose(out[0].sum(), 1.0)
    assert_array_equal(out[1], 0.0)


def test_softmax_rejects_nan():
    with pytest.raises(NumericError):
        T.softmax(Tensor([np.nan, 1.0]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_normalized_and_shift_invariant(x, c):
    p = T.softmax_rows(Tensor(x)).data
    assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    shifted = T.softmax_rows(Tensor(x + c)).data
    assert_allclose(shifted, p, atol=1e-9)


def test_every_op_matches_finite_differences():
    report = GradcheckReport()
    check_ops(report, T.make_rng(11))
    assert report.passed, report.lines()
    assert len(report.errors) == 21


def test_corrupted_rule_is_detected():
    report = GradcheckReport()
    with T.corrupt_backward("tanh"):
        check_ops(report, T.make_rng(11))
    assert report.failures == ["op:tanh"]


def test_getitem_advanced_index_accumulates():
    x = leaf([1.0, 2.0, 3.0])
    T.backward(x[[0, 0, 2]].sum())
    assert_array_equal(x.grad, [2, 0, 1])


def test_broadcast_gradient_reduced_to_shape():
    a, b = leaf(np.ones((2, 3))), leaf(np.ones(3))
    T.backward((a * b).sum())
    assert_array_equal(b.grad, [2, 2, 2])
