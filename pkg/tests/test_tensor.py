import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ican import kernels
from ican import tensor as T
from ican.tensor import DegenerateBoxError, ShapeError, Tensor

from oracles import check_gradients, naive_conv2d, naive_matmul


def P(data):
    return Tensor(np.array(data, dtype=float), requires_grad=True)


# --- matmul -----------------------------------------------------------------


def test_matmul_identity():
    a = T.tensor(np.eye(2))
    b = T.tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(T.matmul(a, b).data, [[1, 2], [3, 4]])


def test_matmul_row_by_column():
    assert T.matmul(T.tensor([[1, 2]]), T.tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 5))
    np.testing.assert_allclose(T.matmul(T.tensor(a), T.tensor(b)).data, naive_matmul(a, b), atol=1e-12, rtol=0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 3))))


# --- conv2d -----------------------------------------------------------------


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((1, 5, 5))
    out = T.conv2d(T.tensor(x), T.tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_conv_constant_field():
    out = T.conv2d(T.tensor(np.ones((1, 5, 5))), T.tensor(np.ones((1, 1, 3, 3))))
    np.testing.assert_array_equal(out.data, np.full((1, 3, 3), 9.0))


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 2), (3, 2, 5)])
def test_conv_matches_six_loop_oracle(rng, stride, pad, k):
    x, w = rng.standard_normal((3, 7, 6)), rng.standard_normal((4, 3, k, k))
    out = T.conv2d(T.tensor(x), T.tensor(w), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, stride, pad), atol=1e-12, rtol=0)


def test_conv_output_size_floor():
    out = T.conv2d(T.tensor(np.ones((1, 6, 6))), T.tensor(np.ones((1, 1, 3, 3))), stride=2)
    assert out.shape == (1, 2, 2)


def test_conv_errors():
    x, w = T.tensor(np.ones((1, 2, 2))), T.tensor(np.ones((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        T.conv2d(x, w)
    with pytest.raises(ValueError):
        T.conv2d(T.tensor(np.ones((1, 4, 4))), w, stride=0)


# --- softmax ----------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(T.tensor([0, 0, 0, 0])).data, [0.25] * 4)


def test_softmax_large_logits_no_overflow():
    np.testing.assert_allclose(T.softmax(T.tensor([1000.0, 1000.0])).data, [0.5, 0.5])


def test_softmax_ln3():
    np.testing.assert_allclose(T.softmax(T.tensor([0.0, np.log(3.0)])).data, [0.25, 0.75], atol=1e-15)


def test_softmax_empty_rejected():
    with pytest.raises(ShapeError):
        T.softmax(T.tensor(np.zeros(0)))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(x, c):
    y = T.softmax(T.tensor(x)).data
    assert abs(y.sum() - 1.0) <= 1e-9
    assert np.all(y > 0) or np.all(y >= 0)
    np.testing.assert_allclose(T.softmax(T.tensor(x + c)).data, y, atol=1e-12, rtol=0)


# --- roi pooling ------------------------------------------------------------


def test_roi_full_box_identity(rng):
    x = rng.standard_normal((3, 4, 4))
    out = T.roi_pool(T.tensor(x), (0, 0, 4, 4), out=4)
    np.testing.assert_array_equal(out.data, x)


def test_roi_constant_map():
    out = T.roi_pool(T.tensor(np.full((2, 6, 6), 3.5)), (1, 1, 5, 6), out=3)
    np.testing.assert_array_equal(out.data, np.full((2, 3, 3), 3.5))


def test_roi_quadrant_max(rng):
    x = rng.standard_normal((1, 8, 8))
    out = T.roi_pool(T.tensor(x), (0, 0, 8, 8), out=2)
    expected = [[x[0, :4, :4].max(), x[0, :4, 4:].max()], [x[0, 4:, :4].max(), x[0, 4:, 4:].max()]]
    np.testing.assert_array_equal(out.data[0], expected)


def test_roi_spatial_scale_projects_box(rng):
    x = rng.standard_normal((1, 8, 8))
    out = T.roi_pool(T.tensor(x), (0, 0, 64, 64), out=2, spatial_scale=1 / 8)
    assert out.data[0, 0, 0] == x[0, :4, :4].max()


def test_roi_degenerate_box_rejected():
    with pytest.raises(DegenerateBoxError):
        T.roi_pool(T.tensor(np.ones((1, 8, 8))), (1.0, 1.0, 1.2, 4.0), out=2)
    with pytest.raises(DegenerateBoxError):
        T.roi_pool(T.tensor(np.ones((1, 8, 8))), (20, 20, 30, 30), out=2)


def test_roi_ties_go_to_lower_index():
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    T.backward(T.tsum(T.roi_pool(x, (0, 0, 2, 2), out=1)))
    np.testing.assert_array_equal(x.grad[0], [[1, 0], [0, 0]])


# --- global average pooling -------------------------------------------------


def test_gap_constant():
    np.testing.assert_array_equal(T.global_avg_pool(T.tensor(np.full((3, 2, 5), 1.5))).data, [1.5] * 3)


def test_gap_example():
    assert T.global_avg_pool(T.tensor([[[1, 2], [3, 4]]])).data.tolist() == [2.5]


def test_gap_matches_sum_oracle(rng):
    x = rng.standard_normal((4, 3, 5))
    expected = [sum(x[c, i, j] for i in range(3) for j in range(5)) / 15 for c in range(4)]
    np.testing.assert_allclose(T.global_avg_pool(T.tensor(x)).data, expected, atol=1e-12, rtol=0)


# --- backward ---------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = P(np.arange(6.0).reshape(2, 3))
    T.backward(T.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_sigmoid_at_zero(rng):
    xv = rng.standard_normal((3, 1))
    w = P(np.zeros((1, 3)))
    T.backward(T.sigmoid(T.matmul(w, T.tensor(xv))))
    np.testing.assert_allclose(w.grad, 0.25 * xv.T, atol=1e-15)


def test_backward_rejects_non_scalar():
    with pytest.raises(ShapeError):
        T.backward(P(np.ones(3)))


def test_unreachable_param_gets_zero_grad():
    x, unused = P([1.0, 2.0]), P([[3.0]])
    T.backward(T.tsum(x), [x, unused])
    np.testing.assert_array_equal(unused.grad, [[0.0]])


def test_shared_subexpression_accumulates():
    x = P([2.0])
    y = x * x  # used twice below
    T.backward(T.tsum(y + y))
    np.testing.assert_allclose(x.grad, [8.0])


def test_no_grad_skips_tape():
    x = P([1.0])
    with T.no_grad():
        y = T.sigmoid(x)
    assert not y.requires_grad and y._parents == ()


def u(rng, *shape):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)


def case_matmul(r):
    a, b = u(r, 3, 4), u(r, 4, 2)
    return [a, b], lambda: T.tsum(T.sigmoid(T.matmul(a, b)))


def case_conv(r):
    x, w, b = u(r, 2, 6, 5), u(r, 3, 2, 3, 3), u(r, 3)
    return [x, w, b], lambda: T.tsum(T.relu(T.conv2d(x, w, b, stride=2, pad=1)) * 1.3)


def case_softmax(r):
    x, c = u(r, 7), Tensor(r.uniform(-1, 1, 7))
    return [x], lambda: T.tsum(T.softmax(x) * c)


def case_roi_pool(r):
    x = u(r, 2, 6, 6)
    return [x], lambda: T.tsum(T.roi_pool(x, (0.5, 1, 5.5, 6), out=3) * 2.0)


def case_max_pool(r):
    x = u(r, 2, 6, 6)
    return [x], lambda: T.tsum(T.max_pool2d(x, 2))


def case_gap(r):
    x = u(r, 3, 4, 2)
    return [x], lambda: T.tsum(T.sigmoid(T.global_avg_pool(x)))


def case_concat(r):
    a, b, c = u(r, 3), u(r, 2), u(r, 5)
    return [a, b, c], lambda: T.tsum(T.concat([a, b]) * c + c)


def case_reshape_mean(r):
    a = u(r, 2, 6)
    return [a], lambda: T.mean(T.reshape(a, (3, 4)) * T.reshape(a, (3, 4)))


def case_bce(r):
    z = u(r, 5)
    return [z], lambda: T.bce_with_logits(z * 3.0, [1, 0, 1, 1, 0])


def case_linear(r):
    x, w, b = u(r, 4), u(r, 4, 3), u(r, 3)
    return [x, w, b], lambda: T.tsum(T.sigmoid(T.linear(x, w, b)))


GRAD_CASES = {f.__name__[5:]: f for f in (case_matmul, case_conv, case_softmax, case_roi_pool, case_max_pool, case_gap, case_concat, case_reshape_mean, case_bce, case_linear)}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_op_gradients_match_finite_differences(name, rng):
    params, build = GRAD_CASES[name](rng)
    assert check_gradients(build, params) < 1e-4


def test_forward_is_deterministic(rng):
    x, w = rng.standard_normal((3, 6, 6)), rng.standard_normal((2, 3, 3, 3))
    a = T.conv2d(T.tensor(x), T.tensor(w), pad=1).data
    b = T.conv2d(T.tensor(x), T.tensor(w), pad=1).data
    assert a.tobytes() == b.tobytes()


# --- numba and numpy kernels agree -------------------------------------------


def test_kernel_backends_agree(rng):
    xp = rng.standard_normal((3, 9, 8))
    for k, s in [(3, 1), (2, 2), (3, 2)]:
        ho, wo = (9 - k) // s + 1, (8 - k) // s + 1
        cols = kernels.im2col_np(xp, k, s, ho, wo)
        np.testing.assert_array_equal(cols, kernels.im2col_nb(xp, k, s, ho, wo))
        np.testing.assert_allclose(kernels.col2im_np(cols, 3, 9, 8, k, s, ho, wo), kernels.col2im_nb(cols, 3, 9, 8, k, s, ho, wo), atol=1e-12)
    hb, wb = T.roi_bins((1, 0, 8, 7), xp.shape, 3)
    o1, a1 = kernels.roi_max_pool_np(xp, hb, wb)
    o2, a2 = kernels.roi_max_pool_nb(xp, hb, wb)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(a1, a2)
    g = rng.standard_normal(o1.shape)
    np.testing.assert_allclose(kernels.scatter_argmax_np(g, a1, 9, 8), kernels.scatter_argmax_nb(g, a1, 9, 8), atol=1e-12)
    m1, i1 = kernels.max_pool_np(xp, 2)
    m2, i2 = kernels.max_pool_nb(xp, 2)
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_array_equal(i1, i2)
    boxes_a = rng.uniform(0, 10, (5, 2))
    boxes_a = np.hstack([boxes_a, boxes_a + rng.uniform(0.5, 5, (5, 2))])
    boxes_b = boxes_a[::-1] + 0.5
    np.testing.assert_allclose(kernels.iou_matrix_np(boxes_a, boxes_b), kernels.iou_matrix_nb(boxes_a, boxes_b), atol=1e-15)
