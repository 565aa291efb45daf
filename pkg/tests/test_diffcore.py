"""Autodiff engine: forward values, gradients vs finite differences, SGD."""

import numpy as np
import pytest

from fgssl import autodiff as ad
from fgssl.autodiff import NumericsError, SgdState, Tensor, backward, grad_check, sgd_step


def test_row_softmax_symmetry():
    out = ad.row_softmax(Tensor(np.array([[0.0, 0.0]])))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]])


def test_leaky_relu_negative_slope():
    out = ad.leaky_relu(Tensor(np.array([[-1.0]])), slope=0.2)
    assert out.data[0, 0] == pytest.approx(-0.2)


def test_segment_softmax_single_segment_uniform():
    out = ad.segment_softmax(Tensor(np.array([1.0, 1.0, 1.0])), np.array([0, 0, 0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3])


def test_softmax_rows_normalized():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 7)) * 10
    out = ad.row_softmax(Tensor(x))
    assert (out.data >= 0).all()
    np.testing.assert_allclose(out.data.sum(axis=1), np.ones(5), atol=1e-12)


def test_segment_softmax_normalized_per_segment():
    rng = np.random.default_rng(1)
    segs = np.array([0, 0, 1, 1, 1, 4, 4, 7])
    out = ad.segment_softmax(Tensor(rng.standard_normal(8) * 5), segs)
    starts = np.flatnonzero(np.r_[True, segs[1:] != segs[:-1]])
    np.testing.assert_allclose(np.add.reduceat(out.data, starts), np.ones(4), atol=1e-12)


def test_backward_square():
    x = Tensor(np.array([[3.0]]), requires_grad=True)
    backward(ad.reduce_sum(ad.mul(x, x)))
    np.testing.assert_allclose(x.grad, [[6.0]])


def test_backward_matmul_sum_matches_closed_form():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    w = rng.standard_normal((3, 5))
    backward(ad.reduce_sum(ad.matmul(x, Tensor(w))))
    np.testing.assert_allclose(x.grad, np.ones((4, 5)) @ w.T, atol=1e-12)
    assert grad_check(lambda a: ad.reduce_sum(ad.matmul(a, Tensor(w))), [x.data]) <= 1e-9


def test_backward_composite_softmax_log_sum():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 4))

    def f(a):
        return ad.reduce_sum(ad.mul(ad.row_log_softmax(a), Tensor(w)))

    assert grad_check(f, [x], step=1e-5) <= 1e-6


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        backward(ad.mul(x, x))


def test_repeated_backward_is_error():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    y = ad.reduce_sum(ad.mul(x, x))
    backward(y)
    with pytest.raises(RuntimeError):
        backward(y)


def test_gradients_accumulate_additively():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    backward(ad.reduce_sum(ad.mul(x, x)))
    backward(ad.reduce_sum(ad.mul(x, x)))
    np.testing.assert_allclose(x.grad, [[8.0]])


def test_non_finite_forward_raises():
    x = Tensor(np.array([[800.0]]))
    with pytest.raises(NumericsError):
        ad.exp(x)
    with pytest.raises(NumericsError):
        ad.log(Tensor(np.array([[0.0]])))


# --- sgd -------------------------------------------------------------------


def test_sgd_plain_step():
    p = Tensor(np.array([1.0]), requires_grad=True)
    sgd_step([p], [np.array([1.0])], SgdState(lr=0.1, momentum=0.0, weight_decay=0.0))
    np.testing.assert_allclose(p.data, [0.9])


def test_sgd_weight_decay_only():
    p = Tensor(np.array([1.0]), requires_grad=True)
    sgd_step([p], [np.array([0.0])], SgdState(lr=1.0, momentum=0.0, weight_decay=5e-4))
    np.testing.assert_allclose(p.data, [0.9995])


def test_sgd_momentum_two_steps():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = SgdState(lr=1.0, momentum=0.9, weight_decay=0.0)
    sgd_step([p], [np.array([1.0])], state)
    sgd_step([p], [np.array([1.0])], state)
    np.testing.assert_allclose(p.data, [-2.9])


def test_sgd_zero_lr_is_identity():
    rng = np.random.default_rng(4)
    p = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    before = p.data.copy()
    sgd_step([p], [rng.standard_normal((3, 3))], SgdState(lr=0.0))
    assert np.array_equal(p.data, before)


def test_sgd_rejects_non_finite_gradient():
    p = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(NumericsError):
        sgd_step([p], [np.array([np.nan])], SgdState(lr=0.1))


# --- per-primitive gradient checks ----------------------------------------


def _smooth_cases():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    m = rng.standard_normal((4, 2))
    v = rng.standard_normal(6)
    segs = np.array([0, 0, 0, 1, 1, 2])
    idx = np.array([2, 0, 1, 2])
    w44 = rng.standard_normal((4, 4))
    w32 = rng.standard_normal((3, 2))
    w34 = rng.standard_normal((3, 4))
    w41 = rng.standard_normal((4, 1))
    w61 = rng.standard_normal(6)
    wseg = rng.standard_normal((3, 4))
    return [
        ("add", lambda x, y: ad.reduce_sum(ad.mul(ad.add(x, y), Tensor(w34))), [a, b]),
        ("add_broadcast", lambda x, y: ad.reduce_sum(ad.mul(ad.add(x, y), Tensor(w34))), [a, b[:, :1]]),
        ("sub", lambda x, y: ad.reduce_sum(ad.mul(ad.sub(x, y), Tensor(w34))), [a, b]),
        ("mul", lambda x, y: ad.reduce_sum(ad.mul(ad.mul(x, y), Tensor(w34))), [a, b]),
        ("scale", lambda x: ad.reduce_sum(ad.mul(ad.scale(x, -1.7), Tensor(w34))), [a]),
        ("matmul", lambda x, y: ad.reduce_sum(ad.mul(ad.matmul(x, y), Tensor(w32))), [a, m]),
        ("transpose", lambda x: ad.reduce_sum(ad.mul(ad.transpose(x), Tensor(w34.T))), [a]),
        ("concat_rows", lambda x, y: ad.reduce_sum(ad.mul(ad.concat_rows([x, y]), Tensor(np.vstack([w34, w34])))), [a, b]),
        ("concat_cols", lambda x, y: ad.reduce_sum(ad.mul(ad.concat_cols([x, y]), Tensor(np.hstack([w34, w34])))), [a, b]),
        ("gather_rows", lambda x: ad.reduce_sum(ad.mul(ad.gather_rows(x, idx), Tensor(w44))), [a]),
        ("reshape", lambda x: ad.reduce_sum(ad.mul(ad.reshape(x, (4, 3)), Tensor(w34.T))), [a]),
        ("exp", lambda x: ad.reduce_sum(ad.mul(ad.exp(x), Tensor(w34))), [a]),
        ("log", lambda x: ad.reduce_sum(ad.mul(ad.log(x), Tensor(w34))), [np.abs(a) + 0.5]),
        ("row_softmax", lambda x: ad.reduce_sum(ad.mul(ad.row_softmax(x), Tensor(w34))), [a]),
        ("row_log_softmax", lambda x: ad.reduce_sum(ad.mul(ad.row_log_softmax(x), Tensor(w34))), [a]),
        ("segment_softmax", lambda x: ad.dot(ad.segment_softmax(x, segs), Tensor(w61)), [v]),
        ("segment_log_softmax", lambda x: ad.dot(ad.segment_log_softmax(x, segs), Tensor(w61)), [v]),
        ("segment_sum", lambda x: ad.reduce_sum(ad.mul(ad.segment_sum(x, np.array([0, 0, 2]), 3), Tensor(wseg))), [a]),
        ("row_sum", lambda x: ad.reduce_sum(ad.mul(ad.row_sum(x), Tensor(w32[:, :1]))), [a]),
        ("row_dot", lambda x, y: ad.dot(ad.row_dot(x, y), Tensor(w32[:, 0])), [a, b]),
        ("row_l2_normalize", lambda x: ad.reduce_sum(ad.mul(ad.row_l2_normalize(x), Tensor(w34))), [a + 2.0]),
        ("reduce_mean", lambda x: ad.reduce_mean(ad.mul(x, x)), [a]),
        ("dot", lambda x, y: ad.dot(x, y), [a, b]),
    ]


@pytest.mark.parametrize("name,fn,inputs", _smooth_cases(), ids=[c[0] for c in _smooth_cases()])
def test_smooth_primitive_gradients(name, fn, inputs):
    assert grad_check(fn, inputs, step=1e-5) <= 1e-6


@pytest.mark.parametrize("op,slope", [("leaky_relu", 0.2), ("elu", None)])
def test_kinked_primitive_gradients_off_kink(op, slope):
    rng = np.random.default_rng(6)
    x = rng.standard_normal((3, 4))
    x[np.abs(x) < 0.05] += 0.1  # keep inputs away from the kink at 0
    w = rng.standard_normal((3, 4))
    if op == "leaky_relu":
        fn = lambda a: ad.reduce_sum(ad.mul(ad.leaky_relu(a, slope), Tensor(w)))
    else:
        fn = lambda a: ad.reduce_sum(ad.mul(ad.elu(a), Tensor(w)))
    assert grad_check(fn, [x], step=1e-5) <= 1e-4


def test_grad_check_linear_is_exact():
    # central differences have zero truncation error on a linear map, so a
    # larger step only suppresses rounding noise
    rng = np.random.default_rng(7)
    w = rng.standard_normal((4, 3))
    fn = lambda x: ad.reduce_sum(ad.mul(x, Tensor(w)))
    assert grad_check(fn, [rng.standard_normal((4, 3))], step=1e-3) <= 1e-9


def test_inference_forward_builds_no_graph():
    out = ad.matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
    assert not out.requires_grad and out._parents == ()
