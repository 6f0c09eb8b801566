import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest

import metaspoof as msp

ad = msp.autodiff


def _leaf(values):
    return ad.Tensor(values, requires_grad=True)


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(ad.Tensor(np.eye(2)), ad.Tensor([[1, 2], [3, 4]]))
        assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_orthogonal(self):
        out = ad.Tensor([[1, 0]]) @ ad.Tensor([[0], [1]])
        assert_array_equal(out.data, [[0]])

    def test_shape_error_names_shapes(self):
        with pytest.raises(ad.ShapeError) as e:
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))
        assert '(2, 3)' in str(e.value)

    def test_gradients(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        err = ad.grad_check(lambda ts: ad.sum_all(ad.matmul(ts[0], ts[1])
                                                  * ad.matmul(ts[0], ts[1])),
                            [ad.Tensor(a), ad.Tensor(b)])
        assert err < 1e-5


class TestElementwise:
    def test_add(self):
        out = ad.add(ad.Tensor([1, 2]), ad.Tensor([3, 4]))
        assert_array_equal(out.data, [4, 6])

    def test_mul_by_zero(self):
        x = _leaf([1.0, -2.0, 3.0])
        out = ad.sum_all(ad.mul(x, 0.0))
        ad.backward(out)
        assert_array_equal(out.data, 0.0)
        assert_array_equal(x.grad, [0, 0, 0])

    def test_sub_gradients(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))

        def f(ts):
            d = ad.sub(ts[0], ts[1])
            return ad.sum_all(d * d * ts[0])

        assert ad.grad_check(f, [ad.Tensor(a), ad.Tensor(b)]) < 1e-5

    def test_scalar_broadcast_gradient(self):
        s = _leaf(2.0)
        x = _leaf([1.0, 2.0, 3.0])
        ad.backward(ad.sum_all(s * x))
        assert float(s.grad) == 6.0
        assert_array_equal(x.grad, [2, 2, 2])

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.add(ad.Tensor([1, 2]), ad.Tensor([1, 2, 3]))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ad.elementwise(ad.Tensor([1]), ad.Tensor([1]), 'div')


class TestRelu:
    def test_values(self):
        assert_array_equal(ad.relu(ad.Tensor([-1, 0, 2])).data, [0, 0, 2])

    def test_all_negative(self):
        x = _leaf([-1.0, -3.0])
        out = ad.sum_all(ad.relu(x))
        ad.backward(out)
        assert float(out.data) == 0.0
        assert_array_equal(x.grad, [0, 0])

    def test_subgradient_at_zero(self):
        x = _leaf([0.0, 1.0])
        ad.backward(ad.sum_all(ad.relu(x)))
        assert_array_equal(x.grad, [0, 1])

    def test_gradient_away_from_zero(self):
        x = np.random.default_rng(2).normal(size=(4, 5))
        err = ad.grad_check(lambda t: ad.sum_all(ad.relu(t) * ad.relu(t)),
                            ad.Tensor(x), skip_within=1e-3)
        assert err < 1e-6


class TestSqEuclidean:
    def test_self_distance(self):
        a = ad.Tensor([[1, 2]])
        assert_array_equal(ad.sq_euclidean(a, a).data, [[0]])

    def test_three_four_five(self):
        out = ad.sq_euclidean(ad.Tensor([[0, 0]]), ad.Tensor([[3, 4]]))
        assert_array_equal(out.data, [[25]])

    def test_loop_oracle(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(4, 8)), rng.normal(size=(3, 8))
        expected = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                expected[i, j] = sum((a[i, t] - b[j, t]) ** 2
                                     for t in range(8))
        assert_allclose(ad.sq_euclidean(ad.Tensor(a), ad.Tensor(b)).data,
                        expected, rtol=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a, b = ad.Tensor(rng.normal(size=(5, 3))), ad.Tensor(
            rng.normal(size=(2, 3)))
        assert_allclose(ad.sq_euclidean(a, b).data,
                        ad.sq_euclidean(b, a).data.T, rtol=1e-14)

    def test_gradients(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
        err = ad.grad_check(
            lambda ts: ad.sum_all(ad.sq_euclidean(ts[0], ts[1])
                                  * ad.sq_euclidean(ts[0], ts[1])),
            [ad.Tensor(a), ad.Tensor(b)])
        assert err < 1e-5

    def test_dimension_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.sq_euclidean(ad.Tensor(np.ones((2, 3))),
                            ad.Tensor(np.ones((2, 4))))


class TestSegmentMean:
    def test_means(self):
        x = ad.Tensor([[1, 0], [0, 1], [4, 4]])
        out = ad.segment_mean(x, [0, 0, 1], 2)
        assert_array_equal(out.data, [[0.5, 0.5], [4, 4]])

    def test_empty_segment(self):
        with pytest.raises(ValueError):
            ad.segment_mean(ad.Tensor(np.ones((2, 2))), [0, 0], 2)

    def test_gradients(self):
        x = np.random.default_rng(6).normal(size=(6, 3))
        labels = [0, 1, 2, 0, 1, 1]
        err = ad.grad_check(
            lambda t: ad.sum_all(ad.segment_mean(t, labels, 3)
                                 * ad.segment_mean(t, labels, 3)),
            ad.Tensor(x))
        assert err < 1e-6


class TestLogSoftmax:
    def test_symmetric(self):
        out = ad.log_softmax(ad.Tensor([[0.0, 0.0]]))
        assert_allclose(out.data, [[-np.log(2), -np.log(2)]], rtol=1e-15)

    def test_stable(self):
        out = ad.log_softmax(ad.Tensor([[1000.0, 0.0]])).data
        assert np.isfinite(out).all()
        assert out[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert out[0, 1] == pytest.approx(-1000.0)

    def test_hand_value(self):
        out = ad.log_softmax(ad.Tensor([[0.0, -4.0]])).data
        assert np.exp(out[0, 0]) == pytest.approx(0.98201, abs=1e-5)
        assert np.exp(out[0, 0]) == pytest.approx(1 / (1 + np.exp(-4)),
                                                  rel=1e-12)

    def test_rows_normalize(self):
        x = np.random.default_rng(7).normal(scale=10, size=(20, 6))
        out = ad.log_softmax(ad.Tensor(x)).data
        assert_allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-9)

    def test_nan(self):
        with pytest.raises(ValueError):
            ad.log_softmax(ad.Tensor([[0.0, np.nan]]))

    def test_gradients(self):
        x = np.random.default_rng(8).normal(size=(3, 4))
        w = np.random.default_rng(9).normal(size=(3, 4))
        err = ad.grad_check(
            lambda t: ad.sum_all(ad.log_softmax(t) * ad.Tensor(w)),
            ad.Tensor(x))
        assert err < 1e-6


class TestNllLoss:
    def test_perfect(self):
        lp = ad.Tensor([[0.0, -np.inf], [-np.inf, 0.0]])
        assert float(ad.nll_loss(lp, [0, 1]).data) == 0.0

    def test_uniform(self):
        n = 5
        lp = ad.log_softmax(ad.Tensor(np.zeros((3, n))))
        assert float(ad.nll_loss(lp, [0, 2, 4]).data) == pytest.approx(
            np.log(n), rel=1e-12)

    def test_hand_mean(self):
        lp = np.log(np.array([[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]]))
        expected = -(np.log(0.8) + np.log(0.6) + np.log(0.5)) / 3
        assert float(ad.nll_loss(ad.Tensor(lp), [1, 0, 1]).data) == \
            pytest.approx(expected, rel=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            ad.nll_loss(ad.Tensor(np.zeros((2, 2))), [0, 2])


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = _leaf(np.zeros((2, 3)))
        ad.backward(ad.sum_all(x))
        assert_array_equal(x.grad, np.ones((2, 3)))

    def test_half_squared_norm(self):
        values = np.array([[1.0, -2.0], [0.5, 3.0]])
        x = _leaf(values)
        ad.backward(0.5 * ad.sum_all(x * x))
        assert_allclose(x.grad, values, rtol=1e-15)

    def test_non_scalar(self):
        x = _leaf([1.0, 2.0])
        with pytest.raises(ValueError):
            ad.backward(x * 2.0)

    def test_accumulates(self):
        x = _leaf([1.0, 2.0])
        ad.backward(ad.sum_all(x * 3.0))
        ad.backward(ad.sum_all(x * 3.0))
        assert_array_equal(x.grad, [6, 6])

    def test_zero_grads_gives_identical_grads(self):
        rng = np.random.default_rng(10)
        w = _leaf(rng.normal(size=(3, 2)))
        x = ad.Tensor(rng.normal(size=(4, 3)))
        loss = ad.nll_loss(ad.log_softmax(ad.relu(x @ w)), [0, 1, 1, 0])
        ad.backward(loss)
        first = w.grad.copy()
        ad.zero_grads([w])
        ad.backward(loss)
        assert_array_equal(w.grad, first)

    def test_shared_node(self):
        # y is used twice; its gradient must be the sum of both paths.
        x = _leaf([2.0])
        y = x * x
        ad.backward(ad.sum_all(y + y * 3.0))
        assert_array_equal(x.grad, [16.0])


class TestGradCheck:
    def test_linear_exact(self):
        c = np.random.default_rng(11).normal(size=(3, 3))
        err = ad.grad_check(lambda t: ad.sum_all(t * ad.Tensor(c)),
                            ad.Tensor(np.ones((3, 3))))
        assert err < 1e-9

    def test_quadratic(self):
        x = np.random.default_rng(12).normal(size=(4, 4))
        assert ad.grad_check(lambda t: ad.sum_all(t * t), ad.Tensor(x),
                             h=1e-5) < 1e-6

    def test_skip_within_excludes_origin(self):
        # relu(x)**2 has a kink at 0; excluding that coordinate keeps the
        # check exact.
        x = ad.Tensor([[0.0, 1.0, -1.0]])
        err = ad.grad_check(lambda t: ad.sum_all(ad.relu(t)), x,
                            skip_within=1e-3)
        assert err < 1e-9

    def test_point_not_modified(self):
        x = ad.Tensor([[1.0, 2.0]])
        ad.grad_check(lambda t: ad.sum_all(t * t), x)
        assert_array_equal(x.data, [[1.0, 2.0]])
        assert x.grad is None
