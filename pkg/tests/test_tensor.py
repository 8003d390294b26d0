from __future__ import annotations

import numpy as np
import pytest

from segpack.tensor import (NonFiniteError, ShapeError, Tensor, grad_check, l2_normalize,
                            masked_softmax, matmul, pointwise, relu, sum_all, transpose)


def test_matmul_identity_passthrough():
    a = Tensor(np.eye(3))
    b = Tensor(np.arange(6.0).reshape(3, 2))
    out = matmul(a, b)
    np.testing.assert_array_equal(out.data, b.data)


def test_matmul_hand_computed():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0], [6.0]])
    np.testing.assert_array_equal(matmul(a, b).data, [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    err = grad_check(lambda: sum_all(matmul(a, b)), [a, b], eps=1e-5)
    assert err < 1e-6


def test_pointwise_fixed_points():
    assert pointwise("sigmoid", Tensor([0.0])).data[0] == 0.5
    assert pointwise("tanh", Tensor([0.0])).data[0] == 0.0


def test_sigmoid_backward_at_zero_is_quarter():
    x = Tensor([0.0], requires_grad=True)
    out = sum_all(pointwise("sigmoid", x))
    out.backward()
    assert abs(x.grad[0] - 0.25) < 1e-12
    err = grad_check(lambda: sum_all(pointwise("sigmoid", x)), [x], eps=1e-5)
    assert err < 1e-8


def test_pointwise_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        pointwise("add", Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_pointwise_scale():
    out = pointwise("scale", Tensor([1.0, -2.0]), 2.5)
    np.testing.assert_allclose(out.data, [2.5, -5.0])


def test_masked_softmax_uniform():
    out = masked_softmax(Tensor([1.0, 1.0, 1.0]), np.array([1.0, 1.0, 1.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_masked_softmax_masks_exactly():
    out = masked_softmax(Tensor([5.0, -2.0, 7.0]), np.array([1.0, 0.0, 1.0]))
    assert out.data[1] == 0.0
    expected = np.exp([5.0, 7.0] - np.max([5.0, 7.0]))
    expected = expected / expected.sum()
    np.testing.assert_allclose(out.data[[0, 2]], expected, atol=1e-15)


def test_masked_softmax_matches_brute_force_oracle():
    rng = np.random.default_rng(7)
    scores = rng.normal(size=6)
    mask = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 1.0])
    # oracle: plain exp / normalize over the unmasked entries
    exp = np.exp(scores) * mask
    oracle = exp / exp.sum()
    out = masked_softmax(Tensor(scores), mask)
    assert np.abs(out.data - oracle).max() < 1e-12


def test_masked_softmax_distribution_property():
    rng = np.random.default_rng(123)
    for _ in range(50):
        n = int(rng.integers(1, 9))
        scores = rng.normal(size=n) * 5
        mask = (rng.random(n) < 0.6).astype(float)
        if mask.sum() == 0:
            mask[int(rng.integers(n))] = 1.0
        out = masked_softmax(Tensor(scores), mask).data
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.all(out[mask == 0] == 0.0)


def test_masked_softmax_empty_support_rejected():
    with pytest.raises(ValueError, match="empty attention support"):
        masked_softmax(Tensor([1.0, 2.0]), np.array([0.0, 0.0]))


def test_grad_check_quadratic():
    x = Tensor([1.0, 2.0], requires_grad=True)
    err = grad_check(lambda: sum_all(pointwise("mul", x, x)), [x], eps=1e-5)
    assert err < 1e-8
    out = sum_all(pointwise("mul", x, x))
    out.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=1e-12)


def test_grad_check_constant_function():
    x = Tensor([3.0], requires_grad=True)
    c = Tensor([1.0])
    assert grad_check(lambda: sum_all(c), [x], eps=1e-5) == 0.0


def test_grad_check_rejects_non_finite():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(NonFiniteError):
        grad_check(lambda: sum_all(pointwise("scale", x, float("inf"))), [x])


def test_grad_accumulates_across_backward_calls():
    x = Tensor([1.0, -1.0], requires_grad=True)
    for _ in range(2):
        sum_all(pointwise("scale", x, 3.0)).backward()
    np.testing.assert_allclose(x.grad, [6.0, 6.0])
    x.zero_grad()
    assert x.grad is None


def test_l2_normalize_rows_and_zero_norm_error():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 3)))
    out = l2_normalize(x)
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError, match="zero-norm embedding"):
        l2_normalize(Tensor(np.zeros((1, 3))))


def _random_op_scalar(rng, op, params):
    a, b = params
    if op == "matmul":
        return sum_all(matmul(a, b))
    if op in ("add", "mul", "sub"):
        return sum_all(pointwise(op, a, b))
    if op in ("tanh", "sigmoid"):
        return sum_all(pointwise(op, a))
    if op == "scale":
        return sum_all(pointwise("scale", a, 1.7))
    if op == "relu":
        return sum_all(relu(a))
    if op == "l2norm":
        return sum_all(l2_normalize(a))
    if op == "softmax":
        mask = np.ones(a.shape)
        return sum_all(pointwise("mul", masked_softmax(a, mask), b))
    raise AssertionError(op)


@pytest.mark.parametrize("op", ["matmul", "add", "mul", "sub", "tanh", "sigmoid",
                                "scale", "relu", "l2norm", "softmax"])
def test_every_op_gradient_matches_finite_differences_100_seeds(op):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        m, k, n = (int(rng.integers(1, 9)) for _ in range(3))
        if op == "matmul":
            a = Tensor(rng.normal(size=(m, k)), requires_grad=True)
            b = Tensor(rng.normal(size=(k, n)), requires_grad=True)
        else:
            a = Tensor(rng.normal(size=(m, k)), requires_grad=True)
            b = Tensor(rng.normal(size=(m, k)), requires_grad=True)
        if op == "relu":
            # keep entries away from the kink so the subgradient is the gradient
            a.data[np.abs(a.data) < 1e-2] += 0.05
        err = grad_check(lambda: _random_op_scalar(rng, op, (a, b)), [a, b], eps=1e-5)
        assert err < 1e-4, f"op={op} seed={seed} err={err}"


def test_transpose_roundtrip_and_grad():
    rng = np.random.default_rng(3)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    assert transpose(transpose(a)).data.tolist() == a.data.tolist()
    err = grad_check(lambda: sum_all(matmul(transpose(a), a)), [a], eps=1e-5)
    assert err < 1e-6


def test_values_view_is_flat_row_major():
    t = Tensor(np.arange(6.0).reshape(2, 3))
    assert t.values.tolist() == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    assert t.shape == (2, 3)
