from __future__ import annotations

import numpy as np
import pytest

from segpack.optim import adam_init, adam_update
from segpack.tensor import NonFiniteError, Tensor


def _adam_oracle(grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Direct evaluation of the bias-corrected update formula."""
    m = v = 0.0
    deltas = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        deltas.append(-lr * m_hat / (np.sqrt(v_hat) + eps))
    return deltas


def test_zero_gradient_leaves_parameters_alone():
    p = Tensor([1.0, 2.0], requires_grad=True)
    state = adam_init([p], lr=0.01)
    adam_update(state, [p], grads=[np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert state.step == 1


def test_first_step_is_minus_lr_for_unit_gradient():
    p = Tensor([0.0], requires_grad=True)
    state = adam_init([p], lr=0.0002)
    adam_update(state, [p], grads=[np.array([1.0])])
    delta = p.data[0] - 0.0
    assert abs(delta + 0.0002) < 1e-6


def test_two_identical_gradients_match_formula_oracle():
    lr = 0.05
    p = Tensor([0.3], requires_grad=True)
    state = adam_init([p], lr=lr)
    expected = 0.3
    for delta in _adam_oracle([0.7, 0.7], lr=lr):
        adam_update(state, [p], grads=[np.array([0.7])])
        expected += delta
        assert abs(p.data[0] - expected) < 1e-15
    assert state.step == 2


def test_update_is_deterministic():
    rng = np.random.default_rng(5)
    grads = [rng.normal(size=(3, 2)), rng.normal(size=4)]

    def run():
        ps = [Tensor(np.ones((3, 2)), requires_grad=True),
              Tensor(np.ones(4), requires_grad=True)]
        state = adam_init(ps, lr=0.01)
        for _ in range(3):
            adam_update(state, ps, grads=grads)
        return np.concatenate([p.data.reshape(-1) for p in ps])

    np.testing.assert_array_equal(run(), run())


def test_non_finite_gradient_aborts_without_partial_update():
    p1 = Tensor([1.0], requires_grad=True)
    p2 = Tensor([2.0], requires_grad=True)
    state = adam_init([p1, p2], lr=0.1)
    with pytest.raises(NonFiniteError):
        adam_update(state, [p1, p2], grads=[np.array([1.0]), np.array([np.nan])])
    np.testing.assert_array_equal(p1.data, [1.0])
    np.testing.assert_array_equal(p2.data, [2.0])
    assert state.step == 0
    np.testing.assert_array_equal(state.m, np.zeros(2))


def test_grads_default_to_accumulated_buffers():
    p = Tensor([1.0], requires_grad=True)
    p.grad = np.array([2.0])
    state = adam_init([p], lr=0.001)
    adam_update(state, [p])
    assert p.data[0] < 1.0


def test_moment_arrays_cover_total_parameter_count():
    ps = [Tensor(np.zeros((2, 3)), requires_grad=True), Tensor(np.zeros(5), requires_grad=True)]
    state = adam_init(ps)
    assert state.m.size == 11 and state.v.size == 11
