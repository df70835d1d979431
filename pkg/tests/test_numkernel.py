import numpy as np
import pytest

from action_rnn.errors import ContractViolation, NumericError
from action_rnn.numkernel import (
    AdamState, adam_step, child_rngs, glorot_init, log_softmax, make_rng, matvec, softmax, topk,
)


class TestMatvec:
    def test_product(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(matvec(W, np.array([1.0, -1.0])), [-1.0, -1.0, -1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            matvec(np.zeros((3, 2)), np.zeros(3))


class TestSoftmax:
    def test_sums_to_one(self):
        p = softmax(make_rng(1).normal(size=50))
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert (p > 0).all()

    def test_large_logits_stay_finite(self):
        p = softmax(np.array([1000.0, 999.0, -1000.0]))
        assert np.isfinite(p).all()
        assert p[0] > p[1] > p[2]

    def test_log_softmax_matches_log_of_softmax(self):
        x = make_rng(2).normal(size=(3, 7))
        np.testing.assert_allclose(log_softmax(x), np.log(softmax(x)), atol=1e-12)

    def test_shift_invariant(self):
        x = make_rng(3).normal(size=20)
        np.testing.assert_allclose(softmax(x + 123.0), softmax(x), atol=1e-12)

    def test_logits_spanning_ten_thousand(self):
        x = make_rng(4).uniform(-1e4, 1e4, size=100)
        p = softmax(x)
        assert np.isfinite(p).all()
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.isfinite(log_softmax(x)).all()

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            softmax(np.array([0.0, np.nan]))
        with pytest.raises(NumericError):
            log_softmax(np.array([np.inf, 0.0]))


class TestTopk:
    def test_descending(self):
        assert topk(np.array([0.1, 0.9, 0.5, 0.7]), 3) == [1, 3, 2]

    def test_ties_break_to_lower_index(self):
        assert topk(np.array([0.5, 0.9, 0.5, 0.5]), 3) == [1, 0, 2]

    def test_k_equal_to_v(self):
        assert sorted(topk(np.arange(5.0), 5)) == [0, 1, 2, 3, 4]

    def test_matches_full_sort(self):
        rng = make_rng(5)
        for trial in range(1000):
            V = int(rng.integers(1, 40))
            # integer scores force plenty of ties
            s = rng.integers(-3, 4, size=V).astype(float) if trial % 2 else rng.normal(size=V)
            K = int(rng.integers(0, V + 1))
            assert topk(s, K) == sorted(range(V), key=lambda i: (-s[i], i))[:K]

    def test_k_larger_than_v(self):
        with pytest.raises(ContractViolation):
            topk(np.zeros(3), 4)


class TestInit:
    def test_glorot_bounds(self):
        W = glorot_init(make_rng(0), 40, 60)
        limit = np.sqrt(6.0 / 100)
        assert W.shape == (40, 60)
        assert np.abs(W).max() <= limit
        # roughly uniform: variance of U(-a, a) is a^2/3
        assert W.var() == pytest.approx(limit**2 / 3, rel=0.1)

    def test_same_seed_same_draws(self):
        a = glorot_init(make_rng(7), 3, 4)
        np.testing.assert_array_equal(a, glorot_init(make_rng(7), 3, 4))

    def test_child_rngs_are_reproducible_and_distinct(self):
        a = [r.random() for r in child_rngs(5, 3)]
        b = [r.random() for r in child_rngs(5, 3)]
        assert a == b
        assert len(set(a)) == 3


class TestAdam:
    def test_first_step_moves_by_lr(self):
        params = {"w": np.array([1.0, -2.0, 0.5])}
        grads = {"w": np.array([0.3, -4.0, 1e-3])}
        state = AdamState.zeros_like(params)
        adam_step(params, grads, state, lr=0.01)
        # bias correction makes the first update lr * g / (|g| + eps)
        np.testing.assert_allclose(params["w"], [0.99, -1.99, 0.49], atol=1e-6)
        assert state.t == 1

    def test_updates_in_place_and_counts_steps(self):
        w = np.ones(2)
        params = {"w": w}
        state = AdamState.zeros_like(params)
        for _ in range(3):
            adam_step(params, {"w": np.ones(2)}, state, lr=0.1)
        assert state.t == 3
        assert params["w"] is w
        assert (w < 1.0).all()

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        with pytest.raises(ContractViolation):
            adam_step(params, {"w": np.zeros(2)}, AdamState.zeros_like(params), lr=0.1)

    def test_non_finite_gradient_names_tensor(self):
        params = {"w": np.zeros(2), "b": np.zeros(1)}
        state = AdamState.zeros_like(params)
        with pytest.raises(NumericError, match="b"):
            adam_step(params, {"w": np.zeros(2), "b": np.array([np.nan])}, state, lr=0.1)
        assert state.t == 0
        np.testing.assert_array_equal(params["w"], 0.0)

    def test_zero_gradient_leaves_parameters(self):
        params = {"w": np.array([0.3, -1.2])}
        state = AdamState.zeros_like(params)
        for _ in range(4):
            adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"], [0.3, -1.2])

    def test_matches_hand_stepped_quadratic(self):
        w = 1.5
        params = {"w": np.array([w])}
        state = AdamState.zeros_like(params)
        m = v = 0.0
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.05
        for t in range(1, 11):
            g = 2.0 * w
            adam_step(params, {"w": np.array([g])}, state, lr=lr)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w -= lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
            assert params["w"][0] == pytest.approx(w, rel=1e-12)
