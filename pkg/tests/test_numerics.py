import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slueco.exceptions import DivergenceError, DomainError, ShapeError
from slueco.numerics import (
    ParamStore,
    affine,
    clip_grad_norm,
    grad_check,
    log_softmax,
    logsumexp,
    sgd_step,
    softmax,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestAffine:
    def test_identity(self):
        np.testing.assert_array_equal(affine([1, 2], np.eye(2), [0, 0]), [1, 2])

    def test_zero_input(self):
        np.testing.assert_array_equal(affine([0, 0], [[7, -1], [2, 9]], [3, 4]), [3, 4])

    def test_hand_multiplication(self):
        np.testing.assert_array_equal(affine([1, 1], [[1, 2], [3, 4]], [0, 0]), [3, 7])

    @pytest.mark.parametrize("x, W, b", [
        ([1, 2, 3], np.eye(2), [0, 0]),
        ([1, 2], np.eye(2), [0, 0, 0]),
    ])
    def test_shape_mismatch(self, x, W, b):
        with pytest.raises(ShapeError):
            affine(x, W, b)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])

    def test_large_entries_do_not_overflow(self):
        out = softmax([1000.0, 1000.0, 1000.0])
        np.testing.assert_allclose(out, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_closed_form(self):
        np.testing.assert_allclose(softmax([math.log(1), math.log(3)]), [0.25, 0.75], atol=1e-15)

    def test_empty(self):
        with pytest.raises(DomainError):
            softmax([])

    @given(arrays(np.float64, st.integers(1, 20), elements=finite))
    def test_normalised(self, v):
        p = softmax(v)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) <= 1e-12

    def test_log_softmax_consistent(self, rng):
        v = rng.normal(size=7) * 10
        np.testing.assert_allclose(np.exp(log_softmax(v)), softmax(v), atol=1e-15)


class TestLogsumexp:
    def test_absorbing_zero(self):
        assert logsumexp([-math.inf, 0.0]) == 0.0

    def test_pair(self):
        assert logsumexp([3.5, 3.5]) == pytest.approx(3.5 + math.log(2), abs=1e-15)

    def test_closed_form(self):
        assert logsumexp([math.log(2), math.log(3)]) == pytest.approx(math.log(5), abs=1e-15)

    def test_all_minus_inf(self):
        assert logsumexp([-math.inf, -math.inf]) == -math.inf

    @given(arrays(np.float64, st.integers(1, 30), elements=finite))
    def test_bounds(self, v):
        out = logsumexp(v)
        assert out >= v.max() - 1e-12
        assert out <= v.max() + math.log(len(v)) + 1e-12


class TestSgd:
    def _store(self, value, grad):
        s = ParamStore()
        s.add("w", np.atleast_1d(np.asarray(value, dtype=float)))
        s.grad("w")[...] = grad
        return s

    def test_scalar(self):
        s = self._store(1.0, 2.0)
        sgd_step(s, 0.5)
        assert s["w"][0] == 0.0

    def test_zero_gradient(self):
        s = self._store([1.0, -2.0], 0.0)
        sgd_step(s, 0.3)
        np.testing.assert_array_equal(s["w"], [1.0, -2.0])

    def test_vector(self):
        s = self._store([1.0, 1.0], [1.0, -1.0])
        sgd_step(s, 0.1)
        np.testing.assert_allclose(s["w"], [0.9, 1.1])
        np.testing.assert_array_equal(s.grad("w"), 0.0)

    def test_non_finite_gradient(self):
        s = self._store([1.0], [math.nan])
        with pytest.raises(DivergenceError):
            sgd_step(s, 0.1)

    def test_non_positive_lr(self):
        with pytest.raises(DomainError):
            sgd_step(self._store([1.0], [1.0]), 0.0)

    def test_clip(self):
        s = self._store([0.0, 0.0], [3.0, 4.0])
        assert clip_grad_norm(s, 1.0) == pytest.approx(5.0)
        np.testing.assert_allclose(s.grad("w"), [0.6, 0.8])


class TestParamStore:
    def test_duplicate_name(self):
        s = ParamStore()
        s.add("a", np.zeros(2))
        with pytest.raises(KeyError):
            s.add("a", np.zeros(2))

    def test_shape_guard(self):
        s = ParamStore()
        s.add("a", np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            s["a"] = np.zeros((3, 2))

    def test_state_roundtrip(self, rng):
        s = ParamStore()
        s.add("a", rng.normal(size=(2, 3)))
        snap = s.state_dict()
        s["a"] = np.zeros((2, 3))
        s.load_state_dict(snap)
        np.testing.assert_array_equal(s["a"], snap["a"])


class TestGradCheck:
    def test_quadratic(self, rng):
        A = rng.normal(size=(4, 4))
        A = A @ A.T
        s = ParamStore()
        s.add("x", rng.normal(size=4))

        def f(store):
            x = store["x"]
            store.grad("x")[...] += A @ x
            return 0.5 * x @ A @ x

        assert grad_check(f, s, eps=1e-5) < 1e-9

    def test_softmax_cross_entropy(self, rng):
        s = ParamStore()
        s.add("z", rng.normal(size=6))
        label = 2

        def f(store):
            z = store["z"]
            p = softmax(z)
            g = p.copy()
            g[label] -= 1.0
            store.grad("z")[...] += g
            return -log_softmax(z)[label]

        assert grad_check(f, s, eps=1e-5) < 1e-4

    def test_detects_wrong_gradient(self, rng):
        s = ParamStore()
        s.add("x", rng.normal(size=3))

        def f(store):
            store.grad("x")[...] += 3.0 * store["x"]  # true gradient is 2x
            return float(store["x"] @ store["x"])

        assert grad_check(f, s, eps=1e-5) > 1e-2

    @settings(max_examples=10, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_affine_tanh_random_shapes(self, n_in, n_out, seed):
        r = np.random.default_rng(seed)
        x = r.normal(size=n_in)
        s = ParamStore()
        s.add("W", r.normal(size=(n_out, n_in)))
        s.add("b", r.normal(size=n_out))

        def f(store):
            h = np.tanh(affine(x, store["W"], store["b"]))
            dpre = 2 * h * (1 - h * h)
            store.grad("W")[...] += np.outer(dpre, x)
            store.grad("b")[...] += dpre
            return float(h @ h)

        assert grad_check(f, s, eps=1e-5) < 1e-4
