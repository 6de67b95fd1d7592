import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lopalt import prox
from lopalt.exceptions import DimensionError, ParameterError
from lopalt.prox import (
    phi,
    project_l1_ball,
    prox_absolute_loss,
    prox_perspective,
    prox_perspective_vector,
    prox_quadratic_loss,
    soft_threshold,
    varphi,
)
from oracles import project_l1_bruteforce, prox_perspective_grid, _persp_obj

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
positive = st.floats(1e-3, 20, allow_nan=False, allow_infinity=False)
BACKENDS = ["numpy"] + (["numba"] if prox.numba is not None else [])


class TestPhi:
    def test_values(self):
        assert phi(0.0, 0.0) == 0.0
        assert phi(2.0, 2.0) == 2.0
        assert phi(1.0, 0.0) == math.inf
        assert phi(1.0, -1.0) == math.inf
        assert phi(0.0, -1.0) == math.inf

    def test_minimum_over_tau(self):
        taus = np.linspace(0.01, 10, 100001)
        vals = phi(3.0, taus)
        assert vals.min() == pytest.approx(3.0, abs=1e-9)
        assert taus[np.argmin(vals)] == pytest.approx(3.0, abs=1e-3)

    @given(x=finite, tau=st.floats(0, 50))
    def test_lower_bound_by_abs(self, x, tau):
        assert phi(x, tau) >= abs(x) - 1e-12 * (1 + abs(x))
        assert phi(x, abs(x)) == pytest.approx(abs(x), rel=1e-12, abs=1e-300)
        assert phi(x, tau) == phi(-x, tau)

    def test_varphi(self):
        assert varphi(np.zeros(3), np.zeros(3)) == 0.0
        assert varphi([2.0, 0.0], [2.0, 0.0]) == 2.0
        assert varphi([1.0, 1.0], [1.0, -1.0]) == math.inf
        with pytest.raises(DimensionError):
            varphi([1.0, 2.0], [1.0])

    @given(st.lists(st.tuples(finite, st.floats(-1, 50)), min_size=1, max_size=10))
    def test_varphi_is_sum_of_phi(self, pairs):
        x, s = (np.array(c) for c in zip(*pairs))
        total = float(np.sum(phi(x, s)))
        if math.isinf(total):
            assert varphi(x, s) == math.inf
        else:
            assert varphi(x, s) == pytest.approx(total, rel=1e-12)


class TestLossProxes:
    def test_quadratic(self):
        y = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(prox_quadratic_loss(y, y, 0.7), y)
        np.testing.assert_allclose(prox_quadratic_loss([2.0], [0.0], 1.0), [1.0])
        np.testing.assert_allclose(prox_quadratic_loss([2.0], [5.0], 1e-12), [2.0], atol=1e-10)

    def test_absolute(self):
        y = np.array([1.0, -2.0])
        np.testing.assert_allclose(prox_absolute_loss(y, y, 3.0), y)
        np.testing.assert_allclose(prox_absolute_loss([3.0], [0.0], 1.0), [2.0])
        np.testing.assert_allclose(prox_absolute_loss([4.0], [5.0], 2.0), [5.0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            prox_quadratic_loss([1.0, 2.0], [1.0], 1.0)
        with pytest.raises(DimensionError):
            prox_absolute_loss([1.0, 2.0], [1.0], 1.0)

    def test_soft_threshold(self):
        x = np.array([3.0, -0.5, -4.0, 0.0])
        np.testing.assert_array_equal(soft_threshold(x, 0.0), x)
        np.testing.assert_allclose(soft_threshold(x, 1.0), [2.0, 0.0, -3.0, 0.0])
        with pytest.raises(ParameterError):
            soft_threshold(x, -1.0)

    @given(u=finite, y=finite, tau=positive)
    def test_quadratic_is_minimizer(self, u, y, tau):
        p = float(prox_quadratic_loss([u], [y], tau)[0])
        obj = lambda z: tau * 0.5 * (y - z) ** 2 + 0.5 * (z - u) ** 2  # noqa: E731
        for dz in (-1e-3, 1e-3):
            assert obj(p) <= obj(p + dz) + 1e-12

    @given(u=finite, y=finite, tau=positive)
    def test_absolute_is_minimizer(self, u, y, tau):
        p = float(prox_absolute_loss([u], [y], tau)[0])
        obj = lambda z: tau * abs(y - z) + 0.5 * (z - u) ** 2  # noqa: E731
        for dz in (-1e-3, 1e-3):
            assert obj(p) <= obj(p + dz) + 1e-12


class TestPerspective:
    def test_examples(self):
        assert prox_perspective(0.0, 5.0, 2.0) == pytest.approx((0.0, 4.0), abs=1e-14)
        assert prox_perspective(0.0, -3.0, 2.0) == (0.0, 0.0)
        v, s = prox_perspective(1.0, 1.0, 1.0)
        # sigma is the root of (s - 0.5)(s + 1)^2 = 0.5, v = s / (s + 1)
        assert (s - 0.5) * (s + 1) ** 2 == pytest.approx(0.5, abs=1e-13)
        assert v == pytest.approx(s / (s + 1), abs=1e-14)
        ov, os_ = prox_perspective_grid(1.0, 1.0, 1.0)
        assert (v, s) == pytest.approx((ov, os_), abs=1e-5)
        assert (v, s) == pytest.approx((0.404, 0.678), abs=2e-3)

    def test_zero_inputs(self):
        v, s = prox_perspective_vector(np.zeros(4), np.zeros(4), 0.5)
        assert not v.any() and not s.any()

    def test_gamma_must_be_positive(self):
        with pytest.raises(ParameterError):
            prox_perspective(1.0, 1.0, 0.0)
        with pytest.raises(DimensionError):
            prox_perspective_vector(np.zeros(3), np.zeros(2), 1.0)
        with pytest.raises(ParameterError):
            prox_perspective_vector(np.zeros(3), np.zeros(3), 1.0, backend="fortran")

    def test_random_vector_against_oracle(self):
        rng = np.random.default_rng(7)
        vt, st_ = rng.standard_normal(6) * 2, rng.standard_normal(6) * 2
        v, s = prox_perspective_vector(vt, st_, 0.8)
        for k in range(6):
            assert (v[k], s[k]) == pytest.approx(prox_perspective_grid(vt[k], st_[k], 0.8),
                                                 abs=1e-5)

    def test_vector_matches_scalar(self):
        rng = np.random.default_rng(8)
        vt, st_ = rng.standard_normal(50), rng.standard_normal(50)
        v, s = prox_perspective_vector(vt, st_, 0.3)
        for k in range(50):
            assert (v[k], s[k]) == prox_perspective(vt[k], st_[k], 0.3)

    def test_partition_independence(self):
        rng = np.random.default_rng(9)
        vt, st_ = rng.standard_normal(200), rng.standard_normal(200)
        whole = prox_perspective_vector(vt, st_, 0.4)
        parts = [prox_perspective_vector(vt[i:i + 37], st_[i:i + 37], 0.4)
                 for i in range(0, 200, 37)]
        np.testing.assert_array_equal(whole[0], np.concatenate([p[0] for p in parts]))
        np.testing.assert_array_equal(whole[1], np.concatenate([p[1] for p in parts]))

    @pytest.mark.skipif(prox.numba is None, reason="numba not installed")
    def test_backends_agree(self):
        rng = np.random.default_rng(10)
        for scale in (1e-3, 1.0, 1e3):
            vt, st_ = rng.standard_normal(500) * scale, rng.standard_normal(500) * scale
            for g in (1e-3, 0.5, 1e3):
                a = prox_perspective_vector(vt, st_, g, backend="numba")
                b = prox_perspective_vector(vt, st_, g, backend="numpy")
                np.testing.assert_allclose(a[0], b[0], rtol=1e-10, atol=1e-12 * scale)
                np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-12 * scale)

    @pytest.mark.parametrize("backend", BACKENDS)
    @settings(max_examples=150, deadline=None)
    @given(vt=finite, st_=finite, g=positive)
    def test_beats_grid_and_stays_feasible(self, backend, vt, st_, g):
        v, s = prox_perspective_vector(np.array([vt]), np.array([st_]), g, backend=backend)
        v, s = float(v[0]), float(s[0])
        assert s >= 0.0
        f_star = _persp_obj(v, s, vt, st_, g)
        vs = np.linspace(-abs(vt), abs(vt), 200)
        ss = np.linspace(0.0, max(st_, 0.0) + abs(vt) + 1.0, 200)
        V, S = np.meshgrid(vs, ss)
        grid = _persp_obj(V, S, vt, st_, g)
        assert f_star <= grid.min() + 1e-9 * (1 + abs(f_star))

    @settings(max_examples=100, deadline=None)
    @given(a=st.tuples(finite, finite), b=st.tuples(finite, finite), g=positive)
    def test_firmly_nonexpansive(self, a, b, g):
        pa = np.array(prox_perspective(*a, g))
        pb = np.array(prox_perspective(*b, g))
        d = pa - pb
        assert d @ d <= d @ (np.array(a) - np.array(b)) + 1e-9 * (1 + np.abs(a).max() + np.abs(b).max())

    def test_large_gamma_is_fast_and_accurate(self):
        rng = np.random.default_rng(11)
        vt, st_ = rng.standard_normal(2000) * 50, rng.standard_normal(2000)
        v, s = prox_perspective_vector(vt, st_, 1000.0)
        interior = s > 0
        a = s - st_ + 500.0
        b = s + 1000.0
        resid = a * b * b - 500.0 * vt * vt
        scale = np.abs(a) * b * b + 500.0 * vt * vt
        assert np.all(np.abs(resid[interior]) <= 1e-12 * scale[interior])


class TestL1Ball:
    def test_examples(self):
        np.testing.assert_array_equal(project_l1_ball([1.0, -1.0], 3.0), [1.0, -1.0])
        np.testing.assert_allclose(project_l1_ball([3.0, 1.0], 2.0), [2.0, 0.0])
        np.testing.assert_allclose(project_l1_ball([0.5, -0.5], 0.6), [0.3, -0.3])
        np.testing.assert_allclose(project_l1_bruteforce([3.0, 1.0], 2.0), [2.0, 0.0])
        np.testing.assert_allclose(project_l1_bruteforce([0.5, -0.5], 0.6), [0.3, -0.3])

    def test_limits(self):
        eta = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(project_l1_ball(eta, math.inf), eta)
        np.testing.assert_array_equal(project_l1_ball(eta, 0.0), np.zeros(3))
        with pytest.raises(ParameterError):
            project_l1_ball(eta, -1.0)

    def test_ties(self):
        out = project_l1_ball([1.0, -1.0, 1.0, 0.2], 1.5)
        np.testing.assert_allclose(out, [0.5, -0.5, 0.5, 0.0])

    def test_extreme_magnitudes(self):
        # the float spacing near 1e17 is 16, so only feasibility can be asked for
        out = project_l1_ball([1e17, -3e16, 2.0], 1.0)
        assert np.isfinite(out).all() and np.abs(out).sum() <= 1.0

    @settings(max_examples=200, deadline=None)
    @given(eta=st.lists(finite, min_size=1, max_size=4), alpha=st.floats(0, 60))
    def test_matches_face_enumeration(self, eta, alpha):
        np.testing.assert_allclose(project_l1_ball(eta, alpha), project_l1_bruteforce(eta, alpha),
                                   atol=1e-9 * (1 + max(abs(e) for e in eta)))

    @settings(max_examples=200, deadline=None)
    @given(eta=st.lists(finite, min_size=1, max_size=30), alpha=st.floats(0, 60))
    def test_feasible_idempotent(self, eta, alpha):
        eta = np.array(eta)
        p = project_l1_ball(eta, alpha)
        assert np.abs(p).sum() <= alpha * (1 + 1e-12) + 1e-12
        if np.abs(eta).sum() > alpha:
            assert np.abs(p).sum() == pytest.approx(alpha, abs=1e-10 * (1 + np.abs(eta).sum()))
        np.testing.assert_allclose(project_l1_ball(p, alpha), p, atol=1e-10 * (1 + alpha))
        assert np.all(p * eta >= 0)

    @settings(max_examples=150, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), m=st.integers(1, 20), alpha=st.floats(0, 10))
    def test_nonexpansive(self, seed, m, alpha):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal(m) * 5, rng.standard_normal(m) * 5
        pa, pb = project_l1_ball(a, alpha), project_l1_ball(b, alpha)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) * (1 + 1e-12) + 1e-12

    @given(eta=st.lists(finite, min_size=1, max_size=6), alpha=st.floats(0, 60),
           perm_seed=st.integers(0, 1000))
    def test_permutation_covariant(self, eta, alpha, perm_seed):
        eta = np.array(eta)
        perm = np.random.default_rng(perm_seed).permutation(eta.size)
        np.testing.assert_allclose(project_l1_ball(eta[perm], alpha),
                                   project_l1_ball(eta, alpha)[perm], atol=1e-12 * (1 + alpha))


def test_no_nan_for_nonfinite_inputs():
    out = project_l1_ball(np.array([np.inf, 1.0]), 1.0)
    assert np.isinf(out[0])
