import numpy as np
import pytest

from redsolve.core import Rng
from redsolve.forward import LinearMeasurement, component_gradient
from redsolve.oracle import (
    enumerate_variance,
    finite_diff_gradient,
    naive_dft2,
    residual_average_bound,
    tv_prox_small,
)
from redsolve.red import full_gradient
from redsolve.forward import MeasurementSet


class TestNaiveDft:
    def test_delta_gives_flat_magnitude(self):
        v = np.zeros((8, 8), dtype=complex)
        v[0, 0] = 1.0
        out = naive_dft2(v)
        assert np.allclose(np.abs(out), 1.0 / 8.0, atol=1e-12)  # 1/sqrt(64)

    def test_inverse_roundtrip(self):
        g = np.random.default_rng(0)
        v = g.normal(size=(8, 8)) + 1j * g.normal(size=(8, 8))
        assert np.max(np.abs(naive_dft2(naive_dft2(v), inverse=True) - v)) < 1e-10

    def test_unitary(self):
        g = np.random.default_rng(1)
        v = g.normal(size=(6, 10)) + 1j * g.normal(size=(6, 10))
        assert np.linalg.norm(naive_dft2(v)) == pytest.approx(np.linalg.norm(v), rel=1e-12)

    def test_size_cap(self):
        with pytest.raises(ValueError):
            naive_dft2(np.zeros((65, 65), dtype=complex))


class TestFiniteDiff:
    def test_quadratic_is_exact_to_second_order(self):
        x = np.random.default_rng(2).normal(size=(4, 4))
        g = finite_diff_gradient(lambda u: 0.5 * float(np.sum(u * u)), x, 1e-5)
        assert np.max(np.abs(g - x)) < 1e-9

    def test_linear_form_exact(self):
        # central differences are step-exact on linear forms; a larger step
        # keeps the floating-point cancellation below the tolerance
        c = np.random.default_rng(3).normal(size=(3, 5))
        x = np.random.default_rng(4).normal(size=(3, 5))
        g = finite_diff_gradient(lambda u: float(np.sum(c * u)), x, 0.125)
        assert np.max(np.abs(g - c)) < 1e-12

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_gradient(lambda u: 0.0, np.zeros((2, 2)), 0.0)


def _toy_linear_set(seed: int, count: int, shape=(4, 4)):
    g = np.random.default_rng(seed)
    n = shape[0] * shape[1]
    measurements = [
        LinearMeasurement(
            kind="dense", y=g.normal(size=6), shape=shape, matrix=g.normal(size=(6, n))
        )
        for _ in range(count)
    ]
    return MeasurementSet(height=shape[0], width=shape[1], measurements=measurements)


class TestEnumerateVariance:
    def test_identical_components_zero(self):
        m = _toy_linear_set(5, 1).measurements[0]
        # 4 copies: the mean of identical gradients divides exactly
        assert enumerate_variance([m, m, m, m], np.zeros((4, 4)), 2) == 0.0
        # odd counts round the mean by at most one ulp
        assert enumerate_variance([m, m, m], np.zeros((4, 4)), 2) < 1e-28

    def test_doubling_batch_halves(self):
        mset = _toy_linear_set(6, 4)
        x = np.random.default_rng(7).normal(size=(4, 4))
        v1 = enumerate_variance(mset.measurements, x, 1)
        v2 = enumerate_variance(mset.measurements, x, 2)
        assert v2 == pytest.approx(v1 / 2.0, rel=1e-15)

    def test_matches_monte_carlo(self):
        # exact single-draw variance vs 10^6 uniform index draws
        mset = _toy_linear_set(8, 4)
        x = np.random.default_rng(9).normal(size=(4, 4))
        gbar = full_gradient(mset, x)
        comps = [component_gradient(m, x) for m in mset]
        sq = np.array([float(np.sum((c - gbar) ** 2)) for c in comps])
        idx = (Rng(10).uniform(1_000_000) * 4).astype(int)
        mc = float(sq[idx].mean())
        exact = enumerate_variance(mset.measurements, x, 1)
        assert mc == pytest.approx(exact, rel=0.01)

    def test_size_cap(self):
        m = _toy_linear_set(11, 1).measurements[0]
        with pytest.raises(ValueError):
            enumerate_variance([m] * 17, np.zeros((4, 4)), 1)


class TestResidualAverageBound:
    def test_zero_variance_limit(self):
        # deterministic-gradient limit: bound collapses to (L+2*tau)*R0^2/(gamma*t)
        val = residual_average_bound(1.0, 0.2, 1 / 1.4, 0.0, 1, 2.0, 1000)
        assert val == pytest.approx(1.4 * 4.0 / ((1 / 1.4) * 1000), rel=1e-12)
        big = residual_average_bound(1.0, 0.2, 1 / 1.4, 0.0, 1, 2.0, 10)
        assert val < big  # decays with t

    def test_hand_computed_scalar(self):
        lips, tau, batch, radius, t = 1.0, 0.2, 10, 1.0, 100
        gamma = 1.0 / 1.4
        nu_sq = 1.0
        expected = (1.4 / gamma) * (
            nu_sq * gamma**2 / batch + 2 * gamma * np.sqrt(nu_sq) * radius / np.sqrt(batch) + radius**2 / t
        )
        got = residual_average_bound(lips, tau, gamma, nu_sq, batch, radius, t)
        assert got == pytest.approx(expected, rel=1e-14)

    def test_batch_equals_iterations_rate(self):
        # with gamma = 1/(L+2*tau) and B = t the bound is below C/sqrt(t)
        lips, tau, radius, nu_sq = 1.0, 0.2, 1.0, 1.0
        gamma = 1.0 / (lips + 2 * tau)
        c = (lips + 2 * tau) * (nu_sq * gamma**2 + 2 * gamma * np.sqrt(nu_sq) * radius + radius**2) / gamma
        for t in (1, 10, 100, 10_000):
            val = residual_average_bound(lips, tau, gamma, nu_sq, t, radius, t)
            assert val <= c / np.sqrt(t) + 1e-12

    def test_rejects_step_rule_violation(self):
        with pytest.raises(ValueError):
            residual_average_bound(1.0, 0.2, 1.0, 1.0, 1, 1.0, 10)  # gamma > 1/1.4


class TestTvOracle:
    def test_identity_at_zero_weight(self):
        z = np.random.default_rng(12).normal(size=(4, 4))
        assert np.array_equal(tv_prox_small(z, 0.0), z)

    def test_shrinks_total_variation(self):
        z = np.random.default_rng(13).normal(size=(4, 4))
        out = tv_prox_small(z, 0.5)
        tv = lambda a: np.abs(np.diff(a, axis=0)).sum() + np.abs(np.diff(a, axis=1)).sum()
        assert tv(out) < tv(z)

    def test_size_cap(self):
        with pytest.raises(ValueError):
            tv_prox_small(np.zeros((9, 9)), 0.1)
