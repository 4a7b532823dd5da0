import numpy as np
import pytest

from conftest import random_image
from redsolve.core import Algorithm, Rng, SolverConfig, default_step_size
from redsolve.denoisers import DenoiserKind, DenoiserSpec
from redsolve.forward import (
    LinearMeasurement,
    MeasurementSet,
    component_gradient,
    simulate_cdp,
)
from redsolve.oracle import enumerate_variance, residual_average_bound
from redsolve.red import (
    NumericalDivergenceError,
    evaluate_operator,
    full_gradient,
    full_residual,
    minibatch_gradient,
    red_step,
    run_gm_red,
    run_on_red,
    run_sgm,
    run_solver,
)

TAU = 0.2
BOX = DenoiserSpec(kind=DenoiserKind.AVERAGED_KERNEL, kernel_alpha=0.5)


def cdp_set(seed, count, size=8, snr=25.0):
    truth = random_image(seed, size, size)
    return simulate_cdp(truth, count, snr, Rng(seed + 1)), truth


def identity_set(y):
    m = LinearMeasurement(kind="identity", y=y.ravel(), shape=y.shape)
    return MeasurementSet(height=y.shape[0], width=y.shape[1], measurements=[m])


def config(alg, **kw):
    base = dict(algorithm=alg, gamma=default_step_size(1.0, TAU), tau=TAU,
                iterations=20, seed=0, denoiser=BOX)
    base.update(kw)
    return SolverConfig(**base)


class TestFullGradient:
    def test_single_component(self):
        mset, _ = cdp_set(1, 1)
        x = random_image(2, 8, 8)
        expected = component_gradient(mset[0], x)
        assert np.array_equal(full_gradient(mset, x), expected)

    def test_identical_components(self):
        mset, _ = cdp_set(3, 1)
        m = mset[0]
        four = MeasurementSet(height=8, width=8, measurements=[m, m, m, m])
        x = random_image(4, 8, 8)
        assert np.array_equal(full_gradient(four, x), component_gradient(m, x))

    def test_matches_explicit_loop(self):
        mset, _ = cdp_set(5, 6)
        x = random_image(6, 8, 8)
        acc = np.zeros((8, 8))
        for m in mset:
            acc = acc + component_gradient(m, x)
        assert np.max(np.abs(full_gradient(mset, x) - acc / 6.0)) < 1e-15

    def test_empty_set(self):
        with pytest.raises(ValueError):
            full_gradient(MeasurementSet(height=2, width=2, measurements=[]), np.zeros((2, 2)))


class TestMinibatchGradient:
    def test_single_component_equals_full(self):
        mset, _ = cdp_set(7, 1)
        x = random_image(8, 8, 8)
        # batch of 2: (g+g)/2 divides exactly, so equality is bitwise
        grad, idx = minibatch_gradient(mset, x, 2, Rng(9))
        assert idx == [0, 0]
        assert np.array_equal(grad, full_gradient(mset, x))
        grad3, idx3 = minibatch_gradient(mset, x, 3, Rng(9))
        assert idx3 == [0, 0, 0]
        assert np.allclose(grad3, full_gradient(mset, x), rtol=1e-15, atol=0)

    def test_indices_logged_in_draw_order(self):
        from redsolve.core import rng_uniform_indices

        mset, _ = cdp_set(10, 5)
        x = random_image(11, 8, 8)
        _, idx = minibatch_gradient(mset, x, 4, Rng(12))
        assert idx == rng_uniform_indices(Rng(12), 4, 5).tolist()

    def test_unbiased(self):
        # sample mean over many redraws within 4 standard errors per coordinate
        mset, _ = cdp_set(13, 6)
        x = random_image(14, 8, 8) + 0.1
        exact = full_gradient(mset, x)
        rng = Rng(15)
        draws = 2000
        acc = np.zeros_like(x)
        acc2 = np.zeros_like(x)
        for _ in range(draws):
            g, _ = minibatch_gradient(mset, x, 2, rng)
            acc += g
            acc2 += g * g
        mean = acc / draws
        se = np.sqrt(np.maximum(acc2 / draws - mean**2, 0.0) / draws)
        dev = np.abs(mean - exact) / np.where(se > 0, se, 1.0)
        assert np.max(dev) < 4.0

    def test_variance_matches_enumeration(self):
        mset, _ = cdp_set(16, 6)
        x = random_image(17, 8, 8) + 0.1
        exact_full = full_gradient(mset, x)
        rng = Rng(18)
        draws = 4000
        sq = [float(np.sum((exact_full - minibatch_gradient(mset, x, 2, rng)[0]) ** 2))
              for _ in range(draws)]
        expected = enumerate_variance(mset.measurements, x, 2)
        assert np.mean(sq) == pytest.approx(expected, rel=0.1)


class TestRedStep:
    def test_zero_gradient_identity_denoiser(self):
        x = random_image(19, 4, 4)
        out = red_step(x, np.zeros((4, 4)), DenoiserSpec(), TAU, 0.5)
        assert np.array_equal(out, x)

    def test_tau_zero_plain_gradient_step(self):
        x = random_image(20, 4, 4)
        g = random_image(21, 4, 4)
        out = red_step(x, g, BOX, 0.0, 0.3)
        assert np.max(np.abs(out - (x - 0.3 * g))) < 1e-15

    def test_fixed_point_unmoved(self):
        # at a zero of the residual the update returns x up to rounding
        y = random_image(22, 6, 6)
        mset = identity_set(y)
        cfg = config(Algorithm.GM_RED, iterations=4000, gamma=0.5)
        xstar, _ = run_gm_red(mset, np.zeros((6, 6)), cfg)
        resid = full_residual(mset, xstar, BOX, TAU)
        assert np.linalg.norm(resid) < 1e-12
        out = red_step(xstar, full_gradient(mset, xstar), BOX, TAU, cfg.gamma)
        assert np.max(np.abs(out - xstar)) < 1e-12

    def test_operator_eval_combination(self):
        x = random_image(23, 4, 4)
        g = random_image(24, 4, 4)
        ev = evaluate_operator(g, x, BOX, TAU)
        assert np.max(np.abs(ev.combined - (ev.g_grad + ev.h_val))) < 1e-15


class TestGmRed:
    def test_contracts_on_identity_model(self):
        # gradient descent on 0.5*||x - y||^2: error contracts by |1-gamma|
        y = random_image(25, 5, 5)
        mset = identity_set(y)
        gamma = 0.5
        cfg = SolverConfig(algorithm=Algorithm.GM_RED, gamma=gamma, tau=0.0,
                           iterations=30, seed=0, denoiser=DenoiserSpec())
        x, trace = run_gm_red(mset, np.zeros((5, 5)), cfg)
        assert np.linalg.norm(x - y) < 1e-9 * np.linalg.norm(y)
        norms = [np.sqrt(r.grad_norm_sq) for r in trace.rows]
        for a, b in zip(norms, norms[1:]):
            assert b == pytest.approx(abs(1 - gamma) * a, rel=1e-10)

    def test_row0_is_normalization_reference(self):
        y = random_image(26, 5, 5)
        mset = identity_set(y)
        cfg = config(Algorithm.GM_RED, iterations=5)
        x0 = np.zeros((5, 5))
        _, trace = run_gm_red(mset, x0, cfg)
        g0 = full_residual(mset, x0, BOX, TAU)
        assert trace.rows[0].k == 0
        assert trace.rows[0].grad_norm_sq == pytest.approx(float(np.sum(g0 * g0)), rel=1e-15)
        assert trace.rows[0].norm_acc == 1.0

    def test_final_residual_below_deterministic_bound(self):
        # exact-gradient case: bound with zero estimator variance
        y = random_image(27, 6, 6)
        mset = identity_set(y)
        t = 200
        gamma = default_step_size(1.0, TAU)
        cfg = config(Algorithm.GM_RED, iterations=t, gamma=gamma)
        x0 = np.zeros((6, 6))
        xs = [x0.copy()]
        x, trace = run_gm_red(mset, x0, cfg)
        long_cfg = config(Algorithm.GM_RED, iterations=4000, gamma=gamma)
        xstar, _ = run_gm_red(mset, x0, long_cfg)
        radius = max(np.linalg.norm(x0 - xstar), np.linalg.norm(x - xstar))
        bound = residual_average_bound(1.0, TAU, gamma, 0.0, 1, radius, t)
        avg = np.mean([r.grad_norm_sq for r in trace.rows[:-1]])
        assert avg <= bound
        assert trace.rows[-1].grad_norm_sq <= bound

    def test_subset_restricts_measurements(self):
        mset, _ = cdp_set(28, 4)
        sub = MeasurementSet(height=8, width=8, measurements=mset.measurements[:1])
        x0 = np.full((8, 8), 0.5)
        cfg_sub = config(Algorithm.GM_RED, subset=1, iterations=10)
        cfg_one = config(Algorithm.GM_RED, iterations=10)
        xa, ta = run_gm_red(mset, x0, cfg_sub)
        xb, tb = run_gm_red(sub, x0, cfg_one)
        assert np.array_equal(xa, xb)
        assert [r.grad_norm_sq for r in ta.rows] == [r.grad_norm_sq for r in tb.rows]

    def test_subset_larger_than_set_rejected(self):
        mset, _ = cdp_set(29, 2)
        with pytest.raises(ValueError):
            run_gm_red(mset, np.zeros((8, 8)), config(Algorithm.GM_RED, subset=3))


class TestOnRed:
    def test_identical_measurements_match_batch_bitwise(self):
        mset, _ = cdp_set(30, 1)
        m = mset[0]
        four = MeasurementSet(height=8, width=8, measurements=[m] * 4)
        x0 = np.full((8, 8), 0.5)
        cfg_on = config(Algorithm.ON_RED, minibatch_b=4, iterations=15)
        cfg_gm = config(Algorithm.GM_RED, iterations=15)
        xa, ta = run_on_red(four, x0, cfg_on)
        xb, tb = run_gm_red(four, x0, cfg_gm)
        assert np.array_equal(xa, xb)
        assert [r.grad_norm_sq for r in ta.rows] == [r.grad_norm_sq for r in tb.rows]

    def test_trace_logs_indices(self):
        mset, _ = cdp_set(31, 5)
        cfg = config(Algorithm.ON_RED, minibatch_b=3, iterations=6)
        _, trace = run_on_red(mset, np.full((8, 8), 0.5), cfg)
        assert trace.rows[0].sampled_indices == []
        for row in trace.rows[1:]:
            assert len(row.sampled_indices) == 3
            assert all(0 <= i < 5 for i in row.sampled_indices)

    def test_deterministic(self):
        mset, truth = cdp_set(32, 5)
        cfg = config(Algorithm.ON_RED, minibatch_b=2, iterations=8)
        x0 = np.full((8, 8), 0.5)
        xa, ta = run_on_red(mset, x0, cfg, truth)
        xb, tb = run_on_red(mset, x0, cfg, truth)
        assert np.array_equal(xa, xb)
        for ra, rb in zip(ta.rows, tb.rows):
            assert ra.k == rb.k
            assert ra.grad_norm_sq == rb.grad_norm_sq
            assert ra.norm_acc == rb.norm_acc
            assert ra.snr_db == rb.snr_db
            assert ra.sampled_indices == rb.sampled_indices

    def test_batch_larger_than_set_rejected(self):
        mset, _ = cdp_set(33, 2)
        cfg = config(Algorithm.ON_RED, minibatch_b=5)
        with pytest.raises(ValueError):
            run_on_red(mset, np.zeros((8, 8)), cfg)

    def test_log_stride(self):
        mset, _ = cdp_set(34, 3)
        cfg = config(Algorithm.ON_RED, minibatch_b=1, iterations=10, log_stride=4)
        _, trace = run_on_red(mset, np.full((8, 8), 0.5), cfg)
        assert [r.k for r in trace.rows] == [0, 4, 8, 10]


class TestSgm:
    def test_equals_on_red_with_zero_tau_bitwise(self):
        mset, _ = cdp_set(35, 4)
        x0 = np.full((8, 8), 0.5)
        cfg_sgm = config(Algorithm.SGM, minibatch_b=1, iterations=12, tau=TAU)
        cfg_on = config(Algorithm.ON_RED, minibatch_b=1, iterations=12, tau=0.0)
        xa, ta = run_sgm(mset, x0, cfg_sgm)
        xb, tb = run_on_red(mset, x0, cfg_on)
        assert np.array_equal(xa, xb)
        assert [r.grad_norm_sq for r in ta.rows] == [r.grad_norm_sq for r in tb.rows]

    def test_converges_on_identity_model(self):
        y = random_image(36, 4, 4)
        mset = identity_set(y)
        cfg = SolverConfig(algorithm=Algorithm.SGM, gamma=0.5, tau=0.0,
                           iterations=60, seed=1, denoiser=DenoiserSpec(), minibatch_b=1)
        x, _ = run_sgm(mset, np.zeros((4, 4)), cfg)
        assert np.linalg.norm(x - y) < 1e-8


class TestStochasticOperator:
    """Statistical contract of the online update map against the exact one."""

    def _setup(self):
        g = np.random.default_rng(37)
        measurements = []
        for _ in range(6):
            mat = g.normal(size=(8, 16)) / 4.0
            y = g.normal(size=8)
            measurements.append(
                LinearMeasurement(kind="dense", y=y, shape=(4, 4), matrix=mat)
            )
        mset = MeasurementSet(height=4, width=4, measurements=measurements)
        x = g.normal(size=(4, 4))
        gamma = 0.5
        return mset, x, gamma

    def test_mean_of_online_map_matches_exact_map(self):
        mset, x, gamma = self._setup()
        exact = x - gamma * full_residual(mset, x, BOX, TAU)
        rng = Rng(38)
        draws = 3000
        acc = np.zeros_like(x)
        acc2 = np.zeros_like(x)
        for _ in range(draws):
            g, _ = minibatch_gradient(mset, x, 2, rng)
            p = x - gamma * (g + TAU * (x - x))  # denoiser part is common, add below
            acc += p
            acc2 += p * p
        # the denoiser residual is deterministic, so compare the stochastic parts
        from redsolve.denoisers import denoiser_residual

        shift = gamma * denoiser_residual(BOX, TAU, x)
        mean = acc / draws - shift
        se = np.sqrt(np.maximum(acc2 / draws - (acc / draws) ** 2, 0.0) / draws)
        dev = np.abs(mean - exact) / np.where(se > 0, se, 1.0)
        assert np.max(dev) < 4.0

    def test_online_map_variance_bounded(self):
        mset, x, gamma = self._setup()
        exact = x - gamma * full_residual(mset, x, BOX, TAU)
        from redsolve.denoisers import denoiser_residual

        h = denoiser_residual(BOX, TAU, x)
        rng = Rng(39)
        draws = 3000
        batch = 2
        sq = []
        for _ in range(draws):
            g, _ = minibatch_gradient(mset, x, batch, rng)
            p = x - gamma * (g + h)
            sq.append(float(np.sum((p - exact) ** 2)))
        nu_sq_over_b = enumerate_variance(mset.measurements, x, batch)
        assert np.mean(sq) <= gamma**2 * nu_sq_over_b * 1.2


class TestDivergenceHandling:
    def test_nan_abort_reports_iteration(self):
        y = random_image(40, 4, 4)
        mset = identity_set(y)
        cfg = SolverConfig(algorithm=Algorithm.GM_RED, gamma=2.5e155, tau=0.0,
                           iterations=500, seed=0, denoiser=DenoiserSpec())
        with pytest.raises(NumericalDivergenceError) as err:
            run_gm_red(mset, np.zeros((4, 4)), cfg)
        assert 1 <= err.value.iteration <= 500

    def test_started_at_fixed_point_flag(self):
        y = random_image(41, 4, 4)
        mset = identity_set(y)
        cfg = SolverConfig(algorithm=Algorithm.GM_RED, gamma=0.5, tau=TAU,
                           iterations=3, seed=0, denoiser=DenoiserSpec())
        # x0 = y is a zero of the residual for the identity model + identity denoiser
        _, trace = run_gm_red(mset, y, cfg)
        assert trace.started_at_fixed_point
        assert all(r.norm_acc == 0.0 for r in trace.rows)


class TestDispatch:
    def test_run_solver_routes_by_algorithm(self):
        mset, _ = cdp_set(42, 3)
        x0 = np.full((8, 8), 0.5)
        for alg in (Algorithm.GM_RED, Algorithm.ON_RED, Algorithm.SGM):
            cfg = config(alg, minibatch_b=1, iterations=2)
            x, trace = run_solver(mset, x0, cfg)
            assert x.shape == (8, 8)
            assert trace.rows[-1].k == 2

    def test_algorithm_mismatch_rejected(self):
        mset, _ = cdp_set(43, 2)
        with pytest.raises(ValueError):
            run_gm_red(mset, np.zeros((8, 8)), config(Algorithm.ON_RED))
