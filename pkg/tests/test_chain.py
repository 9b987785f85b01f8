"""Bootstrap chains, homotopies and the bias-reduced estimator."""

import math

import numpy as np
import pytest

from biasreduce import chain
from biasreduce.chain import (
    ChainPath,
    KernelKind,
    alt_sum,
    default_k,
    difference_weights,
    estimate_Bk,
    evaluate_fk,
    fk_weights,
    full_estimator,
    homotopy_exact,
    homotopy_smoothed,
    kernel_step,
    sample_chain,
    superpose_Gk,
)
from biasreduce.functionals import linear_mean, quadratic_mean, trace_quadratic
from biasreduce.model import NoiseBlock, Theta, dataset_from_noise, estimate_theta

from conftest import random_theta

EXACT = KernelKind.exact()
SIGMA4 = trace_quadratic()
UNIT = Theta([0.0], [[1.0]])


class TestHomotopy:
    def test_exact_t0(self):
        rng = np.random.default_rng(0)
        th = random_theta(rng, 3)
        out = homotopy_exact(th, 0.0, NoiseBlock.draw(rng, 10, 3))
        np.testing.assert_array_equal(out.mu, th.mu)
        np.testing.assert_array_equal(out.sigma, th.sigma)

    def test_exact_t1_standard(self):
        nb = NoiseBlock.draw(np.random.default_rng(1), 8, 2)
        out = homotopy_exact(Theta(np.zeros(2), np.eye(2)), 1.0, nb)
        np.testing.assert_allclose(out.mu, nb.zbar, atol=1e-15)
        np.testing.assert_allclose(out.sigma, nb.sigma_hat_z, atol=1e-15)

    def test_exact_t1_is_estimate(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            th = random_theta(rng, 3)
            nb = NoiseBlock.draw(rng, 12, 3)
            out = homotopy_exact(th, 1.0, nb)
            est = estimate_theta(dataset_from_noise(th, nb.z))
            np.testing.assert_allclose(out.mu, est.mu, atol=1e-10)
            np.testing.assert_allclose(out.sigma, est.sigma, atol=1e-10)

    def test_exact_interpolates_linearly_in_sigma(self):
        rng = np.random.default_rng(3)
        th = random_theta(rng, 2)
        nb = NoiseBlock.draw(rng, 6, 2)
        h0, h1 = homotopy_exact(th, 0.0, nb), homotopy_exact(th, 1.0, nb)
        mid = homotopy_exact(th, 0.25, nb)
        np.testing.assert_allclose(mid.sigma, 0.75 * h0.sigma + 0.25 * h1.sigma, atol=1e-12)
        np.testing.assert_allclose(mid.mu, 0.75 * h0.mu + 0.25 * h1.mu, atol=1e-12)

    def test_t_out_of_range(self):
        with pytest.raises(ValueError):
            homotopy_exact(UNIT, 1.5, NoiseBlock(np.zeros((3, 1))))

    def test_smoothed_t0(self):
        rng = np.random.default_rng(4)
        th = random_theta(rng, 3)
        out = homotopy_smoothed(th, 0.0, NoiseBlock.draw(rng, 10, 3), 2.0)
        np.testing.assert_array_equal(out.sigma, th.sigma)

    def test_smoothed_equals_exact_in_coupling_region(self):
        rng = np.random.default_rng(5)
        a = 2.0
        for _ in range(100):
            th = random_theta(rng, 3, 1 / (2 * a), 2 * a)
            nb = NoiseBlock.draw(rng, 10, 3)
            t = float(rng.uniform())
            s, e = homotopy_smoothed(th, t, nb, a), homotopy_exact(th, t, nb)
            np.testing.assert_allclose(s.mu, e.mu, atol=1e-10)
            np.testing.assert_allclose(s.sigma, e.sigma, atol=1e-10)

    def test_smoothed_freezes_far_direction(self):
        th = Theta(np.zeros(2), np.diag([16.0, 1.0]))
        nb = NoiseBlock.draw(np.random.default_rng(6), 50, 2)
        out = homotopy_smoothed(th, 1.0, nb, 2.0)
        assert out.mu[0] == 0.0
        assert out.sigma[0, 0] == 16.0
        assert out.sigma[0, 1] == 0.0 and out.sigma[1, 0] == 0.0


class TestChains:
    def test_k0(self):
        path = sample_chain(UNIT, 0, 10, EXACT, np.random.default_rng(0))
        assert path.k == 0 and len(path.states) == 1
        np.testing.assert_array_equal(path.states[0].sigma, UNIT.sigma)

    def test_k2_nonnegative_variance(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            path = sample_chain(UNIT, 2, 3, EXACT, rng)
            assert len(path.states) == 3
            assert all(s.sigma[0, 0] >= 0 for s in path.states)

    def test_kernels_agree_on_inner_region(self):
        # theta in Theta(2a; d): one-step laws coincide; compare independent draws
        a, n, m = 2.0, 10, 100000
        th = Theta([0.3, -0.1], [[1.2, 0.3], [0.3, 0.8]])
        f = quadratic_mean()
        g = trace_quadratic()
        rng = np.random.default_rng(2)
        means = {}
        for kind in (EXACT, KernelKind.smoothed(a)):
            out = chain.simulate_states(th, 1, kind, rng.standard_normal((m, 1, n, 2)))
            last = Theta(out.mu[:, 1], out.sigma[:, 1])
            means[kind.variant] = [(v.mean(), v.std(ddof=1) / math.sqrt(m))
                                   for v in (f(last) + 0.0, g(last) + 0.0)]
        for (m1, s1), (m2, s2) in zip(means["exact"], means["smoothed"]):
            assert abs(m1 - m2) <= 4 * math.hypot(s1, s2)

    def test_simulate_states_matches_steps(self):
        rng = np.random.default_rng(3)
        th = random_theta(rng, 2)
        z = rng.standard_normal((3, 7, 2))
        states = chain.simulate_states(th, 3, EXACT, z)
        cur = th
        for j in range(3):
            cur = kernel_step(cur, z[j], EXACT)
            np.testing.assert_allclose(states.sigma[j + 1], cur.sigma, atol=1e-14)


class TestAltSum:
    def _path(self, values):
        return ChainPath([Theta([v], [[1.0]]) for v in values], EXACT, 5)

    def test_examples(self):
        f = linear_mean([1.0])
        path = self._path([2.0, 5.0, 3.0])
        assert alt_sum(f, path, 0) == 2.0
        assert alt_sum(f, path, 1) == 3.0
        assert alt_sum(f, path, 2) == 2.0 - 10.0 + 3.0

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_constant_path(self, k):
        assert alt_sum(quadratic_mean(), self._path([1.5] * (k + 1)), k) == 0.0

    def test_too_short(self):
        with pytest.raises(ValueError):
            alt_sum(quadratic_mean(), self._path([1.0]), 2)


class TestWeights:
    def test_examples(self):
        np.testing.assert_array_equal(fk_weights(0), [1.0])
        np.testing.assert_array_equal(fk_weights(1), [2.0, -1.0])
        np.testing.assert_array_equal(fk_weights(2), [3.0, -3.0, 1.0])

    def test_literal_double_sum(self):
        for k in range(13):
            np.testing.assert_array_equal(fk_weights(k), chain._fk_weights_literal(k))

    def test_sum_to_one(self):
        for k in range(13):
            assert fk_weights(k).sum() == 1.0
            assert difference_weights(k + 1).sum() == 0.0

    def test_default_k(self):
        assert [default_k(s) for s in (1.0, 2.0, 2.5, 3.0, 3.5, 4.0)] == [0, 0, 1, 1, 2, 2]


class TestEstimateBk:
    @pytest.mark.parametrize("cv", [True, False])
    def test_linear_is_unbiased(self, cv):
        th = random_theta(np.random.default_rng(0), 2)
        for k in (1, 2):
            est = estimate_Bk(linear_mean([1.0, 1.0]), th, k, 10, EXACT, 20000, np.random.default_rng(k), cv)
            assert abs(est.value) <= 4 * est.stderr + 1e-12

    @pytest.mark.parametrize("k, expected", [(1, 0.2), (2, 0.04)])
    def test_chi_square(self, k, expected):
        est = estimate_Bk(SIGMA4, UNIT, k, 11, EXACT, 100000, np.random.default_rng(10 + k))
        assert abs(est.value - expected) <= 4 * est.stderr

    def test_control_variate_unbiased(self):
        raw = estimate_Bk(SIGMA4, UNIT, 1, 11, EXACT, 100000, np.random.default_rng(20), False)
        cv = estimate_Bk(SIGMA4, UNIT, 1, 11, EXACT, 100000, np.random.default_rng(20), True)
        assert cv.stderr < raw.stderr
        assert abs(raw.value - 0.2) <= 4 * raw.stderr

    def test_k0_is_value(self):
        est = estimate_Bk(SIGMA4, Theta([0.0], [[2.0]]), 0, 11, EXACT, 10, np.random.default_rng(0))
        assert est.value == 4.0 and est.stderr == 0.0


class TestEvaluateFk:
    def test_k0_exact(self):
        th = random_theta(np.random.default_rng(0), 3)
        est = evaluate_fk(quadratic_mean(), th, 0, 10, EXACT, 100, np.random.default_rng(1))
        assert est.value == float(quadratic_mean()(th))
        assert est.stderr == 0.0

    def test_linear(self):
        th = random_theta(np.random.default_rng(2), 2)
        f = linear_mean([2.0, -1.0])
        for k in (1, 2, 3):
            est = evaluate_fk(f, th, k, 10, EXACT, 5000, np.random.default_rng(k), control_variate=False)
            assert abs(est.value - float(f(th))) <= 4 * est.stderr

    def test_chi_square_k1(self):
        est = evaluate_fk(SIGMA4, UNIT, 1, 11, EXACT, 100000, np.random.default_rng(3))
        assert abs(est.value - 0.8) <= 4 * est.stderr

    def test_stderr_rate(self):
        th = Theta([0.0, 0.0], [[1.0, 0.2], [0.2, 0.7]])
        rs = np.array([100, 1000, 10000])
        se = [evaluate_fk(SIGMA4, th, 1, 20, EXACT, int(r), np.random.default_rng(int(r))).stderr for r in rs]
        slope = np.polyfit(np.log(rs), np.log(se), 1)[0]
        assert abs(slope + 0.5) <= 0.05

    def test_chunking_does_not_change_result(self, monkeypatch):
        th = random_theta(np.random.default_rng(4), 2)
        ref = evaluate_fk(SIGMA4, th, 2, 15, EXACT, 3000, np.random.default_rng(5))
        monkeypatch.setattr(chain, "CHUNK_ELEMENTS", 1000)
        small = evaluate_fk(SIGMA4, th, 2, 15, EXACT, 3000, np.random.default_rng(5))
        assert ref.value == small.value and ref.stderr == small.stderr

    def test_full_estimator_plug_in(self):
        x = np.random.default_rng(6).normal(size=(20, 2))
        est = full_estimator(SIGMA4, x, 0, EXACT, 10, np.random.default_rng(0))
        assert est.value == float(SIGMA4(estimate_theta(x)))

    def test_full_estimator_linear(self):
        x = np.random.default_rng(7).normal(size=(20, 2))
        u = np.array([1.0, 3.0])
        for k in (1, 2):
            est = full_estimator(linear_mean(u), x, k, EXACT, 100, np.random.default_rng(k))
            np.testing.assert_allclose(est.value, u @ x.mean(axis=0), atol=1e-12)


class TestSuperpose:
    def test_all_zero(self):
        rng = np.random.default_rng(0)
        th = random_theta(rng, 2)
        noises = [NoiseBlock.draw(rng, 8, 2) for _ in range(3)]
        out = superpose_Gk(th, [0.0, 0.0, 0.0], noises, EXACT)
        np.testing.assert_array_equal(out.mu, th.mu)
        np.testing.assert_array_equal(out.sigma, th.sigma)

    def test_single_step(self):
        rng = np.random.default_rng(1)
        th = random_theta(rng, 2)
        nb = NoiseBlock.draw(rng, 8, 2)
        out = superpose_Gk(th, [1.0], [nb], EXACT)
        step = kernel_step(th, nb, EXACT)
        np.testing.assert_allclose(out.mu, step.mu, atol=1e-10)
        np.testing.assert_allclose(out.sigma, step.sigma, atol=1e-10)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            superpose_Gk(UNIT, [1.0, 0.0], [NoiseBlock(np.zeros((3, 1)))], EXACT)
