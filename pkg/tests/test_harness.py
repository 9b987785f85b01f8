"""Losses, Orlicz norms, KS statistic, risk evaluation and rate sweeps."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from biasreduce.errors import NumericalError
from biasreduce.harness import (
    LossFunction,
    ks_normal,
    normality_experiment,
    normality_report,
    orlicz_norm,
    orlicz_norm_detail,
    rate_sweep,
    risk_eval,
    simulate_errors,
    weighted_slope,
)

from conftest import make_config

LINEAR_D2 = {"kind": "linear_mean", "u": "e1"}
samples_st = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=50).filter(
    lambda xs: max(abs(x) for x in xs) > 1e-6)


class TestLoss:
    @pytest.mark.parametrize("loss", [LossFunction.power(1), LossFunction.power(3.5), LossFunction("psi1"),
                                      LossFunction("psi2")])
    def test_loss_axioms(self, loss):
        u = np.linspace(0, 3, 301)
        assert loss(0.0) == 0.0
        np.testing.assert_array_equal(loss(u), loss(-u))
        assert np.all(np.diff(loss(u)) >= 0)
        assert np.all(loss((u[:-1] + u[1:]) / 2) <= (loss(u[:-1]) + loss(u[1:])) / 2 + 1e-15)

    def test_rejects_p_below_one(self):
        with pytest.raises(ValueError):
            LossFunction.power(0.5)

    def test_names(self):
        assert LossFunction.power(2).name == "power:2"
        assert LossFunction("psi1").name == "psi1"


class TestOrlicz:
    def test_unit_pair(self):
        np.testing.assert_allclose(orlicz_norm([1.0, -1.0], LossFunction.power(2)), 1.0, rtol=1e-12)

    def test_zeros(self):
        assert orlicz_norm([0.0, 0.0, 0.0], LossFunction("psi2")) == 0.0

    def test_power_p_is_lp(self):
        x = np.random.default_rng(0).standard_t(5, 1000)
        for p in (1.0, 2.0, 3.0):
            lp = np.mean(np.abs(x) ** p) ** (1 / p)
            np.testing.assert_allclose(orlicz_norm(x, LossFunction.power(p)), lp, rtol=1e-8)

    def test_psi1_exact_root(self):
        # single sample x: exp(x/c) - 1 = 1 -> c = x / log 2
        np.testing.assert_allclose(orlicz_norm([3.0], LossFunction("psi1")), 3.0 / math.log(2.0), rtol=1e-10)

    def test_psi2_normal(self):
        # psi2 norm of N(0,1) is sqrt(8/3)
        x = np.random.default_rng(1).standard_normal(400000)
        np.testing.assert_allclose(orlicz_norm(x, LossFunction("psi2")), math.sqrt(8 / 3), rtol=0.02)

    def test_detail_mean_loss(self):
        x = np.random.default_rng(2).normal(size=100)
        c, at = orlicz_norm_detail(x, LossFunction("psi1"))
        assert math.isfinite(c)
        assert at <= 1.0 and at > 1.0 - 1e-8

    def test_empty(self):
        with pytest.raises(ValueError):
            orlicz_norm([], LossFunction.power(2))

    @settings(max_examples=100, deadline=None)
    @given(samples_st)
    def test_power2_is_rms(self, xs):
        x = np.array(xs)
        np.testing.assert_allclose(orlicz_norm(x, LossFunction.power(2)), np.sqrt(np.mean(x * x)), rtol=1e-8)

    @settings(max_examples=100, deadline=None)
    @given(samples_st, st.floats(1e-3, 1e3), st.sampled_from(["power", "psi1", "psi2"]))
    def test_homogeneous(self, xs, t, kind):
        loss = LossFunction(kind, 1.5)
        x = np.array(xs)
        np.testing.assert_allclose(orlicz_norm(t * x, loss), t * orlicz_norm(x, loss), rtol=1e-8)


class TestKS:
    def test_optimal_quantiles(self):
        m = 1000
        x = norm.ppf((np.arange(1, m + 1) - 0.5) / m)
        assert ks_normal(x) <= 1 / (2 * m) + 1e-12

    def test_point_mass(self):
        assert ks_normal(np.zeros(10)) == pytest.approx(0.5, abs=1e-15)

    def test_normal_draws(self):
        assert ks_normal(np.random.default_rng(3).standard_normal(100000)) <= 0.006

    def test_shift_detected(self):
        assert ks_normal(np.random.default_rng(4).standard_normal(5000) + 0.5) > 0.15


class TestRiskEval:
    def test_linear(self):
        cfg = make_config(model={"d": 2, "n": 100}, functional=LINEAR_D2, experiment={"replicates": 20000})
        r = risk_eval(cfg)
        assert abs(r.bias_hat) <= 4 * r.bias_stderr
        assert abs(r.rmse_hat - 0.1) <= 0.01
        assert r.sigma_f_true == pytest.approx(1.0)
        assert r.rmse_hat >= abs(r.bias_hat) - 2 * r.bias_stderr

    def test_chi_square_plug_in(self):
        r = risk_eval(make_config(experiment={"replicates": 100000}))
        assert abs(r.bias_hat - 0.2) <= 4 * r.bias_stderr
        assert r.k == 0

    def test_chi_square_k1(self):
        cfg = make_config(estimator={"k": 1, "inner_replicates": 16}, experiment={"replicates": 20000})
        r = risk_eval(cfg)
        assert abs(r.bias_hat + 0.04) <= 4 * r.bias_stderr
        assert abs(r.bias_cv + 0.04) <= 4 * r.bias_cv_stderr
        assert r.bias_cv_stderr < r.bias_stderr
        assert 0.0 < r.inner_noise_share < 1.0

    def test_report_fields(self):
        cfg = make_config(losses=["power:2", "psi1", "psi2"])
        r = risk_eval(cfg, seed=99)
        assert r.seed == 99
        assert set(r.orlicz) == {"power:2", "psi1", "psi2"}
        np.testing.assert_allclose(r.orlicz["power:2"], r.rmse_hat, rtol=1e-8)
        assert r.config_hash == cfg.with_seed(99).config_hash()
        assert r.bias_ci_low < r.bias_hat < r.bias_ci_high

    def test_reproducible_across_workers(self):
        cfg = make_config(estimator={"k": 1, "inner_replicates": 8}, experiment={"replicates": 600})
        a = simulate_errors(cfg, 17, workers=1)
        b = simulate_errors(cfg, 17, workers=3)
        np.testing.assert_array_equal(a.error, b.error)
        assert risk_eval(cfg, 17, 1) == risk_eval(cfg, 17, 2)

    def test_seed_required(self):
        cfg = make_config(experiment={"replicates": 10, "seed": None})
        with pytest.raises(ValueError):
            risk_eval(cfg)


class TestNormality:
    def test_linear(self):
        cfg = make_config(model={"d": 2, "n": 200}, functional=LINEAR_D2, experiment={"replicates": 5000})
        ks, z = normality_experiment(cfg)
        assert z.shape == (5000,)
        assert ks <= 0.03

    def test_report_carries_ks(self):
        cfg = make_config(model={"d": 2, "n": 50}, functional=LINEAR_D2, experiment={"replicates": 500})
        assert normality_report(cfg).ks_statistic == normality_experiment(cfg)[0]

    def test_constant_rejected(self):
        const = {"kind": "affine_combination", "offset": 3.0,
                 "terms": [{"weight": 0.0, "functional": LINEAR_D2}]}
        cfg = make_config(model={"d": 2, "n": 50}, functional=const, experiment={"replicates": 50})
        with pytest.raises(NumericalError):
            normality_experiment(cfg)

    @pytest.mark.slow
    def test_linear_ks_level(self):
        # KS at the 1% level passes for at least 95 of 100 master seeds
        m = 1000
        crit = 1.628 / math.sqrt(m)
        cfg = make_config(model={"d": 2, "n": 50}, functional=LINEAR_D2, experiment={"replicates": m})
        passes = sum(normality_experiment(cfg, seed)[0] <= crit for seed in range(100))
        assert passes >= 95


class TestSweep:
    def test_weighted_slope_exact_line(self):
        s, se = weighted_slope([0, 1, 2, 3], [1, -1, -3, -5], [0.1, 0.2, 0.1, 0.3])
        assert s == pytest.approx(-2.0, abs=1e-13)
        assert se > 0

    def test_linear_rmse_slope(self):
        cfg = make_config(model={"d": 2, "n": 50}, functional=LINEAR_D2, experiment={"replicates": 20000},
                          sweep={"n": [50, 100, 200, 400]})
        res = rate_sweep(cfg)
        assert [r.n for r in res.reports] == [50, 100, 200, 400]
        fit = next(s for s in res.slopes if s.response == "log_rmse")
        assert abs(fit.slope + 0.5) <= 0.05
        assert len({r.config_hash for r in res.reports}) == 1

    def test_plug_in_bias_slope(self):
        cfg = make_config(experiment={"replicates": 100000}, sweep={"n": [11, 21, 41, 81]})
        res = rate_sweep(cfg)
        fit = next(s for s in res.slopes if s.response == "log_abs_bias" and s.regressor == "log_n")
        assert abs(fit.slope + 1.0) <= 0.1

    def test_fit_skips_unresolved_bias(self):
        # linear functional: bias is exactly zero, so no bias slope is fitted
        cfg = make_config(model={"d": 2, "n": 50}, functional=LINEAR_D2, experiment={"replicates": 200},
                          sweep={"n": [50, 100]})
        res = rate_sweep(cfg)
        assert [s.response for s in res.slopes] == ["log_rmse"]
