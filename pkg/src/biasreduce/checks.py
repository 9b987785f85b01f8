"""Self-checks run by ``biasreduce oracle-check``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oracles
from .chain import KernelKind, _fk_weights_literal, estimate_Bk, fk_weights
from .functionals import trace_quadratic
from .model import Theta
from .oracles import Poly

GH_TEST_FUNCTIONS: dict[str, Callable] = {
    "x^2": np.square,
    "x^4": lambda x: x**4,
    "cos": np.cos,
    "exp(x/2)": lambda x: np.exp(0.5 * x),
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _bernstein_examples() -> CheckResult:
    errs = [
        abs(oracles.bernstein_T(Poly([0, 1]), 10)(0.3) - 0.3),
        abs(oracles.bernstein_T(Poly([2.5]), 10)(0.7) - 2.5),
        abs(oracles.bernstein_T(Poly([0, 0, 1]), 10)(0.5) - 0.275),
        abs(oracles.binom_Bk_exact(Poly([0, 0, 1]), 10, 1)(0.5) - 0.025),
        abs(oracles.binom_Bk_exact(Poly([0, 0, 1]), 10, 2)(0.5) + 0.0025),
    ]
    worst = max(errs)
    return CheckResult("bernstein T/B closed forms", worst < 1e-14, f"max error {worst:.2e}")


def _bernstein_linear_positive(rng) -> CheckResult:
    grid = np.linspace(0, 1, 101)
    worst = 0.0
    positive = True
    for _ in range(50):
        p, q = Poly(rng.uniform(-1, 1, 5)), Poly(rng.uniform(-1, 1, 4))
        al, be = rng.uniform(-2, 2, 2)
        lhs = oracles.bernstein_T(al * p + be * q, 12)(grid)
        rhs = al * oracles.bernstein_T(p, 12)(grid) + be * oracles.bernstein_T(q, 12)(grid)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        # (x - c)^2 (1 + x) >= 0 on [0, 1]
        c = rng.uniform(0, 1)
        sq = Poly([c * c, c * c - 2 * c, 1 - 2 * c, 1])
        positive &= bool(np.all(oracles.bernstein_T(sq, 12)(grid) >= -1e-15))
    return CheckResult("bernstein T linear and positive", worst < 1e-12 and positive,
                       f"linearity error {worst:.2e}, positive={positive}")


def _bias_identity(rng) -> CheckResult:
    grid = np.linspace(0, 1, 101)
    worst = 0.0
    for n in (5, 10, 20):
        for deg in range(min(6, n) + 1):
            p = Poly(rng.uniform(-1, 1, deg + 1))
            for k in range(5):
                exact = oracles.binom_fk_bias_exact(p, n, k, grid)
                enum = oracles.binom_fk_bias_enumerated(p, n, k, grid)
                worst = max(worst, float(np.max(np.abs(exact - enum))))
    return CheckResult("binomial f_k bias = (-1)^k B^(k+1) f", worst <= 1e-12, f"max error {worst:.2e}")


def _fk_weights_check() -> CheckResult:
    ok = all(np.array_equal(fk_weights(k), _fk_weights_literal(k)) for k in range(13))
    sums = all(float(np.sum(fk_weights(k))) == 1.0 for k in range(13))
    return CheckResult("f_k weights match double sum (k <= 12)", ok and sums, f"equal={ok}, sum to 1={sums}")


def _chisq(seed: int, replicates: int) -> list[CheckResult]:
    out = []
    theta = Theta([0.0], [[1.0]])
    f = trace_quadratic()
    for j in (1, 2, 3):
        rng = np.random.default_rng([seed, j])
        est = estimate_Bk(f, theta, j, 11, KernelKind.exact(), replicates, rng)
        target = oracles.chisq_Bj_exact(1.0, 11, j)
        z = (est.value - target) / est.stderr
        out.append(CheckResult(f"chi-square B^{j} sigma^4 vs bootstrap chain", abs(z) <= 4,
                               f"MC {est.value:.5f} +- {est.stderr:.5f}, exact {target:.5f}, z={z:+.2f}"))
    return out


def _gauss_hermite_gate() -> CheckResult:
    worst = 0.0
    for f in GH_TEST_FUNCTIONS.values():
        for k in range(4):
            a = oracles.shift_Bk_quadrature(f, 0.3, 0.5, k, m=40)
            b = oracles.shift_Bk_quadrature(f, 0.3, 0.5, k, m=80)
            worst = max(worst, abs(a - b))
    return CheckResult("Gauss-Hermite m=40 vs m=80", worst < 1e-10, f"max change {worst:.2e}")


def _shift_vs_mc(seed: int, replicates: int) -> list[CheckResult]:
    out = []
    theta, sd = 0.3, 0.5
    weights_cache = {}
    for name, f in GH_TEST_FUNCTIONS.items():
        for k in (1, 2, 3):
            rng = np.random.default_rng([seed, k, len(name)])
            steps = rng.standard_normal((replicates, k)) * sd
            path = theta + np.concatenate([np.zeros((replicates, 1)), np.cumsum(steps, axis=1)], axis=1)
            w = weights_cache.setdefault(k, np.array([(-1) ** (k - j) * math.comb(k, j) for j in range(k + 1)]))
            samples = f(path) @ w
            mean = samples.mean()
            se = samples.std(ddof=1) / math.sqrt(replicates)
            exact = oracles.shift_Bk_quadrature(f, theta, sd, k)
            ok = abs(mean - exact) <= 4 * se + 1e-12
            out.append(CheckResult(f"shift model B^{k} {name}: quadrature vs chain", ok,
                                   f"MC {mean:.5f} +- {se:.5f}, quadrature {exact:.5f}"))
    return out


def run_oracle_suite(seed: int = 20240601, replicates: int = 100_000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [
        _bernstein_examples(),
        _bernstein_linear_positive(rng),
        _bias_identity(rng),
        _fk_weights_check(),
        _gauss_hermite_gate(),
    ]
    results += _chisq(seed, replicates)
    results += _shift_vs_mc(seed, replicates)
    return results
