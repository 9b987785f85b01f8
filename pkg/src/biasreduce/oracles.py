"""Closed-form operators used as ground truth for the Monte Carlo engine.

Three models have an exactly computable bias operator:

* binomial proportions, where ``T`` maps a polynomial to its Bernstein
  polynomial (computed through factorial moments);
* the one-dimensional Gaussian model with ``f(theta) = sigma^4``, on which
  ``B`` acts as multiplication by ``2 / (n - 1)``;
* the Gaussian shift model, where the chain is a Gaussian random walk and
  ``T^j f`` is a one-dimensional Gaussian integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import hermite_e

MAX_DEGREE = 12


@dataclass(frozen=True)
class Poly:
    """Polynomial in ``theta`` with ascending monomial coefficients (trailing zeros trimmed)."""

    coeffs: tuple

    def __init__(self, coeffs: Sequence[float] = ()):
        c = [float(x) for x in coeffs]
        while c and c[-1] == 0.0:
            c.pop()
        object.__setattr__(self, "coeffs", tuple(c))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return not self.coeffs

    def __call__(self, theta):
        if self.is_zero():
            return np.zeros_like(np.asarray(theta, dtype=float))
        return np.polynomial.polynomial.polyval(theta, self.coeffs)

    def __add__(self, other: "Poly") -> "Poly":
        return Poly(np.polynomial.polynomial.polyadd(self.coeffs or [0.0], other.coeffs or [0.0]))

    def __sub__(self, other: "Poly") -> "Poly":
        return Poly(np.polynomial.polynomial.polysub(self.coeffs or [0.0], other.coeffs or [0.0]))

    def __mul__(self, scalar: float) -> "Poly":
        return Poly([scalar * c for c in self.coeffs])

    __rmul__ = __mul__


@lru_cache(maxsize=None)
def _stirling2(j: int, m: int) -> int:
    if j == m:
        return 1
    if m == 0 or m > j:
        return 0
    return m * _stirling2(j - 1, m) + _stirling2(j - 1, m - 1)


@lru_cache(maxsize=None)
def _bernstein_matrix(n: int, size: int) -> np.ndarray:
    """Column ``j`` holds the coefficients of ``E (X/n)^j`` for ``X ~ Bin(n, theta)``.

    ``X^j = sum_m S(j, m) X^(m)`` with falling factorials ``X^(m)``, and
    ``E X^(m) = n^(m) theta^m``.
    """
    mat = np.zeros((size, size))
    for j in range(size):
        for m in range(j + 1):
            mat[m, j] = _stirling2(j, m) * math.perm(n, m) / float(n) ** j
    return mat


def _check_degree(p: Poly, n: int) -> None:
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if p.degree > n:
        raise ValueError(f"degree {p.degree} exceeds n = {n}")
    if p.degree > MAX_DEGREE:
        raise ValueError(f"degree {p.degree} exceeds the supported maximum {MAX_DEGREE}")


def bernstein_T(p: Poly, n: int) -> Poly:
    """``theta -> E p(X/n)`` for ``X ~ Binomial(n, theta)``, as an exact polynomial."""
    _check_degree(p, n)
    if p.is_zero():
        return p
    c = np.asarray(p.coeffs)
    return Poly(_bernstein_matrix(n, len(c)) @ c)


def binom_Bk_exact(p: Poly, n: int, k: int) -> Poly:
    _check_degree(p, n)
    for _ in range(k):
        p = bernstein_T(p, n) - p
    return p


def binom_fk(p: Poly, n: int, k: int) -> Poly:
    """The bias-reduced polynomial ``sum_{j<=k} (-1)^j B^j p``."""
    total = Poly()
    term = p
    for j in range(k + 1):
        total = total + (-1) ** j * term
        term = bernstein_T(term, n) - term
    return total


def binom_fk_bias_exact(p: Poly, n: int, k: int, theta) -> np.ndarray:
    """Bias of ``p_k(X/n)`` as ``(-1)^k (B^{k+1} p)(theta)``."""
    return (-1) ** k * binom_Bk_exact(p, n, k + 1)(theta)


def binom_fk_bias_enumerated(p: Poly, n: int, k: int, theta) -> np.ndarray:
    """Same bias by summing over all ``n + 1`` binomial outcomes."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    pk = binom_fk(p, n, k)
    x = np.arange(n + 1)
    comb = np.array([math.comb(n, i) for i in x], dtype=float)
    pmf = comb * theta[:, None] ** x * (1.0 - theta[:, None]) ** (n - x)
    return pmf @ pk(x / n) - p(theta)


def chisq_Bj_exact(sigma2: float, n: int, j: int) -> float:
    """``(B^j f)(sigma2)`` for ``f = sigma^4`` in the one-dimensional Gaussian model.

    ``(n-1) S^2 / sigma^2 ~ chi^2_{n-1}`` gives ``E S^4 = sigma^4 (n+1)/(n-1)``,
    so ``B`` multiplies ``sigma^4`` by ``2/(n-1)``.
    """
    if sigma2 <= 0 or n < 2 or j < 0:
        raise ValueError("need sigma2 > 0, n >= 2, j >= 0")
    return (2.0 / (n - 1)) ** j * sigma2**2


@lru_cache(maxsize=None)
def _gauss_hermite(m: int):
    x, w = hermite_e.hermegauss(m)
    return x, w / math.sqrt(2 * math.pi)


def gaussian_expectation(f: Callable, loc: float, scale: float, m: int = 40) -> float:
    """``E f(loc + scale Z)``, ``Z ~ N(0, 1)``, by ``m``-point Gauss-Hermite quadrature."""
    x, w = _gauss_hermite(m)
    return float(np.dot(w, f(loc + scale * x)))


def shift_Bk_quadrature(f_1d: Callable, theta: float, noise_sd: float, k: int, m: int = 40) -> float:
    """``(B^k f)(theta)`` in the Gaussian shift model ``X = theta + noise_sd Z``.

    The chain after ``j`` steps is ``theta + sqrt(j) noise_sd Z``.
    """
    if m < 20:
        raise ValueError("quadrature order must be at least 20")
    total = 0.0
    for j in range(k + 1):
        coef = (-1) ** (k - j) * math.comb(k, j)
        total += coef * gaussian_expectation(f_1d, theta, math.sqrt(j) * noise_sd, m)
    return total
