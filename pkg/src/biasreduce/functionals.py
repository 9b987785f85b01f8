"""Smooth functionals of ``(mu, sigma)`` with analytic gradients.

All functionals evaluate on batched parameters: ``mu`` of shape ``(..., d)``
and ``sigma`` of shape ``(..., d, d)`` give values of shape ``(...)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .model import Theta, symmetrize

TIE_TOL = 1e-8


@dataclass
class Gradient:
    d_mu: np.ndarray
    d_sigma: np.ndarray

    def pair(self, w: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Directional derivative ``<d_mu, w> + <d_sigma, W>`` (Frobenius)."""
        return np.sum(self.d_mu * w, axis=-1) + np.sum(self.d_sigma * W, axis=(-2, -1))


@dataclass(frozen=True)
class ScalarFunction:
    """A smooth real function with its derivative and open domain ``(lower, upper)``."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    lower: float = -math.inf
    upper: float = math.inf

    def check_domain(self, lam: np.ndarray) -> None:
        if np.any(lam <= self.lower) or np.any(lam >= self.upper):
            raise DomainError(
                f"spectrum [{np.min(lam):.4g}, {np.max(lam):.4g}] leaves the domain "
                f"({self.lower}, {self.upper}) of {self.name}"
            )


SCALAR_FUNCTIONS = {
    "log": ScalarFunction("log", np.log, lambda x: 1.0 / x, lower=0.0),
    "sqrt": ScalarFunction("sqrt", np.sqrt, lambda x: 0.5 / np.sqrt(x), lower=0.0),
    "inv": ScalarFunction("inv", lambda x: 1.0 / x, lambda x: -1.0 / x**2, lower=0.0),
    "square": ScalarFunction("square", np.square, lambda x: 2.0 * x),
    "exp": ScalarFunction("exp", np.exp, np.exp),
}


def _sym_matrix(b, d: int | None = None) -> np.ndarray:
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.shape[0] != b.shape[1]:
        raise ValueError(f"matrix parameter must be square, got {b.shape}")
    if d is not None and b.shape[0] != d:
        raise ValueError(f"matrix parameter has dimension {b.shape[0]}, expected {d}")
    return b


def _zeros_like_grad(mu, sigma):
    return np.zeros(np.shape(mu)), np.zeros(np.shape(sigma))


class Functional:
    """Base class.  Subclasses implement ``_value`` and ``_grad`` on arrays."""

    kind: str = "functional"

    def __init__(self, smoothness: float):
        self.smoothness = float(smoothness)

    def value(self, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        return self._value(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))

    def gradient(self, mu: np.ndarray, sigma: np.ndarray) -> Gradient:
        d_mu, d_sigma = self._grad(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
        return Gradient(d_mu, symmetrize(d_sigma))

    def __call__(self, theta: Theta):
        return self.value(theta.mu, theta.sigma)

    def rotate(self, q: np.ndarray) -> "Functional":
        """The functional ``theta -> f(Q^T mu, Q^T sigma Q)``."""
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind

    def __repr__(self):
        return f"<{self.describe()} s={self.smoothness:g}>"

    def _value(self, mu, sigma):
        raise NotImplementedError

    def _grad(self, mu, sigma):
        raise NotImplementedError


class LinearMean(Functional):
    """``<u, mu>``."""

    kind = "linear_mean"

    def __init__(self, u, smoothness: float = 2.0):
        super().__init__(smoothness)
        self.u = np.asarray(u, dtype=float)

    def _value(self, mu, sigma):
        return mu @ self.u

    def _grad(self, mu, sigma):
        d_mu, d_sigma = _zeros_like_grad(mu, sigma)
        d_mu[...] = self.u
        return d_mu, d_sigma

    def rotate(self, q):
        return LinearMean(q @ self.u, self.smoothness)

    def describe(self):
        return f"linear_mean(u={np.round(self.u, 6).tolist()})"


class QuadraticMean(Functional):
    """``||mu||^2``."""

    kind = "quadratic_mean"

    def __init__(self, smoothness: float = 3.0):
        super().__init__(smoothness)

    def _value(self, mu, sigma):
        return np.sum(mu * mu, axis=-1)

    def _grad(self, mu, sigma):
        return 2.0 * mu, np.zeros(np.shape(sigma))

    def rotate(self, q):
        return QuadraticMean(self.smoothness)


class TraceLinear(Functional):
    """``tr(sigma B)``."""

    kind = "trace_linear"

    def __init__(self, b, smoothness: float = 2.0):
        super().__init__(smoothness)
        self.b = _sym_matrix(b)

    def _value(self, mu, sigma):
        return np.einsum("...ij,ji->...", sigma, self.b)

    def _grad(self, mu, sigma):
        d_mu, d_sigma = _zeros_like_grad(mu, sigma)
        d_sigma[...] = 0.5 * (self.b + self.b.T)
        return d_mu, d_sigma

    def rotate(self, q):
        return TraceLinear(q @ self.b @ q.T, self.smoothness)

    def describe(self):
        return f"trace_linear(B={np.round(self.b, 6).tolist()})"


class TraceQuadratic(Functional):
    """``tr(B sigma B sigma)`` for symmetric ``B``; ``B = I`` gives ``tr(sigma^2)``."""

    kind = "trace_quadratic"

    def __init__(self, b=None, smoothness: float = 3.0):
        super().__init__(smoothness)
        self.b = None if b is None else symmetrize(_sym_matrix(b))

    def _weight(self, d):
        return np.eye(d) if self.b is None else self.b

    def _value(self, mu, sigma):
        bs = self._weight(sigma.shape[-1]) @ sigma
        return np.einsum("...ij,...ji->...", bs, bs)

    def _grad(self, mu, sigma):
        b = self._weight(sigma.shape[-1])
        return np.zeros(np.shape(mu)), 2.0 * (b @ sigma @ b)

    def rotate(self, q):
        b = self._weight(q.shape[0])
        return TraceQuadratic(q @ b @ q.T, self.smoothness)

    def describe(self):
        return "trace_quadratic(B=I)" if self.b is None else f"trace_quadratic(B={np.round(self.b, 6).tolist()})"


class SpectralTrace(Functional):
    """``tr(phi(sigma) B)`` with ``phi`` applied through the spectral calculus."""

    kind = "spectral_trace"

    def __init__(self, phi: ScalarFunction | str, b=None, smoothness: float = 3.0):
        super().__init__(smoothness)
        self.phi = SCALAR_FUNCTIONS[phi] if isinstance(phi, str) else phi
        self.b = None if b is None else _sym_matrix(b)

    def _weight(self, d):
        return np.eye(d) if self.b is None else self.b

    def _eig(self, sigma):
        lam, q = np.linalg.eigh(symmetrize(sigma))
        self.phi.check_domain(lam)
        return lam, q

    def _value(self, mu, sigma):
        lam, q = self._eig(sigma)
        b = self._weight(sigma.shape[-1])
        # tr(Q diag(phi) Q^T B) = sum_i phi(l_i) (Q^T B Q)_ii
        diag_b = np.einsum("...ki,kl,...li->...i", q, b, q)
        return np.sum(self.phi.f(lam) * diag_b, axis=-1)

    def divided_differences(self, lam: np.ndarray) -> np.ndarray:
        li = lam[..., :, None]
        lj = lam[..., None, :]
        gap = li - lj
        tie = np.abs(gap) <= TIE_TOL * (1.0 + np.abs(li))
        safe = np.where(tie, 1.0, gap)
        dd = (self.phi.f(li) - self.phi.f(lj)) / safe
        return np.where(tie, self.phi.df(0.5 * (li + lj)), dd)

    def _grad(self, mu, sigma):
        lam, q = self._eig(sigma)
        b = symmetrize(self._weight(sigma.shape[-1]))
        qt = np.swapaxes(q, -1, -2)
        inner = self.divided_differences(lam) * (qt @ b @ q)
        return np.zeros(np.shape(mu)), q @ inner @ qt

    def rotate(self, q):
        b = self._weight(q.shape[0])
        return SpectralTrace(self.phi, q @ b @ q.T, self.smoothness)

    def describe(self):
        b = "I" if self.b is None else np.round(self.b, 6).tolist()
        return f"spectral_trace(phi={self.phi.name}, B={b})"


class AffineCombination(Functional):
    """``offset + sum_i w_i f_i``."""

    kind = "affine_combination"

    def __init__(self, terms: Sequence[Functional], weights: Sequence[float], offset: float = 0.0,
                 smoothness: float | None = None):
        if len(terms) != len(weights) or not terms:
            raise ValueError("affine_combination needs matching, nonempty terms and weights")
        if smoothness is None:
            smoothness = min(t.smoothness for t in terms)
        super().__init__(smoothness)
        self.terms = list(terms)
        self.weights = [float(w) for w in weights]
        self.offset = float(offset)

    def _value(self, mu, sigma):
        total = self.offset
        for w, t in zip(self.weights, self.terms):
            total = total + w * t._value(mu, sigma)
        return total + np.zeros(np.shape(mu)[:-1])

    def _grad(self, mu, sigma):
        d_mu, d_sigma = _zeros_like_grad(mu, sigma)
        for w, t in zip(self.weights, self.terms):
            gm, gs = t._grad(mu, sigma)
            d_mu = d_mu + w * gm
            d_sigma = d_sigma + w * gs
        return d_mu, d_sigma

    def rotate(self, q):
        return AffineCombination([t.rotate(q) for t in self.terms], self.weights, self.offset,
                                 self.smoothness)

    def describe(self):
        parts = " + ".join(f"{w:g}*{t.describe()}" for w, t in zip(self.weights, self.terms))
        return f"affine_combination({self.offset:g} + {parts})"


def linear_mean(u, smoothness: float = 2.0) -> LinearMean:
    return LinearMean(u, smoothness)


def quadratic_mean(smoothness: float = 3.0) -> QuadraticMean:
    return QuadraticMean(smoothness)


def trace_linear(b, smoothness: float = 2.0) -> TraceLinear:
    return TraceLinear(b, smoothness)


def trace_quadratic(b=None, smoothness: float = 3.0) -> TraceQuadratic:
    return TraceQuadratic(b, smoothness)


def spectral_trace(phi: ScalarFunction | str, b=None, smoothness: float = 3.0) -> SpectralTrace:
    return SpectralTrace(phi, b, smoothness)


def affine_combination(terms, weights, offset: float = 0.0, smoothness: float | None = None):
    return AffineCombination(terms, weights, offset, smoothness)


def catalog(d: int) -> dict[str, Functional]:
    """One representative of every functional kind in dimension ``d``."""
    u = np.zeros(d)
    u[0] = 1.0
    b = np.diag(np.linspace(1.0, 2.0, d))
    return {
        "linear_mean": linear_mean(u),
        "quadratic_mean": quadratic_mean(),
        "trace_linear": trace_linear(b),
        "trace_quadratic": trace_quadratic(),
        "spectral_trace": spectral_trace("log", b),
        "affine_combination": affine_combination(
            [linear_mean(u), trace_quadratic(), spectral_trace("sqrt")], [0.5, -1.0, 2.0], offset=1.0
        ),
    }


def evaluate(f: Functional, theta: Theta):
    return f.value(theta.mu, theta.sigma)


def grad(f: Functional, theta: Theta) -> Gradient:
    return f.gradient(theta.mu, theta.sigma)


def sigma_f(f: Functional, theta: Theta):
    """Efficiency standard deviation.

    Uses ``||S g||^2 = g^T sigma g`` and ``||S G S||_2^2 = tr(G sigma G sigma)``
    with ``S = sigma^{1/2}``, which avoids the matrix square root.
    """
    g = grad(f, theta)
    sig = theta.sigma
    mu_part = np.einsum("...i,...ij,...j->...", g.d_mu, sig, g.d_mu)
    gs = g.d_sigma @ sig
    sigma_part = np.einsum("...ij,...ji->...", gs, gs)
    return np.sqrt(np.maximum(mu_part + 2.0 * sigma_part, 0.0))


def fd_check(f: Functional, theta: Theta, h: float = 1e-5, rng: np.random.Generator | None = None,
             n_directions: int = 4) -> float:
    """Worst error of central differences against the analytic gradient.

    Errors are relative with a unit floor, ``|fd - an| / max(1, |an|)``, over
    random unit directions in ``mu`` alone and in ``sigma`` alone.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-7, 1e-3], got {h}")
    rng = np.random.default_rng(0) if rng is None else rng
    d = theta.d
    g = grad(f, theta)
    worst = 0.0
    for i in range(2 * n_directions):
        w = np.zeros(d)
        W = np.zeros((d, d))
        if i % 2 == 0:
            w = rng.standard_normal(d)
            w /= np.linalg.norm(w)
        else:
            W = symmetrize(rng.standard_normal((d, d)))
            W /= np.linalg.norm(W)
        plus = f.value(theta.mu + h * w, theta.sigma + h * W)
        minus = f.value(theta.mu - h * w, theta.sigma - h * W)
        fd = (plus - minus) / (2 * h)
        an = float(g.pair(w, W))
        worst = max(worst, abs(float(fd) - an) / max(1.0, abs(an)))
    return worst
