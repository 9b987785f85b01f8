"""Gaussian model primitives.

Parameters are ``theta = (mu, sigma)`` with ``mu`` of shape ``(..., d)`` and
``sigma`` of shape ``(..., d, d)``.  Every routine in this module accepts
leading batch dimensions so that thousands of bootstrap-chain states can be
pushed through one ``eigh`` call.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np


log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
CLAMP_LOG_TOL = 1e-10


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def asymmetry(m: np.ndarray) -> float:
    """Largest ``|m_ij - m_ji|`` relative to ``1 + max|m|``."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    gap = np.max(np.abs(m - np.swapaxes(m, -1, -2)))
    return float(gap / (1.0 + np.max(np.abs(m))))


def _require_symmetric(m: np.ndarray, tol: float = 1e-10) -> None:
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {m.shape}")
    if asymmetry(m) > tol:
        raise ValueError(f"matrix is not symmetric (relative asymmetry {asymmetry(m):.3e})")


@dataclass
class Theta:
    """Model parameter ``(mu, sigma)``.

    Instances are also used for parameter *estimates*, which may have a
    singular sample covariance; call :meth:`validate` when the
    positive-definite invariant is actually required.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.ndim < 1 or self.sigma.ndim < 2:
            raise ValueError("mu must be at least 1-d and sigma at least 2-d")
        d = self.mu.shape[-1]
        if self.sigma.shape[-2:] != (d, d):
            raise ValueError(f"sigma shape {self.sigma.shape} does not match mean dimension {d}")

    @property
    def d(self) -> int:
        return self.mu.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.mu.shape[:-1]

    def validate(self) -> "Theta":
        if asymmetry(self.sigma) > SYMMETRY_TOL:
            raise ValueError("sigma is not symmetric")
        lam = np.linalg.eigvalsh(symmetrize(self.sigma))
        if np.min(lam) <= 0:
            raise ValueError(f"sigma is not positive definite (smallest eigenvalue {np.min(lam):.3e})")
        return self

    def is_valid(self) -> bool:
        try:
            self.validate()
        except ValueError:
            return False
        return True

    def copy(self) -> "Theta":
        return Theta(self.mu.copy(), self.sigma.copy())

    def __getitem__(self, idx) -> "Theta":
        """Index the batch dimensions."""
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Theta(self.mu[idx], self.sigma[idx])


@dataclass(frozen=True)
class ParamDomain:
    """The region of parameters whose covariance spectrum lies in ``[1/a, a]``."""

    a: float
    d: int

    def __post_init__(self):
        if self.a < 1:
            raise ValueError(f"spectral bound a must be >= 1, got {self.a}")
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")

    def contains(self, theta: Theta) -> bool:
        if theta.d != self.d:
            return False
        if asymmetry(theta.sigma) > SYMMETRY_TOL:
            return False
        lam = np.linalg.eigvalsh(symmetrize(theta.sigma))
        return bool(np.all(lam >= 1.0 / self.a) and np.all(lam <= self.a))

    __contains__ = contains


@dataclass
class EigenDecomp:
    """Spectral decomposition with eigenvalues sorted in descending order."""

    q: np.ndarray
    lam: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.q * self.lam[..., None, :]) @ np.swapaxes(self.q, -1, -2)


def eigen_decomp(sigma: np.ndarray) -> EigenDecomp:
    sigma = np.asarray(sigma, dtype=float)
    _require_symmetric(sigma)
    lam, q = np.linalg.eigh(symmetrize(sigma))
    return EigenDecomp(q=q[..., ::-1], lam=lam[..., ::-1])


def apply_spectral(phi: Callable[[np.ndarray], np.ndarray], sigma: np.ndarray) -> np.ndarray:
    """Return ``Q diag(phi(lambda)) Q^T`` for symmetric ``sigma``.

    ``phi`` must be vectorized over numpy arrays.
    """
    sigma = np.asarray(sigma, dtype=float)
    _require_symmetric(sigma)
    lam, q = np.linalg.eigh(symmetrize(sigma))
    out = (q * np.asarray(phi(lam), dtype=float)[..., None, :]) @ np.swapaxes(q, -1, -2)
    return symmetrize(out)


def _clamped(lam: np.ndarray) -> np.ndarray:
    worst = float(np.max(-lam, initial=0.0))
    if worst > CLAMP_LOG_TOL:
        log.debug("clamping negative eigenvalue of magnitude %.3e to zero", worst)
    return np.maximum(lam, 0.0)


def psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative eigenvalues clamped)."""
    return apply_spectral(lambda lam: np.sqrt(_clamped(lam)), sigma)


def smooth_step(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for ``u <= 1/2``, 1 for ``u >= 1``, monotone between."""
    u = np.asarray(u, dtype=float)

    def h(x):
        pos = x > 0
        out = np.zeros_like(x)
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    left = h(2.0 * u - 1.0)
    right = h(2.0 - 2.0 * u)
    # left + right > 0 everywhere: at least one argument is positive
    return left / (left + right)


@dataclass(frozen=True)
class SmoothSqrt:
    """Compactly supported smoothing of ``sqrt``.

    Equal to ``sqrt(u)`` on ``[1/(2a), 2a]``, zero outside
    ``(1/(4a), 4a)``, and bounded by ``sqrt(u)`` everywhere.
    """

    a: float

    def __post_init__(self):
        if self.a < 1:
            raise ValueError(f"a must be >= 1, got {self.a}")

    @property
    def plateau(self) -> tuple[float, float]:
        return 1.0 / (2 * self.a), 2.0 * self.a

    @property
    def support(self) -> tuple[float, float]:
        return 1.0 / (4 * self.a), 4.0 * self.a

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        root = np.sqrt(np.maximum(u, 0.0))
        return smooth_step(2 * self.a * u) * root * (1.0 - smooth_step(u / (4 * self.a)))


def gamma_matrix(sigma: np.ndarray, a: float) -> np.ndarray:
    return apply_spectral(SmoothSqrt(a), sigma)


@dataclass
class NoiseBlock:
    """Standard normal draws ``z`` of shape ``(..., n, d)`` and their statistics."""

    z: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        if self.z.ndim < 2:
            raise ValueError("noise block must have shape (..., n, d)")

    @classmethod
    def draw(cls, rng: np.random.Generator, n: int, d: int, batch: tuple = ()) -> "NoiseBlock":
        return cls(rng.standard_normal((*batch, n, d)))

    @property
    def n(self) -> int:
        return self.z.shape[-2]

    @cached_property
    def zbar(self) -> np.ndarray:
        return self.z.mean(axis=-2)

    @cached_property
    def sigma_hat_z(self) -> np.ndarray:
        centered = self.z - self.zbar[..., None, :]
        return symmetrize(np.swapaxes(centered, -1, -2) @ centered / (self.n - 1))

    @cached_property
    def sigma_tilde_z(self) -> np.ndarray:
        return symmetrize(np.swapaxes(self.z, -1, -2) @ self.z / self.n)


def dataset_from_noise(theta: Theta, z: np.ndarray) -> np.ndarray:
    """Rows ``mu + sigma^{1/2} z_j``; batch dims of ``theta`` and ``z`` broadcast."""
    root = psd_sqrt(theta.sigma)
    return theta.mu[..., None, :] + np.asarray(z) @ root


def sample_dataset(theta: Theta, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        raise ValueError(f"need n >= 2 observations, got {n}")
    z = rng.standard_normal((*theta.batch_shape, n, theta.d))
    return dataset_from_noise(theta, z)


def estimate_theta(data: np.ndarray) -> Theta:
    """Sample mean and ``(n-1)``-normalized sample covariance of the rows."""
    data = np.asarray(data, dtype=float)
    if data.ndim < 2:
        raise ValueError("data must have shape (..., n, d)")
    n = data.shape[-2]
    if n < 2:
        raise ValueError(f"need n >= 2 observations, got {n}")
    mu = data.mean(axis=-2)
    centered = data - mu[..., None, :]
    sigma = symmetrize(np.swapaxes(centered, -1, -2) @ centered / (n - 1))
    return Theta(mu, sigma)


def op_norm(m: np.ndarray) -> np.ndarray:
    """Operator norm of symmetric matrices (largest absolute eigenvalue)."""
    return np.max(np.abs(np.linalg.eigvalsh(symmetrize(np.asarray(m, dtype=float)))), axis=-1)


def param_norm(w: np.ndarray, W: np.ndarray) -> float:
    w = np.asarray(w, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.shape != (w.shape[-1], w.shape[-1]):
        raise ValueError(f"dimension mismatch: vector {w.shape}, matrix {W.shape}")
    return float(np.linalg.norm(w) + op_norm(W))
