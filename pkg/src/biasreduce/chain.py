"""Bootstrap chains, random homotopies and the bias-reduced estimator ``f_k``.

The bias operator ``B = T - I`` acts through the parametric bootstrap chain
``theta^(0) = theta``, ``theta^(j+1) ~ P(theta^(j), .)``:

    (B^k f)(theta) = E sum_j (-1)^(k-j) C(k, j) f(theta^(j))

and ``f_k = sum_{j<=k} (-1)^j B^j f`` is estimated by Monte Carlo over ``R``
chains started at the point of interest.

Control variates
----------------
Sample mean and sample covariance are unbiased, and so is the smoothed
homotopy step, hence the chain is a martingale.  With
``control_variate=True`` each state value ``f(theta^(i))`` is replaced by

    f(theta^(i)) - sum_{j<i} <f'(theta^(j)), theta^(j+1) - theta^(j)>

which has the same expectation and removes the first-order noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError
from .functionals import Functional
from .model import (
    NoiseBlock,
    Theta,
    dataset_from_noise,
    estimate_theta,
    gamma_matrix,
    psd_sqrt,
    symmetrize,
)

PSD_FLAG_TOL = 1e-10
CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class KernelKind:
    """Transition kernel: the exact bootstrap ``P`` or its smoothed version ``Q``."""

    variant: str = "exact"
    a: float | None = None

    def __post_init__(self):
        if self.variant not in ("exact", "smoothed"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "smoothed" and (self.a is None or self.a < 1):
            raise ValueError("smoothed kernel requires a >= 1")

    @classmethod
    def exact(cls) -> "KernelKind":
        return cls("exact")

    @classmethod
    def smoothed(cls, a: float) -> "KernelKind":
        return cls("smoothed", float(a))

    def describe(self) -> str:
        return "exact" if self.variant == "exact" else f"smoothed(a={self.a:g})"


@dataclass
class MCEstimate:
    value: float
    stderr: float
    replicates: int

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "MCEstimate":
        samples = np.asarray(samples, dtype=float)
        r = samples.shape[-1]
        if r < 2:
            raise ValueError("need at least two replicates for a standard error")
        value = samples.mean(axis=-1)
        stderr = samples.std(axis=-1, ddof=1) / math.sqrt(r)
        if np.ndim(value) == 0:
            return cls(float(value), float(stderr), r)
        return cls(value, stderr, r)


@dataclass
class ChainPath:
    states: list[Theta]
    kernel: KernelKind
    n: int

    @property
    def k(self) -> int:
        return len(self.states) - 1


def _as_noise(noise) -> NoiseBlock:
    return noise if isinstance(noise, NoiseBlock) else NoiseBlock(noise)


def _matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (m @ v[..., None])[..., 0]


def homotopy_exact(theta: Theta, t: float, noise) -> Theta:
    """Random homotopy built from the square root of ``sigma``.

    ``t = 0`` returns ``theta`` itself (copied); ``t = 1`` reproduces the
    sample mean and covariance of ``mu + sigma^{1/2} z_j``.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    noise = _as_noise(noise)
    if noise.n < 2:
        raise ValueError("noise block needs at least two rows")
    if t == 0:
        shape = np.broadcast_shapes(theta.batch_shape, noise.zbar.shape[:-1])
        return Theta(np.broadcast_to(theta.mu, (*shape, theta.d)).copy(),
                     np.broadcast_to(theta.sigma, (*shape, theta.d, theta.d)).copy())
    root = psd_sqrt(theta.sigma)
    eye = np.eye(theta.d)
    mu = theta.mu + t * _matvec(root, noise.zbar)
    sigma = symmetrize(root @ ((1.0 - t) * eye + t * noise.sigma_hat_z) @ root)
    return Theta(mu, sigma)


def homotopy_smoothed(theta: Theta, t: float, noise, a: float) -> Theta:
    """``theta + t E(theta)`` with the square root replaced by its smoothed version."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if a < 1:
        raise ValueError(f"a must be >= 1, got {a}")
    noise = _as_noise(noise)
    if t == 0:
        return homotopy_exact(theta, 0.0, noise)
    g = gamma_matrix(theta.sigma, a)
    e_mu = _matvec(g, noise.zbar)
    e_sigma = symmetrize(g @ (noise.sigma_hat_z - np.eye(theta.d)) @ g)
    out = Theta(theta.mu + t * e_mu, symmetrize(theta.sigma + t * e_sigma))
    lam_min = float(np.min(np.linalg.eigvalsh(out.sigma)))
    if lam_min < -PSD_FLAG_TOL:
        raise NumericalError(f"smoothed homotopy produced a covariance with eigenvalue {lam_min:.3e}")
    return out


def kernel_step(theta: Theta, noise, kernel: KernelKind) -> Theta:
    """One bootstrap step driven by the given noise block."""
    noise = _as_noise(noise)
    if kernel.variant == "exact":
        return estimate_theta(dataset_from_noise(theta, noise.z))
    return homotopy_smoothed(theta, 1.0, noise, kernel.a)


def simulate_states(theta: Theta, k: int, kernel: KernelKind, z: np.ndarray) -> Theta:
    """Run chains driven by noise ``z`` of shape ``(..., k, n, d)``.

    Returns a batched ``Theta`` whose mean has shape ``(..., k+1, d)``; index
    ``j`` along that axis holds ``theta^(j)``.
    """
    z = np.asarray(z, dtype=float)
    batch = z.shape[:-3]
    mu = np.broadcast_to(theta.mu, (*batch, theta.d))
    sigma = np.broadcast_to(theta.sigma, (*batch, theta.d, theta.d))
    mus, sigmas = [mu], [sigma]
    state = Theta(mu, sigma)
    for j in range(k):
        state = kernel_step(state, z[..., j, :, :], kernel)
        mus.append(state.mu)
        sigmas.append(state.sigma)
    return Theta(np.stack(mus, axis=-2), np.stack(sigmas, axis=-3))


def sample_chain(theta: Theta, k: int, n: int, kernel: KernelKind, rng: np.random.Generator) -> ChainPath:
    if k < 0:
        raise ValueError("k must be nonnegative")
    states = [theta.copy()]
    for _ in range(k):
        states.append(kernel_step(states[-1], NoiseBlock.draw(rng, n, theta.d), kernel))
    return ChainPath(states, kernel, n)


def superpose_Gk(theta: Theta, t: Sequence[float], noises: Sequence, kernel: KernelKind) -> Theta:
    """Nested application ``H_k(... H_1(theta; t_1) ...; t_k)`` of independent homotopies."""
    if len(t) != len(noises):
        raise ValueError("t and noises must have the same length")
    state = theta
    for tj, noise in zip(t, noises):
        if kernel.variant == "exact":
            state = homotopy_exact(state, float(tj), noise)
        else:
            state = homotopy_smoothed(state, float(tj), noise, kernel.a)
    return state


def difference_weights(k: int) -> np.ndarray:
    """``(-1)^(k-j) C(k, j)`` for ``j = 0..k``."""
    return np.array([(-1) ** (k - j) * math.comb(k, j) for j in range(k + 1)], dtype=float)


def fk_weights(k: int) -> np.ndarray:
    """Weights ``w_i`` with ``f_k(theta) = sum_i w_i E f(theta^(i))``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return np.array([(-1) ** i * math.comb(k + 1, i + 1) for i in range(k + 1)], dtype=float)


def _fk_weights_literal(k: int) -> np.ndarray:
    w = np.zeros(k + 1)
    for j in range(k + 1):
        for i in range(j + 1):
            w[i] += (-1) ** j * (-1) ** (j - i) * math.comb(j, i)
    return w


for _k in range(13):
    if not np.array_equal(fk_weights(_k), _fk_weights_literal(_k)):
        raise RuntimeError(f"collapsed f_k weights disagree with the double sum at k={_k}")
del _k


def alt_sum(f: Functional, path: ChainPath, k: int) -> float:
    """k-th order difference of ``f`` along the first ``k+1`` states of ``path``."""
    if len(path.states) < k + 1:
        raise ValueError(f"path has {len(path.states)} states, need {k + 1}")
    values = [float(f(s)) for s in path.states[: k + 1]]
    return float(np.dot(difference_weights(k), values))


def state_values(f: Functional, states: Theta, control_variate: bool = True) -> np.ndarray:
    """Values of ``f`` along chains, shape ``(..., k+1)``, optionally martingale-corrected."""
    values = np.asarray(f.value(states.mu, states.sigma), dtype=float)
    if not control_variate or values.shape[-1] == 1:
        return values
    g = f.gradient(states.mu[..., :-1, :], states.sigma[..., :-1, :, :])
    d_mu = np.diff(states.mu, axis=-2)
    d_sigma = np.diff(states.sigma, axis=-3)
    increments = g.pair(d_mu, d_sigma)
    correction = np.concatenate([np.zeros((*increments.shape[:-1], 1)), np.cumsum(increments, axis=-1)],
                                axis=-1)
    return values - correction


def _chunk_size(k: int, n: int, d: int) -> int:
    per_chain = max(1, k * n * d + (k + 1) * (d * d + d))
    return max(1, CHUNK_ELEMENTS // per_chain)


def chain_combination_samples(f: Functional, theta: Theta, weights: np.ndarray, n: int, kernel: KernelKind,
                              replicates: int, rng: np.random.Generator,
                              control_variate: bool = True) -> np.ndarray:
    """Per-chain values of ``sum_i weights[i] f(theta^(i))`` for ``replicates`` chains from ``theta``.

    Noise is drawn chain by chain in one sequential stream, so chunking does
    not change the samples.
    """
    k = len(weights) - 1
    out = np.empty(replicates)
    step = _chunk_size(k, n, theta.d)
    for start in range(0, replicates, step):
        stop = min(replicates, start + step)
        z = rng.standard_normal((stop - start, k, n, theta.d))
        states = simulate_states(theta, k, kernel, z)
        out[start:stop] = state_values(f, states, control_variate) @ weights
    return out


def estimate_Bk(f: Functional, theta: Theta, k: int, n: int, kernel: KernelKind, replicates: int,
                rng: np.random.Generator, control_variate: bool = True) -> MCEstimate:
    if replicates < 2:
        raise ValueError("need at least two replicates")
    if k == 0:
        return MCEstimate(float(f(theta)), 0.0, replicates)
    samples = chain_combination_samples(f, theta, difference_weights(k), n, kernel, replicates, rng,
                                        control_variate)
    return MCEstimate.from_samples(samples)


def evaluate_fk(f: Functional, at: Theta, k: int, n: int, kernel: KernelKind, replicates: int,
                rng: np.random.Generator, control_variate: bool = True) -> MCEstimate:
    """Monte Carlo value of ``f_k(at)`` with all ``k+1`` terms from the same chains."""
    if replicates < 2:
        raise ValueError("need at least two replicates")
    if k == 0:
        return MCEstimate(float(f(at)), 0.0, replicates)
    samples = chain_combination_samples(f, at, fk_weights(k), n, kernel, replicates, rng, control_variate)
    return MCEstimate.from_samples(samples)


def full_estimator(f: Functional, data: np.ndarray, k: int, kernel: KernelKind, replicates: int,
                   rng: np.random.Generator, control_variate: bool = True) -> MCEstimate:
    """The estimator ``f_k(theta_hat)`` computed from an ``n x d`` data matrix."""
    data = np.asarray(data, dtype=float)
    return evaluate_fk(f, estimate_theta(data), k, data.shape[-2], kernel, replicates, rng, control_variate)


def default_k(smoothness: float) -> int:
    """``k`` such that ``s = k + 1 + rho`` with ``rho`` in ``(0, 1]``; plug-in for ``s <= 2``."""
    if smoothness <= 2:
        return 0
    return int(math.ceil(smoothness)) - 2
