"""Risk, bias and normality experiments for the estimator ``f_k(theta_hat)``.

Every outer replicate ``i`` draws from its own generator seeded by
``SeedSequence(seed, spawn_key=(n, d, i))``: first the dataset, then the
inner bootstrap chains.  Replicates are grouped into chunks whose size depends
only on the configuration, so results are bit-identical for any worker count.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import kstest

from .chain import (
    CHUNK_ELEMENTS,
    chain_combination_samples,
    fk_weights,
    simulate_states,
    state_values,
)
from .config import ExperimentConfig, LossSpec
from .errors import NumericalError
from .functionals import grad, sigma_f
from .model import Theta, dataset_from_noise, estimate_theta

log = logging.getLogger(__name__)

INNER_SHARE_WARN = 0.2
ORLICZ_CAP = 1e3


# ---------------------------------------------------------------------------
# losses and Orlicz norms


@dataclass(frozen=True)
class LossFunction:
    """Convex symmetric loss: ``|u|^p``, ``exp|u| - 1`` (psi1) or ``exp(u^2) - 1`` (psi2)."""

    kind: str
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("power", "psi1", "psi2"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "power" and self.p < 1:
            raise ValueError("power loss needs p >= 1")

    @classmethod
    def power(cls, p: float) -> "LossFunction":
        return cls("power", float(p))

    @classmethod
    def from_spec(cls, spec: LossSpec) -> "LossFunction":
        return cls.power(spec.p) if spec.kind == "power" else cls(spec.kind)

    @property
    def name(self) -> str:
        return f"power:{self.p:g}" if self.kind == "power" else self.kind

    def __call__(self, u):
        a = np.abs(np.asarray(u, dtype=float))
        if self.kind == "power":
            return a**self.p
        with np.errstate(over="ignore"):
            if self.kind == "psi1":
                return np.expm1(a)
            return np.expm1(a * a)


def orlicz_norm_detail(samples, loss: LossFunction, rtol: float = 1e-13) -> tuple[float, float]:
    """Empirical Orlicz norm and the mean loss at the returned scale.

    Returns ``(inf, mean loss at the search cap)`` when no ``c`` up to
    ``1e3 * max|sample|`` satisfies ``mean loss(|x|/c) <= 1``.
    """
    x = np.abs(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("need at least one sample")
    top = float(x.max())
    if top == 0.0:
        return 0.0, 0.0

    def mean_loss(c):
        return float(np.mean(loss(x / c)))

    hi = ORLICZ_CAP * top
    at_cap = mean_loss(hi)
    if at_cap > 1.0:
        return math.inf, at_cap
    lo = hi
    while mean_loss(lo) <= 1.0:
        lo /= 2.0
    # invariant: mean_loss(lo) > 1 >= mean_loss(hi)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if mean_loss(mid) <= 1.0:
            hi = mid
        else:
            lo = mid
    return hi, mean_loss(hi)


def orlicz_norm(samples, loss: LossFunction) -> float:
    return orlicz_norm_detail(samples, loss)[0]


def ks_normal(samples) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and the standard normal."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("need at least one sample")
    return float(kstest(x, "norm").statistic)


# ---------------------------------------------------------------------------
# simulation


@dataclass
class ReplicateErrors:
    """Per-replicate outcomes of ``f_k(theta_hat) - f(theta)``."""

    error: np.ndarray
    control: np.ndarray
    inner_var: np.ndarray


def replicate_rng(seed: int, n: int, d: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(n, d, index))))


def _chunk_replicates(cfg: ExperimentConfig, k: int) -> int:
    n, d, r = cfg.n, cfg.d, cfg.inner_replicates
    per = n * d + (r * (k * n * d + (k + 1) * (d * d + d)) if k > 0 else d * d)
    return max(1, CHUNK_ELEMENTS // per)


def _run_chunk(args) -> ReplicateErrors:
    cfg, seed, start, stop = args
    f = cfg.build_functional()
    theta = cfg.theta()
    kernel = cfg.kernel_kind()
    k = cfg.resolved_k()
    n, d, r = cfg.n, cfg.d, cfg.inner_replicates
    count = stop - start
    rngs = [replicate_rng(seed, n, d, i) for i in range(start, stop)]
    data = np.stack([rng.standard_normal((n, d)) for rng in rngs])
    hat = estimate_theta(dataset_from_noise(theta, data))
    truth = float(f(theta))
    g = grad(f, theta)
    control = g.pair(hat.mu - theta.mu, hat.sigma - theta.sigma)
    if k == 0:
        est = np.asarray(f(hat), dtype=float)
        return ReplicateErrors(est - truth, control, np.zeros(count))
    weights = fk_weights(k)
    if count == 1:
        samples = chain_combination_samples(f, hat[0], weights, n, kernel, r, rngs[0], cfg.control_variate)[None]
    else:
        z = np.stack([rng.standard_normal((r, k, n, d)) for rng in rngs])
        at = Theta(hat.mu[:, None, :], hat.sigma[:, None, :, :])
        states = simulate_states(at, k, kernel, z)
        samples = state_values(f, states, cfg.control_variate) @ weights
    est = samples.mean(axis=-1)
    inner_var = samples.var(axis=-1, ddof=1) / r
    return ReplicateErrors(est - truth, control, inner_var)


def simulate_errors(cfg: ExperimentConfig, seed: int, workers: int = 1) -> ReplicateErrors:
    """Run all outer replicates of ``cfg`` and merge them in replicate order."""
    k = cfg.resolved_k()
    size = _chunk_replicates(cfg, k)
    jobs = [(cfg, seed, s, min(cfg.replicates, s + size)) for s in range(0, cfg.replicates, size)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(job) for job in jobs]
    return ReplicateErrors(
        np.concatenate([p.error for p in parts]),
        np.concatenate([p.control for p in parts]),
        np.concatenate([p.inner_var for p in parts]),
    )


# ---------------------------------------------------------------------------
# reports


@dataclass
class RiskReport:
    functional: str
    d: int
    n: int
    a: float
    theta: str
    k: int
    kernel: str
    inner_replicates: int
    control_variate: bool
    replicates: int
    bias_hat: float
    bias_stderr: float
    bias_ci_low: float
    bias_ci_high: float
    bias_cv: float
    bias_cv_stderr: float
    rmse_hat: float
    rmse_stderr: float
    sigma_f_true: float
    n_mse_over_sigma_f2: float
    inner_noise_share: float
    ks_statistic: float | None
    orlicz: dict
    seed: int
    config_hash: str
    wall_time: float = field(default=0.0, compare=False)


def _mean_stderr(x: np.ndarray) -> tuple[float, float]:
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


def summarize(cfg: ExperimentConfig, seed: int, errs: ReplicateErrors, ks: float | None = None,
              wall_time: float = 0.0) -> RiskReport:
    e = errs.error
    m = e.size
    bias, bias_se = _mean_stderr(e)
    bias_cv, bias_cv_se = _mean_stderr(e - errs.control)
    sq = e * e
    mse, mse_se = _mean_stderr(sq)
    rmse = math.sqrt(mse)
    rmse_se = mse_se / (2 * rmse) if rmse > 0 else 0.0
    theta = cfg.theta()
    f = cfg.build_functional()
    sf = float(sigma_f(f, theta))
    total_var = float(np.var(e, ddof=1))
    share = float(np.mean(errs.inner_var) / total_var) if total_var > 0 else 0.0
    if share > INNER_SHARE_WARN:
        log.warning("inner Monte Carlo noise is %.0f%% of the error variance; increase inner_replicates",
                    100 * share)
    orlicz = {}
    for spec in cfg.loss_specs():
        value, at_cap = orlicz_norm_detail(e, LossFunction.from_spec(spec))
        orlicz[spec.name] = value
        if math.isinf(value):
            orlicz[f"{spec.name}@cap"] = at_cap
    return RiskReport(
        functional=f.describe(),
        d=cfg.d,
        n=cfg.n,
        a=cfg.a,
        theta=cfg.theta_description(),
        k=cfg.resolved_k(),
        kernel=cfg.kernel_kind().describe(),
        inner_replicates=cfg.inner_replicates,
        control_variate=cfg.control_variate,
        replicates=m,
        bias_hat=bias,
        bias_stderr=bias_se,
        bias_ci_low=bias - 1.96 * bias_se,
        bias_ci_high=bias + 1.96 * bias_se,
        bias_cv=bias_cv,
        bias_cv_stderr=bias_cv_se,
        rmse_hat=rmse,
        rmse_stderr=rmse_se,
        sigma_f_true=sf,
        n_mse_over_sigma_f2=cfg.n * mse / sf**2 if sf > 0 else math.nan,
        inner_noise_share=share,
        ks_statistic=ks,
        orlicz=orlicz,
        seed=int(seed),
        config_hash=cfg.with_seed(seed).config_hash(),
        wall_time=wall_time,
    )


def _seed(cfg: ExperimentConfig, seed: int | None) -> int:
    seed = cfg.seed if seed is None else seed
    if seed is None:
        raise ValueError("no seed: set experiment.seed or pass one explicitly")
    return int(seed)


def risk_eval(cfg: ExperimentConfig, seed: int | None = None, workers: int = 1) -> RiskReport:
    seed = _seed(cfg, seed)
    t0 = time.perf_counter()
    errs = simulate_errors(cfg, seed, workers)
    return summarize(cfg, seed, errs, wall_time=time.perf_counter() - t0)


def normality_experiment(cfg: ExperimentConfig, seed: int | None = None, workers: int = 1,
                         errs: ReplicateErrors | None = None) -> tuple[float, np.ndarray]:
    """KS distance of ``sqrt(n) (f_k(theta_hat) - f(theta)) / sigma_f(theta)`` from N(0, 1)."""
    f = cfg.build_functional()
    sf = float(sigma_f(f, cfg.theta()))
    if sf < 1e-8:
        raise NumericalError(f"sigma_f = {sf:.3e} is degenerate; standardized errors are undefined")
    if errs is None:
        errs = simulate_errors(cfg, _seed(cfg, seed), workers)
    z = math.sqrt(cfg.n) * errs.error / sf
    return ks_normal(z), z


def normality_report(cfg: ExperimentConfig, seed: int | None = None, workers: int = 1) -> RiskReport:
    seed = _seed(cfg, seed)
    t0 = time.perf_counter()
    errs = simulate_errors(cfg, seed, workers)
    ks, _ = normality_experiment(cfg, seed, errs=errs)
    return summarize(cfg, seed, errs, ks=ks, wall_time=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# rate sweeps


@dataclass
class SlopeFit:
    response: str
    regressor: str
    fixed: str
    slope: float
    stderr: float
    points: int


@dataclass
class SweepResult:
    reports: list[RiskReport]
    slopes: list[SlopeFit]


def weighted_slope(x: Sequence[float], y: Sequence[float], se: Sequence[float]) -> tuple[float, float]:
    """Weighted least-squares slope of ``y`` on ``x`` with weights ``1/se^2``, and its standard error."""
    x, y, se = (np.asarray(v, dtype=float) for v in (x, y, se))
    w = 1.0 / np.maximum(se, 1e-300) ** 2
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    if sxx <= 0:
        raise ValueError("regressor has no spread")
    return float(np.sum(w * (x - xm) * (y - ym)) / sxx), float(1.0 / math.sqrt(sxx))


def _bias_of(r: RiskReport) -> tuple[float, float]:
    if r.control_variate:
        return r.bias_cv, r.bias_cv_stderr
    return r.bias_hat, r.bias_stderr


def fit_slopes(reports: Sequence[RiskReport]) -> list[SlopeFit]:
    fits = []
    for d in sorted({r.d for r in reports}):
        rows = sorted((r for r in reports if r.d == d), key=lambda r: r.n)
        if len({r.n for r in rows}) >= 2:
            rows_rmse = [r for r in rows if r.rmse_hat > 0]
            if len(rows_rmse) >= 2:
                s, se = weighted_slope([math.log(r.n) for r in rows_rmse], [math.log(r.rmse_hat) for r in rows_rmse],
                                       [r.rmse_stderr / r.rmse_hat for r in rows_rmse])
                fits.append(SlopeFit("log_rmse", "log_n", f"d={d}", s, se, len(rows_rmse)))
            sig = [r for r in rows if abs(_bias_of(r)[0]) > 2 * _bias_of(r)[1]]
            if len({r.n for r in sig}) >= 2:
                s, se = weighted_slope([math.log(r.n) for r in sig], [math.log(abs(_bias_of(r)[0])) for r in sig],
                                       [_bias_of(r)[1] / abs(_bias_of(r)[0]) for r in sig])
                fits.append(SlopeFit("log_abs_bias", "log_n", f"d={d}", s, se, len(sig)))
    sig = [r for r in reports if abs(_bias_of(r)[0]) > 2 * _bias_of(r)[1]]
    if len({r.d / r.n for r in sig}) >= 2:
        s, se = weighted_slope([math.log(r.d / r.n) for r in sig], [math.log(abs(_bias_of(r)[0])) for r in sig],
                               [_bias_of(r)[1] / abs(_bias_of(r)[0]) for r in sig])
        fits.append(SlopeFit("log_abs_bias", "log_d_over_n", "all", s, se, len(sig)))
    return fits


def rate_sweep(cfg: ExperimentConfig, seed: int | None = None, workers: int = 1) -> SweepResult:
    seed = _seed(cfg, seed)
    ns = cfg.sweep_n or [cfg.n]
    ds = cfg.sweep_d or [cfg.d]
    reports = []
    for d in ds:
        for n in ns:
            point = cfg.at(n=n, d=d)
            report = risk_eval(point, seed, workers)
            # rows carry the hash of the whole sweep so they can be traced back to it
            report.config_hash = cfg.with_seed(seed).config_hash()
            log.info("sweep point n=%d d=%d: bias %.4g +- %.2g, rmse %.4g", n, d, report.bias_hat,
                     report.bias_stderr, report.rmse_hat)
            reports.append(report)
    return SweepResult(reports, fit_slopes(reports))
