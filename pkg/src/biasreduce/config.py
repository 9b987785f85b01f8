"""Experiment configuration: strict YAML schema and builders.

A config is a key-value tree with the blocks ``model``, ``functional``,
``estimator``, ``experiment`` and optionally ``losses`` and ``sweep``::

    model:
      d: 1
      n: 11
      a: 2.0
      mu: zero                  # zero | number | list
      sigma: identity           # identity | {kind: diagonal, values: [...]}
                                # | {kind: random_spd, seed: 3, condition: 2.0}
    functional:
      kind: trace_quadratic     # see FUNCTIONAL_KEYS
    estimator:
      k: auto                   # auto (from smoothness) | integer
      kernel: exact             # exact | smoothed
      inner_replicates: 10000
    experiment:
      replicates: 1000
      seed: 12345
    losses: [power:2, psi1]
    sweep:
      n: [11, 21, 41, 81]

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from scipy.stats import ortho_group

from .chain import KernelKind, default_k
from .errors import ConfigParseError, ConfigValidationError
from .functionals import (
    SCALAR_FUNCTIONS,
    Functional,
    affine_combination,
    linear_mean,
    quadratic_mean,
    spectral_trace,
    trace_linear,
    trace_quadratic,
)
from .model import ParamDomain, Theta

TOP_KEYS = {"model", "functional", "estimator", "experiment", "losses", "sweep"}
MODEL_KEYS = {"d", "n", "a", "mu", "sigma"}
ESTIMATOR_KEYS = {"k", "kernel", "kernel_a", "inner_replicates", "control_variate"}
EXPERIMENT_KEYS = {"replicates", "seed"}
SWEEP_KEYS = {"n", "d"}
FUNCTIONAL_KEYS = {
    "linear_mean": {"u", "smoothness"},
    "quadratic_mean": {"smoothness"},
    "trace_linear": {"B", "smoothness"},
    "trace_quadratic": {"B", "smoothness"},
    "spectral_trace": {"phi", "B", "smoothness"},
    "affine_combination": {"terms", "offset", "smoothness"},
}


def _check_keys(block: Any, allowed: set, where: str) -> dict:
    if not isinstance(block, dict):
        raise ConfigValidationError(f"{where}: expected a mapping, got {type(block).__name__}")
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigValidationError(f"{where}: unknown key(s) {unknown}")
    return block


def _int(value, where: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigValidationError(f"{where}: expected an integer >= {minimum}, got {value!r}")
    return value


def _float(value, where: str, minimum: float | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(f"{where}: expected a number, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigValidationError(f"{where}: must be >= {minimum}, got {value!r}")
    return float(value)


def _vector(spec, d: int, where: str) -> np.ndarray:
    if spec == "zero":
        return np.zeros(d)
    if isinstance(spec, str) and spec.startswith("e") and spec[1:].isdigit():
        i = int(spec[1:])
        if not 1 <= i <= d:
            raise ConfigValidationError(f"{where}: basis vector {spec} out of range for d={d}")
        v = np.zeros(d)
        v[i - 1] = 1.0
        return v
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return np.full(d, float(spec))
    if isinstance(spec, list) and len(spec) == d:
        return np.array([_float(x, where) for x in spec])
    raise ConfigValidationError(f"{where}: cannot build a length-{d} vector from {spec!r}")


def _matrix(spec, d: int, where: str) -> np.ndarray:
    if spec is None or spec == "identity":
        return np.eye(d)
    if isinstance(spec, list) and len(spec) == d and all(not isinstance(x, list) for x in spec):
        return np.diag([_float(x, where) for x in spec])
    if isinstance(spec, list) and len(spec) == d and all(isinstance(r, list) and len(r) == d for r in spec):
        return np.array([[_float(x, where) for x in row] for row in spec])
    raise ConfigValidationError(f"{where}: cannot build a {d}x{d} matrix from {spec!r}")


def build_functional(spec: dict, d: int, where: str = "functional") -> Functional:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigValidationError(f"{where}: needs a 'kind'")
    kind = spec["kind"]
    if kind not in FUNCTIONAL_KEYS:
        raise ConfigValidationError(f"{where}: unknown functional kind {kind!r}")
    _check_keys(spec, FUNCTIONAL_KEYS[kind] | {"kind"}, where)
    extra = {}
    if "smoothness" in spec:
        extra["smoothness"] = _float(spec["smoothness"], f"{where}.smoothness", 1.0)
    if kind == "linear_mean":
        return linear_mean(_vector(spec.get("u", "e1"), d, f"{where}.u"), **extra)
    if kind == "quadratic_mean":
        return quadratic_mean(**extra)
    if kind == "trace_linear":
        return trace_linear(_matrix(spec.get("B"), d, f"{where}.B"), **extra)
    if kind == "trace_quadratic":
        b = spec.get("B")
        return trace_quadratic(None if b is None else _matrix(b, d, f"{where}.B"), **extra)
    if kind == "spectral_trace":
        phi = spec.get("phi", "log")
        if phi not in SCALAR_FUNCTIONS:
            raise ConfigValidationError(f"{where}.phi: unknown scalar function {phi!r}")
        b = spec.get("B")
        return spectral_trace(phi, None if b is None else _matrix(b, d, f"{where}.B"), **extra)
    terms = spec.get("terms")
    if not isinstance(terms, list) or not terms:
        raise ConfigValidationError(f"{where}.terms: expected a nonempty list")
    built, weights = [], []
    for i, term in enumerate(terms):
        _check_keys(term, {"weight", "functional"}, f"{where}.terms[{i}]")
        weights.append(_float(term.get("weight", 1.0), f"{where}.terms[{i}].weight"))
        built.append(build_functional(term.get("functional"), d, f"{where}.terms[{i}].functional"))
    offset = _float(spec.get("offset", 0.0), f"{where}.offset")
    return affine_combination(built, weights, offset, extra.get("smoothness"))


def random_spd(d: int, seed: int, condition: float) -> np.ndarray:
    """SPD matrix with eigenvalues log-uniform in ``[condition^-1/2, condition^1/2]``.

    The extreme eigenvalues are pinned so the condition number is attained.
    """
    rng = np.random.default_rng(seed)
    half = 0.5 * np.log(condition)
    logs = rng.uniform(-half, half, size=d)
    if d >= 2:
        logs[0], logs[1] = -half, half
    q = ortho_group.rvs(d, random_state=rng) if d >= 2 else np.ones((1, 1))
    return (q * np.exp(logs)) @ q.T


def _sigma(spec, d: int) -> np.ndarray:
    if spec == "identity" or spec == {"kind": "identity"}:
        return np.eye(d)
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigValidationError(f"model.sigma: unrecognized spec {spec!r}")
    if spec["kind"] == "diagonal":
        _check_keys(spec, {"kind", "values"}, "model.sigma")
        values = spec.get("values")
        if not isinstance(values, list) or len(values) != d:
            raise ConfigValidationError(f"model.sigma.values: need {d} entries")
        return np.diag([_float(v, "model.sigma.values") for v in values])
    if spec["kind"] == "random_spd":
        _check_keys(spec, {"kind", "seed", "condition"}, "model.sigma")
        seed = _int(spec.get("seed", 0), "model.sigma.seed", 0)
        cond = _float(spec.get("condition", 2.0), "model.sigma.condition", 1.0)
        return random_spd(d, seed, cond)
    raise ConfigValidationError(f"model.sigma: unknown kind {spec['kind']!r}")


@dataclass(frozen=True)
class LossSpec:
    kind: str
    p: float | None = None

    @classmethod
    def parse(cls, spec) -> "LossSpec":
        if spec in ("psi1", "psi2"):
            return cls(spec)
        if isinstance(spec, str) and spec.startswith("power:"):
            try:
                p = float(spec.split(":", 1)[1])
            except ValueError:
                raise ConfigValidationError(f"losses: bad power loss {spec!r}") from None
            if p < 1:
                raise ConfigValidationError(f"losses: power must be >= 1, got {p}")
            return cls("power", p)
        raise ConfigValidationError(f"losses: unknown loss {spec!r} (use power:<p>, psi1, psi2)")

    @property
    def name(self) -> str:
        return self.kind if self.p is None else f"power:{self.p:g}"


@dataclass
class ExperimentConfig:
    d: int
    n: int
    a: float
    mu: Any
    sigma: Any
    functional: dict
    k: int | str = "auto"
    kernel: str = "exact"
    kernel_a: float | None = None
    inner_replicates: int = 10_000
    control_variate: bool = True
    replicates: int = 1000
    seed: int | None = None
    losses: list = field(default_factory=lambda: ["power:2"])
    sweep_n: list | None = None
    sweep_d: list | None = None

    @classmethod
    def from_dict(cls, raw: Any) -> "ExperimentConfig":
        raw = _check_keys(raw, TOP_KEYS, "config")
        for block in ("model", "functional", "estimator", "experiment"):
            if block not in raw:
                raise ConfigValidationError(f"config: missing block {block!r}")
        model = _check_keys(raw["model"], MODEL_KEYS, "model")
        est = _check_keys(raw["estimator"], ESTIMATOR_KEYS, "estimator")
        exp = _check_keys(raw["experiment"], EXPERIMENT_KEYS, "experiment")
        sweep = _check_keys(raw.get("sweep") or {}, SWEEP_KEYS, "sweep")
        for key in ("d", "n"):
            if key not in model:
                raise ConfigValidationError(f"model: missing {key!r}")
        k = est.get("k", "auto")
        if k != "auto":
            k = _int(k, "estimator.k", 0)
        kernel = est.get("kernel", "exact")
        if kernel not in ("exact", "smoothed"):
            raise ConfigValidationError(f"estimator.kernel: expected exact or smoothed, got {kernel!r}")
        seed = exp.get("seed")
        if seed is not None:
            seed = _int(seed, "experiment.seed", 0)
        losses = raw.get("losses", ["power:2"])
        if not isinstance(losses, list):
            raise ConfigValidationError("losses: expected a list")
        cv = est.get("control_variate", True)
        if not isinstance(cv, bool):
            raise ConfigValidationError("estimator.control_variate: expected true/false")
        cfg = cls(
            d=_int(model["d"], "model.d", 1),
            n=_int(model["n"], "model.n", 2),
            a=_float(model.get("a", 2.0), "model.a", 1.0),
            mu=model.get("mu", "zero"),
            sigma=model.get("sigma", "identity"),
            functional=copy.deepcopy(raw["functional"]),
            k=k,
            kernel=kernel,
            kernel_a=None if est.get("kernel_a") is None else _float(est["kernel_a"], "estimator.kernel_a", 1.0),
            inner_replicates=_int(est.get("inner_replicates", 10_000), "estimator.inner_replicates", 2),
            control_variate=cv,
            replicates=_int(exp.get("replicates", 1000), "experiment.replicates", 2),
            seed=seed,
            losses=list(losses),
            sweep_n=[_int(v, "sweep.n", 2) for v in sweep["n"]] if "n" in sweep else None,
            sweep_d=[_int(v, "sweep.d", 1) for v in sweep["d"]] if "d" in sweep else None,
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigParseError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigParseError(f"cannot parse config {path}: {exc}") from exc
        if raw is None:
            raise ConfigParseError(f"config {path} is empty")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = {
            "model": {"d": self.d, "n": self.n, "a": self.a, "mu": self.mu, "sigma": self.sigma},
            "functional": self.functional,
            "estimator": {
                "k": self.k,
                "kernel": self.kernel,
                "inner_replicates": self.inner_replicates,
                "control_variate": self.control_variate,
            },
            "experiment": {"replicates": self.replicates, "seed": self.seed},
            "losses": self.losses,
        }
        if self.kernel_a is not None:
            out["estimator"]["kernel_a"] = self.kernel_a
        sweep = {}
        if self.sweep_n is not None:
            sweep["n"] = self.sweep_n
        if self.sweep_d is not None:
            sweep["d"] = self.sweep_d
        if sweep:
            out["sweep"] = sweep
        return out

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def at(self, n: int | None = None, d: int | None = None) -> "ExperimentConfig":
        """The same experiment at another grid point."""
        cfg = replace(self, n=self.n if n is None else n, d=self.d if d is None else d)
        cfg.validate()
        return cfg

    # builders

    def theta(self) -> Theta:
        return Theta(_vector(self.mu, self.d, "model.mu"), _sigma(self.sigma, self.d))

    def build_functional(self) -> Functional:
        return build_functional(self.functional, self.d)

    def kernel_kind(self) -> KernelKind:
        if self.kernel == "exact":
            return KernelKind.exact()
        return KernelKind.smoothed(self.a if self.kernel_a is None else self.kernel_a)

    def resolved_k(self) -> int:
        if self.k == "auto":
            return default_k(self.build_functional().smoothness)
        return int(self.k)

    def loss_specs(self) -> list[LossSpec]:
        return [LossSpec.parse(s) for s in self.losses]

    def theta_description(self) -> str:
        return json.dumps({"mu": self.mu, "sigma": self.sigma}, sort_keys=True, separators=(",", ":"))

    def validate(self) -> None:
        theta = self.theta()
        if not ParamDomain(self.a, self.d).contains(theta):
            lam = np.linalg.eigvalsh(theta.sigma)
            raise ConfigValidationError(
                f"model: covariance spectrum [{lam.min():.4g}, {lam.max():.4g}] is outside "
                f"[1/a, a] = [{1 / self.a:.4g}, {self.a:.4g}]"
            )
        f = self.build_functional()
        try:
            f(theta)
        except ValueError as exc:
            raise ConfigValidationError(f"functional: {exc}") from exc
        self.kernel_kind()
        self.loss_specs()
