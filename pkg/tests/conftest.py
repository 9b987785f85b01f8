import copy

import numpy as np
import pytest
from scipy.stats import ortho_group

from biasreduce.config import ExperimentConfig
from biasreduce.model import Theta

BASE_CONFIG = {
    "model": {"d": 1, "n": 11, "a": 2.0, "mu": "zero", "sigma": "identity"},
    "functional": {"kind": "trace_quadratic"},
    "estimator": {"k": 0, "kernel": "exact", "inner_replicates": 20},
    "experiment": {"replicates": 2000, "seed": 5},
    "losses": ["power:2"],
}


def make_config(**blocks) -> ExperimentConfig:
    """Config from ``BASE_CONFIG`` with whole-block or per-key overrides."""
    raw = copy.deepcopy(BASE_CONFIG)
    for name, value in blocks.items():
        if isinstance(value, dict) and isinstance(raw.get(name), dict) and name != "functional":
            raw[name].update(value)
        else:
            raw[name] = value
    return ExperimentConfig.from_dict(raw)


def random_theta(rng, d, lo=0.5, hi=2.0) -> Theta:
    q = ortho_group.rvs(d, random_state=rng) if d > 1 else np.ones((1, 1))
    lam = rng.uniform(lo, hi, d)
    return Theta(rng.normal(size=d), (q * lam) @ q.T)


def random_spd(rng, d, condition) -> np.ndarray:
    q = ortho_group.rvs(d, random_state=rng) if d > 1 else np.ones((1, 1))
    lam = np.exp(rng.uniform(0, np.log(condition), d))
    lam[0], lam[-1] = 1.0, condition
    return (q * lam) @ q.T


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion."""

    def record(criterion: int, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion:2d}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
