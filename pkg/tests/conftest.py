from __future__ import annotations

import functools

import numpy as np
import pytest

from proxsurv.data_model import NcoKind, NcoSpec, ProximalDataset, SurvivalOutcome
from proxsurv.simulation import SimConfig, run_cell


def random_dataset(seed: int, n: int = 120, p_x: int = 1, p_z: int = 2, n_w: int = 1,
                   censor: float = 3.0) -> ProximalDataset:
    """Small confounded dataset with linear NCOs, for property tests.

    Built from a generic seeded generator (not the study generator) so the
    invariance checks see varied shapes and scales.
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=n)
    x = rng.normal(size=(n, p_x))
    z = u[:, None] * rng.uniform(0.5, 2.0, size=p_z) + 0.5 * rng.normal(size=(n, p_z))
    a = (rng.uniform(size=n) < 1 / (1 + np.exp(1 - 2 * u))).astype(float)
    rate = 0.3 + 0.2 * a + 0.6 * u + 0.1 * np.abs(x).sum(axis=1)
    t = rng.exponential(1 / rate)
    c = rng.uniform(0.5 * censor, censor, size=n)
    W = {f"w{j + 1}": rng.uniform(0.5, 2) * u + 0.2 * x[:, 0] + 0.3 * rng.normal(size=n) for j in range(n_w)}
    return ProximalDataset(
        outcome=SurvivalOutcome(np.minimum(t, c), (t <= c).astype(int)),
        A=a[:, None],
        X=x,
        Z=z,
        W=W,
        nco_specs=tuple(NcoSpec(k, NcoKind.LINEAR) for k in W),
    )


@functools.lru_cache(maxsize=None)
def _cell(beta_U: float, c_U: float, n: int, reps: int, ncos: tuple[str, ...]):
    return run_cell(SimConfig(n=n, beta_U=beta_U, c_U=c_U, reps=reps, ncos=ncos))


@pytest.fixture(scope="session")
def study_cell():
    """Cached Monte Carlo cell runner shared by the study and acceptance tests."""

    def get(beta_U, c_U, n=1000, reps=1000, ncos=("w1", "w2")):
        return _cell(float(beta_U), float(c_U), int(n), int(reps), tuple(ncos))

    return get


# criterion number -> (status, title, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {status}: {title} ({detail})")
