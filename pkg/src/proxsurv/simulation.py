"""Data generator and Monte Carlo harness for the proxy-adjustment study.

Generator (per subject)::

    U, X ~ Uniform(0, 1)
    A | U, X ~ Bernoulli(1 / (1 + exp(-3 + 5U + X)))
    T | A, U, X ~ Exponential(0.2 + beta_A A + beta_U U + 0.2 X)
    C = censor_time (administrative)
    W | U, X ~ N((0.5 c_U U + 0.2 X, 2 c_U U + X), diag(0.1^2, 0.25^2))
    Z | U, X ~ N((c_U U + 0.5 X, 0.5 c_U U + 2 X), diag(0.5^2, 0.2^2))

Every variable block of every replicate draws from its own Philox stream
keyed by ``(seed, replicate, block)``, so a replicate is reproducible no
matter how replicates are scheduled.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from joblib import Parallel, delayed

from .additive_hazards import AHFit, fit_additive_hazards
from .data_model import (
    CAUSE_CENSORED,
    CAUSE_NCO,
    CAUSE_PRIMARY,
    NcoKind,
    NcoSpec,
    ProximalDataset,
    SurvivalOutcome,
)
from .exceptions import EstimationError, ValidationError
from .inference import wald_ci
from .two_stage import fully_adjusted_fit, naive_fit, p2sls_fit

METHODS = ("p2sls", "naive", "fully_adjusted")
DEFAULT_BETA_U = tuple(np.round(np.linspace(0.0, 2.0, 9), 10))
DEFAULT_C_U = (1.0, 0.2, 0.0)

_BLOCKS = {"U": 0, "X": 1, "A": 2, "T": 3, "W": 4, "Z": 5, "T1": 6}


@dataclass(frozen=True)
class SimConfig:
    n: int = 1000
    beta_U: float = 1.0
    c_U: float = 1.0
    reps: int = 1000
    seed: int = 0
    censor_time: float = 5.0
    beta_A_true: float = 0.2
    ncos: tuple[str, ...] = ("w1", "w2")

    def __post_init__(self):
        object.__setattr__(self, "ncos", tuple(self.ncos))
        if not self.ncos or not set(self.ncos) <= {"w1", "w2"} or len(set(self.ncos)) != len(self.ncos):
            raise ValidationError("SimConfig.ncos must be a non-empty subset of ('w1', 'w2')")
        if self.n < 50:
            raise ValidationError("SimConfig.n must be at least 50")
        if self.reps < 1:
            raise ValidationError("SimConfig.reps must be at least 1")
        if not self.censor_time > 0:
            raise ValidationError("SimConfig.censor_time must be positive")


class SimulatedReplicate(NamedTuple):
    """A generated dataset plus the latent confounder, kept out of the dataset."""

    dataset: ProximalDataset
    latent_u: np.ndarray


def _stream(seed: int, replicate: int, block: str) -> np.random.Generator:
    ss = np.random.SeedSequence([seed, replicate, _BLOCKS[block]])
    return np.random.Generator(np.random.Philox(ss))


def _exponential(rng: np.random.Generator, rate: np.ndarray) -> np.ndarray:
    if np.any(rate <= 0):
        raise ValidationError("nonpositive hazard rate drawn; beta_U outside the generator's support")
    return -np.log1p(-rng.random(len(rate))) / rate


def _confounders(config: SimConfig, replicate: int):
    n = config.n
    u = _stream(config.seed, replicate, "U").random(n)
    x = _stream(config.seed, replicate, "X").random(n)
    p_treat = 1.0 / (1.0 + np.exp(-3.0 + 5.0 * u + x))
    a = (_stream(config.seed, replicate, "A").random(n) < p_treat).astype(float)
    return u, x, a


def _proxies(config: SimConfig, replicate: int, u, x):
    n = config.n
    cu = config.c_U
    ew = _stream(config.seed, replicate, "W").standard_normal((n, 2))
    ez = _stream(config.seed, replicate, "Z").standard_normal((n, 2))
    w = np.column_stack([0.5 * cu * u + 0.2 * x + 0.1 * ew[:, 0], 2 * cu * u + x + 0.25 * ew[:, 1]])
    z = np.column_stack([cu * u + 0.5 * x + 0.5 * ez[:, 0], 0.5 * cu * u + 2 * x + 0.2 * ez[:, 1]])
    return w, z


def simulate_dataset(config: SimConfig, replicate: int = 0) -> SimulatedReplicate:
    """One replicate with linear NCOs ``config.ncos`` and NCEs ``z1, z2``.

    With a scalar confounder the two NCO predictors are nearly collinear, so
    declaring both makes the second stage weakly identified; pass
    ``ncos=("w1",)`` for the well-conditioned design.
    """
    u, x, a = _confounders(config, replicate)
    rate = 0.2 + config.beta_A_true * a + config.beta_U * u + 0.2 * x
    t = _exponential(_stream(config.seed, replicate, "T"), rate)
    status = (t <= config.censor_time).astype(int)
    time = np.minimum(t, config.censor_time)
    w, z = _proxies(config, replicate, u, x)
    ds = ProximalDataset(
        outcome=SurvivalOutcome(time, status),
        A=a[:, None],
        X=x[:, None],
        Z=z,
        W={name: w[:, int(name[1]) - 1] for name in config.ncos},
        nco_specs=tuple(NcoSpec(name, NcoKind.LINEAR) for name in config.ncos),
        a_names=("a",),
        x_names=("x",),
        z_names=("z1", "z2"),
    )
    return SimulatedReplicate(ds, u)


def simulate_competing_dataset(config: SimConfig, replicate: int = 0,
                               nco_hazard_u: float = 0.5) -> SimulatedReplicate:
    """Competing-risk variant: the NCO is a competing event time.

    Cause-specific hazards are ``0.2 + beta_A A + beta_U U + 0.2 X`` for the
    primary event and ``0.3 + nco_hazard_u * U + 0.2 X`` for the competing
    (negative control) event, which the exposure does not affect. NCEs are
    generated as in :func:`simulate_dataset`; the outcome status uses
    0 = primary, 1 = competing, 2 = censored.
    """
    u, x, a = _confounders(config, replicate)
    t0 = _exponential(_stream(config.seed, replicate, "T"),
                      0.2 + config.beta_A_true * a + config.beta_U * u + 0.2 * x)
    t1 = _exponential(_stream(config.seed, replicate, "T1"), 0.3 + nco_hazard_u * u + 0.2 * x)
    c = config.censor_time
    time = np.minimum(np.minimum(t0, t1), c)
    status = np.full(config.n, CAUSE_CENSORED)
    status[(t0 < t1) & (t0 <= c)] = CAUSE_PRIMARY
    status[(t1 <= t0) & (t1 <= c)] = CAUSE_NCO
    _, z = _proxies(config, replicate, u, x)
    ds = ProximalDataset(
        outcome=SurvivalOutcome(time, status, competing=True),
        A=a[:, None],
        X=x[:, None],
        Z=z,
        W={},
        nco_specs=(NcoSpec("competing", NcoKind.COMPETING_RISK),),
        a_names=("a",),
        x_names=("x",),
        z_names=("z1", "z2"),
    )
    return SimulatedReplicate(ds, u)


def oracle_fit(sim: SimulatedReplicate) -> AHFit:
    """Additive hazards fit on ``[A | U | X]`` using the latent confounder."""
    ds = sim.dataset
    S = np.hstack([ds.A, sim.latent_u[:, None], ds.X])
    return fit_additive_hazards(ds.outcome, S, column_names=(*ds.a_names, "u", *ds.x_names))


@dataclass(frozen=True)
class StudyMetrics:
    method: str
    bias: float
    sd: float
    mean_se: float
    coverage: float
    failures: int
    reps: int


@dataclass(frozen=True, eq=False)
class CellResult:
    config: SimConfig
    metrics: dict
    estimates: dict = field(default_factory=dict)
    std_errors: dict = field(default_factory=dict)


def replicate_estimates(config: SimConfig, replicate: int) -> dict:
    """``{method: (estimate, se)}`` for one replicate; failed methods map to ``None``."""
    ds = simulate_dataset(config, replicate).dataset
    out = {}
    try:
        fit = p2sls_fit(ds)
        out["p2sls"] = (float(fit.beta_A[0]), float(fit.beta_A_se[0]))
    except EstimationError:
        out["p2sls"] = None
    for name, fn in (("naive", naive_fit), ("fully_adjusted", fully_adjusted_fit)):
        try:
            f = fn(ds)
            out[name] = (float(f.beta[0]), float(f.standard_errors()[0]))
        except EstimationError:
            out[name] = None
    return out


def summarize(method: str, est: np.ndarray, se: np.ndarray, truth: float, reps: int,
              level: float = 0.95) -> StudyMetrics:
    k = len(est)
    if k == 0:
        nan = float("nan")
        return StudyMetrics(method, nan, nan, nan, nan, reps, reps)
    lo, hi = wald_ci(est, se**2, level)
    covered = (lo <= truth) & (truth <= hi)
    return StudyMetrics(
        method=method,
        bias=float(np.mean(est) - truth),
        sd=float(np.std(est, ddof=1)) if k > 1 else float("nan"),
        mean_se=float(np.mean(se)),
        coverage=float(np.mean(covered)),
        failures=reps - k,
        reps=reps,
    )


def run_cell(config: SimConfig, n_jobs: int = 1, level: float = 0.95,
             progress: Callable[[int], None] | None = None) -> CellResult:
    if n_jobs == 1:
        results = []
        for r in range(config.reps):
            results.append(replicate_estimates(config, r))
            if progress:
                progress(r)
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(replicate_estimates)(config, r) for r in range(config.reps)
        )
    metrics, estimates, ses = {}, {}, {}
    for m in METHODS:
        pairs = [res[m] for res in results if res[m] is not None]
        est = np.array([p[0] for p in pairs])
        se = np.array([p[1] for p in pairs])
        estimates[m], ses[m] = est, se
        metrics[m] = summarize(m, est, se, config.beta_A_true, config.reps, level)
    return CellResult(config, metrics, estimates, ses)


def run_study(grid: Sequence[SimConfig], n_jobs: int = 1, level: float = 0.95) -> list[CellResult]:
    """Run every cell of ``grid``; replicate failures are counted, never fatal."""
    if not grid:
        raise ValueError("grid must be non-empty")
    return [run_cell(cfg, n_jobs=n_jobs, level=level) for cfg in grid]


def default_grid(n: int = 1000, reps: int = 1000, seed: int = 0,
                 beta_U: Sequence[float] = DEFAULT_BETA_U,
                 c_U: Sequence[float] = DEFAULT_C_U, censor_time: float = 5.0,
                 ncos: Sequence[str] = ("w1", "w2")) -> list[SimConfig]:
    return [
        SimConfig(n=n, beta_U=float(b), c_U=float(c), reps=reps, seed=seed, censor_time=censor_time,
                  ncos=tuple(ncos))
        for c in c_U
        for b in beta_U
    ]


STUDY_COLUMNS = ("beta_U", "c_U", "n", "reps", "seed", "censor_time", "beta_A_true",
                 "method", "bias", "sd", "mean_se", "coverage", "failures")


def write_study_csv(results: Sequence[CellResult], path) -> None:
    """One row per (grid cell, method)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STUDY_COLUMNS)
        for cell in results:
            c = cell.config
            for m in METHODS:
                s = cell.metrics[m]
                writer.writerow([
                    repr(c.beta_U), repr(c.c_U), c.n, c.reps, c.seed, repr(c.censor_time),
                    repr(c.beta_A_true), m, repr(s.bias), repr(s.sd), repr(s.mean_se),
                    repr(s.coverage), s.failures,
                ])


def study_manifest(results: Sequence[CellResult], level: float = 0.95) -> dict:
    return {
        "methods": list(METHODS),
        "ci_level": level,
        "cells": [
            {"config": asdict(cell.config),
             "failures": {m: cell.metrics[m].failures for m in METHODS}}
            for cell in results
        ],
    }


def write_manifest(results: Sequence[CellResult], path, level: float = 0.95, extra: dict | None = None) -> None:
    doc = study_manifest(results, level)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
