"""Joint inference for the two-stage estimator.

The two stages are stacked into one system of estimating equations over
``theta = (c_1, ..., c_J, beta)``. Its sandwich covariance
``(1/n) D^-1 V D^-T`` accounts for the first-stage estimation error carried
into the second stage through the fitted predictors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from ._linalg import gram
from .additive_hazards import lin_ying_moments
from .data_model import ProximalDataset
from .exceptions import EstimationError, IdentificationError
from .two_stage import TwoStageFit, p2sls_fit

MAX_FAILURE_FRACTION = 0.2


@dataclass(frozen=True, eq=False)
class StackedSystem:
    theta: np.ndarray
    U_rows: np.ndarray
    D: np.ndarray
    V: np.ndarray
    blocks: tuple[slice, ...]

    @property
    def n(self) -> int:
        return self.U_rows.shape[0]


def _blocks(fit: TwoStageFit) -> tuple[slice, ...]:
    out, start = [], 0
    for f in fit.first_stages:
        out.append(slice(start, start + len(f.coefficients)))
        start += len(f.coefficients)
    out.append(slice(start, start + len(fit.second_stage.beta)))
    return tuple(out)


def second_stage_cross_derivative(fit: TwoStageFit) -> list[np.ndarray]:
    """d(mean U_2)/d(c_j) for every first stage j, each of shape (p, q_j).

    Only column ``m_j`` of the second-stage design (the j-th fitted predictor)
    depends on ``c_j``, through ``mu_j = G_j c_j``. Differentiating
    ``v(S) - M(S) beta`` along that column gives

        e_m (v_G - M_GS beta)' - beta_m M_GS'

    with ``v_G`` and ``M_GS`` the Lin-Ying moments between ``G_j`` and ``S``.
    """
    second = fit.second_stage
    S = second.design
    beta = second.beta
    n, p = S.shape
    C = np.hstack([S, *[f.design for f in fit.first_stages]])
    m_full, v_full, _ = second.partition.moments(C - second.partition.mean(C))
    p_a = len(fit.beta_A)
    out = []
    start = p
    for j, f in enumerate(fit.first_stages):
        q = f.design.shape[1]
        g = slice(start, start + q)
        start += q
        m_gs = m_full[g, :p]
        v_g = v_full[g]
        m = p_a + j
        block = -beta[m] * m_gs.T
        block[m, :] += v_g - m_gs @ beta
        out.append(block / n)
    return out


def stacked_system(fit: TwoStageFit, dataset: ProximalDataset | None = None) -> StackedSystem:
    """Per-subject stacked estimating functions and the derivative matrix ``D``.

    ``D`` is block lower triangular: first-stage functions do not depend on the
    second-stage coefficients.
    """
    blocks = _blocks(fit)
    dim = blocks[-1].stop
    second = fit.second_stage
    n = second.n
    U = np.hstack([f.estimating_functions for f in fit.first_stages] + [second.score_residuals])
    if U.shape != (n, dim):
        raise EstimationError(f"internal inconsistency: stacked functions {U.shape}, expected {(n, dim)}")
    D = np.zeros((dim, dim))
    for b, f in zip(blocks, fit.first_stages):
        D[b, b] = f.jacobian
    b2 = blocks[-1]
    D[b2, b2] = -second.lhs_matrix / n
    for b, block in zip(blocks, second_stage_cross_derivative(fit)):
        D[b2, b] = block
    V = gram(U) / n
    return StackedSystem(fit.theta, U, D, V, blocks)


def stacked_mean_estimating_function(fit: TwoStageFit, dataset: ProximalDataset, theta) -> np.ndarray:
    """Mean stacked estimating function at an arbitrary ``theta``.

    Recomputes the fitted predictors from the first-stage coefficients in
    ``theta``; the baseline hazard is profiled out.
    """
    theta = np.asarray(theta, dtype=float)
    blocks = _blocks(fit)
    parts = []
    mus = []
    for b, f in zip(blocks, fit.first_stages):
        c = theta[b]
        parts.append(f.mean_estimating_function(c))
        mus.append(f.design @ c)
    S = np.hstack([dataset.A, *[m[:, None] for m in mus], dataset.X])
    m, v = lin_ying_moments(dataset.outcome, S)
    parts.append((v - m @ theta[blocks[-1]]) / dataset.n)
    return np.concatenate(parts)


def sandwich_covariance(fit: TwoStageFit, dataset: ProximalDataset | None = None) -> np.ndarray:
    """``(1/n) D^-1 V D^-T`` over the full stacked parameter vector."""
    sys_ = stacked_system(fit, dataset)
    try:
        dinv = np.linalg.inv(sys_.D)
    except np.linalg.LinAlgError as exc:
        raise IdentificationError("stacked derivative matrix D is singular; parameters not identified") from exc
    cov = dinv @ sys_.V @ dinv.T / sys_.n
    return (cov + cov.T) / 2


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    covariance: np.ndarray
    estimates: np.ndarray
    failures: int
    param_names: tuple[str, ...]

    @property
    def reps(self) -> int:
        return len(self.estimates) + self.failures


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Independent counter-based stream for one (seed, replicate) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate])))


def _bootstrap_one(dataset: ProximalDataset, seed: int, rep: int):
    rng = replicate_rng(seed, rep)
    idx = rng.integers(0, dataset.n, dataset.n)
    try:
        return p2sls_fit(dataset.take(idx), covariance=False).theta
    except EstimationError:
        return None


def bootstrap_covariance(dataset: ProximalDataset, reps: int, seed: int, n_jobs: int = 1) -> BootstrapResult:
    """Case-resampling bootstrap of the full two-stage parameter vector.

    Replicates that fail to fit are dropped and counted. Replicate ``r``
    always draws from the stream of ``(seed, r)``, so results do not depend on
    ``n_jobs``.

    Raises
    ------
    EstimationError
        If more than 20% of the replicates fail.
    """
    if reps < 2:
        raise ValueError("bootstrap needs at least 2 replicates")
    base = p2sls_fit(dataset, covariance=False)
    if n_jobs == 1:
        thetas = [_bootstrap_one(dataset, seed, r) for r in range(reps)]
    else:
        thetas = Parallel(n_jobs=n_jobs)(delayed(_bootstrap_one)(dataset, seed, r) for r in range(reps))
    ok = [t for t in thetas if t is not None]
    failures = reps - len(ok)
    if failures > MAX_FAILURE_FRACTION * reps:
        raise EstimationError(f"bootstrap unstable: {failures} of {reps} replicates failed")
    if len(ok) < 2:
        raise EstimationError("bootstrap needs at least 2 successful replicates")
    est = np.vstack(ok)
    cov = np.atleast_2d(np.cov(est, rowvar=False, ddof=1))
    return BootstrapResult(cov, est, failures, base.param_names)


def wald_ci(estimate: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    """Normal-quantile interval ``estimate -/+ z * sqrt(variance)``.

    Works elementwise on arrays.
    """
    if np.any(np.asarray(variance) < 0):
        raise ValueError("variance must be nonnegative")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    half = norm.ppf((1 + level) / 2) * np.sqrt(variance)
    return (estimate - half, estimate + half)
