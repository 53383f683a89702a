"""Semiparametric additive hazards regression (Lin & Ying, 1994).

The model is ``lambda(t | S) = lambda_0(t) + beta' S`` with time-fixed
regressors ``S``. With at-risk indicator ``R_i(t) = 1(T*_i >= t)`` and
risk-set mean ``Sbar(t)`` the estimator solves the linear system ``M beta = v``
where

    M = sum_i int R_i(t) (S_i - Sbar(t)) (S_i - Sbar(t))' dt
    v = sum_i int (S_i - Sbar(t)) dN_i(t).

Between consecutive distinct observed times the risk set is constant, so both
integrals are evaluated exactly as finite sums over that partition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._linalg import canonical_order, gram, solve_checked
from .data_model import StepFunction, SurvivalOutcome
from .exceptions import NoEventsError


@dataclass(frozen=True, eq=False)
class AHDesign:
    columns: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=float)
        if cols.ndim == 1:
            cols = cols.reshape(-1, 1)
        if not np.isfinite(cols).all():
            raise ValueError("design contains non-finite entries")
        object.__setattr__(self, "columns", cols)
        names = tuple(self.column_names) or tuple(f"s{j + 1}" for j in range(cols.shape[1]))
        if len(names) != cols.shape[1]:
            raise ValueError("column_names length does not match design width")
        object.__setattr__(self, "column_names", names)

    @property
    def p(self) -> int:
        return self.columns.shape[1]


class RiskSetPartition:
    """Sorted distinct observed times and the constant risk sets between them.

    Interval ``k`` is ``(t_{k-1}, t_k]`` with ``t_{-1} = 0``; its risk set is
    ``{i : T*_i >= t_k}``. Subjects tied at ``t_k`` are all at risk on
    interval ``k`` and leave together afterwards.

    Subjects are ordered by time with ties broken on ``(event, tiebreak)``, so
    every sum runs in an order fixed by the data rather than by row position.
    """

    def __init__(self, time: np.ndarray, event: np.ndarray, tiebreak: np.ndarray | None = None):
        time = np.asarray(time, dtype=float)
        self.n = len(time)
        self.time = time
        self.event = np.asarray(event, dtype=bool)
        self.order = canonical_order(time, self.event, tiebreak)
        sorted_t = time[self.order]
        self.knots, self.first = np.unique(sorted_t, return_index=True)
        # knot index of every subject, in original order
        self.knot_of = np.searchsorted(self.knots, time)
        self.at_risk = (self.n - self.first).astype(float)
        self.width = np.diff(self.knots, prepend=0.0)
        self.d_events = np.bincount(
            self.knot_of, weights=self.event.astype(float), minlength=len(self.knots)
        )

    def risk_sums(self, values: np.ndarray) -> np.ndarray:
        """``sum_{i in R_k} values_i`` for every interval ``k`` (K x q)."""
        s = values[self.order]
        rev = np.cumsum(s[::-1], axis=0)[::-1]
        return rev[self.first]

    def moments(self, centered: np.ndarray):
        """Exact ``M``, ``v`` and risk-set means for a globally centered design.

        Centering does not change ``M`` or ``v`` but keeps the subtraction in
        ``M`` free of cancellation.
        """
        o = self.order
        c = centered[o]
        s1 = self.risk_sums(centered)
        w = self.width / self.at_risk
        m = (c * self.time[o][:, None]).T @ c - (s1 * w[:, None]).T @ s1
        zbar = s1 / self.at_risk[:, None]
        ev = self.event[o]
        v = (c[ev] - zbar[self.knot_of[o][ev]]).sum(axis=0)
        return m, v, zbar

    def mean(self, values: np.ndarray) -> np.ndarray:
        return values[self.order].mean(axis=0)


@dataclass(frozen=True, eq=False)
class AHFit:
    """Result of :func:`fit_additive_hazards`.

    Attributes
    ----------
    beta : ndarray (p,)
        Hazard differences per unit time.
    baseline : StepFunction
        Cumulative baseline hazard at the observed times (covariates at 0).
    score_residuals : ndarray (n, p)
        Per-subject estimating-function values at ``beta``, baseline profiled
        out. They sum to zero.
    lhs_matrix, rhs : ndarray
        The system ``M beta = v``.
    """

    beta: np.ndarray
    baseline: StepFunction
    score_residuals: np.ndarray
    lhs_matrix: np.ndarray
    rhs: np.ndarray
    column_names: tuple[str, ...]
    n_events: int
    design: np.ndarray
    partition: RiskSetPartition

    @property
    def n(self) -> int:
        return self.partition.n

    def covariance(self) -> np.ndarray:
        """Robust (sandwich) covariance ``M^-1 (sum U_i U_i') M^-1``."""
        if self.beta.size == 0:
            return np.zeros((0, 0))
        minv = np.linalg.inv(self.lhs_matrix)
        meat = gram(self.score_residuals)
        cov = minv @ meat @ minv.T
        return (cov + cov.T) / 2

    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance()))

    def coef(self, name: str) -> float:
        return float(self.beta[self.column_names.index(name)])

    def survival(self, t, profile) -> np.ndarray:
        """``exp{-Lambda_0(t) - t beta' s}`` for a covariate profile ``s``."""
        t = np.asarray(t, dtype=float)
        return np.exp(-self.baseline(t) - t * float(np.dot(self.beta, profile)))

    def negative_hazard_counts(self) -> dict:
        """Count at-risk (subject, interval) pairs whose fitted cumulative
        hazard increment ``dLambda_0 + width * beta' S_i`` is negative."""
        part = self.partition
        lin = self.design @ self.beta
        base_inc = np.diff(self.baseline.values, prepend=0.0)
        pairs = 0
        subj = np.zeros(part.n, dtype=bool)
        intervals = 0
        for k in range(len(part.knots)):
            at_risk = part.knot_of >= k
            neg = at_risk & (base_inc[k] + part.width[k] * lin < 0)
            c = int(neg.sum())
            if c:
                pairs += c
                intervals += 1
                subj |= neg
        return {"subject_intervals": pairs, "subjects": int(subj.sum()), "intervals": intervals}


def _as_design(design, n: int) -> AHDesign:
    if isinstance(design, AHDesign):
        d = design
    else:
        d = AHDesign(np.asarray(design, dtype=float).reshape(n, -1) if np.size(design) else np.empty((n, 0)))
    if d.columns.shape[0] != n:
        raise ValueError(f"design has {d.columns.shape[0]} rows, outcome has {n}")
    return d


def fit_additive_hazards(outcome: SurvivalOutcome, design, event_label: int | None = None,
                         column_names: Sequence[str] | None = None) -> AHFit:
    """Fit the Lin-Ying additive hazards model.

    Parameters
    ----------
    outcome : SurvivalOutcome
    design : AHDesign or array (n, p)
        Time-fixed regressors; ``p = 0`` gives the Nelson-Aalen estimator.
    event_label : int, optional
        Status code counted as an event. Every other code is treated as
        censoring at its time, which yields the cause-specific fit for
        competing-risk data. Defaults to the outcome's primary event.

    Raises
    ------
    NoEventsError
        If no subject has ``status == event_label``.
    SingularDesignError
        If ``M`` is rank deficient (relative pivot tolerance 1e-10).
    """
    n = len(outcome)
    d = _as_design(design, n)
    if column_names is not None:
        d = AHDesign(d.columns, tuple(column_names))
    event = outcome.events(event_label)
    n_events = int(event.sum())
    if n_events == 0:
        raise NoEventsError("additive hazards fit requires at least one event (zero events)")

    S = d.columns
    part = RiskSetPartition(outcome.time, event, S)
    mean = part.mean(S) if d.p else np.zeros(0)
    Sc = S - mean
    m, v, zbar = part.moments(Sc)
    if d.p:
        beta = solve_checked(m, v, d.column_names, what="additive hazards design")
    else:
        beta = np.zeros(0)

    # baseline increments in centered coordinates over each interval
    drift = zbar @ beta
    d_lambda = part.d_events / part.at_risk - part.width * drift
    cum = np.cumsum(d_lambda)
    baseline = StepFunction(part.knots, cum - part.knots * float(mean @ beta))

    k = part.knot_of
    c_zd = np.cumsum(zbar * part.width[:, None], axis=0)
    c_zl = np.cumsum(zbar * d_lambda[:, None], axis=0)
    own = np.where(event[:, None], Sc - zbar[k], 0.0)
    comp = Sc * cum[k][:, None] - c_zl[k]
    lin = Sc @ beta
    drift_i = lin[:, None] * (Sc * part.time[:, None] - c_zd[k])
    resid = own - comp - drift_i

    return AHFit(
        beta=beta,
        baseline=baseline,
        score_residuals=resid,
        lhs_matrix=m,
        rhs=v,
        column_names=d.column_names,
        n_events=n_events,
        design=S,
        partition=part,
    )


def lin_ying_moments(outcome: SurvivalOutcome, design: np.ndarray, event_label: int | None = None):
    """``(M, v)`` of the Lin-Ying system for ``design`` without solving it."""
    S = np.asarray(design, dtype=float)
    part = RiskSetPartition(outcome.time, outcome.events(event_label), S)
    m, v, _ = part.moments(S - part.mean(S))
    return m, v

