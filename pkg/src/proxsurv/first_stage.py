"""First-stage NCO regressions on (A, Z, X).

Each fit yields a linear predictor that is, under the model, an affine
function of E(U | A, Z, X). In every kind the predictor is ``design @ coef``:
the design carries an intercept for linear/loglinear NCOs and none for the
survival and competing-risk kinds, whose baseline hazard absorbs constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._linalg import canonical_order, dependent_columns, gram, solve_checked
from .additive_hazards import fit_additive_hazards, lin_ying_moments
from .data_model import CAUSE_NCO, NcoKind, ProximalDataset, SurvivalOutcome
from .exceptions import ConvergenceError, EstimationError, SingularDesignError, ValidationError

MAX_ITER = 100
MAX_HALVINGS = 20


@dataclass(frozen=True, eq=False)
class FirstStageFit:
    """A fitted NCO model.

    ``estimating_functions`` holds the per-subject ``U_1i`` (n x q) and
    ``jacobian`` the derivative of their *mean* with respect to
    ``coefficients`` (q x q).
    """

    name: str
    kind: NcoKind
    coefficients: np.ndarray
    coef_names: tuple[str, ...]
    design: np.ndarray
    linear_predictor: np.ndarray
    estimating_functions: np.ndarray
    jacobian: np.ndarray
    z_index: np.ndarray
    response: object = None
    offset: np.ndarray | None = None
    event_label: int | None = None

    @property
    def n(self) -> int:
        return self.design.shape[0]

    def covariance(self) -> np.ndarray:
        """Robust covariance of the coefficients from this stage alone."""
        n = self.n
        jinv = np.linalg.inv(self.jacobian)
        meat = gram(self.estimating_functions) / n
        cov = jinv @ meat @ jinv.T / n
        return (cov + cov.T) / 2

    def mean_estimating_function(self, coefficients: np.ndarray) -> np.ndarray:
        """Mean of ``U_1i`` at arbitrary coefficients (used for derivative checks)."""
        c = np.asarray(coefficients, dtype=float)
        G = self.design
        n = self.n
        if self.kind is NcoKind.LINEAR:
            return G.T @ (self.response - G @ c) / n
        if self.kind is NcoKind.LOGLINEAR:
            off = 0.0 if self.offset is None else self.offset
            return G.T @ (self.response - np.exp(off + G @ c)) / n
        m, v = lin_ying_moments(self.response, G, self.event_label)
        return (v - m @ c) / n


def base_design(dataset: ProximalDataset, intercept: bool) -> tuple[np.ndarray, tuple[str, ...], np.ndarray]:
    """Regressor matrix ``(1, A, Z, X)`` or ``(A, Z, X)`` with names and Z positions."""
    blocks = [dataset.A, dataset.Z, dataset.X]
    names = [*dataset.a_names, *dataset.z_names, *dataset.x_names]
    if intercept:
        blocks.insert(0, np.ones((dataset.n, 1)))
        names.insert(0, "(intercept)")
    G = np.hstack(blocks)
    start = (1 if intercept else 0) + dataset.p_A
    z_index = np.arange(start, start + dataset.p_Z)
    return G, tuple(names), z_index


def fit_linear_nco(w, dataset: ProximalDataset, name: str = "w") -> FirstStageFit:
    """OLS of ``w`` on ``(1, A, Z, X)``."""
    w = np.asarray(w, dtype=float)
    G, names, z_index = base_design(dataset, intercept=True)
    o = canonical_order(w, G)
    gtg = G[o].T @ G[o]
    bad = dependent_columns(gtg, names)
    if bad:
        raise SingularDesignError(f"NCO {name!r}: singular first-stage design, dependent columns {bad}", bad)
    coef, *_ = scipy.linalg.lstsq(G[o], w[o])
    mu = G @ coef
    resid = w - mu
    n = len(w)
    return FirstStageFit(
        name=name,
        kind=NcoKind.LINEAR,
        coefficients=coef,
        coef_names=names,
        design=G,
        linear_predictor=mu,
        estimating_functions=G * resid[:, None],
        jacobian=-gtg / n,
        z_index=z_index,
        response=w,
    )


def fit_loglinear_nco(w, dataset: ProximalDataset, offset=None, name: str = "w",
                      tol: float = 1e-10) -> FirstStageFit:
    """Log-link mean model fitted by damped Newton on the quasi-Poisson score.

    Solves ``sum_i g_i {w_i - exp(offset_i + g_i' c)} = 0`` with ``g_i`` the
    row ``(1, A_i, Z_i, X_i)``. The returned linear predictor excludes the
    offset.
    """
    w = np.asarray(w, dtype=float)
    n = len(w)
    if np.any(w < 0):
        raise ValidationError(f"NCO {name!r}: loglinear NCO must be nonnegative")
    if not np.any(w > 0):
        raise EstimationError(f"NCO {name!r}: all values are zero, log-linear mean is unidentifiable")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    G_in, names, z_index = base_design(dataset, intercept=True)
    # iterate on rows in canonical order; per-subject outputs are mapped back
    o = canonical_order(w, off, G_in)
    G, w_o, off_o = G_in[o], w[o], off[o]
    bad = dependent_columns(G.T @ G, names)
    if bad:
        raise SingularDesignError(f"NCO {name!r}: singular first-stage design, dependent columns {bad}", bad)

    c = np.zeros(G.shape[1])
    c[0] = np.log(w_o.sum() / np.exp(off_o).sum())

    def score(c):
        mu = np.exp(off_o + G @ c)
        return G.T @ (w_o - mu), mu

    s, mu = score(c)
    norm = np.linalg.norm(s)
    limit = tol * (1 + n)
    for _ in range(MAX_ITER):
        if norm <= limit:
            break
        info = G.T @ (G * mu[:, None])
        step = solve_checked(info, s, names, what=f"loglinear information for NCO {name!r}")
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            c_new = c + t * step
            with np.errstate(over="ignore"):
                s_new, mu_new = score(c_new)
            new_norm = np.linalg.norm(s_new)
            if np.isfinite(new_norm) and new_norm < norm:
                break
            t /= 2
        else:
            raise ConvergenceError(
                f"NCO {name!r}: step halving failed to reduce the score", gradient_norm=norm
            )
        c, s, mu, norm = c_new, s_new, mu_new, new_norm
    if norm > limit:
        raise ConvergenceError(
            f"NCO {name!r}: log-linear fit did not converge in {MAX_ITER} iterations "
            f"(score norm {norm:.3g})",
            gradient_norm=norm,
        )
    mu_in = np.exp(off + G_in @ c)
    return FirstStageFit(
        name=name,
        kind=NcoKind.LOGLINEAR,
        coefficients=c,
        coef_names=names,
        design=G_in,
        linear_predictor=G_in @ c,
        estimating_functions=G_in * (w - mu_in)[:, None],
        jacobian=-(G.T @ (G * mu[:, None])) / n,
        z_index=z_index,
        response=w,
        offset=None if offset is None else off,
    )


def _hazard_stage(outcome: SurvivalOutcome, dataset: ProximalDataset, kind: NcoKind,
                  name: str, event_label: int | None) -> FirstStageFit:
    G, names, z_index = base_design(dataset, intercept=False)
    try:
        fit = fit_additive_hazards(outcome, G, event_label=event_label, column_names=names)
    except EstimationError as exc:
        exc.args = (f"NCO {name!r}: {exc}",) + exc.args[1:]
        raise
    n = dataset.n
    return FirstStageFit(
        name=name,
        kind=kind,
        coefficients=fit.beta,
        coef_names=names,
        design=G,
        linear_predictor=G @ fit.beta,
        estimating_functions=fit.score_residuals,
        jacobian=-fit.lhs_matrix / n,
        z_index=z_index,
        response=outcome,
        event_label=event_label,
    )


def fit_survival_nco(w_outcome: SurvivalOutcome, dataset: ProximalDataset, name: str = "w") -> FirstStageFit:
    """Additive hazards fit of a separately censored NCO time on ``(A, Z, X)``."""
    return _hazard_stage(w_outcome, dataset, NcoKind.SURVIVAL, name, None)


def fit_competing_nco(dataset: ProximalDataset, name: str = "competing",
                      nco_label: int = CAUSE_NCO) -> FirstStageFit:
    """Cause-specific additive hazards fit for the competing (NC) event.

    All other status codes, including the primary event, act as censoring.
    ``nco_label`` can be switched to the primary-event code to fit the other
    cause with the same construction.
    """
    if not dataset.outcome.competing:
        raise ValidationError("competing-risk NCO requires competing-risk outcome labels")
    return _hazard_stage(dataset.outcome, dataset, NcoKind.COMPETING_RISK, name, nco_label)


def fit_nco(spec, dataset: ProximalDataset) -> FirstStageFit:
    """Dispatch on the NCO kind."""
    kind = spec.kind
    if kind is NcoKind.LINEAR:
        return fit_linear_nco(dataset.W[spec.name], dataset, name=spec.name)
    if kind is NcoKind.LOGLINEAR:
        return fit_loglinear_nco(dataset.W[spec.name], dataset, offset=dataset.offsets.get(spec.name),
                                 name=spec.name)
    if kind is NcoKind.SURVIVAL:
        return fit_survival_nco(dataset.W[spec.name], dataset, name=spec.name)
    if kind is NcoKind.COMPETING_RISK:
        return fit_competing_nco(dataset, name=spec.name)
    raise ValueError(f"unknown NCO kind {kind!r}")

