"""Proximal two-stage least squares for survival outcomes, and its comparators.

The second stage regresses the primary outcome on ``[A | mu_1 .. mu_J | X]``
with the additive hazards model, where ``mu_j`` is the fitted linear predictor
of the j-th NCO regression. The exposure coefficient is the estimate of the
causal hazard difference.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .additive_hazards import AHFit, fit_additive_hazards
from .data_model import NcoKind, ProximalDataset, StepFunction
from .exceptions import EstimationError, IdentificationError, SingularDesignError, ValidationError
from .first_stage import FirstStageFit, fit_nco

WEAK_PROXY_THRESHOLD = 10.0


@dataclass(frozen=True)
class ProxyRelevance:
    name: str
    kind: str
    wald: float
    df: int
    weak: bool

    @property
    def f_stat(self) -> float:
        return self.wald / self.df if self.df else float("nan")


@dataclass(frozen=True)
class RelevanceReport:
    """Per-NCO Wald tests of the NCE coefficients plus second-stage conditioning.

    ``condition_number`` is ``None`` when the second-stage design has no
    columns.
    """

    proxies: tuple[ProxyRelevance, ...]
    condition_number: float | None
    threshold: float

    @property
    def weak_proxy(self) -> bool:
        return any(p.weak for p in self.proxies)

    def to_dict(self) -> dict:
        cond = self.condition_number
        return {
            "weak_proxy": self.weak_proxy,
            "threshold": self.threshold,
            "proxies": [
                {"name": p.name, "kind": p.kind, "wald": _jsonable(p.wald), "df": p.df,
                 "f_stat": _jsonable(p.f_stat), "weak": p.weak}
                for p in self.proxies
            ],
            **({"condition_number": _jsonable(cond)} if cond is not None else {}),
        }


def _jsonable(x: float):
    return float(x) if np.isfinite(x) else None


@dataclass(frozen=True, eq=False)
class TwoStageFit:
    """Estimates from :func:`p2sls_fit`.

    ``covariance`` spans the stacked parameter vector ``theta`` (every
    first-stage coefficient vector in NCO order, then the second-stage
    coefficients); ``param_names`` indexes it.
    """

    beta_A: np.ndarray
    beta_nuisance: np.ndarray
    baseline: StepFunction
    first_stages: tuple[FirstStageFit, ...]
    second_stage: AHFit
    design_names: tuple[str, ...]
    param_names: tuple[str, ...]
    covariance: np.ndarray | None = None
    diagnostics: RelevanceReport | None = None

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([f.coefficients for f in self.first_stages] + [self.second_stage.beta])

    @property
    def beta_A_index(self) -> np.ndarray:
        offset = sum(len(f.coefficients) for f in self.first_stages)
        return offset + np.arange(len(self.beta_A))

    @property
    def beta_A_covariance(self) -> np.ndarray:
        if self.covariance is None:
            raise ValueError("fit carries no covariance")
        idx = self.beta_A_index
        return self.covariance[np.ix_(idx, idx)]

    @property
    def beta_A_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.beta_A_covariance))


def second_stage_design(dataset: ProximalDataset, first_stages) -> tuple[np.ndarray, tuple[str, ...]]:
    """``[A | mu_1 .. mu_J | X]`` with column names, in NCO declaration order."""
    mus = [f.linear_predictor[:, None] for f in first_stages]
    S = np.hstack([dataset.A, *mus, dataset.X]) if (mus or dataset.p_A or dataset.p_X) else np.empty((dataset.n, 0))
    names = (*dataset.a_names, *(f"mu[{f.name}]" for f in first_stages), *dataset.x_names)
    return S, tuple(names)


def fit_first_stages(dataset: ProximalDataset) -> tuple[FirstStageFit, ...]:
    fits = []
    for spec in dataset.nco_specs:
        try:
            fits.append(fit_nco(spec, dataset))
        except EstimationError as exc:
            if not str(exc).startswith(f"NCO {spec.name!r}"):
                exc.args = (f"NCO {spec.name!r}: {exc}",) + exc.args[1:]
            raise
    return tuple(fits)


def p2sls_fit(dataset: ProximalDataset, covariance: bool = True,
              weak_threshold: float = WEAK_PROXY_THRESHOLD) -> TwoStageFit:
    """Two-stage estimate of the exposure effect.

    Parameters
    ----------
    dataset : ProximalDataset
        Must declare at least one NCO and contain at least one primary event.
    covariance : bool
        Attach the stacked sandwich covariance.
    weak_threshold : float
        Wald threshold below which an NCO is flagged as a weak proxy.

    Raises
    ------
    IdentificationError
        If the second-stage design is singular, typically because the
        proxies carry no information about the confounder beyond (A, X).
    """
    if not dataset.nco_specs:
        raise ValidationError("p2sls_fit requires at least one negative control outcome")
    stages = fit_first_stages(dataset)
    S, names = second_stage_design(dataset, stages)
    try:
        second = fit_additive_hazards(dataset.outcome, S, column_names=names)
    except SingularDesignError as exc:
        raise IdentificationError(
            f"second stage is not identified ({exc}); the negative controls may be weak or "
            "irrelevant for the unmeasured confounder (both the NCO and the NCE must depend on it)",
            exc.dependent_columns,
        ) from exc
    p_a = dataset.p_A
    param_names = tuple(
        [f"{f.name}:{c}" for f in stages for c in f.coef_names] + [f"beta:{c}" for c in names]
    )
    fit = TwoStageFit(
        beta_A=second.beta[:p_a],
        beta_nuisance=second.beta[p_a:],
        baseline=second.baseline,
        first_stages=stages,
        second_stage=second,
        design_names=names,
        param_names=param_names,
    )
    fit = replace(fit, diagnostics=relevance_diagnostics(fit, threshold=weak_threshold))
    if covariance:
        from .inference import sandwich_covariance

        fit = replace(fit, covariance=sandwich_covariance(fit, dataset))
    return fit


def unadjusted_fit(dataset: ProximalDataset) -> AHFit:
    """Additive hazards fit on the exposure alone."""
    return fit_additive_hazards(dataset.outcome, dataset.A, column_names=dataset.a_names)


def naive_fit(dataset: ProximalDataset) -> AHFit:
    """Additive hazards fit on ``[A | X]``, ignoring the negative controls."""
    S = np.hstack([dataset.A, dataset.X])
    return fit_additive_hazards(dataset.outcome, S, column_names=(*dataset.a_names, *dataset.x_names))


def fully_adjusted_fit(dataset: ProximalDataset) -> AHFit:
    """Additive hazards fit on ``[A | X | W | Z]``.

    Only real-valued (linear kind) NCOs enter the design; survival,
    competing-risk and loglinear NCOs are left out of this comparator.
    """
    w_specs = [s for s in dataset.nco_specs if s.kind is NcoKind.LINEAR]
    W = [np.asarray(dataset.W[s.name])[:, None] for s in w_specs]
    S = np.hstack([dataset.A, dataset.X, *W, dataset.Z])
    names = (*dataset.a_names, *dataset.x_names, *(s.name for s in w_specs), *dataset.z_names)
    return fit_additive_hazards(dataset.outcome, S, column_names=names)


def design_condition_number(S: np.ndarray) -> float | None:
    """2-norm condition number of the centered, column-normalized design."""
    if S.shape[1] == 0:
        return None
    Sc = S - S.mean(axis=0)
    norms = np.linalg.norm(Sc, axis=0)
    if np.any(norms == 0):
        return float("inf")
    return float(np.linalg.cond(Sc / norms))


def relevance_diagnostics(fit, threshold: float = WEAK_PROXY_THRESHOLD,
                          design: np.ndarray | None = None) -> RelevanceReport:
    """Weak-proxy report.

    ``fit`` is either a :class:`TwoStageFit` or a sequence of first-stage
    fits; in the latter case pass the second-stage ``design`` explicitly
    (useful when the second stage itself cannot be fitted).
    """
    if isinstance(fit, TwoStageFit):
        stages = fit.first_stages
        design = fit.second_stage.design if design is None else design
    else:
        stages = tuple(fit)
    proxies = []
    for f in stages:
        idx = f.z_index
        if len(idx) == 0:
            proxies.append(ProxyRelevance(f.name, f.kind.value, float("nan"), 0, True))
            continue
        cz = f.coefficients[idx]
        cov = f.covariance()[np.ix_(idx, idx)]
        try:
            wald = float(cz @ np.linalg.solve(cov, cz))
        except np.linalg.LinAlgError:
            wald = float("nan")
        weak = not (np.isfinite(wald) and wald >= threshold)
        proxies.append(ProxyRelevance(f.name, f.kind.value, wald, len(idx), weak))
    cond = design_condition_number(design) if design is not None else None
    return RelevanceReport(tuple(proxies), cond, threshold)
