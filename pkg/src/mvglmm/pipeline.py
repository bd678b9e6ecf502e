"""Per-stratum orchestration: eight marginal fits -> predicted individual effects."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import AGE_GROUPS, GAUSSIAN_RESPONSES, GENDERS, RESPONSES, Cohort
from .dtcox import DtCoxFit, expand_risk_sets, expected_events, fit_dtcox
from .ggm import PredictedEffectsMatrix
from .lmm import LmmFit, conditional_residuals, fit_all_gaussian


@dataclass
class StratumFit:
    stratum: str | None
    cohort: Cohort
    gaussian: dict[str, LmmFit]
    survival: DtCoxFit | None
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def usable(self) -> bool:
        return self.survival is not None and len(self.gaussian) == len(GAUSSIAN_RESPONSES)

    def effects(self) -> PredictedEffectsMatrix:
        if not self.usable:
            raise RuntimeError(f"stratum {self.stratum!r} has no usable predicted effects: {self.errors}")
        cols = [self.gaussian[r].predicted_V for r in GAUSSIAN_RESPONSES] + [self.survival.predicted_V]
        return PredictedEffectsMatrix(np.column_stack(cols), RESPONSES, self.stratum)


def fit_stratum(cohort: Cohort, residual_fraction: float = 0.95, stratum: str | None = None,
                survival_covariates: bool = True, survival_frailty: bool = True) -> StratumFit:
    """Seven Gaussian mixed models plus the discrete-time frailty model.

    Failures are recorded per model rather than raised.
    """
    errors: dict[str, str] = {}
    gaussian: dict[str, LmmFit] = {}
    try:
        gaussian = fit_all_gaussian(cohort, residual_fraction)
    except Exception as exc:  # recorded; the caller decides whether the stratum is usable
        errors["gaussian"] = f"{type(exc).__name__}: {exc}"
    survival = None
    try:
        survival = fit_dtcox(cohort, covariates=survival_covariates,
                             frailty_U=survival_frailty, frailty_V=survival_frailty)
    except Exception as exc:
        errors["Geom"] = f"{type(exc).__name__}: {exc}"
    return StratumFit(stratum, cohort, gaussian, survival, errors)


def qq_pairs(residuals: np.ndarray) -> dict:
    """Sorted standardized residuals against normal quantiles at (i - 0.5)/n."""
    r = np.asarray(residuals, dtype=float)
    sd = float(np.sqrt(np.mean((r - r.mean()) ** 2)))
    z = np.sort((r - r.mean()) / sd) if sd > 0 else np.zeros_like(r)
    q = stats.norm.ppf((np.arange(1, r.size + 1) - 0.5) / r.size)
    return {"theoretical": [float(x) for x in q], "sample": [float(x) for x in z]}


def diagnostics(fit: StratumFit) -> dict:
    out: dict = {"qq": {}, "events": []}
    for label, g in fit.gaussian.items():
        out["qq"][label] = qq_pairs(conditional_residuals(g, fit.cohort))
    if fit.survival is not None:
        table = expand_risk_sets(fit.cohort, covariates=bool(fit.survival.covariate_names))
        out["events"].append(expected_events(fit.survival, table).to_dict())
        for gender in GENDERS:
            for age in AGE_GROUPS:
                out["events"].append(expected_events(fit.survival, table, (gender, age)).to_dict())
    return out
