"""Marginal Gaussian mixed models for the exam scores.

Each score is modelled as::

    y_i = x_i' beta + U_{e(i)} + V_i + eps_i,
    U ~ N(0, s2_U I_10),  V ~ N(0, s2_V I_n),  eps ~ N(0, s2_eps I_n)

With one score per student the individual component and the residual only
enter through their sum ``s2_c = s2_V + s2_eps``. The likelihood is
maximised over ``(beta, s2_U, s2_c)``; ``residual_fraction`` then splits
``s2_c`` so that ``s2_V = residual_fraction * s2_c`` and the predicted
individual effect is ``residual_fraction`` times the conditional residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GAUSSIAN_RESPONSES, Cohort, ResponseId, design_matrix
from .numerics import LOG_VARIANCE_FLOOR, OptimizerSettings, maximize

ZERO_VARIANCE = 1e-10
_LOG_GAMMA_CEILING = 30.0


class DegenerateDesignError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianLmmSpec:
    response: ResponseId
    fixed_design: np.ndarray
    branch_map: np.ndarray
    residual_fraction: float = 0.95
    n_branches: int = 10

    def __post_init__(self):
        if self.response.is_survival:
            raise ValueError("Gaussian mixed model requested for the survival response")
        if not 0 < self.residual_fraction <= 1:
            raise ValueError("residual_fraction must lie in (0, 1]")

    @classmethod
    def for_cohort(cls, cohort: Cohort, response: str | ResponseId, residual_fraction: float = 0.95):
        if not isinstance(response, ResponseId):
            response = ResponseId.from_label(response)
        design = design_matrix(cohort).reduced()
        return cls(response, design.matrix, cohort.branches(), residual_fraction, cohort.n_branches)


@dataclass
class LmmFit:
    response: str
    beta: np.ndarray
    sigma2_U: float
    sigma2_V: float
    sigma2_eps: float
    predicted_U: np.ndarray
    predicted_V: np.ndarray
    log_likelihood: float
    converged: bool
    residual_fraction: float = 0.95
    sigma2_U_at_zero: bool = False
    iterations: int = 0

    @property
    def sigma2_combined(self) -> float:
        return self.sigma2_V + self.sigma2_eps

    def summary(self) -> dict:
        return {
            "response": self.response,
            "family": "gaussian",
            "beta": [float(b) for b in self.beta],
            "sigma2_U": float(self.sigma2_U),
            "sigma2_V": float(self.sigma2_V),
            "sigma2_eps": float(self.sigma2_eps),
            "sigma2_U_at_zero": bool(self.sigma2_U_at_zero),
            "log_likelihood": None if not math.isfinite(self.log_likelihood) else float(self.log_likelihood),
            "converged": bool(self.converged),
            "predicted_U": [float(u) for u in self.predicted_U],
        }


class _OneWayProfile:
    """Profile likelihood of a random-intercept model in ``log(s2_U / s2_c)``."""

    def __init__(self, y: np.ndarray, X: np.ndarray, branches: np.ndarray, n_branches: int):
        self.y, self.X, self.n = y, X, y.size
        self.groups = np.zeros((n_branches, y.size))
        self.groups[branches, np.arange(y.size)] = 1.0
        self.m = self.groups.sum(axis=1)
        self.Xs = self.groups @ X  # per-branch column sums
        self.ys = self.groups @ y
        self.XtX = X.T @ X
        self.Xty = X.T @ y

    def gls(self, gamma: float):
        w = gamma / (1.0 + self.m * gamma)
        A = self.XtX - (self.Xs * w[:, None]).T @ self.Xs
        c = self.Xty - (self.Xs * w[:, None]).T @ self.ys
        beta = np.linalg.solve(A, c)
        r = self.y - self.X @ beta
        s = self.groups @ r
        Q = float(r @ r - np.sum(w * s**2))
        return beta, r, s, max(Q, 0.0)

    def loglik(self, tau) -> float:
        gamma = math.exp(float(np.atleast_1d(tau)[0]))
        _, _, _, Q = self.gls(gamma)
        s2 = Q / self.n
        if s2 <= 0:
            return math.inf
        return -0.5 * self.n * (math.log(2 * math.pi * s2) + 1.0) - 0.5 * float(np.sum(np.log1p(self.m * gamma)))

    def score(self, tau) -> np.ndarray:
        gamma = math.exp(float(np.atleast_1d(tau)[0]))
        _, _, s, Q = self.gls(gamma)
        s2 = Q / self.n
        d = 1.0 + self.m * gamma
        dgamma = -0.5 * np.sum(self.m / d) + 0.5 / s2 * np.sum(s**2 / d**2)
        return np.array([gamma * dgamma])


def fit_lmm_arrays(
    y: np.ndarray,
    X: np.ndarray,
    branches: np.ndarray,
    n_branches: int = 10,
    residual_fraction: float = 0.95,
    response: str = "",
    settings: OptimizerSettings | None = None,
) -> LmmFit:
    """ML fit of the random-intercept model on raw arrays."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    branches = np.asarray(branches, dtype=int)
    if X.shape[0] != y.size or branches.size != y.size:
        raise ValueError("y, X and branches must have matching lengths")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DegenerateDesignError("fixed-effects design is rank deficient")
    prof = _OneWayProfile(y, X, branches, n_branches)

    beta_ols, r_ols, _, Q_ols = prof.gls(0.0)
    scale = max(1.0, float(np.max(np.abs(y))))
    if np.max(np.abs(r_ols)) <= 1e-12 * scale:
        fit = LmmFit(response, beta_ols, 0.0, 0.0, 0.0, np.zeros(n_branches), np.zeros(y.size),
                     math.inf, True, residual_fraction, True, 0)
        return fit

    # coarse grid to pick a start; the profile can be flat for tiny branch counts
    grid = np.linspace(LOG_VARIANCE_FLOOR, 10.0, 81)
    values = [prof.loglik(t) for t in grid]
    start = grid[int(np.argmax(values))]
    settings = settings or OptimizerSettings(
        max_iterations=100, gradient_tolerance=1e-8, parameter_lower_bounds=[LOG_VARIANCE_FLOOR]
    )
    tau, ll, report = maximize(prof.loglik, [start], settings, gradient=prof.score)
    tau = min(float(tau[0]), _LOG_GAMMA_CEILING)
    gamma = math.exp(tau)
    beta, _, _, Q = prof.gls(gamma)
    s2_c = Q / prof.n
    s2_U = gamma * s2_c
    at_zero = s2_U < ZERO_VARIANCE or tau <= LOG_VARIANCE_FLOOR
    if at_zero:
        s2_U = 0.0
        beta, _, _, Q = prof.gls(0.0)
        s2_c = Q / prof.n
        ll = prof.loglik(LOG_VARIANCE_FLOOR) if s2_c > 0 else math.inf
    U, V = blup(y, X, branches, n_branches, beta, s2_U, s2_c, residual_fraction)
    return LmmFit(
        response=response,
        beta=beta,
        sigma2_U=s2_U,
        sigma2_V=residual_fraction * s2_c,
        sigma2_eps=(1.0 - residual_fraction) * s2_c,
        predicted_U=U,
        predicted_V=V,
        log_likelihood=float(ll),
        converged=bool(report.converged),
        residual_fraction=residual_fraction,
        sigma2_U_at_zero=bool(at_zero),
        iterations=report.iterations,
    )


def blup(y, X, branches, n_branches, beta, sigma2_U, sigma2_combined, residual_fraction):
    """Closed-form conditional means of (U, V) for the one-way layout.

    U_k = s2_U * S_k / (s2_c + m_k s2_U) with S_k the branch residual sum,
    V_i = residual_fraction * (y_i - x_i' beta - U_{e(i)}).
    """
    y = np.asarray(y, dtype=float)
    r = y - np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    branches = np.asarray(branches, dtype=int)
    s = np.bincount(branches, weights=r, minlength=n_branches)
    m = np.bincount(branches, minlength=n_branches).astype(float)
    if sigma2_U <= 0:
        U = np.zeros(n_branches)
    else:
        if sigma2_combined <= 0:
            raise np.linalg.LinAlgError("singular mixed-model system: zero residual variance")
        U = sigma2_U * s / (sigma2_combined + m * sigma2_U)
    V = residual_fraction * (r - U[branches])
    return U, V


def fit_lmm(cohort: Cohort, spec: GaussianLmmSpec) -> LmmFit:
    j = spec.response.index - 1
    y = cohort.scores()[:, j]
    return fit_lmm_arrays(y, spec.fixed_design, spec.branch_map, spec.n_branches,
                          spec.residual_fraction, spec.response.label)


def predict_effects(fit: LmmFit, cohort: Cohort, spec: GaussianLmmSpec | None = None):
    """Recompute (U_hat, V_hat) for ``cohort`` at the fitted parameters."""
    if spec is None:
        spec = GaussianLmmSpec.for_cohort(cohort, fit.response, fit.residual_fraction)
    y = cohort.scores()[:, spec.response.index - 1]
    return blup(y, spec.fixed_design, spec.branch_map, spec.n_branches, fit.beta,
                fit.sigma2_U, fit.sigma2_combined, fit.residual_fraction)


def conditional_residuals(fit: LmmFit, cohort: Cohort, spec: GaussianLmmSpec | None = None) -> np.ndarray:
    """y - x'beta - U_{e(i)}: the combined individual-plus-residual prediction."""
    if spec is None:
        spec = GaussianLmmSpec.for_cohort(cohort, fit.response, fit.residual_fraction)
    y = cohort.scores()[:, spec.response.index - 1]
    return y - spec.fixed_design @ fit.beta - fit.predicted_U[spec.branch_map]


def fit_all_gaussian(cohort: Cohort, residual_fraction: float = 0.95) -> dict[str, LmmFit]:
    return {
        label: fit_lmm(cohort, GaussianLmmSpec.for_cohort(cohort, label, residual_fraction))
        for label in GAUSSIAN_RESPONSES
    }
