"""Discrete-time frailty proportional hazards model for attempts-to-pass.

The conditional hazard at attempt ``t`` is::

    h_it = lambda_t * exp(x_i' beta) * exp(U_{e(i)}) * exp(V_i)

which, on the person-period (risk-set) expansion, is a binomial GLMM with
log link. Fitting uses the Poisson approximation (each row contributes
``y*eta - exp(eta)``) and a Laplace approximation to the marginal
likelihood. The inner problem finds the conditional modes of the branch
and individual frailties by Newton's method; the outer problem maximises
the Laplace objective over (log baseline, beta, log variances) with an
analytic gradient.

Because every student belongs to exactly one branch, the negative Hessian
of the inner problem has the block form ``[[D_u, C], [C', D_v]]`` with
diagonal ``D_u``, ``D_v`` and one non-zero per column of ``C``. Its Schur
complement on the branch block is therefore diagonal and every solve,
log-determinant and diagonal of the inverse is O(rows).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Cohort, design_matrix
from .numerics import LOG_VARIANCE_FLOOR, OptimizerSettings, finite_difference_jacobian, maximize

INNER_TOLERANCE = 1e-9
OUTER_TOLERANCE = 1e-6
SEPARATION_BOUND = 50.0
ZERO_VARIANCE = 1e-10


class DtCoxError(RuntimeError):
    pass


class HazardDomainError(ValueError):
    def __init__(self, row: int, hazard: float):
        self.row = row
        super().__init__(f"hazard {hazard:.6g} >= 1 at person-period row {row} (binomial form)")


@dataclass(frozen=True)
class PersonPeriodTable:
    """One row per (student, attempt at risk)."""

    student_ids: tuple[str, ...]
    student: np.ndarray      # row -> student position
    period: np.ndarray       # row -> attempt index, 1-based
    event: np.ndarray        # row -> 0/1
    X: np.ndarray            # row -> fixed covariates (no intercept)
    branch: np.ndarray       # row -> 0-based branch
    covariate_names: tuple[str, ...]
    n_branches: int
    gender: tuple[str, ...]       # per student
    age_group: tuple[str, ...]    # per student
    branch_labels: tuple[str, ...]  # per student

    @property
    def n_rows(self) -> int:
        return self.period.size

    @property
    def n_students(self) -> int:
        return len(self.student_ids)

    @property
    def period_count(self) -> int:
        return int(self.period.max()) if self.period.size else 0

    @property
    def risk_set_sizes(self) -> np.ndarray:
        return np.bincount(self.period, minlength=self.period_count + 1)[1:]

    @property
    def event_counts(self) -> np.ndarray:
        return np.bincount(self.period, weights=self.event, minlength=self.period_count + 1)[1:]

    @property
    def student_branch(self) -> np.ndarray:
        out = np.zeros(self.n_students, dtype=int)
        out[self.student] = self.branch
        return out

    def outcomes(self) -> tuple[np.ndarray, np.ndarray]:
        """Recover (attempts, passed) per student."""
        attempts = np.zeros(self.n_students, dtype=int)
        np.maximum.at(attempts, self.student, self.period)
        passed = np.zeros(self.n_students, dtype=bool)
        passed[self.student[self.event == 1]] = True
        return attempts, passed

    def relabel_periods(self, mapping: dict[int, int]) -> "PersonPeriodTable":
        new = np.array([mapping[int(t)] for t in self.period], dtype=int)
        return PersonPeriodTable(self.student_ids, self.student, new, self.event, self.X, self.branch,
                                 self.covariate_names, self.n_branches, self.gender, self.age_group,
                                 self.branch_labels)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["student_id", "t", "event", "gender", "age_group", "branch"])
        for s, t, e in zip(self.student, self.period, self.event):
            w.writerow([self.student_ids[s], int(t), int(e), "M" if self.gender[s] == "male" else "F",
                        self.age_group[s], self.branch_labels[s]])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.csv_text(), encoding="utf-8")


def expand_risk_sets(cohort: Cohort, covariates: bool = True) -> PersonPeriodTable:
    attempts = cohort.attempts()
    passed = cohort.passed()
    if np.any(attempts < 1):
        raise ValueError("attempts must be >= 1")
    n = cohort.n
    student = np.repeat(np.arange(n), attempts)
    starts = np.concatenate([[0], np.cumsum(attempts)[:-1]]) if n else np.zeros(0, dtype=int)
    period = np.arange(student.size) - np.repeat(starts, attempts) + 1
    event = np.zeros(student.size, dtype=int)
    last = np.cumsum(attempts) - 1
    event[last[passed]] = 1
    if covariates and n:
        design = design_matrix(cohort).reduced()
        keep = [k for k, c in enumerate(design.columns) if c != "intercept"]
        Xs = design.matrix[:, keep]
        names = tuple(design.columns[k] for k in keep)
    else:
        Xs = np.zeros((n, 0))
        names = ()
    branches = cohort.branches()
    return PersonPeriodTable(
        student_ids=tuple(cohort.student_ids),
        student=student,
        period=period,
        event=event,
        X=Xs[student],
        branch=branches[student] if n else np.zeros(0, dtype=int),
        covariate_names=names,
        n_branches=cohort.n_branches,
        gender=tuple(r.gender for r in cohort.records),
        age_group=tuple(r.age_group for r in cohort.records),
        branch_labels=tuple(r.branch for r in cohort.records),
    )


def _linear_predictor(table: PersonPeriodTable, baseline, beta, u, v) -> np.ndarray:
    baseline = np.asarray(baseline, dtype=float)
    eta = baseline[table.period - 1].copy()
    if table.X.shape[1]:
        eta += table.X @ np.asarray(beta, dtype=float)
    if u is not None:
        eta += np.asarray(u, dtype=float)[table.branch]
    if v is not None:
        eta += np.asarray(v, dtype=float)[table.student]
    return eta


def survival_log_likelihood(table: PersonPeriodTable, params, frailties=(None, None), form: str = "binomial") -> float:
    """Conditional log-likelihood of the person-period rows.

    ``params`` is ``(baseline, beta)`` with ``baseline`` the log hazard
    per period 1..T (``-inf`` for periods without a parameter);
    ``frailties`` is ``(u, v)`` with either entry allowed to be ``None``.
    """
    baseline, beta = params
    u, v = frailties
    with np.errstate(over="ignore"):
        eta = _linear_predictor(table, baseline, beta, u, v)
        h = np.exp(eta)
    y = table.event
    if form == "poisson":
        # row-wise replacement of log(1 - h) by -h; the fitted GLMM kernel (y eta - h on
        # every row) differs from this by the hazards on event rows
        return float(np.sum(np.where(y == 1, eta, -h)))
    if form != "binomial":
        raise ValueError(f"unknown form {form!r}")
    bad = np.flatnonzero(h >= 1.0)
    if bad.size:
        raise HazardDomainError(int(bad[0]), float(h[bad[0]]))
    return float(np.sum(np.where(y == 1, eta, np.log1p(-h))))


def subject_log_likelihood(attempts, passed, hazards_per_subject) -> float:
    """Independent per-subject discrete survival likelihood.

    P(T=t) = h_t prod_{s<t}(1-h_s) for events, prod_{s<=t}(1-h_s) for
    censored subjects.
    """
    total = 0.0
    for m, ok, h in zip(attempts, passed, hazards_per_subject):
        h = np.asarray(h, dtype=float)[:m]
        if ok:
            total += math.log(h[m - 1]) + float(np.sum(np.log1p(-h[: m - 1])))
        else:
            total += float(np.sum(np.log1p(-h[:m])))
    return total


@dataclass
class _Modes:
    u: np.ndarray | None
    v: np.ndarray | None
    mu: np.ndarray
    d_u: np.ndarray | None
    d_v: np.ndarray | None
    schur: np.ndarray | None
    iterations: int


class LaplaceObjective:
    """Laplace-approximate marginal log-likelihood of the Poisson-form GLMM.

    Parameter vector: ``[log baseline per event period, beta, log s2_U, log s2_V]``
    where the variance entries are present only for enabled frailties.
    """

    def __init__(self, table: PersonPeriodTable, frailty_U: bool = True, frailty_V: bool = True):
        events = table.event_counts
        self.event_periods = np.flatnonzero(events > 0) + 1
        if self.event_periods.size == 0:
            raise DtCoxError("no events observed; the survival model cannot be fitted")
        pos = np.full(table.period_count + 1, -1)
        pos[self.event_periods] = np.arange(self.event_periods.size)
        keep = pos[table.period] >= 0
        self.table = table
        self.rows = keep
        self.col = pos[table.period[keep]]
        self.y = table.event[keep].astype(float)
        self.X = table.X[keep]
        self.br = table.branch[keep]
        self.st = table.student[keep]
        self.n = table.n_students
        self.K = table.n_branches
        self.T = self.event_periods.size
        self.p = self.X.shape[1]
        self.use_U, self.use_V = frailty_U, frailty_V
        self._warm: tuple | None = None

    # ---- parameter layout -------------------------------------------------
    @property
    def size(self) -> int:
        return self.T + self.p + int(self.use_U) + int(self.use_V)

    def unpack(self, phi):
        phi = np.asarray(phi, dtype=float)
        alpha = phi[: self.T]
        beta = phi[self.T : self.T + self.p]
        k = self.T + self.p
        tau_U = tau_V = None
        if self.use_U:
            tau_U = phi[k]
            k += 1
        if self.use_V:
            tau_V = phi[k]
        return alpha, beta, tau_U, tau_V

    def lower_bounds(self) -> list[float | None]:
        return [None] * (self.T + self.p) + [LOG_VARIANCE_FLOOR] * (int(self.use_U) + int(self.use_V))

    def start(self) -> np.ndarray:
        R = self.table.risk_set_sizes[self.event_periods - 1]
        d = self.table.event_counts[self.event_periods - 1]
        parts = [np.log(d / R), np.zeros(self.p)]
        parts.append(np.full(int(self.use_U) + int(self.use_V), math.log(0.1)))
        return np.concatenate(parts)

    def fixed_eta(self, alpha, beta) -> np.ndarray:
        eta = alpha[self.col]
        if self.p:
            eta = eta + self.X @ beta
        return eta

    # ---- inner problem ----------------------------------------------------
    def _solve(self, d_u, d_v, schur, c, g_u, g_v):
        """Solve H delta = g for the block-structured negative Hessian."""
        if self.use_U and self.use_V:
            r = c / d_v
            rhs_u = g_u - np.bincount(self.student_branch, weights=r * g_v, minlength=self.K)
            du = rhs_u / schur
            dv = (g_v - c * du[self.student_branch]) / d_v
            return du, dv
        if self.use_U:
            return g_u / d_u, None
        if self.use_V:
            return None, g_v / d_v
        return None, None

    @property
    def student_branch(self) -> np.ndarray:
        if not hasattr(self, "_sb"):
            self._sb = self.table.student_branch
        return self._sb

    def modes(self, phi, warm: bool = True) -> _Modes:
        alpha, beta, tau_U, tau_V = self.unpack(phi)
        eta0 = self.fixed_eta(alpha, beta)
        prec_U = math.exp(-tau_U) if self.use_U else 0.0
        prec_V = math.exp(-tau_V) if self.use_V else 0.0
        u = np.zeros(self.K) if self.use_U else None
        v = np.zeros(self.n) if self.use_V else None
        if warm and self._warm is not None:
            if self.use_U:
                u = self._warm[0].copy()
            if self.use_V:
                v = self._warm[1].copy()

        def eta_of(u, v):
            eta = eta0
            if u is not None:
                eta = eta + u[self.br]
            if v is not None:
                eta = eta + v[self.st]
            return eta

        def penalized(u, v):
            eta = eta_of(u, v)
            val = float(self.y @ eta - np.sum(np.exp(eta)))
            if u is not None:
                val -= 0.5 * prec_U * float(u @ u)
            if v is not None:
                val -= 0.5 * prec_V * float(v @ v)
            return val

        extra_done = False
        for it in range(1, 201):
            eta = eta_of(u, v)
            mu = np.exp(eta)
            resid = self.y - mu
            g_u = g_v = None
            d_u = d_v = schur = c = None
            if self.use_V:
                c = np.bincount(self.st, weights=mu, minlength=self.n)
                g_v = np.bincount(self.st, weights=resid, minlength=self.n) - prec_V * v
                d_v = c + prec_V
            if self.use_U:
                g_u = np.bincount(self.br, weights=resid, minlength=self.K) - prec_U * u
                d_u = np.bincount(self.br, weights=mu, minlength=self.K) + prec_U
                schur = d_u
                if self.use_V:
                    schur = d_u - np.bincount(self.student_branch, weights=c * c / d_v, minlength=self.K)
            gmax = max(float(np.max(np.abs(g_u))) if g_u is not None else 0.0,
                       float(np.max(np.abs(g_v))) if g_v is not None else 0.0)
            if not (self.use_U or self.use_V):
                return _Modes(None, None, mu, None, None, None, 0)
            if gmax <= INNER_TOLERANCE:
                if extra_done:
                    break
                extra_done = True
            du, dv = self._solve(d_u, d_v, schur, c, g_u, g_v)
            f0 = penalized(u, v)
            step = 1.0
            for _ in range(50):
                nu = u + step * du if u is not None else None
                nv = v + step * dv if v is not None else None
                f1 = penalized(nu, nv)
                if np.isfinite(f1) and f1 >= f0 - 1e-12 * abs(f0):
                    break
                step *= 0.5
            u, v = nu, nv
        else:
            raise DtCoxError("inner mode search did not converge")
        self._warm = (u.copy() if u is not None else None, v.copy() if v is not None else None)
        return _Modes(u, v, mu, d_u, d_v, schur, it)

    # ---- outer objective --------------------------------------------------
    def _pieces(self, phi, warm=True):
        m = self.modes(phi, warm)
        alpha, beta, tau_U, tau_V = self.unpack(phi)
        eta = self.fixed_eta(alpha, beta)
        if m.u is not None:
            eta = eta + m.u[self.br]
        if m.v is not None:
            eta = eta + m.v[self.st]
        mu = np.exp(eta)
        # recompute curvature at the final modes
        c = d_u = d_v = schur = None
        if self.use_V:
            c = np.bincount(self.st, weights=mu, minlength=self.n)
            d_v = c + math.exp(-tau_V)
        if self.use_U:
            d_u = np.bincount(self.br, weights=mu, minlength=self.K) + math.exp(-tau_U)
            schur = d_u
            if self.use_V:
                schur = d_u - np.bincount(self.student_branch, weights=c * c / d_v, minlength=self.K)
        return m, eta, mu, c, d_u, d_v, schur

    def value(self, phi, warm: bool = True) -> float:
        alpha, beta, tau_U, tau_V = self.unpack(phi)
        m, eta, mu, c, d_u, d_v, schur = self._pieces(phi, warm)
        val = float(self.y @ eta - np.sum(mu))
        if self.use_U:
            val += -0.5 * math.exp(-tau_U) * float(m.u @ m.u) - 0.5 * self.K * tau_U
            val += -0.5 * float(np.sum(np.log(schur)))
        if self.use_V:
            val += -0.5 * math.exp(-tau_V) * float(m.v @ m.v) - 0.5 * self.n * tau_V
            val += -0.5 * float(np.sum(np.log(d_v)))
        return val

    def gradient(self, phi, warm: bool = True) -> np.ndarray:
        alpha, beta, tau_U, tau_V = self.unpack(phi)
        m, eta, mu, c, d_u, d_v, schur = self._pieces(phi, warm)
        sb = self.student_branch
        # diagonal of z_r' H^{-1} z_r per row
        if self.use_U and self.use_V:
            r = c / d_v
            inv_uu = 1.0 / schur
            inv_vv = 1.0 / d_v + r * r * inv_uu[sb]
            inv_uv = -r * inv_uu[sb]  # per student, branch sb[i]
            lev = inv_uu[self.br] + 2.0 * inv_uv[self.st] + inv_vv[self.st]
        elif self.use_U:
            inv_uu = 1.0 / d_u
            lev = inv_uu[self.br]
        elif self.use_V:
            inv_vv = 1.0 / d_v
            lev = inv_vv[self.st]
        else:
            lev = np.zeros_like(mu)
        muh = mu * lev
        cu = np.bincount(self.br, weights=muh, minlength=self.K) if self.use_U else None
        cv = np.bincount(self.st, weights=muh, minlength=self.n) if self.use_V else None
        a_u, a_v = self._solve(d_u, d_v, schur, c, cu, cv)
        za = np.zeros_like(mu)
        if a_u is not None:
            za += a_u[self.br]
        if a_v is not None:
            za += a_v[self.st]
        w = self.y - mu - 0.5 * muh + 0.5 * mu * za
        grad = [np.bincount(self.col, weights=w, minlength=self.T)]
        if self.p:
            grad.append(self.X.T @ w)
        if self.use_U:
            prec = math.exp(-tau_U)
            uu = float(m.u @ m.u)
            grad.append([0.5 * prec * uu - 0.5 * self.K
                         - 0.5 * (prec * float(a_u @ m.u) - prec * float(np.sum(inv_uu)))])
        if self.use_V:
            prec = math.exp(-tau_V)
            vv = float(m.v @ m.v)
            grad.append([0.5 * prec * vv - 0.5 * self.n
                         - 0.5 * (prec * float(a_v @ m.v) - prec * float(np.sum(inv_vv)))])
        return np.concatenate([np.atleast_1d(np.asarray(g, dtype=float)) for g in grad])

    def hessian(self, phi) -> np.ndarray:
        return finite_difference_jacobian(self.gradient, phi, h=1e-5)


@dataclass
class DtCoxFit:
    baseline: np.ndarray           # log hazard per period 1..T_max, -inf where no parameter
    beta: np.ndarray
    sigma2_U: float
    sigma2_V: float
    predicted_U: np.ndarray
    predicted_V: np.ndarray
    log_likelihood: float
    converged: bool
    covariate_names: tuple[str, ...] = ()
    sigma2_U_at_zero: bool = False
    sigma2_V_at_zero: bool = False
    separation: bool = False
    gradient_norm: float = 0.0
    iterations: int = 0
    form: str = "poisson"
    flags: list[str] = field(default_factory=list)

    @property
    def hazards(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.baseline)

    def summary(self) -> dict:
        return {
            "response": "Geom",
            "family": "discrete_time_frailty_ph",
            "form": self.form,
            "baseline": [None if not np.isfinite(b) else float(b) for b in self.baseline],
            "beta": [float(b) for b in self.beta],
            "covariates": list(self.covariate_names),
            "sigma2_U": float(self.sigma2_U),
            "sigma2_V": float(self.sigma2_V),
            "sigma2_U_at_zero": bool(self.sigma2_U_at_zero),
            "sigma2_V_at_zero": bool(self.sigma2_V_at_zero),
            "separation": bool(self.separation),
            "log_likelihood": float(self.log_likelihood),
            "converged": bool(self.converged),
            "gradient_norm": float(self.gradient_norm),
            "predicted_U": [float(u) for u in self.predicted_U],
            "flags": list(self.flags),
        }


def fit_dtcox_table(
    table: PersonPeriodTable,
    frailty_U: bool = True,
    frailty_V: bool = True,
    form: str = "poisson",
    settings: OptimizerSettings | None = None,
) -> DtCoxFit:
    if form == "binomial":
        if frailty_U or frailty_V:
            raise ValueError("binomial form is only supported without frailties")
        return _fit_binomial_fixed(table)
    if form != "poisson":
        raise ValueError(f"unknown form {form!r}")
    obj = LaplaceObjective(table, frailty_U, frailty_V)
    settings = settings or OptimizerSettings(
        max_iterations=200, gradient_tolerance=OUTER_TOLERANCE, parameter_lower_bounds=obj.lower_bounds()
    )
    phi, value, report = maximize(obj.value, obj.start(), settings, gradient=obj.gradient, hessian=obj.hessian)
    return _assemble(obj, phi, value, report)


def _assemble(obj: LaplaceObjective, phi, value, report) -> DtCoxFit:
    table = obj.table
    alpha, beta, tau_U, tau_V = obj.unpack(phi)
    m = obj.modes(phi, warm=True)
    baseline = np.full(table.period_count, -np.inf)
    baseline[obj.event_periods - 1] = alpha
    s2U = math.exp(tau_U) if obj.use_U else 0.0
    s2V = math.exp(tau_V) if obj.use_V else 0.0
    U_zero = obj.use_U and (s2U < ZERO_VARIANCE or tau_U <= LOG_VARIANCE_FLOOR)
    V_zero = obj.use_V and (s2V < ZERO_VARIANCE or tau_V <= LOG_VARIANCE_FLOOR)
    flags = []
    separation = bool(beta.size and np.linalg.norm(beta) > SEPARATION_BOUND)
    if separation:
        flags.append("complete separation suspected: |beta| > 50")
    empty = _eventless_levels(obj)
    if empty:
        # the optimizer stalls on a vanishing gradient long before |beta| reaches the bound
        separation = True
        flags.append("complete separation: no events in " + ", ".join(empty))
    if not report.converged:
        flags.append(f"outer optimizer: {report.message}")
    return DtCoxFit(
        baseline=baseline,
        beta=np.asarray(beta, dtype=float).copy(),
        sigma2_U=0.0 if U_zero else s2U,
        sigma2_V=0.0 if V_zero else s2V,
        predicted_U=m.u.copy() if m.u is not None else np.zeros(obj.K),
        predicted_V=m.v.copy() if m.v is not None else np.zeros(obj.n),
        log_likelihood=float(value),
        converged=bool(report.converged) and not separation,
        covariate_names=table.covariate_names,
        sigma2_U_at_zero=bool(U_zero),
        sigma2_V_at_zero=bool(V_zero),
        separation=separation,
        gradient_norm=float(report.gradient_norm),
        iterations=report.iterations,
        form="poisson",
        flags=flags,
    )


def _eventless_levels(obj: LaplaceObjective) -> list[str]:
    out = []
    names = obj.table.covariate_names
    for k in range(obj.p):
        x = obj.X[:, k]
        for level in (0.0, 1.0):
            rows = x == level
            if rows.any() and (~rows).any() and obj.y[rows].sum() == 0:
                out.append(f"{names[k]}={int(level)}")
    return out


def _fit_binomial_fixed(table: PersonPeriodTable) -> DtCoxFit:
    """Fixed-effects-only fit of the exact binomial/log-link likelihood."""
    obj = LaplaceObjective(table, False, False)
    T, p = obj.T, obj.p

    def value(phi):
        eta = obj.fixed_eta(phi[:T], phi[T:])
        if np.any(eta >= 0.0):
            return -np.inf
        return float(obj.y @ eta + (1 - obj.y) @ np.log1p(-np.exp(eta)))

    def grad(phi):
        eta = obj.fixed_eta(phi[:T], phi[T:])
        h = np.exp(eta)
        w = obj.y - (1 - obj.y) * h / (1 - h)
        out = [np.bincount(obj.col, weights=w, minlength=T)]
        if p:
            out.append(obj.X.T @ w)
        return np.concatenate(out)

    start = obj.start()
    # keep the start strictly inside the h < 1 domain
    start[:T] = np.minimum(start[:T], math.log(1 - 1e-6))
    settings = OptimizerSettings(max_iterations=200, gradient_tolerance=1e-9)
    phi, val, report = maximize(value, start, settings, gradient=grad)
    baseline = np.full(table.period_count, -np.inf)
    baseline[obj.event_periods - 1] = phi[:T]
    return DtCoxFit(baseline, phi[T:].copy(), 0.0, 0.0, np.zeros(obj.K), np.zeros(obj.n), float(val),
                    bool(report.converged), table.covariate_names, form="binomial",
                    gradient_norm=report.gradient_norm, iterations=report.iterations)


def fit_dtcox(
    cohort: Cohort,
    covariates: bool = True,
    frailty_U: bool = True,
    frailty_V: bool = True,
    form: str = "poisson",
) -> DtCoxFit:
    table = expand_risk_sets(cohort, covariates=covariates)
    if table.event.sum() == 0:
        raise DtCoxError("no Geom events in cohort; survival model cannot be fitted")
    return fit_dtcox_table(table, frailty_U, frailty_V, form)


def row_hazards(fit: DtCoxFit, table: PersonPeriodTable) -> np.ndarray:
    """Fitted hazard per person-period row (0 for periods without a baseline)."""
    u = fit.predicted_U if fit.predicted_U is not None else None
    v = fit.predicted_V if fit.predicted_V is not None else None
    with np.errstate(over="ignore"):
        return np.exp(_linear_predictor(table, fit.baseline, fit.beta, u, v))


@dataclass
class ExpectedEvents:
    periods: np.ndarray
    expected: np.ndarray
    observed: np.ndarray
    at_risk: np.ndarray
    empty: np.ndarray
    cell: tuple[str, str] | None = None

    def to_dict(self) -> dict:
        return {
            "cell": None if self.cell is None else {"gender": self.cell[0], "age_group": self.cell[1]},
            "t": [int(t) for t in self.periods],
            "expected": [float(x) for x in self.expected],
            "observed": [int(x) for x in self.observed],
            "at_risk": [int(x) for x in self.at_risk],
            "empty_risk_set": [bool(x) for x in self.empty],
        }


def expected_events(fit: DtCoxFit, table: PersonPeriodTable, cell: tuple[str, str] | None = None) -> ExpectedEvents:
    """Expected events per period: sum of fitted hazards over the risk set.

    ``cell`` restricts to one (gender, age_group) combination.
    """
    h = row_hazards(fit, table)
    keep = np.ones(table.n_rows, dtype=bool)
    if cell is not None:
        g = np.array(table.gender)[table.student]
        a = np.array(table.age_group)[table.student]
        keep = (g == cell[0]) & (a == cell[1])
    T = table.period_count
    t = table.period[keep]
    hk = h[keep]
    expected = np.bincount(t, weights=hk, minlength=T + 1)[1:]
    observed = np.bincount(t, weights=table.event[keep], minlength=T + 1)[1:].astype(int)
    at_risk = np.bincount(t, minlength=T + 1)[1:]
    # a period with one common hazard gets |R_t| * h without summation error
    for k in range(1, T + 1):
        hp = hk[t == k]
        if hp.size and np.all(hp == hp[0]):
            expected[k - 1] = hp.size * hp[0]
    return ExpectedEvents(np.arange(1, T + 1), expected, observed, at_risk, at_risk == 0, cell)


def life_table_hazards(table: PersonPeriodTable) -> np.ndarray:
    R = table.risk_set_sizes
    d = table.event_counts
    return np.where(R > 0, d / np.maximum(R, 1), 0.0)
