"""Dense linear algebra, safeguarded Newton maximization, finite differences, seeded RNG."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

LOG_VARIANCE_FLOOR = -30.0


class DefinitenessError(np.linalg.LinAlgError):
    def __init__(self, message: str, pivot: int | None = None):
        self.pivot = pivot
        super().__init__(message)


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class OptimizerSettings:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-6
    step_halving_limit: int = 40
    parameter_lower_bounds: Sequence[float | None] | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be > 0")
        if self.step_halving_limit < 1:
            raise ValueError("step_halving_limit must be >= 1")


@dataclass
class ConvergenceReport:
    converged: bool
    iterations: int
    gradient_norm: float
    at_bound: tuple[bool, ...] = ()
    message: str = ""

    @property
    def converged_at_bound(self) -> bool:
        return any(self.at_bound)


def _cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; reports the first failing pivot (0-based)."""
    L, info = linalg.lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise DefinitenessError(f"matrix not positive definite at pivot {info - 1}", pivot=info - 1)
    if info < 0:
        raise ValueError("invalid argument passed to dpotrf")
    return L


def cholesky_factor(A: np.ndarray) -> np.ndarray:
    """Cholesky with a single jitter retry for marginal definiteness failures."""
    A = np.asarray(A, dtype=float)
    scale = max(np.max(np.abs(A)), np.finfo(float).tiny)
    if np.max(np.abs(A - A.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    try:
        return _cholesky(A)
    except DefinitenessError:
        p = A.shape[0]
        eig_min = np.linalg.eigvalsh(A)[0]
        if eig_min < -1e-8 * scale:
            raise
        return _cholesky(A + 1e-8 * np.trace(A) / p * np.eye(p))


def cholesky_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    L = cholesky_factor(A)
    return linalg.cho_solve((L, True), np.asarray(b, dtype=float))


def log_det_spd(A: np.ndarray) -> float:
    L = cholesky_factor(A)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        fp, fm = f(x + e), f(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite evaluation along coordinate {k}")
        g[k] = (fp - fm) / (2 * h)
    return g


def finite_difference_jacobian(grad: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector function, symmetrized (used as a Hessian)."""
    x = np.asarray(x, dtype=float)
    J = np.empty((x.size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        J[:, k] = (np.asarray(grad(x + e)) - np.asarray(grad(x - e))) / (2 * h)
    return 0.5 * (J + J.T)


def maximize(
    objective: Callable[[np.ndarray], float],
    start,
    settings: OptimizerSettings = OptimizerSettings(),
    gradient: Callable[[np.ndarray], np.ndarray] | None = None,
    hessian: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, float, ConvergenceReport]:
    """Newton ascent with step halving and simple lower bounds.

    Missing derivatives are filled in by central differences. Coordinates
    pinned at a lower bound with a gradient pushing further down are held
    fixed and excluded from the convergence test.
    """
    x = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    p = x.size
    lower = np.full(p, -np.inf)
    if settings.parameter_lower_bounds is not None:
        for k, b in enumerate(settings.parameter_lower_bounds):
            if b is not None:
                lower[k] = b
    x = np.maximum(x, lower)

    grad = gradient or (lambda z: finite_difference_gradient(objective, z))
    hess = hessian or (lambda z: finite_difference_jacobian(grad, z))

    fx = float(objective(x))
    if not np.isfinite(fx):
        raise NonFiniteError("objective is not finite at the start point")

    active = np.zeros(p, dtype=bool)
    gnorm = np.inf
    for it in range(1, settings.max_iterations + 1):
        g = np.asarray(grad(x), dtype=float)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient at iteration {it}")
        active = (x <= lower) & (g <= 0)
        free = ~active
        gnorm = float(np.max(np.abs(g[free]))) if free.any() else 0.0
        if gnorm <= settings.gradient_tolerance:
            return x, fx, ConvergenceReport(True, it - 1, gnorm, tuple(active), "gradient tolerance met")

        H = np.asarray(hess(x), dtype=float)[np.ix_(free, free)]
        gf = g[free]
        direction = np.zeros(p)
        # Levenberg shift until the free-block Hessian is negative definite
        shift = 0.0
        for _ in range(60):
            try:
                L = _cholesky(-H + shift * np.eye(H.shape[0]))
                direction[free] = linalg.cho_solve((L, True), gf)
                break
            except DefinitenessError:
                shift = max(2 * shift, 1e-8 * max(1.0, np.max(np.abs(np.diag(H)))))
        else:
            direction[free] = gf

        step = 1.0
        accepted = False
        for _ in range(settings.step_halving_limit):
            trial = np.maximum(x + step * direction, lower)
            ft = objective(trial)
            if np.isfinite(ft) and ft >= fx:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no ascent possible along the Newton direction: stationary to working precision
            return x, fx, ConvergenceReport(
                gnorm <= 10 * settings.gradient_tolerance, it, gnorm, tuple(active), "step halving exhausted"
            )
        moved = np.max(np.abs(trial - x))
        x, fx = trial, float(ft)
        if moved == 0.0:
            return x, fx, ConvergenceReport(False, it, gnorm, tuple(active), "stalled")

    g = np.asarray(grad(x), dtype=float)
    active = (x <= lower) & (g <= 0)
    gnorm = float(np.max(np.abs(g[~active]))) if (~active).any() else 0.0
    ok = gnorm <= settings.gradient_tolerance
    return x, fx, ConvergenceReport(ok, settings.max_iterations, gnorm, tuple(active), "iteration cap")


class SeededRng:
    """Thin deterministic wrapper around ``numpy.random.Generator`` (PCG64)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed & (2**64 - 1)))

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def standard_normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def multivariate_normal(self, cov: np.ndarray, size: int) -> np.ndarray:
        """Rows ~ N(0, cov) drawn as Z @ L.T with L the Cholesky factor."""
        cov = np.asarray(cov, dtype=float)
        L = cholesky_factor(cov)
        z = self.generator.standard_normal((size, cov.shape[0]))
        return z @ L.T

    def choice(self, k: int, size: int, p=None) -> np.ndarray:
        return self.generator.choice(k, size=size, p=p)

    def spawn(self, index: int) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, index))


def seeded_rng(seed: int) -> SeededRng:
    return SeededRng(seed)


def derive_seed(base_seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{int(base_seed)}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
