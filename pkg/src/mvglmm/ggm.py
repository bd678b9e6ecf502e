"""Gaussian graphical models over the predicted individual components.

Covariance selection by iterative proportional scaling (IPS) for any
undirected graph, BIC scoring, and stepwise/exhaustive search for the
BIC-minimising graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .core import RESPONSES
from .graphs import UndirectedGraph
from .numerics import cholesky_factor

MAX_SWEEPS = 10_000
DEFAULT_TOLERANCE = 1e-10
EXHAUSTIVE_MAX_VERTICES = 5


class GgmError(ValueError):
    pass


class IpsConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PredictedEffectsMatrix:
    values: np.ndarray
    labels: tuple[str, ...] = RESPONSES
    stratum: str | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.labels):
            raise GgmError(f"expected an n x {len(self.labels)} matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise GgmError("predicted effects contain non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class SampleCovariance:
    S: np.ndarray
    n: int
    rank_deficient: bool


def sample_covariance(V: PredictedEffectsMatrix | np.ndarray, weights=None) -> SampleCovariance:
    """ML covariance (divisor n, or total weight) of column-centred values."""
    X = V.values if isinstance(V, PredictedEffectsMatrix) else np.asarray(V, dtype=float)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    total = float(w.sum())
    mean = w @ X / total
    Xc = X - mean
    S = (Xc * w[:, None]).T @ Xc / total
    S = 0.5 * (S + S.T)
    p = S.shape[0]
    d = np.diag(S)
    deficient = X.shape[0] <= p or bool(np.any(d <= 0))
    if not deficient:
        # judged on the correlation scale: columns may differ by many orders of magnitude
        eig = np.linalg.eigvalsh(S / np.sqrt(np.outer(d, d)))
        deficient = bool(eig[0] <= 1e-12 * eig[-1])
    return SampleCovariance(S, int(round(total)), bool(deficient))


@dataclass
class GgmFit:
    graph: UndirectedGraph
    sigma_hat: np.ndarray
    precision: np.ndarray
    log_likelihood: float
    bic: float
    n: int
    sweeps: int = 0
    partial_correlations: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.partial_correlations:
            self.partial_correlations = partial_correlations_from_precision(self.precision, self.graph)

    def to_dict(self, stratum: str | None = None) -> dict:
        return {
            "vertices": list(self.graph.vertices),
            "edges": [{"a": a, "b": b, "partial_correlation": float(self.partial_correlations[frozenset((a, b))])}
                      for a, b in self.graph.sorted_edges()],
            "bic": float(self.bic),
            "log_likelihood": float(self.log_likelihood),
            "n": int(self.n),
            "stratum": stratum,
        }


def partial_correlations_from_precision(K: np.ndarray, graph: UndirectedGraph) -> dict:
    pos = {v: k for k, v in enumerate(graph.vertices)}
    out = {}
    for a, b in graph.sorted_edges():
        i, j = pos[a], pos[b]
        out[frozenset((a, b))] = float(-K[i, j] / math.sqrt(K[i, i] * K[j, j]))
    return out


def partial_correlation_table(fit: GgmFit) -> list[tuple[str, str, float]]:
    return [(a, b, fit.partial_correlations[frozenset((a, b))]) for a, b in fit.graph.sorted_edges()]


def gaussian_log_likelihood(sigma: np.ndarray, S: np.ndarray, n: int) -> float:
    p = S.shape[0]
    L = cholesky_factor(sigma)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    K = np.linalg.inv(sigma)
    return -0.5 * n * (logdet + float(np.trace(K @ S)) + p * math.log(2 * math.pi))


def ips_fit(S: np.ndarray, graph: UndirectedGraph, tolerance: float = DEFAULT_TOLERANCE, n: int = 1,
            max_sweeps: int = MAX_SWEEPS) -> GgmFit:
    """ML covariance under the conditional-independence constraints of ``graph``.

    Works on the precision matrix: each clique update
    ``K_CC += inv(S_CC) - inv(Sigma_CC)`` makes the fitted clique marginal
    equal to the sample one while leaving entries outside the clique
    untouched, so non-edges stay exactly zero. Convergence is judged on the
    correlation scale, which keeps the fit equivariant under rescaling.
    """
    S = np.asarray(S, dtype=float)
    p = S.shape[0]
    if len(graph.vertices) != p:
        raise GgmError("graph and covariance dimensions differ")
    if tolerance <= 0:
        raise GgmError("tolerance must be positive")
    try:
        cholesky_factor(S)
    except np.linalg.LinAlgError as exc:
        raise GgmError(f"sample covariance is not positive definite: {exc}") from None
    d = np.sqrt(np.diag(S))
    scale = np.outer(d, d)
    pos = {v: k for k, v in enumerate(graph.vertices)}
    cliques = [np.array([pos[v] for v in c]) for c in graph.cliques()]

    if len(cliques) == 1 and cliques[0].size == p:
        sigma = S.copy()
        K = np.linalg.inv(S)
        sweeps = 1
    else:
        K = np.diag(1.0 / np.diag(S))
        sigma = np.diag(np.diag(S)).astype(float)
        S_inv = [np.linalg.inv(S[np.ix_(c, c)]) for c in cliques]
        for sweeps in range(1, max_sweeps + 1):
            for c, Sc_inv in zip(cliques, S_inv):
                idx = np.ix_(c, c)
                K[idx] += Sc_inv - np.linalg.inv(sigma[idx])
                K = 0.5 * (K + K.T)
                sigma = np.linalg.inv(K)
                sigma = 0.5 * (sigma + sigma.T)
            err = max(float(np.max(np.abs((sigma - S)[np.ix_(c, c)] / scale[np.ix_(c, c)]))) for c in cliques)
            if err <= tolerance:
                break
        else:
            raise IpsConvergenceError(f"IPS did not converge within {max_sweeps} sweeps")
        for i, j in combinations(range(p), 2):
            if not graph.has_edge(graph.vertices[i], graph.vertices[j]):
                K[i, j] = K[j, i] = 0.0
    ll = gaussian_log_likelihood(sigma, S, n)
    return GgmFit(graph, sigma, K, ll, bic_value(ll, p, len(graph.edges), n), n, sweeps)


def parameter_count(p: int, n_edges: int) -> int:
    return 2 * p + n_edges


def bic_value(log_likelihood: float, p: int, n_edges: int, n: int) -> float:
    return -2.0 * log_likelihood + parameter_count(p, n_edges) * math.log(n)


def bic(graph: UndirectedGraph, S: np.ndarray, n: int, tolerance: float = DEFAULT_TOLERANCE) -> float:
    return ips_fit(S, graph, tolerance, n).bic


class _Scorer:
    def __init__(self, S: np.ndarray, labels, n: int, tolerance: float):
        self.S, self.labels, self.n, self.tol = S, tuple(labels), n, tolerance
        self.cache: dict[frozenset, GgmFit] = {}

    def fit(self, edges: frozenset) -> GgmFit:
        if edges not in self.cache:
            g = UndirectedGraph(self.labels, [(self.labels[i], self.labels[j]) for i, j in edges])
            self.cache[edges] = ips_fit(self.S, g, self.tol, self.n)
        return self.cache[edges]


def _stepwise(scorer: _Scorer) -> GgmFit:
    p = len(scorer.labels)
    pairs = list(combinations(range(p), 2))
    current: frozenset = frozenset()
    best = scorer.fit(current)
    while True:
        candidates = []
        for pair in pairs:  # lexicographic order gives the tie-break
            nxt = current - {pair} if pair in current else current | {pair}
            candidates.append((scorer.fit(nxt).bic, pair, nxt))
        bic_min = min(c[0] for c in candidates)
        if not bic_min < best.bic:
            return best
        _, _, chosen = next(c for c in candidates if c[0] == bic_min)
        current, best = chosen, scorer.fit(chosen)


def _exhaustive(scorer: _Scorer) -> GgmFit:
    p = len(scorer.labels)
    pairs = list(combinations(range(p), 2))
    best, best_key = None, None
    for mask in range(1 << len(pairs)):
        edges = frozenset(pr for k, pr in enumerate(pairs) if mask >> k & 1)
        fit = scorer.fit(edges)
        key = (fit.bic, sorted(edges))
        if best is None or key < best_key:
            best, best_key = fit, key
    return best


def select_graph(V: PredictedEffectsMatrix | np.ndarray, method: str = "stepwise",
                 tolerance: float = DEFAULT_TOLERANCE, labels=None) -> GgmFit:
    """BIC-minimising graph: greedy add/remove from the empty graph, or full enumeration."""
    if isinstance(V, PredictedEffectsMatrix):
        values, labels = V.values, V.labels
    else:
        values = np.asarray(V, dtype=float)
        labels = tuple(labels) if labels is not None else tuple(f"X{k + 1}" for k in range(values.shape[1]))
    cov = sample_covariance(values)
    if cov.rank_deficient:
        raise GgmError("sample covariance is singular; graph selection needs n > p and non-degenerate columns")
    scorer = _Scorer(cov.S, labels, cov.n, tolerance)
    if method == "stepwise":
        return _stepwise(scorer)
    if method == "exhaustive":
        if len(labels) > EXHAUSTIVE_MAX_VERTICES:
            raise GgmError(
                f"exhaustive search is limited to <= {EXHAUSTIVE_MAX_VERTICES} vertices "
                f"(got {len(labels)}); use method='stepwise'"
            )
        return _exhaustive(scorer)
    raise GgmError(f"unknown selection method {method!r}")
