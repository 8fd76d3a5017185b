"""Cross-validation: literal LOO / k-fold, the approximate LOO formula, and the
instability detector that delimits where the approximation can be trusted.

The approximate formula evaluates, from the full-data fit alone,

    eps_LOO ~ 1/(2M) sum_mu Theta_mu (y_mu - a_mu^T x_hat)^2
    Theta_mu = (1 - a_mu,S^T G^{-1} a_mu,S)^{-2},
    G = A_S^T A_S + diag(J''(x_hat_S))

with S the active set of x_hat.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

from .datagen import EnsembleParams, rng
from .penalty import NumericalError, ParameterError, PenaltySpec, _curvature
from .solver import (DEFAULT_DELTA, DEFAULT_MAX_SWEEPS, Estimate, RegressionProblem,
                     SolutionPath, coordinate_descent, input_mse, residual)

COND_LIMIT = 1e12


class Method(Enum):
    APPROX = "approx"
    LITERAL_LOO = "literal_loo"
    KFOLD = "kfold"


@dataclass
class CvPointResult:
    lam: float
    epsilon_cv: float
    per_sample_terms: np.ndarray
    error_bar: float
    method: Method
    hessian_ok: bool = True
    converged: bool = True
    K: int | None = None

    @classmethod
    def from_terms(cls, lam, terms, method, **kw) -> "CvPointResult":
        terms = np.asarray(terms, dtype=float)
        M = terms.size
        with np.errstate(invalid="ignore", over="ignore"):
            eps = float(np.mean(terms))
            err = float(np.std(terms, ddof=1) / math.sqrt(M)) if M > 1 else 0.0
        return cls(float(lam), eps, terms, err, method, **kw)


@dataclass
class CvCurve:
    points: list[CvPointResult]
    stable_mask: np.ndarray
    lambda_c: float | None = None
    a: float | None = None

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p.epsilon_cv for p in self.points])

    @property
    def error_bars(self) -> np.ndarray:
        return np.array([p.error_bar for p in self.points])


# ---------------------------------------------------------------------------
# approximate LOO
# ---------------------------------------------------------------------------

def penalty_hessian_diag(x_active, spec: PenaltySpec) -> np.ndarray:
    k = int(spec.kind)
    return np.array([_curvature(float(v), k, spec.lam, spec.a) for v in x_active])


def loo_factors(problem: RegressionProblem, estimate: Estimate, spec: PenaltySpec):
    """(Theta, hessian_ok) for every sample."""
    x = estimate.x_hat
    S = np.flatnonzero(x != 0.0)
    M = problem.M
    if S.size == 0:
        return np.ones(M), True
    As = problem.A[:, S]
    G = As.T @ As + np.diag(penalty_hessian_diag(x[S], spec))
    ok = True
    try:
        scipy.linalg.cho_factor(G, check_finite=False)
    except scipy.linalg.LinAlgError:
        ok = False
    try:
        if np.linalg.cond(G) > COND_LIMIT:
            ok = False
        with warnings.catch_warnings():
            # singularity is reported through the flag
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(G, check_finite=False)
        Z = scipy.linalg.lu_solve(lu, As.T, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError):
        return np.full(M, np.nan), False
    lev = np.einsum("mi,im->m", As, Z)
    denom = 1.0 - lev
    if np.any(denom <= 0.0) or not np.all(np.isfinite(denom)):
        ok = False
    with np.errstate(divide="ignore"):
        theta = 1.0 / denom ** 2
    return theta, ok


def approx_loo(problem: RegressionProblem, estimate: Estimate, spec: PenaltySpec) -> CvPointResult:
    """Approximate LOO CV error from the full-data fit."""
    theta, ok = loo_factors(problem, estimate, spec)
    r = residual(problem, estimate.x_hat)
    with np.errstate(invalid="ignore", over="ignore"):
        terms = 0.5 * theta * r * r
    return CvPointResult.from_terms(spec.lam, terms, Method.APPROX, hessian_ok=ok,
                                    converged=estimate.converged, K=estimate.K)


def approx_cv_path(problem: RegressionProblem, path: SolutionPath) -> list[CvPointResult]:
    return [approx_loo(problem, est, path.spec_at(k)) for k, est in enumerate(path.estimates)]


# ---------------------------------------------------------------------------
# literal CV
# ---------------------------------------------------------------------------

def literal_loo(problem: RegressionProblem, spec: PenaltySpec, warm_start=None,
                delta: float = DEFAULT_DELTA, max_sweeps: int = DEFAULT_MAX_SWEEPS,
                seed: int = 0) -> CvPointResult:
    """Refit without each sample in turn, warm-started from ``warm_start``."""
    M = problem.M
    if M < 2:
        raise ParameterError("leave-one-out needs M >= 2")
    return _held_out(problem, spec, [[mu] for mu in range(M)], warm_start, delta, max_sweeps,
                     seed, Method.LITERAL_LOO)


def kfold_partition(M: int, k: int, seed: int) -> list[np.ndarray]:
    if not 2 <= k <= M:
        raise ParameterError(f"k must satisfy 2 <= k <= M={M}, got {k}")
    perm = rng(seed).permutation(M)
    return [np.sort(f) for f in np.array_split(perm, k)]


def kfold_cv(problem: RegressionProblem, spec: PenaltySpec, k: int = 10, seed: int = 0,
             warm_start=None, delta: float = DEFAULT_DELTA,
             max_sweeps: int = DEFAULT_MAX_SWEEPS, cd_seed: int = 0) -> CvPointResult:
    """k-fold CV over a seeded random near-equal partition of the samples."""
    folds = kfold_partition(problem.M, k, seed)
    return _held_out(problem, spec, folds, warm_start, delta, max_sweeps, cd_seed, Method.KFOLD)


def _held_out(problem, spec, folds, warm_start, delta, max_sweeps, seed, method):
    terms = np.empty(problem.M)
    conv = True
    x_init = np.zeros(problem.N) if warm_start is None else np.asarray(warm_start, dtype=float)
    if isinstance(warm_start, Estimate):
        x_init = warm_start.x_hat
    for fold in folds:
        sub = problem.drop_rows(fold)
        est = coordinate_descent(sub, spec, x_init, delta, max_sweeps, seed)
        conv &= est.converged
        r = problem.y[fold] - problem.A[fold] @ est.x_hat
        terms[fold] = 0.5 * r * r
    return CvPointResult.from_terms(spec.lam, terms, method, converged=conv)


# ---------------------------------------------------------------------------
# instability detection
# ---------------------------------------------------------------------------

def detect_instability(points: list[CvPointResult], k_detect: float = 3.0, window: int = 2,
                       a: float | None = None) -> CvCurve:
    """Flag irregular points and cut the curve at the largest irregular lambda.

    ``points`` are ordered by decreasing lambda.  A point is irregular when
    its Hessian was flagged, or when its CV error differs from one of the
    ``window`` preceding (larger-lambda) points by more than ``k_detect`` times
    that neighbour's error bar.  Everything at or below the largest irregular
    lambda is marked unstable.
    """
    lams = np.array([p.lam for p in points])
    if lams.size > 1 and not np.all(np.diff(lams) < 0):
        raise ParameterError("points must be ordered by decreasing lambda")
    irregular = np.zeros(len(points), dtype=bool)
    for k, p in enumerate(points):
        if not p.hessian_ok or not math.isfinite(p.epsilon_cv):
            irregular[k] = True
            continue
        for j in range(max(0, k - window), k):
            q = points[j]
            if not math.isfinite(q.epsilon_cv):
                continue
            if abs(p.epsilon_cv - q.epsilon_cv) > k_detect * q.error_bar:
                irregular[k] = True
                break
    stable = np.ones(len(points), dtype=bool)
    lambda_c = None
    if irregular.any():
        first = int(np.argmax(irregular))
        lambda_c = float(lams[first])
        stable[first:] = False
    return CvCurve(list(points), stable, lambda_c, a)


def normalized_mse(approx: float, literal: float) -> float:
    if literal == 0:
        raise ParameterError("literal CV error is zero")
    return ((approx - literal) / literal) ** 2


def sturges_mode(values, n_samples: int | None = None):
    """Centre of the fullest histogram bin with ceil(1 + log2 n) bins, plus the bins."""
    v = np.asarray([t for t in values if t is not None and math.isfinite(t)], dtype=float)
    if v.size == 0:
        return math.nan, None, None
    n_bin = int(math.ceil(1 + math.log2(n_samples or v.size)))
    counts, edges = np.histogram(v, bins=n_bin)
    j = int(np.argmax(counts))
    return 0.5 * (edges[j] + edges[j + 1]), counts, edges


# ---------------------------------------------------------------------------
# model selection
# ---------------------------------------------------------------------------

@dataclass
class Selection:
    a: float
    lam: float
    K: int
    cv: float
    error_bar: float
    minimum: dict = field(default_factory=dict)


def one_std_error_select(curves: list[CvCurve], paths: list[SolutionPath]) -> Selection:
    """Sparsest stable model whose CV error is within one error bar of the minimum."""
    cand = []
    for curve, path in zip(curves, paths):
        for k, (p, ok) in enumerate(zip(curve.points, curve.stable_mask)):
            if ok and math.isfinite(p.epsilon_cv):
                cand.append((p.epsilon_cv, p.error_bar, path.estimates[k].K, p.lam, path.spec_a))
    if not cand:
        raise NumericalError("no stable points to select from")
    best = min(cand, key=lambda t: t[0])
    limit = best[0] + best[1]
    inside = [t for t in cand if t[0] <= limit]
    # sparsest first, then larger lambda, then larger a
    pick = min(inside, key=lambda t: (t[2], -t[3], -t[4]))
    return Selection(a=pick[4], lam=pick[3], K=pick[2], cv=pick[0], error_bar=pick[1],
                     minimum={"a": best[4], "lam": best[3], "K": best[2], "cv": best[0],
                              "error_bar": best[1]})


# ---------------------------------------------------------------------------
# generalisation error
# ---------------------------------------------------------------------------

@dataclass
class GeneralizationCheck:
    mc: float
    mc_se: float
    predicted: float


def generalization_gap_check(estimate, x0, ensemble: EnsembleParams, n_fresh: int = 10**6,
                             seed: int = 0, chunk: int = 20_000) -> GeneralizationCheck:
    """Monte-Carlo generalisation error on fresh rows vs eps_x/alpha + sigma_D2/2."""
    x = estimate.x_hat if isinstance(estimate, Estimate) else np.asarray(estimate, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    N = x.size
    M = ensemble.rows_for(N)
    g = rng(seed)
    s1 = s2 = 0.0
    done = 0
    while done < n_fresh:
        n = min(chunk, n_fresh - done)
        a_new = g.standard_normal((n, N)) / math.sqrt(M)
        y_new = a_new @ x0 + g.standard_normal(n) * math.sqrt(ensemble.sigma_D2)
        t = 0.5 * (y_new - a_new @ x) ** 2
        s1 += float(t.sum())
        s2 += float((t * t).sum())
        done += n
    mean = s1 / n_fresh
    var = max(s2 / n_fresh - mean * mean, 0.0) * n_fresh / max(n_fresh - 1, 1)
    # alpha is M/N for the rows actually drawn
    predicted = input_mse(x, x0) * N / M + 0.5 * ensemble.sigma_D2
    return GeneralizationCheck(mean, math.sqrt(var / n_fresh), predicted)
