"""Synthetic Bernoulli-Gauss instances, standardisation, support-recovery metrics.

Random draws use numpy's counter-based Philox bit generator so that a seed
names a reproducible stream.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .penalty import ParameterError
from .solver import Estimate, RegressionProblem


@dataclass(frozen=True)
class EnsembleParams:
    alpha: float
    rho0: float
    sigma_D2: float
    sigma_x2: float | None = None

    def __post_init__(self):
        if self.sigma_x2 is None:
            # unit signal power per component
            object.__setattr__(self, "sigma_x2", 1.0 / self.rho0 if self.rho0 > 0 else 1.0)
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        if not 0 < self.rho0 <= 1:
            raise ParameterError("rho0 must lie in (0, 1]")
        if not self.sigma_x2 > 0:
            raise ParameterError("sigma_x2 must be positive")
        if not self.sigma_D2 >= 0:
            raise ParameterError("sigma_D2 must be >= 0")

    @property
    def signal_power(self) -> float:
        return self.rho0 * self.sigma_x2

    def rows_for(self, N: int) -> int:
        """M = round(alpha N), halves rounded away from zero."""
        return int(math.floor(self.alpha * N + 0.5))


@dataclass
class SyntheticInstance:
    problem: RegressionProblem
    ensemble: EnsembleParams
    seed: int


def rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def gen_instance(N: int, ensemble: EnsembleParams, seed: int) -> SyntheticInstance:
    """Draw A ~ N(0, 1/M) i.i.d., Bernoulli-Gauss x0 and y = A x0 + noise."""
    M = ensemble.rows_for(N)
    if N < 1 or M < 1:
        raise ParameterError(f"need N >= 1 and round(alpha N) >= 1, got N={N}, M={M}")
    g = rng(seed)
    A = g.standard_normal((M, N)) / math.sqrt(M)
    support = g.random(N) < ensemble.rho0
    x0 = np.where(support, g.standard_normal(N) * math.sqrt(ensemble.sigma_x2), 0.0)
    noise = g.standard_normal(M) * math.sqrt(ensemble.sigma_D2)
    y = A @ x0 + noise
    return SyntheticInstance(RegressionProblem(y, A, x0), ensemble, seed)


@dataclass
class StandardizeTransform:
    """Affine map between standardised and original coordinates."""

    y_mean: float
    col_mean: np.ndarray
    col_norm: np.ndarray
    kept: np.ndarray                      # original indices of kept columns
    dropped: list[int] = field(default_factory=list)
    n_original: int = 0

    def coef_to_original(self, x_std):
        """Returns (intercept, coefficients on the original columns)."""
        beta = np.zeros(self.n_original)
        beta[self.kept] = np.asarray(x_std) / self.col_norm
        intercept = self.y_mean - float(self.col_mean @ beta[self.kept])
        return intercept, beta

    def to_dict(self) -> dict:
        return {
            "y_mean": self.y_mean,
            "col_mean": self.col_mean.tolist(),
            "col_norm": self.col_norm.tolist(),
            "kept": self.kept.tolist(),
            "dropped": list(self.dropped),
            "n_original": self.n_original,
        }


def standardize(problem: RegressionProblem, tol: float = 1e-12):
    """Centre y and every column of A, then scale columns to unit l2 norm.

    Columns that are constant (zero norm after centring) are dropped with a
    warning.  Returns ``(standardised_problem, transform)``.
    """
    A, y = problem.A, problem.y
    y_mean = float(y.mean())
    col_mean = A.mean(axis=0)
    Ac = A - col_mean
    norms = np.sqrt(np.einsum("ij,ij->j", Ac, Ac))
    scale = max(1.0, float(np.max(np.abs(A)))) * math.sqrt(A.shape[0])
    kept = np.flatnonzero(norms > tol * scale)
    dropped = [int(j) for j in np.flatnonzero(norms <= tol * scale)]
    if dropped:
        warnings.warn(f"dropping {len(dropped)} constant column(s): {dropped[:10]}")
    if kept.size == 0:
        raise ParameterError("every column is constant")
    As = Ac[:, kept] / norms[kept]
    x0 = None
    if problem.x0 is not None:
        x0 = problem.x0[kept] * norms[kept]
    out = RegressionProblem(y - y_mean, As, x0)
    tr = StandardizeTransform(y_mean, col_mean[kept], norms[kept], kept, dropped, A.shape[1])
    return out, tr


def empirical_tp_fp(estimate, x0):
    """(TP, FP) support-recovery rates; TP is None when x0 has no nonzeros."""
    x = estimate.x_hat if isinstance(estimate, Estimate) else np.asarray(estimate)
    x0 = np.asarray(x0)
    est = x != 0
    true = x0 != 0
    n_true = int(true.sum())
    n_false = true.size - n_true
    tp = float(np.sum(est & true)) / n_true if n_true else None
    fp = float(np.sum(est & ~true)) / n_false if n_false else None
    return tp, fp


def roc_r(tp: float, fp: float) -> float:
    """Squared distance of (TP, FP) from the ideal ROC corner (1, 0)."""
    if not (0 <= tp <= 1 and 0 <= fp <= 1):
        raise ParameterError("TP and FP must lie in [0, 1]")
    return (tp - 1.0) ** 2 + fp ** 2
