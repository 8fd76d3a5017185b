"""Coordinate descent for penalised least squares and lambda-annealed paths."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .penalty import Kind, ParameterError, PenaltySpec, _penalty, _prox

DEFAULT_DELTA = 1e-10
DEFAULT_MAX_SWEEPS = 100_000


class RegressionProblem:
    """Data set D_M = {y, A} with an optional ground-truth signal x0."""

    def __init__(self, y, A, x0=None):
        A = np.asarray(A, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if A.ndim != 2:
            raise ParameterError("A must be two-dimensional")
        M, N = A.shape
        if M < 1 or N < 1:
            raise ParameterError("A must have at least one row and one column")
        if y.shape[0] != M:
            raise ParameterError(f"y has length {y.shape[0]} but A has {M} rows")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
            raise ParameterError("A and y must be finite")
        if x0 is not None:
            x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
            if x0.shape[0] != N:
                raise ParameterError(f"x0 has length {x0.shape[0]} but A has {N} columns")
        # Fortran order: the CD kernel walks columns
        self.A = np.asfortranarray(A)
        self.y = y
        self.x0 = x0
        self.column_sq_norms = np.einsum("ij,ij->j", self.A, self.A)

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]

    def drop_rows(self, rows) -> "RegressionProblem":
        keep = np.ones(self.M, dtype=bool)
        keep[np.asarray(rows, dtype=np.intp)] = False
        return RegressionProblem(self.y[keep], self.A[keep], self.x0)

    def objective(self, x, spec: PenaltySpec) -> float:
        r = self.y - self.A @ x
        return 0.5 * float(r @ r) + penalty_sum(x, spec)


@dataclass
class Estimate:
    x_hat: np.ndarray
    iterations: int
    converged: bool
    max_coord_delta: float
    lam: float = math.nan
    seed: int | None = None
    skipped: list[int] = field(default_factory=list)

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.x_hat != 0.0)

    @property
    def K(self) -> int:
        return int(np.count_nonzero(self.x_hat))


@dataclass
class SolutionPath:
    lambdas: np.ndarray
    estimates: list[Estimate]
    spec_a: float
    kind: Kind
    seed: int | None = None
    # index of the estimate each point was initialised from (-1: zero vector)
    warm_start_from: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.estimates)

    def spec_at(self, k: int) -> PenaltySpec:
        return PenaltySpec(self.kind, float(self.lambdas[k]), self.spec_a)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([e.x_hat for e in self.estimates])


def penalty_sum(x, spec: PenaltySpec) -> float:
    k = int(spec.kind)
    return float(sum(_penalty(float(v), k, spec.lam, spec.a) for v in x))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _proposal(A, r, x, c, i, kind, lam, a):
    """Minimiser over x_i with the rest held fixed; touches nothing."""
    ci = c[i]
    if ci <= 0.0:
        return 0.0
    g = 0.0
    for mu in range(A.shape[0]):
        g += A[mu, i] * r[mu]
    return _prox(g / ci + x[i], 1.0 / ci, kind, lam, a)


@njit(cache=True)
def _update(A, r, x, c, i, kind, lam, a):
    """Exact minimisation over x_i; updates r in place and returns the new x_i."""
    new = _proposal(A, r, x, c, i, kind, lam, a)
    d = new - x[i]
    if d != 0.0:
        for mu in range(A.shape[0]):
            r[mu] -= A[mu, i] * d
    return new


@njit(cache=True)
def _max_proposal_step(A, r, x, c, kind, lam, a):
    m = 0.0
    for i in range(A.shape[1]):
        d = abs(_proposal(A, r, x, c, i, kind, lam, a) - x[i])
        if d > m:
            m = d
    return m


@njit(cache=True)
def _full_objective(A, y, x, kind, lam, a):
    r = y - A @ x
    f = 0.5 * (r @ r)
    for j in range(x.shape[0]):
        f += _penalty(x[j], kind, lam, a)
    return f


@njit(cache=True)
def _cd_kernel(A, y, c, x, r, kind, lam, a, delta, max_sweeps, seed, trace, trace_out, cycle):
    N = A.shape[1]
    np.random.seed(seed)
    sweeps = 0
    maxd = np.inf
    ntr = 0
    full = True
    idx = np.arange(N)
    n_idx = N
    while sweeps < max_sweeps:
        if full:
            perm = np.random.permutation(N)
        else:
            perm = idx[:n_idx][np.random.permutation(n_idx)]
        maxd = 0.0
        for k in range(perm.shape[0]):
            i = perm[k]
            new = _update(A, r, x, c, i, kind, lam, a)
            d = abs(new - x[i])
            x[i] = new
            if d > maxd:
                maxd = d
            if trace and ntr < trace_out.shape[0]:
                trace_out[ntr] = _full_objective(A, y, x, kind, lam, a)
                ntr += 1
        sweeps += 1
        if full:
            if maxd < delta:
                # later updates in the sweep shift earlier subproblems: confirm at the final x
                maxd = _max_proposal_step(A, r, x, c, kind, lam, a)
                if maxd < delta:
                    return sweeps, True, maxd, ntr
                continue
            if cycle:
                n_idx = 0
                for j in range(N):
                    if x[j] != 0.0:
                        idx[n_idx] = j
                        n_idx += 1
                full = n_idx == 0
        elif maxd < delta:
            # active block settled: a full sweep decides convergence
            full = True
    return sweeps, False, maxd, ntr


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def residual(problem: RegressionProblem, x) -> np.ndarray:
    return problem.y - problem.A @ np.asarray(x, dtype=np.float64)


def cd_update_coordinate(problem: RegressionProblem, x, i: int, spec: PenaltySpec,
                         r=None) -> float:
    """Global minimiser of the i-th coordinate subproblem.

    If ``r`` (the residual y - A x) is given it is updated in place, and ``x``
    is updated too.
    """
    x = np.asarray(x, dtype=np.float64)
    if r is None:
        r = residual(problem, x)
        x = x.copy()
    new = _update(problem.A, r, x, problem.column_sq_norms, int(i), int(spec.kind), spec.lam, spec.a)
    x[i] = new
    return float(new)


def coordinate_descent(problem: RegressionProblem, spec: PenaltySpec, x_init=None,
                       delta: float = DEFAULT_DELTA, max_sweeps: int = DEFAULT_MAX_SWEEPS,
                       rng_seed: int = 0, trace: bool = False, active_cycling: bool = True):
    """Randomised-order coordinate descent.

    Each sweep visits coordinates in a fresh permutation drawn from numba's
    seeded Mersenne Twister.  With ``active_cycling`` a full sweep is followed
    by sweeps over the nonzero coordinates only, until those settle; the run
    stops only after a full sweep in which every coordinate moved by less than
    ``delta`` and a read-only pass at the final point confirms that no single
    update would move any coordinate by ``delta`` or more.  Without it every sweep is a full sweep.  With ``trace=True`` returns
    ``(estimate, objectives)`` where ``objectives`` holds the full objective
    after every single-coordinate update.
    """
    if not delta > 0:
        raise ParameterError("delta must be positive")
    if max_sweeps < 1:
        raise ParameterError("max_sweeps must be >= 1")
    N = problem.N
    x = np.zeros(N) if x_init is None else np.array(x_init, dtype=np.float64)
    if x.shape != (N,):
        raise ParameterError("x_init has the wrong length")
    c = problem.column_sq_norms
    skipped = [int(j) for j in np.flatnonzero(c <= 0.0)]
    x[skipped] = 0.0
    r = problem.y - problem.A @ x
    trace_out = np.empty(min(N * max_sweeps, 5_000_000) if trace else 0)
    sweeps, conv, maxd, ntr = _cd_kernel(
        problem.A, problem.y, c, x, r, int(spec.kind), spec.lam, spec.a,
        float(delta), int(max_sweeps), int(rng_seed) % (2**32), trace, trace_out,
        bool(active_cycling))
    est = Estimate(x_hat=x, iterations=int(sweeps), converged=bool(conv),
                   max_coord_delta=float(maxd), lam=spec.lam, seed=int(rng_seed),
                   skipped=skipped)
    if trace:
        return est, trace_out[:ntr].copy()
    return est


def lambda_max(problem: RegressionProblem) -> float:
    return float(np.max(np.abs(problem.A.T @ problem.y)))


def lambda_grid(problem: RegressionProblem, L: int = 100, eps_ratio: float = 0.01) -> np.ndarray:
    """Descending geometric grid from ceil(max_j |a_j^T y|) down to eps_ratio times that."""
    top = math.ceil(lambda_max(problem))
    return geometric_grid(top, L, eps_ratio)


def geometric_grid(top: float, L: int = 100, eps_ratio: float = 0.01) -> np.ndarray:
    if L < 2:
        raise ParameterError("L must be >= 2")
    if not 0 < eps_ratio < 1:
        raise ParameterError("eps_ratio must lie in (0, 1)")
    if not top > 0:
        raise ParameterError("largest lambda is zero (all-zero response?)")
    ratio = eps_ratio ** (1.0 / (L - 1))
    grid = top * ratio ** np.arange(L)
    grid[-1] = eps_ratio * top
    return grid


def solve_path(problem: RegressionProblem, spec_a: float, kind, grid,
               delta: float = DEFAULT_DELTA, max_sweeps: int = DEFAULT_MAX_SWEEPS,
               seed: int = 0, x_init=None) -> SolutionPath:
    """Lambda annealing: each grid point is warm-started from the previous solution."""
    kind = Kind.parse(kind)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size > 1 and not np.all(np.diff(grid) < 0):
        raise ParameterError("lambda grid must be strictly decreasing")
    x = np.zeros(problem.N) if x_init is None else np.asarray(x_init, dtype=np.float64)
    estimates, lineage = [], []
    for k, lam in enumerate(grid):
        spec = PenaltySpec(kind, float(lam), spec_a)
        est = coordinate_descent(problem, spec, x, delta, max_sweeps, seed)
        estimates.append(est)
        lineage.append(k - 1)
        x = est.x_hat
    return SolutionPath(lambdas=grid, estimates=estimates, spec_a=float(spec_a), kind=kind,
                        seed=seed, warm_start_from=lineage)


def output_mse(problem: RegressionProblem, estimate) -> float:
    x = estimate.x_hat if isinstance(estimate, Estimate) else estimate
    r = residual(problem, x)
    return float(r @ r) / (2 * problem.M)


def input_mse(estimate, x0) -> float:
    if x0 is None:
        raise ParameterError("input MSE needs the true signal x0")
    x = estimate.x_hat if isinstance(estimate, Estimate) else np.asarray(estimate)
    d = x - np.asarray(x0)
    return float(d @ d) / (2 * d.shape[0])
