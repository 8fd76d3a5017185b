"""Separable penalties (LASSO, SCAD, MCP) and their exact scalar proximal maps.

The scalar problem solved throughout the package is

    theta_hat(w) = argmin_theta (theta - w)^2 / (2 sigma_w2) + J(theta; lambda, a)

The kernels below are numba-compiled so the coordinate-descent loop can call
them directly; the public wrappers add validation and result objects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np
from numba import njit


class ParameterError(ValueError):
    """Raised for invalid regularisation or problem parameters."""


class NumericalError(ArithmeticError):
    """A computation could not produce a usable number (no stable point, singular system...)."""


class Kind(IntEnum):
    LASSO = 0
    SCAD = 1
    MCP = 2

    @classmethod
    def parse(cls, value) -> "Kind":
        if isinstance(value, Kind):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise ParameterError(f"unknown penalty kind {value!r}") from None
        return cls(int(value))


class Branch(Enum):
    ZERO = 0
    SOFT = 1
    TRANSITION = 2
    OLS = 3


@dataclass(frozen=True)
class PenaltySpec:
    kind: Kind
    lam: float
    a: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "a", float(self.a))
        self.validate()

    def validate(self) -> None:
        if not self.lam >= 0 or math.isinf(self.lam):
            raise ParameterError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.kind is Kind.SCAD and not self.a > 1:
            raise ParameterError(f"SCAD requires a > 1, got {self.a}")
        if self.kind is Kind.MCP and not self.a > 0:
            raise ParameterError(f"MCP requires a > 0, got {self.a}")

    def with_lambda(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(self.kind, lam, self.a)

    @property
    def curvature_offset(self) -> float:
        """Magnitude of the negative curvature in the nonconvex branch (1/(a-1) or 1/a)."""
        if self.kind is Kind.SCAD:
            return 1.0 / (self.a - 1.0)
        if self.kind is Kind.MCP:
            return 1.0 / self.a
        return 0.0


@dataclass(frozen=True)
class ScalarProxResult:
    theta_hat: float
    branch: Branch
    objective: float


# ---------------------------------------------------------------------------
# numba kernels; kind is passed as an int (Kind value)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _penalty(t, kind, lam, a):
    u = abs(t)
    if kind == 0:
        return lam * u
    if kind == 1:
        if u <= lam:
            return lam * u
        if u <= a * lam:
            return -(u * u - 2.0 * a * lam * u + lam * lam) / (2.0 * (a - 1.0))
        return (a + 1.0) * lam * lam / 2.0
    if u <= a * lam:
        return lam * u - u * u / (2.0 * a)
    return a * lam * lam / 2.0


@njit(cache=True)
def _curvature(t, kind, lam, a):
    u = abs(t)
    if kind == 1:
        # left-limit convention at the kinks: u == lam -> 0, u == a*lam -> 1/(1-a)
        if lam < u <= a * lam:
            return 1.0 / (1.0 - a)
        return 0.0
    if kind == 2:
        if u <= a * lam:
            return -1.0 / a
        return 0.0
    return 0.0


@njit(cache=True)
def _objective(t, w, s2, kind, lam, a):
    d = t - w
    return d * d / (2.0 * s2) + _penalty(t, kind, lam, a)


@njit(cache=True)
def _candidates(w, s2, kind, lam, a):
    """Candidate minimisers on the half-line sign(w)*[0, inf); sorted by |theta|."""
    u = abs(w)
    out = np.empty(6)
    n = 0
    out[n] = 0.0
    n += 1
    # soft branch (0, lam] for SCAD, (0, inf) for LASSO
    t = u - s2 * lam
    if kind == 0:
        out[n] = max(t, 0.0)
        n += 1
    elif kind == 1:
        out[n] = min(max(t, 0.0), lam)
        n += 1
        out[n] = lam
        n += 1
        out[n] = a * lam
        n += 1
        den = 1.0 / s2 - 1.0 / (a - 1.0)
        if den > 0.0:
            t = (u / s2 - a * lam / (a - 1.0)) / den
            out[n] = min(max(t, lam), a * lam)
            n += 1
        out[n] = max(u, a * lam)
        n += 1
    else:
        out[n] = a * lam
        n += 1
        den = 1.0 / s2 - 1.0 / a
        if den > 0.0:
            t = (u / s2 - lam) / den
            out[n] = min(max(t, 0.0), a * lam)
            n += 1
        out[n] = max(u, a * lam)
        n += 1
    res = np.sort(out[:n])
    if w < 0.0:
        res = -res
    return res


@njit(cache=True)
def _branch_of(t, kind, lam, a):
    u = abs(t)
    if u == 0.0:
        return 0
    if kind == 0:
        return 1
    if kind == 1:
        if u <= lam:
            return 1
        if u <= a * lam:
            return 2
        return 3
    if u <= a * lam:
        return 2
    return 3


@njit(cache=True)
def _prox_enumerate(w, s2, kind, lam, a):
    cands = _candidates(w, s2, kind, lam, a)
    best = cands[0]
    fbest = _objective(best, w, s2, kind, lam, a)
    for k in range(1, cands.shape[0]):
        f = _objective(cands[k], w, s2, kind, lam, a)
        # strict inequality: ties keep the smaller |theta|
        if f < fbest:
            fbest = f
            best = cands[k]
    return best


@njit(cache=True)
def _prox(w, s2, kind, lam, a):
    """Global minimiser of (theta - w)^2/(2 s2) + J(theta)."""
    q = 1.0 / s2
    h = w * q
    u = abs(h)
    sg = 1.0 if h > 0.0 else -1.0
    if kind == 0:
        if u <= lam:
            return 0.0
        return sg * (u - lam) * s2
    # the threshold formulas presume a convex scalar objective
    den = q - (1.0 / (a - 1.0) if kind == 1 else 1.0 / a)
    if den <= 0.0:
        return _prox_enumerate(w, s2, kind, lam, a)
    if u <= lam:
        return 0.0
    if kind == 1:
        if u <= lam * (1.0 + q):
            return sg * (u - lam) * s2
        if u <= a * lam * q:
            return sg * (u - a * lam / (a - 1.0)) / den
        return w
    if u <= a * lam * q:
        return sg * (u - lam) / den
    return w


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def penalty_value(theta: float, spec: PenaltySpec) -> float:
    """J(theta; lambda, a)."""
    return float(_penalty(float(theta), int(spec.kind), spec.lam, spec.a))


def penalty_curvature(theta: float, spec: PenaltySpec) -> float:
    """Second derivative of J at theta (left limit at branch boundaries)."""
    return float(_curvature(float(theta), int(spec.kind), spec.lam, spec.a))


def scalar_objective(theta: float, w: float, sigma_w2: float, spec: PenaltySpec) -> float:
    return float(_objective(float(theta), float(w), float(sigma_w2), int(spec.kind), spec.lam, spec.a))


def _check_s2(sigma_w2):
    if not sigma_w2 > 0 or not math.isfinite(sigma_w2):
        raise ParameterError(f"sigma_w2 must be positive and finite, got {sigma_w2}")


def scalar_prox(w: float, sigma_w2: float, spec: PenaltySpec) -> ScalarProxResult:
    """Exact global minimiser of the one-dimensional penalised problem.

    Closed-form thresholding is used while the scalar objective is convex;
    otherwise the candidate stationary points are enumerated.
    """
    _check_s2(sigma_w2)
    w = float(w)
    k = int(spec.kind)
    t = float(_prox(w, float(sigma_w2), k, spec.lam, spec.a))
    return ScalarProxResult(
        theta_hat=t,
        branch=Branch(int(_branch_of(t, k, spec.lam, spec.a))),
        objective=float(_objective(t, w, float(sigma_w2), k, spec.lam, spec.a)),
    )


def candidate_stationary_points(w: float, sigma_w2: float, spec: PenaltySpec) -> list[float]:
    """Zero, branch boundaries and clipped interior stationary points on w's side."""
    _check_s2(sigma_w2)
    return [float(c) for c in _candidates(float(w), float(sigma_w2), int(spec.kind), spec.lam, spec.a)]


@njit(cache=True)
def _grid_scan(w, s2, kind, lam, a, lo, step, n, slack):
    """Grid-local minima whose value is within ``slack`` of the best grid value."""
    pos = np.empty(64)
    val = np.empty(64)
    m = 0
    best = np.inf
    prev = np.inf
    cur = _objective(lo, w, s2, kind, lam, a)
    for j in range(n):
        nxt = _objective(lo + (j + 1) * step, w, s2, kind, lam, a) if j + 1 < n else np.inf
        if cur <= prev and cur <= nxt:
            if cur < best:
                best = cur
            if cur <= best + slack:
                if m == 64:
                    # drop stale entries to make room
                    k = 0
                    for i in range(m):
                        if val[i] <= best + slack:
                            pos[k] = pos[i]
                            val[k] = val[i]
                            k += 1
                    m = k
                if m < 64:
                    pos[m] = lo + j * step
                    val[m] = cur
                    m += 1
        prev, cur = cur, nxt
    keep = val[:m] <= best + slack
    return pos[:m][keep]


def scalar_prox_oracle(w: float, sigma_w2: float, spec: PenaltySpec,
                       grid_halfwidth: float = 10.0, step: float = 1e-6) -> float:
    """Brute-force minimiser: dense grid search then ternary refinement.

    The grid covers [-grid_halfwidth, grid_halfwidth] intersected with the
    hull of {0, w} widened by one unit; the minimiser always lies between 0
    and w because J is even and nondecreasing in |theta|.  Every grid-local
    minimum close to the best grid value is refined, and exact ties go to
    the smaller |theta|.  Independent of the closed forms; meant for tests.
    """
    if step <= 0:
        raise ParameterError("step must be positive")
    _check_s2(sigma_w2)
    w, s2 = float(w), float(sigma_w2)
    lam, a, k = spec.lam, spec.a, int(spec.kind)
    lo = max(-grid_halfwidth, min(0.0, w) - 1.0)
    hi = min(grid_halfwidth, max(0.0, w) + 1.0)
    n = int(math.ceil((hi - lo) / step)) + 1
    cands = list(_grid_scan(w, s2, k, lam, a, lo, step, n, 1e-9)) + [0.0]

    def f(t):
        return _objective(t, w, s2, k, lam, a)

    refined = []
    for t in cands:
        lo_t, hi_t = t - step, t + step
        for _ in range(100):
            m1 = lo_t + (hi_t - lo_t) / 3
            m2 = hi_t - (hi_t - lo_t) / 3
            if f(m1) <= f(m2):
                hi_t = m2
            else:
                lo_t = m1
        t_ref = 0.5 * (lo_t + hi_t)
        refined.append(t_ref if f(t_ref) < f(t) else t)
    # exact zero is a kink the grid may straddle
    refined.append(0.0)
    return min(refined, key=lambda t: (f(t), abs(t)))


def _vec_objective(t: np.ndarray, w: float, s2: float, spec: PenaltySpec) -> np.ndarray:
    u = np.abs(t)
    lam, a = spec.lam, spec.a
    if spec.kind is Kind.LASSO:
        pen = lam * u
    elif spec.kind is Kind.SCAD:
        pen = np.where(
            u <= lam, lam * u,
            np.where(u <= a * lam,
                     -(u * u - 2 * a * lam * u + lam * lam) / (2 * (a - 1)),
                     (a + 1) * lam * lam / 2))
    else:
        pen = np.where(u <= a * lam, lam * u - u * u / (2 * a), a * lam * lam / 2)
    return (t - w) ** 2 / (2 * s2) + pen


def soft_threshold(w, thr):
    return np.sign(w) * np.maximum(np.abs(w) - thr, 0.0)
