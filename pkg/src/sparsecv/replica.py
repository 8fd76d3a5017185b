"""Replica-symmetric equations of state for penalised regression on i.i.d. designs.

The effective single-variable problem is

    x*(h) = argmin_x  Qh x^2 / 2 - h x + J(x),   h = sigma z,  z ~ N(0, 1)

with sigma drawn from a two-atom mixture (signal / non-signal components).
Each penalty splits the h-axis into branches on which x* is linear in h:

    zero        |h| <= lam
    soft        lam < |h| <= lam (1 + Qh)        (SCAD only; LASSO: up to inf)
    transition  upper soft edge < |h| <= a lam Qh   (SCAD, MCP)
    ols         |h| > a lam Qh

The Gaussian averages over these branches are written in terms of
theta_k = (branch edge) / (sqrt(2) sigma).  Since x* is piecewise linear in h
every average has a closed form in erfc and exp; ``branch_integrals`` computes
the same numbers by piecewise Gauss-Legendre quadrature as a cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar
from scipy.special import erfc, roots_legendre

from .datagen import EnsembleParams
from .penalty import Kind, PenaltySpec, ParameterError

SQRT2 = math.sqrt(2.0)
EXISTENCE_EPS = 1e-12
Z_CUT = 38.0


class Status(Enum):
    CONVERGED = "converged"
    NON_EXISTENT = "non_existent"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class OrderParams:
    chi: float
    Q: float
    m: float
    Qh: float
    chih: float
    mh: float

    def as_array(self) -> np.ndarray:
        return np.array([self.chi, self.Q, self.m, self.Qh, self.chih, self.mh])

    @classmethod
    def from_array(cls, v) -> "OrderParams":
        return cls(*(float(t) for t in v))


@dataclass(frozen=True)
class XiBundle:
    theta1: float
    theta2: float
    theta3: float
    rho_hat_contrib: float
    xi1: float
    xi2: float
    xi3: float
    xi4: float


@dataclass
class RsSolution:
    params: OrderParams
    status: Status
    lam: float
    a: float
    kind: Kind
    iterations: int = 0
    residual: float = math.nan
    at_lhs: float = math.nan
    at_stable: bool = False
    observables: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.CONVERGED


class NonExistent(ArithmeticError):
    """The RS effective problem has no minimiser (Qh below the existence limit)."""


# ---------------------------------------------------------------------------
# sigma mixture
# ---------------------------------------------------------------------------

def sigma_mixture(ensemble: EnsembleParams, chih: float, mh: float):
    """(sigma_minus, sigma_plus, weight of sigma_plus)."""
    if chih < 0:
        raise ParameterError("chih must be >= 0")
    s_minus = math.sqrt(chih)
    s_plus = math.sqrt(chih + mh * mh * ensemble.sigma_x2)
    return s_minus, s_plus, ensemble.rho0


# ---------------------------------------------------------------------------
# branch integrals
# ---------------------------------------------------------------------------

def _edges(Qh: float, spec: PenaltySpec):
    """Branch edges on |h|: (zero|soft, soft|transition, transition|ols)."""
    lam, a = spec.lam, spec.a
    if spec.kind is Kind.SCAD:
        return lam, lam * (1.0 + Qh), a * lam * Qh
    if spec.kind is Kind.MCP:
        return lam, lam, a * lam * Qh
    return lam, math.inf, math.inf


@njit(cache=True)
def _phi(z):
    if z > 40.0:
        return 0.0
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


@njit(cache=True)
def _branch_sq(sigma, kappa, lo, hi):
    """2 int_lo^hi phi(z) (sigma z - kappa)^2 dz, hi may be inf."""
    if hi <= lo:
        return 0.0
    p_lo, p_hi = _phi(lo), _phi(hi)
    mass = 0.5 * (math.erfc(lo / SQRT2) - math.erfc(hi / SQRT2))
    zp_lo = lo * p_lo if p_lo > 0.0 else 0.0
    zp_hi = hi * p_hi if p_hi > 0.0 else 0.0
    return 2.0 * (sigma * sigma * (zp_lo - zp_hi + mass)
                  - 2.0 * sigma * kappa * (p_lo - p_hi) + kappa * kappa * mass)


@njit(cache=True)
def _xi(sigma, Qh, kind, lam, a):
    """(theta1, theta2, theta3, rho_hat, xi1, xi2, xi3, xi4) for one sigma atom."""
    if sigma <= 0.0:
        return np.inf, np.inf, np.inf, 0.0, 0.0, 0.0, 0.0, 0.0
    if kind == 1:
        c = 1.0 / (a - 1.0)
        b1, b2, b3 = lam, lam * (1.0 + Qh), a * lam * Qh
        kappa = a * lam * c
    elif kind == 2:
        c = 1.0 / a
        b1, b2, b3 = lam, lam, a * lam * Qh
        kappa = lam
    else:
        c = 0.0
        b1, b2, b3 = lam, np.inf, np.inf
        kappa = 0.0
    z1, z2, z3 = b1 / sigma, b2 / sigma, b3 / sigma
    E1, E2, E3 = math.erfc(z1 / SQRT2), math.erfc(z2 / SQRT2), math.erfc(z3 / SQRT2)
    xi1 = _branch_sq(sigma, lam, z1, z2) / Qh
    xi2 = _branch_sq(sigma, kappa, z2, z3) / (Qh - c) if kind != 0 else 0.0
    xi3 = _branch_sq(sigma, 0.0, z3, np.inf) / Qh
    return z1 / SQRT2, z2 / SQRT2, z3 / SQRT2, E1, xi1, xi2, xi3, E2 - E3


@lru_cache(maxsize=8)
def _legendre(n: int):
    z, w = roots_legendre(n)
    return z, w


def _gauss_segment(f, lo: float, hi: float, n: int) -> float:
    """int_lo^hi phi(z) f(z) dz, phi the standard normal density."""
    if hi <= lo:
        return 0.0
    z, w = _legendre(n)
    half = 0.5 * (hi - lo)
    zz = lo + half * (z + 1.0)
    return half * float(np.sum(w * np.exp(-0.5 * zz * zz) * f(zz))) / math.sqrt(2 * math.pi)


def branch_integrals(sigma: float, Qh: float, spec: PenaltySpec, n: int = 200) -> XiBundle:
    """The XiBundle quantities computed from their defining Gaussian integrals.

    Works for every penalty kind; each analytic branch is integrated
    separately (both signs of z, by symmetry doubled), so the quadrature never
    straddles a kink or a jump of the integrand.
    """
    lam, a = spec.lam, spec.a
    c = spec.curvature_offset
    if sigma <= 0.0:
        return XiBundle(math.inf, math.inf, math.inf, 0.0, 0.0, 0.0, 0.0, 0.0)
    b1, b2, b3 = _edges(Qh, spec)
    z1, z2, z3 = (min(b / sigma, Z_CUT) for b in (b1, b2, b3))
    if spec.kind is Kind.SCAD:
        def trans(h):
            return (h - a * lam / (a - 1.0)) / (Qh - c)
    else:
        def trans(h):
            return (h - lam) / (Qh - c)

    def soft(h):
        return (h - lam) / Qh

    p_nonzero = 2 * _gauss_segment(lambda z: np.ones_like(z), z1, Z_CUT, n)
    xi4 = 2 * _gauss_segment(lambda z: np.ones_like(z), z2, z3, n)
    xi1 = 2 * Qh * _gauss_segment(lambda z: soft(sigma * z) ** 2, z1, z2, n)
    xi2 = 2 * (Qh - c) * _gauss_segment(lambda z: trans(sigma * z) ** 2, z2, z3, n)
    xi3 = 2 * Qh * _gauss_segment(lambda z: (sigma * z / Qh) ** 2, z3, Z_CUT, n)
    t = [b / (SQRT2 * sigma) for b in (b1, b2, b3)]
    return XiBundle(t[0], t[1], t[2], p_nonzero, xi1, xi2, xi3, xi4)


def xi_closed_form(sigma: float, Qh: float, spec: PenaltySpec) -> XiBundle:
    """Branch integrals for one sigma atom in closed form (erfc and exp only)."""
    c = spec.curvature_offset
    if spec.kind is not Kind.LASSO and Qh - c <= 0.0:
        raise NonExistent(f"Qh={Qh} below existence limit {c}")
    return XiBundle(*_xi(float(sigma), float(Qh), int(spec.kind), spec.lam, spec.a))


# ---------------------------------------------------------------------------
# equations of state
# ---------------------------------------------------------------------------

def _conjugates(chi, Q, m, ensemble: EnsembleParams):
    alpha = ensemble.alpha
    g = 1.0 / (1.0 + chi / alpha)
    chih = (Q - 2 * m + ensemble.signal_power + alpha * ensemble.sigma_D2) * g * g / alpha
    return g, chih, g


def _averages(Qh, chih, mh, ensemble, spec):
    s_minus, s_plus, rho = sigma_mixture(ensemble, max(chih, 0.0), mh)
    lo = xi_closed_form(s_minus, Qh, spec)
    hi = xi_closed_form(s_plus, Qh, spec)
    return lo, hi, rho


def _mix(lo, hi, rho, name):
    return (1 - rho) * getattr(lo, name) + rho * getattr(hi, name)


def eos_rhs(order: OrderParams, ensemble: EnsembleParams, spec: PenaltySpec) -> OrderParams:
    """Right-hand sides of all six state equations at ``order``."""
    Qh, chih, mh = order.Qh, order.chih, order.mh
    c = spec.curvature_offset
    lo, hi, rho = _averages(Qh, chih, mh, ensemble, spec)
    rho_hat = _mix(lo, hi, rho, "rho_hat_contrib")
    xi4 = _mix(lo, hi, rho, "xi4")
    ratio = c / (Qh - c) if c else 0.0
    chi = (rho_hat + ratio * xi4) / Qh
    if spec.kind is Kind.LASSO:
        Q = _mix(lo, hi, rho, "xi1") / Qh
    else:
        Q = (_mix(lo, hi, rho, "xi1") / Qh + _mix(lo, hi, rho, "xi2") / (Qh - c)
             + _mix(lo, hi, rho, "xi3") / Qh)
    m = ensemble.signal_power * mh / Qh * (hi.rho_hat_contrib + ratio * hi.xi4)
    Qh_new, chih_new, mh_new = _conjugates(order.chi, order.Q, order.m, ensemble)
    return OrderParams(chi, Q, m, Qh_new, chih_new, mh_new)


def initial_order(ensemble: EnsembleParams, chi: float = 0.0) -> OrderParams:
    P = ensemble.signal_power
    Q, m = P, P / 2
    return OrderParams(chi, Q, m, *_conjugates(chi, Q, m, ensemble))


@njit(cache=True)
def _rhs_kernel(cur, kind, lam, a, alpha, rho0, sx2, sD2):
    chi, Q, m, Qh, chih, mh = cur[0], cur[1], cur[2], cur[3], cur[4], cur[5]
    c = 1.0 / (a - 1.0) if kind == 1 else (1.0 / a if kind == 2 else 0.0)
    s_minus = math.sqrt(max(chih, 0.0))
    s_plus = math.sqrt(max(chih, 0.0) + mh * mh * sx2)
    lo = _xi(s_minus, Qh, kind, lam, a)
    hi = _xi(s_plus, Qh, kind, lam, a)
    rho_hat = (1 - rho0) * lo[3] + rho0 * hi[3]
    xi4 = (1 - rho0) * lo[7] + rho0 * hi[7]
    ratio = c / (Qh - c) if kind != 0 else 0.0
    out = np.empty(6)
    out[0] = (rho_hat + ratio * xi4) / Qh
    out[1] = ((1 - rho0) * (lo[4] + lo[6]) + rho0 * (hi[4] + hi[6])) / Qh
    if kind != 0:
        out[1] += ((1 - rho0) * lo[5] + rho0 * hi[5]) / (Qh - c)
    out[2] = rho0 * sx2 * mh / Qh * (hi[3] + ratio * hi[7])
    g = 1.0 / (1.0 + chi / alpha)
    out[3] = g
    out[4] = (Q - 2 * m + rho0 * sx2 + alpha * sD2) * g * g / alpha
    out[5] = g
    return out


@njit(cache=True)
def _iterate(cur, kind, lam, a, alpha, rho0, sx2, sD2, damping, tol, max_iter, eps):
    """Returns (params, code, iterations, residual); code 0 converged, 1 non-existent, 2 max_iter."""
    c = 1.0 / (a - 1.0) if kind == 1 else (1.0 / a if kind == 2 else 0.0)
    res = np.inf
    for it in range(1, max_iter + 1):
        if kind != 0 and cur[3] - c < eps:
            return cur, 1, it, res
        rhs = _rhs_kernel(cur, kind, lam, a, alpha, rho0, sx2, sD2)
        for v in rhs:
            if not math.isfinite(v):
                return cur, 1, it, res
        res = np.max(np.abs(rhs - cur))
        step = damping
        prop = (1 - damping) * cur + damping * rhs
        # an overshooting step is shortened; a fixed point pressed against
        # the limit ends up aborting via the check above
        while kind != 0 and prop[3] - c < eps:
            step *= 0.5
            if step < damping * 2.0 ** -30:
                return cur, 1, it, res
            prop = cur + step * (rhs - cur)
        cur = prop
        if res < tol:
            return cur, 0, it, res
    return cur, 2, max_iter, res


def solve_eos(ensemble: EnsembleParams, spec: PenaltySpec, init: OrderParams | None = None,
              damping: float = 0.5, tol: float = 1e-10, max_iter: int = 100_000) -> RsSolution:
    """Damped fixed-point iteration of the state equations."""
    if not 0 < damping <= 1:
        raise ParameterError("damping must lie in (0, 1]")
    if not tol > 0:
        raise ParameterError("tol must be positive")
    c = spec.curvature_offset
    cur = (init or initial_order(ensemble)).as_array()
    out, code, it, res = _iterate(cur, int(spec.kind), spec.lam, spec.a, ensemble.alpha,
                                  ensemble.rho0, ensemble.sigma_x2, ensemble.sigma_D2,
                                  float(damping), float(tol), int(max_iter), EXISTENCE_EPS)
    status = (Status.CONVERGED, Status.NON_EXISTENT, Status.MAX_ITER)[code]
    params = OrderParams.from_array(out)
    sol = RsSolution(params, status, spec.lam, spec.a, spec.kind, int(it), float(res))
    if status is Status.CONVERGED:
        if params.Qh - c < EXISTENCE_EPS and spec.kind is not Kind.LASSO:
            sol.status = Status.NON_EXISTENT
            return sol
        sol.at_lhs, sol.at_stable = at_condition(sol, ensemble, spec)
        sol.observables = observables(sol, ensemble, spec)
    return sol


def solve_rs(ensemble: EnsembleParams, spec: PenaltySpec, init: OrderParams | None = None,
             steps: int = 40, **kw) -> RsSolution:
    """solve_eos with a fallback for cold starts.

    If the direct iteration fails, the fixed point is followed down from a
    lambda deep in the (nearly) trivial regime, mirroring lambda annealing.
    """
    sol = solve_eos(ensemble, spec, init=init, **kw)
    if sol.ok or spec.lam <= 0:
        return sol
    top = max(20.0 * spec.lam, 10.0 * math.sqrt(ensemble.signal_power / ensemble.alpha
                                                  + ensemble.sigma_D2 + 1.0))
    grid = np.geomspace(top, spec.lam, steps)
    cur = None
    for lam in grid:
        s = solve_eos(ensemble, spec.with_lambda(float(lam)), init=cur, **kw)
        if not s.ok:
            # retry once from scratch before declaring the branch lost
            s = solve_eos(ensemble, spec.with_lambda(float(lam)), **kw)
            if not s.ok:
                s.lam = spec.lam
                return s
        cur = s.params
    return s


def at_condition(solution: RsSolution, ensemble: EnsembleParams, spec: PenaltySpec):
    """(lhs, lhs < 1) of the replica-symmetry (de Almeida-Thouless) stability test."""
    p = solution.params
    c = spec.curvature_offset
    lo, hi, rho = _averages(p.Qh, p.chih, p.mh, ensemble, spec)
    rho_hat = _mix(lo, hi, rho, "rho_hat_contrib")
    xi4 = _mix(lo, hi, rho, "xi4")
    pref = 1.0 / (ensemble.alpha * (1.0 + p.chi / ensemble.alpha) ** 2)
    bracket = rho_hat / p.Qh ** 2
    if c:
        bracket += (1.0 / (p.Qh - c) ** 2 - 1.0 / p.Qh ** 2) * xi4
    lhs = pref * bracket
    return lhs, bool(lhs < 1.0)


def observables(solution: RsSolution, ensemble: EnsembleParams, spec: PenaltySpec) -> dict:
    p = solution.params
    s_minus, s_plus, rho = sigma_mixture(ensemble, max(p.chih, 0.0), p.mh)
    tp = float(erfc(spec.lam / (SQRT2 * s_plus))) if s_plus > 0 else 0.0
    fp = float(erfc(spec.lam / (SQRT2 * s_minus))) if s_minus > 0 else 0.0
    return {
        "eps_x": 0.5 * (ensemble.signal_power - 2 * p.m + p.Q),
        "eps_y": 0.5 * p.chih,
        "TP": tp,
        "FP": fp,
        "R": (tp - 1.0) ** 2 + fp ** 2,
        "rho_hat": (1 - rho) * fp + rho * tp,
    }


# ---------------------------------------------------------------------------
# sweeps and phase boundaries
# ---------------------------------------------------------------------------

def sweep_lambda(ensemble: EnsembleParams, spec_a: float, kind, grid, continuation: bool = True,
                 **solver_kw) -> list[RsSolution]:
    """Solve along a descending lambda grid, warm-starting from the last fixed point."""
    kind = Kind.parse(kind)
    grid = np.asarray(grid, dtype=float)
    if grid.size > 1 and not np.all(np.diff(grid) < 0):
        raise ParameterError("lambda grid must be strictly decreasing")
    out, init = [], None
    for lam in grid:
        spec = PenaltySpec(kind, float(lam), spec_a)
        if init is None:
            sol = solve_rs(ensemble, spec, **solver_kw)
        else:
            sol = solve_eos(ensemble, spec, init=init, **solver_kw)
        if sol.ok and continuation:
            init = sol.params
        out.append(sol)
    return out


def first_failures(solutions: list[RsSolution]):
    """Indices of the first non-existent point and the first AT-unstable point."""
    nonexist = next((k for k, s in enumerate(solutions) if not s.ok), None)
    unstable = next((k for k, s in enumerate(solutions) if s.ok and not s.at_stable), None)
    return nonexist, unstable


def _bisect(pred, lo: float, hi: float, rtol: float = 1e-4, log: bool = True) -> float:
    """Boundary between pred(lo) False and pred(hi) True."""
    while abs(hi - lo) > rtol * max(abs(lo), abs(hi)):
        mid = math.sqrt(lo * hi) if log and lo > 0 else 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _solve_from(ensemble, spec, init, **kw):
    sol = solve_eos(ensemble, spec, init=init, **kw)
    if not sol.ok:
        sol = solve_rs(ensemble, spec, **kw)
    return sol


def at_lambda(ensemble: EnsembleParams, spec_a: float, kind, lam_hi: float, lam_lo: float,
              rtol: float = 1e-4, **kw) -> float:
    """Largest-lambda AT crossing inside [lam_lo, lam_hi] (lam_hi stable, lam_lo not)."""
    kind = Kind.parse(kind)
    ref = solve_rs(ensemble, PenaltySpec(kind, lam_hi, spec_a), **kw)

    def unstable(lam):
        s = _solve_from(ensemble, PenaltySpec(kind, lam, spec_a), ref.params if ref.ok else None, **kw)
        return not (s.ok and s.at_stable)
    return _bisect(lambda lam: not unstable(lam), lam_lo, lam_hi, rtol)


@dataclass
class PhaseDiagram:
    lambdas: np.ndarray
    a_values: np.ndarray
    grid: list                   # rows of (lam, a, RsSolution)
    a_at: np.ndarray             # per lambda (nan where no crossing in the a range)
    a_rs: np.ndarray
    imse_lambda: np.ndarray      # per a: lambda minimising eps_x
    imse_eps: np.ndarray
    global_min: dict | None
    lasso_limit_minimum: bool


def a_boundaries(ensemble: EnsembleParams, kind, lam: float, a_values, rtol: float = 1e-4,
                 solutions=None, **kw):
    """(a_AT, a_RS) at one lambda by bisection in a, starting from a grid scan.

    a_RS: smallest a with an RS solution.  a_AT: the largest a below which the
    RS solution is unstable or absent.
    """
    kind = Kind.parse(kind)
    a_values = np.asarray(a_values, dtype=float)
    if solutions is None:
        solutions = [solve_rs(ensemble, PenaltySpec(kind, lam, a), **kw) for a in a_values]
    exists = np.array([s.ok for s in solutions])
    stable = np.array([s.ok and s.at_stable for s in solutions])

    def bisect(lo, hi, hi_sol, good):
        # hi is good; each trial warm-starts from the closest good solution above it
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            s = solve_eos(ensemble, PenaltySpec(kind, lam, mid), init=hi_sol.params, **kw)
            if good(s):
                hi, hi_sol = mid, s
            else:
                lo = mid
        return 0.5 * (lo + hi)

    a_rs = math.nan
    if exists.any():
        j = int(np.argmax(exists))
        a_rs = (bisect(a_values[j - 1], a_values[j], solutions[j], lambda s: s.ok)
                if j > 0 else a_values[0])
    a_at = math.nan
    if stable.any():
        bad = np.flatnonzero(~stable)
        if bad.size == 0:
            a_at = a_values[0]
        elif bad[-1] < len(a_values) - 1:
            j = bad[-1]
            a_at = bisect(a_values[j], a_values[j + 1], solutions[j + 1],
                          lambda s: s.ok and s.at_stable)
    return a_at, a_rs


def imse_minimum(ensemble: EnsembleParams, kind, a: float, lambdas, solutions=None, **kw):
    """(lambda, eps_x) minimising the input MSE over lambda at fixed a (RS points only)."""
    kind = Kind.parse(kind)
    lambdas = np.asarray(lambdas, dtype=float)
    if solutions is None:
        solutions = sweep_lambda(ensemble, a, kind, lambdas, **kw)
    eps = np.array([s.observables["eps_x"] if s.ok else np.inf for s in solutions])
    if not np.isfinite(eps).any():
        return math.nan, math.nan
    k = int(np.argmin(eps))
    if 0 < k < len(lambdas) - 1:
        init = solutions[k].params

        def f(loglam):
            s = _solve_from(ensemble, PenaltySpec(kind, math.exp(loglam), a), init, **kw)
            return s.observables["eps_x"] if s.ok else math.inf
        r = minimize_scalar(f, bounds=(math.log(lambdas[k + 1]), math.log(lambdas[k - 1])),
                            method="bounded", options={"xatol": 1e-6})
        if r.fun <= eps[k]:
            return float(math.exp(r.x)), float(r.fun)
    return float(lambdas[k]), float(eps[k])


def phase_boundaries(ensemble: EnsembleParams, kind, lambdas, a_values, rtol: float = 1e-4,
                     refine: bool = True, **kw) -> PhaseDiagram:
    """Trace the AT line, the RS existence limit and the input-MSE-minimising line.

    ``lambdas`` must be descending; ``a_values`` ascending.
    """
    kind = Kind.parse(kind)
    lambdas = np.asarray(lambdas, dtype=float)
    a_values = np.asarray(a_values, dtype=float)
    cols = [sweep_lambda(ensemble, a, kind, lambdas, **kw) for a in a_values]
    grid = [(lam, a, cols[j][i]) for i, lam in enumerate(lambdas) for j, a in enumerate(a_values)]
    a_at = np.full(len(lambdas), np.nan)
    a_rs = np.full(len(lambdas), np.nan)
    for i, lam in enumerate(lambdas):
        row = [cols[j][i] for j in range(len(a_values))]
        if refine:
            a_at[i], a_rs[i] = a_boundaries(ensemble, kind, lam, a_values, rtol, solutions=row, **kw)
        else:
            ex = [s.ok for s in row]
            st = [s.ok and s.at_stable for s in row]
            a_rs[i] = a_values[ex.index(True)] if any(ex) else np.nan
            bad = [j for j, v in enumerate(st) if not v]
            a_at[i] = (a_values[bad[-1] + 1] if bad and bad[-1] + 1 < len(a_values)
                       else (a_values[0] if not bad else np.nan))
    imse_lam = np.full(len(a_values), np.nan)
    imse_eps = np.full(len(a_values), np.nan)
    for j, a in enumerate(a_values):
        if refine:
            imse_lam[j], imse_eps[j] = imse_minimum(ensemble, kind, a, lambdas, solutions=cols[j], **kw)
        else:
            eps = np.array([s.observables["eps_x"] if s.ok else np.inf for s in cols[j]])
            if np.isfinite(eps).any():
                k = int(np.argmin(eps))
                imse_lam[j], imse_eps[j] = lambdas[k], eps[k]
    global_min = None
    lasso_limit = False
    if np.isfinite(imse_eps).any():
        j = int(np.nanargmin(imse_eps))
        sol = solve_rs(ensemble, PenaltySpec(kind, imse_lam[j], a_values[j]), **kw)
        global_min = {"lambda": float(imse_lam[j]), "a": float(a_values[j]),
                      "eps_x": float(imse_eps[j]), "at_stable": bool(sol.ok and sol.at_stable),
                      "at_lhs": float(sol.at_lhs)}
        top = a_values >= a_values[-1] / 10.0
        tail = imse_eps[top]
        if tail.size >= 2 and np.all(np.isfinite(tail)) and np.all(np.diff(tail) < 0):
            lasso_limit = True
    return PhaseDiagram(lambdas, a_values, grid, a_at, a_rs, imse_lam, imse_eps, global_min,
                        lasso_limit)


def a_imse_line(diagram: PhaseDiagram) -> np.ndarray:
    """a_IMSE as a function of lambda, by inverting the per-a minimiser lambda_IMSE(a).

    Interpolates linearly in (log lambda, log a) between neighbouring a-grid
    points whose lambda_IMSE values bracket the requested lambda; nan where the
    traced range does not cover it.
    """
    lam_a = np.asarray(diagram.imse_lambda, dtype=float)
    a = np.asarray(diagram.a_values, dtype=float)
    out = np.full(len(diagram.lambdas), np.nan)
    for i, lam in enumerate(diagram.lambdas):
        for j in range(len(a) - 1):
            l0, l1 = lam_a[j], lam_a[j + 1]
            if not (np.isfinite(l0) and np.isfinite(l1)) or l0 == l1:
                continue
            if min(l0, l1) <= lam <= max(l0, l1):
                t = (math.log(lam) - math.log(l0)) / (math.log(l1) - math.log(l0))
                out[i] = math.exp((1 - t) * math.log(a[j]) + t * math.log(a[j + 1]))
                break
    return out


def roc_along_imse(ensemble: EnsembleParams, kind, a_values, lambdas, **kw):
    """Per a: (lambda_IMSE, eps_x, TP, FP, R, min over lambda of R)."""
    kind = Kind.parse(kind)
    rows = []
    for a in a_values:
        sols = sweep_lambda(ensemble, a, kind, lambdas, **kw)
        lam_star, eps = imse_minimum(ensemble, kind, a, lambdas, solutions=sols, **kw)
        R_vals = [s.observables["R"] for s in sols if s.ok]
        r_min = min(R_vals) if R_vals else math.nan
        if math.isnan(lam_star):
            rows.append((a, math.nan, math.nan, math.nan, math.nan, math.nan, r_min))
            continue
        s = solve_rs(ensemble, PenaltySpec(kind, lam_star, a), **kw)
        o = s.observables if s.ok else {}
        rows.append((a, lam_star, eps, o.get("TP", math.nan), o.get("FP", math.nan),
                     o.get("R", math.nan), r_min))
    return rows
