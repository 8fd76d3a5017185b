import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsecv.datagen import EnsembleParams
from sparsecv.penalty import ParameterError, PenaltySpec
from sparsecv.replica import (NonExistent, Status, a_boundaries, a_imse_line,
                              at_condition, at_lambda, branch_integrals, eos_rhs, first_failures,
                              imse_minimum, initial_order, phase_boundaries, roc_along_imse,
                              sigma_mixture, solve_eos, solve_rs, sweep_lambda, xi_closed_form)
from oracle_values import XI_MPMATH

STD = EnsembleParams(0.5, 0.2, 0.1)
FIELDS = ("rho_hat_contrib", "xi1", "xi2", "xi3", "xi4")


def spec_of(kind, lam, a):
    return PenaltySpec(kind, lam, math.inf if a is None else a)


class TestBranchIntegrals:
    @pytest.mark.parametrize("key", list(XI_MPMATH))
    def test_closed_form_vs_mpmath(self, key):
        sigma, Qh, kind, lam, a = key
        got = xi_closed_form(sigma, Qh, spec_of(kind, lam, a))
        for name, want in zip(FIELDS, XI_MPMATH[key]):
            assert getattr(got, name) == pytest.approx(want, rel=1e-12, abs=1e-14), name

    @pytest.mark.parametrize("key", list(XI_MPMATH))
    def test_quadrature_vs_mpmath(self, key):
        sigma, Qh, kind, lam, a = key
        got = branch_integrals(sigma, Qh, spec_of(kind, lam, a))
        for name, want in zip(FIELDS, XI_MPMATH[key]):
            assert getattr(got, name) == pytest.approx(want, abs=1e-10), name

    @settings(max_examples=300)
    @given(st.sampled_from(["scad", "mcp", "lasso"]), st.floats(0.05, 5), st.floats(0.01, 5),
           st.floats(0.0, 20), st.floats(0.01, 1.0))
    def test_closed_form_vs_quadrature(self, kind, sigma, lam, a_extra, gap):
        # Qh stays at least 0.01 above the existence limit
        if kind == "scad":
            a = 1.05 + a_extra
            c = 1 / (a - 1)
        elif kind == "mcp":
            a = 0.2 + a_extra
            c = 1 / a
        else:
            a, c = math.inf, 0.0
        Qh = c + 0.01 + gap
        spec = PenaltySpec(kind, lam, a)
        cf = xi_closed_form(sigma, Qh, spec)
        qd = branch_integrals(sigma, Qh, spec)
        for name in FIELDS:
            assert abs(getattr(cf, name) - getattr(qd, name)) <= 1e-8, name

    def test_existence_limit(self):
        with pytest.raises(NonExistent):
            xi_closed_form(1.0, 0.5, PenaltySpec("scad", 1.0, 3.0))
        with pytest.raises(NonExistent):
            xi_closed_form(1.0, 0.25, PenaltySpec("mcp", 1.0, 4.0))
        xi_closed_form(1.0, 1e-3, PenaltySpec("lasso", 1.0))

    def test_zero_sigma(self):
        b = xi_closed_form(0.0, 0.8, PenaltySpec("scad", 1.0, 3.0))
        assert b.rho_hat_contrib == 0.0 and b.xi1 == 0.0

    def test_sigma_mixture(self):
        lo, hi, rho = sigma_mixture(STD, 0.25, 1.0)
        assert (lo, rho) == (0.5, 0.2)
        assert hi == pytest.approx(math.sqrt(0.25 + 5.0))
        with pytest.raises(ParameterError):
            sigma_mixture(STD, -1.0, 1.0)


class TestFixedPoint:
    def test_trivial_fast(self):
        sol = solve_eos(STD, PenaltySpec("scad", 20.0, 3.0))
        assert sol.ok and sol.iterations < 50
        assert sol.params.Q < 1e-9 and sol.at_stable

    @pytest.mark.parametrize("kind,a", [("scad", 3.0), ("mcp", 3.0), ("lasso", math.inf),
                                        ("scad", 8.0)])
    def test_residual_and_bounds(self, kind, a):
        for lam in (3.0, 1.5, 1.1):
            spec = PenaltySpec(kind, lam, a)
            sol = solve_rs(STD, spec)
            assert sol.ok
            rhs = eos_rhs(sol.params, STD, spec).as_array()
            assert np.max(np.abs(rhs - sol.params.as_array())) < 10 * 1e-10
            assert 0 < sol.params.Qh <= 1

    @settings(max_examples=40)
    @given(st.sampled_from(["scad", "mcp"]), st.floats(0.05, 3.0), st.floats(0.1, 0.99))
    def test_non_existent_below_limit(self, kind, lam, frac):
        a = (2.0 if kind == "scad" else 1.0) * frac
        if kind == "scad":
            a = max(a, 1.0 + 1e-3)
        sol = solve_eos(STD, PenaltySpec(kind, lam, a))
        assert sol.status is Status.NON_EXISTENT
        assert solve_rs(STD, PenaltySpec(kind, lam, a)).status is Status.NON_EXISTENT

    def test_observables_consistency(self):
        sol = solve_rs(STD, PenaltySpec("scad", 1.2, 3.0))
        p, o = sol.params, sol.observables
        assert o["eps_y"] == p.chih / 2
        assert o["eps_x"] == (STD.signal_power - 2 * p.m + p.Q) / 2
        assert o["R"] == (o["TP"] - 1) ** 2 + o["FP"] ** 2
        assert 0 < o["FP"] < o["TP"] < 1

    def test_trivial_onset(self):
        # rho_hat, TP and FP are erfc tails: they vanish as lambda grows past the noise scale
        sols = sweep_lambda(STD, 3.0, "scad", np.geomspace(40, 2, 20))
        rho = [s.observables["rho_hat"] for s in sols]
        assert np.all(np.diff(rho) >= 0)
        top = sols[0]
        s_plus = math.sqrt(top.params.chih + top.params.mh ** 2 * STD.sigma_x2)
        assert 40 > 7.5 * s_plus
        assert max(rho[0], top.observables["TP"], top.observables["FP"]) < 1e-12

    def test_initial_order(self):
        o = initial_order(STD)
        assert (o.chi, o.Q, o.m) == (0.0, 1.0, 0.5)
        assert o.Qh == 1.0

    def test_bad_args(self):
        with pytest.raises(ParameterError):
            solve_eos(STD, PenaltySpec("scad", 1, 3), damping=0)
        with pytest.raises(ParameterError):
            solve_eos(STD, PenaltySpec("scad", 1, 3), tol=0)
        with pytest.raises(ParameterError):
            sweep_lambda(STD, 3.0, "scad", [0.1, 1.0])

    def test_max_iter_status(self):
        sol = solve_eos(STD, PenaltySpec("scad", 1.0, 3.0), max_iter=2)
        assert sol.status is Status.MAX_ITER


class TestSweep:
    def test_trivial_grid(self):
        sols = sweep_lambda(STD, 3.0, "scad", np.geomspace(50, 20, 5))
        assert all(s.ok and s.at_stable for s in sols)
        assert first_failures(sols) == (None, None)

    def test_at_crossing_bisection(self):
        sols = sweep_lambda(STD, 3.0, "scad", np.geomspace(3, 0.75, 30))
        _, k = first_failures(sols)
        assert k is not None
        lam = at_lambda(STD, 3.0, "scad", sols[k - 1].lam, sols[k].lam, rtol=1e-6)
        assert 1.0 < lam < 1.1
        s_hi = solve_rs(STD, PenaltySpec("scad", lam * (1 + 1e-4), 3.0))
        s_lo = solve_rs(STD, PenaltySpec("scad", lam * (1 - 1e-4), 3.0))
        assert s_hi.at_stable and not s_lo.at_stable

    def test_at_lhs_matches_condition(self):
        spec = PenaltySpec("mcp", 1.5, 3.0)
        sol = solve_rs(STD, spec)
        assert at_condition(sol, STD, spec) == (sol.at_lhs, sol.at_stable)


class TestPhase:
    def test_nothing_below_two(self):
        d = phase_boundaries(STD, "scad", np.geomspace(10, 0.05, 8), np.linspace(1.2, 1.95, 6),
                             refine=False)
        assert all(s.status is Status.NON_EXISTENT for _, _, s in d.grid)
        assert np.all(np.isnan(d.a_rs)) and d.global_min is None

    def test_boundaries_order(self):
        lam = 1.0
        a_at, a_rs = a_boundaries(STD, "scad", lam, np.linspace(2.05, 6, 12))
        assert 2 <= a_rs <= a_at

    def test_strong_noise_lasso_limit(self):
        d = phase_boundaries(EnsembleParams(0.5, 0.2, 1.0), "scad", np.geomspace(10, 0.05, 25),
                             np.geomspace(2.5, 1000, 14))
        assert d.lasso_limit_minimum
        lasso = imse_minimum(EnsembleParams(0.5, 0.2, 1.0), "lasso", math.inf,
                             np.geomspace(10, 0.05, 25))
        assert d.global_min["eps_x"] >= lasso[1]

    def test_weak_noise_reentrance(self):
        sols = sweep_lambda(EnsembleParams(0.5, 0.2, 1e-4), 2.8, "scad", np.geomspace(10, 1e-3, 400))
        st = np.array([s.ok and s.at_stable for s in sols])
        assert np.count_nonzero(st[1:] != st[:-1]) == 3

    def test_imse_line(self):
        d = phase_boundaries(STD, "scad", np.geomspace(5, 0.1, 20), np.geomspace(3, 40, 8))
        line = a_imse_line(d)
        ok = np.isfinite(line)
        assert ok.any()
        assert np.all((line[ok] >= 3) & (line[ok] <= 40))

    def test_roc_rows(self):
        rows = roc_along_imse(STD, "scad", [4.0, 10.0], np.geomspace(5, 0.1, 25))
        for a, lam, eps, tp, fp, R, rmin in rows:
            assert R == pytest.approx((tp - 1) ** 2 + fp ** 2)
            assert 0 <= rmin <= 1 and 0 < lam < 5
