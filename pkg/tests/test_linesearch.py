"""Line-search kernels exercised on analytic slope/objective profiles."""

import numpy as np
import pytest

from pffrac.errors import NotDescentDirectionError
from pffrac.solver import (
    LineSearchSettings,
    backtracking_line_search,
    bisection_line_search,
    secant_line_search,
)


class TestBisection:
    def test_full_step_when_slope_stays_negative(self):
        # Quadratic with its minimum at lam = 2: slope negative on [0, 1].
        calls = []

        def slope(lam):
            calls.append(lam)
            return lam - 2.0

        lam, trace = bisection_line_search(slope, 1.0, LineSearchSettings())
        assert lam == 1.0
        assert trace.exit_reason == "no-sign-change"
        assert trace.iterates == []  # zero bisection iterations
        assert calls == [0.0, 1.0]

    def test_quadratic_minimum_inside(self):
        lam, trace = bisection_line_search(lambda x: x - 0.3, 1.0,
                                           LineSearchSettings())
        assert abs(lam - 0.3) <= 1e-6
        assert len(trace.iterates) <= 20
        # Contraction: every iterate sits within 2^-l of the final one.
        for l, it in enumerate(trace.iterates, start=1):
            assert abs(it - lam) <= 2.0**-l
        # Bracket widths halve exactly.
        for w0, w1 in zip(trace.widths, trace.widths[1:]):
            assert w1 == w0 / 2.0

    def test_kinked_convex_slope(self):
        # Piecewise-linear increasing slope with a kink, negative at 0,
        # positive at 1; root at a non-dyadic point.
        def slope(lam):
            if lam < 0.37:
                return -1.0 + 1.5 * lam
            return -0.445 + 8.0 * (lam - 0.37)

        root = 0.37 + 0.445 / 8.0
        lam, trace = bisection_line_search(slope, 1.0, LineSearchSettings())
        assert trace.exit_reason in ("atol", "ltol")
        if trace.exit_reason == "atol":
            assert abs(slope(lam)) <= 1e-12
        else:
            assert abs(lam - root) <= 2e-6

    def test_exact_root_at_one_accepts_full_step(self):
        lam, trace = bisection_line_search(lambda x: x - 1.0, 1.0,
                                           LineSearchSettings())
        assert lam == 1.0
        assert trace.exit_reason == "no-sign-change"

    def test_non_descent_rejected(self):
        with pytest.raises(NotDescentDirectionError):
            bisection_line_search(lambda x: 0.5 + x, 1.0, LineSearchSettings())

    def test_atol_exit_on_flat_slope(self):
        # Slope collapses to ~0 right after the first midpoint.
        def slope(lam):
            if lam == 0.0:
                return -1.0
            if lam == 1.0:
                return 1.0
            return 1e-15

        lam, trace = bisection_line_search(slope, 1.0, LineSearchSettings())
        assert trace.exit_reason == "atol"
        assert lam == 0.5


class TestBacktracking:
    def test_full_step_accepted_first(self):
        # Residual-norm objective of a linear problem: the full Newton step
        # zeroes it, so Armijo with mu = 1e-4 accepts lam = 1 on one check.
        evals = []

        def objective(lam):
            evals.append(lam)
            return (lam - 1.0) ** 2

        lam, trace = backtracking_line_search(objective, 1.0, -2.0,
                                              LineSearchSettings(),
                                              "backtracking-residual")
        assert lam == 1.0
        assert len(evals) == 1
        assert not trace.failed

    def test_known_armijo_region(self):
        # Cubic with sufficient-decrease boundary at lam ~ 0.44: the full
        # step and one halving fail, the second halving passes.
        def objective(lam):
            return 0.1 * lam**3 + 2.2 * lam**2 - lam

        settings = LineSearchSettings(mu=1e-4)
        lam, trace = backtracking_line_search(objective, 0.0, -1.0, settings,
                                              "backtracking-energy")
        assert lam == 0.25
        assert trace.iterates == [1.0, 0.5, 0.25]

    def test_cap_with_failure_flag(self):
        lam, trace = backtracking_line_search(lambda x: x, 0.0, -1.0,
                                              LineSearchSettings(),
                                              "backtracking-residual")
        assert lam == 2.0**-10
        assert trace.failed
        assert trace.n_objective_evals == 11


class TestSecant:
    @pytest.mark.parametrize("variant", ["secant-l2", "secant-energy"])
    def test_quadratic_exact_objective(self, variant):
        objective = lambda lam: (lam - 0.3) ** 2
        lam, trace = secant_line_search(LineSearchSettings(), variant,
                                        objective=objective)
        assert lam == pytest.approx(0.3, abs=1e-12)
        # The minimizer is reached within two iterates.
        reached = [it for it in trace.iterates[:2]]
        assert any(abs(v - 0.3) < 1e-12 for v in reached + [lam])

    def test_quadratic_exact_cp(self):
        slope = lambda lam: 2.0 * (lam - 0.3)
        lam, trace = secant_line_search(LineSearchSettings(), "secant-cp",
                                        slope=slope, dw_norm=1.0)
        assert lam == pytest.approx(0.3, abs=1e-12)
        assert len(trace.iterates) <= 2

    def test_clamped_to_one(self):
        slope = lambda lam: lam - 3.0
        lam, _ = secant_line_search(LineSearchSettings(), "secant-cp",
                                    slope=slope, dw_norm=1.0)
        assert lam == 1.0

    def test_curvature_fallback_halving(self):
        # Constant slope: curvature is exactly zero, every update halves.
        lam, trace = secant_line_search(LineSearchSettings(), "secant-cp",
                                        slope=lambda x: -1.0, dw_norm=1.0)
        assert trace.fallbacks > 0
        assert 0.0 < lam <= 1.0

    def test_cp_on_kink_documented_against_bisection(self):
        # The kinked profile of the bisection test: the critical-point
        # secant may stop farther from the root; record both, no hard bound.
        def slope(lam):
            if lam < 0.37:
                return -1.0 + 1.5 * lam
            return -0.445 + 8.0 * (lam - 0.37)

        lam_cp, _ = secant_line_search(LineSearchSettings(), "secant-cp",
                                       slope=slope, dw_norm=1.0)
        lam_bs, _ = bisection_line_search(slope, 1.0, LineSearchSettings())
        assert 0.0 < lam_cp <= 1.0
        root = 0.37 + 0.445 / 8.0
        assert abs(lam_bs - root) <= 2e-6
        print(f"kinked profile: |slope| at secant-cp {abs(slope(lam_cp)):.3e}, "
              f"at bisection {abs(slope(lam_bs)):.3e}")
