import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import toeplitz

from implied_impact.exceptions import (
    DegenerateScheduleError,
    DomainError,
    NoLinearSolutionError,
)
from implied_impact.execution import ExecutionProblem, optimal_schedule
from implied_impact.game import GameSpec, constant_kernel_closed_form, two_agent_equilibrium
from implied_impact.implied_exec import (
    FitResult,
    build_h,
    cone_basis,
    fit_nonparametric,
    fit_parametric,
    kernel_from_solution,
    linear_condition_check,
    linear_condition_ratios,
    linear_implied_kernel,
    linear_implied_slope,
    linear_slope_closed_form,
    membership_residual,
    project_to_cone,
    schedule_from_lags,
    solve_h,
    solve_with_fixed,
)
from implied_impact.kernels import ConstantKernel, TimeGrid

TOEP = toeplitz([1.0, 0.6, 0.5, 0.2])


def _directional(n, g1=1.0, theta=1.0):
    grid = TimeGrid.equispaced(n)
    return two_agent_equilibrium(GameSpec(grid, ConstantKernel(g1), theta, [1.0, 0.0])).strategies[0]


@pytest.fixture(scope="module")
def worked_xi():
    y = np.linalg.solve(TOEP, np.ones(4))
    return y / y.sum()


class TestBuildH:
    def test_row_structure(self):
        xi = np.array([1.0, 2.0, 3.0, 4.0])
        h = build_h(xi).h
        np.testing.assert_array_equal(h[1], [2.0, 1.0 + 3.0, 4.0, 0.0])

    def test_single_trade(self):
        h = build_h([1.0, 0.0, 0.0, 0.0]).h
        g = np.array([4.0, 3.0, 2.0, 1.0])
        np.testing.assert_array_equal(h @ g, g)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 30), seed=st.integers(0, 2**32 - 1))
    def test_matches_toeplitz_product(self, n, seed):
        rng = np.random.default_rng(seed)
        xi, g = rng.normal(size=n), rng.normal(size=n)
        np.testing.assert_allclose(build_h(xi).h @ g, toeplitz(g) @ xi, atol=1e-12)


class TestWorkedExample:
    def test_schedule(self, worked_xi):
        np.testing.assert_allclose(worked_xi, np.array([5, 1, 1, 5]) / 12, atol=1e-12)

    def test_rank_and_family(self, worked_xi):
        sys = solve_h(worked_xi)
        assert sys.rank == 2 and sys.consistent
        g, res = solve_with_fixed(sys, {2: 0.0, 3: 0.0})
        np.testing.assert_allclose(g, [60 / 29, 48 / 29, 0.0, 0.0], atol=1e-12)
        assert res < 1e-12

    def test_printed_point(self, worked_xi):
        a, b = 0.8450704, 0.3380282
        g, _ = solve_with_fixed(solve_h(worked_xi), {2: a, 3: b})
        np.testing.assert_allclose(toeplitz(g), 1.6901408 * TOEP, atol=1e-5)

    def test_nullspace(self, worked_xi):
        sys = solve_h(worked_xi)
        np.testing.assert_allclose(sys.h @ sys.particular, 1.0, atol=1e-10)
        np.testing.assert_allclose(sys.h @ sys.nullspace_basis, 0.0, atol=1e-10)
        assert sys.nullspace_basis.shape == (4, 2)


class TestRankLaw:
    @pytest.mark.parametrize("n_points", [4, 5, 10, 11, 25, 26])
    def test_rank(self, n_points):
        sys = solve_h(_directional(n_points - 1))
        expected = n_points // 2 if n_points % 2 == 0 else (n_points - 1) // 2 + 1
        assert sys.rank == expected

    def test_solutions_reproduce_schedule(self, rng):
        xi = _directional(25)
        sys = solve_h(xi)
        for _ in range(5):
            g = sys.solution(rng.normal(size=sys.nullspace_basis.shape[1]) * 0.1)
            np.testing.assert_allclose(schedule_from_lags(g, 0.0, 1.0), xi, atol=1e-8)
            prob = ExecutionProblem(TimeGrid.equispaced(25), kernel_from_solution(g, 1.0), 1.0, 1.0)
            np.testing.assert_allclose(optimal_schedule(prob), xi, atol=1e-8)

    def test_shift_and_scale(self):
        xi = _directional(25)
        g = solve_h(xi).particular
        base = schedule_from_lags(g, 0.0, 1.0)
        np.testing.assert_allclose(schedule_from_lags(3.0 * g, 0.0, 1.0), base, atol=1e-10)
        np.testing.assert_allclose(schedule_from_lags(g + 0.7, 0.0, 1.0), base, atol=1e-10)

    def test_warns_on_non_u_shape(self):
        with pytest.warns(UserWarning, match="U-shaped"):
            solve_h([0.1, 0.5, 0.4])


class TestLinearKernel:
    def test_ratios(self):
        xi = _directional(25)
        a = 1 - 1 / 2.5
        ratios = linear_condition_ratios(xi, 1.0)
        assert ratios.size == 12
        np.testing.assert_allclose(ratios, (1 - a) ** 2 / (2 * a), atol=1e-10)
        assert linear_condition_check(xi, 1.0)

    def test_perturbed_fails(self):
        xi = _directional(25).copy()
        xi[3] += 0.01
        assert not linear_condition_check(xi, 1.0)
        with pytest.raises(NoLinearSolutionError):
            linear_implied_slope(xi, 1.0, 25, 1.0)

    def test_two_points(self):
        assert linear_condition_check([0.5, 0.5], 1.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateScheduleError):
            linear_condition_ratios([0.5, 0.1, 0.1, 0.3, 0.0], 1.0)
        with pytest.raises(DegenerateScheduleError):
            linear_condition_check([0.5, 0.1, 0.1, 0.3, 0.0], 1.0)

    def test_paper_slope(self):
        beta = linear_implied_slope(_directional(25), 1.0, 25, 1.0)
        assert beta == pytest.approx(-6.6667, abs=1e-3)
        assert beta == pytest.approx(linear_slope_closed_form(1.0, 1.0, 25), abs=1e-10)

    @pytest.mark.parametrize("theta", [0.3, 0.5, 2.0, 10.0])
    def test_negative(self, theta):
        assert linear_implied_slope(_directional(25, theta=theta), theta, 25, 1.0) < 0

    def test_monotone_in_g1(self):
        slopes = [abs(linear_slope_closed_form(g1, 1.0, 25)) for g1 in (0.5, 1.0, 2.0)]
        assert slopes[0] < slopes[1] < slopes[2]

    def test_closed_form_domain(self):
        with pytest.raises(DomainError):
            linear_slope_closed_form(1.0, 0.25, 25)

    def test_member_of_solution_space(self):
        xi = _directional(25)
        lin = linear_implied_kernel(xi, 1.0, 25, 1.0)
        grid = TimeGrid.equispaced(25)
        assert lin(grid.horizon) == pytest.approx(0.0, abs=1e-12)
        g = lin(grid.lags)
        g[0] += 2.0
        assert membership_residual(solve_h(xi), g) <= 1e-8

    @settings(max_examples=25, deadline=None)
    @given(g1=st.floats(0.2, 4.0), ratio=st.floats(0.3, 10.0), n=st.integers(3, 40))
    def test_slope_matches_closed_form(self, g1, ratio, n):
        theta = ratio * g1
        v, w = constant_kernel_closed_form(g1, theta, n)
        xi = 0.5 * (v + w)
        beta = linear_implied_slope(xi, theta, n, 1.0, tol=1e-6)
        assert beta == pytest.approx(linear_slope_closed_form(g1, theta, n), rel=1e-6)


@pytest.fixture(scope="module")
def target():
    return _directional(25)


class TestParametricFit:
    def test_polynomial(self, target):
        r = fit_parametric(target, "polynomial", TimeGrid.equispaced(25), 1.0, 1.0)
        assert r.converged
        assert r.params["alpha_1"] == pytest.approx(-6.6667, abs=0.01)
        assert r.residual_norm <= 1e-8

    def test_ordering(self, target):
        grid = TimeGrid.equispaced(25)
        res = {f: fit_parametric(target, f, grid, 1.0, 1.0).residual_norm for f in ("polynomial", "exponential", "power_law")}
        assert 8.38e-7 <= res["exponential"] <= 8.38e-5
        assert res["polynomial"] < res["exponential"] < res["power_law"]

    def test_kernel_vanishes_at_horizon(self, target):
        grid = TimeGrid.equispaced(25)
        for fam in ("polynomial", "exponential", "power_law"):
            r = fit_parametric(target, fam, grid, 1.0, 1.0)
            assert r.kernel_values(1.0) == pytest.approx(0.0, abs=1e-10)

    def test_ci_contains_estimate(self, target):
        r = fit_parametric(target, "exponential", TimeGrid.equispaced(25), 1.0, 1.0)
        for name, (lo, hi) in r.ci95.items():
            assert lo <= r.params[name] <= hi

    def test_json(self, target):
        r = fit_parametric(target, "exponential", TimeGrid.equispaced(25), 1.0, 1.0)
        data = json.loads(r.to_json())
        assert set(data["parameters"]) == {"lambda", "rho"}
        assert set(data["parameters"]["rho"]) == {"estimate", "se", "ci95"}
        back = FitResult.from_json(r.to_json())
        assert back.params == r.params

    def test_max_iter_flag(self, target):
        r = fit_parametric(target, "power_law", TimeGrid.equispaced(25), 1.0, 1.0, max_iter=2)
        assert not r.converged and r.n_iter == 2

    def test_unknown_family(self, target):
        with pytest.raises(DomainError):
            fit_parametric(target, "cubic", TimeGrid.equispaced(25), 1.0, 1.0)


class TestNonparametricFit:
    def test_cone_basis(self):
        lb = cone_basis(5)
        c = np.array([0.0, 1.0, 0.0, 2.0])
        g = lb @ c
        assert g[-1] == 0.0
        assert np.all(np.diff(g) <= 0) and np.all(np.diff(g, 2) >= 0)

    def test_projection_is_feasible(self, rng):
        c, lb = project_to_cone(rng.normal(size=10))
        g = lb @ c
        assert np.all(c >= 0) and g[-1] == 0.0

    def test_linear_start_is_fixed_point(self, target):
        grid = TimeGrid.equispaced(25)
        k = fit_nonparametric(target, 6.6666666666666667 * (1 - grid.times), grid, 1.0, 1.0)
        assert k.diagnostics["n_iter"] == 0
        assert k.diagnostics["schedule_error"] <= 1e-10

    def test_exponential_start(self, target):
        grid = TimeGrid.equispaced(25)
        start = 5.0 * (np.exp(-2.0 * grid.times) - np.exp(-2.0))
        k = fit_nonparametric(target, start, grid, 1.0, 1.0)
        assert k.diagnostics["schedule_error"] <= 1e-4
        assert np.max(np.abs(k.g - 6.6667 * (1 - grid.times))) <= 0.2
        again = fit_nonparametric(target, k, grid, 1.0, 1.0)
        assert again.diagnostics["schedule_error"] <= 1e-6

    def test_shape_mismatch(self, target):
        with pytest.raises(DomainError):
            fit_nonparametric(target, np.ones(5), TimeGrid.equispaced(25), 1.0, 1.0)
