import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from implied_impact.exceptions import ArityError, DomainError
from implied_impact.game import (
    GameSpec,
    best_response,
    compare_myopic,
    constant_kernel_closed_form,
    expected_cost,
    fundamental_solutions,
    multi_agent_equilibrium,
    myopic_equilibrium,
    shape_report,
    solve_game,
    two_agent_equilibrium,
)
from implied_impact.kernels import ConstantKernel, ExponentialKernel, TimeGrid, build_matrices


def _game(n=25, g1=1.0, theta=1.0, inventories=(1.0, 0.0), kernel=None):
    kernel = kernel or ConstantKernel(g1)
    return GameSpec(TimeGrid.equispaced(n), kernel, theta, list(inventories))


class TestGameSpec:
    def test_json_round_trip(self):
        spec = _game(inventories=(1.0, -0.5, 0.2))
        back = GameSpec.from_json(spec.to_json())
        assert back.to_dict() == spec.to_dict()
        assert json.loads(spec.to_json())["kernel"]["family"] == "constant"

    def test_requires_two_agents(self):
        with pytest.raises(ArityError):
            _game(inventories=(1.0,))

    def test_rejects_zero_theta(self):
        with pytest.raises(DomainError):
            _game(theta=0.0)


class TestFundamentalSolutions:
    def test_two_point(self):
        mats = build_matrices(ConstantKernel(1.0), TimeGrid.equispaced(1), 1.0)
        v, w = fundamental_solutions(mats)
        np.testing.assert_allclose(v, [0.625, 0.375], atol=1e-14)
        np.testing.assert_allclose(w, [0.375, 0.625], atol=1e-14)

    def test_spike_at_threshold(self):
        mats = build_matrices(ConstantKernel(2.0), TimeGrid.equispaced(10), 0.5)
        v, w = fundamental_solutions(mats)
        np.testing.assert_allclose(v, np.eye(11)[0], atol=1e-12)
        np.testing.assert_allclose(w, np.eye(11)[-1], atol=1e-12)

    @pytest.mark.parametrize("n", [1, 5, 25])
    def test_closed_form(self, n):
        v, w = constant_kernel_closed_form(1.0, 1.0, n)
        vs, ws = fundamental_solutions(build_matrices(ConstantKernel(1.0), TimeGrid.equispaced(n), 1.0))
        np.testing.assert_allclose(v, vs, atol=1e-10)
        np.testing.assert_allclose(w, ws, atol=1e-10)
        assert v.sum() == pytest.approx(1.0, abs=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(g1=st.floats(0.1, 5.0), ratio=st.floats(0.26, 30.0), n=st.integers(1, 40))
    def test_time_reversal(self, g1, ratio, n):
        v, w = fundamental_solutions(build_matrices(ConstantKernel(g1), TimeGrid.equispaced(n), ratio * g1))
        np.testing.assert_allclose(v, w[::-1], atol=1e-9)


class TestTwoAgent:
    def test_directional_arbitrageur_decomposition(self, game25):
        v, w = game25.fundamental_v, game25.fundamental_w
        np.testing.assert_allclose(game25.strategies[0], 0.5 * (v + w), atol=1e-14)
        np.testing.assert_allclose(game25.strategies[1], 0.5 * (v - w), atol=1e-14)

    def test_symmetry(self, game25):
        d, a = game25.strategies
        np.testing.assert_allclose(d, d[::-1], atol=1e-10)
        np.testing.assert_allclose(a, -a[::-1], atol=1e-10)

    def test_inventory_constraint(self):
        eq = two_agent_equilibrium(_game(inventories=(0.7, -1.3), theta=0.4))
        np.testing.assert_allclose(eq.strategies.sum(axis=1), [0.7, -1.3], atol=1e-10)

    def test_zero_inventories(self):
        eq = two_agent_equilibrium(_game(inventories=(0.0, 0.0)))
        np.testing.assert_array_equal(eq.strategies, 0.0)

    def test_wrong_arity(self):
        with pytest.raises(ArityError):
            two_agent_equilibrium(_game(inventories=(1.0, 0.0, 0.0)))

    def test_matches_stacked_solve(self):
        spec = _game(inventories=(1.0, 0.3), kernel=ExponentialKernel(1.0, 2.0, 0.1), theta=0.6)
        a, b = two_agent_equilibrium(spec), multi_agent_equilibrium(spec)
        np.testing.assert_allclose(a.strategies, b.strategies, atol=1e-10)
        np.testing.assert_allclose(a.multipliers, b.multipliers, atol=1e-10)
        np.testing.assert_allclose(a.expected_costs, b.expected_costs, atol=1e-10)

    def test_csv(self, game25, tmp_path):
        path = game25.to_csv(tmp_path / "eq.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "t,agent_1,agent_2"
        assert len(lines) == 27

    def test_transaction_cost_limit(self):
        sups, devs = [], []
        for theta in (1.0, 10.0, 100.0):
            d, a = two_agent_equilibrium(_game(theta=theta)).strategies
            sups.append(np.max(np.abs(a)))
            devs.append(np.max(np.abs(d - 1 / 26)))
        assert sups[0] > sups[1] > sups[2]
        assert devs[0] > devs[1] > devs[2]

    def test_spike_only_at_threshold(self):
        d = two_agent_equilibrium(_game(theta=0.25)).strategies[0]
        np.testing.assert_allclose(d, np.r_[0.5, np.zeros(24), 0.5], atol=1e-12)
        d = two_agent_equilibrium(_game(theta=0.25 * 1.01)).strategies[0]
        assert np.max(d[1:-1]) > 1e-6


class TestMultiAgent:
    def test_three_agents(self):
        s = multi_agent_equilibrium(_game(inventories=(1.0, 0.0, 0.0))).strategies
        np.testing.assert_allclose(s[1], s[2], atol=1e-14)
        assert s[0, -1] > s[0, 0]

    @pytest.mark.parametrize("inventories", [(1.0, 0.0), (1.0, 0.0, 0.0), (1.0, 0.5, -0.2, 0.0, 0.0)])
    def test_best_response_fixed_point(self, inventories):
        spec = _game(inventories=inventories)
        eq = solve_game(spec)
        mats = spec.matrices()
        total = eq.strategies.sum(axis=0)
        for i, row in enumerate(eq.strategies):
            br = best_response(total - row, mats, spec.inventories[i])
            np.testing.assert_allclose(br, row, atol=1e-8)

    def test_first_order_conditions(self):
        spec = _game(inventories=(1.0, 0.0, 0.0))
        eq = multi_agent_equilibrium(spec)
        mats = spec.matrices()
        total = eq.strategies.sum(axis=0)
        for row, nu in zip(eq.strategies, eq.multipliers):
            grad = mats.gamma_theta @ row + mats.gamma_tilde @ (total - row)
            np.testing.assert_allclose(grad, nu, atol=1e-10)


class TestCosts:
    def test_examples(self, mats25, rng):
        eta = rng.normal(size=26)
        assert expected_cost(eta, np.zeros(26), mats25) == pytest.approx(0.5 * eta @ mats25.gamma_theta @ eta)
        assert expected_cost(np.zeros(26), eta, mats25) == 0.0

    def test_length_mismatch(self, mats25):
        with pytest.raises(ArityError):
            expected_cost(np.ones(3), np.ones(26), mats25)

    def test_perturbation_raises_cost(self, game25, mats25, rng):
        total = game25.strategies.sum(axis=0)
        for row in game25.strategies:
            base = expected_cost(row, total - row, mats25)
            for _ in range(20):
                delta = rng.normal(size=26)
                delta -= delta.mean()
                delta *= 1e-3 / np.linalg.norm(delta)
                assert expected_cost(row + delta, total - row, mats25) > base

    def test_best_response_reductions(self, mats25):
        np.testing.assert_allclose(best_response(np.zeros(26), mats25, 1.0), np.full(26, 1 / 26), atol=1e-14)
        np.testing.assert_array_equal(best_response(np.zeros(26), mats25, 0.0), 0.0)


class TestMyopic:
    def test_alpha_and_prices(self):
        out = myopic_equilibrium(1.0, 1.0, 100.0, 40.0)
        assert out.alpha == pytest.approx(2 / 7)
        assert out.price_ratio == pytest.approx(3 / 7)
        np.testing.assert_allclose(out.prices, 100.0 * (3 / 7) ** np.arange(out.prices.size), rtol=1e-14)
        assert out.trades.sum() == pytest.approx(40.0, abs=1e-12)
        np.testing.assert_allclose(out.trades[: out.n_rounds], out.alpha * out.prices[: out.n_rounds])

    def test_round_count(self):
        out = myopic_equilibrium(1.0, 1.0, 2.5, 1.0)
        assert out.n_rounds == 1 and out.residual
        assert out.trades.size == 2

    @pytest.mark.parametrize("args", [(1.0, 0.2, 10.0, 1.0), (1.0, 1.0, 1.0, 1.0), (1.0, 1.0, -1.0, 1.0)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            myopic_equilibrium(*args)

    @pytest.mark.parametrize("s0", [2.5, 10.0, 50.0])
    def test_suboptimal(self, s0):
        res = compare_myopic(1.0, 1.0, s0, 1.0)
        assert res["myopic_first_trade"] > res["equilibrium_first_trade"]
        assert res["myopic_total_cost"] >= res["equilibrium_total_cost"]


class TestShapeReport:
    def test_directional(self, game25):
        r = shape_report(game25.strategies[0])
        assert r.u_shaped

    def test_arbitrageur(self, game25):
        r = shape_report(game25.strategies[1])
        assert not r.symmetric and not r.positive

    def test_constant(self):
        r = shape_report(np.ones(6))
        assert r.symmetric and r.convex and not r.decreasing_first_half

    def test_too_short(self):
        with pytest.raises(ArityError):
            shape_report([1.0, 2.0])

    @settings(max_examples=30, deadline=None)
    @given(g1=st.floats(0.2, 4.0), ratio=st.floats(0.3, 20.0), n=st.integers(4, 40), x=st.floats(0.1, 10.0))
    def test_u_shape_above_threshold(self, g1, ratio, n, x):
        d = two_agent_equilibrium(_game(n=n, g1=g1, theta=ratio * g1, inventories=(x, 0.0))).strategies[0]
        # entries near the middle can sit at relative size a**(n/2); scale the tolerance
        r = shape_report(d / x, tol=1e-12)
        assert r.symmetric and r.positive and r.convex
        half = d[: (n + 1) // 2]
        assert np.all(np.diff(half) <= 1e-12 * x)
