"""Nash equilibria of the discrete-time market impact game.

``J`` risk-neutral agents trade on a common grid. Agent ``i`` chooses trades
``xi_i`` summing to its inventory ``X_i`` and pays in expectation

    1/2 xi_i' Gamma_theta xi_i + xi_i' Gamma_tilde (sum of the others' trades)

so the equilibrium is the solution of one linear first-order system.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._linalg import solve_checked
from ._validation import as_vector, check_n_steps, check_same_length, check_scalar
from .exceptions import ArityError, DomainError
from .io import write_columns
from .kernels import (
    ConstantKernel,
    TimeGrid,
    build_matrices,
    kernel_from_dict,
)


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Grid, kernel, temporary impact and one inventory per agent."""

    grid: TimeGrid
    kernel: object
    theta: float
    inventories: np.ndarray

    def __post_init__(self):
        check_scalar(self.theta, "theta", lower=0.0, strict_lower=True)
        inv = as_vector(self.inventories, "inventories")
        if inv.size < 2:
            raise ArityError(f"a game needs at least two agents, got {inv.size}")
        inv.setflags(write=False)
        object.__setattr__(self, "inventories", inv)

    @property
    def n_agents(self):
        return self.inventories.size

    def matrices(self):
        return build_matrices(self.kernel, self.grid, self.theta)

    def to_dict(self):
        return {
            "grid": self.grid.to_dict(),
            "kernel": self.kernel.to_dict(),
            "theta": self.theta,
            "inventories": self.inventories.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            grid=TimeGrid.from_dict(data["grid"]),
            kernel=kernel_from_dict(data["kernel"]),
            theta=float(data["theta"]),
            inventories=data["inventories"],
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class Equilibrium:
    """Equilibrium trades, one row per agent."""

    strategies: np.ndarray
    multipliers: np.ndarray
    expected_costs: np.ndarray
    fundamental_v: np.ndarray | None = None
    fundamental_w: np.ndarray | None = None
    grid: TimeGrid | None = field(default=None, repr=False)

    @property
    def n_agents(self):
        return self.strategies.shape[0]

    def columns(self):
        times = self.grid.times if self.grid is not None else np.arange(self.strategies.shape[1])
        cols = {"t": times}
        for i, row in enumerate(self.strategies, start=1):
            cols[f"agent_{i}"] = row
        return cols

    def to_csv(self, path):
        return write_columns(path, self.columns())

    def to_dict(self):
        out = {
            "strategies": self.strategies.tolist(),
            "multipliers": self.multipliers.tolist(),
            "expected_costs": self.expected_costs.tolist(),
        }
        if self.fundamental_v is not None:
            out["fundamental_v"] = self.fundamental_v.tolist()
            out["fundamental_w"] = self.fundamental_w.tolist()
        return out


@dataclass(frozen=True)
class MyopicOutcome:
    """Trades of each myopic agent (both trade identically)."""

    alpha: float
    trades: np.ndarray
    prices: np.ndarray
    n_rounds: int
    total_cost: float
    residual: bool

    @property
    def price_ratio(self):
        return float(self.prices[1] / self.prices[0]) if self.prices.size > 1 else float("nan")


@dataclass(frozen=True)
class ShapeReport:
    symmetric: bool
    positive: bool
    decreasing_first_half: bool
    convex: bool

    @property
    def u_shaped(self):
        return self.symmetric and self.positive and self.decreasing_first_half and self.convex


def _ones(n):
    return np.ones(n)


def fundamental_solutions(mats):
    """``v = (Gamma_theta + Gamma_tilde)^-1 e`` and ``w = (Gamma_theta - Gamma_tilde)^-1 e``,
    each normalised to sum one."""
    e = _ones(mats.n_points)
    v = solve_checked(mats.gamma_theta + mats.gamma_tilde, e, "Gamma_theta + Gamma_tilde")
    w = solve_checked(mats.gamma_theta - mats.gamma_tilde, e, "Gamma_theta - Gamma_tilde")
    return v / v.sum(), w / w.sum()


def constant_kernel_closed_form(g1, theta, n):
    """Closed-form fundamental solutions for ``G = g1`` on ``n + 1`` points.

    ``v_k = a**(k-1) / (lam (1 - a**(n+1)))`` with ``lam = 2 theta / g1 + 1/2``
    and ``a = 1 - 1 / lam``; ``w`` is ``v`` reversed.
    """
    g1 = check_scalar(g1, "g1", lower=0.0, strict_lower=True)
    theta = check_scalar(theta, "theta", lower=0.0, strict_lower=True)
    n = check_n_steps(n)
    lam = 2.0 * theta / g1 + 0.5
    a = 1.0 - 1.0 / lam
    v = a ** np.arange(n + 1) / (lam * (1.0 - a ** (n + 1)))
    return v, v[::-1].copy()


def expected_cost(own, others_sum, mats):
    """``1/2 own' Gamma_theta own + own' Gamma_tilde others_sum``."""
    own = as_vector(own, "own")
    others_sum = as_vector(others_sum, "others_sum")
    check_same_length(own, others_sum, np.empty(mats.n_points), names=("own", "others_sum", "grid"))
    return float(0.5 * own @ mats.gamma_theta @ own + own @ mats.gamma_tilde @ others_sum)


def _costs(strategies, mats):
    total = strategies.sum(axis=0)
    return np.array([expected_cost(row, total - row, mats) for row in strategies])


def best_response(others_sum, mats, inventory):
    """Cost-minimising trades against fixed opponents, subject to ``e' xi = inventory``."""
    others_sum = as_vector(others_sum, "others_sum")
    check_same_length(others_sum, np.empty(mats.n_points), names=("others_sum", "grid"))
    inventory = check_scalar(inventory, "inventory")
    e = _ones(mats.n_points)
    rhs = np.column_stack([e, mats.gamma_tilde @ others_sum])
    sol = solve_checked(mats.gamma_theta, rhs, "Gamma_theta")
    p, q = sol[:, 0], sol[:, 1]
    nu = (inventory + e @ q) / (e @ p)
    return nu * p - q


def stacked_kkt(own, cross, constraint, inventories):
    """Solve the coupled first-order system of a linear-quadratic game.

    For each agent ``i``::

        own @ x_i + cross @ sum_{j != i} x_j - constraint.T @ nu_i = 0
        constraint @ x_i = inventories[i]

    Parameters
    ----------
    own, cross : ndarray, shape (n, n)
    constraint : ndarray, shape (c, n)
    inventories : ndarray, shape (J, c)

    Returns
    -------
    x : ndarray, shape (J, n)
    nu : ndarray, shape (J, c)
    """
    inventories = np.atleast_2d(np.asarray(inventories, dtype=float))
    n_agents = inventories.shape[0]
    n = own.shape[0]
    c = constraint.shape[0]
    coupling = np.ones((n_agents, n_agents)) - np.eye(n_agents)
    top_left = np.kron(np.eye(n_agents), own) + np.kron(coupling, cross)
    bottom_left = np.kron(np.eye(n_agents), constraint)
    kkt = np.block(
        [
            [top_left, -bottom_left.T],
            [bottom_left, np.zeros((n_agents * c, n_agents * c))],
        ]
    )
    rhs = np.concatenate([np.zeros(n_agents * n), inventories.ravel()])
    sol = solve_checked(kkt, rhs, "stacked equilibrium system")
    return sol[: n_agents * n].reshape(n_agents, n), sol[n_agents * n :].reshape(n_agents, c)


def two_agent_equilibrium(spec):
    """Two-agent equilibrium from the fundamental solutions ``v`` and ``w``."""
    if spec.n_agents != 2:
        raise ArityError(f"two_agent_equilibrium needs J = 2, got {spec.n_agents}")
    mats = spec.matrices()
    v, w = fundamental_solutions(mats)
    x1, x2 = spec.inventories
    strategies = np.vstack(
        [0.5 * (x1 + x2) * v + 0.5 * (x1 - x2) * w, 0.5 * (x1 + x2) * v - 0.5 * (x1 - x2) * w]
    )
    total = strategies.sum(axis=0)
    # first-order residuals are constant vectors; their mean is the multiplier
    nu = np.array(
        [np.mean(mats.gamma_theta @ row + mats.gamma_tilde @ (total - row)) for row in strategies]
    )
    return Equilibrium(strategies, nu, _costs(strategies, mats), v, w, spec.grid)


def multi_agent_equilibrium(spec):
    """Equilibrium of the ``J``-agent game via one dense KKT solve."""
    mats = spec.matrices()
    e = _ones(mats.n_points)
    x, nu = stacked_kkt(
        mats.gamma_theta, mats.gamma_tilde, e[None, :], spec.inventories[:, None]
    )
    v = w = None
    if spec.n_agents == 2:
        v, w = fundamental_solutions(mats)
    return Equilibrium(x, nu[:, 0], _costs(x, mats), v, w, spec.grid)


def solve_game(spec):
    """Dispatch: fundamental-solution formula for two agents, KKT otherwise."""
    if spec.n_agents == 2:
        return two_agent_equilibrium(spec)
    return multi_agent_equilibrium(spec)


def myopic_equilibrium(g, theta, s0, inventory):
    """Myopic game with constant impact ``g``.

    Each agent trades the fraction ``alpha = 2 / (3 g + 4 theta)`` of the
    current price deviation, which then shrinks by ``1 - 2 alpha g`` per
    round. The number of full rounds is rounded down and a final residual
    trade clears whatever inventory is left.
    """
    g = check_scalar(g, "g", lower=0.0, strict_lower=True)
    theta = check_scalar(theta, "theta", lower=0.0, strict_lower=True)
    s0 = check_scalar(s0, "s0", lower=0.0, strict_lower=True)
    inventory = check_scalar(inventory, "inventory", lower=0.0)
    if theta <= g / 4.0:
        raise DomainError(f"myopic game needs theta > g/4, got theta={theta}, g={g}")
    reach = 1.0 - 2.0 * inventory * g / s0
    if reach <= 0.0:
        raise DomainError(
            f"inventory {inventory} cannot be liquidated from s0={s0} (1 - 2 X g / s0 = {reach:.3g})"
        )
    alpha = 2.0 / (3.0 * g + 4.0 * theta)
    ratio = 1.0 - 2.0 * alpha * g
    exact_rounds = math.log(reach) / math.log(ratio) if inventory > 0 else 0.0
    n_rounds = int(math.floor(exact_rounds + 1e-12))
    prices = s0 * ratio ** np.arange(n_rounds + 1)
    trades = alpha * prices[:n_rounds]
    left = inventory - trades.sum()
    residual = abs(left) > 1e-12 * max(1.0, inventory)
    if residual:
        trades = np.append(trades, left)
    else:
        prices = prices[:n_rounds]
    mats = build_matrices(ConstantKernel(g), TimeGrid.equispaced(max(trades.size - 1, 1)), theta)
    padded = np.zeros(mats.n_points)
    padded[: trades.size] = trades
    total_cost = 2.0 * expected_cost(padded, padded, mats)
    return MyopicOutcome(alpha, trades, prices, n_rounds, total_cost, bool(residual))


def compare_myopic(g, theta, s0, inventory, n_steps=25):
    """Myopic pair against the equilibrium pair with the same inventories.

    Both schedules live on an ``n_steps + 1`` point grid; the myopic trades
    are zero-padded (or truncated) to that length before costing.
    """
    outcome = myopic_equilibrium(g, theta, s0, inventory)
    grid = TimeGrid.equispaced(n_steps)
    mats = build_matrices(ConstantKernel(g), grid, theta)
    myopic = np.zeros(grid.n_points)
    k = min(outcome.trades.size, grid.n_points)
    myopic[:k] = outcome.trades[:k]
    if outcome.trades.size > grid.n_points:
        myopic[-1] += outcome.trades[grid.n_points :].sum()
    v, _ = fundamental_solutions(mats)
    sz = inventory * v
    return {
        "myopic_first_trade": float(myopic[0]),
        "equilibrium_first_trade": float(sz[0]),
        "myopic_total_cost": 2.0 * expected_cost(myopic, myopic, mats),
        "equilibrium_total_cost": 2.0 * expected_cost(sz, sz, mats),
        "myopic_trades": myopic,
        "equilibrium_trades": sz,
        "outcome": outcome,
    }


def shape_report(xi, tol=1e-10):
    """Check the U-shape properties of a schedule.

    ``decreasing_first_half`` looks at the first ``len(xi) // 2`` entries:
    no step may rise by more than ``tol`` and the total drop must exceed
    ``tol`` (geometric tails fall below any fixed step tolerance).
    Convexity is weak (second differences ``>= -tol``).
    """
    xi = as_vector(xi, "xi", min_length=3)
    half = xi.size // 2
    steps = np.diff(xi[:half])
    return ShapeReport(
        symmetric=bool(np.all(np.abs(xi - xi[::-1]) <= tol)),
        positive=bool(np.all(xi > 0.0)),
        decreasing_first_half=bool(np.all(steps <= tol) and xi[0] - xi[half - 1] > tol) if half >= 2 else False,
        convex=bool(np.all(np.diff(xi, 2) >= -tol)),
    )
