"""Multi-asset impact game with a symmetric positive-definite cross-impact matrix.

With constant impact ``g1 * Q`` and ``Q = V D V'``, rotating inventories by
``V'`` decouples the game into ``M`` one-asset games with impact
``g1 * D[l]``. Strategies are rotated back with ``V``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, check_scalar
from .exceptions import ArityError, DomainError, NotPositiveDefiniteError
from .game import GameSpec, solve_game, stacked_kkt
from .io import write_csv
from .kernels import ConstantKernel, TimeGrid, build_matrices


@dataclass(frozen=True, eq=False)
class CrossImpact:
    """``q = eigenvectors @ diag(eigenvalues) @ eigenvectors.T``, eigenvalues descending."""

    q: np.ndarray
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_assets(self):
        return self.q.shape[0]

    def reconstruct(self):
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T

    def to_dict(self):
        return {"q": self.q.tolist()}


def eigendecompose(q, sym_tol=1e-10):
    """Sorted spectral decomposition of a symmetric positive-definite ``q``.

    Each eigenvector is signed so its largest-magnitude entry is positive.
    """
    q = as_matrix(q, "q", square=True)
    if np.max(np.abs(q - q.T)) > sym_tol:
        raise DomainError("cross-impact matrix must be symmetric")
    q = 0.5 * (q + q.T)
    vals, vecs = np.linalg.eigh(q)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    if vals[-1] <= 0.0:
        bad = vals[vals <= 0.0]
        raise NotPositiveDefiniteError(f"cross-impact matrix has non-positive eigenvalues {bad.tolist()}")
    pivots = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivots, np.arange(vecs.shape[1])])
    vecs = vecs * signs
    return CrossImpact(q, vecs, vals)


def _check_inventories(inventories, n_assets):
    inv = as_matrix(np.atleast_2d(inventories), "inventories")
    if inv.shape[1] != n_assets:
        raise ArityError(f"inventories have {inv.shape[1]} assets, Q has {n_assets}")
    if inv.shape[0] < 2:
        raise ArityError("the game needs at least two agents")
    return inv


def multiasset_equilibrium(q, inventories, g1, theta, grid):
    """Equilibrium trades via spectral decoupling.

    Parameters
    ----------
    q : array_like, shape (M, M) or CrossImpact
    inventories : array_like, shape (J, M)
    g1, theta : float
    grid : TimeGrid

    Returns
    -------
    ndarray, shape (J, M, N + 1)
    """
    cross = q if isinstance(q, CrossImpact) else eigendecompose(q)
    inv = _check_inventories(inventories, cross.n_assets)
    g1 = check_scalar(g1, "g1", lower=0.0, strict_lower=True)
    theta = check_scalar(theta, "theta", lower=0.0, strict_lower=True)
    rotated = inv @ cross.eigenvectors  # row j holds V' X_j
    n_agents = inv.shape[0]
    out = np.zeros((n_agents, cross.n_assets, grid.n_points))
    for l, lam in enumerate(cross.eigenvalues):
        if theta < g1 * lam / 4.0:
            warnings.warn(
                f"theta={theta} is below the stability threshold g1*lambda/4 = {g1 * lam / 4:.6g} "
                f"for eigenvalue {lam:.6g}; the equilibrium oscillates",
                stacklevel=2,
            )
        eq = solve_game(GameSpec(grid, ConstantKernel(g1 * lam), theta, rotated[:, l]))
        out[:, l, :] = eq.strategies
    return np.einsum("il,jlk->jik", cross.eigenvectors, out)


def multiasset_direct(q, inventories, g1, theta, grid):
    """Same equilibrium from one stacked solve in the original coordinates.

    The trade vector of an agent stacks the assets inside each time step;
    its first-order system uses ``Gamma (x) g1 Q + 2 theta I`` and
    ``Gamma_tilde (x) g1 Q``.
    """
    q = as_matrix(q, "q", square=True)
    inv = _check_inventories(inventories, q.shape[0])
    mats = build_matrices(ConstantKernel(1.0), grid, 0.0)
    m = q.shape[0]
    own = np.kron(mats.gamma, g1 * q) + 2.0 * theta * np.eye(grid.n_points * m)
    cross = np.kron(mats.gamma_tilde, g1 * q)
    constraint = np.kron(np.ones((1, grid.n_points)), np.eye(m))
    x, _ = stacked_kkt(own, cross, constraint, inv)
    return x.reshape(inv.shape[0], grid.n_points, m).transpose(0, 2, 1)


def strategies_to_csv(path, grid, strategies):
    """Long format: one row per (t, agent, asset)."""
    rows = (
        (t, j + 1, i + 1, strategies[j, i, k])
        for j in range(strategies.shape[0])
        for i in range(strategies.shape[1])
        for k, t in enumerate(grid.times)
    )
    return write_csv(path, ["t", "agent", "asset", "trade"], rows)


def load_problem(text):
    """Parse ``{"q": ..., "inventories": ..., "g1": ..., "theta": ..., "grid": ...}``."""
    data = json.loads(text) if isinstance(text, str) else dict(text)
    return (
        np.asarray(data["q"], dtype=float),
        np.asarray(data["inventories"], dtype=float),
        float(data.get("g1", 1.0)),
        float(data["theta"]),
        TimeGrid.from_dict(data.get("grid", {"n_steps": 25})),
    )
