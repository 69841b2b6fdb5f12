"""Time grids, decay-kernel families and the game matrices built from them.

Kernel matrices follow the discrete propagator convention

    gamma[i, j]       = G(|t_i - t_j|)
    gamma_theta       = gamma + 2 * theta * I
    gamma_tilde[i, j] = gamma[i, j] for i > j, G(0) / 2 on the diagonal, 0 above

All matrices are dense; grids in every experiment have at most a few hundred
points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from ._validation import as_vector, check_n_steps, check_scalar
from .exceptions import (
    DegenerateKernelError,
    DomainError,
    LagMismatchError,
    SingularityRiskError,
)
from .io import write_csv

EQUIDISTANT_RTOL = 1e-12
LAG_ATOL = 1e-12


def _readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Trading times ``0 = t_0 < t_1 < ... < t_N = T``."""

    times: np.ndarray

    def __post_init__(self):
        times = as_vector(self.times, "times", min_length=2)
        if times[0] != 0.0:
            raise DomainError(f"grid must start at 0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise DomainError("grid times must be strictly increasing")
        object.__setattr__(self, "times", _readonly(times))

    @classmethod
    def equispaced(cls, n_steps, horizon=1.0):
        """Grid ``{k T / N : k = 0..N}`` with ``N = n_steps``."""
        n_steps = check_n_steps(n_steps, "n_steps")
        horizon = check_scalar(horizon, "horizon", lower=0.0, strict_lower=True)
        times = np.arange(n_steps + 1) * (horizon / n_steps)
        times[-1] = horizon
        return cls(times)

    @property
    def n_points(self):
        return self.times.size

    @property
    def n_steps(self):
        return self.times.size - 1

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def equidistant(self):
        gaps = np.diff(self.times)
        step = self.horizon / self.n_steps
        return bool(np.all(np.abs(gaps - step) <= EQUIDISTANT_RTOL * step))

    @property
    def lags(self):
        """Lags ``t_k - t_0`` (the distinct lags of an equidistant grid)."""
        return self.times - self.times[0]

    def lag_matrix(self):
        return np.abs(self.times[:, None] - self.times[None, :])

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.times.shape == other.times.shape and bool(
            np.all(self.times == other.times)
        )

    def __hash__(self):
        return hash(self.times.tobytes())

    def __repr__(self):
        kind = "equispaced" if self.equidistant else "irregular"
        return f"TimeGrid({kind}, n_points={self.n_points}, horizon={self.horizon:g})"

    def to_dict(self):
        if self.equidistant:
            return {"n_steps": self.n_steps, "horizon": self.horizon}
        return {"times": self.times.tolist()}

    @classmethod
    def from_dict(cls, data):
        if "times" in data:
            return cls(data["times"])
        return cls.equispaced(int(data["n_steps"]), float(data.get("horizon", 1.0)))


# ---------------------------------------------------------------------------
# Kernel families
# ---------------------------------------------------------------------------


class Kernel:
    """Base class of the decay-kernel families; instances are callables."""

    family: ClassVar[str] = ""

    def __call__(self, t):
        raise NotImplementedError

    @property
    def value_at_zero(self):
        return float(self(np.zeros(1))[0])

    def to_dict(self):
        data = {"family": self.family}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            data[name] = value.tolist() if isinstance(value, np.ndarray) else value
        return data

    def to_json(self):
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class ConstantKernel(Kernel):
    """Permanent impact ``G(t) = g1``."""

    g1: float
    family: ClassVar[str] = "constant"

    def __post_init__(self):
        check_scalar(self.g1, "g1", lower=0.0, strict_lower=True)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, float(self.g1))


@dataclass(frozen=True)
class LinearKernel(Kernel):
    """``G(t) = alpha + beta * t``."""

    alpha: float
    beta: float
    family: ClassVar[str] = "linear"

    def __call__(self, t):
        return self.alpha + self.beta * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class ExponentialKernel(Kernel):
    """``G(t) = lambda_coef * exp(-rho * t) + gamma_const``."""

    lambda_coef: float
    rho: float
    gamma_const: float = 0.0
    family: ClassVar[str] = "exponential"

    def __post_init__(self):
        check_scalar(self.rho, "rho", lower=0.0)

    def __call__(self, t):
        return self.lambda_coef * np.exp(-self.rho * np.asarray(t, dtype=float)) + self.gamma_const


@dataclass(frozen=True)
class PowerLawKernel(Kernel):
    """``G(t) = b_coef / (1 + t)**(1 - p) + c_const``; finite at zero."""

    b_coef: float
    p: float
    c_const: float = 0.0
    family: ClassVar[str] = "power_law"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.b_coef * (1.0 + t) ** (self.p - 1.0) + self.c_const


@dataclass(frozen=True, eq=False)
class TabulatedKernel(Kernel):
    """Kernel known only at the lags ``k * horizon / (len(values) - 1)``."""

    values: np.ndarray
    horizon: float = 1.0
    family: ClassVar[str] = "tabulated"

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(as_vector(self.values, "values", 2)))
        check_scalar(self.horizon, "horizon", lower=0.0, strict_lower=True)

    @property
    def lags(self):
        n = self.values.size - 1
        return np.arange(n + 1) * (self.horizon / n)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        n = self.values.size - 1
        step = self.horizon / n
        pos = t / step
        idx = np.rint(pos).astype(int)
        off_grid = (np.abs(pos - idx) * step > LAG_ATOL * max(1.0, self.horizon)) | (idx < 0) | (idx > n)
        if np.any(off_grid):
            bad = float(np.atleast_1d(t)[np.atleast_1d(off_grid)][0])
            raise LagMismatchError(f"tabulated kernel has no value at lag {bad!r}")
        return self.values[idx]

    def __eq__(self, other):
        if not isinstance(other, TabulatedKernel):
            return NotImplemented
        return self.horizon == other.horizon and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.values.tobytes(), self.horizon))


KERNEL_FAMILIES = {
    cls.family: cls
    for cls in (ConstantKernel, LinearKernel, ExponentialKernel, PowerLawKernel, TabulatedKernel)
}


def kernel_from_dict(data):
    """Inverse of ``Kernel.to_dict``: ``{"family": ..., params...}``."""
    data = dict(data)
    try:
        cls = KERNEL_FAMILIES[data.pop("family")]
    except KeyError as exc:
        raise DomainError(f"unknown kernel family in {data!r}") from exc
    return cls(**data)


def kernel_from_json(text):
    return kernel_from_dict(json.loads(text))


def eval_kernel(spec, t):
    """Evaluate ``spec`` at lag(s) ``t >= 0``; scalars in, float out."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError(f"kernel lags must be nonnegative, got {t!r}")
    out = spec(t_arr)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KernelMatrices:
    gamma: np.ndarray
    gamma_theta: np.ndarray
    gamma_tilde: np.ndarray
    theta: float
    grid: TimeGrid | None = field(default=None, repr=False)

    @property
    def n_points(self):
        return self.gamma.shape[0]

    def to_csv(self, path, which="gamma"):
        """Write one matrix row-major with a header row of trading times."""
        matrix = getattr(self, which)
        times = self.grid.times if self.grid is not None else np.arange(self.n_points)
        return write_csv(path, [f"{t:.17g}" for t in times], matrix)


def build_matrices(spec, grid, theta):
    """Kernel matrices of ``spec`` on ``grid`` with temporary impact ``theta``."""
    theta = check_scalar(theta, "theta", lower=0.0)
    if isinstance(spec, TabulatedKernel) and spec.values.size != grid.n_points:
        raise LagMismatchError(
            f"tabulated kernel has {spec.values.size} values, grid has {grid.n_points} points"
        )
    gamma = np.asarray(spec(grid.lag_matrix()), dtype=float)
    gamma_tilde = np.tril(gamma, -1) + np.diag(np.diag(gamma) / 2.0)
    gamma_theta = gamma + 2.0 * theta * np.eye(grid.n_points)
    for m in (gamma, gamma_theta, gamma_tilde):
        m.setflags(write=False)
    return KernelMatrices(gamma, gamma_theta, gamma_tilde, theta, grid)


def stability_threshold(spec):
    """Temporary-impact level ``G(0) / 4`` above which equilibria do not oscillate."""
    return spec.value_at_zero / 4.0


def closed_form_inverses(g1, theta, n):
    """Explicit inverses of ``gamma_theta -/+ gamma_tilde`` for a constant kernel.

    Returns ``(inv_minus, inv_plus)`` for an ``(n + 1)``-point grid.
    ``inv_minus`` is upper triangular with ``1 / (g1 lam)`` on the diagonal
    and ``-(lam - 1)**(k - 1) / (g1 lam**(k + 1))`` on the k-th superdiagonal,
    ``lam = 2 theta / g1 + 1/2``. ``inv_plus`` is the Sherman-Morrison update
    of ``inv_minus.T`` by the rank-one term ``g1 e e^T``.
    """
    g1 = check_scalar(g1, "g1", lower=0.0, strict_lower=True)
    theta = check_scalar(theta, "theta")
    n = check_n_steps(n)
    if theta <= 0:
        raise SingularityRiskError(
            f"closed-form inverses require theta > 0 (nonsingularity not guaranteed), got {theta}"
        )
    lam = 2.0 * theta / g1 + 0.5
    m = n + 1
    k = np.subtract.outer(np.arange(m), np.arange(m)).T  # k[i, j] = j - i
    inv_minus = np.zeros((m, m))
    upper = k > 0
    inv_minus[upper] = -((lam - 1.0) ** (k[upper] - 1)) / (g1 * lam ** (k[upper] + 1))
    np.fill_diagonal(inv_minus, 1.0 / (g1 * lam))

    b_inv = inv_minus.T
    u = b_inv @ np.ones(m)
    inv_plus = b_inv - g1 * np.outer(u, b_inv.T @ np.ones(m)) / (1.0 + g1 * u.sum())
    return inv_minus, inv_plus


def linear_kernel_inverse(alpha, beta, n, horizon=1.0):
    """Inverse of the linear-kernel matrix ``alpha + beta |t_i - t_j|``.

    The grid is equidistant with ``n`` steps on ``[0, horizon]``, so the
    per-step slope is ``b = beta * horizon / n``. The inverse is tridiagonal
    apart from its four corners, scaled by ``1 / (2 b)``.
    """
    alpha = check_scalar(alpha, "alpha")
    beta = check_scalar(beta, "beta")
    n = check_n_steps(n)
    if beta == 0.0:
        raise DegenerateKernelError("linear kernel with zero slope has a rank-one matrix")
    b = beta * horizon / n
    eta_n = 2.0 * alpha * b + b * b * (n - 1)
    eta_n1 = 2.0 * alpha * b + b * b * n
    if abs(eta_n1) <= 1e-14 * max(1.0, abs(alpha * b), b * b * n):
        raise DegenerateKernelError(
            f"linear kernel alpha={alpha}, beta={beta} is singular on a {n + 1}-point grid"
        )
    m = n + 1
    inv = np.zeros((m, m))
    idx = np.arange(m)
    inv[idx, idx] = -2.0
    inv[idx[:-1], idx[:-1] + 1] = 1.0
    inv[idx[:-1] + 1, idx[:-1]] = 1.0
    inv[0, 0] = inv[-1, -1] = -eta_n / eta_n1
    inv[0, -1] += b * b / eta_n1
    inv[-1, 0] += b * b / eta_n1
    return inv / (2.0 * b)
