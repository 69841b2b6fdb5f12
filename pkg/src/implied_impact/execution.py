"""Single-agent optimal execution under a transient impact kernel.

Minimising ``1/2 eta' Gamma_theta eta`` subject to ``e' eta = X`` gives

    eta* = X Gamma_theta^-1 e / (e' Gamma_theta^-1 e)
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._linalg import solve_checked
from ._validation import check_scalar
from .exceptions import DomainError, ShiftDegeneracyError, SingularSystemError
from .io import write_columns
from .kernels import LinearKernel, TimeGrid, build_matrices, kernel_from_dict, linear_kernel_inverse


@dataclass(frozen=True)
class ExecutionProblem:
    grid: TimeGrid
    kernel: object
    theta: float
    inventory: float

    def __post_init__(self):
        check_scalar(self.theta, "theta", lower=0.0)
        check_scalar(self.inventory, "inventory")

    def matrices(self):
        return build_matrices(self.kernel, self.grid, self.theta)

    def to_dict(self):
        return {
            "grid": self.grid.to_dict(),
            "kernel": self.kernel.to_dict(),
            "theta": self.theta,
            "inventory": self.inventory,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            TimeGrid.from_dict(data["grid"]),
            kernel_from_dict(data["kernel"]),
            float(data["theta"]),
            float(data["inventory"]),
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _inverse_times_ones(prob):
    """``Gamma_theta^-1 e`` with the explicit linear-kernel inverse when it applies."""
    e = np.ones(prob.grid.n_points)
    if prob.theta == 0.0 and isinstance(prob.kernel, LinearKernel) and prob.grid.equidistant:
        inv = linear_kernel_inverse(
            prob.kernel.alpha, prob.kernel.beta, prob.grid.n_steps, prob.grid.horizon
        )
        return inv @ e
    mats = prob.matrices()
    try:
        return solve_checked(mats.gamma_theta, e, "Gamma_theta")
    except SingularSystemError as exc:
        raise SingularSystemError(
            f"{prob.kernel!r} with theta={prob.theta} gives a singular impact matrix"
        ) from exc


def optimal_schedule(prob):
    """Cost-minimising schedule ``X Gamma_theta^-1 e / (e' Gamma_theta^-1 e)``."""
    y = _inverse_times_ones(prob)
    s = y.sum()
    if s == 0.0:
        raise SingularSystemError(f"e' Gamma_theta^-1 e vanishes for {prob.kernel!r}")
    eta = prob.inventory * y / s
    # put the rounding error of the constraint on the largest entry
    eta[np.argmax(np.abs(eta))] += prob.inventory - eta.sum()
    return eta


def kernel_shift_schedule(prob, k_shift):
    """Optimal schedule for the shifted kernel ``G(t) + k_shift``.

    A constant shift adds ``k_shift e e'`` to ``Gamma_theta``, which by
    Sherman-Morrison does not change the normalised schedule unless
    ``1 + k_shift e' Gamma_theta^-1 e = 0``.
    """
    k_shift = check_scalar(k_shift, "k_shift")
    y = _inverse_times_ones(prob)
    s = y.sum()
    if abs(1.0 + k_shift * s) <= 1e-12 * max(1.0, abs(k_shift * s)):
        raise ShiftDegeneracyError(
            f"k_shift={k_shift} equals -1/(e' Gamma_theta^-1 e) = {-1.0 / s:.6g}"
        )
    shifted = prob.matrices().gamma_theta + k_shift * np.ones((prob.grid.n_points,) * 2)
    z = solve_checked(shifted, np.ones(prob.grid.n_points), "shifted Gamma_theta")
    eta = prob.inventory * z / z.sum()
    eta[np.argmax(np.abs(eta))] += prob.inventory - eta.sum()
    return eta


def random_admissible(inventory, n_points, rng, scale=0.1):
    """Uniform schedule plus a zero-sum Gaussian perturbation."""
    if n_points < 1:
        raise DomainError("n_points must be positive")
    noise = rng.normal(scale=scale, size=n_points)
    return inventory / n_points + noise - noise.mean()


def schedule_to_csv(path, grid, schedule):
    return write_columns(path, {"t": grid.times, "trade": schedule})
