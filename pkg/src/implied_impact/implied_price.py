"""Implied transient impact from expected price drift and observed flow.

The drift after the trade at ``t_k`` is ``S_k = -sum_{j <= k} G(t_k - t_j) Xi_j``.
On an equidistant grid this is a discrete convolution, ``S = -M g`` with
``M`` the lower-triangular Toeplitz matrix of the flows and ``g`` the kernel
at lags ``0, dt, ..., N dt``. Given a flow ``Xi`` with ``Xi_0 != 0`` and any
drift, ``g = -M^-1 S`` is unique and found by forward substitution.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular, toeplitz

from ._validation import as_vector, check_n_steps, check_same_length, check_scalar
from .exceptions import DomainError, ScaleError, SingularFlowError
from .io import dumps, write_columns
from .kernels import TabulatedKernel


class Provenance(str, enum.Enum):
    PRICE_APPROACH = "price_approach"
    AC_FLOW_VARIANT = "ac_flow_variant"
    EXEC_APPROACH = "exec_approach"
    FITTED = "fitted"


@dataclass(frozen=True, eq=False)
class ImpliedKernel:
    """Kernel values ``g`` at the lags of an equidistant grid."""

    g: np.ndarray
    provenance: Provenance
    diagnostics: dict = field(default_factory=dict)
    horizon: float = 1.0

    def __post_init__(self):
        g = as_vector(self.g, "g", min_length=1).copy()
        g.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def n_points(self):
        return self.g.size

    @property
    def lags(self):
        n = max(self.g.size - 1, 1)
        return np.arange(self.g.size) * (self.horizon / n)

    @property
    def scaled(self):
        g0 = self.g[0]
        return self.g / g0 if g0 != 0 else np.full(self.g.shape, np.nan)

    def as_kernel(self):
        return TabulatedKernel(self.g, self.horizon)

    def to_csv(self, path):
        return write_columns(path, {"lag": self.lags, "g": self.g, "g_scaled": self.scaled})

    def to_dict(self):
        return {
            "provenance": self.provenance.value,
            "horizon": self.horizon,
            "g": self.g.tolist(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self):
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        return cls(data["g"], data["provenance"], dict(data.get("diagnostics", {})), data.get("horizon", 1.0))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def causal_matrix(mats):
    """``C[k, j] = G(t_k - t_j)`` for ``j <= k``, zero above the diagonal."""
    return np.tril(mats.gamma)


def aggregate_drift(mats, flows):
    """Expected cumulative price change ``S = -C Xi`` after each trade."""
    flows = as_vector(flows, "flows")
    check_same_length(flows, np.empty(mats.n_points), names=("flows", "grid"))
    return -causal_matrix(mats) @ flows


def flow_matrix(flows):
    """Lower-triangular Toeplitz matrix ``M[k, l] = Xi_{k-l}``."""
    flows = as_vector(flows, "flows")
    return np.tril(toeplitz(flows))


def _diagnostics(g, flows, drift):
    residual = float(np.max(np.abs(flow_matrix(flows) @ g + drift))) if g.size else 0.0
    d2 = np.diff(g, 2)
    return {
        "residual": residual,
        "rank": int(g.size),
        "scale": float(g[0]),
        "concave": bool(d2.size > 0 and np.all(d2 <= 1e-12 * max(1.0, np.max(np.abs(g))))),
        "range": float(np.ptp(g)),
    }


def implied_kernel_price(flows, drift, horizon=1.0, provenance=Provenance.PRICE_APPROACH):
    """Solve ``M g = -S`` for the implied kernel ``g``.

    Parameters
    ----------
    flows : array_like
        Flow ``Xi`` used to build ``M``; ``Xi_0`` must not vanish.
    drift : array_like
        Drift ``S`` on the same grid.

    Raises
    ------
    SingularFlowError
        If ``|Xi_0| < 1e-12 * max|Xi|``.
    """
    flows = as_vector(flows, "flows")
    drift = as_vector(drift, "drift")
    check_same_length(flows, drift, names=("flows", "drift"))
    scale = np.max(np.abs(flows))
    if scale == 0.0 or abs(flows[0]) < 1e-12 * scale:
        raise SingularFlowError(f"first flow entry {flows[0]!r} is (numerically) zero")
    g = solve_triangular(flow_matrix(flows), -drift, lower=True)
    return ImpliedKernel(g, provenance, _diagnostics(g, flows, drift), horizon)


def scale_to_unit(kernel):
    """Divide ``g`` by ``g_0``; the factor is kept in ``diagnostics['scale']``."""
    g0 = kernel.g[0]
    if g0 == 0.0 or not np.isfinite(g0):
        raise ScaleError(f"cannot scale a kernel with g_0 = {g0!r}")
    diag = dict(kernel.diagnostics, scale=float(g0))
    return replace(kernel, g=kernel.g / g0, diagnostics=diag)


def ac_flow_variant(drift, inventory, n, horizon=1.0):
    """Implied kernel when the observer assumes the uniform flow ``X / (n + 1)``.

    With a uniform flow, ``g_0 = -S_0 (n + 1) / X``. When the drift comes from
    a unit constant kernel and ``X = 1`` this is ``(n + 1)`` times the first
    entry of the true aggregate flow.
    """
    drift = as_vector(drift, "drift")
    inventory = check_scalar(inventory, "inventory")
    n = check_n_steps(n)
    if inventory == 0.0:
        raise DomainError("the uniform-flow variant needs a nonzero inventory")
    if drift.size != n + 1:
        raise DomainError(f"drift has {drift.size} entries, expected n + 1 = {n + 1}")
    flows = np.full(n + 1, inventory / (n + 1))
    return implied_kernel_price(flows, drift, horizon, Provenance.AC_FLOW_VARIANT)
