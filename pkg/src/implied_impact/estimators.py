"""scikit-learn style wrappers around the inverse procedures.

Every estimator takes the trading times as ``X`` (shape ``(n,)`` or
``(n, 1)``) and the observed series as ``y``. After ``fit`` the implied
kernel is available through ``predict(lags)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DomainError
from .implied_exec import (
    fit_nonparametric,
    fit_parametric,
    linear_condition_check,
    linear_implied_kernel,
    solve_h,
)
from .implied_price import ac_flow_variant, implied_kernel_price, scale_to_unit
from .kernels import TimeGrid


def _grid_from_times(X):
    times = np.asarray(X, dtype=float)
    if times.ndim == 2:
        if times.shape[1] != 1:
            raise DomainError(f"X must have a single column of times, got shape {times.shape}")
        times = times[:, 0]
    return TimeGrid(times)


def _lags(X):
    t = np.asarray(X, dtype=float)
    return t[:, 0] if t.ndim == 2 else t


class _TabulatedPredictMixin:
    def predict(self, X):
        """Kernel values at the lags ``X`` (must be grid lags)."""
        check_is_fitted(self, "kernel_")
        return np.asarray(self.kernel_.as_kernel()(_lags(X)))


class PriceImpliedKernel(_TabulatedPredictMixin, BaseEstimator):
    """Implied kernel from drift ``y`` and an observed flow.

    Parameters
    ----------
    inventory : float
        Used only when ``fit`` gets no ``flows``; the flow is then taken to
        be uniform, ``inventory / (n + 1)`` per step.
    scale : bool
        Divide the kernel by its value at lag zero.
    """

    def __init__(self, inventory=1.0, scale=False):
        self.inventory = inventory
        self.scale = scale

    def fit(self, X, y, flows=None):
        grid = _grid_from_times(X)
        if flows is None:
            kernel = ac_flow_variant(y, self.inventory, grid.n_steps, grid.horizon)
        else:
            kernel = implied_kernel_price(flows, y, grid.horizon)
        if self.scale:
            kernel = scale_to_unit(kernel)
        self.kernel_ = kernel
        self.g_ = kernel.g
        return self


class ExecImpliedKernel(BaseEstimator):
    """Solution space of kernels making the schedule ``y`` optimal.

    After ``fit``: ``rank_``, ``particular_``, ``nullspace_`` and, when the
    schedule admits one, the linear kernel ``linear_kernel_`` (else ``None``).
    ``predict`` evaluates the linear kernel.
    """

    def __init__(self, theta=1.0, inventory=1.0, rtol=1e-10, ratio_tol=1e-8):
        self.theta = theta
        self.inventory = inventory
        self.rtol = rtol
        self.ratio_tol = ratio_tol

    def fit(self, X, y):
        grid = _grid_from_times(X)
        system = solve_h(np.asarray(y, dtype=float), rtol=self.rtol)
        self.system_ = system
        self.rank_ = system.rank
        self.particular_ = system.particular
        self.nullspace_ = system.nullspace_basis
        self.linear_kernel_ = None
        if linear_condition_check(system.xi, self.inventory, self.ratio_tol):
            self.linear_kernel_ = linear_implied_kernel(
                system.xi, self.theta, grid.n_steps, self.inventory, grid.horizon, self.ratio_tol
            )
        return self

    def predict(self, X):
        check_is_fitted(self, "system_")
        if self.linear_kernel_ is None:
            raise DomainError("the fitted schedule admits no linear implied kernel")
        return self.linear_kernel_(_lags(X))


class ParametricKernelRegressor(RegressorMixin, BaseEstimator):
    """Two-parameter kernel family fitted to a target schedule.

    ``predict`` returns kernel values; ``score`` is the R^2 of the
    reproduced schedule against ``y``.
    """

    def __init__(self, family="exponential", theta=1.0, inventory=1.0, init=None, max_iter=500):
        self.family = family
        self.theta = theta
        self.inventory = inventory
        self.init = init
        self.max_iter = max_iter

    def fit(self, X, y):
        grid = _grid_from_times(X)
        result = fit_parametric(
            y, self.family, grid, self.theta, self.inventory, self.init, self.max_iter
        )
        self.result_ = result
        self.params_ = result.params
        self.schedule_ = result.fitted_schedule
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return self.result_.kernel_values(_lags(X))

    def score(self, X, y, sample_weight=None):
        check_is_fitted(self, "result_")
        y = np.asarray(y, dtype=float)
        ss_res = np.sum((self.schedule_ - y) ** 2)
        ss_tot = np.sum((y - y.mean()) ** 2)
        return 1.0 - ss_res / ss_tot if ss_tot > 0 else float(ss_res == 0)


class NonparametricKernelRegressor(_TabulatedPredictMixin, BaseEstimator):
    """Convex, decreasing tabulated kernel fitted to a target schedule.

    Parameters
    ----------
    start : array_like or None
        Initial kernel on the grid; ``None`` uses ``exp(-t) - exp(-T)``.
    """

    def __init__(self, theta=1.0, inventory=1.0, smoothing=1e-3, start=None):
        self.theta = theta
        self.inventory = inventory
        self.smoothing = smoothing
        self.start = start

    def fit(self, X, y):
        grid = _grid_from_times(X)
        start = self.start
        if start is None:
            start = np.exp(-grid.times) - np.exp(-grid.horizon)
        kernel = fit_nonparametric(
            y, start, grid, self.theta, self.inventory, smoothing=self.smoothing
        )
        self.kernel_ = kernel
        self.g_ = kernel.g
        self.schedule_error_ = kernel.diagnostics["schedule_error"]
        return self
