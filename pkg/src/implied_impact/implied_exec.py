"""Inverse optimal execution: kernels under which a schedule is TIM-optimal.

A schedule ``xi`` is optimal for the kernel matrix ``Pi = Toep(g)`` exactly
when ``Pi xi`` is proportional to ``e``. Folding the Toeplitz symmetry turns
``Pi xi = e`` into a linear system ``H g = e`` in the lag values ``g``, whose
solution set is an affine space. This module builds and solves that system,
finds the linear kernel in it, and fits parametric or shape-constrained
kernels by nonlinear least squares.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.optimize import least_squares, nnls

from ._linalg import solve_checked
from ._validation import as_vector, check_n_steps, check_scalar
from .exceptions import (
    DegenerateScheduleError,
    DomainError,
    NoLinearSolutionError,
)
from .game import shape_report
from .implied_price import ImpliedKernel, Provenance
from .io import dumps
from .kernels import LinearKernel, TabulatedKernel


# ---------------------------------------------------------------------------
# H-system
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HSystem:
    """The system ``H g = e`` for a schedule ``xi``.

    ``rank``, ``particular`` and ``nullspace_basis`` are filled by
    :func:`solve_h`; a freshly built system has ``rank is None``.
    """

    h: np.ndarray
    xi: np.ndarray
    rank: int | None = None
    particular: np.ndarray | None = None
    nullspace_basis: np.ndarray | None = None
    singular_values: np.ndarray | None = field(default=None, repr=False)
    residual: float | None = None

    @property
    def solved(self):
        return self.rank is not None

    @property
    def consistent(self):
        return self.residual is not None and self.residual <= 1e-8

    def solution(self, coeffs=None):
        """``particular + nullspace_basis @ coeffs``."""
        if not self.solved:
            raise DomainError("call solve_h first")
        if coeffs is None:
            return self.particular.copy()
        coeffs = as_vector(coeffs, "coeffs")
        return self.particular + self.nullspace_basis @ coeffs

    def to_dict(self):
        return {
            "xi": self.xi.tolist(),
            "h": self.h.tolist(),
            "rank": self.rank,
            "particular": None if self.particular is None else self.particular.tolist(),
            "nullspace_basis": None
            if self.nullspace_basis is None
            else self.nullspace_basis.T.tolist(),
            "residual": self.residual,
        }


def build_h(xi):
    """``H[k, l] = sum of xi_j over |k - j| = l`` so that ``Toep(g) xi = H g``."""
    xi = as_vector(xi, "xi", min_length=2)
    n = xi.size
    h = np.zeros((n, n))
    rows, cols = np.indices((n, n))
    np.add.at(h, (rows.ravel(), np.abs(rows - cols).ravel()), xi[cols.ravel()])
    return HSystem(h=h, xi=xi)


def solve_h(system, rtol=1e-10):
    """Rank, minimum-norm particular solution and nullspace of ``H g = e``.

    Singular values below ``rtol`` times the largest count as zero.
    """
    if not isinstance(system, HSystem):
        system = build_h(system)
    report = shape_report(system.xi, tol=1e-10) if system.xi.size >= 3 else None
    if report is not None and not report.u_shaped:
        warnings.warn("schedule is not U-shaped; the rank law need not hold", stacklevel=2)
    h = system.h
    u, s, vt = np.linalg.svd(h)
    cutoff = rtol * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > cutoff))
    e = np.ones(h.shape[0])
    particular = vt[:rank].T @ ((u[:, :rank].T @ e) / s[:rank])
    basis = vt[rank:].T
    residual = float(np.max(np.abs(h @ particular - e)))
    return replace(
        system,
        rank=rank,
        particular=particular,
        nullspace_basis=basis,
        singular_values=s,
        residual=residual,
    )


def solve_with_fixed(system, fixed):
    """Solution of ``H g = e`` with some lags pinned, e.g. ``{2: a, 3: b}``.

    Returns the least-squares solution for the remaining lags and the
    residual ``max |H g - e|``.
    """
    h = system.h
    n = h.shape[0]
    g = np.zeros(n)
    idx = np.array(sorted(fixed), dtype=int)
    g[idx] = [fixed[i] for i in idx]
    free = np.setdiff1d(np.arange(n), idx)
    rhs = np.ones(n) - h[:, idx] @ g[idx]
    g[free] = np.linalg.lstsq(h[:, free], rhs, rcond=None)[0]
    return g, float(np.max(np.abs(h @ g - 1.0)))


def membership_residual(system, g):
    """How far ``g`` is from solving ``H (c g) = e`` for the best scale ``c``."""
    hg = system.h @ as_vector(g, "g")
    denom = hg @ hg
    if denom == 0.0:
        return float("inf")
    c = hg.sum() / denom
    return float(np.max(np.abs(c * hg - 1.0)))


def kernel_from_solution(g, theta, horizon=1.0, scale=1.0):
    """Tabulated kernel ``g / scale - 2 theta delta_0`` whose TIM optimum is ``xi``."""
    g = as_vector(g, "g") / scale
    g[0] -= 2.0 * theta
    return TabulatedKernel(g, horizon)


# ---------------------------------------------------------------------------
# Linear implied kernel
# ---------------------------------------------------------------------------


def _ratio_terms(xi, inventory):
    xi = as_vector(xi, "xi", min_length=2)
    inventory = check_scalar(inventory, "inventory")
    n = xi.size - 1
    ks = np.arange(2, int(np.floor(n / 2 + 1)) + 1)
    partial = np.cumsum(xi)
    return xi[ks - 2] - xi[ks - 1], inventory - 2.0 * partial[ks - 2], inventory


def linear_condition_ratios(xi, inventory):
    """Ratios ``(xi_{k-1} - xi_k) / (X - 2 sum_{i<k} xi_i)`` for ``k = 2 .. floor(N/2 + 1)``."""
    num, den, inventory = _ratio_terms(xi, inventory)
    if np.any(np.abs(den) <= 1e-14 * max(1.0, abs(inventory))):
        raise DegenerateScheduleError("X - 2 * partial sum vanishes; ratios undefined")
    return num / den


def linear_condition_check(xi, inventory, tol=1e-10):
    """True iff all linear-kernel ratios agree within ``tol``.

    The comparison is cross-multiplied, ``|num_k - r den_k| <= tol max(1, |X|)``
    with ``r`` the first ratio, because later numerators and denominators
    can both be close to zero.
    """
    num, den, inventory = _ratio_terms(xi, inventory)
    if num.size <= 1:
        return True
    if abs(den[0]) <= 1e-14 * max(1.0, abs(inventory)):
        raise DegenerateScheduleError("X - 2 xi_1 vanishes; ratios undefined")
    r = num[0] / den[0]
    return bool(np.max(np.abs(num - r * den)) <= tol * max(1.0, abs(inventory)))


def linear_implied_slope(xi, theta, n, inventory, horizon=1.0, tol=1e-8):
    """Slope of the linear kernel for which ``xi`` is TIM-optimal.

    ``beta = -2 theta N (xi_1 - xi_2) / (X - 2 xi_1)`` per unit time on
    ``[0, horizon]`` (the formula is per step when ``horizon = N``).
    """
    xi = as_vector(xi, "xi", min_length=2)
    theta = check_scalar(theta, "theta", lower=0.0, strict_lower=True)
    n = check_n_steps(n)
    if xi.size != n + 1:
        raise DomainError(f"xi has {xi.size} entries, expected n + 1 = {n + 1}")
    if not linear_condition_check(xi, inventory, tol):
        raise NoLinearSolutionError(f"linear-kernel ratios disagree beyond tol={tol:g}")
    den = inventory - 2.0 * xi[0]
    if abs(den) <= 1e-14 * max(1.0, abs(inventory)):
        raise DegenerateScheduleError("X - 2 xi_1 vanishes")
    step_slope = -2.0 * theta * (xi[0] - xi[1]) / den
    return step_slope * n / horizon


def linear_slope_closed_form(g1, theta, n):
    """``-4 theta N G1**2 / (16 theta**2 - G1**2)`` for the constant-kernel game."""
    g1 = check_scalar(g1, "g1", lower=0.0, strict_lower=True)
    theta = check_scalar(theta, "theta", lower=0.0, strict_lower=True)
    n = check_n_steps(n)
    den = 16.0 * theta**2 - g1**2
    if den == 0.0:
        raise DomainError("slope is undefined at theta = g1 / 4")
    return -4.0 * theta * n * g1**2 / den


def linear_implied_kernel(xi, theta, n, inventory, horizon=1.0, tol=1e-8):
    """Linear kernel with the implied slope and ``G(horizon) = 0``."""
    beta = linear_implied_slope(xi, theta, n, inventory, horizon, tol)
    return LinearKernel(alpha=-beta * horizon, beta=beta)


# ---------------------------------------------------------------------------
# Forward map and its derivative
# ---------------------------------------------------------------------------


def _lag_index(n_points):
    idx = np.arange(n_points)
    return np.abs(idx[:, None] - idx[None, :])


def _schedule_and_y(g, theta, inventory, lag):
    gamma_theta = g[lag] + 2.0 * theta * np.eye(lag.shape[0])
    y = solve_checked(gamma_theta, np.ones(lag.shape[0]), "Gamma_theta")
    s = y.sum()
    return inventory * y / s, y, s, gamma_theta


def schedule_from_lags(g, theta, inventory):
    """TIM schedule for the tabulated kernel ``g`` on an equidistant grid."""
    g = as_vector(g, "g")
    eta, *_ = _schedule_and_y(g, theta, inventory, _lag_index(g.size))
    return eta


def _schedule_jacobian(y, s, gamma_theta, d_gamma_y, inventory):
    """``d eta`` from ``d Gamma @ y`` columns (one column per parameter)."""
    dy = -solve_checked(gamma_theta, d_gamma_y, "Gamma_theta")
    return (inventory / s) * (dy - np.outer(y, dy.sum(axis=0)) / s)


# ---------------------------------------------------------------------------
# Parametric fits
# ---------------------------------------------------------------------------


def _poly(t, p, horizon):
    a2, a1 = p
    val = a2 * (t**2 - horizon**2) + a1 * (t - horizon)
    grads = [t**2 - horizon**2, t - horizon]
    return val, grads


def _expo(t, p, horizon):
    lam, rho = p
    et, eT = np.exp(-rho * t), np.exp(-rho * horizon)
    return lam * (et - eT), [et - eT, lam * (horizon * eT - t * et)]


def _power(t, p, horizon):
    b, q = p
    ft, fT = (1.0 + t) ** (q - 1.0), (1.0 + horizon) ** (q - 1.0)
    return b * (ft - fT), [ft - fT, b * (ft * np.log1p(t) - fT * np.log1p(horizon))]


FAMILIES = {
    "polynomial": (("alpha_2", "alpha_1"), _poly, (0.0, -1.0)),
    "exponential": (("lambda", "rho"), _expo, (10.0, 1.0)),
    "power_law": (("B", "p"), _power, (10.0, 0.5)),
}


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a parametric kernel fit; the kernel vanishes at the horizon."""

    family: str
    params: dict
    std_errors: dict
    ci95: dict
    residual_norm: float
    fitted_schedule: np.ndarray
    converged: bool = True
    n_iter: int = 0
    horizon: float = 1.0

    def kernel_values(self, t):
        _, fn, _ = FAMILIES[self.family]
        val, _ = fn(np.asarray(t, dtype=float), list(self.params.values()), self.horizon)
        return val

    def as_kernel(self, grid):
        return TabulatedKernel(self.kernel_values(grid.times), grid.horizon)

    def to_dict(self):
        rows = {
            name: {
                "estimate": self.params[name],
                "se": self.std_errors[name],
                "ci95": list(self.ci95[name]),
            }
            for name in self.params
        }
        return {
            "family": self.family,
            "parameters": rows,
            "res_norm": self.residual_norm,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "fitted_schedule": self.fitted_schedule.tolist(),
        }

    def to_json(self):
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        rows = data["parameters"]
        return cls(
            family=data["family"],
            params={k: v["estimate"] for k, v in rows.items()},
            std_errors={k: v["se"] for k, v in rows.items()},
            ci95={k: tuple(v["ci95"]) for k, v in rows.items()},
            residual_norm=data["res_norm"],
            fitted_schedule=np.asarray(data["fitted_schedule"]),
            converged=data.get("converged", True),
            n_iter=data.get("n_iter", 0),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _residual_and_jacobian(p, fn, target, grid, theta, inventory):
    lag_t = grid.lag_matrix()
    val, grads = fn(lag_t, p, grid.horizon)
    gamma_theta = val + 2.0 * theta * np.eye(grid.n_points)
    y = solve_checked(gamma_theta, np.ones(grid.n_points), "Gamma_theta")
    s = y.sum()
    eta = inventory * y / s
    d_gamma_y = np.column_stack([dg @ y for dg in grads])
    jac = _schedule_jacobian(y, s, gamma_theta, d_gamma_y, inventory)
    return eta - target, jac, eta


def fit_parametric(
    target,
    family,
    grid,
    theta,
    inventory,
    init=None,
    max_iter=500,
    ftol=1e-6,
    xtol=1e-6,
):
    """Fit a two-parameter kernel family so its TIM schedule matches ``target``.

    Levenberg-Marquardt with damping starting at ``1e-3``, multiplied by 10
    after a rejected step and divided by 10 after an accepted one. Iteration
    stops when the decrease of the squared residual falls below
    ``ftol * (1 + f)`` or the step below ``xtol * (1 + |p|)``.

    Standard errors use ``s**2 (J'J)^-1`` with ``s**2 = SSR / (n - 2)``, and
    the 95% intervals use the Student-t quantile with ``n - 2`` degrees of
    freedom.
    """
    if family not in FAMILIES:
        raise DomainError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}")
    names, fn, default_init = FAMILIES[family]
    target = as_vector(target, "target")
    if target.size != grid.n_points:
        raise DomainError(f"target has {target.size} entries, grid has {grid.n_points}")
    theta = check_scalar(theta, "theta", lower=0.0)
    p = np.array(default_init if init is None else init, dtype=float)

    def evaluate(q):
        try:
            return _residual_and_jacobian(q, fn, target, grid, theta, inventory)
        except Exception:  # noqa: BLE001 - an infeasible trial point is a rejected step
            return None

    current = evaluate(p)
    if current is None:
        raise DomainError(f"initial parameters {p.tolist()} give a singular impact matrix")
    r, jac, eta = current
    f = float(r @ r)
    mu = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        a = jac.T @ jac
        grad = jac.T @ r
        scale = np.maximum(np.diag(a), 1e-30)
        accepted = False
        while mu < 1e16:
            try:
                step = np.linalg.solve(a + mu * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            trial = evaluate(p + step)
            if trial is not None:
                f_new = float(trial[0] @ trial[0])
                if np.isfinite(f_new) and f_new < f:
                    accepted = True
                    break
            mu *= 10.0
        if not accepted:
            converged = True  # no descent direction left at machine precision
            break
        mu /= 10.0
        decrease = f - f_new
        p = p + step
        r, jac, eta = trial
        f = f_new
        if decrease <= ftol * (1.0 + f) or np.linalg.norm(step) <= xtol * (1.0 + np.linalg.norm(p)):
            converged = True
            break

    dof = max(target.size - p.size, 1)
    s2 = f / dof
    try:
        cov = s2 * np.linalg.inv(jac.T @ jac)
        se = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        se = np.full(p.size, np.nan)
    q = stats.t.ppf(0.975, dof)
    return FitResult(
        family=family,
        params={k: float(v) for k, v in zip(names, p)},
        std_errors={k: float(v) for k, v in zip(names, se)},
        ci95={k: (float(v - q * e), float(v + q * e)) for k, v, e in zip(names, p, se)},
        residual_norm=f,
        fitted_schedule=eta,
        converged=converged,
        n_iter=it,
        horizon=grid.horizon,
    )


# ---------------------------------------------------------------------------
# Shape-constrained (convex, decreasing, G(T) = 0) fit
# ---------------------------------------------------------------------------


def cone_basis(n_points):
    """Matrix ``L`` with ``g = L c``, ``c >= 0`` spanning convex decreasing kernels
    that vanish at the last lag.

    ``c`` holds the second differences (and the last first difference) of ``g``:
    ``d_j = sum_{i >= j} c_i`` and ``g_k = sum_{j >= k} d_j``.
    """
    n = n_points - 1
    ld = np.triu(np.ones((n, n)))
    lg = np.triu(np.ones((n_points, n)))
    return lg @ ld


def project_to_cone(g):
    """Closest convex, decreasing kernel with ``g_N = 0`` (after shifting ``g``)."""
    g = as_vector(g, "g", min_length=2)
    basis = cone_basis(g.size)
    c, _ = nnls(basis, g - g[-1])
    return c, basis


def fit_nonparametric(
    target,
    start,
    grid,
    theta,
    inventory,
    smoothing=1e-3,
    tol=1e-10,
    max_nfev=5000,
):
    """Fit a tabulated convex, decreasing kernel with ``G(T) = 0``.

    The start is shifted to vanish at the horizon and projected onto the
    constraint cone. The objective adds ``smoothing * |curvature|`` to the
    schedule residual, which selects the least curved kernel among the many
    that reproduce the target.

    Returns
    -------
    ImpliedKernel
        ``diagnostics`` holds ``schedule_error`` (mean absolute error),
        ``start_error`` and ``n_iter``.
    """
    target = as_vector(target, "target")
    g_start = start.g if isinstance(start, ImpliedKernel) else as_vector(start, "start")
    if g_start.size != grid.n_points or target.size != grid.n_points:
        raise DomainError("start and target must have one value per grid point")
    theta = check_scalar(theta, "theta", lower=0.0)
    c0, basis = project_to_cone(g_start)
    lag = _lag_index(grid.n_points)

    def schedule(c):
        return _schedule_and_y(basis @ c, theta, inventory, lag)

    eta0 = schedule(c0)[0]
    start_error = float(np.mean(np.abs(eta0 - target)))
    if start_error <= tol:
        g = basis @ c0
        diag = {"schedule_error": start_error, "start_error": start_error, "n_iter": 0}
        return ImpliedKernel(g, Provenance.FITTED, diag, grid.horizon)

    n_c = c0.size

    def fun(c):
        eta = schedule(c)[0]
        return np.concatenate([eta - target, smoothing * c[:-1]])

    def jac(c):
        g = basis @ c
        _, y, s, gamma_theta = _schedule_and_y(g, theta, inventory, lag)
        d_eta_dg = _schedule_jacobian(y, s, gamma_theta, build_h(y).h, inventory)
        pen = smoothing * np.eye(n_c)[:-1]
        return np.vstack([d_eta_dg @ basis, pen])

    sol = least_squares(
        fun,
        c0,
        jac=jac,
        bounds=(0.0, np.inf),
        method="trf",
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=max_nfev,
    )
    g = basis @ sol.x
    eta = schedule(sol.x)[0]
    err = float(np.mean(np.abs(eta - target)))
    diag = {
        "schedule_error": err,
        "start_error": start_error,
        "n_iter": int(sol.nfev),
        "status": int(sol.status),
    }
    return ImpliedKernel(g, Provenance.FITTED, diag, grid.horizon)
