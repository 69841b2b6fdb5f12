"""Checked dense solves."""

from __future__ import annotations

import numpy as np

from .exceptions import SingularSystemError

COND_LIMIT = 1e14


def solve_checked(a, b, what="system"):
    """``np.linalg.solve`` that refuses numerically singular matrices."""
    try:
        cond = np.linalg.cond(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - SVD failure
        raise SingularSystemError(f"{what}: SVD did not converge") from exc
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystemError(f"{what} is singular (condition number {cond:.3g})")
    return np.linalg.solve(a, b)
