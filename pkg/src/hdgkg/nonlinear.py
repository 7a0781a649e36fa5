"""Cubic nonlinearity, its potential, the symmetric discrete gradient and Newton's method."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

__all__ = [
    "f",
    "fprime",
    "potential",
    "discrete_gradient",
    "discrete_gradient_partials",
    "discrete_gradient_quotient",
    "NewtonConfig",
    "NewtonResult",
    "NewtonError",
    "MaxIterationsExceeded",
    "SingularJacobian",
    "newton_solve",
]


def f(s):
    return s**3 - s


def fprime(s):
    return 3.0 * s**2 - 1.0


def potential(s):
    """``F(s) = (1 - s^2)^2 / 4``, so that ``F' = f`` and ``F >= 0``."""
    return 0.25 * (1.0 - s**2) ** 2


def discrete_gradient(a, b):
    """Closed form of ``(F(a) - F(b)) / (a - b)``, equal to ``f(a)`` on the diagonal."""
    return 0.25 * (a + b) * (a * a + b * b - 2.0)


def discrete_gradient_partials(a, b):
    base = 0.25 * (a * a + b * b - 2.0)
    s = 0.5 * (a + b)
    return base + s * a, base + s * b


def discrete_gradient_quotient(a, b):
    """Raw difference quotient; only meaningful for ``a != b``.  Used as a cross-check."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = (potential(a) - potential(b)) / (a - b)
    return np.where(a == b, f(a), q)


class NewtonError(RuntimeError):
    pass


class MaxIterationsExceeded(NewtonError):
    pass


class SingularJacobian(NewtonError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    """Stopping rule: ``rms(residual) <= tol * scale`` with a caller-provided scale."""

    tol: float = 1e-12
    max_iter: int = 30
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    history: list[float] = field(default_factory=list)


def _rms(r):
    r = np.atleast_1d(r)
    return float(np.linalg.norm(r) / np.sqrt(max(r.size, 1)))


def _default_solve(J, r):
    if sp.issparse(J):
        return spla.spsolve(J.tocsc(), r)
    J = np.atleast_2d(np.asarray(J, dtype=float))
    return np.linalg.solve(J, np.atleast_1d(r))


def newton_solve(
    residual: Callable,
    jacobian: Callable,
    x0,
    cfg: NewtonConfig = NewtonConfig(),
    solve: Callable | None = None,
    scale: float = 1.0,
) -> NewtonResult:
    """Newton iteration ``x <- x - damping * J(x)^{-1} R(x)``.

    ``solve(J, r)`` solves with whatever ``jacobian`` returns; the default
    handles dense and scipy-sparse matrices.  Iteration stops once the RMS
    residual drops below ``cfg.tol * scale``, or once the update stalls at
    round-off level with a residual already within a factor 100 of that
    target.
    """
    solve = solve or _default_solve
    scalar = np.ndim(x0) == 0
    x = np.atleast_1d(np.array(x0, dtype=float))
    target = cfg.tol * scale
    r = np.atleast_1d(residual(x[0] if scalar else x))
    res = _rms(r)
    history = [res]
    it = 0
    while res > target:
        if it >= cfg.max_iter:
            raise MaxIterationsExceeded(
                f"Newton did not converge in {cfg.max_iter} iterations (residual {res:.3e}, target {target:.3e})"
            )
        J = jacobian(x[0] if scalar else x)
        try:
            dx = np.atleast_1d(solve(J, r))
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian("non-finite Newton update")
        x = x - cfg.damping * dx
        it += 1
        r = np.atleast_1d(residual(x[0] if scalar else x))
        res = _rms(r)
        history.append(res)
        if not np.isfinite(res):
            raise NewtonError("residual became non-finite")
        stalled = np.max(np.abs(dx)) <= 8 * np.finfo(float).eps * max(1.0, np.max(np.abs(x)))
        if stalled and res <= 100 * target:
            log.debug("Newton stalled at round-off, residual %.3e", res)
            break
    return NewtonResult(x[0] if scalar else x, it, res, history)
