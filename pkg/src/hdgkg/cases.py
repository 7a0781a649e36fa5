"""Manufactured solutions and initial data for the Klein-Gordon experiments.

Every case stores numpy closed forms.  Cases with an exact solution also
carry a backend-agnostic ``symbolic(x, y, t, lib)`` so :func:`validate_case`
can differentiate it independently with mpmath at high precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import mpmath
import numpy as np

__all__ = ["ManufacturedCase", "builtin_case", "validate_case", "CaseValidationError"]

PI = np.pi
SQRT3 = np.sqrt(3.0)


class CaseValidationError(ValueError):
    pass


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    u0: Callable
    u1: Callable
    lap_u0: Callable
    grad_u1: Callable
    grad_u0: Callable | None = None
    u: Callable | None = None
    u_t: Callable | None = None
    u_tt: Callable | None = None
    grad: Callable | None = None
    lap: Callable | None = None
    source: Callable | None = None
    boundary: str = "homogeneous"  # or "exact"
    symbolic: Callable | None = None
    symbolic_u0: Callable | None = None
    symbolic_u1: Callable | None = None

    @property
    def has_exact(self) -> bool:
        return self.u is not None

    def dirichlet(self, t: float):
        if self.boundary == "exact":
            return lambda x, y: self.u(x, y, t)
        return None


def _from_exact(name, u, u_t, u_tt, grad, lap, grad_u1, symbolic, boundary="homogeneous") -> ManufacturedCase:
    def source(x, y, t):
        v = u(x, y, t)
        return u_tt(x, y, t) - lap(x, y, t) + v**3 - v

    return ManufacturedCase(
        name=name,
        u0=lambda x, y: u(x, y, 0.0),
        u1=lambda x, y: u_t(x, y, 0.0),
        lap_u0=lambda x, y: lap(x, y, 0.0),
        grad_u1=grad_u1,
        grad_u0=lambda x, y: grad(x, y, 0.0),
        u=u,
        u_t=u_t,
        u_tt=u_tt,
        grad=grad,
        lap=lap,
        source=source,
        boundary=boundary,
        symbolic=symbolic,
    )


def _s(x, y):
    return np.sin(PI * x) * np.sin(PI * y)


def _grad_s(x, y):
    return PI * np.cos(PI * x) * np.sin(PI * y), PI * np.sin(PI * x) * np.cos(PI * y)


def _example1() -> ManufacturedCase:
    def u(x, y, t):
        return t**2 * _s(x, y)

    def grad(x, y, t):
        gx, gy = _grad_s(x, y)
        return t**2 * gx, t**2 * gy

    def sym(x, y, t, lib):
        return t**2 * lib.sin(lib.pi * x) * lib.sin(lib.pi * y)

    case = _from_exact(
        "example1",
        u,
        lambda x, y, t: 2 * t * _s(x, y),
        lambda x, y, t: 2 * _s(x, y) + 0 * t,
        grad,
        lambda x, y, t: -2 * PI**2 * t**2 * _s(x, y),
        lambda x, y: (0 * x, 0 * y),
        sym,
    )
    return case


def _example2() -> ManufacturedCase:
    def e(t):
        return np.exp(2 * t**2)

    def grad(x, y, t):
        gx, gy = _grad_s(x, y)
        return e(t) * gx, e(t) * gy

    def sym(x, y, t, lib):
        return lib.exp(2 * t**2) * lib.sin(lib.pi * x) * lib.sin(lib.pi * y)

    case = _from_exact(
        "example2",
        lambda x, y, t: e(t) * _s(x, y),
        lambda x, y, t: 4 * t * e(t) * _s(x, y),
        lambda x, y, t: (4 + 16 * t**2) * e(t) * _s(x, y),
        grad,
        lambda x, y, t: -2 * PI**2 * e(t) * _s(x, y),
        lambda x, y: (0 * x, 0 * y),
        sym,
    )
    return case


def _example3() -> ManufacturedCase:
    def z(x, t):
        return x / SQRT3 - t

    def sech2(x, t):
        return 1.0 / np.cosh(z(x, t)) ** 2

    def sym(x, y, t, lib):
        return lib.tanh(x / lib.sqrt(3) - t)

    case = _from_exact(
        "example3",
        lambda x, y, t: np.tanh(z(x, t)) + 0 * y,
        lambda x, y, t: -sech2(x, t) + 0 * y,
        lambda x, y, t: -2 * sech2(x, t) * np.tanh(z(x, t)) + 0 * y,
        lambda x, y, t: (sech2(x, t) / SQRT3 + 0 * y, 0 * x + 0 * y),
        lambda x, y, t: -2.0 / 3.0 * sech2(x, t) * np.tanh(z(x, t)) + 0 * y,
        # d/dt (sech^2(z) / sqrt3) at t = 0
        lambda x, y: (2 * sech2(x, 0.0) * np.tanh(z(x, 0.0)) / SQRT3 + 0 * y, 0 * x + 0 * y),
        sym,
        boundary="exact",
    )
    return case


def _example4() -> ManufacturedCase:
    def X(x):
        return x**2 * (1 - x) ** 2

    def dX(x):
        return 2 * x * (1 - x) ** 2 - 2 * x**2 * (1 - x)

    def d2X(x):
        return 2 - 12 * x + 12 * x**2

    def u0(x, y):
        return 20 * X(x) * X(y)

    def u1(x, y):
        return 2 * np.sin(2 * PI * x) * np.sin(2 * PI * y)

    return ManufacturedCase(
        name="example4",
        u0=u0,
        u1=u1,
        lap_u0=lambda x, y: 20 * (d2X(x) * X(y) + X(x) * d2X(y)),
        grad_u0=lambda x, y: (20 * dX(x) * X(y), 20 * X(x) * dX(y)),
        grad_u1=lambda x, y: (
            4 * PI * np.cos(2 * PI * x) * np.sin(2 * PI * y),
            4 * PI * np.sin(2 * PI * x) * np.cos(2 * PI * y),
        ),
        symbolic_u0=lambda x, y, lib: 20 * x**2 * (1 - x) ** 2 * y**2 * (1 - y) ** 2,
        symbolic_u1=lambda x, y, lib: 2 * lib.sin(2 * lib.pi * x) * lib.sin(2 * lib.pi * y),
    )


_BUILDERS = {1: _example1, 2: _example2, 3: _example3, 4: _example4}


def builtin_case(example: int) -> ManufacturedCase:
    try:
        return _BUILDERS[int(example)]()
    except KeyError:
        raise ValueError(f"unknown example id {example!r}; choose from {sorted(_BUILDERS)}") from None


def validate_case(case: ManufacturedCase, n: int = 50, seed: int = 0, tol: float = 1e-10) -> float:
    """Check stored closed forms against high-precision numerical derivatives.

    Samples ``n`` random points in the unit square and ``t`` in [0, 1]; returns
    the largest relative discrepancy and raises :class:`CaseValidationError`
    when it exceeds ``tol``.  The PDE residual ``u_tt - lap u + u^3 - u - g``
    is recomputed from ``symbolic`` alone.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0

    def rel(a, b):
        return abs(float(a) - float(b)) / (1.0 + abs(float(b)))

    with mpmath.workdps(30):
        for _ in range(n):
            x, y, t = (float(v) for v in rng.random(3))
            if case.symbolic is not None:
                U = lambda a, b, c: case.symbolic(a, b, c, mpmath)
                p = (mpmath.mpf(x), mpmath.mpf(y), mpmath.mpf(t))
                u = U(*p)
                uxx = mpmath.diff(U, p, (2, 0, 0))
                uyy = mpmath.diff(U, p, (0, 2, 0))
                utt = mpmath.diff(U, p, (0, 0, 2))
                ut = mpmath.diff(U, p, (0, 0, 1))
                ux = mpmath.diff(U, p, (1, 0, 0))
                uy = mpmath.diff(U, p, (0, 1, 0))
                g = utt - (uxx + uyy) + u**3 - u
                gx, gy = case.grad(x, y, t)
                checks = [
                    (case.u(x, y, t), u),
                    (case.u_t(x, y, t), ut),
                    (case.u_tt(x, y, t), utt),
                    (case.lap(x, y, t), uxx + uyy),
                    (gx, ux),
                    (gy, uy),
                    (case.source(x, y, t), g),
                ]
                # initial-velocity gradient: d/dx d/dt at t = 0
                p0 = (mpmath.mpf(x), mpmath.mpf(y), mpmath.mpf(0))
                g1x, g1y = case.grad_u1(x, y)
                checks += [(g1x, mpmath.diff(U, p0, (1, 0, 1))), (g1y, mpmath.diff(U, p0, (0, 1, 1)))]
            else:
                U0 = lambda a, b: case.symbolic_u0(a, b, mpmath)
                U1 = lambda a, b: case.symbolic_u1(a, b, mpmath)
                p = (mpmath.mpf(x), mpmath.mpf(y))
                g0x, g0y = case.grad_u0(x, y)
                g1x, g1y = case.grad_u1(x, y)
                checks = [
                    (case.u0(x, y), U0(*p)),
                    (case.u1(x, y), U1(*p)),
                    (case.lap_u0(x, y), mpmath.diff(U0, p, (2, 0)) + mpmath.diff(U0, p, (0, 2))),
                    (g0x, mpmath.diff(U0, p, (1, 0))),
                    (g0y, mpmath.diff(U0, p, (0, 1))),
                    (g1x, mpmath.diff(U1, p, (1, 0))),
                    (g1y, mpmath.diff(U1, p, (0, 1))),
                ]
            worst = max(worst, max(rel(a, b) for a, b in checks))
    if worst > tol:
        raise CaseValidationError(f"{case.name}: closed forms disagree with derivatives ({worst:.3e} > {tol:.1e})")
    return worst
