"""Orthonormal polynomial bases and quadrature on the reference triangle and edge.

The reference triangle has vertices (0,0), (1,0), (0,1); the reference edge
is [0, 1].  Triangle modes are the Dubiner (Koornwinder) polynomials,
orthonormal in L2 of the reference triangle and ordered by total degree,
so the first ``dim P_j`` modes span ``P_j`` for every ``j <= k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, gammaln, roots_jacobi, roots_legendre

MAX_DEGREE = 6
MAX_QUADRATURE_DEGREE = 60


def dim_p(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def mode_ids(k: int) -> list[tuple[int, int]]:
    return [(i, d - i) for d in range(k + 1) for i in range(d, -1, -1)]


def _jacobi_norm(n, a, b):
    # squared L2 norm of P_n^{(a,b)} under weight (1-x)^a (1+x)^b
    return math.exp(
        (a + b + 1) * math.log(2.0)
        - math.log(2 * n + a + b + 1)
        + gammaln(n + a + 1)
        + gammaln(n + b + 1)
        - gammaln(n + a + b + 1)
        - gammaln(n + 1)
    )


def _jacobi(n, a, b, x):
    return eval_jacobi(n, a, b, x) / math.sqrt(_jacobi_norm(n, a, b))


def _djacobi(n, a, b, x):
    if n == 0:
        return np.zeros_like(x)
    return (
        0.5 * (n + a + b + 1) * eval_jacobi(n - 1, a + 1, b + 1, x)
        / math.sqrt(_jacobi_norm(n, a, b))
    )


@dataclass(frozen=True)
class TriangleBasis:
    degree: int

    @property
    def dim(self) -> int:
        return dim_p(self.degree)

    def _collapsed(self, points):
        pts = np.asarray(points, dtype=float)
        xi = 2.0 * pts[..., 0] - 1.0
        eta = 2.0 * pts[..., 1] - 1.0
        one_m = 1.0 - eta
        safe = np.abs(one_m) > 1e-14
        a = np.where(safe, 2.0 * (1.0 + xi) / np.where(safe, one_m, 1.0) - 1.0, -1.0)
        return a, eta

    def values(self, points) -> np.ndarray:
        """Basis values, shape ``points.shape[:-1] + (dim,)``."""
        a, b = self._collapsed(points)
        out = []
        for i, j in mode_ids(self.degree):
            v = _jacobi(i, 0, 0, a) * _jacobi(j, 2 * i + 1, 0, b) * (1.0 - b) ** i
            out.append(_SCALE * v)
        return np.stack(out, axis=-1)

    def gradients(self, points) -> np.ndarray:
        """Reference gradients, shape ``points.shape[:-1] + (dim, 2)``."""
        a, b = self._collapsed(points)
        c = 1.0 - b
        grads = []
        for i, j in mode_ids(self.degree):
            fa, dfa = _jacobi(i, 0, 0, a), _djacobi(i, 0, 0, a)
            gb, dgb = _jacobi(j, 2 * i + 1, 0, b), _djacobi(j, 2 * i + 1, 0, b)
            cim1 = c ** (i - 1) if i >= 1 else np.zeros_like(c)
            d_xi = 2.0 * dfa * gb * cim1
            d_eta = dfa * (1.0 + a) * gb * cim1 + fa * dgb * c**i - i * fa * gb * cim1
            # chain rule d(xi)/dr = d(eta)/ds = 2
            grads.append(np.stack([2.0 * _SCALE * d_xi, 2.0 * _SCALE * d_eta], axis=-1))
        return np.stack(grads, axis=-2)


# orthonormal on the biunit triangle is sqrt(2); the reference triangle is 4x smaller
_SCALE = 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class EdgeBasis:
    """Orthonormal Legendre polynomials on [0, 1]."""

    degree: int

    @property
    def dim(self) -> int:
        return self.degree + 1

    def values(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        x = 2.0 * s - 1.0
        return np.stack(
            [math.sqrt(2 * n + 1) * eval_jacobi(n, 0, 0, x) for n in range(self.degree + 1)],
            axis=-1,
        )


def _check_degree(k):
    if not 0 <= k <= MAX_DEGREE:
        raise ValueError(f"polynomial degree must lie in [0, {MAX_DEGREE}], got {k}")


@lru_cache(maxsize=None)
def triangle_basis(k: int) -> TriangleBasis:
    _check_degree(k)
    return TriangleBasis(k)


@lru_cache(maxsize=None)
def edge_basis(k: int) -> EdgeBasis:
    _check_degree(k)
    return EdgeBasis(k)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def _check_quad_degree(d):
    if d < 0:
        raise ValueError(f"quadrature degree must be non-negative, got {d}")
    if d > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"quadrature degree {d} exceeds supported maximum {MAX_QUADRATURE_DEGREE}")


@lru_cache(maxsize=None)
def edge_quadrature(d: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] with ``ceil((d+1)/2)`` points."""
    _check_quad_degree(d)
    n = max(1, math.ceil((d + 1) / 2))
    x, w = roots_legendre(n)
    pts = 0.5 * (x + 1.0)
    pts.setflags(write=False)
    wts = 0.5 * w
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, 2 * n - 1)


@lru_cache(maxsize=None)
def triangle_quadrature(d: int) -> QuadratureRule:
    """Collapsed (Stroud conical) product rule exact for total degree ``d``."""
    _check_quad_degree(d)
    n = max(1, math.ceil((d + 1) / 2))
    xa, wa = roots_legendre(n)
    xb, wb = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (1.0 + xb)
    u = 0.5 * (1.0 + xa)
    S, U = np.meshgrid(s, u, indexing="ij")
    WB, WA = np.meshgrid(wb, wa, indexing="ij")
    pts = np.column_stack([(U * (1.0 - S)).ravel(), S.ravel()])
    wts = (WA * WB).ravel() / 8.0
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, 2 * n - 1)


def default_volume_degree(k: int) -> int:
    # exact for (u^3 - u) w and its Jacobian with u, w of degree k
    return max(2 * k + 2, 4 * k)


def default_edge_degree(k: int) -> int:
    return 2 * k + 2
