"""Element-by-element reconstruction of a higher-degree scalar field.

On each element find ``u*`` of degree ``k+1`` with

    (grad u*, grad w) = (q_h, grad w)   for all w of degree k+1,
    (u*, 1)           = (u_h, 1).

The stiffness matrix is singular on constants, so the two conditions are
solved together as a bordered (Lagrange multiplier) system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import triangle_basis, triangle_quadrature
from .hdg import Discretization, HDGState

__all__ = ["PostprocessedField", "postprocess", "postprocess_element"]


@dataclass
class PostprocessedField:
    coeffs: np.ndarray  # (n_el, dim P_{k+1})
    degree: int
    t: float = 0.0

    def values(self, ref_points) -> np.ndarray:
        """Values at reference points on every element, shape ``(n_el, npts)``."""
        return self.coeffs @ triangle_basis(self.degree).values(ref_points).T


def _bordered_solve(stiff, rhs, mean_row, mean_value):
    n_el, n, _ = stiff.shape
    A = np.zeros((n_el, n + 1, n + 1))
    A[:, :n, :n] = stiff
    A[:, :n, n] = mean_row
    A[:, n, :n] = mean_row
    b = np.zeros((n_el, n + 1))
    b[:, :n] = rhs
    b[:, n] = mean_value
    return np.linalg.solve(A, b[..., None])[:, :n, 0]


def postprocess(disc: Discretization, state: HDGState) -> PostprocessedField:
    """Reconstruct ``u*`` on all elements of a standard (non-variant) discretisation."""
    k = disc.cfg.k
    if disc.cfg.variant:
        raise ValueError("postprocessing applies to the standard space; the variant already has degree k+1")
    if k < 1:
        raise ValueError("postprocessing needs k >= 1")
    star = triangle_basis(k + 1)
    quad = triangle_quadrature(2 * k + 2)
    pts = quad.points
    wdet = quad.weights[None, :] * np.abs(disc.det)[:, None]
    grad = np.einsum("qic,ecd->eqid", star.gradients(pts), disc.jac_inv)  # (n_el, nqp, n*, 2)
    phi = star.values(pts)  # (nqp, n*)
    stiff = np.einsum("eq,eqic,eqjc->eij", wdet, grad, grad)
    qv = np.einsum("qi,eci->eqc", disc.basis_q.values(pts), state.q)
    rhs = np.einsum("eq,eqic,eqc->ei", wdet, grad, qv)
    mean_row = wdet @ phi
    uv = state.u @ disc.basis_u.values(pts).T
    mean_value = np.sum(wdet * uv, axis=1)
    return PostprocessedField(_bordered_solve(stiff, rhs, mean_row, mean_value), k + 1, state.t)


def postprocess_element(u_coeffs, q_coeffs, vertices, k: int) -> np.ndarray:
    """Single-element version; ``vertices`` is ``(3, 2)`` counterclockwise.

    ``u_coeffs`` has ``dim P_k`` entries and ``q_coeffs`` shape ``(2, dim P_k)``
    in the orthonormal basis of :mod:`hdgkg.basis`.
    """
    if k < 1:
        raise ValueError("postprocessing needs k >= 1")
    p = np.asarray(vertices, dtype=float)
    J = np.column_stack([p[1] - p[0], p[2] - p[0]])
    inv = np.linalg.inv(J)
    quad = triangle_quadrature(2 * k + 2)
    w = quad.weights * abs(np.linalg.det(J))
    star, base = triangle_basis(k + 1), triangle_basis(k)
    grad = star.gradients(quad.points) @ inv  # (nqp, n*, 2)
    stiff = np.einsum("q,qic,qjc->ij", w, grad, grad)
    qv = base.values(quad.points) @ np.asarray(q_coeffs).T  # (nqp, 2)
    rhs = np.einsum("q,qic,qc->i", w, grad, qv)
    mean_row = w @ star.values(quad.points)
    mean_value = w @ (base.values(quad.points) @ np.asarray(u_coeffs))
    return _bordered_solve(stiff[None], rhs[None], mean_row[None], np.array([mean_value]))[0]
