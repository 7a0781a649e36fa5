"""Element-local HDG operators, static condensation and projections.

Unknowns per element are stored as one vector ``x = (q_x, q_y, u)``; trace
unknowns live on faces in the face-global parameterisation of
:mod:`hdgkg.mesh`.  Every time level of every scheme in this package reduces
to the block system

    A q + B u - C lam         = F_q
    D q + Kuu u - E lam       = F_u        (D = -B^T)
    sum_K (C^T q - E^T u + G lam) = b      on interior faces
    lam = lam_D                            on boundary faces

where ``Kuu`` collects stabilisation, scaled mass and any Newton
linearisation.  :class:`CondensedSystem` eliminates ``(q, u)`` element by
element and factors the resulting trace system once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import (
    default_edge_degree,
    default_volume_degree,
    edge_basis,
    edge_quadrature,
    triangle_basis,
    triangle_quadrature,
)
from .mesh import Mesh, batched_geometry

__all__ = [
    "SpaceConfig",
    "HDGState",
    "LocalMatrices",
    "Discretization",
    "CondensedSystem",
    "SingularSystemError",
    "assemble_local",
    "condense",
    "recover",
    "monolithic_solve",
    "monolithic_matrix",
    "solve_elliptic_init",
    "hdg_project",
    "l2_project_element",
    "l2_project_face",
    "lift_flux",
    "flux_residual",
]


class SingularSystemError(RuntimeError):
    """A local block or the global trace matrix could not be factored."""


@dataclass(frozen=True)
class SpaceConfig:
    """Polynomial degree, scheme family and stabilisation.

    The standard scheme uses degree ``k`` for ``u``, ``q`` and the trace.  The
    variant raises ``u`` to ``k + 1`` and stabilises with
    ``(tau / h_K) (P u - lam)``, ``P`` being the face L2 projection.
    """

    k: int
    variant: bool = False
    tau: float = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"degree must be non-negative, got {self.k}")
        if not self.tau > 0:
            raise ValueError(f"stabilisation tau must be positive, got {self.tau}")

    @property
    def u_degree(self) -> int:
        return self.k + 1 if self.variant else self.k

    @property
    def q_degree(self) -> int:
        return self.k

    @property
    def trace_degree(self) -> int:
        return self.k


@dataclass
class HDGState:
    t: float
    u: np.ndarray  # (n_el, nu)
    q: np.ndarray  # (n_el, 2, nq)
    trace: np.ndarray  # (n_faces, nl)

    def copy(self) -> "HDGState":
        return HDGState(self.t, self.u.copy(), self.q.copy(), self.trace.copy())

    @classmethod
    def zeros(cls, disc: "Discretization", t: float = 0.0) -> "HDGState":
        return cls(
            t,
            np.zeros((disc.n_el, disc.nu)),
            np.zeros((disc.n_el, 2, disc.nq)),
            np.zeros((disc.n_faces, disc.nl)),
        )


@dataclass(frozen=True)
class LocalMatrices:
    """Per-element dense blocks, leading axis over elements.

    ``trace_q``, ``trace_u`` and ``trace_trace`` have their trace columns
    ordered by local edge, then edge mode.
    """

    mass_q: np.ndarray  # (q, v) for the 2-vector field, (n_el, 2nq, 2nq)
    mass_u: np.ndarray  # (u, w), (n_el, nu, nu)
    div: np.ndarray  # (u, div v) rows v, cols u, (n_el, 2nq, nu)
    grad: np.ndarray  # (q, grad w) rows w, cols q, (n_el, nu, 2nq)
    flux_q: np.ndarray  # <q.n, w> rows w, cols q, (n_el, nu, 2nq)
    trace_q: np.ndarray  # <lam, v.n> rows v, (n_el, 2nq, 3nl)
    trace_u: np.ndarray  # <tau lam, w> (or P-weighted), (n_el, nu, 3nl)
    stab: np.ndarray  # <tau u, w> (or <tau/h P u, P w>), (n_el, nu, nu)
    trace_trace: np.ndarray  # <tau lam, mu> per edge, (n_el, 3nl, 3nl)

    @property
    def D(self) -> np.ndarray:
        return self.grad - self.flux_q

    def element_operator(self, alpha: float = 0.0, extra_uu=None) -> np.ndarray:
        """``[[A, B], [D, S + alpha M + extra]]`` for every element."""
        n_el, nq2, nu = self.div.shape
        K = np.zeros((n_el, nq2 + nu, nq2 + nu))
        K[:, :nq2, :nq2] = self.mass_q
        K[:, :nq2, nq2:] = self.div
        K[:, nq2:, :nq2] = self.D
        Kuu = self.stab + alpha * self.mass_u
        if extra_uu is not None:
            Kuu = Kuu + extra_uu
        K[:, nq2:, nq2:] = Kuu
        return K

    @property
    def coupling(self) -> np.ndarray:
        """``L = [C; E]`` so that element rows read ``K x - L lam = F``."""
        return np.concatenate([self.trace_q, self.trace_u], axis=1)

    @property
    def transmission(self) -> np.ndarray:
        """``R = [C^T, -E^T]`` so that face rows read ``sum R x + G lam = b``."""
        return np.concatenate(
            [self.trace_q.transpose(0, 2, 1), -self.trace_u.transpose(0, 2, 1)], axis=2
        )


class Discretization:
    """Quadrature tables, geometry and local matrices for one mesh and space."""

    def __init__(self, mesh: Mesh, cfg: SpaceConfig, volume_degree=None, edge_degree=None):
        self.mesh = mesh
        self.cfg = cfg
        ku, kq, kl = cfg.u_degree, cfg.q_degree, cfg.trace_degree
        self.basis_u = triangle_basis(ku)
        self.basis_q = triangle_basis(kq)
        self.basis_l = edge_basis(kl)
        self.nu, self.nq, self.nl = self.basis_u.dim, self.basis_q.dim, self.basis_l.dim
        self.n_el = mesh.n_triangles
        self.n_faces = mesh.n_faces
        self.nloc = 2 * self.nq + self.nu

        vd = default_volume_degree(ku) if volume_degree is None else volume_degree
        ed = default_edge_degree(ku) if edge_degree is None else edge_degree
        self.vquad = triangle_quadrature(vd)
        self.equad = edge_quadrature(ed)

        origin, J, det, inv, normals = batched_geometry(mesh)
        self.origin, self.jac, self.det, self.jac_inv = origin, J, det, inv
        self.normals = normals  # (n_el, 3, 2), outward
        absdet = np.abs(det)

        pts, w = self.vquad.points, self.vquad.weights
        self.phi_u = self.basis_u.values(pts)  # (nqp, nu)
        self.phi_q = self.basis_q.values(pts)
        self.grad_u = np.einsum("qic,ecd->eqid", self.basis_u.gradients(pts), inv)
        self.grad_q = np.einsum("qic,ecd->eqid", self.basis_q.gradients(pts), inv)
        self.wdet = w[None, :] * absdet[:, None]  # (n_el, nqp)
        self.xq = origin[:, None, :] + np.einsum("ecd,qd->eqc", J, pts)

        # face tables in the face-global parameterisation
        s, ws = self.equad.points, self.equad.weights
        fv = mesh.vertices[mesh.faces]  # (nf, 2, 2)
        self.face_points = fv[:, None, 0, :] + s[None, :, None] * (fv[:, None, 1, :] - fv[:, None, 0, :])
        self.face_weights = ws[None, :] * mesh.face_lengths[:, None]  # (nf, nfq)
        self.mu = self.basis_l.values(s)  # (nfq, nl)
        t2f = mesh.triangle_to_faces
        self.t2f = t2f
        fx = self.face_points[t2f]  # (n_el, 3, nfq, 2)
        ref = np.einsum("ecd,eipd->eipc", inv, fx - origin[:, None, None, :])
        self.fphi_u = self.basis_u.values(ref)  # (n_el, 3, nfq, nu)
        self.fphi_q = self.basis_q.values(ref)
        self.fw = self.face_weights[t2f]  # (n_el, 3, nfq)
        self.h = mesh.h_elements
        if cfg.variant:
            self.tau_e = cfg.tau / self.h[:, None] * np.ones((1, 3))
        else:
            self.tau_e = cfg.tau * np.ones((self.n_el, 3))
        self.trace_dofs = (t2f[:, :, None] * self.nl + np.arange(self.nl)).reshape(self.n_el, 3 * self.nl)
        bdofs = (np.flatnonzero(mesh.boundary)[:, None] * self.nl + np.arange(self.nl)).ravel()
        self.boundary_dofs = bdofs
        mask = np.ones(self.n_faces * self.nl, dtype=bool)
        mask[bdofs] = False
        self.interior_dofs = np.flatnonzero(mask)
        self.local = assemble_local(self)

    # -- evaluation helpers -------------------------------------------------
    def u_at_quad(self, u: np.ndarray) -> np.ndarray:
        return u @ self.phi_u.T  # (n_el, nqp)

    def q_at_quad(self, q: np.ndarray) -> np.ndarray:
        return np.einsum("qi,eci->eqc", self.phi_q, q)  # (n_el, nqp, 2)

    def load(self, values: np.ndarray) -> np.ndarray:
        """``(g, w)`` for every basis function ``w`` from values at volume quad points."""
        return (self.wdet * values) @ self.phi_u

    def eval_at(self, func: Callable, t=None) -> np.ndarray:
        x, y = self.xq[..., 0], self.xq[..., 1]
        return func(x, y) if t is None else func(x, y, t)

    def gather_traces(self, trace: np.ndarray) -> np.ndarray:
        return trace.reshape(-1)[self.trace_dofs]  # (n_el, 3nl)

    def pack(self, state: HDGState) -> np.ndarray:
        x = np.concatenate([state.q.reshape(self.n_el, -1), state.u], axis=1)
        return np.concatenate([x.ravel(), state.trace.ravel()])

    def unpack(self, X: np.ndarray, t: float = 0.0) -> HDGState:
        n = self.n_el * self.nloc
        x = X[:n].reshape(self.n_el, self.nloc)
        return self.state_from(x, X[n:].reshape(self.n_faces, self.nl), t)

    def state_from(self, x: np.ndarray, lam: np.ndarray, t: float = 0.0) -> HDGState:
        nq2 = 2 * self.nq
        return HDGState(t, x[:, nq2:].copy(), x[:, :nq2].reshape(self.n_el, 2, self.nq).copy(), lam.copy())

    def element_vector(self, state: HDGState) -> np.ndarray:
        return np.concatenate([state.q.reshape(self.n_el, -1), state.u], axis=1)

    def boundary_values(self, func: Callable | None, t=None) -> np.ndarray:
        """Face L2 projection of ``func`` on boundary faces, zero elsewhere."""
        lam = np.zeros((self.n_faces, self.nl))
        if func is not None:
            g = func if t is None else (lambda x, y: func(x, y, t))
            proj = l2_project_face(self, g)
            b = self.mesh.boundary
            lam[b] = proj[b]
        return lam

    # -- norms ---------------------------------------------------------------
    def l2_norm2_u(self, u: np.ndarray) -> float:
        return float(np.einsum("ei,eij,ej->", u, self.local.mass_u, u))

    def l2_norm2_q(self, q: np.ndarray) -> float:
        qq = q.reshape(self.n_el, -1)
        return float(np.einsum("ei,eij,ej->", qq, self.local.mass_q, qq))

    def jump_norm2(self, u: np.ndarray, trace: np.ndarray) -> float:
        """Stabilisation-weighted face norm of ``u - lam`` summed over element boundaries."""
        lm = self.local
        lam = self.gather_traces(trace)
        return float(
            np.einsum("ei,eij,ej->", u, lm.stab, u)
            - 2.0 * np.einsum("ei,eij,ej->", u, lm.trace_u, lam)
            + np.einsum("ei,eij,ej->", lam, lm.trace_trace, lam)
        )

    def element_action(self, state: HDGState) -> np.ndarray:
        """``D q + S u - E lam`` per element, the discrete ``-div`` with flux."""
        lm = self.local
        qq = state.q.reshape(self.n_el, -1)
        lam = self.gather_traces(state.trace)
        return (
            np.einsum("eij,ej->ei", lm.D, qq)
            + np.einsum("eij,ej->ei", lm.stab, state.u)
            - np.einsum("eij,ej->ei", lm.trace_u, lam)
        )


def assemble_local(disc: Discretization) -> LocalMatrices:
    """Evaluate all element blocks with the discretisation's quadrature."""
    n_el, nq, nu, nl = disc.n_el, disc.nq, disc.nu, disc.nl
    wdet, phi_u, phi_q = disc.wdet, disc.phi_u, disc.phi_q

    mass_u = np.einsum("eq,qi,qj->eij", wdet, phi_u, phi_u)
    mq = np.einsum("eq,qi,qj->eij", wdet, phi_q, phi_q)
    mass_q = np.zeros((n_el, 2 * nq, 2 * nq))
    mass_q[:, :nq, :nq] = mq
    mass_q[:, nq:, nq:] = mq

    # (u, div v): rows v = (psi_i, 0) then (0, psi_i)
    div = np.concatenate(
        [np.einsum("eq,eqi,qj->eij", wdet, disc.grad_q[..., c], phi_u) for c in range(2)], axis=1
    )
    # (q, grad w): rows w, columns q components
    grad = np.concatenate(
        [np.einsum("eq,eqi,qj->eij", wdet, disc.grad_u[..., c], phi_q) for c in range(2)], axis=2
    )

    fw, fu, fq, mu, n = disc.fw, disc.fphi_u, disc.fphi_q, disc.mu, disc.normals
    flux_q = np.concatenate(
        [np.einsum("eip,ei,eipj,eipk->ejk", fw, n[..., c], fu, fq) for c in range(2)], axis=2
    )
    # <lam_a, v.n> on edge i
    cq = [np.einsum("eip,ei,eipm,pa->emia", fw, n[..., c], fq, mu) for c in range(2)]
    trace_q = np.concatenate(cq, axis=1).reshape(n_el, 2 * nq, 3 * nl)

    tr = np.einsum("eip,eipj,pa->eiaj", fw, fu, mu)  # <phi_j, mu_a>_E
    gram = np.einsum("eip,pa,pb->eiab", fw, mu, mu)
    tau = disc.tau_e
    trace_u = (tau[:, :, None, None] * tr).transpose(0, 3, 1, 2).reshape(n_el, nu, 3 * nl)
    trace_trace = np.zeros((n_el, 3 * nl, 3 * nl))
    for i in range(3):
        trace_trace[:, i * nl:(i + 1) * nl, i * nl:(i + 1) * nl] = tau[:, i, None, None] * gram[:, i]
    if disc.cfg.variant:
        proj = np.linalg.solve(gram, tr)  # face projection coefficients of each phi_j
        stab = np.einsum("ei,eiaj,eiab,eibl->ejl", tau, proj, gram, proj)
    else:
        stab = np.einsum("ei,eip,eipj,eipl->ejl", tau, fw, fu, fu)

    return LocalMatrices(
        mass_q=mass_q,
        mass_u=mass_u,
        div=div,
        grad=grad,
        flux_q=flux_q,
        trace_q=trace_q,
        trace_u=trace_u,
        stab=stab,
        trace_trace=trace_trace,
    )


class CondensedSystem:
    """Trace system obtained by eliminating element unknowns.

    Built once from the element operators ``K``; :meth:`solve` may then be
    called with any number of load vectors, reusing the local inverses and
    the sparse LU factorisation of the interior trace block.
    """

    def __init__(self, disc: Discretization, K: np.ndarray):
        self.disc = disc
        self.K = K
        lm = disc.local
        self.L = lm.coupling
        self.R = lm.transmission
        try:
            self.Kinv = np.linalg.inv(K)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError("singular element block (tau <= 0 or degenerate element?)") from exc
        if not np.all(np.isfinite(self.Kinv)):
            raise SingularSystemError("non-finite element block inverse")
        self.RKinv = self.R @ self.Kinv  # (n_el, 3nl, nloc)
        H_loc = self.RKinv @ self.L + lm.trace_trace
        dofs = disc.trace_dofs
        m = dofs.shape[1]
        rows = np.repeat(dofs, m, axis=1).ravel()
        cols = np.tile(dofs, (1, m)).ravel()
        n = disc.n_faces * disc.nl
        H = sp.csr_matrix((H_loc.ravel(), (rows, cols)), shape=(n, n))
        self.matrix = H[disc.interior_dofs][:, disc.interior_dofs].tocsc()
        self.coupling_fixed = H[disc.interior_dofs][:, disc.boundary_dofs].tocsr()
        self._lu = None
        if self.matrix.shape[0]:
            try:
                self._lu = spla.splu(self.matrix)
            except RuntimeError as exc:
                raise SingularSystemError("singular global trace matrix") from exc

    def rhs(self, F: np.ndarray, b: np.ndarray | None = None, fixed: np.ndarray | None = None) -> np.ndarray:
        """Right-hand side of the interior trace equations."""
        disc = self.disc
        n = disc.n_faces * disc.nl
        r = np.zeros(n)
        if b is not None:
            r += b.ravel()
        np.add.at(r, disc.trace_dofs.ravel(), -np.einsum("eij,ej->ei", self.RKinv, F).ravel())
        out = r[disc.interior_dofs]
        if fixed is not None:
            out = out - self.coupling_fixed @ fixed.ravel()[disc.boundary_dofs]
        return out

    def solve(self, F: np.ndarray, b: np.ndarray | None = None, fixed: np.ndarray | None = None):
        """Return ``(x, lam)`` for element loads ``F`` and trace data."""
        disc = self.disc
        lam = np.zeros(disc.n_faces * disc.nl)
        if fixed is not None:
            lam[disc.boundary_dofs] = fixed.ravel()[disc.boundary_dofs]
        if self._lu is not None:
            lam[disc.interior_dofs] = self._lu.solve(self.rhs(F, b, fixed))
        lam = lam.reshape(disc.n_faces, disc.nl)
        return self.recover(lam, F), lam

    def recover(self, lam: np.ndarray, F: np.ndarray) -> np.ndarray:
        lam_e = self.disc.gather_traces(lam)
        return np.einsum("eij,ej->ei", self.Kinv, F + np.einsum("eij,ej->ei", self.L, lam_e))


def condense(disc: Discretization, K: np.ndarray) -> CondensedSystem:
    return CondensedSystem(disc, K)


def recover(system: CondensedSystem, lam: np.ndarray, F: np.ndarray, t: float = 0.0) -> HDGState:
    return system.disc.state_from(system.recover(lam, F), lam, t)


def monolithic_matrix(disc: Discretization, K: np.ndarray) -> sp.csr_matrix:
    """Full sparse matrix over (element dofs, trace dofs); boundary trace rows are identity."""
    lm = disc.local
    n_el, nloc = disc.n_el, disc.nloc
    ne = n_el * nloc
    nt = disc.n_faces * disc.nl
    eidx = np.arange(ne).reshape(n_el, nloc)
    tidx = disc.trace_dofs + ne
    blocks_r, blocks_c, blocks_v = [], [], []

    def add(rows, cols, vals):
        m, n = rows.shape[1], cols.shape[1]
        blocks_r.append(np.repeat(rows, n, axis=1).ravel())
        blocks_c.append(np.tile(cols, (1, m)).ravel())
        blocks_v.append(vals.ravel())

    add(eidx, eidx, K)
    add(eidx, tidx, -lm.coupling)
    interior = np.zeros(nt, dtype=bool)
    interior[disc.interior_dofs] = True
    keep = interior[disc.trace_dofs]  # (n_el, 3nl)
    R = lm.transmission * keep[:, :, None]
    G = lm.trace_trace * keep[:, :, None]
    add(tidx, eidx, R)
    add(tidx, tidx, G)
    rows = np.concatenate(blocks_r + [disc.boundary_dofs + ne])
    cols = np.concatenate(blocks_c + [disc.boundary_dofs + ne])
    vals = np.concatenate(blocks_v + [np.ones(len(disc.boundary_dofs))])
    return sp.csr_matrix((vals, (rows, cols)), shape=(ne + nt, ne + nt))


def monolithic_solve(disc, K, F, b=None, fixed=None):
    """Solve the uncondensed saddle system directly; the reference for condensation."""
    ne = disc.n_el * disc.nloc
    nt = disc.n_faces * disc.nl
    rhs = np.zeros(ne + nt)
    rhs[:ne] = F.ravel()
    if b is not None:
        rhs[ne + disc.interior_dofs] = b.ravel()[disc.interior_dofs]
    if fixed is not None:
        rhs[ne + disc.boundary_dofs] = fixed.ravel()[disc.boundary_dofs]
    X = spla.spsolve(monolithic_matrix(disc, K).tocsc(), rhs)
    return X[:ne].reshape(disc.n_el, disc.nloc), X[ne:].reshape(disc.n_faces, disc.nl)


def flux_residual(disc: Discretization, state: HDGState) -> np.ndarray:
    """``sum_K <q_hat.n, mu>`` per face mode; boundary faces are zeroed."""
    lm = disc.local
    x = disc.element_vector(state)
    lam = disc.gather_traces(state.trace)
    loc = np.einsum("eij,ej->ei", lm.transmission, x) + np.einsum("eij,ej->ei", lm.trace_trace, lam)
    r = np.zeros(disc.n_faces * disc.nl)
    np.add.at(r, disc.trace_dofs.ravel(), loc.ravel())
    r[disc.boundary_dofs] = 0.0
    return r.reshape(disc.n_faces, disc.nl)


def l2_project_element(disc: Discretization, func: Callable, degree: int | None = None) -> np.ndarray:
    """Elementwise L2 projection onto ``P_degree`` (default: the ``u`` space)."""
    if degree is None or degree == disc.cfg.u_degree:
        phi, M = disc.phi_u, disc.local.mass_u
    else:
        phi = triangle_basis(degree).values(disc.vquad.points)
        M = np.einsum("eq,qi,qj->eij", disc.wdet, phi, phi)
    rhs = (disc.wdet * disc.eval_at(func)) @ phi
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def l2_project_face(disc: Discretization, func: Callable) -> np.ndarray:
    """Face L2 projection onto the trace space, shape ``(n_faces, nl)``."""
    x, y = disc.face_points[..., 0], disc.face_points[..., 1]
    vals = func(x, y) * np.ones_like(x)
    rhs = np.einsum("fp,fp,pa->fa", disc.face_weights, vals, disc.mu)
    gram = np.einsum("fp,pa,pb->fab", disc.face_weights, disc.mu, disc.mu)
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


def hdg_project(disc: Discretization, u: Callable, q: Callable):
    """HDG projection pair ``(Pi_W u, Pi_V q)`` per element.

    Matches moments of ``q`` and ``u`` against ``P_{k-1}`` and the combination
    ``q.n - tau u`` against ``P_k`` on each edge.  For the variant space both
    components are plain L2 projections.  ``q`` returns a pair of arrays.
    Returns ``(u_coeffs (n_el, nu), q_coeffs (n_el, 2, nq))``.
    """
    if disc.cfg.variant:
        qc = np.stack(
            [l2_project_element(disc, lambda x, y, c=c: q(x, y)[c], disc.cfg.q_degree) for c in range(2)],
            axis=1,
        )
        return l2_project_element(disc, u), qc
    k = disc.cfg.k
    nq, nu, nl = disc.nq, disc.nu, disc.nl
    if nu != nq:
        raise ValueError("HDG projection requires equal u and q degrees")
    nlow = (k * (k + 1)) // 2  # dim P_{k-1}
    n_el = disc.n_el
    wdet = disc.wdet
    qv = q(disc.xq[..., 0], disc.xq[..., 1])
    uv = disc.eval_at(u) * np.ones_like(wdet)
    qx = qv[0] * np.ones_like(wdet)
    qy = qv[1] * np.ones_like(wdet)

    size = 2 * nq + nu
    Mat = np.zeros((n_el, size, size))
    rhs = np.zeros((n_el, size))
    lm = disc.local
    row = 0
    # (Pi_V q, v) = (q, v) for v in [P_{k-1}]^2
    for c, vals in enumerate((qx, qy)):
        Mat[:, row:row + nlow, c * nq:(c + 1) * nq] = lm.mass_q[:, c * nq:c * nq + nlow, c * nq:(c + 1) * nq]
        rhs[:, row:row + nlow] = ((wdet * vals) @ disc.phi_q)[:, :nlow]
        row += nlow
    Mat[:, row:row + nlow, 2 * nq:] = lm.mass_u[:, :nlow, :]
    rhs[:, row:row + nlow] = ((wdet * uv) @ disc.phi_u)[:, :nlow]
    row += nlow
    # <Pi_V q.n - tau Pi_W u, mu> = <q.n - tau u, mu> on each edge
    fx = disc.face_points[disc.t2f]  # (n_el, 3, nfq, 2)
    fq = q(fx[..., 0], fx[..., 1])
    fu = u(fx[..., 0], fx[..., 1]) * np.ones(fx.shape[:-1])
    n = disc.normals
    tau = disc.tau_e
    for i in range(3):
        w = disc.fw[:, i]  # (n_el, nfq)
        mu = disc.mu
        for c in range(2):
            Mat[:, row:row + nl, c * nq:(c + 1) * nq] = np.einsum(
                "ep,e,pa,epj->eaj", w, n[:, i, c], mu, disc.fphi_q[:, i]
            )
        Mat[:, row:row + nl, 2 * nq:] = -tau[:, i, None, None] * np.einsum("ep,pa,epj->eaj", w, mu, disc.fphi_u[:, i])
        flux = (fq[0][:, i] * n[:, i, 0, None] + fq[1][:, i] * n[:, i, 1, None]) * np.ones_like(w)
        vals = flux - tau[:, i, None] * fu[:, i]
        rhs[:, row:row + nl] = np.einsum("ep,ep,pa->ea", w, vals, mu)
        row += nl
    assert row == size
    try:
        sol = np.linalg.solve(Mat, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("singular HDG projection system") from exc
    return sol[:, 2 * nq:], sol[:, :2 * nq].reshape(n_el, 2, nq)


def solve_elliptic_init(disc: Discretization, lap_u0: Callable, dirichlet: Callable | None = None, t: float = 0.0) -> HDGState:
    """HDG solution of ``-div q = -lap u0``, ``q = grad u`` with trace data ``dirichlet``."""
    K = disc.local.element_operator(0.0)
    F = np.zeros((disc.n_el, disc.nloc))
    F[:, 2 * disc.nq:] = -disc.load(disc.eval_at(lap_u0) * np.ones_like(disc.wdet))
    fixed = disc.boundary_values(dirichlet)
    x, lam = CondensedSystem(disc, K).solve(F, fixed=fixed)
    return disc.state_from(x, lam, t)


def lift_flux(disc: Discretization, u: np.ndarray, fixed: np.ndarray | None = None, t: float = 0.0) -> HDGState:
    """Given element values ``u``, find ``(q, lam)`` satisfying the flux and transmission equations."""
    lm = disc.local
    n_el, nq2 = disc.n_el, 2 * disc.nq
    Ainv = np.linalg.inv(lm.mass_q)
    C = lm.trace_q
    Bu = np.einsum("eij,ej->ei", lm.div, u)
    H_loc = C.transpose(0, 2, 1) @ Ainv @ C + lm.trace_trace
    r_loc = np.einsum("eji,ej->ei", lm.trace_u, u) + np.einsum("eji,ejk,ek->ei", C, Ainv, Bu)
    dofs = disc.trace_dofs
    m = dofs.shape[1]
    n = disc.n_faces * disc.nl
    H = sp.csr_matrix(
        (H_loc.ravel(), (np.repeat(dofs, m, axis=1).ravel(), np.tile(dofs, (1, m)).ravel())), shape=(n, n)
    )
    r = np.zeros(n)
    np.add.at(r, dofs.ravel(), r_loc.ravel())
    lam = np.zeros(n)
    if fixed is not None:
        lam[disc.boundary_dofs] = fixed.ravel()[disc.boundary_dofs]
    I, B = disc.interior_dofs, disc.boundary_dofs
    if len(I):
        lam[I] = spla.spsolve(H[I][:, I].tocsc(), r[I] - H[I][:, B] @ lam[B])
    lam = lam.reshape(disc.n_faces, disc.nl)
    lam_e = disc.gather_traces(lam)
    q = np.einsum("eij,ej->ei", Ainv, -Bu + np.einsum("eij,ej->ei", C, lam_e))
    return HDGState(t, u.copy(), q.reshape(n_el, 2, disc.nq), lam)
