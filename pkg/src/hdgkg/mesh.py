"""Structured triangulations of axis-aligned rectangles and their face skeleton."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Mesh", "ElementGeometry", "build_structured", "element_geometry", "dump_mesh"]


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with an explicit face (edge) list.

    Local edge ``i`` of triangle ``K`` runs from vertex ``i`` to vertex
    ``(i + 1) % 3``.  Faces store their vertex pair sorted ascending; that
    order also fixes the face parameterisation used by trace unknowns.
    """

    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counterclockwise
    faces: np.ndarray  # (nf, 2), sorted vertex pairs
    face_triangles: np.ndarray  # (nf, 2), second entry -1 on the boundary
    face_normals: np.ndarray  # (nf, 2)
    face_lengths: np.ndarray  # (nf,)
    boundary: np.ndarray  # (nf,) bool
    triangle_to_faces: np.ndarray  # (nt, 3)
    triangle_face_signs: np.ndarray  # (nt, 3), +1 if face normal is outward for K
    refinement: int = 0
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    h_elements: np.ndarray = field(default=None, repr=False)  # (nt,)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def h_max(self) -> float:
        return float(self.h_elements.max())

    @property
    def mesh_parameter(self) -> float:
        """Grid spacing ``1/2^m`` of the unit square generator (rescaled by width)."""
        x0, x1, _, _ = self.domain
        return (x1 - x0) / 2**self.refinement

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_structured(m: int, domain=(0.0, 1.0, 0.0, 1.0)) -> Mesh:
    """Uniform mesh of ``2**m`` x ``2**m`` cells, each cut along its SW-NE diagonal."""
    if m < 0:
        raise ValueError(f"refinement level must be non-negative, got {m}")
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate domain {domain}")
    n = 2**m
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)  # row j = y index
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return _from_triangles(vertices, triangles, m, (x0, x1, y0, y1))


def _from_triangles(vertices, triangles, m, domain) -> Mesh:
    nt = len(triangles)
    local_edges = np.stack(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=1
    )  # (nt, 3, 2)
    keys = np.sort(local_edges.reshape(-1, 2), axis=1)
    faces, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(first, kind="stable")
    # renumber faces by first appearance so numbering follows the triangle order
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    faces = faces[order]
    tri_faces = rank[inverse].reshape(nt, 3)

    nf = len(faces)
    face_triangles = -np.ones((nf, 2), dtype=np.int64)
    owners = np.repeat(np.arange(nt), 3)
    flat = tri_faces.ravel()
    for idx in range(len(flat)):  # triangles visited in increasing index order
        f = flat[idx]
        slot = 0 if face_triangles[f, 0] < 0 else 1
        face_triangles[f, slot] = owners[idx]
    boundary = face_triangles[:, 1] < 0

    p = vertices[faces]
    tangent = p[:, 1] - p[:, 0]
    lengths = np.hypot(tangent[:, 0], tangent[:, 1])

    # outward normals per local edge
    pe = vertices[local_edges]  # (nt, 3, 2, 2)
    d = pe[:, :, 1] - pe[:, :, 0]
    le = np.hypot(d[..., 0], d[..., 1])
    outward = np.stack([d[..., 1], -d[..., 0]], axis=-1) / le[..., None]

    # global normal = outward normal of the lower-indexed adjacent triangle
    first_owner = face_triangles[:, 0]
    local_slot = np.argmax(tri_faces[first_owner] == np.arange(nf)[:, None], axis=1)
    face_normals = outward[first_owner, local_slot]
    signs = np.where(
        np.arange(nt)[:, None] == face_triangles[tri_faces, 0], 1, -1
    ).astype(np.int64)

    h_elements = le.max(axis=1)
    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        faces=faces,
        face_triangles=face_triangles,
        face_normals=face_normals,
        face_lengths=lengths,
        boundary=boundary,
        triangle_to_faces=tri_faces,
        triangle_face_signs=signs,
        refinement=m,
        domain=domain,
        h_elements=h_elements,
    )
    if np.any(mesh.areas() <= 0):
        raise ValueError("mesh contains degenerate or clockwise triangles")
    return mesh


@dataclass(frozen=True)
class ElementGeometry:
    origin: np.ndarray  # (2,)
    jacobian: np.ndarray  # (2, 2), columns are edge vectors v1-v0, v2-v0
    det: float
    inverse: np.ndarray  # (2, 2)
    h: float
    normals: np.ndarray  # (3, 2), outward, local edge order

    def map(self, ref_points) -> np.ndarray:
        ref_points = np.asarray(ref_points, dtype=float)
        return self.origin + ref_points @ self.jacobian.T

    def pullback(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - self.origin) @ self.inverse.T


def element_geometry(mesh: Mesh, K: int) -> ElementGeometry:
    """Affine map from the reference triangle (0,0),(1,0),(0,1) onto triangle ``K``."""
    if not 0 <= K < mesh.n_triangles:
        raise IndexError(f"triangle id {K} out of range")
    return _geometry(mesh.vertices[mesh.triangles[K]])


def _geometry(p: np.ndarray) -> ElementGeometry:
    J = np.column_stack([p[1] - p[0], p[2] - p[0]])
    det = float(np.linalg.det(J))
    scale = max(np.abs(J).max(), 1e-300)
    if abs(det) <= 1e-14 * scale**2:
        raise ValueError("degenerate triangle (zero area)")
    edges = np.stack([p[1] - p[0], p[2] - p[1], p[0] - p[2]])
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    sgn = 1.0 if det > 0 else -1.0
    normals = sgn * np.column_stack([edges[:, 1], -edges[:, 0]]) / lengths[:, None]
    return ElementGeometry(
        origin=p[0].copy(),
        jacobian=J,
        det=det,
        inverse=np.linalg.inv(J),
        h=float(lengths.max()),
        normals=normals,
    )


def batched_geometry(mesh: Mesh):
    """Jacobians, determinants, inverse Jacobians and outward normals for all triangles."""
    p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # (nt, 2, 2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1]
    inv[:, 1, 1] = J[:, 0, 0]
    inv[:, 0, 1] = -J[:, 0, 1]
    inv[:, 1, 0] = -J[:, 1, 0]
    inv /= det[:, None, None]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    le = np.hypot(e[..., 0], e[..., 1])
    normals = np.stack([e[..., 1], -e[..., 0]], axis=-1) / le[..., None]
    return p[:, 0], J, det, inv, normals


def dump_mesh(mesh: Mesh, path) -> None:
    """Write vertices, triangles and faces as index-based plain text."""
    with open(path, "w") as fh:
        fh.write(f"# vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g}\n")
        fh.write(f"# triangles {mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"t {a} {b} {c}\n")
        fh.write(f"# faces {mesh.n_faces}\n")
        for (a, b), (k0, k1), bnd in zip(mesh.faces, mesh.face_triangles, mesh.boundary):
            fh.write(f"f {a} {b} {k0} {k1} {int(bnd)}\n")
