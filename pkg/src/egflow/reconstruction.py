"""Divergence-conforming velocity reconstruction into lowest-order BDM.

The reconstruction R maps an enriched velocity v to the unique elementwise
linear vector field whose edge normal moments against {1, s} match those of
the average {v}.n_e on interior edges and vanish on boundary edges.  Because
a linear normal trace is determined by those two moments, the reconstructed
field has a continuous normal component across every interior edge and zero
normal flux through the boundary, i.e. it is H(div)-conforming with zero
normal boundary trace.

Representation: on each triangle the reconstruction is stored by its three
"virtual vertex values" in the local P1 basis, flattened as
(t, vertex a, component i) -> 6 t + 2 a + i.  The operator itself is built
once per mesh as a sparse matrix acting on the flat velocity vector; it is
a composition of three local pieces:

    edge moments of {v}.n_e            (2 ne x n_velocity, zero boundary rows)
    gather each triangle's six moments (6 nt x 2 ne selection)
    per-triangle 6x6 moment-matrix inverse applied blockwise.

Everything here treats an edge with its global parameterization: endpoints
in ascending vertex order, s in [0, 1], shared by both incident triangles,
and the stored edge normal (out of the plus triangle).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import MeshTopology
from .spaces import EGFunction, barycentric_coords, layout_for

# moments of the endpoint traces against s^j on [0, 1]:
# int (1-s) ds, int (1-s) s ds, int s ds, int s^2 ds
_M_A = (0.5, 1.0 / 6.0)
_M_B = (0.5, 1.0 / 3.0)


@dataclass
class BDMFunction:
    """Elementwise linear vector field with H(div) continuity by construction."""

    mesh: MeshTopology
    coeffs: np.ndarray  # (nt, 3, 2) virtual vertex values

    @classmethod
    def from_vector(cls, mesh: MeshTopology, vec: np.ndarray) -> "BDMFunction":
        return cls(mesh, vec.reshape(mesh.num_triangles, 3, 2).copy())

    def to_vector(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def value(self, t: int, x: np.ndarray) -> np.ndarray:
        lam = barycentric_coords(self.mesh, t, x)
        return np.einsum("...k,ki->...i", lam, self.coeffs[t])

    def jacobian(self, t: int) -> np.ndarray:
        return np.einsum("ki,kj->ij", self.coeffs[t], self.mesh.grad_lambda[t])

    def divergence(self, t: int) -> float:
        return float(np.trace(self.jacobian(t)))


def edge_moment_matrix(mesh: MeshTopology) -> sp.csr_matrix:
    """Moments int_e {v}.n_e s^j ds (j = 0, 1) as rows 2e + j; boundary rows zero."""
    layout = layout_for(mesh)
    nv2 = 2 * mesh.num_vertices
    rows, cols, vals = [], [], []
    for e in mesh.interior_edge_ids:
        a, b = mesh.edge_vertices[e]
        n = mesh.edge_normal[e]
        h = mesh.edge_length[e]
        for j in range(2):
            r = 2 * e + j
            for i in range(2):
                rows += [r, r]
                cols += [2 * a + i, 2 * b + i]
                vals += [h * _M_A[j] * n[i], h * _M_B[j] * n[i]]
            # bubble of either side contributes half its trace (x(s) - x_T).n
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            for t in (mesh.edge_tplus[e], mesh.edge_tminus[e]):
                xt = mesh.barycenters[t]
                c0 = np.dot(pa - xt, n)
                c1 = np.dot(pb - pa, n)
                # 0.5 * int (c0 + c1 s) s^j ds, scaled by h
                if j == 0:
                    m = c0 + 0.5 * c1
                else:
                    m = 0.5 * c0 + c1 / 3.0
                rows.append(r)
                cols.append(nv2 + int(t))
                vals.append(0.5 * h * m)
    shape = (2 * mesh.num_edges, layout.n_velocity)
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def local_moment_blocks(mesh: MeshTopology) -> np.ndarray:
    """Per-triangle 6x6 matrix of basis edge moments; rows (2k + j), cols (2a + i)."""
    nt = mesh.num_triangles
    L = np.zeros((nt, 6, 6))
    for k in range(3):
        e = mesh.tri_to_edges[:, k]
        n = mesh.edge_normal[e]  # (nt, 2)
        h = mesh.edge_length[e]
        side_plus = mesh.edge_tplus[e] == np.arange(nt)
        la = np.where(side_plus, mesh.edge_local_plus[e, 0], mesh.edge_local_minus[e, 0])
        lb = np.where(side_plus, mesh.edge_local_plus[e, 1], mesh.edge_local_minus[e, 1])
        for j in range(2):
            row = 2 * k + j
            for i in range(2):
                L[np.arange(nt), row, 2 * la + i] += h * _M_A[j] * n[:, i]
                L[np.arange(nt), row, 2 * lb + i] += h * _M_B[j] * n[:, i]
    return L


def reconstruction_matrix(mesh: MeshTopology) -> sp.csr_matrix:
    """Sparse operator from flat velocity vectors to BDM coefficient vectors."""
    nt = mesh.num_triangles
    gamma = edge_moment_matrix(mesh)

    # selection of each triangle's edge-moment rows, in local edge order
    tgt = np.arange(6 * nt)
    src = (2 * mesh.tri_to_edges[:, :, None] + np.array([0, 1])[None, None, :]).reshape(-1)
    select = sp.coo_matrix((np.ones(6 * nt), (tgt, src)), shape=(6 * nt, 2 * mesh.num_edges)).tocsr()

    inv = np.linalg.inv(local_moment_blocks(mesh))  # (nt, 6, 6)
    rows = np.repeat(np.arange(6 * nt), 6)
    cols = (6 * np.repeat(np.arange(nt), 36) + np.tile(np.arange(6), 6 * nt)).reshape(-1)
    blockinv = sp.coo_matrix((inv.reshape(-1), (rows, cols)), shape=(6 * nt, 6 * nt)).tocsr()

    R = (blockinv @ select @ gamma).tocsr()
    R.sum_duplicates()
    R.eliminate_zeros()
    return R


def local_p1_embedding(mesh: MeshTopology) -> sp.csr_matrix:
    """Exact embedding of enriched velocities into the elementwise P1 basis.

    Every enriched velocity is affine per triangle, so it equals the local P1
    field through its values at the triangle's vertices:
    nodal[v_a] + bubble_t * (p_a - x_T).
    """
    nv2 = 2 * mesh.num_vertices
    nt = mesh.num_triangles
    rows, cols, vals = [], [], []
    for t in range(nt):
        for a in range(3):
            v = mesh.triangles[t, a]
            offset = mesh.vertices[v] - mesh.barycenters[t]
            for i in range(2):
                r = 6 * t + 2 * a + i
                rows += [r, r]
                cols += [2 * v + i, nv2 + t]
                vals += [1.0, offset[i]]
    shape = (6 * nt, layout_for(mesh).n_velocity)
    E = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    E.eliminate_zeros()
    return E


def reconstruct(v: EGFunction, R: sp.csr_matrix | None = None) -> BDMFunction:
    if R is None:
        R = reconstruction_matrix(v.mesh)
    return BDMFunction.from_vector(v.mesh, R @ v.to_vector())


def bdm_mass_matrix(mesh: MeshTopology) -> sp.csr_matrix:
    """Block-diagonal L2 mass matrix in the elementwise P1 basis (exact)."""
    nt = mesh.num_triangles
    scalar = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    block = np.kron(scalar, np.eye(2))  # ordering (2a + i)
    blocks = mesh.areas[:, None, None] * block[None, :, :]
    rows = np.repeat(np.arange(6 * nt), 6)
    cols = (6 * np.repeat(np.arange(nt), 36) + np.tile(np.arange(6), 6 * nt)).reshape(-1)
    return sp.coo_matrix((blocks.reshape(-1), (rows, cols)), shape=(6 * nt, 6 * nt)).tocsr()


def bdm_divergence_matrix(mesh: MeshTopology) -> sp.csr_matrix:
    """Rows t: int_T div(phi_{a,i}) for the elementwise P1 basis (divergence is constant)."""
    nt = mesh.num_triangles
    vals = (mesh.areas[:, None, None] * mesh.grad_lambda).reshape(-1)  # (nt, 3, 2) -> flat
    rows = np.repeat(np.arange(nt), 6)
    cols = np.arange(6 * nt)
    return sp.coo_matrix((vals, (rows, cols)), shape=(nt, 6 * nt)).tocsr()
