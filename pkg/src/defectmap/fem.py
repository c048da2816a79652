"""Galerkin discretisation of the Laplace-Beltrami operator on triangle meshes.

Linear (P1) and cubic (P3) Lagrange elements are supported. Element
integrals are taken over the flat embedded triangle: reference-element
integrals of shape-function products are combined with the first
fundamental form ``G = J^T J`` of each face.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DegenerateElement
from .mesh import AREA_TOL_FACTOR, TriangleMesh, _unique_edges


class FemDegree(str, enum.Enum):
    P1 = "P1"
    P3 = "P3"

    @classmethod
    def parse(cls, value) -> "FemDegree":
        if isinstance(value, cls):
            return value
        return cls(str(value).upper())


@dataclass(frozen=True)
class OperatorPair:
    """Stiffness/mass pair. The first ``n_vertices`` dofs are the mesh vertices."""

    stiffness: sparse.csr_matrix
    mass: sparse.csr_matrix
    dof_to_vertex: np.ndarray  # vertex index per dof, -1 for edge/face dofs
    degree: FemDegree

    @property
    def n_dofs(self) -> int:
        return self.stiffness.shape[0]

    @property
    def vertex_dofs(self) -> np.ndarray:
        return np.nonzero(self.dof_to_vertex >= 0)[0]


# ---------------------------------------------------------------------------
# reference element


def _triangle_quadrature(order=6):
    """Collapsed Gauss-Legendre rule on the unit triangle, exact to degree 2*order-2."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    xi = u.ravel()
    eta = (v * (1.0 - u)).ravel()
    weights = (wu * wv * (1.0 - u)).ravel()
    return xi, eta, weights


# local node positions in barycentric coordinates (L0, L1, L2)
_P3_NODES = np.array([
    [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [2, 1, 0], [1, 2, 0],   # edge 0-1: near 0, near 1
    [0, 2, 1], [0, 1, 2],   # edge 1-2: near 1, near 2
    [1, 0, 2], [2, 0, 1],   # edge 2-0: near 2, near 0
    [1, 1, 1],
], dtype=float) / np.array([1, 1, 1, 3, 3, 3, 3, 3, 3, 3])[:, None]


def _p3_values_and_bary_grads(L):
    """Cubic shape functions and their derivatives w.r.t. the barycentric coords.

    ``L`` is (q, 3). Returns values (q, 10) and dN/dL (q, 10, 3).
    """
    q = L.shape[0]
    N = np.zeros((q, 10))
    dN = np.zeros((q, 10, 3))
    for i in range(3):
        Li = L[:, i]
        N[:, i] = 0.5 * Li * (3 * Li - 1) * (3 * Li - 2)
        dN[:, i, i] = 0.5 * (27 * Li ** 2 - 18 * Li + 2)
    # (node, near-vertex, other-vertex)
    for node, a, b in ((3, 0, 1), (4, 1, 0), (5, 1, 2), (6, 2, 1), (7, 2, 0), (8, 0, 2)):
        La, Lb = L[:, a], L[:, b]
        N[:, node] = 4.5 * La * Lb * (3 * La - 1)
        dN[:, node, a] = 4.5 * Lb * (6 * La - 1)
        dN[:, node, b] = 4.5 * La * (3 * La - 1)
    N[:, 9] = 27 * L[:, 0] * L[:, 1] * L[:, 2]
    dN[:, 9, 0] = 27 * L[:, 1] * L[:, 2]
    dN[:, 9, 1] = 27 * L[:, 0] * L[:, 2]
    dN[:, 9, 2] = 27 * L[:, 0] * L[:, 1]
    return N, dN


def _p1_values_and_bary_grads(L):
    q = L.shape[0]
    dN = np.broadcast_to(np.eye(3), (q, 3, 3)).copy()
    return L.copy(), dN


def reference_matrices(degree: FemDegree):
    """Reference-triangle integrals ``(S_xx, S_xy, S_yy, M)``.

    ``S_ab[i, j] = int dN_i/da * dN_j/db`` over the unit triangle with
    coordinates (xi, eta) = (L1, L2), and ``M[i, j] = int N_i N_j``.
    """
    degree = FemDegree.parse(degree)
    xi, eta, w = _triangle_quadrature(6)
    L = np.column_stack([1.0 - xi - eta, xi, eta])
    if degree is FemDegree.P3:
        N, dL = _p3_values_and_bary_grads(L)
    else:
        N, dL = _p1_values_and_bary_grads(L)
    # d/dxi = d/dL1 - d/dL0, d/deta = d/dL2 - d/dL0
    dx = dL[:, :, 1] - dL[:, :, 0]
    dy = dL[:, :, 2] - dL[:, :, 0]
    Sxx = np.einsum("q,qi,qj->ij", w, dx, dx)
    Sxy = np.einsum("q,qi,qj->ij", w, dx, dy)
    Syy = np.einsum("q,qi,qj->ij", w, dy, dy)
    M = np.einsum("q,qi,qj->ij", w, N, N)
    return Sxx, Sxy, Syy, M


_REF_CACHE: dict = {}


def _reference(degree):
    if degree not in _REF_CACHE:
        _REF_CACHE[degree] = reference_matrices(degree)
    return _REF_CACHE[degree]


# ---------------------------------------------------------------------------
# dof numbering


def dof_map(mesh: TriangleMesh, degree: FemDegree):
    """Return (element-to-dof table, dof count, dof_to_vertex)."""
    degree = FemDegree.parse(degree)
    n = mesh.n_vertices
    f = mesh.faces
    if degree is FemDegree.P1:
        return f.copy(), n, np.arange(n)
    edges, inv, _, _ = _unique_edges(f)
    ne, m = len(edges), len(f)
    inv = inv.reshape(3, m).T  # half-edge k of face t is (f[t,k], f[t,(k+1)%3])
    table = np.empty((m, 10), dtype=np.int64)
    table[:, :3] = f
    for k in range(3):
        a = f[:, k]
        e = inv[:, k]
        near_low = n + 2 * e        # node at 1/3 from the lower-index endpoint
        near_high = n + 2 * e + 1
        a_is_low = a == edges[e, 0]
        near_a = np.where(a_is_low, near_low, near_high)
        near_b = np.where(a_is_low, near_high, near_low)
        table[:, 3 + 2 * k] = near_a
        table[:, 4 + 2 * k] = near_b
    table[:, 9] = n + 2 * ne + np.arange(m)
    d = n + 2 * ne + m
    dof_to_vertex = -np.ones(d, dtype=np.int64)
    dof_to_vertex[:n] = np.arange(n)
    return table, d, dof_to_vertex


def dof_positions(mesh: TriangleMesh, degree: FemDegree) -> np.ndarray:
    """3D coordinates of every dof (vertices first)."""
    degree = FemDegree.parse(degree)
    table, d, _ = dof_map(mesh, degree)
    nodes = np.eye(3) if degree is FemDegree.P1 else _P3_NODES
    pos = np.zeros((d, 3))
    corners = mesh.vertices[mesh.faces]  # (m, 3, 3)
    local = np.einsum("ab,mbc->mac", nodes, corners)
    pos[table.reshape(-1)] = local.reshape(-1, 3)
    return pos


# ---------------------------------------------------------------------------
# assembly


def element_matrices(mesh: TriangleMesh, degree: FemDegree):
    """Per-face stiffness and mass blocks, each of shape (m, k, k)."""
    degree = FemDegree.parse(degree)
    v, f = mesh.vertices, mesh.faces
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12 ** 2
    tol = (AREA_TOL_FACTOR * mesh.bbox_diagonal ** 2) * 2.0
    sq = np.sqrt(np.clip(det, 0.0, None))
    bad = np.nonzero(sq <= tol)[0]
    if len(bad):
        raise DegenerateElement(f"degenerate triangles reached assembly: {bad[:10].tolist()}")
    Sxx, Sxy, Syy, M = _reference(degree)
    # inverse metric scaled by sqrt(det G)
    a = g22 / sq
    b = -g12 / sq
    c = g11 / sq
    Ke = (a[:, None, None] * Sxx + b[:, None, None] * (Sxy + Sxy.T)
          + c[:, None, None] * Syy)
    Me = sq[:, None, None] * M
    return Ke, Me


def assemble(mesh: TriangleMesh, degree=FemDegree.P3) -> OperatorPair:
    """Assemble the stiffness and consistent mass matrices."""
    degree = FemDegree.parse(degree)
    table, d, dof_to_vertex = dof_map(mesh, degree)
    Ke, Me = element_matrices(mesh, degree)
    k = table.shape[1]
    rows = np.repeat(table, k, axis=1).reshape(-1)
    cols = np.tile(table, (1, k)).reshape(-1)
    K = sparse.coo_matrix((Ke.reshape(-1), (rows, cols)), shape=(d, d)).tocsr()
    M = sparse.coo_matrix((Me.reshape(-1), (rows, cols)), shape=(d, d)).tocsr()
    # enforce exact symmetry against round-off in the reduction
    K = ((K + K.T) * 0.5).tocsr()
    M = ((M + M.T) * 0.5).tocsr()
    K.sort_indices()
    M.sort_indices()
    return OperatorPair(K, M, dof_to_vertex, degree)
