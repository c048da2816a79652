"""Smallest generalized eigenpairs of the LB operator and the orthonormal spectral basis."""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg
from scipy.sparse import linalg as spla

from .errors import ConvergenceFailure, NoNonzeroEigenvalue, RankDeficient, SymmetryWarning
from .fem import FemDegree, OperatorPair, assemble
from .mesh import TriangleMesh

SHIFT = -1e-8
RESIDUAL_TOL = 1e-9
DENSE_LIMIT = 400
CLUSTER_GAP = 1e-6
CACHE_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """First ``p`` eigenvalues with vertex-restricted, Euclidean-orthonormal eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (n, p)
    degree: FemDegree
    mesh_size: int
    symmetry_clusters: List[List[int]] = field(default_factory=list)

    @property
    def p(self) -> int:
        return self.eigenvalues.shape[0]


def zero_tolerance(eigenvalues) -> float:
    """Threshold below which an eigenvalue counts as zero: 1e-6 times the lambda_1 estimate."""
    lam = np.abs(np.asarray(eigenvalues, dtype=float))
    if lam.size == 0:
        return 0.0
    scale = lam.max()
    if scale == 0.0:
        return 0.0
    nonzero = lam[lam > 1e-8 * scale]
    return 1e-6 * float(nonzero.min())


def first_nonzero_index(eigenvalues) -> int:
    lam = np.asarray(eigenvalues, dtype=float)
    tol = zero_tolerance(lam)
    idx = np.nonzero(lam > tol)[0]
    if len(idx) == 0 or tol == 0.0:
        raise NoNonzeroEigenvalue("no eigenvalue exceeds the zero tolerance")
    return int(idx[0])


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive (ties: lowest row)."""
    vectors = np.array(vectors, dtype=float, copy=True)
    if vectors.size == 0:
        return vectors
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def symmetry_clusters(eigenvalues, gap=CLUSTER_GAP) -> List[List[int]]:
    """Index groups of (near-)repeated eigenvalues."""
    lam = np.asarray(eigenvalues, dtype=float)
    clusters, cur = [], [0]
    for i in range(1, len(lam)):
        if abs(lam[i] - lam[i - 1]) < gap * abs(lam[i]):
            cur.append(i)
        else:
            if len(cur) > 1:
                clusters.append(cur)
            cur = [i]
    if len(cur) > 1:
        clusters.append(cur)
    return clusters


def _residuals(K, M, lam, vecs):
    R = K @ vecs - (M @ vecs) * lam
    knorm = abs(K).sum(axis=1).max()
    return np.linalg.norm(R, axis=0) / (knorm * np.linalg.norm(vecs, axis=0))


def _shift_invert_operator(K, M, sigma):
    lu = spla.splu((K - sigma * M).tocsc(), permc_spec="MMD_AT_PLUS_A",
                   options=dict(SymmetricMode=True))
    return spla.LinearOperator(K.shape, matvec=lu.solve, dtype=np.float64)


def solve_smallest_eigs(ops: OperatorPair, p: int):
    """``p`` algebraically smallest eigenpairs of ``K v = lambda M v``.

    Shift-invert Lanczos (ARPACK) around a tiny negative shift; dense
    LAPACK for very small problems. Eigenvectors are M-orthonormal with the sign
    convention of :func:`fix_signs`. Returns ``(eigenvalues, vectors)``.
    """
    K, M = ops.stiffness, ops.mass
    d = K.shape[0]
    if not 1 <= p < d:
        raise ValueError(f"need 1 <= p < d, got p={p}, d={d}")
    if d <= DENSE_LIMIT:
        lam, vecs = scipy.linalg.eigh(K.toarray(), M.toarray(), subset_by_index=(0, p - 1))
    else:
        v0 = np.random.Generator(np.random.Philox(12345)).standard_normal(d)
        opinv = _shift_invert_operator(K, M, SHIFT)
        try:
            lam, vecs = spla.eigsh(K, k=p, M=M, sigma=SHIFT, which="LM", OPinv=opinv,
                                   v0=v0, maxiter=50 * p, tol=1e-12)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceFailure(f"eigensolver did not converge: {exc}") from exc
        order = np.argsort(lam, kind="stable")
        lam, vecs = lam[order], vecs[:, order]
    res = _residuals(K, M, lam, vecs)
    if np.any(res > RESIDUAL_TOL):
        raise ConvergenceFailure(
            f"eigenpair residual {res.max():.3g} exceeds {RESIDUAL_TOL}", residual=float(res.max()))
    mn = np.sqrt(np.einsum("ij,ij->j", vecs, M @ vecs))
    vecs = vecs / mn
    return lam, fix_signs(vecs)


def orthonormalize(raw: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt in column order, with one reorthogonalisation pass."""
    Q = np.array(raw, dtype=float, copy=True)
    if Q.ndim != 2:
        raise ValueError("expected a 2-D array")
    p = Q.shape[1]
    norms0 = np.linalg.norm(Q, axis=0)
    for _ in range(2):
        for j in range(p):
            nj = np.linalg.norm(Q[:, j])
            if nj < 1e-12 * max(norms0[j], 1e-300) or nj == 0.0:
                raise RankDeficient(f"column {j} collapsed during orthogonalisation")
            Q[:, j] /= nj
            if j + 1 < p:
                Q[:, j + 1:] -= np.outer(Q[:, j], Q[:, j] @ Q[:, j + 1:])
    return Q


def spectral_basis(mesh: TriangleMesh, degree=FemDegree.P3, p: int = 200,
                   cache_dir: Optional[str] = None) -> SpectralBasis:
    """Assemble, solve, restrict to vertex dofs and orthonormalise."""
    degree = FemDegree.parse(degree)
    if not 1 <= p < mesh.n_vertices:
        raise ValueError(f"need 1 <= p < n, got p={p}, n={mesh.n_vertices}")
    if cache_dir is not None:
        path = cache_path(cache_dir, mesh, degree, p)
        if os.path.exists(path):
            return load_basis(path)
    ops = assemble(mesh, degree)
    lam, vecs = solve_smallest_eigs(ops, p)
    restricted = vecs[ops.vertex_dofs]
    basis_vecs = orthonormalize(restricted)
    clusters = symmetry_clusters(lam)
    if clusters:
        warnings.warn(f"repeated eigenvalues at index groups {clusters}", SymmetryWarning,
                      stacklevel=2)
    basis = SpectralBasis(lam, basis_vecs, degree, mesh.n_vertices, clusters)
    if cache_dir is not None:
        save_basis(basis, path)
    return basis


def eigenvalues_only(mesh: TriangleMesh, degree, count: int) -> np.ndarray:
    ops = assemble(mesh, degree)
    return solve_smallest_eigs(ops, count)[0]


# ---------------------------------------------------------------------------
# cache


def cache_path(cache_dir, mesh: TriangleMesh, degree, p) -> str:
    degree = FemDegree.parse(degree)
    return os.path.join(cache_dir, f"{mesh.content_hash()[:24]}_{degree.value}_{p}.npz")


def save_basis(basis: SpectralBasis, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    flat = [i for c in basis.symmetry_clusters for i in c + [-1]]
    with open(path, "wb") as fh:
        np.savez(fh, format_version=np.array([CACHE_FORMAT_VERSION]),
                 eigenvalues=basis.eigenvalues, eigenvectors=basis.eigenvectors,
                 degree=np.array([basis.degree.value]), mesh_size=np.array([basis.mesh_size]),
                 clusters=np.array(flat, dtype=np.int64))


def load_basis(path) -> SpectralBasis:
    with np.load(path) as data:
        version = int(data["format_version"][0])
        if version != CACHE_FORMAT_VERSION:
            raise ValueError(f"unsupported basis cache version {version}")
        clusters, cur = [], []
        for i in data["clusters"].tolist():
            if i < 0:
                clusters.append(cur)
                cur = []
            else:
                cur.append(i)
        return SpectralBasis(data["eigenvalues"].copy(), data["eigenvectors"].copy(),
                             FemDegree(str(data["degree"][0])), int(data["mesh_size"][0]), clusters)
