"""Diagonal functional maps between two spectral bases and point-map recovery."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DegenerateRow, DimensionMismatch
from .hks import HksField
from .spectral import SpectralBasis

UNMAPPED = -1
DEGENERATE_ROW_TOL = 1e-14
# rows of the score matrix processed at once; bounds memory at CHUNK * n_B floats
CHUNK = 256


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """Spectral coefficients of the HKS columns, ``(p, K)``."""

    entries: np.ndarray
    scale: float


@dataclass(frozen=True, eq=False)
class FunctionalMapC:
    diag: np.ndarray
    q: float
    unconstrained: np.ndarray
    symmetry_warnings: List[List[int]] = field(default_factory=list)
    degenerate_rows: List[int] = field(default_factory=list)

    @property
    def p(self) -> int:
        return self.diag.shape[0]


@dataclass(frozen=True, eq=False)
class PointMap:
    target: np.ndarray
    deviation: np.ndarray
    m: int
    roi_applied: bool

    def to_json(self, header: dict) -> str:
        records = [{"sourceIndex": int(i), "targetIndex": int(t), "deviation": float(d)}
                   for i, (t, d) in enumerate(zip(self.target, self.deviation))]
        return json.dumps({"header": header, "roiApplied": self.roi_applied, "records": records},
                          sort_keys=True)


def coefficients(basis: SpectralBasis, hks: HksField) -> CoefficientMatrix:
    """Entry ``(i, k)`` is ``phi_i . f_k / sqrt(n)``."""
    if basis.eigenvectors.shape[0] != hks.values.shape[0] or basis.mesh_size != hks.mesh_size:
        raise DimensionMismatch(
            f"basis has {basis.eigenvectors.shape[0]} rows, HKS field has {hks.values.shape[0]}")
    scale = 1.0 / np.sqrt(basis.mesh_size)
    return CoefficientMatrix(scale * (basis.eigenvectors.T @ hks.values), scale)


def estimate_c(A: CoefficientMatrix, B: CoefficientMatrix, q: float = 0.8,
               symmetry_clusters=None) -> FunctionalMapC:
    """Row-wise least squares for ``B_j = c_j A_j``, shrunk towards ``sign(c_j)`` by ``q``."""
    a, b = np.asarray(A.entries), np.asarray(B.entries)
    if a.shape != b.shape:
        raise DimensionMismatch(f"coefficient shapes differ: {a.shape} vs {b.shape}")
    if not 0.0 <= q < 1.0:
        raise ValueError("q must lie in [0, 1)")
    aa = np.einsum("jk,jk->j", a, a)
    ab = np.einsum("jk,jk->j", a, b)
    bad = aa < DEGENERATE_ROW_TOL
    c0 = np.zeros_like(aa)
    c0[~bad] = ab[~bad] / aa[~bad]
    c = (1.0 - q) * c0 + q * np.sign(c0)
    c[bad] = 0.0
    degenerate = np.nonzero(bad)[0].tolist()
    if degenerate:
        warnings.warn(f"coefficient rows {degenerate} have near-zero norm; c set to 0",
                      DegenerateRow, stacklevel=2)
    return FunctionalMapC(c, float(q), c0, [list(s) for s in (symmetry_clusters or [])], degenerate)


def _top_m(scores: np.ndarray, m: int) -> np.ndarray:
    """Column indices of the ``m`` largest entries per row, ascending; ties go to lower indices."""
    rows, n = scores.shape
    if m == n:
        return np.broadcast_to(np.arange(n), scores.shape).copy()
    part = np.argpartition(scores, n - m, axis=1)[:, n - m:]
    kth = np.take_along_axis(scores, part, axis=1).min(axis=1, keepdims=True)
    out = np.sort(part, axis=1)
    # rows where values tied with the m-th largest straddle the cut need the exact rule
    tied = np.nonzero((scores >= kth).sum(axis=1) != m)[0]
    if tied.size:
        sub, k = scores[tied], kth[tied]
        above = sub > k
        need = m - above.sum(axis=1, keepdims=True)
        at = sub == k
        take = above | (at & (np.cumsum(at, axis=1) <= need))
        out[tied] = np.nonzero(take)[1].reshape(tied.size, m)
    return out


def recover_point_map(basis_a: SpectralBasis, basis_b: SpectralBasis, cmap: FunctionalMapC,
                      hks_a: HksField, hks_b: HksField, m: int = 5,
                      roi: Optional[np.ndarray] = None) -> PointMap:
    """Map each (ROI) vertex of A to the HKS-closest of its ``m`` best spectral candidates in B."""
    phi_a, phi_b = basis_a.eigenvectors, basis_b.eigenvectors
    n_a, n_b = phi_a.shape[0], phi_b.shape[0]
    if basis_a.p != basis_b.p or cmap.p != basis_a.p:
        raise DimensionMismatch(
            f"p differs: A={basis_a.p}, B={basis_b.p}, C={cmap.p}")
    if hks_a.values.shape[0] != n_a or hks_b.values.shape[0] != n_b:
        raise DimensionMismatch("HKS fields do not match the bases")
    if hks_a.values.shape[1] != hks_b.values.shape[1]:
        raise DimensionMismatch("HKS fields use different time grids")
    if not 1 <= m <= n_b:
        raise ValueError(f"need 1 <= m <= n_B, got m={m}")
    if roi is None:
        sources = np.arange(n_a)
    else:
        roi = np.asarray(roi, dtype=bool)
        if roi.shape != (n_a,):
            raise DimensionMismatch(f"ROI mask has length {roi.shape[0]}, mesh A has {n_a}")
        sources = np.nonzero(roi)[0]
    target = np.full(n_a, UNMAPPED, dtype=np.int64)
    deviation = np.zeros(n_a)
    fa, fb = hks_a.values, hks_b.values
    weighted_a = phi_a * cmap.diag
    phi_b_t = np.ascontiguousarray(phi_b.T)
    for start in range(0, sources.size, CHUNK):
        rows = sources[start:start + CHUNK]
        scores = weighted_a[rows] @ phi_b_t
        cand = _top_m(scores, m)
        dist = np.linalg.norm(fa[rows][:, None, :] - fb[cand], axis=2)
        best = np.argmin(dist, axis=1)
        target[rows] = cand[np.arange(rows.size), best]
        deviation[rows] = dist[np.arange(rows.size), best]
    return PointMap(target, deviation, int(m), roi is not None)


def accuracy(pmap: PointMap, ground_truth, coords_b) -> float:
    """Mean Euclidean distance between mapped and true targets, over the mapped vertices."""
    gt = np.asarray(ground_truth, dtype=np.int64)
    if gt.shape != pmap.target.shape:
        raise DimensionMismatch("ground truth length differs from the point map")
    coords_b = np.asarray(coords_b, dtype=float)
    mapped = pmap.target != UNMAPPED
    if not np.any(mapped):
        return 0.0
    err = np.linalg.norm(coords_b[pmap.target[mapped]] - coords_b[gt[mapped]], axis=1)
    return float(err.sum() / mapped.sum())
