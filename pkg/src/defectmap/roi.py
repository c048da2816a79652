"""Region-of-interest filtering and recursive nodal-domain ROI discovery.

Each recursion step splits the suspect and the nominal mesh along the sign
of the first nonzero LB eigenvector, pairs the halves by cardinality, and
keeps the pair whose low-frequency spectra differ the most.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import (AmbiguousMatch, DimensionMismatch, NoNonzeroEigenvalue,
                     SubmeshTooSmallWarning)
from .fem import FemDegree, assemble
from .mesh import (SubmeshResult, TriangleMesh, extract_submesh, largest_component,
                   save_diagnosis_mesh)
from .spectral import solve_smallest_eigs, zero_tolerance

DISSIMILARITY_EIGS = 15
MAX_ITERS = 3


def filter_roi(deviation, roi) -> np.ndarray:
    """Deviation inside the ROI, zero elsewhere."""
    deviation = np.asarray(deviation, dtype=float)
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != deviation.shape:
        raise DimensionMismatch(f"ROI length {roi.shape} differs from deviation {deviation.shape}")
    return np.where(roi, deviation, 0.0)


@dataclass(frozen=True, eq=False)
class PartitionPair:
    """Sign split of a mesh.

    ``plus_mask``/``minus_mask`` partition the parent vertices exactly; the
    submeshes keep the largest connected piece of the faces lying wholly on
    each side.
    """

    plus: SubmeshResult
    minus: SubmeshResult
    plus_mask: np.ndarray
    minus_mask: np.ndarray
    swapped: bool = False

    @property
    def plus_count(self) -> int:
        return int(self.plus_mask.sum())

    @property
    def minus_count(self) -> int:
        return int(self.minus_mask.sum())

    def exchanged(self) -> "PartitionPair":
        return PartitionPair(self.minus, self.plus, self.minus_mask, self.plus_mask,
                             not self.swapped)


def _compose(outer: SubmeshResult, inner: SubmeshResult) -> SubmeshResult:
    return SubmeshResult(inner.mesh, outer.parent_index[inner.parent_index])


def _side(mesh: TriangleMesh, mask: np.ndarray) -> SubmeshResult:
    sub = extract_submesh(mesh, mask)
    return _compose(sub, largest_component(sub.mesh))


def fiedler_vector(mesh: TriangleMesh, degree=FemDegree.P3) -> Tuple[float, np.ndarray]:
    """First nonzero eigenvalue and its raw (M-normalised) eigenvector at the vertices."""
    ops = assemble(mesh, degree)
    count = min(4, ops.n_dofs - 1)
    lam, vecs = solve_smallest_eigs(ops, count)
    tol = zero_tolerance(lam)
    idx = np.nonzero(lam > tol)[0]
    if tol == 0.0 or idx.size == 0:
        raise NoNonzeroEigenvalue("no nonzero eigenvalue among the lowest modes")
    j = int(idx[0])
    return float(lam[j]), vecs[ops.vertex_dofs, j]


def nodal_split(mesh: TriangleMesh, degree=FemDegree.P3) -> PartitionPair:
    """Split by the sign of the first nonzero eigenvector; zeros go to the plus side."""
    _, phi = fiedler_vector(mesh, degree)
    plus = phi >= 0.0
    return PartitionPair(_side(mesh, plus), _side(mesh, ~plus), plus, ~plus)


def swap_rule(a_plus: int, a_minus: int, b_plus: int, b_minus: int) -> Tuple[bool, bool]:
    """``(swap, ambiguous)`` for the cardinality-difference rule."""
    da, db = a_plus - a_minus, b_plus - b_minus
    return da * db < 0, da == 0 or db == 0


def match_components(a: PartitionPair, b: PartitionPair) -> PartitionPair:
    """Return ``b`` with its sides exchanged when its size imbalance opposes ``a``'s."""
    swap, ambiguous = swap_rule(a.plus_count, a.minus_count, b.plus_count, b.minus_count)
    if ambiguous:
        warnings.warn("equal-size nodal domains: plus/minus pairing is ambiguous, no swap",
                      AmbiguousMatch, stacklevel=2)
    return b.exchanged() if swap else b


@dataclass(frozen=True, eq=False)
class RoiResult:
    mask: np.ndarray
    iterations: int
    scores: List[dict] = field(default_factory=list)
    nominal_mask: Optional[np.ndarray] = None
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "schemaVersion": 1,
            "iterations": self.iterations,
            "stoppedEarly": self.stopped_early,
            "scores": self.scores,
            "roi": np.nonzero(self.mask)[0].tolist(),
            "nominalRoi": None if self.nominal_mask is None
            else np.nonzero(self.nominal_mask)[0].tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def load_mask(cls, path, n: int) -> np.ndarray:
        with open(path) as fh:
            data = json.load(fh)
        idx = data["roi"] if isinstance(data, dict) else data
        mask = np.zeros(n, dtype=bool)
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DimensionMismatch(f"ROI index outside [0, {n})")
        mask[idx] = True
        return mask

    def save_overlay(self, mesh: TriangleMesh, path) -> None:
        save_diagnosis_mesh(mesh, self.mask.astype(float), self.mask, path)


def _low_spectrum(mesh: TriangleMesh, degree, count: int) -> np.ndarray:
    return solve_smallest_eigs(assemble(mesh, degree), count)[0]


def recursive_roi(suspect: TriangleMesh, nominal: TriangleMesh, iters: int = 2,
                  degree=FemDegree.P3, n_eigs: int = DISSIMILARITY_EIGS) -> RoiResult:
    """Shrink the suspect to the nodal-domain chain that differs most from the nominal.

    Step ``k`` compares ``sum_i |lambda^A_{+,i} - lambda^B_{+,i}|`` with the same
    sum over the minus sides (``n_eigs`` eigenvalues from ``lambda_0``) and
    descends into the plus pair only when its sum is strictly larger. The
    recursion stops early, with a warning, once a side has too few vertices
    for ``n_eigs`` eigenvalues.
    """
    if not 1 <= iters <= MAX_ITERS:
        raise ValueError(f"iters must lie in [1, {MAX_ITERS}]")
    degree = FemDegree.parse(degree)
    a = SubmeshResult(suspect, np.arange(suspect.n_vertices))
    b = SubmeshResult(nominal, np.arange(nominal.n_vertices))
    scores: List[dict] = []
    stopped = False
    done = 0
    for step in range(iters):
        pa = nodal_split(a.mesh, degree)
        pb = match_components(pa, nodal_split(b.mesh, degree))
        sides = [pa.plus, pa.minus, pb.plus, pb.minus]
        smallest = min(s.mesh.n_vertices for s in sides)
        if smallest <= n_eigs:
            warnings.warn(f"iteration {step + 1}: a nodal domain has {smallest} vertices, too few "
                          f"for {n_eigs} eigenvalues; keeping the current region",
                          SubmeshTooSmallWarning, stacklevel=2)
            stopped = True
            break
        la_p, la_m, lb_p, lb_m = (_low_spectrum(s.mesh, degree, n_eigs) for s in sides)
        s_plus = float(np.abs(la_p - lb_p).sum())
        s_minus = float(np.abs(la_m - lb_m).sum())
        take_plus = s_plus > s_minus
        scores.append({"iteration": step + 1, "plus": s_plus, "minus": s_minus,
                       "tie": s_plus == s_minus, "swapped": pb.swapped,
                       "branch": "plus" if take_plus else "minus"})
        a = _compose(a, pa.plus if take_plus else pa.minus)
        b = _compose(b, pb.plus if take_plus else pb.minus)
        done += 1
    mask = np.zeros(suspect.n_vertices, dtype=bool)
    mask[a.parent_index] = True
    nominal_mask = np.zeros(nominal.n_vertices, dtype=bool)
    nominal_mask[b.parent_index] = True
    return RoiResult(mask, done, scores, nominal_mask, stopped)


