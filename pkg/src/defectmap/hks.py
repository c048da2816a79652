"""Normalised, scaled heat kernel signatures on a logarithmic time grid."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NoNonzeroEigenvalue
from .spectral import SpectralBasis, zero_tolerance


@dataclass(frozen=True, eq=False)
class TimeGrid:
    values: np.ndarray
    epsilon: float

    @property
    def K(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class HksField:
    values: np.ndarray  # (n, K)
    grid: TimeGrid
    mesh_size: int


def time_grid(eigenvalues, K: int = 100, epsilon: float = 1e-4) -> TimeGrid:
    """K log-uniform times between ``-ln(eps)/lambda_max`` and ``-ln(eps)/lambda_1``.

    ``lambda_1`` is the first eigenvalue above the zero tolerance and
    ``lambda_max`` the last one supplied. With eps = 1e-4 the bounds are
    ``4 ln(10) / lambda``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if K < 2:
        raise ValueError("K must be at least 2")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    tol = zero_tolerance(lam)
    nonzero = lam[lam > tol]
    if tol == 0.0 or nonzero.size == 0:
        raise NoNonzeroEigenvalue("the spectrum has no eigenvalue above the zero tolerance")
    c = -np.log(epsilon)
    t_min = c / lam[-1]
    t_max = c / nonzero[0]
    # clip round-off so the grid stays sorted and inside its exact endpoints
    t = np.maximum.accumulate(np.clip(np.geomspace(t_min, t_max, K), t_min, t_max))
    t[0], t[-1] = t_min, t_max
    return TimeGrid(t, float(epsilon))


SCALINGS = ("nonzero", "integral")


def hks_field(basis: SpectralBasis, grid: TimeGrid, scaling: str = "nonzero") -> HksField:
    """Normalised, scaled HKS: ``n * sum_i e^{-l_i t} phi_i(x)^2 / Z(t)``.

    The numerator runs over all ``p`` eigenpairs. With ``scaling="nonzero"``
    the normaliser ``Z(t)`` sums ``e^{-l_i t}`` over the nonzero eigenvalues
    only; ``"integral"`` divides by the truncated integral of ``k_t(x, x)``
    over the surface, i.e. includes the zero eigenvalue(s) as well. The
    second form keeps every column at vertex-mean 1, whereas the first grows
    like ``1 / e^{-l_1 t}`` at large ``t`` and lets small eigenvalue shifts
    dominate deviations between shapes.
    """
    if scaling not in SCALINGS:
        raise ValueError(f"scaling must be one of {SCALINGS}")
    lam = basis.eigenvalues
    if basis.p < 2:
        raise ValueError("need at least two eigenpairs")
    tol = zero_tolerance(lam)
    if tol == 0.0 or not np.any(lam > tol):
        raise NoNonzeroEigenvalue("basis has no nonzero eigenvalue")
    n = basis.mesh_size
    weights = np.exp(-np.outer(lam, grid.values))           # (p, K)
    numerator = (basis.eigenvectors ** 2) @ weights           # (n, K)
    if scaling == "nonzero":
        denominator = weights[lam > tol].sum(axis=0)
    else:
        denominator = weights.sum(axis=0)
    return HksField(n * numerator / denominator, grid, n)


def unnormalized_hks(basis: SpectralBasis, times) -> np.ndarray:
    """Truncated ``k_t(x, x)`` without scaling or normalisation, shape (n, len(times))."""
    weights = np.exp(-np.outer(basis.eigenvalues, np.asarray(times, dtype=float)))
    return (basis.eigenvectors ** 2) @ weights


def write_hks_csv(field: HksField, vertices, path) -> None:
    """One block of ``(vertex, t, f_t)`` rows per selected vertex."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "t", "hks"])
        for x in vertices:
            for t, val in zip(field.grid.values, field.values[int(x)]):
                w.writerow([int(x), repr(float(t)), repr(float(val))])
