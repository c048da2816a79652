"""Configuration and the end-to-end deviation pipeline (suspect A against nominal B)."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fem import FemDegree
from .funcmap import FunctionalMapC, PointMap, coefficients, estimate_c, recover_point_map
from .hks import SCALINGS, HksField, hks_field, time_grid
from .mesh import TriangleMesh
from .spectral import SpectralBasis, spectral_basis


@dataclass(frozen=True)
class PipelineConfig:
    p: int = 200
    K: int = 100
    m: int = 5
    q: float = 0.8
    epsilon: float = 1e-4
    degree: FemDegree = FemDegree.P3
    alpha: float = 0.05
    roi_iters: int = 0
    hks_scaling: str = "integral"

    def __post_init__(self):
        object.__setattr__(self, "degree", FemDegree.parse(self.degree))
        if self.p < 2 or self.K < 2 or self.m < 1:
            raise ValueError("need p >= 2, K >= 2, m >= 1")
        if not 0.0 <= self.q < 1.0:
            raise ValueError("q must lie in [0, 1)")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.hks_scaling not in SCALINGS:
            raise ValueError(f"hks_scaling must be one of {SCALINGS}")
        if not 0 <= self.roi_iters <= 3:
            raise ValueError("roi_iters must lie in [0, 3]")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["degree"] = self.degree.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        aliases = {"roiIters": "roi_iters", "hksScaling": "hks_scaling"}
        clean = {}
        for key, value in data.items():
            key = aliases.get(key, key)
            if key not in names:
                raise ValueError(f"unknown config key {key!r}")
            clean[key] = value
        return cls(**clean)

    def map_params(self) -> dict:
        """The parameters that must agree between calibration and diagnosis."""
        d = self.to_dict()
        return {k: d[k] for k in ("p", "K", "m", "q", "epsilon", "degree", "hks_scaling")}

    def hash(self) -> str:
        blob = json.dumps(self.map_params(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True, eq=False)
class ShapeModel:
    """Spectral basis of one mesh, reused across pipeline runs."""

    mesh: TriangleMesh
    basis: SpectralBasis


@dataclass(frozen=True, eq=False)
class PipelineResult:
    point_map: PointMap
    cmap: FunctionalMapC
    hks_a: HksField
    hks_b: HksField

    @property
    def deviation(self) -> np.ndarray:
        return self.point_map.deviation


def shape_model(mesh: TriangleMesh, config: PipelineConfig, cache_dir=None) -> ShapeModel:
    return ShapeModel(mesh, spectral_basis(mesh, config.degree, config.p, cache_dir=cache_dir))


def as_model(mesh_or_model, config: PipelineConfig, cache_dir=None) -> ShapeModel:
    if isinstance(mesh_or_model, ShapeModel):
        if (mesh_or_model.basis.p != config.p
                or mesh_or_model.basis.degree is not config.degree):
            raise ValueError("precomputed basis does not match the configuration")
        return mesh_or_model
    return shape_model(mesh_or_model, config, cache_dir)


def model_hks(model: ShapeModel, config: PipelineConfig) -> HksField:
    grid = time_grid(model.basis.eigenvalues, config.K, config.epsilon)
    return hks_field(model.basis, grid, config.hks_scaling)


def run_pipeline(suspect, nominal, config: PipelineConfig,
                 roi: Optional[np.ndarray] = None, cache_dir=None,
                 timings: Optional[dict] = None) -> PipelineResult:
    """Deviation field of ``suspect`` (A) relative to ``nominal`` (B).

    Both arguments may be meshes or precomputed :class:`ShapeModel` objects.
    Each shape samples its HKS on a time grid built from its own spectrum,
    so column ``k`` of both fields sits at the same ``lambda_1 t``.
    ``timings``, when given, receives wall-clock seconds per stage.
    """
    clock = [time.perf_counter()]

    def lap(name):
        now = time.perf_counter()
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + now - clock[0]
        clock[0] = now

    a = as_model(suspect, config, cache_dir)
    b = as_model(nominal, config, cache_dir)
    lap("basis")
    fa = model_hks(a, config)
    fb = model_hks(b, config)
    lap("hks")
    clusters = sorted({tuple(c) for c in a.basis.symmetry_clusters + b.basis.symmetry_clusters})
    cmap = estimate_c(coefficients(a.basis, fa), coefficients(b.basis, fb), config.q,
                      [list(c) for c in clusters])
    lap("cmap")
    pmap = recover_point_map(a.basis, b.basis, cmap, fa, fb, config.m, roi)
    lap("recovery")
    return PipelineResult(pmap, cmap, fa, fb)
