"""Single-threshold multiple-comparison test calibrated on Phase-I parts.

Each in-control part contributes the maximum of its deviation field; the
``(floor(alpha * m0) + 1)``-th largest of those maxima is the threshold
applied to every vertex of a suspect part.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigMismatch, InsufficientPhase1
from .mesh import TriangleMesh, save_diagnosis_mesh
from .pipeline import PipelineConfig, as_model, run_pipeline
from .roi import filter_roi

SCHEMA_VERSION = 1

RoiSpec = Union[None, np.ndarray, Callable[[int, TriangleMesh], np.ndarray]]


def filter_deviation(deviation, roi) -> np.ndarray:
    if roi is None:
        return np.array(deviation, dtype=float)
    return filter_roi(deviation, roi)


def _roi_for(roi: RoiSpec, index: int, part: TriangleMesh):
    if roi is None:
        return None
    if callable(roi):
        return np.asarray(roi(index, part), dtype=bool)
    return np.asarray(roi, dtype=bool)


def phase1_maxima(parts: Sequence[TriangleMesh], nominal, config: PipelineConfig,
                  roi: RoiSpec = None, cache_dir=None) -> np.ndarray:
    """Maximum (ROI-filtered) deviation of every Phase-I part against the nominal.

    ``roi`` is either a mask shared by all parts or a callable
    ``(index, part) -> mask``. Pipeline errors propagate with the offending
    part index attached as ``part_index``.
    """
    if len(parts) == 0:
        raise ValueError("need at least one Phase-I part")
    nominal = as_model(nominal, config, cache_dir)
    out = np.empty(len(parts))
    for i, part in enumerate(parts):
        try:
            mask = _roi_for(roi, i, part)
            result = run_pipeline(part, nominal, config, roi=mask, cache_dir=cache_dir)
            out[i] = filter_deviation(result.deviation, mask).max()
        except Exception as exc:
            exc.part_index = i
            if exc.args and isinstance(exc.args[0], str):
                exc.args = (f"Phase-I part {i}: {exc.args[0]}",) + exc.args[1:]
            raise
    return out


@dataclass(frozen=True, eq=False)
class ThresholdModel:
    maxima: np.ndarray  # sorted nonincreasing
    alpha: float
    threshold: float
    config: Optional[dict] = None
    config_hash: Optional[str] = None
    roi_provenance: Optional[str] = None

    @property
    def m0(self) -> int:
        return self.maxima.shape[0]

    @property
    def rank(self) -> int:
        """1-based rank (from the top) of the order statistic used as threshold."""
        return order_statistic_rank(self.m0, self.alpha)

    def to_dict(self) -> dict:
        return {
            "schemaVersion": SCHEMA_VERSION,
            "alpha": self.alpha,
            "m0": self.m0,
            "rank": self.rank,
            "threshold": self.threshold,
            "maxima": [float(v) for v in self.maxima],
            "config": self.config,
            "configHash": self.config_hash,
            "roiProvenance": self.roi_provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "ThresholdModel":
        return cls(np.asarray(data["maxima"], dtype=float), float(data["alpha"]),
                   float(data["threshold"]), data.get("config"), data.get("configHash"),
                   data.get("roiProvenance"))

    @classmethod
    def load(cls, path) -> "ThresholdModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def order_statistic_rank(m0: int, alpha: float) -> int:
    return min(int(math.floor(alpha * m0)) + 1, m0)


def calibrate(maxima, alpha: float = 0.05, config: Optional[PipelineConfig] = None,
              roi_provenance: Optional[str] = None) -> ThresholdModel:
    """Threshold at the ``(floor(alpha * m0) + 1)``-th largest Phase-I maximum."""
    values = np.asarray(maxima, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("maxima must be a non-empty 1-D array")
    if not np.all(np.isfinite(values)):
        raise ValueError("maxima must be finite")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    m0 = values.size
    if m0 < math.ceil(1.0 / alpha):
        warnings.warn(f"m0={m0} < ceil(1/alpha)={math.ceil(1.0 / alpha)}: the threshold is the "
                      "Phase-I maximum and the test cannot reach level alpha",
                      InsufficientPhase1, stacklevel=2)
    ordered = np.sort(values, kind="stable")[::-1].copy()
    threshold = float(ordered[order_statistic_rank(m0, alpha) - 1])
    return ThresholdModel(ordered, float(alpha), threshold,
                          None if config is None else config.to_dict(),
                          None if config is None else config.hash(), roi_provenance)


@dataclass(frozen=True, eq=False)
class DiagnosisReport:
    deviation: np.ndarray
    significant: np.ndarray
    threshold: Optional[float]
    meta: dict = field(default_factory=dict)
    target: Optional[np.ndarray] = None

    @property
    def flagged(self) -> np.ndarray:
        return np.nonzero(self.significant)[0]

    def to_dict(self) -> dict:
        out = {
            "schemaVersion": SCHEMA_VERSION,
            "meta": self.meta,
            "threshold": self.threshold,
            "deviation": [float(v) for v in self.deviation],
            "significant": self.flagged.tolist(),
            "maxDeviation": float(self.deviation.max()) if self.deviation.size else 0.0,
        }
        if self.target is not None:
            out["target"] = [int(v) for v in self.target]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save_ply(self, mesh: TriangleMesh, path) -> None:
        flags = self.significant if self.threshold is not None else None
        save_diagnosis_mesh(mesh, self.deviation, flags, path)


def flag(deviation, threshold: float, roi=None) -> np.ndarray:
    """Strict exceedance of the threshold inside the ROI."""
    d = filter_deviation(deviation, roi)
    sig = d > threshold
    if roi is not None:
        sig &= np.asarray(roi, dtype=bool)
    return sig


def check_config(model: ThresholdModel, config: PipelineConfig) -> None:
    if model.config_hash is not None and model.config_hash != config.hash():
        raise ConfigMismatch(
            f"threshold model was calibrated with {model.config}, diagnosis uses "
            f"{config.map_params()}")


def diagnose(suspect, nominal, model: Optional[ThresholdModel], roi=None,
             config: Optional[PipelineConfig] = None, cache_dir=None,
             meta: Optional[dict] = None) -> DiagnosisReport:
    """Deviation field of ``suspect`` and, given a model, the significant set.

    Without a model the report carries the raw field and an empty flag set.
    """
    config = config or PipelineConfig()
    if model is not None:
        check_config(model, config)
    roi_mask = None if roi is None else np.asarray(roi, dtype=bool)
    result = run_pipeline(suspect, nominal, config, roi=roi_mask, cache_dir=cache_dir)
    deviation = filter_deviation(result.deviation, roi_mask)
    info = {"config": config.to_dict(), "configHash": config.hash(),
            "roiApplied": roi_mask is not None,
            "roiSize": None if roi_mask is None else int(roi_mask.sum())}
    if model is not None:
        info.update({"alpha": model.alpha, "m0": model.m0, "rank": model.rank,
                     "calibrationRoi": model.roi_provenance})
        significant = flag(deviation, model.threshold, roi_mask)
        threshold = model.threshold
    else:
        significant = np.zeros(deviation.shape, dtype=bool)
        threshold = None
    info.update(meta or {})
    return DiagnosisReport(deviation, significant, threshold, info, result.point_map.target)
