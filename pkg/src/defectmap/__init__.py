"""Registration-free defect localisation on triangle meshes.

A suspect mesh is matched to a nominal mesh through a diagonal functional
map between Laplace-Beltrami eigenbases, per-vertex deviations are measured
as heat-kernel-signature differences, and significant deviations are
flagged with a threshold calibrated on in-control parts.
"""
from .errors import *  # noqa: F401,F403
from .fem import FemDegree, OperatorPair, assemble
from .funcmap import (CoefficientMatrix, FunctionalMapC, PointMap, accuracy, coefficients,
                      estimate_c, recover_point_map)
from .hks import HksField, TimeGrid, hks_field, time_grid
from .mesh import (SubmeshResult, TriangleMesh, connected_components, extract_submesh,
                   load_mesh, save_diagnosis_mesh, save_off)
from .pipeline import PipelineConfig, PipelineResult, ShapeModel, run_pipeline, shape_model
from .roi import (PartitionPair, RoiResult, filter_roi, match_components, nodal_split,
                  recursive_roi)
from .spectral import SpectralBasis, orthonormalize, solve_smallest_eigs, spectral_basis
from .stats import DiagnosisReport, ThresholdModel, calibrate, diagnose, phase1_maxima
from .synth import DefectSpec, GroundTruth, PartSpec, generate, nominal_mesh, phase1_batch

__version__ = "0.1.0"
