import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from defectmap.errors import DegenerateRow, DimensionMismatch, SymmetryWarning
from defectmap.funcmap import (UNMAPPED, CoefficientMatrix, PointMap, _top_m, accuracy,
                               coefficients, estimate_c, recover_point_map)
from defectmap.hks import HksField, TimeGrid
from defectmap.pipeline import PipelineConfig, run_pipeline, shape_model
from defectmap.spectral import SpectralBasis

from conftest import random_rotation

CONFIG = PipelineConfig(p=60, K=40, degree="P1")


def _coeff(a):
    return CoefficientMatrix(np.asarray(a, dtype=float), 1.0)


def _random_basis(rng, n=40, p=8):
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return SpectralBasis(np.arange(p, dtype=float), q, "P1", n)


def _field(values):
    values = np.asarray(values, dtype=float)
    return HksField(values, TimeGrid(np.linspace(1, 2, values.shape[1]), 1e-4), values.shape[0])


@pytest.fixture(scope="module")
def toothed_model(toothed_small):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SymmetryWarning)
        return shape_model(toothed_small, CONFIG)


# -- coefficients -----------------------------------------------------------------


def test_coefficient_of_basis_column():
    b = _random_basis(np.random.default_rng(0))
    A = coefficients(b, _field(b.eigenvectors[:, [2]]))
    expect = np.zeros((8, 1))
    expect[2, 0] = 1.0 / np.sqrt(40)
    assert np.abs(A.entries - expect).max() <= 1e-14


def test_coefficient_of_orthogonal_column():
    rng = np.random.default_rng(1)
    b = _random_basis(rng)
    f = rng.standard_normal(40)
    f -= b.eigenvectors @ (b.eigenvectors.T @ f)
    assert np.abs(coefficients(b, _field(f[:, None])).entries).max() <= 1e-14


def test_coefficients_are_permutation_equivariant():
    rng = np.random.default_rng(2)
    b = _random_basis(rng)
    f = rng.standard_normal((40, 5))
    perm = rng.permutation(40)
    bp = SpectralBasis(b.eigenvalues, b.eigenvectors[perm], "P1", 40)
    a1 = coefficients(b, _field(f)).entries
    a2 = coefficients(bp, _field(f[perm])).entries
    assert np.abs(a1 - a2).max() <= 1e-13


def test_coefficients_dimension_mismatch():
    b = _random_basis(np.random.default_rng(3))
    with pytest.raises(DimensionMismatch):
        coefficients(b, _field(np.ones((39, 3))))


# -- ridge estimator -------------------------------------------------------------------


def test_ridge_hand_example():
    A, B = _coeff([[1.0, 2.0]]), _coeff([[2.0, 4.0]])
    assert estimate_c(A, B, 0.0).diag[0] == pytest.approx(2.0, rel=1e-15)
    c = estimate_c(A, B, 0.8)
    assert c.diag[0] == pytest.approx(1.2, rel=1e-14)
    assert c.unconstrained[0] == pytest.approx(2.0, rel=1e-15)


def test_ridge_limit():
    rng = np.random.default_rng(4)
    A, B = _coeff(rng.standard_normal((30, 6))), _coeff(rng.standard_normal((30, 6)))
    c = estimate_c(A, B, 0.999)
    assert np.abs(c.diag - np.sign(c.unconstrained)).max() <= 0.002 * max(1, np.abs(c.unconstrained).max())


def test_self_map_is_identity():
    A = _coeff(np.random.default_rng(5).standard_normal((20, 7)))
    assert np.array_equal(estimate_c(A, A, 0.0).diag, np.ones(20))
    assert np.array_equal(estimate_c(A, A, 0.8).diag, np.ones(20))


def test_degenerate_row_warns():
    a = np.ones((3, 4))
    a[1] = 1e-9
    with pytest.warns(DegenerateRow):
        c = estimate_c(_coeff(a), _coeff(np.ones((3, 4))), 0.5)
    assert c.diag[1] == 0.0 and c.degenerate_rows == [1]


@pytest.mark.parametrize("q", [-0.1, 1.0])
def test_q_range(q):
    with pytest.raises(ValueError):
        estimate_c(_coeff([[1.0]]), _coeff([[1.0]]), q)


def test_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        estimate_c(_coeff(np.ones((3, 4))), _coeff(np.ones((3, 5))))


rows = arrays(np.float64, (6, 5), elements=st.floats(-100, 100))


@settings(max_examples=80, deadline=None)
@given(rows, rows, st.floats(0.0, 0.999), st.floats(0.0, 0.999))
def test_ridge_properties(a, b, q1, q2):
    if np.any(np.einsum("jk,jk->j", a, a) < 1e-10):
        return
    A, B = _coeff(a), _coeff(b)
    c0 = estimate_c(A, B, 0.0).diag
    lo, hi = sorted((q1, q2))
    c_lo, c_hi = estimate_c(A, B, lo).diag, estimate_c(A, B, hi).diag
    s = np.sign(c0)
    # sign never flips, and every entry sits between c0 and sign(c0)
    nz = c0 != 0
    assert np.all(np.sign(c_lo[nz]) == s[nz]) and np.all(np.sign(c_hi[nz]) == s[nz])
    for c in (c_lo, c_hi):
        assert np.all(np.minimum(c0, s) - 1e-12 <= c) and np.all(c <= np.maximum(c0, s) + 1e-12)
    # monotone in q: larger q is never farther from sign(c0)
    assert np.all(np.abs(c_hi - s) <= np.abs(c_lo - s) + 1e-12)


# -- candidate selection ------------------------------------------------------------------


def test_top_m_ties_prefer_lower_index():
    s = np.array([[1.0, 3.0, 3.0, 3.0, 0.0],
                  [5.0, 5.0, 5.0, 5.0, 5.0]])
    assert _top_m(s, 2).tolist() == [[1, 2], [0, 1]]
    assert _top_m(s, 5).tolist() == [[0, 1, 2, 3, 4]] * 2


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, (4, 12), elements=st.sampled_from([-1.0, 0.0, 0.5, 2.0])),
       st.integers(1, 12))
def test_top_m_matches_stable_sort(scores, m):
    expect = np.sort(np.argsort(-scores, axis=1, kind="stable")[:, :m], axis=1)
    assert np.array_equal(_top_m(scores, m), expect)


# -- point-map recovery ---------------------------------------------------------------------


def test_self_match(toothed_model):
    res = run_pipeline(toothed_model, toothed_model, PipelineConfig(p=60, K=40, degree="P1", q=0.0))
    n = toothed_model.mesh.n_vertices
    ident = np.mean(res.point_map.target == np.arange(n))
    assert ident >= 0.99
    assert np.median(res.deviation) < 1e-8


def test_rotated_copy(toothed_model):
    mesh = toothed_model.mesh
    moved = mesh.transformed(random_rotation(np.random.default_rng(7)), (0.5, -2.0, 1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SymmetryWarning)
        res = run_pipeline(moved, toothed_model, CONFIG)
    assert np.mean(res.point_map.target == np.arange(mesh.n_vertices)) >= 0.95


def test_deviation_recomputable(toothed_model):
    res = run_pipeline(toothed_model, toothed_model, CONFIG)
    t = res.point_map.target
    direct = np.linalg.norm(res.hks_a.values - res.hks_b.values[t], axis=1)
    assert np.array_equal(direct, res.deviation)


def test_roi_restriction(toothed_model):
    n = toothed_model.mesh.n_vertices
    roi = np.zeros(n, dtype=bool)
    roi[np.random.default_rng(8).choice(n, n // 10, replace=False)] = True
    full = run_pipeline(toothed_model, toothed_model, CONFIG)
    part = run_pipeline(toothed_model, toothed_model, CONFIG, roi=roi)
    assert np.all(part.deviation[~roi] == 0.0)
    assert np.all(part.point_map.target[~roi] == UNMAPPED)
    assert np.array_equal(part.point_map.target[roi], full.point_map.target[roi])
    assert part.point_map.roi_applied


def test_all_true_roi_equals_no_roi(toothed_model):
    n = toothed_model.mesh.n_vertices
    a = run_pipeline(toothed_model, toothed_model, CONFIG)
    b = run_pipeline(toothed_model, toothed_model, CONFIG, roi=np.ones(n, dtype=bool))
    assert np.array_equal(a.point_map.target, b.point_map.target)
    assert np.array_equal(a.deviation, b.deviation)


def test_recovery_validation():
    rng = np.random.default_rng(9)
    ba, bb = _random_basis(rng), _random_basis(rng, n=30)
    cmap = estimate_c(_coeff(np.ones((8, 3))), _coeff(np.ones((8, 3))))
    fa, fb = _field(np.ones((40, 3))), _field(np.ones((30, 3)))
    with pytest.raises(ValueError):
        recover_point_map(ba, bb, cmap, fa, fb, m=31)
    with pytest.raises(DimensionMismatch):
        recover_point_map(ba, bb, cmap, fa, fb, roi=np.ones(39, dtype=bool))
    with pytest.raises(DimensionMismatch):
        recover_point_map(ba, bb, cmap, fa, _field(np.ones((30, 4))))
    with pytest.raises(DimensionMismatch):
        recover_point_map(ba, _random_basis(rng, n=30, p=7), cmap, fa, fb)


def test_hks_ties_go_to_lower_index():
    # every candidate has the same HKS distance: the lowest-index candidate wins
    rng = np.random.default_rng(10)
    b = _random_basis(rng, n=10, p=3)
    cmap = estimate_c(_coeff(np.ones((3, 2))), _coeff(np.ones((3, 2))))
    f = _field(np.ones((10, 2)))
    pm = recover_point_map(b, b, cmap, f, f, m=10)
    assert np.all(pm.target == 0)


# -- accuracy, serialization -------------------------------------------------------------------


def test_accuracy_cases():
    coords = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    gt = np.array([0, 1, 2, 3])
    exact = PointMap(gt.copy(), np.zeros(4), 5, False)
    assert accuracy(exact, gt, coords) == 0.0
    shifted = PointMap(np.array([1, 2, 3, 2]), np.zeros(4), 5, False)
    assert accuracy(shifted, gt, coords) == pytest.approx(1.0)
    with pytest.raises(DimensionMismatch):
        accuracy(exact, gt[:3], coords)


def test_accuracy_brute_force():
    rng = np.random.default_rng(11)
    coords = rng.standard_normal((50, 3))
    gt = rng.permutation(50)
    target = rng.integers(0, 50, 50)
    pm = PointMap(target, np.zeros(50), 5, False)
    brute = sum(np.sqrt(sum((coords[target[x], k] - coords[gt[x], k]) ** 2 for k in range(3)))
                for x in range(50)) / 50
    assert accuracy(pm, gt, coords) == pytest.approx(brute, rel=1e-12)


def test_accuracy_skips_unmapped():
    coords = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    pm = PointMap(np.array([1, UNMAPPED]), np.zeros(2), 5, True)
    assert accuracy(pm, np.array([0, 1]), coords) == pytest.approx(2.0)


def test_point_map_json():
    pm = PointMap(np.array([1, UNMAPPED]), np.array([0.25, 0.0]), 5, True)
    data = json.loads(pm.to_json({"p": 3}))
    assert data["header"] == {"p": 3} and data["roiApplied"] is True
    assert data["records"][1] == {"sourceIndex": 1, "targetIndex": -1, "deviation": 0.0}
