import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import cKDTree

from defectmap.errors import NoNonzeroEigenvalue, SymmetryWarning
from defectmap.hks import SCALINGS, hks_field, time_grid, unnormalized_hks, write_hks_csv
from defectmap.mesh import TriangleMesh
from defectmap.spectral import SpectralBasis, spectral_basis
from defectmap.synth import fibonacci_sphere, nominal_mesh

from conftest import random_rotation

LN1E4 = 4.0 * np.log(10.0)


def _basis(mesh, degree="P3", p=60):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SymmetryWarning)
        return spectral_basis(mesh, degree, p)


@pytest.fixture(scope="module")
def sphere_basis():
    return _basis(fibonacci_sphere(1000), "P3", 200)


@pytest.fixture(scope="module")
def box():
    m = nominal_mesh("box", 600)
    return m, _basis(m)


def test_time_grid_hand_values():
    g = time_grid([0.0, 1.0, 50.0, 100.0], K=3, epsilon=1e-4)
    assert np.allclose(g.values, [0.0921034, 0.921034, 9.21034], rtol=1e-6)
    assert g.K == 3


def test_time_grid_k2_is_endpoints():
    g = time_grid([0.0, 2.0, 8.0], K=2)
    c = -np.log(1e-4)
    assert g.values.tolist() == [c / 8.0, c / 2.0]


def test_time_grid_all_zero():
    with pytest.raises(NoNonzeroEigenvalue):
        time_grid([0.0, 0.0, 0.0])
    with pytest.raises(NoNonzeroEigenvalue):
        time_grid([-0.0, 0.0])


@pytest.mark.parametrize("K,eps", [(1, 1e-4), (10, 0.0), (10, 1.0)])
def test_time_grid_preconditions(K, eps):
    with pytest.raises(ValueError):
        time_grid([0.0, 1.0, 2.0], K=K, epsilon=eps)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1e-3, 1e4), min_size=2, max_size=30), st.integers(2, 150))
def test_time_grid_is_log_uniform(nonzero, K):
    lam = np.concatenate([[0.0], np.sort(nonzero)])
    g = time_grid(lam, K=K)
    t = g.values
    assert t[0] == pytest.approx(LN1E4 / lam[-1], rel=1e-12)
    assert t[-1] == pytest.approx(LN1E4 / lam[1], rel=1e-12)
    assert np.all(np.diff(t) >= 0)
    steps = np.diff(np.log(t))
    assert np.allclose(steps, steps[0], atol=1e-9)


def test_unnormalized_hks_at_t_max_is_uniform(sphere_basis):
    n = sphere_basis.mesh_size
    g = time_grid(sphere_basis.eigenvalues)
    k = unnormalized_hks(sphere_basis, g.values[-1:])[:, 0]
    assert np.all(np.abs(k - 1.0 / n) <= (1e-4 + 0.02) / n)


def test_unnormalized_hks_matches_direct_sum(box):
    mesh, basis = box
    t = np.array([0.01, 0.3])
    k = unnormalized_hks(basis, t)
    phi, lam = basis.eigenvectors, basis.eigenvalues
    for x in (0, 17, mesh.n_vertices - 1):
        for j, tj in enumerate(t):
            direct = sum(np.exp(-lam[i] * tj) * phi[x, i] ** 2 for i in range(basis.p))
            assert k[x, j] == pytest.approx(direct, rel=1e-12)


def test_literal_formula_on_hand_basis():
    phi = np.array([[0.5, 0.5], [0.5, -0.5], [0.5, 0.5], [0.5, -0.5]])
    lam = np.array([0.0, 2.0])
    b = SpectralBasis(lam, phi, "P1", 4)
    g = time_grid(lam, K=2)
    t = g.values
    f = hks_field(b, g).values
    expect = 4 * (0.25 + np.exp(-2 * t) * 0.25) / np.exp(-2 * t)
    assert np.allclose(f, np.tile(expect, (4, 1)), rtol=1e-14)
    fi = hks_field(b, g, scaling="integral").values
    assert np.allclose(fi, 1.0, rtol=1e-14)


def test_integral_scaling_has_unit_mean(box):
    _, basis = box
    f = hks_field(basis, time_grid(basis.eigenvalues), scaling="integral").values
    assert np.allclose(f.mean(axis=0), 1.0, rtol=1e-12)


def test_scalings_differ_by_column_factor(box):
    _, basis = box
    g = time_grid(basis.eigenvalues)
    a = hks_field(basis, g, "nonzero").values
    b = hks_field(basis, g, "integral").values
    ratio = a / b
    assert np.allclose(ratio, ratio[0], rtol=1e-12)
    assert np.all(ratio > 1.0)


def test_unknown_scaling(box):
    _, basis = box
    with pytest.raises(ValueError):
        hks_field(basis, time_grid(basis.eigenvalues), scaling="other")


def test_central_inversion_symmetry(box):
    # the lattice box triangulation is symmetric under x -> c - (x - c)
    mesh, basis = box
    v = mesh.vertices
    c = 0.5 * (v.max(axis=0) + v.min(axis=0))
    d, pair = cKDTree(v).query(2 * c - v)
    assert d.max() < 1e-12
    for scaling in SCALINGS:
        f = hks_field(basis, time_grid(basis.eigenvalues), scaling).values
        assert np.abs(f - f[pair]).max() / np.abs(f).max() <= 1e-6


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_mirror_copy_has_identical_rows(box, axis):
    mesh, basis = box
    flip = np.ones(3)
    flip[axis] = -1.0
    mirrored = TriangleMesh(mesh.vertices * flip, mesh.faces[:, ::-1])
    other = _basis(mirrored)
    for scaling in SCALINGS:
        a = hks_field(basis, time_grid(basis.eigenvalues), scaling).values
        b = hks_field(other, time_grid(other.eigenvalues), scaling).values
        assert np.abs(a - b).max() / np.abs(a).max() <= 1e-6


def test_sphere_rows_agree(sphere_basis):
    for scaling in SCALINGS:
        f = hks_field(sphere_basis, time_grid(sphere_basis.eigenvalues), scaling).values
        spread = (f.max(axis=0) - f.min(axis=0)) / f.mean(axis=0)
        assert spread.max() <= 0.02


def test_rigid_motion_invariance(box):
    mesh, basis = box
    moved = mesh.transformed(random_rotation(np.random.default_rng(4)), (1.0, 2.0, -3.0))
    other = _basis(moved)
    a = hks_field(basis, time_grid(basis.eigenvalues), "integral").values
    b = hks_field(other, time_grid(other.eigenvalues), "integral").values
    assert np.abs(a - b).max() <= 1e-6


def test_columns_decay_towards_uniform(sphere_basis):
    # larger t smooths the signature: the unnormalised HKS decreases monotonically
    g = time_grid(sphere_basis.eigenvalues)
    k = unnormalized_hks(sphere_basis, g.values)
    assert np.all(np.diff(k, axis=1) <= 1e-15)


def test_requires_two_pairs():
    b = SpectralBasis(np.array([0.0]), np.full((4, 1), 0.5), "P1", 4)
    with pytest.raises(ValueError):
        hks_field(b, time_grid([0.0, 1.0, 2.0]))


def test_csv_export(tmp_path, box):
    _, basis = box
    g = time_grid(basis.eigenvalues, K=5)
    field = hks_field(basis, g)
    path = tmp_path / "hks.csv"
    write_hks_csv(field, [3, 9], path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["vertex", "t", "hks"]
    assert len(rows) == 11
    assert rows[1][0] == "3" and float(rows[1][1]) == g.values[0]
    assert float(rows[7][2]) == field.values[9, 1]
