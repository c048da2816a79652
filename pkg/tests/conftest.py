import numpy as np
import pytest

from defectmap.mesh import TriangleMesh
from defectmap.synth import fibonacci_sphere, flat_strip, nominal_mesh


def tetrahedron():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriangleMesh(v, f, name="tetra")


def unit_cube():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    f = np.array([
        [0, 1, 3], [0, 3, 2],  # x = 0
        [4, 6, 7], [4, 7, 5],  # x = 1
        [0, 4, 5], [0, 5, 1],  # y = 0
        [2, 3, 7], [2, 7, 6],  # y = 1
        [0, 2, 6], [0, 6, 4],  # z = 0
        [1, 5, 7], [1, 7, 3],  # z = 1
    ])
    return TriangleMesh(v, f, name="cube")


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def tetra():
    return tetrahedron()


@pytest.fixture
def cube():
    return unit_cube()


@pytest.fixture(scope="session")
def sphere_600():
    return fibonacci_sphere(600)


@pytest.fixture(scope="session")
def toothed_small():
    return nominal_mesh("toothed-block", 500)


@pytest.fixture(scope="session")
def strip():
    return flat_strip(400)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion at the end of the run

CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    entry = CRITERIA.setdefault(number, {"title": title, "status": status, "detail": ""})
    if status != "PASS" or entry["status"] == "PASS":
        entry["status"] = status
    entry["detail"] = "; ".join(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        e = CRITERIA[number]
        line = f"criterion {number:>2}: {e['status']}  {e['title']}"
        if e["detail"]:
            line += f"  [{e['detail']}]"
        terminalreporter.write_line(line)
