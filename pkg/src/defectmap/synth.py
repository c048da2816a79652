"""Deterministic synthetic parts: nominal shapes, noisy replicates and defects.

Random streams come from numpy's Philox counter-based generator, so a
given seed gives identical meshes on every platform.

Lengths in :class:`DefectSpec` (radius, depth) and the noise level are
fractions of the nominal bounding-box diagonal. The defect centre is given
in parametric box coordinates, ``(0, 0, 0)`` and ``(1, 1, 1)`` being the
opposite corners of the nominal bounding box, and is snapped to the closest
nominal vertex so that it always lies on the surface.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from .errors import ResolutionUnachievable
from .mesh import TriangleMesh

PRIMITIVES = ("sphere", "box", "toothed-block", "ellipsoid", "strip")
DEFECT_KINDS = ("chip", "notch", "bump")

ELLIPSOID_AXES = (2.0, 1.0, 0.6)
LATTICE_UNIT = 0.1

# occupied unit cells (x0, x1, y0, y1, z0, z1) in lattice units
_BOX_CELLS = [(0, 6, 0, 4, 0, 3)]
_TOOTHED_CELLS = [
    (0, 10, 0, 4, 0, 3),
    (1, 2, 0, 4, 3, 4),
    (4, 5, 0, 3, 3, 5),
    (7, 9, 1, 4, 3, 4),
]


# default defect sites, parametric; the toothed-block site is the outer top
# corner of the third tooth
DEFAULT_SITES = {
    "sphere": (1.0, 0.5, 0.5),
    "ellipsoid": (1.0, 0.5, 0.5),
    "box": (1.0, 0.0, 1.0),
    "toothed-block": (0.9, 0.25, 0.8),
    "strip": (0.75, 0.5, 0.5),
}


@dataclass(frozen=True)
class DefectSpec:
    kind: str = "chip"
    center: Optional[Tuple[float, float, float]] = None  # None: primitive default site
    radius: float = 0.08
    depth: float = 0.03


@dataclass(frozen=True)
class PartSpec:
    primitive: str = "toothed-block"
    resolution: int = 1500
    defect: Optional[DefectSpec] = None
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise ValueError(f"unknown primitive {self.primitive!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.defect is not None:
            if self.defect.kind not in DEFECT_KINDS:
                raise ValueError(f"unknown defect kind {self.defect.kind!r}")
            if self.defect.radius <= 0 or self.defect.depth <= 0:
                raise ValueError("defect radius and depth must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PartSpec":
        data = dict(data)
        defect = data.pop("defect", None)
        if defect is not None:
            center = defect.get("center")
            defect = DefectSpec(**{**defect, "center": None if center is None else tuple(center)})
        return cls(defect=defect, **data)


@dataclass(frozen=True)
class GroundTruth:
    correspondence: Optional[np.ndarray]
    defect_mask: np.ndarray
    defect_center: Optional[np.ndarray] = None
    defect_radius: float = 0.0

    def to_json(self) -> str:
        return json.dumps({
            "correspondence": None if self.correspondence is None else self.correspondence.tolist(),
            "defectMask": np.nonzero(self.defect_mask)[0].tolist(),
            "defectCenter": None if self.defect_center is None else self.defect_center.tolist(),
            "defectRadius": self.defect_radius,
        }, sort_keys=True)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


# ---------------------------------------------------------------------------
# nominal shapes


def fibonacci_sphere(n: int) -> TriangleMesh:
    """Unit sphere through ``n`` Fibonacci-lattice points (convex hull triangulation)."""
    if n < 4:
        raise ResolutionUnachievable("a sphere needs at least 4 vertices")
    i = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n)
    azim = np.pi * (1.0 + 5 ** 0.5) * i
    pts = np.column_stack([np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar), np.cos(polar)])
    faces = ConvexHull(pts).simplices.astype(np.int64)
    nrm = np.cross(pts[faces[:, 1]] - pts[faces[:, 0]], pts[faces[:, 2]] - pts[faces[:, 0]])
    flip = np.einsum("ij,ij->i", nrm, pts[faces].mean(axis=1)) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    # canonical face order: independent of qhull's internal ordering
    faces = faces[np.lexsort(np.sort(faces, axis=1).T[::-1])]
    return TriangleMesh(pts, faces, name="sphere")


def _cells_area(cells):
    occ = _occupancy(cells)
    total = 0
    for axis in range(3):
        total += np.count_nonzero(np.diff(occ.astype(np.int8), axis=axis))
    return total


def _occupancy(cells):
    hi = np.max(np.array(cells)[:, [1, 3, 5]], axis=0)
    # one empty layer on every side; cell (i, j, k) lives at (i+1, j+1, k+1)
    occ = np.zeros(tuple(int(h) + 2 for h in hi), dtype=bool)
    for x0, x1, y0, y1, z0, z1 in cells:
        occ[x0 + 1:x1 + 1, y0 + 1:y1 + 1, z0 + 1:z1 + 1] = True
    return occ


def lattice_surface(cells, s: int, unit: float = LATTICE_UNIT) -> TriangleMesh:
    """Boundary of a union of unit cubes, each unit square split into an s x s grid.

    Every small square is cut along the diagonal through its lowest lattice
    corner, so the triangulation is invariant under the central symmetries
    of the cell union.
    """
    occ = _occupancy(cells)
    index = {}
    verts: List[Tuple[int, int, int]] = []
    faces: List[Tuple[int, int, int]] = []

    def vid(p):
        key = tuple(p)
        j = index.get(key)
        if j is None:
            j = len(verts)
            index[key] = j
            verts.append(key)
        return j

    for axis in range(3):
        u_ax, v_ax = [a for a in range(3) if a != axis]
        d = np.diff(occ.astype(np.int8), axis=axis)
        # d == 1: empty -> filled going +axis, outward normal is -axis
        for sign in (1, -1):
            for idx in zip(*np.nonzero(d == sign)):
                base = np.array(idx)
                base[axis] += 1  # plane position in padded coordinates
                base -= 1        # undo padding offset
                for a in range(s):
                    for b in range(s):
                        corners = []
                        for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                            p = base * s
                            p[u_ax] += a + du
                            p[v_ax] += b + dv
                            corners.append(vid(p))
                        c0, c1, c2, c3 = corners
                        # (u, v, axis) is right-handed for axis 0 and 2, left-handed for 1
                        outward_pos = (sign == -1)
                        flip = outward_pos != (axis != 1)
                        if flip:
                            faces.append((c0, c2, c1))
                            faces.append((c0, c3, c2))
                        else:
                            faces.append((c0, c1, c2))
                            faces.append((c0, c2, c3))
    v = np.array(verts, dtype=float) * (unit / s)
    return TriangleMesh(v, np.array(faces, dtype=np.int64))


def flat_strip(resolution: int, length: float = 4.0, width: float = 1.0) -> TriangleMesh:
    ny = max(1, int(round(np.sqrt(resolution * width / length))) - 1)
    nx = max(1, int(round(ny * length / width)))
    if (nx + 1) * (ny + 1) < 4:
        raise ResolutionUnachievable("strip resolution too small")
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, width, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    v = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    f = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriangleMesh(v, f, name="strip")


def nominal_mesh(primitive: str, resolution: int) -> TriangleMesh:
    """Noise-free, defect-free mesh of a primitive at roughly ``resolution`` vertices."""
    if resolution < 4:
        raise ResolutionUnachievable(f"resolution {resolution} is below the 4-vertex minimum")
    if primitive == "sphere":
        return fibonacci_sphere(resolution)
    if primitive == "ellipsoid":
        m = fibonacci_sphere(resolution)
        return TriangleMesh(m.vertices * np.array(ELLIPSOID_AXES), m.faces, name="ellipsoid",
                            validate=False)
    if primitive == "strip":
        return flat_strip(resolution)
    cells = _BOX_CELLS if primitive == "box" else _TOOTHED_CELLS
    s = max(1, int(round(np.sqrt(resolution / _cells_area(cells)))))
    m = lattice_surface(cells, s)
    if resolution > 0 and m.n_vertices > 4 * resolution:
        raise ResolutionUnachievable(
            f"{primitive} needs at least {m.n_vertices} vertices, asked for {resolution}")
    return TriangleMesh(m.vertices, m.faces, name=primitive, validate=False)


# ---------------------------------------------------------------------------
# perturbations


def defect_center(mesh: TriangleMesh, defect: DefectSpec, primitive: Optional[str] = None):
    """Surface vertex closest to the parametric defect centre."""
    site = defect.center
    if site is None:
        site = DEFAULT_SITES.get(primitive or mesh.name, (1.0, 0.5, 0.5))
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    point = lo + np.asarray(site, dtype=float) * (hi - lo)
    return v[int(np.argmin(np.linalg.norm(v - point, axis=1)))].copy()


def defect_displacement(mesh: TriangleMesh, defect: DefectSpec, primitive: Optional[str] = None):
    """Per-vertex displacement vectors of a defect and the mask of moved vertices."""
    v = mesh.vertices
    diag = mesh.bbox_diagonal
    center = defect_center(mesh, defect, primitive)
    radius = defect.radius * diag
    depth = defect.depth * diag
    dist = np.linalg.norm(v - center, axis=1)
    mask = dist < radius
    r = np.where(mask, dist / radius, 1.0)
    if defect.kind == "notch":
        profile = 1.0 - r
    else:
        profile = (1.0 - r ** 2) ** 2
    direction = 1.0 if defect.kind == "bump" else -1.0
    disp = direction * depth * profile[:, None] * mesh.vertex_normals
    disp[~mask] = 0.0
    return disp, mask, center, radius


def generate(spec: PartSpec) -> Tuple[TriangleMesh, GroundTruth]:
    """Build the mesh described by ``spec`` plus its ground truth.

    Vertices keep the nominal mesh numbering, so the correspondence to the
    nominal mesh at the same resolution is the identity.
    """
    nominal = nominal_mesh(spec.primitive, spec.resolution)
    v = nominal.vertices.copy()
    mask = np.zeros(nominal.n_vertices, dtype=bool)
    center, radius = None, 0.0
    if spec.defect is not None:
        disp, mask, center, radius = defect_displacement(nominal, spec.defect, spec.primitive)
        v = v + disp
    if spec.noise_sigma > 0:
        sigma = spec.noise_sigma * nominal.bbox_diagonal
        normals = nominal.vertex_normals
        if spec.defect is not None:
            normals = TriangleMesh(v, nominal.faces, validate=False).vertex_normals
        eps = rng_for(spec.seed).standard_normal(nominal.n_vertices)
        v = v + sigma * eps[:, None] * normals
    name = spec.primitive if spec.defect is None else f"{spec.primitive}-{spec.defect.kind}"
    mesh = TriangleMesh(v, nominal.faces, name=name)
    truth = GroundTruth(np.arange(nominal.n_vertices), mask, center, radius)
    return mesh, truth


def phase1_batch(spec: PartSpec, count: int, base_seed: int) -> List[TriangleMesh]:
    """``count`` in-control replicates with seeds ``base_seed .. base_seed + count - 1``."""
    if spec.defect is not None:
        raise ValueError("Phase-I replicates must not carry a defect")
    return [generate(dataclasses.replace(spec, seed=base_seed + i))[0] for i in range(count)]


def nearest_vertex_map(source: TriangleMesh, target: TriangleMesh) -> np.ndarray:
    """Ground-truth map for independently meshed copies of the same surface."""
    return cKDTree(target.vertices).query(source.vertices)[1].astype(np.int64)
