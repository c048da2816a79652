"""Triangle mesh container, ASCII mesh I/O and connectivity helpers."""
from __future__ import annotations

import hashlib
import os
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import EmptySubmesh, MeshWarning, ParseError, ValidationError

AREA_TOL_FACTOR = 1e-12

FLAG_COLOR = (255, 255, 0)
BASE_COLOR = (68, 1, 84)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Immutable triangle mesh.

    ``vertices`` is an (n, 3) float array, ``faces`` an (m, 3) array of
    0-based vertex indices. The constructor validates the mesh; pass
    ``validate=False`` only for data already known to be valid.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: Optional[str] = None
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, copy=True).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64, copy=True).reshape(-1, 3)
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.validate:
            _validate(v, f)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @cached_property
    def bbox_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    @cached_property
    def face_areas(self) -> np.ndarray:
        return _face_areas(self.vertices, self.faces)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (e, 2) index pairs, lexicographic order."""
        return _unique_edges(self.faces)[0]

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted unit vertex normals (zero for unreferenced vertices)."""
        v, f = self.vertices, self.faces
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        vn = np.zeros_like(v)
        for k in range(3):
            np.add.at(vn, f[:, k], fn)
        norm = np.linalg.norm(vn, axis=1)
        norm[norm == 0] = 1.0
        return vn / norm[:, None]

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Binary symmetric vertex adjacency matrix."""
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.faces).tobytes())
        return h.hexdigest()

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "TriangleMesh":
        """Copy with vertices mapped by ``x -> R x + t``; connectivity unchanged."""
        v = self.vertices @ np.asarray(rotation, dtype=float).T + np.asarray(translation, dtype=float)
        return TriangleMesh(v, self.faces, name=self.name, validate=False)


@dataclass(frozen=True)
class SubmeshResult:
    mesh: TriangleMesh
    parent_index: np.ndarray


def _face_areas(v, f):
    if len(f) == 0:
        return np.zeros(0)
    cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return 0.5 * np.linalg.norm(cr, axis=1)


def _unique_edges(faces):
    """Return (unique sorted edges, inverse index per half-edge, directed half-edges)."""
    he = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    und = np.sort(he, axis=1)
    uniq, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    return uniq, inv.reshape(-1), he, counts


def _validate(v, f):
    n = len(v)
    if not np.all(np.isfinite(v)):
        bad = np.nonzero(~np.isfinite(v).all(axis=1))[0]
        raise ValidationError(f"non-finite vertex coordinates at {bad[:10].tolist()}", bad)
    if len(f) == 0:
        return
    out = np.nonzero(((f < 0) | (f >= n)).any(axis=1))[0]
    if len(out):
        i = int(out[0])
        raise ValidationError(
            f"face {i} has vertex index out of range [0, {n}): {f[i].tolist()}", out)
    rep = np.nonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))[0]
    if len(rep):
        raise ValidationError(f"faces with repeated vertex index: {rep[:10].tolist()}", rep)
    diag = float(np.linalg.norm(v[f].reshape(-1, 3).max(0) - v[f].reshape(-1, 3).min(0)))
    tol = AREA_TOL_FACTOR * diag ** 2
    small = np.nonzero(_face_areas(v, f) <= tol)[0]
    if len(small):
        raise ValidationError(f"degenerate faces (area <= {tol:.3g}): {small[:10].tolist()}", small)
    uniq, inv, he, counts = _unique_edges(f)
    nm = np.nonzero(counts > 2)[0]
    if len(nm):
        raise ValidationError(
            f"non-manifold edges shared by more than 2 faces: {uniq[nm[:10]].tolist()}", nm)
    # consistent orientation: an interior edge must be traversed once in each direction
    _, dcounts = np.unique(he, axis=0, return_counts=True)
    if np.any(dcounts > 1):
        warnings.warn("mesh is not consistently oriented", MeshWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# I/O


def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.upper().replace("-ASCII", "")
        if fmt not in ("OFF", "OBJ", "PLY"):
            raise ParseError(f"unsupported mesh format {fmt!r}")
        return fmt
    ext = os.path.splitext(str(path))[1].lower()
    try:
        return {".off": "OFF", ".obj": "OBJ", ".ply": "PLY"}[ext]
    except KeyError:
        raise ParseError(f"cannot infer mesh format from extension {ext!r}") from None


def _tokens(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def _read_off(text):
    lines = list(_tokens(text))
    if not lines or not lines[0].upper().startswith("OFF"):
        raise ParseError("missing OFF header")
    head = lines[0][3:].split()
    body = lines[1:]
    if not head:
        head, body = body[0].split(), body[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
        verts = [[float(x) for x in body[i].split()[:3]] for i in range(nv)]
        faces = []
        for line in body[nv:nv + nf]:
            vals = [int(x) for x in line.split()]
            k = vals[0]
            idx = vals[1:1 + k]
            if k < 3 or len(idx) != k:
                raise ParseError(f"bad face record {line!r}")
            # fan triangulation of polygons
            faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, k - 1))
    except (IndexError, ValueError) as exc:
        raise ParseError(f"malformed OFF file: {exc}") from exc
    if len(verts) != nv or any(len(p) != 3 for p in verts):
        raise ParseError("OFF vertex block truncated")
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_obj(text):
    verts, faces = [], []
    try:
        for line in _tokens(text):
            parts = line.split()
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ParseError(f"bad face record {line!r}")
                faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, len(idx) - 1))
    except ValueError as exc:
        raise ParseError(f"malformed OBJ file: {exc}") from exc
    if any(len(p) != 3 for p in verts):
        raise ParseError("OBJ vertex with fewer than 3 coordinates")
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_ply(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing PLY magic")
    elements = []  # (name, count, [props])
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise ParseError("only ASCII PLY is supported")
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before element")
            elements[-1][2].append(parts[1:])
        elif parts[0] == "end_header":
            break
    else:
        raise ParseError("missing end_header")
    body = [ln for ln in lines[i:] if ln.strip()]
    pos = 0
    verts = faces = None
    try:
        for name, count, props in elements:
            block = body[pos:pos + count]
            if len(block) != count:
                raise ParseError(f"PLY element {name!r} truncated")
            pos += count
            if name == "vertex":
                names = [p[-1] for p in props]
                cols = [names.index(c) for c in ("x", "y", "z")]
                verts = np.array([[float(ln.split()[c]) for c in cols] for ln in block],
                                 dtype=float).reshape(-1, 3)
            elif name == "face":
                if props[0][0] != "list":
                    raise ParseError("face element must start with a list property")
                tri = []
                for ln in block:
                    vals = [int(x) for x in ln.split()]
                    k = vals[0]
                    idx = vals[1:1 + k]
                    tri.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, k - 1))
                faces = np.array(tri, dtype=np.int64).reshape(-1, 3)
    except ValueError as exc:
        raise ParseError(f"malformed PLY file: {exc}") from exc
    if verts is None:
        raise ParseError("PLY has no vertex element")
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int64)
    return verts, faces


_READERS = {"OFF": _read_off, "OBJ": _read_obj, "PLY": _read_ply}


def load_mesh(path, format: Optional[str] = None) -> TriangleMesh:
    """Read an ASCII OFF, OBJ or PLY file into a validated mesh.

    Polygonal faces are fan-triangulated. Only positions and faces are read.
    Raises ``ParseError`` for malformed files and ``ValidationError`` for
    invalid geometry; a missing file raises ``FileNotFoundError``.
    """
    fmt = _infer_format(path, format)
    with open(path, "r") as fh:
        text = fh.read()
    v, f = _READERS[fmt](text)
    return TriangleMesh(v, f, name=os.path.splitext(os.path.basename(str(path)))[0])


def save_off(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write("OFF\n%d %d 0\n" % (mesh.n_vertices, mesh.n_faces))
        for p in mesh.vertices:
            fh.write("%.17g %.17g %.17g\n" % tuple(p))
        for t in mesh.faces:
            fh.write("3 %d %d %d\n" % tuple(t))


def save_diagnosis_mesh(mesh: TriangleMesh, scalar, flags=None, path=None) -> None:
    """Write an ASCII PLY carrying ``scalar`` as per-vertex ``quality``.

    When ``flags`` is given every vertex also gets an RGB colour: yellow for
    flagged vertices, dark purple otherwise. Coordinates and quality are
    printed with 9 significant digits (float32 round-trip precision).
    """
    scalar = np.asarray(scalar, dtype=float).reshape(-1)
    if scalar.shape[0] != mesh.n_vertices:
        raise ValueError(f"scalar has length {scalar.shape[0]}, mesh has {mesh.n_vertices} vertices")
    if flags is not None:
        flags = np.asarray(flags, dtype=bool).reshape(-1)
        if flags.shape[0] != mesh.n_vertices:
            raise ValueError("flag mask length does not match vertex count")
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property float x",
        "property float y",
        "property float z",
        "property float quality",
    ]
    if flags is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    out = ["\n".join(header)]
    for i, (p, s) in enumerate(zip(mesh.vertices, scalar)):
        line = "%.9g %.9g %.9g %.9g" % (p[0], p[1], p[2], s)
        if flags is not None:
            line += " %d %d %d" % (FLAG_COLOR if flags[i] else BASE_COLOR)
        out.append(line)
    out.extend("3 %d %d %d" % tuple(t) for t in mesh.faces)
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def read_ply_quality(path) -> np.ndarray:
    """Return the per-vertex ``quality`` channel of an ASCII PLY file."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    props, n, i = [], 0, 1
    in_vertex = False
    while lines[i].strip() != "end_header":
        parts = lines[i].split()
        if parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            props.append(parts[-1])
        i += 1
    col = props.index("quality")
    return np.array([float(lines[i + 1 + k].split()[col]) for k in range(n)])


# ---------------------------------------------------------------------------
# connectivity


def connected_components(mesh: TriangleMesh) -> np.ndarray:
    """Edge-connectivity labels 0..c-1, numbered by lowest member vertex."""
    _, labels = csgraph.connected_components(mesh.adjacency, directed=False)
    # relabel so that components are ordered by their first vertex
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return remap[labels]


def extract_submesh(mesh: TriangleMesh, keep) -> SubmeshResult:
    """Keep the faces whose three vertices are all selected.

    Vertices are reindexed densely in parent order; selected vertices that
    end up in no surviving face are dropped.
    """
    keep = np.asarray(keep, dtype=bool).reshape(-1)
    if keep.shape[0] != mesh.n_vertices:
        raise ValueError("mask length does not match vertex count")
    fmask = keep[mesh.faces].all(axis=1)
    if not fmask.any():
        raise EmptySubmesh("no complete face survives the vertex mask")
    faces = mesh.faces[fmask]
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[faces.reshape(-1)] = True
    parent = np.nonzero(used)[0]
    remap = -np.ones(mesh.n_vertices, dtype=np.int64)
    remap[parent] = np.arange(len(parent))
    sub = TriangleMesh(mesh.vertices[parent], remap[faces], name=mesh.name, validate=False)
    return SubmeshResult(sub, parent)


def largest_component(mesh: TriangleMesh) -> SubmeshResult:
    """Restrict to the connected component with the most vertices (ties: lowest label)."""
    labels = connected_components(mesh)
    counts = np.bincount(labels)
    if len(counts) == 1:
        return SubmeshResult(mesh, np.arange(mesh.n_vertices))
    return extract_submesh(mesh, labels == int(np.argmax(counts)))
