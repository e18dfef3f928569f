"""Triangle mesh container, OBJ/OFF input/output and face geometry."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import sparse


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
        Vertex coordinates.
    faces : array_like, shape (m, 3)
        Zero-based vertex indices of each triangle.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64)
        f = _frozen(self.faces, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must have shape (m, 3), got {f.shape}")
        if v.shape[0] < 3:
            raise ValueError("a mesh needs at least 3 vertices")
        if f.shape[0] < 1:
            raise ValueError("a mesh needs at least one face")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise ValueError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("degenerate face with repeated vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def with_vertices(self, vertices):
        """Return a mesh with the same connectivity and new coordinates."""
        return Mesh(vertices, self.faces)

    def bounding_box_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))


@dataclass(frozen=True, eq=False)
class EdgeSet:
    """Undirected vertex adjacency in CSR layout.

    ``indices[indptr[i]:indptr[i + 1]]`` is the ascending neighbor list N(i).
    """

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_vertices(self):
        return self.indptr.shape[0] - 1

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @property
    def degrees(self):
        return np.diff(self.indptr)

    def pairs(self):
        """Unique edges as an (E, 2) array with ``i < j``."""
        rows = np.repeat(np.arange(self.n_vertices), self.degrees)
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    def adjacency(self):
        """Binary symmetric adjacency as a CSR matrix."""
        n = self.n_vertices
        data = np.ones(self.indices.shape[0])
        return sparse.csr_matrix((data, self.indices, self.indptr), shape=(n, n))


@dataclass(frozen=True, eq=False)
class FaceGeometry:
    """Per-face centroids, unit normals and areas.

    Zero-area faces carry a ``(0, 0, 0)`` normal and are marked in
    ``degenerate``.
    """

    centroids: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    degenerate: np.ndarray


def build_edges(mesh):
    """Derive the undirected edge set from the face list.

    Returns
    -------
    EdgeSet
        Symmetric, self-loop free neighbor lists sorted ascending.
    """
    f = mesh.faces
    i = np.concatenate([f[:, 0], f[:, 1], f[:, 2], f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 1], f[:, 2], f[:, 0], f[:, 0], f[:, 1], f[:, 2]])
    n = mesh.n_vertices
    a = sparse.csr_matrix((np.ones(i.shape[0]), (i, j)), shape=(n, n))
    a.sum_duplicates()
    a.sort_indices()
    return EdgeSet(_frozen(a.indptr, np.int64), _frozen(a.indices, np.int64))


def face_geometry(mesh, vertices=None):
    """Centroids, outward unit normals and areas of every face.

    The normal of face ``(a, b, c)`` is ``(v_b - v_a) x (v_c - v_a)``
    normalized, so it follows the winding order.
    """
    v = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
    f = mesh.faces
    v0, v1, v2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    centroids = (v0 + v1 + v2) / 3.0
    cross = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(cross, axis=1)
    degenerate = norm <= np.finfo(np.float64).tiny
    normals = np.zeros_like(cross)
    ok = ~degenerate
    normals[ok] = cross[ok] / norm[ok, None]
    return FaceGeometry(centroids, normals, 0.5 * norm, degenerate)


def face_normals(mesh, vertices=None):
    return face_geometry(mesh, vertices).normals


def face_adjacency(mesh, rings=1):
    """Faces sharing at least one vertex, including the face itself.

    Parameters
    ----------
    rings : int
        Neighborhood depth; ``rings=2`` adds the 1-ring of every 1-ring face.

    Returns
    -------
    scipy.sparse.csr_matrix
        Boolean (m, m) pattern.
    """
    m, n = mesh.n_faces, mesh.n_vertices
    rows = np.repeat(np.arange(m), 3)
    inc = sparse.csr_matrix((np.ones(3 * m), (rows, mesh.faces.ravel())), shape=(m, n))
    adj = (inc @ inc.T).astype(bool).tocsr()
    step = adj
    for _ in range(rings - 1):
        adj = (adj @ step).astype(bool).tocsr()
    adj.sort_indices()
    return adj


def vertex_face_counts(mesh):
    return np.bincount(mesh.faces.ravel(), minlength=mesh.n_vertices)


def mean_edge_length(mesh, edges=None):
    edges = build_edges(mesh) if edges is None else edges
    p = edges.pairs()
    v = mesh.vertices
    return float(np.linalg.norm(v[p[:, 0]] - v[p[:, 1]], axis=1).mean())


def add_gaussian_noise(mesh, sigma, seed=0):
    """Perturb every coordinate with i.i.d. zero-mean Gaussian noise.

    The standard deviation is ``sigma`` times the mean edge length so the
    same ``sigma`` means the same relative corruption on any model scale.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return Mesh(mesh.vertices, mesh.faces)
    rng = np.random.default_rng(seed)
    scale = sigma * mean_edge_length(mesh)
    return mesh.with_vertices(mesh.vertices + rng.normal(0.0, scale, mesh.vertices.shape))


# ---------------------------------------------------------------------------
# file formats

def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = os.path.splitext(str(path))[1].lower().lstrip(".")
    if fmt not in ("obj", "off"):
        raise MeshFormatError(f"unsupported mesh format {fmt!r}", path)
    return fmt


def _parse_obj(lines, path):
    verts, faces = [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "v":
            if len(tok) < 4:
                raise MeshFormatError("vertex line needs 3 coordinates", path, lineno)
            try:
                verts.append([float(t) for t in tok[1:4]])
            except ValueError:
                raise MeshFormatError("malformed vertex coordinate", path, lineno) from None
        elif tok[0] == "f":
            if len(tok) != 4:
                raise MeshFormatError("only triangular faces are supported", path, lineno)
            idx = []
            for t in tok[1:]:
                try:
                    k = int(t.split("/", 1)[0])
                except ValueError:
                    raise MeshFormatError("malformed face index", path, lineno) from None
                # negative indices count back from the last vertex read so far
                k = k - 1 if k > 0 else len(verts) + k
                if not 0 <= k < len(verts):
                    raise MeshFormatError(f"face index {t} out of range", path, lineno)
                idx.append(k)
            faces.append(idx)
    return verts, faces


def _parse_off(lines, path):
    content = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            content.append((lineno, line))
    if not content or not content[0][1].startswith("OFF"):
        raise MeshFormatError("missing OFF header", path, content[0][0] if content else 1)
    lineno, header = content[0]
    rest = header[3:].split()
    pos = 1
    if not rest:
        if len(content) < 2:
            raise MeshFormatError("missing element counts", path, lineno)
        lineno, counts_line = content[1]
        rest = counts_line.split()
        pos = 2
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except (ValueError, IndexError):
        raise MeshFormatError("malformed element counts", path, lineno) from None
    if len(content) < pos + nv + nf:
        raise MeshFormatError("file ends before all elements were read", path, content[-1][0])
    verts = []
    for lineno, line in content[pos:pos + nv]:
        tok = line.split()
        try:
            verts.append([float(t) for t in tok[:3]])
        except ValueError:
            raise MeshFormatError("malformed vertex coordinate", path, lineno) from None
        if len(tok) < 3:
            raise MeshFormatError("vertex line needs 3 coordinates", path, lineno)
    faces = []
    for lineno, line in content[pos + nv:pos + nv + nf]:
        tok = line.split()
        try:
            ids = [int(t) for t in tok]
        except ValueError:
            raise MeshFormatError("malformed face line", path, lineno) from None
        if not ids or ids[0] != 3 or len(ids) < 4:
            raise MeshFormatError("only triangular faces are supported", path, lineno)
        tri = ids[1:4]
        if min(tri) < 0 or max(tri) >= nv:
            raise MeshFormatError("face index out of range", path, lineno)
        faces.append(tri)
    return verts, faces


def load_mesh(path, format=None):
    """Read an OBJ or OFF triangle mesh.

    Parameters
    ----------
    path : str or os.PathLike
    format : {"obj", "off"}, optional
        Inferred from the file extension when omitted.

    Raises
    ------
    MeshFormatError
        With the offending line number on malformed input.
    """
    fmt = _infer_format(path, format)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    verts, faces = (_parse_obj if fmt == "obj" else _parse_off)(lines, path)
    try:
        return Mesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                    np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise MeshFormatError(str(exc), path) from None


def save_mesh(mesh, path, format=None):
    """Write ``mesh`` as OBJ (1-based) or OFF; coordinates use round-trip precision."""
    fmt = _infer_format(path, format)
    v, f = mesh.vertices, mesh.faces
    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "obj":
            for p in v.tolist():
                fh.write(f"v {p[0]!r} {p[1]!r} {p[2]!r}\n")
            for t in (f + 1).tolist():
                fh.write(f"f {t[0]} {t[1]} {t[2]}\n")
        else:
            fh.write(f"OFF\n{v.shape[0]} {f.shape[0]} 0\n")
            for p in v.tolist():
                fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r}\n")
            for t in f.tolist():
                fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
