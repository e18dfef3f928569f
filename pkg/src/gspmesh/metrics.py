"""Reconstruction quality measures and experiment reports."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse

from .mesh import build_edges, face_normals

DB_FLOOR = -200.0


def _coords(x):
    return np.asarray(getattr(x, "vertices", x), dtype=np.float64)


def geometric_laplacian(mesh, edges=None):
    """Sparse ``GL = I - W`` with inverse-distance neighbor weights from ``mesh``.

    Isolated vertices keep ``GL(v_i) = v_i``.
    """
    edges = build_edges(mesh) if edges is None else edges
    n = mesh.n_vertices
    rows = np.repeat(np.arange(n), edges.degrees)
    d = np.linalg.norm(mesh.vertices[rows] - mesh.vertices[edges.indices], axis=1)
    with np.errstate(divide="ignore"):
        w = np.where(d > 0, 1.0 / d, 0.0)
    wsum = np.bincount(rows, weights=w, minlength=n)
    w = np.divide(w, wsum[rows], out=np.zeros_like(w), where=wsum[rows] > 0)
    W = sparse.csr_matrix((w, edges.indices, edges.indptr), shape=(n, n))
    return (sparse.identity(n, format="csr") - W).tocsr()


def nmsve(original, reconstructed, db=True, edges=None):
    """Normalized mean square visual error.

    ``(||v - v'|| + ||GL(v) - GL(v')||) / (2n)`` with both vectors of
    length ``3n`` and ``GL`` built once from the original geometry.

    Returns
    -------
    float
        In dB (``10 log10``, floored at -200 dB) when ``db`` is true.
    """
    v = _coords(original)
    w = _coords(reconstructed)
    if v.shape != w.shape:
        raise ValueError("meshes must have the same vertex count")
    gl = geometric_laplacian(original, edges)
    diff = v - w
    value = (np.linalg.norm(diff) + np.linalg.norm(gl @ diff)) / (2.0 * v.shape[0])
    if not db:
        return float(value)
    return to_db(value)


def to_db(value):
    if value <= 0:
        return DB_FLOOR
    return max(DB_FLOOR, 10.0 * math.log10(value))


def _normals(x, faces=None):
    if hasattr(x, "faces"):
        return face_normals(x)
    return np.asarray(x, dtype=np.float64)


def _valid(a, b):
    return (np.linalg.norm(a, axis=1) > 0) & (np.linalg.norm(b, axis=1) > 0)


def mnd(reference_normals, test_normals):
    """Mean normal difference: mean over faces of ``1 - n_ref . n_test``.

    Faces with a zero (degenerate) normal in either field are skipped.
    """
    a, b = _normals(reference_normals), _normals(test_normals)
    if a.shape != b.shape:
        raise ValueError("normal fields must have equal face counts")
    ok = _valid(a, b)
    return float(np.mean(1.0 - np.einsum("ij,ij->i", a[ok], b[ok])))


def mean_angle_theta(reference_normals, test_normals):
    """Mean angle in degrees between corresponding unit normals."""
    a, b = _normals(reference_normals), _normals(test_normals)
    if a.shape != b.shape:
        raise ValueError("normal fields must have equal face counts")
    ok = _valid(a, b)
    cos = np.clip(np.einsum("ij,ij->i", a[ok], b[ok]), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)).mean())


def operator_image(laplacian, size=100, delta_rel=None):
    """Leading ``size x size`` block of the shifted inverse ``(L + delta I)^-1``.

    ``delta_rel`` defaults to the pipeline's relative shift.
    """
    from . import spectral

    rel = spectral.DEFAULT_SHIFT if delta_rel is None else delta_rel
    L = laplacian.matrix.toarray()
    n = L.shape[0]
    if size > n:
        raise ValueError(f"image size {size} exceeds operator size {n}")
    delta = spectral.default_shift(laplacian, rel)
    R = np.linalg.solve(L + delta * np.eye(n), np.eye(n)[:, :size])
    return R[:size, :size]


def laplacian_coherence_mse(images, reference_mean):
    """Elementwise MSE between operator images and a reference mean image.

    ``images`` is one matrix or a list; for a list the MSEs are averaged.
    """
    ref = np.asarray(reference_mean, dtype=np.float64)
    single = isinstance(images, np.ndarray) and images.ndim == 2
    items = [images] if single else list(images)
    out = []
    for im in items:
        im = np.asarray(im, dtype=np.float64)
        if im.shape != ref.shape:
            raise ValueError(f"image shape {im.shape} differs from reference {ref.shape}")
        out.append(float(np.mean((im - ref) ** 2)))
    return out[0] if single else float(np.mean(out))


def coherence_matrix(images_by_model, probe_index=0):
    """Table of MSE between one probe image per model (rows) and each model's mean image.

    Parameters
    ----------
    images_by_model : dict of name -> list of 2-D arrays

    Returns
    -------
    names : list of str
    table : ndarray, shape (m, m)
    """
    names = list(images_by_model)
    means = {k: np.mean(np.stack(v), axis=0) for k, v in images_by_model.items()}
    table = np.empty((len(names), len(names)))
    for i, row in enumerate(names):
        probe = images_by_model[row][probe_index]
        for j, col in enumerate(names):
            table[i, j] = laplacian_coherence_mse(probe, means[col])
    return names, table


def boundary_mask(submeshes, n):
    counts = np.zeros(n, dtype=np.int64)
    for s in submeshes:
        counts[s.global_indices] += 1
    return counts >= 2


def boundary_error_stats(mesh, reconstruction, submeshes=None, boundary=None):
    """Standard deviation of per-vertex error on interior and boundary vertices.

    Boundary vertices are those shared by two or more submeshes unless an
    explicit ``boundary`` mask is given.

    Returns
    -------
    (float, float or None)
        Interior and boundary std; the boundary value is None when no
        vertex qualifies (a single block).
    """
    v, w = _coords(mesh), _coords(reconstruction)
    err = np.linalg.norm(v - w, axis=1)
    if boundary is None:
        if submeshes is None:
            raise ValueError("need submeshes or a boundary mask")
        boundary = boundary_mask(submeshes, v.shape[0])
    boundary = np.asarray(boundary, dtype=bool)
    interior = err[~boundary]
    b = err[boundary]
    return (float(interior.std()) if interior.size else 0.0,
            float(b.std()) if b.size else None)


@dataclass
class MetricsReport:
    """One experiment run.  ``timings`` maps stage name to seconds."""

    nmsve: float | None = None
    mnd: float | None = None
    theta: float | None = None
    bpv: float | None = None
    timings: dict = field(default_factory=dict)
    interior_std: float | None = None
    boundary_std: float | None = None
    label: str = ""

    def __post_init__(self):
        if any(t < 0 for t in self.timings.values()):
            raise ValueError("timings must be nonnegative")
        if self.theta is not None and not 0.0 <= self.theta <= 180.0:
            raise ValueError("theta must lie in [0, 180]")

    def row(self):
        d = asdict(self)
        timings = d.pop("timings")
        for k, t in sorted(timings.items()):
            d[f"time_{k}"] = t
        return d


REPORT_COLUMNS = ["label", "nmsve", "mnd", "theta", "bpv", "interior_std", "boundary_std"]


def evaluate(original, result, label="", timings=None, bpv=None, submeshes=None):
    """Metrics of ``result`` against the ground truth ``original`` (same connectivity)."""
    rep = MetricsReport(
        nmsve=nmsve(original, result),
        mnd=mnd(face_normals(original), face_normals(original, _coords(result))),
        theta=mean_angle_theta(face_normals(original), face_normals(original, _coords(result))),
        bpv=bpv, timings=dict(timings or {}), label=label)
    if submeshes is not None:
        rep.interior_std, rep.boundary_std = boundary_error_stats(original, result, submeshes)
    return rep


def write_reports_csv(reports, path):
    """CSV with the fixed report columns followed by ``time_<stage>`` columns."""
    rows = [r.row() for r in reports]
    stages = sorted({k for r in rows for k in r if k.startswith("time_")})
    cols = REPORT_COLUMNS + stages
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})
