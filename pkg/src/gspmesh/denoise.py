"""Coarse-to-fine mesh denoising.

The coarse stage is the block spectral low-pass of :mod:`gspmesh.pipeline`.
The fine stage filters face normals with a bilateral kernel and then moves
vertices so that faces agree with the filtered normals.  Both fine stages
are Jacobi iterations: every update reads only the previous iterate.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import partition as part
from . import pipeline
from .mesh import Mesh, face_adjacency, face_geometry


class EnergyIncreaseError(RuntimeError):
    """A vertex-update pass increased the tangent-plane energy."""


@dataclass(frozen=True)
class BilateralParams:
    """Bilateral normal filter settings.

    ``sigma_s=None`` picks the mean centroid distance over 1-ring face pairs.
    """

    sigma_s: float | None = None
    sigma_r: float = 0.35
    normal_iterations: int = 5
    vertex_iterations: int = 10
    neighborhood: int = 1

    def __post_init__(self):
        if self.sigma_s is not None and not self.sigma_s > 0:
            raise ValueError("sigma_s must be positive")
        if not self.sigma_r > 0:
            raise ValueError("sigma_r must be positive")
        if self.normal_iterations < 1 or self.vertex_iterations < 1 or self.neighborhood < 1:
            raise ValueError("iteration counts and neighborhood must be positive")


# ---------------------------------------------------------------------------
# coarse stage

def coarse_denoise(mesh, config):
    """Block-wise spectral low-pass ``U_c U_c^T v`` stitched by weighted averaging."""
    return Mesh(pipeline.spectral_filter(mesh, config).vertices, mesh.faces)


# ---------------------------------------------------------------------------
# bilateral normal filter

def spatial_kernel(mi, mj, sigma_s):
    return np.exp(-np.sum((mi - mj) ** 2, axis=-1) / (2.0 * sigma_s ** 2))


def range_kernel(ni, nj, sigma_r):
    return np.exp(-np.sum((ni - nj) ** 2, axis=-1) / (2.0 * sigma_r ** 2))


def _pairs(adjacency, valid):
    adj = sparse.csr_matrix(adjacency)
    coo = adj.tocoo()
    keep = valid[coo.row] & valid[coo.col]
    return coo.row[keep], coo.col[keep], adj.shape[0]


def default_sigma_s(geometry, adjacency):
    """Mean centroid distance over neighboring (non-identical) face pairs."""
    i, j, _ = _pairs(adjacency, ~geometry.degenerate)
    off = i != j
    if not off.any():
        return 1.0
    d = np.linalg.norm(geometry.centroids[i[off]] - geometry.centroids[j[off]], axis=1)
    return float(d.mean()) if d.mean() > 0 else 1.0


def bilateral_weights(geometry, adjacency, params, normals=None, area="target"):
    """Sparse bilateral weight matrix ``C`` over the face neighborhood graph.

    ``C_ij = a_ij K_s(m_i, m_j) K_r(n_i, n_j)`` for neighboring faces, with
    ``a_ij = A_j`` (``area="target"``) or the symmetric ``sqrt(A_i A_j)``
    (``area="symmetric"``).  Degenerate faces get no edges.
    """
    n = geometry.normals if normals is None else normals
    sigma_s = params.sigma_s or default_sigma_s(geometry, adjacency)
    i, j, m = _pairs(adjacency, ~geometry.degenerate)
    A = geometry.areas
    if area == "target":
        a = A[j]
    elif area == "symmetric":
        a = np.sqrt(A[i] * A[j])
    else:
        raise ValueError("area must be 'target' or 'symmetric'")
    w = (a * spatial_kernel(geometry.centroids[i], geometry.centroids[j], sigma_s)
         * range_kernel(n[i], n[j], params.sigma_r))
    return sparse.csr_matrix((w, (i, j)), shape=(m, m))


def bilateral_normals(geometry, adjacency, params):
    """Iterated bilateral averaging of face normals, renormalized each pass.

    Parameters
    ----------
    geometry : FaceGeometry
    adjacency : sparse (m, m)
        Face neighborhood pattern including the diagonal
        (see :func:`gspmesh.mesh.face_adjacency`).
    params : BilateralParams

    Returns
    -------
    ndarray, shape (m, 3)
        Unit normals; degenerate faces keep a zero normal.
    """
    sigma_s = params.sigma_s or default_sigma_s(geometry, adjacency)
    p = BilateralParams(sigma_s, params.sigma_r, params.normal_iterations,
                        params.vertex_iterations, params.neighborhood)
    n = geometry.normals.copy()
    for _ in range(params.normal_iterations):
        C = bilateral_weights(geometry, adjacency, p, normals=n)
        acc = C @ n
        norm = np.linalg.norm(acc, axis=1)
        ok = norm > 0
        # a vanishing average keeps the previous normal
        n = np.where(ok[:, None], acc / np.where(ok, norm, 1.0)[:, None], n)
    return n


# ---------------------------------------------------------------------------
# vertex update

def vertex_energy(mesh, target_normals, vertices=None):
    """``sum_f sum_{j in f} (n_f^T (m_f - v_j))^2`` for the given positions."""
    v = mesh.vertices if vertices is None else vertices
    f = mesh.faces
    m = v[f].mean(axis=1)
    r = np.einsum("fk,fjk->fj", target_normals, m[:, None, :] - v[f])
    return float(np.sum(r ** 2))


def _vertex_step(v, faces, normals, counts):
    m = v[faces].mean(axis=1)
    delta = np.zeros_like(v)
    for j in range(3):
        vj = faces[:, j]
        proj = np.einsum("fk,fk->f", normals, m - v[vj])[:, None] * normals
        np.add.at(delta, vj, proj)
    safe = np.maximum(counts, 1)[:, None]
    return v + delta / safe


def update_vertices(mesh, target_normals, vertex_iterations=10, check_energy=True,
                    energies=None):
    """Move vertices so incident faces align with ``target_normals``.

    Each pass adds to every vertex the mean over its incident faces of
    ``n (n^T (m - v))`` with centroids from the previous pass.  The pass is
    a preconditioned gradient step on :func:`vertex_energy` that cannot
    increase it; with ``check_energy`` an increase beyond rounding raises
    :class:`EnergyIncreaseError`.

    Parameters
    ----------
    energies : list, optional
        Receives the energy before the first pass and after every pass.
    """
    normals = np.asarray(target_normals, dtype=np.float64)
    if normals.shape != (mesh.n_faces, 3):
        raise ValueError("need one target normal per face")
    faces = mesh.faces
    counts = np.bincount(faces.ravel(), minlength=mesh.n_vertices)
    v = mesh.vertices.copy()
    e_prev = vertex_energy(mesh, normals, v)
    if energies is not None:
        energies.append(e_prev)
    scale = max(1.0, float(np.sum(v ** 2)))
    for _ in range(vertex_iterations):
        v = _vertex_step(v, faces, normals, counts)
        e = vertex_energy(mesh, normals, v)
        if check_energy and e > e_prev + 1e-13 * scale:
            raise EnergyIncreaseError(f"energy rose from {e_prev!r} to {e!r}")
        if energies is not None:
            energies.append(e)
        e_prev = e
    return Mesh(v, faces)


def fine_denoise(mesh, params=None):
    """Bilateral normal filtering followed by vertex updates."""
    params = BilateralParams() if params is None else params
    geom = face_geometry(mesh)
    adj = face_adjacency(mesh, params.neighborhood)
    normals = bilateral_normals(geom, adj, params)
    return update_vertices(mesh, normals, params.vertex_iterations)


def coarse_to_fine(mesh, config, params=None):
    return fine_denoise(coarse_denoise(mesh, config), params)


# ---------------------------------------------------------------------------
# graph-transform view of the filter

@dataclass
class IdentityReport:
    max_deviation: float
    response: np.ndarray
    eigenvalues: np.ndarray
    symmetric: bool

    @property
    def ok(self):
        return self.symmetric and self.max_deviation <= 1e-9


def bilateral_spectral_identity_check(normals, weights):
    """Compare one unnormalized bilateral pass with its spectral form.

    The direct filter is ``n_hat = D^{-1} C n`` with ``D`` the row sums of
    ``C``.  The spectral form uses the eigenpairs ``(Lambda, U)`` of the
    symmetric normalized Laplacian ``I - D^{-1/2} C D^{-1/2}`` and predicts
    ``D^{1/2} n_hat = U (I - Lambda) U^T D^{1/2} n``.

    Parameters
    ----------
    normals : ndarray, shape (m, 3)
    weights : array_like or sparse, shape (m, m)
        Symmetric nonnegative weights with positive row sums.

    Returns
    -------
    IdentityReport
        Maximum absolute deviation, the response samples ``1 - lambda_i``
        in ascending-``lambda`` order, and whether ``C`` was symmetric (the
        identity needs it; for asymmetric input the deviation is still
        computed, using the symmetric part for the spectral side).
    """
    C = weights.toarray() if sparse.issparse(weights) else np.asarray(weights, dtype=np.float64)
    n = np.asarray(normals, dtype=np.float64)
    d = C.sum(axis=1)
    if np.any(d <= 0):
        raise ValueError("every node needs a positive weight sum")
    symmetric = bool(np.allclose(C, C.T, rtol=0, atol=1e-14 * max(1.0, np.abs(C).max())))
    direct = (C @ n) / d[:, None]
    s = np.sqrt(d)
    Cs = 0.5 * (C + C.T)
    Ln = np.eye(C.shape[0]) - Cs / np.outer(s, s)
    lam, U = np.linalg.eigh(0.5 * (Ln + Ln.T))
    predicted = U @ ((1.0 - lam)[:, None] * (U.T @ (s[:, None] * n)))
    dev = float(np.abs(s[:, None] * direct - predicted).max())
    return IdentityReport(dev, 1.0 - lam, lam, symmetric)


# ---------------------------------------------------------------------------
# dynamic meshes

def _check_frames(frames):
    if not frames:
        raise ValueError("need at least one frame")
    f0 = frames[0].faces
    n0 = frames[0].n_vertices
    for i, fr in enumerate(frames[1:], start=1):
        if fr.n_vertices != n0 or not np.array_equal(fr.faces, f0):
            raise ValueError(f"frame {i} does not share the connectivity of frame 0")


def default_threads():
    raw = os.environ.get("GSPMESH_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def denoise_dynamic(frames, config, threads=None, params=None):
    """Coarse-denoise (and optionally fine-denoise) a frame sequence.

    Blocks and bases are computed once, from the first frame, and shared
    by every frame; per-frame projection then runs independently on up to
    ``threads`` workers.  Output order matches input order.
    """
    _check_frames(frames)
    first = frames[0]
    blocks = pipeline.prepare_blocks(first, config)
    tracking = pipeline.track_bases(blocks.submeshes, blocks.order, config,
                                    vertices=first.vertices, coords=first.vertices)

    def one(frame):
        pieces = pipeline.project_blocks(frame.vertices, blocks.submeshes, tracking.bases)
        out = Mesh(part.reconstruct_weighted(pieces, frame.n_vertices, config.stitching),
                   frame.faces)
        return out if params is None else fine_denoise(out, params)

    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(frames) == 1:
        return [one(f) for f in frames]
    with ThreadPoolExecutor(max_workers=min(threads, len(frames))) as pool:
        return list(pool.map(one, frames))

