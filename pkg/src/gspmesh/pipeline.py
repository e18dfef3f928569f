"""Block-wise spectral processing shared by the codec and the denoiser.

Partition the mesh, grow equal-size overlapped submeshes, visit them in
a breadth-first order and compute one spectral basis per block, either
directly (``"svd"``), by warm-started orthogonal iterations (``"oi"``) or
by dynamic orthogonal iterations that also choose the subspace size
(``"doi"``).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import partition as part
from . import spectral
from .mesh import build_edges

BASIS_MODES = ("oi", "doi", "svd")


@dataclass(frozen=True)
class SpectralConfig:
    """Parameters of the block spectral pipeline.

    ``c`` wins over ``c_fraction``; the DOI band ``eps_l``/``eps_h`` is in
    units of each submesh's bounding-box diagonal.
    """

    k: int = 70
    growth: float = 1.15
    c: int | None = None
    c_fraction: float = 0.1
    basis_mode: str = "oi"
    z: int = 2
    t_max: int = 2
    init_t_max: int = 100
    eps_l: float | None = None
    eps_h: float | None = None
    c_min: int = 1
    c_max: int | None = None
    doi_t_max: int = 50
    weighting: str = "binary"
    delta_rel: float = spectral.DEFAULT_SHIFT
    seed: int = 0
    stitching: str = "weighted"
    dense_limit: int = spectral.DENSE_LIMIT
    qr_method: str = "lapack"

    def __post_init__(self):
        if self.basis_mode not in BASIS_MODES:
            raise ValueError(f"basis_mode must be one of {BASIS_MODES}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.growth < 1.0:
            raise ValueError("growth must be >= 1")
        if self.z < 1 or self.t_max < 0:
            raise ValueError("z must be >= 1 and t_max >= 0")
        if self.c is not None and self.c < 1:
            raise ValueError("c must be >= 1")
        if not 0 < self.c_fraction <= 1:
            raise ValueError("c_fraction must be in (0, 1]")
        if self.weighting not in spectral.WEIGHTINGS:
            raise ValueError(f"weighting must be one of {spectral.WEIGHTINGS}")
        if self.stitching not in ("weighted", "simple"):
            raise ValueError("stitching must be 'weighted' or 'simple'")
        if self.basis_mode == "doi":
            if self.eps_l is None or self.eps_h is None or not 0 < self.eps_l < self.eps_h:
                raise ValueError("doi needs 0 < eps_l < eps_h")

    def subspace_size(self, n_d):
        c = self.c if self.c is not None else int(round(self.c_fraction * n_d))
        return int(min(max(c, 1), n_d))

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class Blocks:
    edges: object
    partition: part.Partition
    submeshes: list
    order: tuple

    @property
    def n_d(self):
        return self.submeshes[0].size


@dataclass
class Tracking:
    """Bases indexed by submesh id, plus timings in seconds."""

    bases: list
    timings: dict = field(default_factory=dict)

    @property
    def subspace_sizes(self):
        return np.array([b.c for b in self.bases])


def prepare_blocks(mesh, config, edges=None, partition=None):
    edges = build_edges(mesh) if edges is None else edges
    if partition is None:
        partition = part.partition_mesh(mesh, edges, config.k, seed=config.seed)
    subs = part.expand_overlaps(mesh, edges, partition, config.growth)
    order = part.order_submeshes(subs, seed=config.seed, n=mesh.n_vertices).sequence
    return Blocks(edges, partition, subs, order)


def _first_basis(lap, c, config, op):
    if lap.size <= config.dense_limit:
        return spectral.dense_eigendecomposition(lap, config.dense_limit).basis(c)
    init = spectral.random_basis(lap.size, c, seed=config.seed)
    return spectral.orthogonal_iteration(op, init, config.init_t_max, config.qr_method)


def track_bases(submeshes, order, config, vertices=None, coords=None):
    """Compute one basis per submesh, visiting blocks in ``order``.

    Parameters
    ----------
    submeshes : list of Submesh
    order : sequence of int
    config : SpectralConfig
    vertices : ndarray, optional
        Global coordinates for distance-weighted Laplacians.
    coords : ndarray, optional
        Global coordinates of the signal (required by ``"doi"``).
    """
    mode = config.basis_mode
    if mode == "doi" and coords is None:
        raise ValueError("dynamic OI needs the signal coordinates")
    bases = [None] * len(submeshes)
    t_lap = t_basis = 0.0
    prev = None
    for idx in order:
        sub = submeshes[idx]
        t0 = time.perf_counter()
        lap = spectral.build_laplacian(sub, vertices, config.weighting)
        t1 = time.perf_counter()
        c = config.subspace_size(sub.size)
        if mode == "svd":
            basis = spectral.dense_eigendecomposition(lap, config.dense_limit).basis(c)
        else:
            op = spectral.shifted_inverse(lap, spectral.default_shift(lap, config.delta_rel),
                                          config.z)
            if prev is None:
                basis = _first_basis(lap, c, config, op)
            elif mode == "oi":
                basis = spectral.orthogonal_iteration(op, prev, config.t_max, config.qr_method)
            else:
                basis = prev
            if mode == "doi":
                c_max = config.c_max if config.c_max is not None else sub.size
                init = basis
                if init.c > c_max:
                    init = spectral.SpectralBasis(init.U[:, :c_max])
                elif init.c < config.c_min:
                    raise ValueError("c_min exceeds the initial subspace size")
                basis = spectral.dynamic_oi(op, init, coords[sub.global_indices],
                                            config.eps_l, config.eps_h, config.c_min, c_max,
                                            config.doi_t_max, config.qr_method)
        t2 = time.perf_counter()
        t_lap += t1 - t0
        t_basis += t2 - t1
        bases[idx] = basis
        prev = basis
    return Tracking(bases, {"laplacian": t_lap, "basis": t_basis, "total": t_lap + t_basis})


def _grow_basis(U, c, op, seed, qr_method):
    """Deterministically extend an orthonormal basis to ``c`` columns."""
    rng = np.random.default_rng(seed)
    extra = rng.standard_normal((U.shape[0], c - U.shape[1]))
    extra -= U @ (U.T @ extra)
    return spectral.orthonormalize(np.column_stack([U, extra]), qr_method)


def replay_bases(submeshes, order, sizes, config, vertices=None):
    """Rebuild bases from connectivity given a per-block subspace size.

    Used on both sides of the codec for dynamic sizing: the encoder picks
    the sizes with dynamic OI, then both encoder and decoder run plain
    warm-started OI with those sizes, so the decoder never needs the
    original coordinates.
    """
    bases = [None] * len(submeshes)
    prev = None
    t0 = time.perf_counter()
    for idx in order:
        sub = submeshes[idx]
        c = int(sizes[idx])
        lap = spectral.build_laplacian(sub, vertices, config.weighting)
        if config.basis_mode == "svd":
            bases[idx] = spectral.dense_eigendecomposition(lap, config.dense_limit).basis(c)
            continue
        op = spectral.shifted_inverse(lap, spectral.default_shift(lap, config.delta_rel), config.z)
        if prev is None:
            basis = _first_basis(lap, c, config, op)
        else:
            U = prev.U[:, :c] if prev.c >= c else _grow_basis(prev.U, c, op, config.seed + idx,
                                                               config.qr_method)
            basis = spectral.orthogonal_iteration(op, U, config.t_max, config.qr_method)
        bases[idx] = basis
        prev = basis
    return Tracking(bases, {"total": time.perf_counter() - t0})


def project_blocks(coords, submeshes, bases):
    """Per-block low-pass ``U U^T v`` as ``(submesh, local coordinates)`` pairs."""
    out = []
    for sub, b in zip(submeshes, bases):
        v = coords[sub.global_indices]
        out.append((sub, b.U @ (b.U.T @ v)))
    return out


@dataclass
class SpectralResult:
    vertices: np.ndarray
    blocks: Blocks
    tracking: Tracking


def spectral_filter(mesh, config, blocks=None, tracking=None):
    """Project every block onto its tracked basis and stitch the copies."""
    blocks = prepare_blocks(mesh, config) if blocks is None else blocks
    if tracking is None:
        tracking = track_bases(blocks.submeshes, blocks.order, config,
                               vertices=mesh.vertices, coords=mesh.vertices)
    pieces = project_blocks(mesh.vertices, blocks.submeshes, tracking.bases)
    v = part.reconstruct_weighted(pieces, mesh.n_vertices, config.stitching)
    return SpectralResult(v, blocks, tracking)
