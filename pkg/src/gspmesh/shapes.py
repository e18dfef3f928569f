"""Procedural test meshes.

Stand-ins for the scanned and CAD models used in experiments: smooth
closed surfaces (sphere, torus), a sharp-featured CAD-style box, a bumpy
"scanned" sphere with irregular detail and an open grid plane.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def grid_plane(nx, ny, spacing=1.0, jitter=0.0, seed=0):
    """Triangulated ``nx`` by ``ny`` vertex grid in the z=0 plane.

    ``jitter`` displaces vertices inside the plane by a uniform fraction of
    ``spacing``; faces stay counter-clockwise seen from +z.
    """
    x, y = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float))
    v = np.column_stack([x.ravel(), y.ravel(), np.zeros(nx * ny)]) * spacing
    if jitter:
        rng = np.random.default_rng(seed)
        v[:, :2] += rng.uniform(-jitter, jitter, (nx * ny, 2)) * spacing
    idx = np.arange(nx * ny).reshape(ny, nx)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    return Mesh(v, faces)


def _weld(vertices, faces, decimals=9):
    key = np.round(vertices, decimals)
    uniq, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(order.shape[0])
    return vertices[first[order]], remap[inverse.ravel()][faces]


def icosphere(subdivisions=3, radius=1.0):
    """Geodesic sphere with ``10 * 4**subdivisions + 2`` vertices."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.ravel()
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = f.shape[0]
        ab, bc, ca = (inv[:m] + v.shape[0], inv[m:2 * m] + v.shape[0], inv[2 * m:] + v.shape[0])
        v = np.vstack([v, mid])
        f = np.concatenate([
            np.column_stack([f[:, 0], ab, ca]),
            np.column_stack([f[:, 1], bc, ab]),
            np.column_stack([f[:, 2], ca, bc]),
            np.column_stack([ab, bc, ca])])
    return Mesh(v * radius, f)


def torus(n_major=48, n_minor=24, major_radius=1.0, minor_radius=0.35):
    """Closed torus around the z axis with outward winding."""
    u = 2 * np.pi * np.arange(n_major) / n_major
    w = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    rr = major_radius + minor_radius * np.cos(ww)
    v = np.column_stack([(rr * np.cos(uu)).ravel(), (rr * np.sin(uu)).ravel(),
                         (minor_radius * np.sin(ww)).ravel()])
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a = i * n_minor + j
    b = ((i + 1) % n_major) * n_minor + j
    c = i * n_minor + (j + 1) % n_minor
    d = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
    faces = np.concatenate([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    return Mesh(v, faces)


def cube(n=16, size=1.0):
    """Closed axis-aligned cube surface with an ``n`` by ``n`` grid per side.

    Sharp edges and corners make it the CAD-style member of the corpus.
    """
    s = np.linspace(-1.0, 1.0, n + 1)
    uu, ww = np.meshgrid(s, s, indexing="ij")
    uu, ww = uu.ravel(), ww.ravel()
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    quad = np.concatenate([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    verts, faces = [], []
    offset = 0
    for axis in range(3):
        for sign in (1.0, -1.0):
            # (e1, e2, normal) right handed so that e1 x e2 points outward
            normal = np.zeros(3)
            normal[axis] = sign
            e1 = np.zeros(3)
            e1[(axis + 1) % 3] = 1.0
            e2 = np.cross(normal, e1)
            p = normal + uu[:, None] * e1 + ww[:, None] * e2
            verts.append(p)
            faces.append(quad + offset)
            offset += p.shape[0]
    v, f = _weld(np.vstack(verts), np.concatenate(faces))
    return Mesh(v * (size / 2.0), f)


def bumpy_sphere(subdivisions=4, amplitude=0.08, n_waves=12, frequency=4.0, seed=1):
    """Icosphere with a random radial relief, a stand-in for scanned models."""
    base = icosphere(subdivisions)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_waves, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    freq = frequency * rng.uniform(0.5, 1.5, n_waves)
    phase = rng.uniform(0, 2 * np.pi, n_waves)
    p = base.vertices
    relief = np.sin(p @ (dirs * freq[:, None]).T + phase).sum(axis=1) / np.sqrt(n_waves)
    return base.with_vertices(p * (1.0 + amplitude * relief)[:, None])


def bumpy_torus(n_major=320, n_minor=320, amplitude=0.04, seed=2, **kw):
    """Dense torus with relief; 320 x 320 gives 102,400 vertices."""
    base = torus(n_major, n_minor, **kw)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(10, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    phase = rng.uniform(0, 2 * np.pi, 10)
    p = base.vertices
    relief = np.sin(p @ (dirs * 6.0).T + phase).sum(axis=1) / np.sqrt(10)
    radial = p.copy()
    radial[:, 2] = 0.0
    ring = radial / np.linalg.norm(radial, axis=1, keepdims=True) * kw.get("major_radius", 1.0)
    out = p - ring
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return base.with_vertices(p + amplitude * relief[:, None] * out)


def jitter_tangential(mesh, fraction=0.2, seed=0):
    """Irregular sampling: move vertices along the surface by a fraction of the edge length.

    Breaks the symmetry of regular tessellations (repeated eigenvalues)
    without changing the surface much.
    """
    from .mesh import face_geometry, mean_edge_length

    geo = face_geometry(mesh)
    vn = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(vn, mesh.faces[:, k], geo.normals * geo.areas[:, None])
    vn /= np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)
    rng = np.random.default_rng(seed)
    d = rng.normal(size=mesh.vertices.shape)
    d -= (d * vn).sum(axis=1, keepdims=True) * vn
    return mesh.with_vertices(mesh.vertices + fraction * mean_edge_length(mesh) * d)


def corpus(scale="small"):
    """Named meshes for tests and demos.

    ``scale="small"`` keeps every model under ~3k vertices; ``"medium"``
    gives models in the 10k-40k range.
    """
    if scale == "small":
        return {
            "sphere": icosphere(3),
            "bumpy": bumpy_sphere(4),
            "torus": torus(48, 24),
            "cube": cube(16),
            "plane": grid_plane(40, 40, jitter=0.2),
        }
    return {
        "sphere": icosphere(5),
        "bumpy": bumpy_sphere(5),
        "torus": torus(160, 80),
        "cube": cube(48),
    }
