import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gspmesh import shapes
from gspmesh.mesh import (Mesh, MeshFormatError, add_gaussian_noise, build_edges, face_adjacency,
                          face_geometry, load_mesh, mean_edge_length, save_mesh)

from oracles import neighbor_sets


def test_mesh_rejects_bad_faces():
    v = np.zeros((3, 3))
    with pytest.raises(ValueError):
        Mesh(v, np.array([[0, 1, 3]]))
    with pytest.raises(ValueError):
        Mesh(v, np.array([[0, 1, 1]]))
    with pytest.raises(ValueError):
        Mesh(np.zeros((2, 3)), np.array([[0, 1, 0]]))
    with pytest.raises(ValueError):
        Mesh(v, np.zeros((0, 3), dtype=int))


def test_mesh_is_immutable(tet):
    with pytest.raises(ValueError):
        tet.vertices[0, 0] = 5.0


def test_load_off_tetrahedron(tmp_path):
    p = tmp_path / "t.off"
    p.write_text("OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
                 "3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n")
    m = load_mesh(p)
    assert m.n_vertices == 4 and m.n_faces == 4


def test_load_obj_one_based(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_mesh(p)
    assert m.faces.tolist() == [[0, 1, 2]]


def test_load_obj_slash_and_negative_indices(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1/1 -1\n")
    assert load_mesh(p).faces.tolist() == [[0, 1, 2]]


def test_parse_error_names_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(MeshFormatError) as info:
        load_mesh(p)
    assert info.value.line == 4
    p.write_text("v 0 0 0\nv 1 x 0\n")
    with pytest.raises(MeshFormatError) as info:
        load_mesh(p)
    assert info.value.line == 2


@pytest.mark.parametrize("ext", ["obj", "off"])
def test_save_load_roundtrip(tmp_path, ext):
    m = shapes.bumpy_sphere(2)
    p = tmp_path / f"m.{ext}"
    save_mesh(m, p)
    back = load_mesh(p)
    np.testing.assert_array_equal(back.faces, m.faces)
    np.testing.assert_array_equal(back.vertices, m.vertices)


def test_edges_single_triangle():
    m = Mesh(np.eye(3), np.array([[0, 1, 2]]))
    e = build_edges(m)
    assert [e.neighbors(i).tolist() for i in range(3)] == [[1, 2], [0, 2], [0, 1]]


def test_edges_two_triangles():
    m = Mesh(np.random.default_rng(0).random((4, 3)), np.array([[0, 1, 2], [1, 3, 2]]))
    assert build_edges(m).degrees[1] == 3


def test_edges_tetrahedron_complete(tet):
    assert build_edges(tet).degrees.tolist() == [3, 3, 3, 3]


def test_edges_symmetric_and_match_oracle(small_corpus):
    for m in small_corpus.values():
        e = build_edges(m)
        nb = neighbor_sets(m.faces.tolist(), m.n_vertices)
        for i in range(m.n_vertices):
            assert e.neighbors(i).tolist() == sorted(nb[i])
            assert i not in nb[i]
        a = e.adjacency()
        assert (a != a.T).nnz == 0


def test_face_geometry_unit_triangle():
    m = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    g = face_geometry(m)
    np.testing.assert_allclose(g.centroids[0], [1 / 3, 1 / 3, 0])
    np.testing.assert_allclose(g.normals[0], [0, 0, 1])
    assert g.areas[0] == pytest.approx(0.5)
    flipped = Mesh(m.vertices, np.array([[0, 2, 1]]))
    np.testing.assert_allclose(face_geometry(flipped).normals[0], [0, 0, -1])


def test_sphere_normals_point_outward():
    m = shapes.icosphere(3)
    g = face_geometry(m)
    radial = g.centroids / np.linalg.norm(g.centroids, axis=1, keepdims=True)
    assert np.all(np.einsum("ij,ij->i", g.normals, g.centroids) > 0)
    assert np.min(np.einsum("ij,ij->i", g.normals, radial)) > 0.99


def test_normals_unit_and_centroids_are_means(small_corpus):
    for m in small_corpus.values():
        g = face_geometry(m)
        assert np.abs(np.linalg.norm(g.normals[~g.degenerate], axis=1) - 1).max() < 1e-12
        np.testing.assert_allclose(g.centroids, m.vertices[m.faces].mean(axis=1), atol=1e-15)


def test_zero_area_face_flagged():
    m = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]), np.array([[0, 1, 2]]))
    g = face_geometry(m)
    assert g.degenerate[0] and np.all(g.normals[0] == 0) and g.areas[0] == 0


@pytest.mark.parametrize("name", ["sphere", "bumpy", "torus", "cube"])
def test_closed_meshes_divergence(small_corpus, name):
    g = face_geometry(small_corpus[name])
    total = (g.areas[:, None] * g.normals).sum(axis=0)
    assert np.linalg.norm(total) <= 1e-9 * g.areas.sum()


def test_face_adjacency_includes_self_and_shared_vertices(tet):
    a = face_adjacency(tet).toarray()
    assert a.all()  # every pair of tetrahedron faces shares a vertex
    m = shapes.grid_plane(3, 3)
    a = face_adjacency(m)
    assert all(a[i, i] for i in range(m.n_faces))
    for i in range(m.n_faces):
        for j in a[i].indices:
            assert set(m.faces[i]) & set(m.faces[j])


def test_noise_zero_identity(tet):
    np.testing.assert_array_equal(add_gaussian_noise(tet, 0.0, 3).vertices, tet.vertices)


def test_noise_deterministic(bumpy):
    a = add_gaussian_noise(bumpy, 0.2, 7).vertices
    b = add_gaussian_noise(bumpy, 0.2, 7).vertices
    assert a.tobytes() == b.tobytes()


def test_noise_std_matches_edge_scale():
    m = shapes.torus(200, 110)
    assert m.n_vertices * 3 >= 60000
    d = add_gaussian_noise(m, 0.2, 1).vertices - m.vertices
    target = 0.2 * mean_edge_length(m)
    assert abs(d.std() / target - 1) < 0.05


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.floats(0, 0.3), st.integers(0, 100))
def test_grid_edges_symmetric_property(nx, ny, jitter, seed):
    m = shapes.grid_plane(nx, ny, jitter=jitter, seed=seed)
    a = build_edges(m).adjacency()
    assert (a != a.T).nnz == 0 and a.diagonal().sum() == 0
