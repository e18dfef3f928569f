import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from gspmesh import denoise as D
from gspmesh import metrics, pipeline, shapes
from gspmesh.mesh import Mesh, add_gaussian_noise, face_adjacency, face_geometry, face_normals
from gspmesh.pipeline import SpectralConfig

from oracles import plane_rms


@pytest.fixture(scope="module")
def cube():
    return shapes.cube(12)


@pytest.fixture(scope="module")
def noisy_cube(cube):
    return add_gaussian_noise(cube, 0.2, seed=3)


@pytest.mark.parametrize("bad", [dict(sigma_s=0), dict(sigma_r=-1), dict(normal_iterations=0),
                                 dict(vertex_iterations=0), dict(neighborhood=0)])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        D.BilateralParams(**bad)


def test_kernels_range():
    m = np.random.default_rng(0).standard_normal((20, 3))
    ks = D.spatial_kernel(m[:10], m[10:], 0.7)
    kr = D.range_kernel(m[:10], m[10:], 0.35)
    assert np.all((ks > 0) & (ks <= 1)) and np.all((kr >= 0) & (kr <= 1))
    assert np.all(D.spatial_kernel(m, m, 0.7) == 1) and np.all(D.range_kernel(m, m, 0.35) == 1)


def test_coarse_complete_basis_identity():
    m = shapes.bumpy_sphere(3)
    blocks = pipeline.prepare_blocks(m, SpectralConfig(k=6))
    out = D.coarse_denoise(m, SpectralConfig(k=6, c=blocks.n_d, basis_mode="svd"))
    assert np.abs(out.vertices - m.vertices).max() < 1e-10
    np.testing.assert_array_equal(out.faces, m.faces)


def test_coarse_flattens_noisy_plane():
    plane = shapes.grid_plane(30, 30, jitter=0.1)
    v = plane.vertices.copy()
    v[:, 2] += np.random.default_rng(1).normal(0, 0.05, v.shape[0])
    noisy = plane.with_vertices(v)
    out = D.coarse_denoise(noisy, SpectralConfig(k=4, c_fraction=0.05))
    assert plane_rms(out.vertices) < plane_rms(noisy.vertices)


def test_coarse_improves_mnd_twenty_blocks():
    m = shapes.torus(160, 125)  # 20,000 vertices -> 20 blocks of ~1000 after overlap
    noisy = add_gaussian_noise(m, 0.2, seed=5)
    cfg = SpectralConfig(k=20, c_fraction=0.1)
    out = D.coarse_denoise(noisy, cfg)
    ref = face_normals(m)
    assert metrics.mnd(ref, face_normals(out)) < metrics.mnd(ref, face_normals(noisy))


def test_bilateral_fixed_point_identical_normals():
    m = shapes.grid_plane(6, 6)
    g = face_geometry(m)
    out = D.bilateral_normals(g, face_adjacency(m), D.BilateralParams())
    np.testing.assert_allclose(out, g.normals, atol=1e-15)


def test_bilateral_two_faces_mean():
    # two faces with equal areas; coincident centroids are emulated by a huge sigma_s
    m = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.5]]),
             np.array([[0, 1, 2], [1, 3, 2]]))
    g = face_geometry(m)
    g = type(g)(g.centroids, g.normals, np.full(2, 0.5), g.degenerate)
    p = D.BilateralParams(sigma_s=1e12, sigma_r=1e12, normal_iterations=1)
    out = D.bilateral_normals(g, face_adjacency(m), p)
    mean = g.normals.mean(axis=0)
    np.testing.assert_allclose(out, np.tile(mean / np.linalg.norm(mean), (2, 1)), atol=1e-12)


def test_bilateral_reduces_angle_error(cube, noisy_cube):
    ref = face_normals(cube)
    g = face_geometry(noisy_cube)
    filtered = D.bilateral_normals(g, face_adjacency(noisy_cube), D.BilateralParams())
    assert metrics.mean_angle_theta(ref, filtered) < metrics.mean_angle_theta(ref, g.normals)
    assert np.abs(np.linalg.norm(filtered, axis=1) - 1).max() < 1e-12


def test_bilateral_skips_degenerate_faces():
    m = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]]),
             np.array([[0, 1, 2], [0, 1, 3]]))
    g = face_geometry(m)
    assert g.degenerate.tolist() == [False, True]
    out = D.bilateral_normals(g, face_adjacency(m), D.BilateralParams())
    np.testing.assert_allclose(out[0], [0, 0, 1])
    np.testing.assert_array_equal(out[1], 0)


def test_update_vertices_fixed_point():
    m = shapes.bumpy_sphere(3)
    out = D.update_vertices(m, face_normals(m), 10)
    assert np.abs(out.vertices - m.vertices).max() < 1e-12


def test_single_triangle_energy_drops():
    m = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0.4]]), np.array([[0, 1, 2]]))
    n = np.array([[0.0, 0.0, 1.0]])
    energies = []
    D.update_vertices(m, n, 10, energies=energies)
    assert energies[1] < energies[0]
    assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert energies[-1] < 1e-30


def test_plane_with_bump_becomes_planar():
    m = shapes.grid_plane(7, 7)
    v = m.vertices.copy()
    v[24, 2] += 0.3
    n = np.tile([0.0, 0.0, 1.0], (m.n_faces, 1))
    out = D.update_vertices(m.with_vertices(v), n, 400)
    assert plane_rms(out.vertices) < 1e-6
    assert np.all(np.abs(out.vertices[:, :2] - m.vertices[:, :2]) < 1e-15)


def test_energy_nonincreasing_on_noisy_input(noisy_cube):
    g = face_geometry(noisy_cube)
    targets = D.bilateral_normals(g, face_adjacency(noisy_cube), D.BilateralParams())
    energies = []
    D.update_vertices(noisy_cube, targets, 30, energies=energies)
    assert all(b <= a for a, b in zip(energies, energies[1:]))


def test_energy_check_raises_on_increase(monkeypatch, cube):
    def bad_step(v, faces, normals, counts):
        return v * 1.5
    monkeypatch.setattr(D, "_vertex_step", bad_step)
    with pytest.raises(D.EnergyIncreaseError):
        D.update_vertices(cube, np.tile([1.0, 0, 0], (cube.n_faces, 1)), 2)


def test_identity_two_faces_closed_form():
    w = 0.7
    C = np.array([[1.0, w], [w, 1.0]])
    n = np.array([[0.0, 0, 1], [0.6, 0, 0.8]])
    rep = D.bilateral_spectral_identity_check(n, C)
    assert rep.ok and rep.max_deviation < 1e-15
    # with self loops C/(1+w) has eigenvalues 1 and (1-w)/(1+w)
    np.testing.assert_allclose(rep.eigenvalues, [0.0, 2 * w / (1 + w)], atol=1e-15)
    direct = C @ n / C.sum(axis=1)[:, None]
    np.testing.assert_allclose(direct[0], (n[0] + w * n[1]) / (1 + w))


def test_identity_random_50_and_dc_response():
    rng = np.random.default_rng(0)
    A = rng.random((50, 50))
    C = (A + A.T) * (rng.random((50, 50)) < 0.2)
    C = np.maximum(C, C.T) + np.eye(50)
    n = rng.standard_normal((50, 3))
    rep = D.bilateral_spectral_identity_check(n, sparse.csr_matrix(C))
    assert rep.max_deviation < 1e-9 and rep.symmetric
    assert rep.response.max() == pytest.approx(1.0, abs=1e-12)
    assert rep.eigenvalues.min() == pytest.approx(0.0, abs=1e-12)


def test_identity_flags_asymmetric_weights():
    m = shapes.bumpy_sphere(3)
    g = face_geometry(m)
    adj = face_adjacency(m)
    target = D.bilateral_weights(g, adj, D.BilateralParams(), area="target")
    sym = D.bilateral_weights(g, adj, D.BilateralParams(), area="symmetric")
    assert np.ptp(g.areas) > 0
    assert not D.bilateral_spectral_identity_check(g.normals, target).symmetric
    rep = D.bilateral_spectral_identity_check(g.normals, sym)
    assert rep.symmetric and rep.ok


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_identity_property(m, seed):
    rng = np.random.default_rng(seed)
    A = rng.random((m, m))
    C = (A + A.T) / 2 * (rng.random((m, m)) < 0.5)
    C = np.maximum(C, C.T) + np.diag(rng.random(m) + 0.1)
    assert D.bilateral_spectral_identity_check(rng.standard_normal((m, 3)), C).max_deviation < 1e-9


def test_fine_unchanged_without_noise():
    m = shapes.bumpy_sphere(3)
    params = D.BilateralParams(normal_iterations=1)
    g = face_geometry(m)
    out = D.update_vertices(m, g.normals, params.vertex_iterations)
    assert np.abs(out.vertices - m.vertices).max() < 1e-8
    plane = shapes.grid_plane(8, 8, jitter=0.2)
    assert np.abs(D.fine_denoise(plane).vertices - plane.vertices).max() < 1e-8


def test_coarse_then_fine_beats_fine_only(cube, noisy_cube):
    ref = face_normals(cube)
    params = D.BilateralParams(vertex_iterations=10)
    fine = D.fine_denoise(noisy_cube, params)
    both = D.coarse_to_fine(noisy_cube, SpectralConfig(k=6, c_fraction=0.3), params)
    assert metrics.mnd(ref, face_normals(both)) < metrics.mnd(ref, face_normals(fine))


def _frames(s=8):
    base = shapes.bumpy_sphere(3)
    return [add_gaussian_noise(base, 0.2, seed=i) for i in range(s)]


def test_dynamic_single_frame_equals_coarse():
    f = _frames(1)
    cfg = SpectralConfig(k=6, c_fraction=0.2)
    out = D.denoise_dynamic(f, cfg)
    assert out[0].vertices.tobytes() == D.coarse_denoise(f[0], cfg).vertices.tobytes()


def test_dynamic_identical_frames():
    f = _frames(1) * 4
    out = D.denoise_dynamic(f, SpectralConfig(k=6, c_fraction=0.2))
    assert len({o.vertices.tobytes() for o in out}) == 1


def test_dynamic_basis_once_and_order_independent(monkeypatch):
    frames = _frames(8)
    cfg = SpectralConfig(k=6, c_fraction=0.2)
    calls = []
    original = pipeline.track_bases

    def counting(*a, **kw):
        calls.append(1)
        return original(*a, **kw)

    monkeypatch.setattr(pipeline, "track_bases", counting)
    out = D.denoise_dynamic(frames, cfg, threads=3)
    assert len(calls) == 1
    perm = [0] + list(np.random.default_rng(2).permutation(np.arange(1, 8)))
    out_perm = D.denoise_dynamic([frames[i] for i in perm], cfg, threads=1)
    for j, i in enumerate(perm):
        assert out_perm[j].vertices.tobytes() == out[i].vertices.tobytes()


def test_dynamic_rejects_connectivity_mismatch():
    a = shapes.bumpy_sphere(2)
    b = Mesh(a.vertices, a.faces[:, [0, 2, 1]])
    with pytest.raises(ValueError, match="frame 1"):
        D.denoise_dynamic([a, b], SpectralConfig(k=2))
    with pytest.raises(ValueError):
        D.denoise_dynamic([], SpectralConfig(k=2))


def test_default_threads_env(monkeypatch):
    monkeypatch.setenv("GSPMESH_THREADS", "4")
    assert D.default_threads() == 4
    monkeypatch.setenv("GSPMESH_THREADS", "zero")
    assert D.default_threads() == 1
