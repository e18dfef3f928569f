import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gspmesh import metrics, shapes
from gspmesh.mesh import Mesh, face_normals
from gspmesh.pipeline import SpectralConfig, prepare_blocks

from oracles import nmsve_scalar


def _five():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.3], [0.5, 0.5, 1]])
    f = np.array([[0, 1, 2], [1, 3, 2], [0, 1, 4], [1, 3, 4], [3, 2, 4], [2, 0, 4]])
    return Mesh(v, f)


def test_nmsve_identical_hits_floor():
    m = _five()
    assert metrics.nmsve(m, m.vertices) == metrics.DB_FLOOR == -200.0
    assert metrics.nmsve(m, m.vertices, db=False) == 0.0


def test_nmsve_translation_has_no_laplacian_term():
    m = _five()
    t = np.array([0.1, -0.2, 0.3])
    gl = metrics.geometric_laplacian(m)
    assert np.abs(gl @ np.tile(t, (5, 1))).max() < 1e-14
    expected = math.sqrt(5) * np.linalg.norm(t) / 10
    assert metrics.nmsve(m, m.vertices + t, db=False) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 1.0))
def test_nmsve_matches_scalar_oracle(seed, scale):
    m = _five()
    w = m.vertices + scale * np.random.default_rng(seed).standard_normal((5, 3))
    got = metrics.nmsve(m, w, db=False)
    want = nmsve_scalar(m.faces.tolist(), m.vertices.tolist(), w.tolist())
    assert got == pytest.approx(want, rel=1e-12)
    assert metrics.nmsve(m, w) == pytest.approx(10 * math.log10(want), abs=1e-10)


def test_nmsve_shape_mismatch():
    with pytest.raises(ValueError):
        metrics.nmsve(_five(), np.zeros((4, 3)))


def test_mnd_and_theta():
    m = shapes.bumpy_sphere(2)
    n = face_normals(m)
    assert metrics.mnd(n, n) == pytest.approx(0.0, abs=1e-15)
    assert metrics.mnd(n, -n) == pytest.approx(2.0)
    assert metrics.mean_angle_theta(n, -n) == pytest.approx(180.0)
    a = np.tile([1.0, 0, 0], (4, 1))
    b = np.tile([0.0, 1, 0], (4, 1))
    assert metrics.mean_angle_theta(a, b) == pytest.approx(90.0)
    assert metrics.mnd(a, b) == pytest.approx(1.0)


def test_mnd_skips_degenerate_and_checks_shape():
    a = np.array([[0.0, 0, 1], [0, 0, 0]])
    b = np.array([[0.0, 0, 1], [1, 0, 0]])
    assert metrics.mnd(a, b) == 0.0
    with pytest.raises(ValueError):
        metrics.mnd(a, b[:1])


def test_coherence_mse():
    a = np.zeros((5, 5))
    assert metrics.laplacian_coherence_mse(a, a) == 0.0
    assert metrics.laplacian_coherence_mse(a + 1, a) == 1.0
    assert metrics.laplacian_coherence_mse([a, a + 2], a) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        metrics.laplacian_coherence_mse(np.zeros((4, 4)), a)


def test_coherence_matrix_diagonal_zero_for_single_image():
    imgs = {"a": [np.eye(3)], "b": [np.ones((3, 3))]}
    names, table = metrics.coherence_matrix(imgs)
    assert names == ["a", "b"]
    np.testing.assert_allclose(np.diag(table), 0)
    assert table[0, 1] == pytest.approx(np.mean((np.eye(3) - 1) ** 2))


def test_operator_image_is_symmetric_block():
    from gspmesh import spectral
    m = shapes.bumpy_sphere(3)
    blocks = prepare_blocks(m, SpectralConfig(k=4))
    lap = spectral.build_laplacian(blocks.submeshes[0], m.vertices, "binary")
    img = metrics.operator_image(lap, 50)
    assert img.shape == (50, 50)
    np.testing.assert_allclose(img, img.T, atol=1e-10)
    with pytest.raises(ValueError):
        metrics.operator_image(lap, blocks.n_d + 1)


def test_boundary_stats():
    m = shapes.bumpy_sphere(3)
    blocks = prepare_blocks(m, SpectralConfig(k=6, growth=1.5))
    assert metrics.boundary_error_stats(m, m.vertices, blocks.submeshes) == (0.0, 0.0)
    single = prepare_blocks(m, SpectralConfig(k=1, growth=1.0))
    interior, boundary = metrics.boundary_error_stats(m, m.vertices + 0.1, single.submeshes)
    assert boundary is None and interior == pytest.approx(0.0, abs=1e-15)
    mask = np.zeros(m.n_vertices, dtype=bool)
    mask[:10] = True
    err = np.zeros_like(m.vertices)
    err[:5, 0] = 1.0
    _, b = metrics.boundary_error_stats(m, m.vertices + err, boundary=mask)
    assert b == pytest.approx(0.5)
    with pytest.raises(ValueError):
        metrics.boundary_error_stats(m, m.vertices)


def test_report_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        metrics.MetricsReport(timings={"basis": -1.0})
    with pytest.raises(ValueError):
        metrics.MetricsReport(theta=181.0)
    reps = [metrics.MetricsReport(nmsve=-50.0, mnd=0.1, theta=3.0, label="a",
                                  timings={"basis": 1.5}),
            metrics.MetricsReport(label="b", timings={"total": 2.0})]
    path = tmp_path / "r.csv"
    metrics.write_reports_csv(reps, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == metrics.REPORT_COLUMNS + ["time_basis", "time_total"]
    assert rows[0]["time_basis"] == "1.5" and rows[0]["time_total"] == ""
    assert rows[1]["nmsve"] == ""


def test_evaluate_on_noisy_mesh():
    m = shapes.bumpy_sphere(3)
    noisy = m.vertices + 1e-3 * np.random.default_rng(0).standard_normal(m.vertices.shape)
    rep = metrics.evaluate(m, noisy, label="x", bpv=3.0)
    assert rep.nmsve < -30 and 0 < rep.theta < 10 and rep.mnd > 0 and rep.bpv == 3.0
