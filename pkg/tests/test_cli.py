import csv
import os

import numpy as np
import pytest

from gspmesh import cli, shapes
from gspmesh.mesh import add_gaussian_noise, load_mesh, save_mesh


@pytest.fixture
def tet_file(tmp_path, tet):
    p = tmp_path / "tet.obj"
    save_mesh(tet, str(p))
    return str(p)


@pytest.fixture
def sphere_file(tmp_path):
    p = tmp_path / "s.obj"
    save_mesh(shapes.bumpy_sphere(3), str(p))
    return str(p)


def test_compress_decompress_roundtrip(tmp_path, tet_file, tet):
    bits = str(tmp_path / "t.gspc")
    out = str(tmp_path / "t_out.obj")
    assert cli.main(["compress", tet_file, bits, "--k", "1", "--growth", "1",
                     "--c", "4", "--basis-mode", "svd", "--q-c", "16"]) == 0
    assert os.path.exists(bits + ".config.txt")
    assert cli.main(["decompress", bits, out]) == 0
    rec = load_mesh(out)
    np.testing.assert_array_equal(rec.faces, tet.faces)
    assert np.abs(rec.vertices - tet.vertices).max() < 1e-3


def test_invalid_k_exits_2_without_output(tmp_path, tet_file):
    bits = tmp_path / "t.gspc"
    assert cli.main(["compress", tet_file, str(bits), "--k", "0"]) == 2
    assert not bits.exists()


def test_k_larger_than_mesh_is_validation_error(tmp_path, tet_file):
    assert cli.main(["compress", tet_file, str(tmp_path / "x"), "--k", "9"]) == 2


def test_missing_input_exits_3(tmp_path):
    assert cli.main(["compress", str(tmp_path / "nope.obj"), str(tmp_path / "x"),
                     "--k", "1"]) == 3


def test_config_file_and_flag_precedence(tmp_path, sphere_file):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# sweep\nk = 3\nc-fraction = 0.2\nq_c = 10\n")
    out = str(tmp_path / "s.gspc")
    assert cli.main(["compress", sphere_file, out, "--config", str(cfgfile), "--k", "4"]) == 0
    echo = (tmp_path / "s.gspc.config.txt").read_text()
    assert "k=4\n" in echo and "q_c=10\n" in echo and "c_fraction=0.2\n" in echo


def test_bad_config_value_exits_2(tmp_path, sphere_file):
    cfgfile = tmp_path / "bad.cfg"
    cfgfile.write_text("z = many\n")
    assert cli.main(["compress", sphere_file, str(tmp_path / "o"),
                     "--config", str(cfgfile)]) == 2


def test_denoise_with_metrics(tmp_path):
    clean = shapes.cube(8)
    ref = str(tmp_path / "clean.obj")
    noisy = str(tmp_path / "noisy.obj")
    save_mesh(clean, ref)
    save_mesh(add_gaussian_noise(clean, 0.2, seed=1), noisy)
    out = str(tmp_path / "den.obj")
    rep = str(tmp_path / "m.csv")
    assert cli.main(["denoise", noisy, out, "--k", "2", "--c-fraction", "0.3",
                     "--mode", "coarse-fine", "--reference", ref, "--metrics", rep]) == 0
    with open(rep) as fh:
        row = next(csv.DictReader(fh))
    assert float(row["mnd"]) > 0 and "time_total" in row


def test_denoise_dynamic_cli(tmp_path, monkeypatch):
    base = shapes.bumpy_sphere(2)
    frames = tmp_path / "frames"
    frames.mkdir()
    for i in range(3):
        save_mesh(add_gaussian_noise(base, 0.1, seed=i), str(frames / f"f{i}.obj"))
    monkeypatch.setenv("GSPMESH_THREADS", "2")
    out = tmp_path / "out"
    assert cli.main(["denoise-dynamic", str(frames / "f*.obj"), "--output", str(out),
                     "--k", "2", "--c-fraction", "0.3"]) == 0
    assert sorted(os.listdir(out)) == ["config.txt", "f0.obj", "f1.obj", "f2.obj"]
    assert "threads=2\n" in (out / "config.txt").read_text()


def test_bench_empty_sweep_header_only(tmp_path):
    out = tmp_path / "b.csv"
    assert cli.main(["bench", "shape:sphere", str(out), "--c-fractions", ""]) == 0
    assert out.read_text().strip() == ",".join(cli.BENCH_COLUMNS)


def test_bench_small_sweep(tmp_path):
    out = tmp_path / "b.csv"
    assert cli.main(["bench", "shape:bumpy_small", str(out), "--k", "4",
                     "--c-fractions", "0.1", "--modes", "oi", "--z-values", "1",
                     "--t-max-values", "1,2"]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["mode"] for r in rows] == ["svd", "oi", "oi"]
    assert all(float(r["speedup"]) > 0 for r in rows)


def test_coherence_cli(tmp_path):
    out = tmp_path / "c.csv"
    assert cli.main(["coherence", "shape:bumpy_small", "shape:sphere", "--output", str(out),
                     "--k", "8", "--size", "40", "--samples", "3"]) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["probe", "shape:bumpy_small", "shape:sphere"]
    assert len(rows) == 3


def test_unknown_shape_exits_2(tmp_path):
    assert cli.main(["coherence", "shape:teapot", "--output", str(tmp_path / "c")]) == 2
