import numpy as np
import pytest

from fpnormal.config import RunConfig, load_config, parse_config_text, save_config
from fpnormal.ground_truth import LabelSet, cube_mesh
from fpnormal.io import (FormatError, ManifestEntry, read_cloud, read_labels, read_manifest, read_mesh, read_off,
                         read_ply, read_xyz, write_cloud, write_labels, write_manifest, write_off, write_ply, write_xyz)


def _awkward(rng, n):
    v = rng.normal(size=(n, 3)) * 10.0 ** rng.integers(-12, 12, size=(n, 3))
    v[0] = [0.1, 1 / 3, -0.0]
    return v


def test_xyz_round_trip(tmp_path, rng):
    p, n = _awkward(rng, 200), rng.normal(size=(200, 3))
    write_xyz(tmp_path / "a.xyz", p)
    q, m = read_xyz(tmp_path / "a.xyz")
    assert np.array_equal(p, q) and m is None
    write_xyz(tmp_path / "b.xyz", p, n)
    q, m = read_xyz(tmp_path / "b.xyz")
    assert np.array_equal(p, q) and np.array_equal(n, m)


def test_xyz_errors(tmp_path):
    f = tmp_path / "bad.xyz"
    f.write_text("# header\n0 0 0\n1 2 x\n")
    with pytest.raises(FormatError, match=r"bad.xyz:3: not a number \(token 'x'\)"):
        read_xyz(f)
    f.write_text("0 0 0\n1 2\n")
    with pytest.raises(FormatError, match=":2:"):
        read_xyz(f)
    f.write_text("0 0 nan\n")
    with pytest.raises(FormatError, match="non-finite"):
        read_xyz(f)
    f.write_text("\n# only comments\n")
    with pytest.raises(FormatError, match="empty"):
        read_xyz(f)


def test_ply_round_trip(tmp_path, rng):
    p, n = _awkward(rng, 50), rng.normal(size=(50, 3))
    c = rng.integers(0, 256, size=(50, 3))
    write_ply(tmp_path / "a.ply", p, n, c, faces=[[0, 1, 2], [2, 3, 4]])
    d = read_ply(tmp_path / "a.ply")
    assert np.array_equal(d["points"], p) and np.array_equal(d["normals"], n)
    assert np.array_equal(d["colors"], c) and d["faces"].tolist() == [[0, 1, 2], [2, 3, 4]]
    write_cloud(tmp_path / "b.ply", p)
    q, m = read_cloud(tmp_path / "b.ply")
    assert np.array_equal(q, p) and m is None


PLY_HEAD = "ply\nformat ascii 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\nend_header\n"


def test_ply_element_count_errors(tmp_path):
    f = tmp_path / "bad.ply"
    f.write_text(PLY_HEAD.format(n=3) + "0 0 0\n1 0 0\n")
    with pytest.raises(FormatError, match=r"bad.ply:9: element 'vertex' declares 3 rows"):
        read_ply(f)
    f.write_text(PLY_HEAD.format(n=1) + "0 0 0\n1 0 0\n")
    with pytest.raises(FormatError, match=r"bad.ply:9: trailing data"):
        read_ply(f)
    f.write_text(PLY_HEAD.format(n=2) + "0 0 0\n1 0\n")
    with pytest.raises(FormatError, match=r":9: expected 3 vertex values"):
        read_ply(f)
    f.write_text(PLY_HEAD.replace("ascii", "binary_little_endian").format(n=1) + "0 0 0\n")
    with pytest.raises(FormatError, match="only ascii"):
        read_ply(f)


def test_ply_polygon_faces(tmp_path):
    f = tmp_path / "quad.ply"
    f.write_text(PLY_HEAD.format(n=4).replace("end_header", "element face 1\nproperty list uchar int vertex_indices\nend_header")
                 + "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    assert read_mesh(f).faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_off_cube(tmp_path):
    cube = cube_mesh()
    write_off(tmp_path / "cube.off", cube.vertices, cube.faces)
    mesh = read_mesh(tmp_path / "cube.off")
    assert len(mesh.vertices) == 8 and len(mesh.faces) == 12
    assert np.allclose(np.linalg.norm(mesh.face_normals, axis=1), 1.0)
    v, f = read_off(tmp_path / "cube.off")
    assert np.array_equal(v, cube.vertices) and np.array_equal(f, cube.faces)


def test_off_errors(tmp_path):
    f = tmp_path / "bad.off"
    f.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n")
    with pytest.raises(FormatError, match=r"bad.off:6: integer out of range \(token '5'\)"):
        read_off(f)
    f.write_text("COFF\n")
    with pytest.raises(FormatError, match="OFF"):
        read_off(f)


def _labels(rng, n):
    feat = rng.uniform(size=n) < 0.5
    normals = rng.normal(size=(n, 6))
    normals[~feat, 3:] = np.nan
    return LabelSet(feat, normals, rng.uniform(0, 5, (n, 2)), rng.uniform(0, 3, n), feat & (rng.uniform(size=n) < 0.3),
                    feat)


def test_label_round_trip(tmp_path, rng):
    lab = _labels(rng, 40)
    scores = rng.uniform(size=40)
    write_labels(tmp_path / "l.txt", lab, scores)
    d = read_labels(tmp_path / "l.txt")
    assert np.array_equal(d["class_label"][:, 0] == 1, lab.is_feature)
    assert np.array_equal(d["normals"], lab.normals, equal_nan=True)
    assert np.array_equal(d["priorities"], lab.priorities)
    assert np.array_equal(d["balance"], lab.balance) and np.array_equal(d["scores"], scores)
    write_labels(tmp_path / "m.txt", lab)
    assert np.all(np.isnan(read_labels(tmp_path / "m.txt")["scores"]))


def test_label_errors(tmp_path):
    f = tmp_path / "l.txt"
    f.write_text("# fpnormal-labels 1\n0 1 1 0 1 1 0 0.5\n")
    with pytest.raises(FormatError, match=":2: class label"):
        read_labels(f)
    f.write_text("# fpnormal-labels 1\n0 1 0 4 1 1 1 1 1 1 0 0.5\n")
    with pytest.raises(FormatError, match="normal count"):
        read_labels(f)
    f.write_text("0 1 0 0 1 1 0 0.5\n")
    with pytest.raises(FormatError, match=":1: missing label header"):
        read_labels(f)


def test_config_round_trip_and_errors(tmp_path):
    cfg = RunConfig(seed=7, noise_levels=(0.01, 0.02), perturb=False, lr=3e-4)
    save_config(tmp_path / "c.cfg", cfg)
    assert load_config(tmp_path / "c.cfg") == cfg
    assert parse_config_text("# comment\nkappa = 3  # fewer rounds\n").kappa == 3
    with pytest.raises(FormatError, match=r":2: unknown key \(token 'kapa'\)"):
        parse_config_text("seed = 1\nkapa = 3\n")
    with pytest.raises(FormatError, match="duplicate"):
        parse_config_text("seed = 1\nseed = 2\n")
    with pytest.raises(FormatError, match="bad value"):
        parse_config_text("m = big\n")
    with pytest.raises(FormatError, match="threshold"):
        parse_config_text("threshold = 2\n")


def test_config_defaults():
    c = RunConfig()
    p = c.filter_config().params(0.01)
    assert (p.m, p.r, p.eta, p.sigma_g) == (48, 0.05, 8.0, 3.2)
    assert c.class_size == 32 and c.threshold == 0.85 and c.kappa == 6 and c.tau_b == 0.1
    assert c.noise_levels == (0.005, 0.01, 0.015, 0.02)
    t = c.train_config("normals")
    assert t.epochs == 300 and t.rate(100) == pytest.approx(9e-4) and t.samples_per_model == 2000
    assert c.train_config("classifier").epochs == 100


def test_manifest(tmp_path):
    cube = cube_mesh()
    for name in ("a.off", "b.off"):
        write_off(tmp_path / name, cube.vertices, cube.faces)
    m = tmp_path / "set.txt"
    m.write_text("# mesh n noise split\na.off 1000 0.005,0.01 train\nb.off 500 0.01 test\n")
    entries = read_manifest(m)
    assert entries[0] == ManifestEntry(str(tmp_path / "a.off"), 1000, (0.005, 0.01), "train")
    write_manifest(tmp_path / "copy.txt", entries)
    assert read_manifest(tmp_path / "copy.txt") == entries
    m.write_text("a.off 1000 0.01 train\na.off 1000 0.02 test\n")
    with pytest.raises(FormatError, match=":2: mesh listed in both splits"):
        read_manifest(m)
    m.write_text("missing.off 1000 0.01 train\n")
    with pytest.raises(FormatError, match="not found"):
        read_manifest(m)
    m.write_text("a.off 1000 0.01 validate\n")
    with pytest.raises(FormatError, match="split"):
        read_manifest(m)
