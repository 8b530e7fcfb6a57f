import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from fpnormal.geometry import (DegeneratePatchError, Patch, PointCloud, SpatialIndex, average_spacing, bbox_diagonal,
                               build_index, pca_frame, pca_normals, radius_neighbors)
from oracles import brute_covariance, brute_nn_distance, brute_radius, jacobi_eigh


def test_empty_cloud_rejected():
    with pytest.raises(ValueError, match="empty input"):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError, match="empty input"):
        build_index(np.zeros((0, 3)))


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))


def test_singleton_index():
    idx = build_index(np.array([[0.3, 0.2, 0.1]]))
    assert len(idx) == 1
    assert list(idx.radius([0.3, 0.2, 0.1], 1e-6)) == [0]


def test_cube_corner_query():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    got = sorted(map(tuple, corners[build_index(corners).radius([0, 0, 0], 1.1)]))
    assert got == [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0)]


def test_radius_matches_brute_force(rng):
    pts = rng.random((1000, 3))
    idx = build_index(pts)
    for _ in range(50):
        p = pts[rng.integers(1000)] if rng.random() < 0.5 else rng.random(3)
        r = rng.uniform(0.02, 0.3)
        assert list(idx.radius(p, r)) == brute_radius(pts.tolist(), p.tolist(), r)


def test_closed_ball_on_lattice():
    pts = np.array([[i, 0.0, 0.0] for i in range(5)])
    assert list(build_index(pts).radius([2, 0, 0], 1.0)) == [1, 2, 3]


def test_radius_csr_rows_match_single_queries(rng):
    pts = rng.random((300, 3))
    idx = build_index(pts)
    indptr, indices = idx.radius_csr(pts[:40], 0.15)
    for i in range(40):
        assert list(indices[indptr[i]:indptr[i + 1]]) == list(idx.radius(pts[i], 0.15))


def test_radius_neighbors_adds_own_index():
    pts = np.array([[0.0, 0, 0], [5.0, 0, 0]])
    patch = radius_neighbors(build_index(pts), [4.0, 0, 0], 0.5, own_index=0)
    assert list(patch.members) == [0]
    with pytest.raises(ValueError):
        radius_neighbors(build_index(pts), [0, 0, 0], 0.0)


def test_average_spacing_examples(rng):
    lattice = np.array([[i, 0.0, 0.0] for i in range(10)])
    assert average_spacing(lattice) == 1.0
    assert average_spacing(np.array([[0, 0, 0], [0.25, 0, 0]])) == 0.25
    with pytest.raises(ValueError):
        average_spacing(np.zeros((1, 3)))
    pts = np.column_stack([rng.random((400, 2)), np.zeros(400)])
    ref = np.mean([brute_nn_distance(pts.tolist(), i) for i in range(len(pts))])
    assert abs(average_spacing(pts) - ref) < 1e-12


def test_average_spacing_rigid_invariance(rng):
    pts = rng.random((500, 3))
    R = Rotation.random(random_state=3).as_matrix()
    assert abs(average_spacing(pts) - average_spacing(pts @ R.T + [3.0, -1.0, 2.0])) < 1e-12


def test_bbox_diagonal(rng):
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    assert bbox_diagonal(corners) == pytest.approx(np.sqrt(3), abs=1e-15)
    assert bbox_diagonal(np.array([[1.0, 2.0, 3.0]])) == 0.0
    pts = rng.normal(size=(100, 3))
    lo = [min(p[k] for p in pts) for k in range(3)]
    hi = [max(p[k] for p in pts) for k in range(3)]
    assert abs(bbox_diagonal(pts) - np.sqrt(sum((h - l) ** 2 for h, l in zip(hi, lo)))) < 1e-12


def test_pca_axis_aligned_pair():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0]])
    f = pca_frame(pts, Patch(np.zeros(3), np.arange(3), 1.0))
    assert np.allclose(f.eigenvalues, [2 / 3, 0, 0], atol=1e-15)
    assert abs(abs(f.mu1 @ [1, 0, 0]) - 1) < 1e-12
    assert f.degenerate
    assert abs(np.linalg.det(f.axes) - 1) < 1e-12


def test_pca_plane(rng):
    pts = np.column_stack([rng.random((50, 2)), np.zeros(50)])
    f = pca_frame(pts, Patch(pts[0], np.arange(50), 2.0))
    assert abs(abs(f.mu3[2]) - 1) < 1e-12
    assert abs(f.eigenvalues[2]) < 1e-15


def test_pca_identical_points_error():
    pts = np.ones((4, 3))
    with pytest.raises(DegeneratePatchError, match="degenerate patch"):
        pca_frame(pts, Patch(np.ones(3), np.arange(4), 1.0))


def test_pca_matches_jacobi(rng):
    for _ in range(20):
        pts = rng.normal(size=(200, 3)) * rng.uniform(0.1, 2.0, 3)
        members = np.arange(200)
        f = pca_frame(pts, Patch(pts[0], members, 10.0))
        cov = brute_covariance(pts.tolist(), pts[0].tolist(), members)
        vals, vecs = jacobi_eigh(cov)
        assert np.max(np.abs(f.eigenvalues - vals)) < 1e-9
        for k in range(3):
            assert abs(abs(f.axes[k] @ vecs[k]) - 1) < 1e-9


@given(st.integers(0, 10_000))
def test_frame_orthonormal_right_handed_and_reconstructs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 60))
    pts = rng.normal(size=(n, 3)) * rng.uniform(0.01, 3.0, 3)
    f = pca_frame(pts, Patch(pts[0], np.arange(n), 100.0))
    if f.degenerate:
        return
    a = f.axes
    assert np.max(np.abs(a @ a.T - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(a) - 1) < 1e-9
    cov = brute_covariance(pts.tolist(), pts[0].tolist(), range(n))
    rec = sum(f.eigenvalues[k] * np.outer(a[k], a[k]) for k in range(3))
    assert np.linalg.norm(rec - cov) < 1e-9 * max(1.0, np.linalg.norm(cov))
    assert np.all(np.diff(f.eigenvalues) <= 0)


def test_frame_sign_convention(rng):
    pts = rng.normal(size=(40, 3))
    a = pca_frame(pts, Patch(pts[0], np.arange(40), 10.0)).axes
    for k in range(2):
        assert a[k][np.argmax(np.abs(a[k]))] > 0


def test_pca_normals_on_plane(rng):
    pts = np.column_stack([rng.random((300, 2)), np.zeros(300)])
    n = pca_normals(pts, 0.2)
    assert np.allclose(np.abs(n[:, 2]), 1.0, atol=1e-9)
