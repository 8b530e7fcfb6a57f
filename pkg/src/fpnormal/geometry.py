"""Point-cloud containers, exact radius search, PCA frames and scale statistics."""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class DegeneratePatchError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) < 1:
            raise ValueError("empty input")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite coordinates")
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape != self.points.shape:
                raise ValueError("normals/points count mismatch")

    def __len__(self):
        return len(self.points)


@dataclass
class Patch:
    center: np.ndarray
    members: np.ndarray
    radius: float


@dataclass
class EigenFrame:
    """Rows of ``axes`` are mu1, mu2, mu3; ``axes @ v`` maps world to eigen coordinates."""
    axes: np.ndarray
    eigenvalues: np.ndarray
    degenerate: bool = False

    @property
    def mu1(self):
        return self.axes[0]

    @property
    def mu2(self):
        return self.axes[1]

    @property
    def mu3(self):
        return self.axes[2]


def _as_points(cloud):
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.ascontiguousarray(cloud, dtype=np.float64).reshape(-1, 3)


class SpatialIndex:
    """Exact radius / k-nearest queries over a fixed set of points.

    Candidates come from a k-d tree; membership is then decided by the closed-ball
    test ``sqrt(dx*dx + dy*dy + dz*dz) <= r`` so results never depend on tree slack.
    """

    def __init__(self, points):
        self.points = _as_points(points)
        if len(self.points) == 0:
            raise ValueError("empty input")
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def _filter(self, p, cand, r):
        cand = np.asarray(cand, dtype=np.int64)
        if cand.size == 0:
            return cand
        d = self.points[cand] - p
        keep = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]) <= r
        return np.sort(cand[keep])

    def radius(self, p, r):
        p = np.asarray(p, dtype=np.float64)
        cand = self._tree.query_ball_point(p, r * (1.0 + 1e-9) + 1e-300)
        return self._filter(p, cand, r)

    def radius_csr(self, queries, r):
        """Neighbors of many query points as (indptr, indices), each row sorted."""
        queries = _as_points(queries)
        cands = self._tree.query_ball_point(queries, r * (1.0 + 1e-9) + 1e-300)
        rows = [self._filter(q, c, r) for q, c in zip(queries, cands)]
        counts = np.fromiter((len(x) for x in rows), dtype=np.int64, count=len(rows))
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        return indptr, indices.astype(np.int64)

    def knn(self, p, k):
        d, i = self._tree.query(np.asarray(p, dtype=np.float64), k)
        return np.atleast_1d(d), np.atleast_1d(i)

    def nearest(self, queries):
        d, i = self._tree.query(_as_points(queries), 1)
        return d, i


def build_index(cloud):
    return SpatialIndex(cloud)


def radius_neighbors(index, p, r, own_index=None):
    if r <= 0:
        raise ValueError("radius must be positive")
    members = index.radius(p, r)
    if own_index is not None and own_index not in members:
        members = np.sort(np.append(members, own_index))
    return Patch(center=np.asarray(p, dtype=np.float64).copy(), members=members, radius=float(r))


def average_spacing(cloud):
    """Mean distance from each point to its nearest other point."""
    pts = _as_points(cloud)
    if len(pts) < 2:
        raise ValueError("average spacing needs at least 2 points")
    d, _ = cKDTree(pts).query(pts, 2)
    return float(np.mean(d[:, 1]))


def bbox_diagonal(cloud):
    pts = _as_points(cloud)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def covariances(points, centers, indptr, indices):
    """Batch of C_p = (1/|chi|) sum (p - p_i)(p - p_i)^T, one per CSR row."""
    counts = np.diff(indptr)
    row = np.repeat(np.arange(len(counts)), counts)
    d = points[indices] - centers[row]
    outer = d[:, :, None] * d[:, None, :]
    cov = np.zeros((len(counts), 3, 3))
    nz = counts > 0
    if indices.size:
        cov[nz] = np.add.reduceat(outer, indptr[:-1][nz], axis=0)
    cov[nz] /= counts[nz, None, None]
    return cov


def _fix_signs(axes):
    # axes: (B, 3, 3), rows are eigenvectors
    idx = np.argmax(np.abs(axes), axis=2)
    lead = np.take_along_axis(axes, idx[:, :, None], axis=2)[:, :, 0]
    axes = axes * np.where(lead < 0, -1.0, 1.0)[:, :, None]
    det = np.linalg.det(axes)
    axes[:, 2] *= np.where(det < 0, -1.0, 1.0)[:, None]
    return axes


def _perpendicular_pair(u):
    e = np.zeros(3)
    e[np.argmin(np.abs(u))] = 1.0
    v = np.cross(u, e)
    v /= np.linalg.norm(v)
    return v, np.cross(u, v)


def frames_from_covariances(cov):
    """Sorted, sign-fixed eigen frames. Returns (axes (B,3,3), eigenvalues (B,3), degenerate (B,))."""
    w, v = np.linalg.eigh(cov)
    w = w[:, ::-1].copy()
    axes = np.transpose(v[:, :, ::-1], (0, 2, 1)).copy()
    w = np.maximum(w, 0.0)
    scale = np.maximum(w[:, 0], 1e-300)
    degenerate = w[:, 1] <= 1e-12 * scale
    for b in np.flatnonzero(degenerate & (w[:, 0] > 0)):
        u = axes[b, 0] / np.linalg.norm(axes[b, 0])
        v2, v3 = _perpendicular_pair(u)
        axes[b] = (u, v2, v3)
    axes = _fix_signs(axes)
    return axes, w, degenerate


def pca_frame(cloud, patch):
    pts = _as_points(cloud)
    members = np.asarray(patch.members, dtype=np.int64)
    indptr = np.array([0, len(members)], dtype=np.int64)
    cov = covariances(pts, np.asarray(patch.center, dtype=np.float64)[None], indptr, members)
    if len(members) == 0 or not np.any(cov[0]):
        raise DegeneratePatchError("degenerate patch")
    axes, w, deg = frames_from_covariances(cov)
    return EigenFrame(axes=axes[0], eigenvalues=w[0], degenerate=bool(deg[0]))


def pca_normals(cloud, radius, index=None):
    """PCA baseline: mu3 of each point's radius patch (the completed frame axis where degenerate)."""
    pts = _as_points(cloud)
    index = index or SpatialIndex(pts)
    indptr, indices = index.radius_csr(pts, radius)
    cov = covariances(pts, pts, indptr, indices)
    axes, w, deg = frames_from_covariances(cov)
    return axes[:, 2].copy()
