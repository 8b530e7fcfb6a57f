"""Training/evaluation data from triangle meshes.

Covers mesh sampling with face normals, sharp-feature detection from two vertex-normal
schemes, feature/non-feature sets, two-normal labels with priorities, balance points,
noise and augmentation.
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation
from scipy.special import expit

from .geometry import PointCloud, SpatialIndex, average_spacing, bbox_diagonal
from .rng import make_rng


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        self.faces = self.faces[_face_areas(self.vertices, self.faces) > 0]

    @property
    def face_normals(self):
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def areas(self):
        return _face_areas(self.vertices, self.faces)

    def edges(self):
        """Unique undirected edges (E, 2) and, per edge, the list of incident faces."""
        e = np.sort(np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]), axis=1)
        f = np.tile(np.arange(len(self.faces)), 3)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.ravel()
        incident = [[] for _ in range(len(uniq))]
        for k in range(len(f)):
            incident[inv[k]].append(int(f[k]))
        return uniq, [sorted(x) for x in incident]


def _face_areas(vertices, faces):
    if len(faces) == 0:
        return np.zeros(0)
    v = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


@dataclass
class GroundTruthCloud:
    cloud: PointCloud
    gt_normals: np.ndarray
    source_face: np.ndarray

    @property
    def points(self):
        return self.cloud.points


# -- synthetic shapes -------------------------------------------------------------------

def cube_mesh(size=1.0):
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64) * size
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, faces)


def prism_mesh(profile, length=1.0):
    """Closed prism: a convex counter-clockwise (x, z) profile extruded along y."""
    profile = np.asarray(profile, dtype=np.float64)
    k = len(profile)
    front = np.column_stack([profile[:, 0], np.zeros(k), profile[:, 1]])
    back = front + [0.0, length, 0.0]
    v = np.vstack([front, back])
    faces = []
    for i in range(k):
        j = (i + 1) % k
        faces += [(i, j, k + j), (i, k + j, k + i)]
    for i in range(1, k - 1):
        faces.append((0, i + 1, i))
        faces.append((k, k + i, k + i + 1))
    mesh = TriangleMesh(v, faces)
    return _orient_outward(mesh)


def wedge_mesh():
    """Right-triangle prism: sharp edges with 90 and 135 degree normal jumps."""
    return prism_mesh([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])


def _orient_outward(mesh):
    c = mesh.vertices.mean(axis=0)
    faces = mesh.faces.copy()
    centroids = mesh.vertices[faces].mean(axis=1)
    flip = np.einsum("ij,ij->i", mesh.face_normals, centroids - c) < 0
    faces[flip] = faces[flip][:, ::-1]
    return TriangleMesh(mesh.vertices, faces)


def icosphere(subdivisions=3, radius=1.0):
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nf
    return TriangleMesh(np.array(verts) * radius, faces)


def folded_strip(dihedral_deg, width=1.0, length=1.0, segments=4):
    """Open two-panel strip folded along the y axis; the panels meet at ``dihedral_deg``."""
    half = np.radians(180.0 - dihedral_deg) / 2.0
    ys = np.linspace(0.0, length, segments + 1)
    left = np.array([-width * np.cos(half), 0.0, -width * np.sin(half)])
    right = np.array([width * np.cos(half), 0.0, -width * np.sin(half)])
    verts, faces = [], []
    for y in ys:
        verts += [left + [0, y, 0], [0.0, y, 0.0], right + [0, y, 0]]
    for s in range(segments):
        a, b = 3 * s, 3 * (s + 1)
        faces += [(a, a + 1, b + 1), (a, b + 1, b), (a + 1, a + 2, b + 2), (a + 1, b + 2, b + 1)]
    mesh = TriangleMesh(np.array(verts), faces)
    if mesh.face_normals[:, 2].sum() < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


# -- sampling ---------------------------------------------------------------------------

def sample_mesh(mesh, n, seed):
    """Area-weighted uniform samples; each sample carries its face's normal."""
    if len(mesh.faces) == 0:
        raise ValueError("empty mesh")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed, "sample_mesh")
    areas = mesh.areas
    face = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    su = np.sqrt(u)
    tri = mesh.vertices[mesh.faces[face]]
    pts = (1 - su)[:, None] * tri[:, 0] + (su * (1 - v))[:, None] * tri[:, 1] + (su * v)[:, None] * tri[:, 2]
    normals = mesh.face_normals[face]
    return GroundTruthCloud(PointCloud(pts, normals), normals.copy(), face.astype(np.int64))


def vertex_normals(mesh, scheme="weighted"):
    """``weighted``: incident face normals weighted by the corner angle; ``single``: the
    normal of the lowest-index incident face."""
    nv = len(mesh.vertices)
    fn = mesh.face_normals
    if scheme == "single":
        first = np.full(nv, -1, dtype=np.int64)
        for fi in range(len(mesh.faces) - 1, -1, -1):
            first[mesh.faces[fi]] = fi
        if np.any(first < 0):
            raise ValueError("isolated vertex")
        return fn[first].copy()
    if scheme != "weighted":
        raise ValueError("unknown scheme %r" % scheme)
    acc = np.zeros((nv, 3))
    v = mesh.vertices[mesh.faces]
    for k in range(3):
        a = v[:, (k + 1) % 3] - v[:, k]
        b = v[:, (k + 2) % 3] - v[:, k]
        cosang = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(acc, mesh.faces[:, k], ang[:, None] * fn)
    norm = np.linalg.norm(acc, axis=1)
    if np.any(norm == 0):
        raise ValueError("isolated vertex")
    return acc / norm[:, None]


def _angle_deg(a, b):
    return np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)))


def flagged_vertices(mesh, angle_thresh=18.0):
    return _angle_deg(vertex_normals(mesh, "weighted"), vertex_normals(mesh, "single")) > angle_thresh


def sharp_edges(mesh, angle_thresh=18.0):
    """Edges whose endpoints are both flagged and whose incident faces bend by more than
    ``angle_thresh`` (this keeps flat triangulation diagonals out)."""
    flagged = flagged_vertices(mesh, angle_thresh)
    edges, incident = mesh.edges()
    fn = mesh.face_normals
    keep = []
    for e, inc in zip(edges, incident):
        if not (flagged[e[0]] and flagged[e[1]]) or len(inc) < 2:
            continue
        n = fn[inc]
        if _angle_deg(n[:-1], n[1:]).max() > angle_thresh:
            keep.append(e)
    return np.array(keep, dtype=np.int64).reshape(-1, 2), flagged


def detect_feature_points(mesh, angle_thresh=18.0, spacing=None):
    """Ground-truth feature locations: flagged vertices plus points along sharp edges
    every ``spacing`` (no densification when ``spacing`` is None)."""
    edges, flagged = sharp_edges(mesh, angle_thresh)
    pts = [mesh.vertices[flagged]]
    if spacing is not None and spacing > 0:
        for a, b in edges:
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            k = int(np.ceil(np.linalg.norm(pb - pa) / spacing))
            if k > 1:
                t = np.arange(1, k) / k
                pts.append(pa + t[:, None] * (pb - pa))
    return np.vstack(pts) if pts else np.zeros((0, 3))


def label_feature_sets(points, psi, r_f):
    """Boolean mask of the feature set: points strictly closer than r_f to some psi point."""
    pts = points.points if hasattr(points, "points") else np.asarray(points, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64).reshape(-1, 3)
    if len(psi) == 0:
        return np.zeros(len(pts), dtype=bool)
    d, _ = cKDTree(psi).query(pts, 1)
    return d < r_f


# -- multi-normal labels -----------------------------------------------------------------

def multi_normals(normals, angle_thresh=18.0):
    """Pair of normals with the largest mutual angle (lowest index pair on ties).

    Returns (i, j, degenerate) with i < j indexing ``normals``.
    """
    normals = np.asarray(normals, dtype=np.float64)
    if len(normals) < 2:
        return 0, 0, True
    dots = normals @ normals.T
    iu, ju = np.triu_indices(len(normals), 1)
    k = int(np.argmin(dots[iu, ju]))
    i, j = int(iu[k]), int(ju[k])
    ang = np.degrees(np.arccos(np.clip(dots[i, j], -1.0, 1.0)))
    return i, j, bool(ang < angle_thresh)


def priorities(p_f, neighbors, n1, n2, sigma_f):
    """Soft assignment of the patch to the planes (p_f, n1) and (p_f, n2).

    Returns (w1, w2) in the input order; each point contributes two terms summing to 1.
    """
    d = np.asarray(neighbors, dtype=np.float64) - np.asarray(p_f, dtype=np.float64)
    d1 = d @ np.asarray(n1, dtype=np.float64)
    d2 = d @ np.asarray(n2, dtype=np.float64)
    z = (d1 * d1 - d2 * d2) / (sigma_f * sigma_f)
    return float(expit(-z).sum()), float(expit(z).sum())


def distinct_normals(normals, angle_thresh=18.0):
    """Indices of representative directions: greedy, in index order, a normal starts a new
    group when it is at least ``angle_thresh`` away from every earlier representative."""
    normals = np.asarray(normals, dtype=np.float64)
    c = np.cos(np.radians(angle_thresh))
    reps = []
    for i, n in enumerate(normals):
        if all(n @ normals[r] <= c for r in reps):
            reps.append(i)
    return reps


def plane_priorities(p_f, neighbors, planes, sigma_f):
    """Soft assignment of the patch to k planes through p_f (softmax of -d^2 / sigma_f^2).

    For k = 2 this is the same split as :func:`priorities`.
    """
    d = (np.asarray(neighbors, dtype=np.float64) - np.asarray(p_f, dtype=np.float64)) @ np.asarray(planes).T
    z = -(d * d) / (sigma_f * sigma_f)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).sum(axis=0)


def balance_ratio(w1, w2):
    w1, w2 = np.asarray(w1, dtype=np.float64), np.asarray(w2, dtype=np.float64)
    s = w1 + w2
    return np.where(s > 0, np.abs(w1 - w2) / np.where(s > 0, s, 1.0), 0.0)


@dataclass
class LabelSet:
    """Per-point labels. ``normals`` is (N, 6): dominant normal then secondary (NaN for
    non-feature points); ``priorities`` is (N, 2), dominant first (0 for non-feature)."""
    is_feature: np.ndarray
    normals: np.ndarray
    priorities: np.ndarray
    theta: np.ndarray
    balance: np.ndarray
    demoted: np.ndarray

    @property
    def class_label(self):
        return np.where(self.is_feature[:, None], [1.0, 0.0], [0.0, 1.0])

    @property
    def feature_normal_mask(self):
        """Points whose normal label is a two-normal (6-vector) label."""
        return self.is_feature & ~self.demoted

    def normal_training_mask(self, feature_branch):
        if feature_branch:
            return self.feature_normal_mask & ~self.balance
        return ~self.feature_normal_mask


def remove_balance_points(labels, tau_b=0.1):
    ratio = balance_ratio(labels.priorities[:, 0], labels.priorities[:, 1])
    labels.balance = labels.feature_normal_mask & (ratio < tau_b)
    return labels


def label_cloud(points, gt, psi, r_average=None, patch_factor=5.0, rf_factor=2.0, sigmaf_factor=2.0,
                angle_thresh=18.0, tau_b=0.1, index=None, subset=None):
    """Full labeling of a (noisy) cloud whose i-th point came from ``gt`` point i.

    One-normal labels are the source face normals. Two-normal labels are only worked out for feature points in ``subset`` (default: all).
    """
    pts = points.points if hasattr(points, "points") else np.asarray(points, dtype=np.float64)
    n = len(pts)
    if r_average is None:
        r_average = average_spacing(pts)
    r = patch_factor * r_average
    is_feature = label_feature_sets(pts, psi, rf_factor * r_average)
    normals = np.full((n, 6), np.nan)
    prio = np.zeros((n, 2))
    theta = np.zeros(n)
    demoted = np.zeros(n, dtype=bool)
    if len(gt.gt_normals) != n:
        raise ValueError("cloud and ground truth differ in size")
    normals[:, :3] = gt.gt_normals
    index = index or SpatialIndex(pts)
    sigma_f = sigmaf_factor * r_average
    todo = np.flatnonzero(is_feature)
    if subset is not None:
        todo = np.intersect1d(todo, subset)
    for i in todo:
        members = index.radius(pts[i], r)
        nm = gt.gt_normals[members]
        a, b, degenerate = multi_normals(nm, angle_thresh)
        n1, n2 = nm[a], nm[b]
        theta[i] = float(np.arccos(np.clip(n1 @ n2, -1.0, 1.0)))
        if degenerate:
            demoted[i] = True
            continue
        reps = distinct_normals(nm, angle_thresh)
        if len(reps) > 2:
            # corner: keep the two surfaces carrying the most of the patch
            w = plane_priorities(pts[i], pts[members], nm[reps], sigma_f)
            top = np.argsort(-w, kind="stable")[:2]
            n1, n2 = nm[reps[top[0]]], nm[reps[top[1]]]
            theta[i] = float(np.arccos(np.clip(n1 @ n2, -1.0, 1.0)))
        w1, w2 = priorities(pts[i], pts[members], n1, n2, sigma_f)
        if w2 > w1:
            n1, n2, w1, w2 = n2, n1, w2, w1
        normals[i] = np.concatenate([n1, n2])
        prio[i] = (w1, w2)
    labels = LabelSet(is_feature, normals, prio, theta, np.zeros(n, dtype=bool), demoted)
    return remove_balance_points(labels, tau_b)


# -- noise and augmentation ---------------------------------------------------------------

def add_noise(points, level, seed, diagonal=None):
    """Isotropic Gaussian displacement with sigma = level * bounding-box diagonal."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    pts = points.points if hasattr(points, "points") else np.asarray(points, dtype=np.float64)
    if level == 0:
        return pts.copy()
    sigma = level * (bbox_diagonal(pts) if diagonal is None else diagonal)
    return pts + make_rng(seed, "noise").normal(0.0, sigma, pts.shape)


def random_rotation(seed):
    return Rotation.random(random_state=make_rng(seed, "rotation")).as_matrix()


def rotate_cloud(gt, R):
    R = np.asarray(R, dtype=np.float64)
    n = gt.gt_normals @ R.T
    return GroundTruthCloud(PointCloud(gt.points @ R.T, n), n.copy(), gt.source_face.copy())


def augment(gt, seed):
    """Randomly rotated copy of a ground-truth cloud (positions and label normals)."""
    return rotate_cloud(gt, random_rotation(seed))


def swap_axes(maps, labels_eigen):
    """Eigen-axis swap augmentation: transpose the maps and swap the first two
    eigen components of every 3-block of the labels."""
    maps = np.swapaxes(np.asarray(maps), -1, -2).copy()
    lab = np.array(labels_eigen, copy=True)
    for k in range(0, lab.shape[-1], 3):
        lab[..., [k, k + 1]] = lab[..., [k + 1, k]]
    return maps, lab
