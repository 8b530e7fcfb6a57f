"""Patch -> height map: projection on the PCA plane, rasterization, Gaussian hole filling, resizing.

Maps are indexed ``values[x, y]`` with x along mu1 and y along mu2. Heights are
signed offsets along mu3 in model units; :func:`height_maps` divides them by the
patch radius when ``normalize=True`` (the form the networks consume).
"""
from dataclasses import dataclass

import numpy as np

from ._accel import njit, prange, use_numba
from .geometry import SpatialIndex, covariances, frames_from_covariances, pca_frame, radius_neighbors


@dataclass
class HeightMapParams:
    m: int = 48
    r: float = 1.0
    eta: float = None
    sigma_g: float = None

    def __post_init__(self):
        if self.eta is None:
            self.eta = self.m / 6.0
        if self.sigma_g is None:
            self.sigma_g = self.eta / 2.5
        if self.m < 8 or self.eta <= 0 or self.sigma_g <= 0 or self.r <= 0:
            raise ValueError("invalid height map parameters")


@dataclass
class HeightMap:
    values: np.ndarray
    mask: np.ndarray

    @property
    def m(self):
        return self.values.shape[0]

    def transposed(self):
        return HeightMap(self.values.T.copy(), self.mask.T.copy())


def cell_offsets(eta, sigma_g):
    """Integer cell offsets strictly inside radius eta, raster order, with Gaussian weights."""
    k = int(np.ceil(eta))
    dx, dy = np.meshgrid(np.arange(-k, k + 1), np.arange(-k, k + 1), indexing="ij")
    dx, dy = dx.ravel(), dy.ravel()
    d2 = (dx * dx + dy * dy).astype(np.float64)
    keep = d2 < eta * eta
    return dx[keep].astype(np.int64), dy[keep].astype(np.int64), np.exp(-d2[keep] / (sigma_g * sigma_g))


def _cell_coord(dot, r, m):
    c = np.floor((dot + r) / (2.0 * r) * m).astype(np.int64)
    return np.clip(c, 0, m - 1)


def rasterize(patch, frame, params, cloud):
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64)
    m, r = params.m, params.r
    values = np.zeros((m, m))
    best = np.full((m, m), np.inf)
    mask = np.zeros((m, m), dtype=bool)
    a = frame.axes
    for j in np.sort(np.asarray(patch.members, dtype=np.int64)):
        d = pts[j] - patch.center
        dots = [d[0] * a[k, 0] + d[1] * a[k, 1] + d[2] * a[k, 2] for k in range(3)]
        x = int(_cell_coord(dots[0], r, m))
        y = int(_cell_coord(dots[1], r, m))
        h = dots[2]
        if abs(h) < best[x, y]:
            best[x, y] = abs(h)
            values[x, y] = h
            mask[x, y] = True
    return HeightMap(values, mask)


def interpolate(hm, params):
    """Fill vacant cells with the Gaussian-weighted mean of occupied cells closer than eta."""
    m = hm.values.shape[0]
    dx, dy, w = cell_offsets(params.eta, params.sigma_g)
    num = np.zeros((m, m))
    den = np.zeros((m, m))
    for x, y in zip(*np.nonzero(hm.mask)):
        tx, ty = x + dx, y + dy
        ok = (tx >= 0) & (tx < m) & (ty >= 0) & (ty < m)
        for i in np.flatnonzero(ok):
            num[tx[i], ty[i]] += w[i] * hm.values[x, y]
            den[tx[i], ty[i]] += w[i]
    filled = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return HeightMap(np.where(hm.mask, hm.values, filled), hm.mask.copy())


def _resize_matrix(m, target):
    s = (np.arange(target) + 0.5) * (m / target) - 0.5
    s = np.clip(s, 0.0, m - 1)
    i0 = np.minimum(np.floor(s).astype(np.int64), m - 1)
    i1 = np.minimum(i0 + 1, m - 1)
    f = s - i0
    R = np.zeros((target, m))
    R[np.arange(target), i0] += 1.0 - f
    R[np.arange(target), i1] += f
    return R


def resize(values, target):
    """Bilinear down-sampling of one map (m, m) or a batch (B, m, m) to target x target."""
    if isinstance(values, HeightMap):
        return HeightMap(resize(values.values, target), None)
    values = np.asarray(values)
    m = values.shape[-1]
    if target > m:
        raise ValueError("upscaling unsupported")
    if target == m:
        return values.copy()
    R = _resize_matrix(m, target).astype(values.dtype)
    return R @ values @ R.T


def make_height_map(cloud, index, point_index, params, center=None):
    """Height map and eigen frame for one point (or an arbitrary ``center`` position)."""
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64)
    own = None
    if center is None:
        center, own = pts[point_index], point_index
    patch = radius_neighbors(index, center, params.r, own_index=own)
    frame = pca_frame(pts, patch)
    return interpolate(rasterize(patch, frame, params, pts), params), frame


@njit(cache=True, parallel=True)
def _maps_nb(points, centers, axes, indptr, indices, r, m, odx, ody, ow, out):
    B = centers.shape[0]
    n_off = odx.shape[0]
    for b in prange(B):
        H = np.zeros((m, m))
        best = np.full((m, m), np.inf)
        occ = np.zeros((m, m), dtype=np.bool_)
        for t in range(indptr[b], indptr[b + 1]):
            j = indices[t]
            d0 = points[j, 0] - centers[b, 0]
            d1 = points[j, 1] - centers[b, 1]
            d2 = points[j, 2] - centers[b, 2]
            u = d0 * axes[b, 0, 0] + d1 * axes[b, 0, 1] + d2 * axes[b, 0, 2]
            v = d0 * axes[b, 1, 0] + d1 * axes[b, 1, 1] + d2 * axes[b, 1, 2]
            h = d0 * axes[b, 2, 0] + d1 * axes[b, 2, 1] + d2 * axes[b, 2, 2]
            x = int(np.floor((u + r) / (2.0 * r) * m))
            y = int(np.floor((v + r) / (2.0 * r) * m))
            x = min(max(x, 0), m - 1)
            y = min(max(y, 0), m - 1)
            if abs(h) < best[x, y]:
                best[x, y] = abs(h)
                H[x, y] = h
                occ[x, y] = True
        num = np.zeros((m, m))
        den = np.zeros((m, m))
        for x in range(m):
            for y in range(m):
                if occ[x, y]:
                    hv = H[x, y]
                    for o in range(n_off):
                        tx = x + odx[o]
                        ty = y + ody[o]
                        if tx >= 0 and tx < m and ty >= 0 and ty < m:
                            num[tx, ty] += ow[o] * hv
                            den[tx, ty] += ow[o]
        for x in range(m):
            for y in range(m):
                if occ[x, y]:
                    out[b, x, y] = H[x, y]
                elif den[x, y] > 0:
                    out[b, x, y] = num[x, y] / den[x, y]
                else:
                    out[b, x, y] = 0.0


def _maps_np(points, centers, axes, indptr, indices, r, m, odx, ody, ow, out, chunk=256):
    B = centers.shape[0]
    mm = m * m
    for s in range(0, B, chunk):
        e = min(B, s + chunk)
        lo, hi = indptr[s], indptr[e]
        counts = np.diff(indptr[s:e + 1])
        row = np.repeat(np.arange(e - s), counts)
        idx = indices[lo:hi]
        d = points[idx] - centers[s:e][row]
        a = axes[s:e][row]
        u = d[:, 0] * a[:, 0, 0] + d[:, 1] * a[:, 0, 1] + d[:, 2] * a[:, 0, 2]
        v = d[:, 0] * a[:, 1, 0] + d[:, 1] * a[:, 1, 1] + d[:, 2] * a[:, 1, 2]
        h = d[:, 0] * a[:, 2, 0] + d[:, 1] * a[:, 2, 1] + d[:, 2] * a[:, 2, 2]
        x = np.clip(np.floor((u + r) / (2.0 * r) * m).astype(np.int64), 0, m - 1)
        y = np.clip(np.floor((v + r) / (2.0 * r) * m).astype(np.int64), 0, m - 1)
        flat = row * mm + x * m + y
        order = np.lexsort((np.arange(len(flat)), np.abs(h), flat))
        first = np.ones(len(order), dtype=bool)
        first[1:] = flat[order][1:] != flat[order][:-1]
        win = order[first]                       # sorted by flat id, i.e. raster order per patch
        cells, hv = flat[win], h[win]
        H = np.zeros((e - s) * mm)
        occ = np.zeros((e - s) * mm, dtype=bool)
        H[cells] = hv
        occ[cells] = True
        pb, px, py = cells // mm, (cells % mm) // m, cells % m
        tx = px[:, None] + odx[None, :]
        ty = py[:, None] + ody[None, :]
        ok = (tx >= 0) & (tx < m) & (ty >= 0) & (ty < m)
        tgt = (pb[:, None] * mm + tx * m + ty)[ok]
        wts = np.broadcast_to(ow[None, :], ok.shape)[ok]
        vals = (np.broadcast_to(hv[:, None], ok.shape)[ok]) * wts
        num = np.bincount(tgt, weights=vals, minlength=(e - s) * mm)
        den = np.bincount(tgt, weights=wts, minlength=(e - s) * mm)
        filled = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        out[s:e] = np.where(occ, H, filled).reshape(e - s, m, m)


def height_maps(points, centers, axes, indptr, indices, params, normalize=True, backend=None):
    """Dense height maps for a batch of patches given as CSR member lists.

    ``backend`` is ``"numba"``, ``"numpy"`` or None (numba when available).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    axes = np.ascontiguousarray(axes, dtype=np.float64).reshape(-1, 3, 3)
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    odx, ody, ow = cell_offsets(params.eta, params.sigma_g)
    out = np.zeros((len(centers), params.m, params.m))
    if backend is None:
        backend = "numba" if use_numba() else "numpy"
    if backend == "numba":
        if not use_numba():
            raise RuntimeError("numba backend disabled")
        _maps_nb(points, centers, axes, indptr, indices, float(params.r), int(params.m), odx, ody, ow, out)
    else:
        _maps_np(points, centers, axes, indptr, indices, float(params.r), int(params.m), odx, ody, ow, out)
    if normalize:
        out /= params.r
    return out


def cloud_height_maps(points, params, index=None, centers=None, own=None, normalize=True):
    """Maps and frames for every point of a cloud (or for explicit ``centers``).

    ``own`` optionally gives, per center, the index of the cloud point it stands for
    (forced into its patch); it defaults to ``arange`` when ``centers`` is None.
    Returns (maps, axes, eigenvalues, degenerate).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    index = index or SpatialIndex(points)
    if centers is None:
        centers = points
        own = np.arange(len(points))
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    indptr, indices = index.radius_csr(centers, params.r)
    if own is not None:
        indptr, indices = _ensure_members(indptr, indices, np.asarray(own, dtype=np.int64))
    cov = covariances(points, centers, indptr, indices)
    axes, w, degenerate = frames_from_covariances(cov)
    maps = height_maps(points, centers, axes, indptr, indices, params, normalize=normalize)
    return maps, axes, w, degenerate


def _ensure_members(indptr, indices, own):
    rows = np.split(indices, indptr[1:-1])
    changed = False
    for i, o in enumerate(own):
        if o >= 0 and not np.any(rows[i] == o):
            rows[i] = np.sort(np.append(rows[i], o))
            changed = True
    if not changed:
        return indptr, indices
    counts = np.array([len(x) for x in rows], dtype=np.int64)
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, np.concatenate(rows).astype(np.int64)


def write_pgm(path, values):
    """16-bit ASCII PGM, min/max normalized (debug aid)."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros(v.shape, dtype=np.int64) if hi <= lo else np.rint((v - lo) / (hi - lo) * 65535).astype(np.int64)
    with open(path, "w") as f:
        f.write("P2\n# min %.17g max %.17g\n%d %d\n65535\n" % (lo, hi, v.shape[1], v.shape[0]))
        for row in scaled:
            f.write(" ".join(str(x) for x in row) + "\n")
