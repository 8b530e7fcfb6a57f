"""Normal-driven position update and the classify -> estimate -> update loop."""
from dataclasses import dataclass, field

import numpy as np

from ._accel import njit, prange, use_numba
from .classifier import scores_from_outputs
from .geometry import SpatialIndex, average_spacing
from .heightmap import HeightMapParams, cloud_height_maps, resize
from .normals import decode, perturbed_centers


@njit(cache=True, parallel=True)
def _update_nb(points, normals, indptr, indices, out):
    n = points.shape[0]
    for i in prange(n):
        sx = 0.0
        sy = 0.0
        sz = 0.0
        cnt = 0
        ni0, ni1, ni2 = normals[i, 0], normals[i, 1], normals[i, 2]
        for t in range(indptr[i], indptr[i + 1]):
            k = indices[t]
            if k == i:
                continue
            d0 = points[k, 0] - points[i, 0]
            d1 = points[k, 1] - points[i, 1]
            d2 = points[k, 2] - points[i, 2]
            a = d0 * normals[k, 0] + d1 * normals[k, 1] + d2 * normals[k, 2]
            b = d0 * ni0 + d1 * ni1 + d2 * ni2
            sx += a * normals[k, 0] + b * ni0
            sy += a * normals[k, 1] + b * ni1
            sz += a * normals[k, 2] + b * ni2
            cnt += 1
        if cnt == 0:
            out[i, 0], out[i, 1], out[i, 2] = points[i, 0], points[i, 1], points[i, 2]
        else:
            alpha = 1.0 / (3.0 * cnt)
            out[i, 0] = points[i, 0] + alpha * sx
            out[i, 1] = points[i, 1] + alpha * sy
            out[i, 2] = points[i, 2] + alpha * sz


def _update_np(points, normals, indptr, indices, out):
    row = np.repeat(np.arange(len(points)), np.diff(indptr))
    keep = indices != row
    row, col = row[keep], indices[keep]
    d = points[col] - points[row]
    nk, ni = normals[col], normals[row]
    a = d[:, 0] * nk[:, 0] + d[:, 1] * nk[:, 1] + d[:, 2] * nk[:, 2]
    b = d[:, 0] * ni[:, 0] + d[:, 1] * ni[:, 1] + d[:, 2] * ni[:, 2]
    contrib = a[:, None] * nk + b[:, None] * ni
    cnt = np.bincount(row, minlength=len(points))
    s = np.zeros((len(points), 3))
    for c in range(3):
        s[:, c] = np.bincount(row, weights=contrib[:, c], minlength=len(points))
    alpha = np.where(cnt > 0, 1.0 / (3.0 * np.maximum(cnt, 1)), 0.0)
    out[:] = points + alpha[:, None] * s


def position_update(points, normals, radius=None, index=None, csr=None, backend=None):
    """One simultaneous update p_i += alpha_i * sum_k (p_k - p_i)(n_k n_k^T + n_i n_i^T),
    alpha_i = 1 / (3 |N_i|), N_i = neighbors within ``radius`` (excluding i) at the
    current positions."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    normals = np.ascontiguousarray(normals, dtype=np.float64)
    if normals.shape != points.shape:
        raise ValueError("normals/points count mismatch")
    if csr is None:
        index = index or SpatialIndex(points)
        csr = index.radius_csr(points, radius)
    indptr, indices = (np.ascontiguousarray(a, dtype=np.int64) for a in csr)
    out = np.empty_like(points)
    if backend is None:
        backend = "numba" if use_numba() else "numpy"
    if backend == "numba":
        _update_nb(points, normals, indptr, indices, out)
    else:
        _update_np(points, normals, indptr, indices, out)
    return out


@dataclass
class FilterConfig:
    kappa: int = 6
    patch_factor: float = 5.0
    m: int = 48
    class_size: int = 32
    threshold: float = 0.85
    perturb: bool = True
    eta_div: float = 6.0
    sigma_g_div: float = 2.5

    def params(self, r_average):
        eta = self.m / self.eta_div
        return HeightMapParams(m=self.m, r=self.patch_factor * r_average, eta=eta, sigma_g=eta / self.sigma_g_div)

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")


@dataclass
class Models:
    classifier: object
    feature: object
    non_feature: object


def estimate_normals(points, models, config=None, index=None):
    """Classification and normal prediction for every point of a cloud.

    Returns a dict with scores, is_feature, normals, axes (PCA frames), r_average, radius.
    """
    config = config or FilterConfig()
    points = np.ascontiguousarray(points, dtype=np.float64)
    index = index or SpatialIndex(points)
    r_avg = average_spacing(points)
    params = config.params(r_avg)
    maps, axes, _, _ = cloud_height_maps(points, params, index)
    scores = scores_from_outputs(models.classifier.predict(resize(maps, config.class_size)))
    feat = scores > config.threshold
    normals = np.zeros_like(points)
    nf = np.flatnonzero(~feat)
    if len(nf):
        normals[nf] = decode(models.non_feature.predict(maps[nf]), axes[nf])
    fi = np.flatnonzero(feat)
    if len(fi):
        if config.perturb:
            indptr, indices = index.radius_csr(points, params.r)
            centers = perturbed_centers(points, fi, scores, r_avg, indptr, indices)
            fmaps, faxes, _, _ = cloud_height_maps(points, params, index, centers=centers, own=fi)
        else:
            fmaps, faxes = maps[fi], axes[fi]
        normals[fi] = decode(models.feature.predict(fmaps), faxes)
    return {"scores": scores, "is_feature": feat, "normals": normals, "axes": axes,
            "r_average": r_avg, "radius": params.r}


def run_pipeline(points, models=None, config=None, normal_fn=None, callback=None):
    """kappa rounds of estimate -> position update.

    ``normal_fn(iteration, points)`` replaces the learned estimator (oracle or baseline
    normals). ``callback(iteration, points_after, diag)`` is called after every round.
    Returns (points, diagnostics list).
    """
    config = config or FilterConfig()
    pts = np.ascontiguousarray(points, dtype=np.float64).copy()
    diagnostics = []
    for it in range(config.kappa):
        index = SpatialIndex(pts)
        if normal_fn is None:
            est = estimate_normals(pts, models, config, index)
        else:
            r_avg = average_spacing(pts)
            est = {"normals": np.asarray(normal_fn(it, pts), dtype=np.float64), "r_average": r_avg,
                   "radius": config.patch_factor * r_avg}
        new = position_update(pts, est["normals"], est["radius"], index=index)
        disp = np.linalg.norm(new - pts, axis=1)
        diag = dict(est, iteration=it, max_displacement=float(disp.max()), mean_displacement=float(disp.mean()))
        pts = new
        diagnostics.append(diag)
        if callback is not None:
            callback(it, pts, diag)
    return pts, diagnostics
