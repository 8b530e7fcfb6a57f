"""Patch datasets: sampled, noised, rotated meshes turned into height maps plus labels."""
from dataclasses import dataclass, fields

import numpy as np

from .geometry import SpatialIndex, average_spacing
from .ground_truth import (add_noise, detect_feature_points, label_cloud, label_feature_sets, random_rotation, rotate_cloud,
                           sample_mesh)
from .heightmap import HeightMapParams, cloud_height_maps, resize
from .normals import eigen_labels, world_labels
from .rng import make_rng


@dataclass
class PatchSet:
    maps: np.ndarray          # (N, m, m) float32, heights / r
    maps_small: np.ndarray    # (N, s, s) float32, classifier input
    axes: np.ndarray          # (N, 3, 3) eigen frames, rows mu1..mu3
    is_feature: np.ndarray
    feature_normal: np.ndarray  # two-normal label available and not a balance point
    balance: np.ndarray
    theta: np.ndarray
    normals: np.ndarray       # (N, 6) world-space label normals (NaN tail for one-normal labels)
    model_id: np.ndarray
    random_pool: np.ndarray   # drawn uniformly (as opposed to the feature top-up)

    def __len__(self):
        return len(self.maps)

    @property
    def class_label(self):
        return np.where(self.is_feature[:, None], [1.0, 0.0], [0.0, 1.0])

    def branch(self, feature, space="eigen"):
        """(indices, labels) for one normal-regression branch."""
        if feature:
            idx = np.flatnonzero(self.feature_normal)
            n = self.normals[idx]
        else:
            idx = np.flatnonzero(~self.feature_normal & ~self.balance)
            n = self.normals[idx, :3]
        conv = eigen_labels if space == "eigen" else world_labels
        return idx, conv(n, self.axes[idx]).astype(np.float32)

    def subset(self, idx):
        return PatchSet(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def with_axis_swaps(self):
        """Append the eigen-axis-swapped copy of every patch (maps transposed, mu1 <-> mu2)."""
        sw = self.subset(np.arange(len(self)))
        sw.maps = np.swapaxes(sw.maps, 1, 2).copy()
        sw.maps_small = np.swapaxes(sw.maps_small, 1, 2).copy()
        sw.axes = sw.axes[:, [1, 0, 2]].copy()
        return concat([self, sw])

    def save(self, path):
        np.savez(path, **{f.name: getattr(self, f.name) for f in fields(self)})

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(**{f.name: z[f.name] for f in fields(cls)})


def concat(sets):
    return PatchSet(**{f.name: np.concatenate([getattr(s, f.name) for s in sets]) for f in fields(PatchSet)})


def make_cloud(mesh, n_points, noise, seed, rotate=True):
    """(ground truth, noisy points, rotation) for one mesh instance.

    Noise is scaled by the bounding-box diagonal of the unrotated sample, so the
    random rotation does not change the noise magnitude.
    """
    gt = sample_mesh(mesh, n_points, seed)
    noisy = add_noise(gt.points, noise, seed)
    R = random_rotation(seed) if rotate else np.eye(3)
    return rotate_cloud(gt, R), noisy @ R.T, R


def build_patch_set(mesh, n_points, noise, seed, n_random=1000, n_feature=0, model_id=0, rotate=True,
                    m=48, small=32, patch_factor=5.0, tau_b=0.1, angle_thresh=18.0, rf_factor=2.0,
                    sigmaf_factor=2.0, eta_div=6.0, sigma_g_div=2.5):
    """Height maps and labels for ``n_random`` uniformly drawn points plus up to
    ``n_feature`` extra feature points of one noisy mesh sample."""
    gt, noisy, R = make_cloud(mesh, n_points, noise, seed, rotate)
    r_avg = average_spacing(noisy)
    psi = detect_feature_points(mesh, angle_thresh, spacing=r_avg / 2.0) @ R.T
    index = SpatialIndex(noisy)
    rng = make_rng(seed, "patches", model_id)
    n = len(noisy)
    chosen = np.sort(rng.choice(n, min(n_random, n), replace=False))
    if n_feature:
        feat = label_feature_sets(noisy, psi, rf_factor * r_avg)
        pool = np.setdiff1d(np.flatnonzero(feat), chosen)
        extra = np.sort(rng.choice(pool, min(n_feature, len(pool)), replace=False)) if len(pool) else pool
    else:
        extra = np.zeros(0, dtype=np.int64)
    idx = np.concatenate([chosen, extra])
    labels = label_cloud(noisy, gt, psi, r_average=r_avg, patch_factor=patch_factor, angle_thresh=angle_thresh,
                         tau_b=tau_b, rf_factor=rf_factor, sigmaf_factor=sigmaf_factor, index=index, subset=idx)
    eta = m / eta_div
    params = HeightMapParams(m=m, r=patch_factor * r_avg, eta=eta, sigma_g=eta / sigma_g_div)
    maps, axes, _, _ = cloud_height_maps(noisy, params, index, centers=noisy[idx], own=idx)
    return PatchSet(
        maps=maps.astype(np.float32),
        maps_small=resize(maps, small).astype(np.float32),
        axes=axes,
        is_feature=labels.is_feature[idx],
        feature_normal=labels.feature_normal_mask[idx] & ~labels.balance[idx],
        balance=labels.balance[idx],
        theta=labels.theta[idx],
        normals=labels.normals[idx],
        model_id=np.full(len(idx), model_id, dtype=np.int64),
        random_pool=np.arange(len(idx)) < len(chosen),
    )
