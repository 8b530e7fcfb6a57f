"""Normal regression in the patch eigen space, perturbation of feature points, inference."""
import logging

import numpy as np

from . import nnet
from .geometry import DegeneratePatchError

log = logging.getLogger(__name__)


def _axes(frame):
    return frame.axes if hasattr(frame, "axes") else np.asarray(frame, dtype=np.float64)


def to_eigen(normal, frame):
    """World -> eigen coordinates: dot products with (mu1, mu2, mu3). Batches broadcast."""
    a = _axes(frame)
    if getattr(frame, "degenerate", False):
        raise DegeneratePatchError("degenerate frame")
    return np.einsum("...ij,...j->...i", a, np.asarray(normal, dtype=np.float64))


def from_eigen(coords, frame):
    a = _axes(frame)
    if getattr(frame, "degenerate", False):
        raise DegeneratePatchError("degenerate frame")
    return np.einsum("...ji,...j->...i", a, np.asarray(coords, dtype=np.float64))


def eigen_labels(normals, axes):
    """(N, 3k) world-space label normals -> eigen coordinates, each 3-block flipped so
    its mu3 component is >= 0."""
    normals = np.asarray(normals, dtype=np.float64)
    out = np.empty_like(normals)
    for k in range(0, normals.shape[1], 3):
        e = to_eigen(normals[:, k:k + 3], axes)
        out[:, k:k + 3] = e * np.where(e[:, 2:3] < 0, -1.0, 1.0)
    return out


def world_labels(normals, axes):
    """Ablation target: world-space label normals, sign-fixed by the same mu3 rule."""
    normals = np.asarray(normals, dtype=np.float64)
    out = np.empty_like(normals)
    for k in range(0, normals.shape[1], 3):
        n = normals[:, k:k + 3]
        s = np.einsum("ij,ij->i", n, axes[:, 2])
        out[:, k:k + 3] = n * np.where(s < 0, -1.0, 1.0)[:, None]
    return out


def normal_loss(out, target, weight=None):
    """Sum over the batch of ||n - n_label||^2 and its gradient."""
    d = out - target
    return float(np.sum(d * d)), 2.0 * d


def make_normal_net(outputs, input_size=48, width=8, blocks=4, head="flatten", hidden=64, seed=0,
                    dtype=np.float32):
    return nnet.resnet(input_size=input_size, outputs=outputs, width=width, blocks=blocks, head=head,
                       hidden=hidden, dtype=dtype, seed=seed)


def train_normal_net(maps, labels, branch, config, model_ids=None, model=None, net_kwargs=None, callback=None):
    """Train one branch: ``feature`` (6 outputs) or ``non-feature`` (3 outputs).

    ``labels`` are already in the target space (eigen by default). Returns (model, history).
    """
    labels = np.asarray(labels, dtype=np.float64)
    outputs = 6 if branch == "feature" else 3
    if branch not in ("feature", "non-feature"):
        raise ValueError("unknown branch %r" % branch)
    if len(labels) == 0:
        raise ValueError("empty %s training set" % branch)
    if labels.shape[1] != outputs:
        raise ValueError("%s labels need %d components" % (branch, outputs))
    if model is None:
        model = make_normal_net(outputs, input_size=maps.shape[-1], seed=config.seed, **(net_kwargs or {}))
    history = nnet.fit(model, maps, labels, normal_loss, config, model_ids=model_ids, callback=callback)
    return model, history


def perturb(p_f, neighbor_positions, neighbor_scores, score, r_average, neighbor_ids=None):
    """Nudge p_f by score * r_average toward its lowest-score neighbor.

    Ties on the minimum score go to the lowest neighbor id. Neighbors coinciding with p_f
    are ignored; with none left the point is returned unchanged.
    """
    p_f = np.asarray(p_f, dtype=np.float64)
    pos = np.asarray(neighbor_positions, dtype=np.float64).reshape(-1, 3)
    sc = np.asarray(neighbor_scores, dtype=np.float64)
    ids = np.arange(len(pos)) if neighbor_ids is None else np.asarray(neighbor_ids)
    nu = pos - p_f
    ok = np.linalg.norm(nu, axis=1) > 0
    if not np.any(ok) or score == 0:
        return p_f.copy()
    cand = np.flatnonzero(ok)
    best = cand[np.lexsort((ids[cand], sc[cand]))[0]]
    v = nu[best]
    return p_f + (score * r_average) * v / np.linalg.norm(v)


def perturbed_centers(points, feature_idx, scores, r_average, indptr, indices):
    """Perturbed positions for the listed feature points, using CSR patch members."""
    out = np.empty((len(feature_idx), 3))
    for k, i in enumerate(feature_idx):
        mem = indices[indptr[i]:indptr[i + 1]]
        mem = mem[mem != i]
        out[k] = perturb(points[i], points[mem], scores[mem], scores[i], r_average, neighbor_ids=mem)
    return out


def decode(outputs, axes):
    """First three network outputs -> unit world normals; falls back to mu3 when the
    raw output vanishes."""
    e = np.asarray(outputs, dtype=np.float64)[:, :3]
    n = from_eigen(e, axes)
    norm = np.linalg.norm(n, axis=1)
    bad = norm < 1e-12
    if np.any(bad):
        log.info("%d zero-length normal outputs; using mu3", int(bad.sum()))
        n[bad] = axes[bad, 2]
        norm[bad] = 1.0
    return n / norm[:, None]
