"""Normal and geometry error measures. Angles are unoriented (a normal and its negation agree)."""
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) != len(b):
        raise ValueError("count mismatch: %d vs %d" % (len(a), len(b)))
    return a, b


def angular_errors(pred, gt):
    """Unoriented angle arccos(|n . n_hat|) per point, radians.

    Evaluated as atan2(|n x n_hat|, |n . n_hat|), which is exact for identical vectors
    and well conditioned near 0 and 90 degrees.
    """
    pred, gt = _check_pair(pred, gt)
    c = np.abs(np.einsum("ij,ij->i", pred, gt))
    s = np.linalg.norm(np.cross(pred, gt), axis=1)
    return np.arctan2(s, c)


def msae(pred, gt):
    e = angular_errors(pred, gt)
    return float(np.mean(e * e))


def pgp(pred, gt, tau_deg=10.0):
    return float(np.mean(angular_errors(pred, gt) < np.radians(tau_deg)))


def _nearest(src, dst):
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("empty cloud")
    d, _ = cKDTree(dst).query(src, 1)
    return d


def point_distances(gt, filtered):
    """Distance from each ground-truth point to its closest filtered point."""
    return _nearest(gt, filtered)


def rmse_mean_distance(gt, filtered):
    d = point_distances(gt, filtered)
    return float(np.sqrt(np.mean(d * d)))


def chamfer(a, b):
    dab = _nearest(a, b)
    dba = _nearest(b, a)
    return float(np.mean(dab * dab) + np.mean(dba * dba))


def classification_accuracy(predicted, truth):
    """Share of predicted feature points that are true feature points.

    Both arguments are boolean masks over the same cloud. Returns (accuracy, empty_flag);
    an empty prediction scores 1.0 and raises a warning.
    """
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    n = int(predicted.sum())
    if n == 0:
        warnings.warn("empty predicted feature set; accuracy reported as 1.0")
        return 1.0, True
    return float(np.sum(predicted & truth)) / n, False


@dataclass
class EvalReport:
    msae: float = None
    pgp10: float = None
    pgp20: float = None
    rmse: float = None
    chamfer: float = None
    class_accuracy: float = None
    class_accuracy_empty: bool = None
    n_points: int = None
    errors: dict = field(default_factory=dict, repr=False)

    def items(self):
        return [(k, v) for k, v in asdict(self).items() if k != "errors" and v is not None]

    def to_text(self):
        lines = []
        for k, v in self.items():
            lines.append("%s = %s" % (k, repr(float(v)) if isinstance(v, float) else str(v)))
        return "\n".join(lines) + "\n"


def evaluate(gt_points=None, points=None, pred_normals=None, gt_normals=None, predicted_features=None,
             true_features=None):
    r = EvalReport()
    if pred_normals is not None and gt_normals is not None:
        e = angular_errors(pred_normals, gt_normals)
        r.msae = float(np.mean(e * e))
        r.pgp10 = float(np.mean(e < np.radians(10.0)))
        r.pgp20 = float(np.mean(e < np.radians(20.0)))
        r.errors["angle"] = e
        r.n_points = len(e)
    if gt_points is not None and points is not None:
        d = point_distances(gt_points, points)
        r.rmse = float(np.sqrt(np.mean(d * d)))
        r.chamfer = chamfer(gt_points, points)
        r.errors["distance"] = _nearest(points, gt_points)
        r.n_points = len(points)
    if predicted_features is not None and true_features is not None:
        r.class_accuracy, r.class_accuracy_empty = classification_accuracy(predicted_features, true_features)
    return r


def error_colors(errors, vmax=None):
    """Linear blue (0) -> red (vmax) colormap, uint8 RGB; vmax defaults to max(errors)."""
    e = np.asarray(errors, dtype=np.float64)
    vmax = float(e.max()) if vmax is None else float(vmax)
    t = np.clip(e / vmax, 0.0, 1.0) if vmax > 0 else np.zeros_like(e)
    rgb = np.column_stack([t, np.zeros_like(t), 1.0 - t])
    return np.rint(rgb * 255).astype(np.uint8)
