"""Feature / non-feature classification with the angle-weighted l2 loss."""
import logging
from dataclasses import dataclass

import numpy as np

from . import nnet

log = logging.getLogger(__name__)

FEATURE = np.array([1.0, 0.0])
NON_FEATURE = np.array([0.0, 1.0])


def class_weight(theta, sigma_theta=np.radians(30.0)):
    """g(theta) = exp(1 - (cos(theta) / cos(sigma_theta))^2)."""
    c = np.cos(theta) / np.cos(sigma_theta)
    return np.exp(1.0 - c * c)


def weighted_l2_loss(out, target, weight=None):
    """Sum of g_i * ||out_i - target_i||^2 and its gradient w.r.t. ``out``."""
    d = out - target
    if weight is None:
        weight = np.ones(len(d), dtype=d.dtype)
    w = np.asarray(weight, dtype=d.dtype)[:, None]
    return float(np.sum(w * d * d)), 2.0 * w * d


@dataclass
class ClassifiedCloud:
    scores: np.ndarray
    threshold: float = 0.85

    @property
    def is_feature(self):
        return self.scores > self.threshold

    @property
    def feature_indices(self):
        return np.flatnonzero(self.is_feature)

    @property
    def non_feature_indices(self):
        return np.flatnonzero(~self.is_feature)


def scores_from_outputs(out):
    """a / (a + b) after clamping negative outputs to 0; 0 when a + b < 1e-9."""
    out = np.maximum(np.asarray(out, dtype=np.float64), 0.0)
    s = out[:, 0] + out[:, 1]
    bad = s < 1e-9
    if np.any(bad):
        log.info("%d points with vanishing classifier output; scored 0", int(bad.sum()))
    return np.where(bad, 0.0, out[:, 0] / np.where(bad, 1.0, s))


def make_classifier(input_size=32, seed=0, dtype=np.float32):
    return nnet.lenet(input_size=input_size, outputs=2, dtype=dtype, seed=seed)


def train_classifier(maps, labels, theta, config, model_ids=None, weighted=True, sigma_theta=np.radians(30.0),
                     model=None, callback=None):
    """Train the LeNet-style classifier on (N, 32, 32) maps with (N, 2) labels.

    ``weighted=False`` trains with the plain l2 loss (ablation). Returns (model, history).
    """
    labels = np.asarray(labels, dtype=np.float64)
    if len(np.unique(np.argmax(labels, axis=1))) < 2:
        raise ValueError("classification data needs both classes")
    if model is None:
        model = make_classifier(maps.shape[-1], seed=config.seed)
    w = class_weight(np.asarray(theta), sigma_theta) if weighted else np.ones(len(labels))
    history = nnet.fit(model, maps, labels, weighted_l2_loss, config, weight=w, model_ids=model_ids,
                       callback=callback)
    return model, history


def classify_maps(model, maps32, threshold=0.85):
    return ClassifiedCloud(scores_from_outputs(model.predict(maps32)), threshold)
