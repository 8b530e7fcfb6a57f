"""Run configuration: ``key = value`` text with ``#`` comments, unknown keys rejected."""
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .filtering import FilterConfig
from .io import FLOAT, FormatError
from .nnet import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # height maps
    m: int = 48
    class_size: int = 32
    patch_factor: float = 5.0       # patch radius / r_average
    eta_div: float = 6.0            # eta = m / eta_div
    sigma_g_div: float = 2.5        # sigma_g = eta / sigma_g_div
    # labels
    rf_factor: float = 2.0
    sigmaf_factor: float = 2.0
    feature_angle: float = 18.0     # degrees
    tau_b: float = 0.1
    sigma_theta: float = 30.0       # degrees
    # data generation
    n_points: int = 10000
    noise_levels: tuple = (0.005, 0.01, 0.015, 0.02)
    patches_random: int = 1000
    patches_feature: int = 300
    rotate: bool = True
    axis_swap: bool = True
    # training
    epochs_classifier: int = 100
    epochs_normals: int = 300
    samples_per_model: int = 2000
    batch_size: int = 32
    lr: float = 0.001
    lr_decay: float = 0.9
    lr_decay_every: int = 100
    weighted_loss: bool = True
    label_space: str = "eigen"
    net_width: int = 8
    net_blocks: int = 4
    net_head: str = "flatten"
    net_hidden: int = 64
    # filtering
    threshold: float = 0.85
    kappa: int = 6
    perturb: bool = True

    def __post_init__(self):
        positive = ("m", "class_size", "patch_factor", "eta_div", "sigma_g_div", "rf_factor", "sigmaf_factor",
                    "feature_angle", "sigma_theta", "n_points", "batch_size", "lr", "lr_decay",
                    "lr_decay_every", "kappa", "samples_per_model", "net_width", "net_hidden")
        for k in positive:
            if not getattr(self, k) > 0:
                raise ValueError("%s must be positive" % k)
        if self.m < 8:
            raise ValueError("m must be >= 8")
        if self.class_size > self.m:
            raise ValueError("class_size must not exceed m")
        if not 0 <= self.threshold <= 1 or not 0 <= self.tau_b <= 1:
            raise ValueError("threshold and tau_b must lie in [0, 1]")
        if self.label_space not in ("eigen", "world"):
            raise ValueError("label_space must be eigen or world")
        if self.net_head not in ("flatten", "gap"):
            raise ValueError("net_head must be flatten or gap")
        if any(v < 0 for v in self.noise_levels):
            raise ValueError("noise levels must be >= 0")

    def train_config(self, which):
        epochs = self.epochs_classifier if which == "classifier" else self.epochs_normals
        return TrainConfig(lr=self.lr, decay=self.lr_decay, decay_every=self.lr_decay_every, batch_size=self.batch_size,
                           epochs=epochs, samples_per_model=self.samples_per_model, seed=self.seed)

    def filter_config(self):
        return FilterConfig(kappa=self.kappa, patch_factor=self.patch_factor, m=self.m, class_size=self.class_size,
                            threshold=self.threshold, perturb=self.perturb,
                            eta_div=self.eta_div, sigma_g_div=self.sigma_g_div)

    def net_kwargs(self):
        return dict(width=self.net_width, blocks=self.net_blocks, head=self.net_head, hidden=self.net_hidden)

    def to_text(self):
        out = []
        for k, v in asdict(self).items():
            out.append("%s = %s" % (k, _format(v)))
        return "\n".join(out) + "\n"


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return FLOAT % v
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return str(v)


def _convert(kind, text):
    if kind is bool:
        t = text.lower()
        if t in ("true", "yes", "1", "on"):
            return True
        if t in ("false", "no", "0", "off"):
            return False
        raise ValueError(text)
    if kind is tuple:
        return tuple(float(x) for x in text.split(",") if x.strip())
    if kind is float:
        v = float(text)
        if not np.isfinite(v):
            raise ValueError(text)
        return v
    return kind(text)


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def parse_config_text(text, path="<config>", base=None):
    values = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(path, no, "expected 'key = value'", line)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise FormatError(path, no, "unknown key", key)
        if key in values:
            raise FormatError(path, no, "duplicate key", key)
        try:
            values[key] = _convert(_TYPES[key], val)
        except ValueError:
            raise FormatError(path, no, "bad value for %s" % key, val) from None
    try:
        return replace(base or RunConfig(), **values)
    except ValueError as e:
        raise FormatError(path, 0, str(e)) from None


def load_config(path, base=None):
    with open(path, "r", encoding="ascii") as f:
        return parse_config_text(f.read(), str(path), base)


def save_config(path, config):
    with open(path, "w") as f:
        f.write(config.to_text())
