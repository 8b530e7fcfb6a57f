"""A small numpy network engine: conv / pool / relu / dense / residual layers, Adam,
checkpoints and a finite-difference gradient checker.

Tensors are NHWC. Convolutions are stride 1 and use im2col with BLAS matmuls.
"""
import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import make_rng

CHECKPOINT_VERSION = 1


class DivergenceError(ArithmeticError):
    pass


class Layer:
    kind = None

    def __init__(self):
        self.params = {}
        self.grads = {}

    def init(self, rng, dtype):
        pass

    def config(self):
        return {}

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def output_shape(self, shape):
        return shape

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


def _he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, in_ch, out_ch, k, pad=0):
        super().__init__()
        self.in_ch, self.out_ch, self.k, self.pad = in_ch, out_ch, k, pad

    def config(self):
        return {"in_ch": self.in_ch, "out_ch": self.out_ch, "k": self.k, "pad": self.pad}

    def init(self, rng, dtype):
        fan_in = self.in_ch * self.k * self.k
        self.params["W"] = _he_uniform(rng, (self.k, self.k, self.in_ch, self.out_ch), fan_in, dtype)
        self.params["b"] = np.zeros(self.out_ch, dtype=dtype)

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.in_ch:
            raise ValueError("conv expects %d channels, got %d" % (self.in_ch, c))
        return (h + 2 * self.pad - self.k + 1, w + 2 * self.pad - self.k + 1, self.out_ch)

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[3] != self.in_ch:
            raise ValueError("shape mismatch: conv expects (N, H, W, %d), got %s" % (self.in_ch, x.shape))
        p, k = self.pad, self.k
        if p:
            x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        n, hp, wp, c = x.shape
        ho, wo = hp - k + 1, wp - k + 1
        # columns ordered (ki, kj, c) to match the HWIO weight layout
        cols = np.concatenate([x[:, i:i + ho, j:j + wo, :] for i in range(k) for j in range(k)], axis=3)
        out = cols.reshape(-1, k * k * c) @ self.params["W"].reshape(-1, self.out_ch) + self.params["b"]
        if train:
            self._cache = (cols, x.shape)
        return out.reshape(n, ho, wo, self.out_ch)

    def backward(self, g):
        cols, xshape = self._cache
        n, hp, wp, c = xshape
        k, p = self.k, self.pad
        ho, wo = hp - k + 1, wp - k + 1
        gm = g.reshape(-1, self.out_ch)
        self.grads["W"] += (cols.reshape(len(gm), -1).T @ gm).reshape(self.params["W"].shape)
        self.grads["b"] += gm.sum(axis=0)
        dcols = (gm @ self.params["W"].reshape(-1, self.out_ch).T).reshape(n, ho, wo, k * k * c)
        dx = np.zeros(xshape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                o = (i * k + j) * c
                dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, o:o + c]
        if p:
            dx = dx[:, p:-p, p:-p, :]
        return dx


class MaxPool2D(Layer):
    kind = "maxpool"

    def output_shape(self, shape):
        h, w, c = shape
        if h % 2 or w % 2:
            raise ValueError("maxpool needs even spatial size, got %s" % (shape,))
        return (h // 2, w // 2, c)

    def forward(self, x, train=True):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError("maxpool needs even spatial size, got %s" % (x.shape,))
        a, b = x[:, 0::2, 0::2], x[:, 0::2, 1::2]
        cc, d = x[:, 1::2, 0::2], x[:, 1::2, 1::2]
        top, bot = np.maximum(a, b), np.maximum(cc, d)
        out = np.maximum(top, bot)
        if train:
            # window position of the (first) maximum, row-major within the 2x2 window
            arg = np.where(bot > top, np.where(d > cc, 3, 2), np.where(b > a, 1, 0)).astype(np.int8)
            self._cache = (arg, x.shape)
        return out

    def backward(self, g):
        arg, shape = self._cache
        dx = np.zeros(shape, dtype=g.dtype)
        for k, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            dx[:, i::2, j::2] = np.where(arg == k, g, 0)
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=True):
        mask = x > 0
        if train:
            self._cache = mask
        return x * mask

    def backward(self, g):
        return g * self._cache


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=True):
        if train:
            self._cache = x.shape
        return x.reshape(len(x), -1)

    def backward(self, g):
        return g.reshape(self._cache)


class GlobalAvgPool(Layer):
    kind = "gap"

    def output_shape(self, shape):
        return (shape[2],)

    def forward(self, x, train=True):
        if train:
            self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, g):
        n, h, w, c = self._cache
        return np.broadcast_to(g[:, None, None, :] / (h * w), (n, h, w, c)).copy()


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out

    def config(self):
        return {"n_in": self.n_in, "n_out": self.n_out}

    def init(self, rng, dtype):
        self.params["W"] = _he_uniform(rng, (self.n_in, self.n_out), self.n_in, dtype)
        self.params["b"] = np.zeros(self.n_out, dtype=dtype)

    def output_shape(self, shape):
        if shape != (self.n_in,):
            raise ValueError("dense expects (%d,), got %s" % (self.n_in, shape))
        return (self.n_out,)

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError("shape mismatch: dense expects (N, %d), got %s" % (self.n_in, x.shape))
        if train:
            self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, g):
        x = self._cache
        self.grads["W"] += x.T @ g
        self.grads["b"] += g.sum(axis=0)
        return g @ self.params["W"].T


class ResidualBlock(Layer):
    """relu(x + conv(relu(conv(x)))) with 'same' padding; no normalization."""
    kind = "residual"

    def __init__(self, ch, k=3):
        super().__init__()
        self.ch, self.k = ch, k
        self.conv1 = Conv2D(ch, ch, k, pad=k // 2)
        self.conv2 = Conv2D(ch, ch, k, pad=k // 2)
        self.relu1, self.relu2 = ReLU(), ReLU()

    def config(self):
        return {"ch": self.ch, "k": self.k}

    def init(self, rng, dtype):
        self.conv1.init(rng, dtype)
        self.conv2.init(rng, dtype)
        self._link()

    def _link(self):
        self.params = {"W1": self.conv1.params["W"], "b1": self.conv1.params["b"],
                       "W2": self.conv2.params["W"], "b2": self.conv2.params["b"]}

    def zero_grad(self):
        self.conv1.zero_grad()
        self.conv2.zero_grad()
        self.grads = {"W1": self.conv1.grads["W"], "b1": self.conv1.grads["b"],
                      "W2": self.conv2.grads["W"], "b2": self.conv2.grads["b"]}

    def set_param(self, name, value):
        conv = self.conv1 if name.endswith("1") else self.conv2
        conv.params[name[0]] = value
        self._link()

    def output_shape(self, shape):
        return self.conv2.output_shape(self.conv1.output_shape(shape))

    def forward(self, x, train=True):
        y = self.relu1.forward(self.conv1.forward(x, train), train)
        return self.relu2.forward(x + self.conv2.forward(y, train), train)

    def backward(self, g):
        g = self.relu2.backward(g)
        gy = self.conv1.backward(self.relu1.backward(self.conv2.backward(g)))
        return g + gy


LAYER_TYPES = {cls.kind: cls for cls in (Conv2D, MaxPool2D, ReLU, Flatten, GlobalAvgPool, Dense, ResidualBlock)}


class NetModel:
    """Sequential network plus Adam state."""

    def __init__(self, layers, input_shape, dtype=np.float32, seed=0, meta=None):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.meta = dict(meta or {})
        shape = self.input_shape
        for layer in layers:
            shape = layer.output_shape(shape)
        self.output_shape = shape
        rng = make_rng(seed, "init")
        for layer in layers:
            layer.init(rng, self.dtype)
        self.zero_grad()
        self.step = 0
        self.m = [np.zeros_like(p) for p in self.parameters()]
        self.v = [np.zeros_like(p) for p in self.parameters()]
        self._ran_forward = False

    def topology(self):
        return [{"type": l.kind, **l.config()} for l in self.layers]

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield i, name, layer.params[name]

    def parameters(self):
        return [p for _, _, p in self.named_parameters()]

    def gradients(self):
        return [self.layers[i].grads[name] for i, name, _ in self.named_parameters()]

    def set_parameter(self, i, name, value):
        layer = self.layers[i]
        if isinstance(layer, ResidualBlock):
            layer.set_param(name, value)
        else:
            layer.params[name] = value

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def _prep(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if len(self.input_shape) == 3 and x.ndim == 3:
            x = x[..., None]
        if x.shape[1:] != self.input_shape:
            raise ValueError("shape mismatch: model expects %s, got %s" % (self.input_shape, x.shape[1:]))
        return x

    def forward(self, x, train=True):
        x = self._prep(x)
        for layer in self.layers:
            x = layer.forward(x, train)
        self._ran_forward = train
        return x

    def predict(self, x, batch_size=256):
        x = self._prep(x)
        out = [self.forward(x[s:s + batch_size], train=False) for s in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0,) + self.output_shape, dtype=self.dtype)

    def backward(self, loss_grad):
        if not self._ran_forward:
            raise RuntimeError("backward called before forward")
        g = np.asarray(loss_grad, dtype=self.dtype)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.9
    decay_every: int = 100
    batch_size: int = 32
    epochs: int = 100
    samples_per_model: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ValueError("invalid optimizer settings")

    def rate(self, epoch):
        return self.lr * self.decay ** (epoch // self.decay_every)


def adam_step(model, grads, config, epoch):
    params = model.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradients are not congruent with parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise DivergenceError("divergence")
    model.step += 1
    t = model.step
    lr = config.rate(epoch)
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, model.m, model.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + config.eps)).astype(p.dtype)
    return model


def train_step(model, x, target, loss_fn, config, epoch, weight=None):
    model.zero_grad()
    out = model.forward(x, train=True)
    loss, grad = loss_fn(out, target, weight) if weight is not None else loss_fn(out, target)
    model.backward(grad)
    adam_step(model, model.gradients(), config, epoch)
    return loss


def epoch_indices(rng, model_ids, per_model):
    """Per epoch: up to ``per_model`` samples from each model (without replacement), shuffled."""
    chosen = []
    for mid in np.unique(model_ids):
        idx = np.flatnonzero(model_ids == mid)
        if per_model is not None and len(idx) > per_model:
            idx = np.sort(rng.choice(idx, per_model, replace=False))
        chosen.append(idx)
    chosen = np.concatenate(chosen)
    return chosen[rng.permutation(len(chosen))]


def fit(model, x, y, loss_fn, config, weight=None, model_ids=None, callback=None):
    """Minibatch Adam training. Returns the per-epoch mean loss per sample."""
    x = np.asarray(x)
    y = np.asarray(y, dtype=model.dtype)
    if model_ids is None:
        model_ids = np.zeros(len(x), dtype=np.int64)
    rng = make_rng(config.seed, "fit")
    history = []
    for epoch in range(config.epochs):
        order = epoch_indices(rng, model_ids, config.samples_per_model)
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            b = order[s:s + config.batch_size]
            w = None if weight is None else np.asarray(weight, dtype=model.dtype)[b]
            total += float(train_step(model, x[b], y[b], loss_fn, config, epoch, w))
        history.append(total / len(order))
        if callback is not None and callback(epoch, history[-1]) is False:
            break
    return history


def l2_loss(out, target):
    d = out - target
    return float(np.sum(d * d)), 2.0 * d


def grad_check(model, x, target, loss_fn=l2_loss, n_probes=20, h=1e-5, seed=0, include_input=True):
    """Worst relative error between backprop and central differences over random probes.

    Relative error is |a - n| / max(|a|, |n|, 1e-6). Needs a float64 model.
    """
    if model.dtype != np.float64:
        raise ValueError("gradient check needs a float64 model")
    x = np.array(model._prep(x), dtype=np.float64)
    rng = make_rng(seed, "grad_check")

    def loss_at():
        return loss_fn(model.forward(x, train=False), target)[0]

    model.zero_grad()
    out = model.forward(x, train=True)
    _, g = loss_fn(out, target)
    gx = model.backward(g)
    named = list(model.named_parameters())
    analytic = [model.layers[i].grads[n].copy() for i, n, _ in named]
    worst = 0.0

    def rel(a, n):
        return abs(a - n) / max(abs(a), abs(n), 1e-6)

    sizes = np.array([p.size for _, _, p in named])
    for _ in range(n_probes):
        k = int(rng.choice(len(named), p=sizes / sizes.sum())) if len(named) else None
        if k is not None:
            p = named[k][2]
            j = int(rng.integers(p.size))
            old = p.flat[j]
            p.flat[j] = old + h
            lp = loss_at()
            p.flat[j] = old - h
            lm = loss_at()
            p.flat[j] = old
            worst = max(worst, rel(analytic[k].flat[j], (lp - lm) / (2 * h)))
        if include_input:
            j = int(rng.integers(x.size))
            old = x.flat[j]
            x.flat[j] = old + h
            lp = loss_at()
            x.flat[j] = old - h
            lm = loss_at()
            x.flat[j] = old
            worst = max(worst, rel(gx.flat[j], (lp - lm) / (2 * h)))
    return worst


# -- architectures -------------------------------------------------------------------------

def lenet(input_size=32, outputs=2, dtype=np.float32, seed=0):
    """Three convolutions, two max-poolings, two fully connected layers."""
    s = ((input_size - 4) // 2 - 4) // 2 - 4
    layers = [Conv2D(1, 6, 5), ReLU(), MaxPool2D(),
              Conv2D(6, 16, 5), ReLU(), MaxPool2D(),
              Conv2D(16, 120, 5), ReLU(), Flatten(),
              Dense(120 * s * s, 84), ReLU(), Dense(84, outputs)]
    return NetModel(layers, (input_size, input_size, 1), dtype, seed, meta={"arch": "lenet"})


def resnet(input_size=48, outputs=3, width=8, blocks=4, head="flatten", hidden=64, dtype=np.float32, seed=0):
    """Scaled-down residual regressor: stem conv, residual stages separated by 2x2
    pooling, then a global-average or flatten head."""
    layers = [Conv2D(1, width, 3, pad=1), ReLU(), MaxPool2D()]
    size = input_size // 2
    per_stage = 2
    for b in range(blocks):
        layers.append(ResidualBlock(width))
        if (b + 1) % per_stage == 0:
            layers.append(MaxPool2D())
            size //= 2
    if head == "gap":
        layers += [GlobalAvgPool(), Dense(width, outputs)]
    elif head == "flatten":
        layers += [Flatten(), Dense(width * size * size, hidden), ReLU(), Dense(hidden, outputs)]
    else:
        raise ValueError("unknown head %r" % head)
    return NetModel(layers, (input_size, input_size, 1), dtype, seed, meta={"arch": "resnet", "head": head})


# -- checkpoints -----------------------------------------------------------------------------

def save_model(model, path):
    """npz container: ``meta`` (JSON: version, topology, dtype, step, meta) plus
    ``p/<layer>/<name>``, ``m/...``, ``v/...`` arrays for parameters and Adam moments."""
    meta = {"version": CHECKPOINT_VERSION, "topology": model.topology(), "input_shape": list(model.input_shape),
            "dtype": model.dtype.str, "step": model.step, "meta": model.meta}
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for (i, name, p), m, v in zip(model.named_parameters(), model.m, model.v):
        arrays["p/%d/%s" % (i, name)] = p
        arrays["m/%d/%s" % (i, name)] = m
        arrays["v/%d/%s" % (i, name)] = v
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_model(path):
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version %r" % meta.get("version"))
        layers = []
        for spec in meta["topology"]:
            spec = dict(spec)
            cls = LAYER_TYPES[spec.pop("type")]
            layers.append(cls(**spec))
        model = NetModel(layers, meta["input_shape"], np.dtype(meta["dtype"]), meta=meta["meta"])
        model.step = int(meta["step"])
        named = list(model.named_parameters())
        for k, (i, name, _) in enumerate(named):
            model.set_parameter(i, name, z["p/%d/%s" % (i, name)].copy())
            model.m[k] = z["m/%d/%s" % (i, name)].copy()
            model.v[k] = z["v/%d/%s" % (i, name)].copy()
    model.zero_grad()
    return model
