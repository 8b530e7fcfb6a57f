import numpy as np
import pytest

from fpnormal import nnet
from fpnormal.classifier import weighted_l2_loss
from fpnormal.nnet import (Conv2D, Dense, DivergenceError, Flatten, GlobalAvgPool, MaxPool2D, NetModel, ReLU,
                           ResidualBlock, TrainConfig, adam_step, grad_check, l2_loss)
from fpnormal.normals import normal_loss


def _model(layers, shape, seed=0):
    return NetModel(layers, shape, dtype=np.float64, seed=seed)


def test_zero_weights_give_zero_output():
    m = _model([Flatten(), Dense(16, 5), ReLU(), Dense(5, 2)], (4, 4, 1))
    for i, name, p in list(m.named_parameters()):
        m.set_parameter(i, name, np.zeros_like(p))
    assert np.all(m.forward(np.random.default_rng(0).normal(size=(3, 4, 4))) == 0)


def test_dense_is_matrix_product(rng):
    m = _model([Dense(7, 3)], (7,))
    x = rng.normal(size=(5, 7))
    W, b = m.layers[0].params["W"], m.layers[0].params["b"]
    b[:] = rng.normal(size=3)
    expect = np.array([[sum(x[n, i] * W[i, j] for i in range(7)) + b[j] for j in range(3)] for n in range(5)])
    assert np.allclose(m.forward(x), expect, atol=1e-12)


def test_conv_matches_unrolled_dot_products(rng):
    conv = Conv2D(2, 3, 3)
    m = _model([conv], (5, 5, 2))
    conv.params["b"][:] = rng.normal(size=3)
    x = rng.normal(size=(2, 5, 5, 2))
    out = m.forward(x)
    W = conv.params["W"]
    for n in range(2):
        for i in range(3):
            for j in range(3):
                for o in range(3):
                    s = conv.params["b"][o]
                    for a in range(3):
                        for b in range(3):
                            for c in range(2):
                                s += x[n, i + a, j + b, c] * W[a, b, c, o]
                    assert out[n, i, j, o] == pytest.approx(s, abs=1e-12)


def test_padded_conv_shape_and_shape_errors(rng):
    m = _model([Conv2D(1, 4, 3, pad=1)], (6, 6, 1))
    assert m.forward(rng.normal(size=(2, 6, 6))).shape == (2, 6, 6, 4)
    with pytest.raises(ValueError):
        m.forward(rng.normal(size=(2, 5, 6)))
    with pytest.raises(ValueError):
        _model([MaxPool2D()], (5, 5, 1))


def test_maxpool_picks_block_maximum(rng):
    m = _model([MaxPool2D()], (4, 4, 2))
    x = rng.normal(size=(3, 4, 4, 2))
    out = m.forward(x)
    expect = x.reshape(3, 2, 2, 2, 2, 2).max(axis=(2, 4))
    assert np.array_equal(out, expect)


def test_forward_does_not_mutate_parameters(rng):
    m = nnet.lenet(dtype=np.float64)
    before = [p.copy() for p in m.parameters()]
    m.forward(rng.normal(size=(2, 32, 32)))
    assert all(np.array_equal(a, b) for a, b in zip(before, m.parameters()))


def test_backward_before_forward():
    m = _model([Dense(3, 2)], (3,))
    with pytest.raises(RuntimeError):
        m.backward(np.zeros((1, 2)))


def test_zero_loss_gradient_gives_zero_gradients(rng):
    m = nnet.resnet(input_size=8, outputs=3, width=2, blocks=2, dtype=np.float64)
    m.zero_grad()
    out = m.forward(rng.normal(size=(2, 8, 8)))
    m.backward(np.zeros_like(out))
    assert all(np.all(g == 0) for g in m.gradients())


LAYER_CASES = {
    "dense": lambda: ([Dense(6, 4)], (6,)),
    "conv": lambda: ([Conv2D(2, 3, 3)], (6, 6, 2)),
    "conv_pad": lambda: ([Conv2D(2, 3, 3, pad=1)], (5, 5, 2)),
    "relu": lambda: ([Dense(6, 8), ReLU()], (6,)),
    "maxpool": lambda: ([MaxPool2D(), Flatten()], (6, 6, 2)),
    "flatten": lambda: ([Flatten(), Dense(18, 2)], (3, 3, 2)),
    "gap": lambda: ([GlobalAvgPool(), Dense(3, 2)], (4, 4, 3)),
    "residual": lambda: ([ResidualBlock(2)], (5, 5, 2)),
    "lenet": lambda: (nnet.lenet(dtype=np.float64).layers, (32, 32, 1)),
    "resnet": lambda: (nnet.resnet(input_size=16, width=3, blocks=2, dtype=np.float64).layers, (16, 16, 1)),
}


@pytest.mark.parametrize("name", sorted(LAYER_CASES))
def test_gradient_check_per_layer(name):
    layers, shape = LAYER_CASES[name]()
    m = NetModel(layers, shape, dtype=np.float64, seed=1)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3,) + shape)
    target = rng.normal(size=(3,) + m.output_shape)
    assert grad_check(m, x, target, n_probes=20) < 1e-4


@pytest.mark.parametrize("loss", ["weighted", "normal"])
def test_gradient_check_losses(loss):
    rng = np.random.default_rng(3)
    outputs = 2 if loss == "weighted" else 6
    m = NetModel([Flatten(), Dense(16, 8), ReLU(), Dense(8, outputs)], (4, 4, 1), dtype=np.float64, seed=4)
    x = rng.normal(size=(5, 4, 4))
    target = rng.normal(size=(5, outputs))
    w = rng.uniform(0.5, 2.7, size=5)
    fn = (lambda o, t: weighted_l2_loss(o, t, w)) if loss == "weighted" else normal_loss
    assert grad_check(m, x, target, loss_fn=fn, n_probes=20) < 1e-4


def test_grad_check_needs_double():
    m = NetModel([Dense(2, 2)], (2,), dtype=np.float32)
    with pytest.raises(ValueError):
        grad_check(m, np.zeros((1, 2)), np.zeros((1, 2)))


def test_linear_least_squares_closed_form(rng):
    n = 10
    X = rng.normal(size=(n, 4))
    y = rng.normal(size=(n, 1))
    m = _model([Dense(4, 1)], (4,))
    w = m.layers[0].params["W"]
    m.zero_grad()
    out = m.forward(X)
    m.backward(2.0 * (out - y) / n)
    assert np.allclose(m.layers[0].grads["W"], 2 * X.T @ (X @ w - y) / n, atol=1e-12)


def test_adam_zero_gradients_keep_parameters():
    m = _model([Dense(3, 2)], (3,))
    before = [p.copy() for p in m.parameters()]
    adam_step(m, [np.zeros_like(p) for p in m.parameters()], TrainConfig(), 0)
    assert all(np.array_equal(a, b) for a, b in zip(before, m.parameters()))


def test_adam_quadratic_descends():
    m = _model([Dense(1, 1)], (1,))
    i, name, _ = next(m.named_parameters())
    m.set_parameter(i, name, np.ones((1, 1)))
    W = m.layers[0].params["W"]
    last = 1.0
    for _ in range(50):
        adam_step(m, [2 * W.copy(), np.zeros(1)], TrainConfig(), 0)
        assert abs(W[0, 0]) < last
        last = abs(W[0, 0])


def test_schedule():
    c = TrainConfig()
    assert c.rate(0) == 1e-3 and c.rate(99) == 1e-3
    assert c.rate(100) == 1e-3 * 0.9
    assert c.rate(250) == pytest.approx(1e-3 * 0.81)
    # a first step with unit gradient moves the parameter by exactly the rate
    m = _model([Dense(1, 1)], (1,))
    w0 = m.layers[0].params["W"].copy()
    adam_step(m, [np.ones((1, 1)), np.ones(1)], TrainConfig(eps=0.0), 100)
    assert (w0 - m.layers[0].params["W"])[0, 0] == pytest.approx(9e-4, rel=1e-12)


def test_adam_errors():
    m = _model([Dense(3, 2)], (3,))
    with pytest.raises(DivergenceError, match="divergence"):
        adam_step(m, [np.full_like(p, np.nan) for p in m.parameters()], TrainConfig(), 0)
    with pytest.raises(ValueError):
        adam_step(m, [np.zeros(1)], TrainConfig(), 0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)


def test_training_is_deterministic(rng):
    x = rng.normal(size=(40, 8, 8))
    y = rng.normal(size=(40, 3))
    cfg = TrainConfig(epochs=3, batch_size=8, seed=5)
    runs = []
    for _ in range(2):
        m = nnet.resnet(input_size=8, width=2, blocks=2, seed=7)
        h = nnet.fit(m, x, y, l2_loss, cfg)
        runs.append((h, [p.copy() for p in m.parameters()]))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


def test_frozen_batch_loss_non_increasing():
    passed = 0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(16, 8, 8))
        y = rng.normal(size=(16, 3))
        m = nnet.resnet(input_size=8, width=4, blocks=2, seed=seed, dtype=np.float64)
        losses = [nnet.train_step(m, x, y, l2_loss, TrainConfig(), 0) for _ in range(11)]
        passed += all(b <= a for a, b in zip(losses, losses[1:]))
    assert passed >= 4


def test_epoch_sampling_per_model():
    ids = np.repeat([0, 1, 2], [50, 5, 20])
    order = nnet.epoch_indices(np.random.default_rng(0), ids, 10)
    assert len(order) == 25 and len(set(order)) == 25
    assert np.bincount(ids[order]).tolist() == [10, 5, 10]


def test_checkpoint_round_trip(tmp_path, rng):
    m = nnet.resnet(input_size=16, width=3, blocks=2, head="gap")
    nnet.fit(m, rng.normal(size=(8, 16, 16)), rng.normal(size=(8, 3)), l2_loss, TrainConfig(epochs=1, batch_size=4))
    nnet.save_model(m, tmp_path / "m.npz")
    m2 = nnet.load_model(tmp_path / "m.npz")
    assert m2.topology() == m.topology() and m2.step == m.step and m2.meta == m.meta
    for a, b in zip(m.parameters() + m.m + m.v, m2.parameters() + m2.m + m2.v):
        assert a.dtype == b.dtype and np.array_equal(a, b)
    x = rng.normal(size=(4, 16, 16))
    assert np.array_equal(m.predict(x), m2.predict(x))
    nnet.save_model(m2, tmp_path / "m2.npz")
    with np.load(tmp_path / "m.npz") as z1, np.load(tmp_path / "m2.npz") as z2:
        assert sorted(z1.files) == sorted(z2.files)
        assert all(np.array_equal(z1[k], z2[k]) for k in z1.files)
