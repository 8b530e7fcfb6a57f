import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from fpnormal.metrics import (EvalReport, chamfer, classification_accuracy, error_colors, evaluate, msae, pgp,
                              point_distances, rmse_mean_distance)
from oracles import brute_chamfer, brute_msae, brute_pgp, brute_precision, brute_rmse


def _unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _rot(deg):
    t = np.radians(deg)
    return np.array([np.sin(t), 0, np.cos(t)])


def test_msae_examples(rng):
    n = _unit(rng, 10)
    assert msae(n, n) == 0
    assert msae([[1, 0, 0]], [[0, 0, 1]]) == pytest.approx((np.pi / 2) ** 2)
    flips = np.where(rng.uniform(size=10) < 0.5, -1, 1)[:, None]
    m = _unit(rng, 10)
    assert msae(m * flips, n) == pytest.approx(msae(m, n), abs=1e-15)
    assert msae(m, -n) == pytest.approx(msae(m, n), abs=1e-15)
    with pytest.raises(ValueError):
        msae(n[:3], n[:4])


def test_pgp_examples():
    gt = np.tile([0, 0, 1.0], (4, 1))
    assert pgp(gt, gt, 10) == 1.0
    pred = np.array([_rot(0), _rot(0), _rot(30), _rot(30)])
    assert pgp(pred, gt, 10) == 0.5


def test_rmse_examples():
    a = np.column_stack([np.linspace(0, 1, 1001), np.zeros(1001), np.zeros(1001)])
    assert rmse_mean_distance(a, a) == 0
    h = 0.0137
    assert rmse_mean_distance(a, a + [h, 0, 0]) <= h
    with pytest.raises(ValueError):
        rmse_mean_distance(a, np.zeros((0, 3)))


def test_chamfer_examples(rng):
    a = rng.normal(size=(20, 3))
    assert chamfer(a, a) == 0
    assert chamfer([[0, 0, 0.0]], [[0.3, 0, 0]]) == pytest.approx(2 * 0.09)
    with pytest.raises(ValueError):
        chamfer(a, np.zeros((0, 3)))


def test_accuracy_examples():
    truth = np.zeros(20, bool)
    truth[:9] = True
    assert classification_accuracy(truth, truth) == (1.0, False)
    pred = np.zeros(20, bool)
    pred[:10] = True
    assert classification_accuracy(pred, truth)[0] == pytest.approx(0.9)
    with pytest.warns(UserWarning):
        assert classification_accuracy(np.zeros(20, bool), truth) == (1.0, True)


def test_metrics_match_oracles():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 500))
        p, g = _unit(rng, n), _unit(rng, n)
        assert abs(msae(p, g) - brute_msae(p, g)) < 1e-12
        for tau in (10.0, 20.0, 60.0):
            assert pgp(p, g, tau) == brute_pgp(p, g, tau)
        a = rng.uniform(size=(n, 3))
        b = rng.uniform(size=(int(rng.integers(5, 300)), 3))
        assert abs(rmse_mean_distance(a, b) - brute_rmse(a, b)) < 1e-12
        assert abs(chamfer(a, b) - brute_chamfer(a, b)) < 1e-12
        pred, truth = rng.uniform(size=n) < 0.3, rng.uniform(size=n) < 0.5
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert classification_accuracy(pred, truth)[0] == pytest.approx(brute_precision(pred, truth), abs=1e-15)


@given(st.integers(0, 100_000))
def test_rigid_invariance_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    R = Rotation.random(random_state=seed).as_matrix()
    t = rng.normal(size=3) * 5
    a, b = rng.uniform(size=(40, 3)), rng.uniform(size=(30, 3))
    p, g = _unit(rng, 40), _unit(rng, 40)
    assert abs(chamfer(a, b) - chamfer(a @ R.T + t, b @ R.T + t)) < 1e-9
    assert abs(rmse_mean_distance(a, b) - rmse_mean_distance(a @ R.T + t, b @ R.T + t)) < 1e-9
    assert abs(msae(p, g) - msae(p @ R.T, g @ R.T)) < 1e-9
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-15)


def test_evaluate_report(rng):
    gt = rng.uniform(size=(50, 3))
    n = _unit(rng, 50)
    r = evaluate(gt, gt + 0.001, n, n, np.ones(50, bool), np.ones(50, bool))
    assert r.msae == 0 and r.pgp10 == 1 and r.class_accuracy == 1.0
    assert r.rmse == pytest.approx(np.sqrt(3) * 0.001)
    assert np.allclose(point_distances(gt, gt + 0.001), np.sqrt(3) * 0.001)
    text = r.to_text()
    assert "msae = 0.0" in text and "rmse = " in text and "errors" not in text
    for _, v in r.items():
        assert v >= 0
    assert EvalReport().to_text() == "\n"


def test_error_colors():
    c = error_colors([0.0, 0.5, 1.0, 2.0], vmax=1.0)
    assert c.tolist() == [[0, 0, 255], [128, 0, 128], [255, 0, 0], [255, 0, 0]]
    assert error_colors([0.0, 0.0]).tolist() == [[0, 0, 255], [0, 0, 255]]
