from pathlib import Path

import numpy as np
import pytest

import disout_lab as dl

PRESETS = Path(__file__).resolve().parents[2] / "presets"


def surrogate_fc_loop(w, f_hat, sigma, eps, lam):
    n = f_hat.shape[0]
    s = (np.asarray(sigma)[:, None] * f_hat).sum(axis=0)
    return np.abs(w @ s).max() / n, lam / (2 * n) * (eps**2).sum()


def test_surrogate_fc_matches_numpy():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(5, 7))
    f = np.maximum(rng.normal(size=(4, 7)), 0)
    mask = (rng.uniform(size=f.shape) < 0.5).astype(float)
    eps = rng.normal(size=f.shape)
    sigma = [1, -1, -1, 1]
    f_hat = f - mask * eps
    sup, pen = dl.surrogate_fc(w, f_hat, sigma, eps, 0.1)
    ref = surrogate_fc_loop(w, f_hat, sigma, eps, 0.1)
    assert sup == pytest.approx(ref[0], rel=1e-12)
    assert pen == pytest.approx(ref[1], rel=1e-12)


def test_exact_grad_fc_matches_central_differences():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 6))
    f = np.maximum(rng.normal(size=(2, 6)), 0)
    mask = np.ones_like(f)
    eps = rng.normal(size=f.shape)
    sigma = [1, -1]

    def total(e):
        return sum(dl.surrogate_fc(w, f - mask * e, sigma, e, 0.2))

    g = dl.exact_grad_fc(w, f - mask * eps, sigma, mask, eps, 0.2)
    h = 1e-6
    num = np.zeros_like(eps)
    for idx in np.ndindex(eps.shape):
        up, down = eps.copy(), eps.copy()
        up[idx] += h
        down[idx] -= h
        num[idx] = (total(up) - total(down)) / (2 * h)
    np.testing.assert_allclose(g, num, atol=1e-7)


def test_one_by_one_conv_equals_dense():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(4, 3))
    f = np.maximum(rng.normal(size=(5, 3)), 0)
    eps = rng.normal(size=f.shape)
    sigma = [1, 1, -1, 1, -1]
    a = dl.surrogate_fc(w, f, sigma, eps, 0.1)
    b = dl.surrogate_conv(w.reshape(4, 3, 1, 1), f.reshape(5, 3, 1, 1), sigma,
                          eps.reshape(5, 3, 1, 1), 0.1)
    assert a == pytest.approx(b, abs=1e-12)


def test_masks_and_ramp():
    m = dl.element_mask([200000], 0.3, seed=3)
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert abs(m.mean() - 0.3) < 4 * np.sqrt(0.3 * 0.7 / m.size)
    b = dl.block_mask([2, 1, 8, 8], 0.2, 3, seed=3)
    assert b.shape == (2, 1, 8, 8)
    assert dl.ramp_p(0, 100, 0.1) == 0.0
    assert dl.ramp_p(100, 100, 0.1) == pytest.approx(0.1)
    with pytest.raises(dl.ConfigError):
        dl.block_mask([1, 1, 4, 4], 0.2, 5)


def test_gradcheck_and_mask_stats():
    suites = dl.gradcheck(instances=5)
    assert [s["name"] for s in suites] == ["fc", "conv", "backprop"]
    assert all(s["passed"] for s in suites)
    assert not any(s["passed"] for s in dl.gradcheck(instances=3, inject_sign_flip=True))
    st = dl.mask_stats(p=0.3, samples=100000)
    assert abs(st["element_fraction"] - 0.3) <= 4 * st["element_sigma"]


def test_train_writes_a_run(tmp_path):
    out = tmp_path / "run"
    res = dl.train(str(PRESETS / "blobs_mlp.cfg"), str(out),
                   ["train.epochs=2", "regularizer=disout-element"])
    assert res["epochs"] == 2
    assert 0.0 <= res["test_acc"] <= 1.0
    cols = dl.read_metrics(str(out / "metrics.csv"))
    assert cols["epoch"][-1] == 1
    assert cols["test_acc"][-1] == res["test_acc"]
    assert "erc0_before" in cols
    assert (out / "checkpoints" / "final.ckpt").exists()
    snap = (out / "config.cfg").read_text()
    assert "regularizer = disout-element" in snap


def test_errors_map_to_exceptions(tmp_path):
    with pytest.raises(dl.ConfigError):
        dl.config_snapshot(str(PRESETS / "blobs_mlp.cfg"), ["train.epoch=3"])
    with pytest.raises(dl.IoError):
        dl.config_snapshot(str(tmp_path / "missing.cfg"))
    assert issubclass(dl.ConfigError, dl.DisoutError)
