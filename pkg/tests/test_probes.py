import numpy as np
import pytest

from probefuse import (FeatureBank, NumericalError, ProbeEnsemble, ProbeModel,
                       TrainConfig, ce_loss_and_grad, ensemble_from_json,
                       ensemble_to_json, load_ensemble, one_hot, predict_all,
                       probe_forward, save_ensemble, train_probe)
from probefuse.probes import EPS_LOG

from helpers import blob_bank, make_random_bank


def random_model(rng, dim, c, scale=1.0):
    return ProbeModel(scale * rng.standard_normal((dim, c)),
                      scale * rng.standard_normal(c))


# ---------------------------------------------------------------- forward

def test_zero_model_predicts_uniform():
    model = ProbeModel.zeros(3, 4)
    P = probe_forward(model, np.random.default_rng(0).standard_normal((5, 3)))
    assert np.abs(P - 0.25).max() < 1e-15


def test_bias_shift_invariance():
    rng = np.random.default_rng(1)
    model = random_model(rng, 4, 3)
    shifted = ProbeModel(model.weights, model.bias + 3.7)
    X = rng.standard_normal((6, 4))
    assert np.allclose(probe_forward(model, X), probe_forward(shifted, X),
                       atol=1e-12)


def test_single_feature_logistic():
    model = ProbeModel(np.array([[1.0, -1.0]]), np.zeros(2))
    P = probe_forward(model, np.array([[0.5]]))
    sigma1 = 1.0 / (1.0 + np.exp(-1.0))
    assert abs(P[0, 0] - sigma1) < 1e-12
    assert abs(P[0, 1] - (1.0 - sigma1)) < 1e-12


def test_forward_rows_stochastic_and_positive():
    rng = np.random.default_rng(2)
    for _ in range(10):
        model = random_model(rng, 5, 3, scale=4.0)
        P = probe_forward(model, rng.standard_normal((7, 5)))
        assert np.abs(P.sum(axis=1) - 1.0).max() < 1e-9
        assert P.min() > 0.0


def test_forward_dim_mismatch():
    model = ProbeModel.zeros(3, 2)
    with pytest.raises(ValueError, match="does not match"):
        probe_forward(model, np.zeros((2, 4)))


def test_non_finite_parameters_rejected():
    with pytest.raises(NumericalError):
        ProbeModel(np.array([[np.inf, 0.0]]), np.zeros(2))


# ---------------------------------------------------------------- loss/grad

def test_ce_loss_uniform_prediction_is_log_c():
    c = 5
    model = ProbeModel.zeros(3, c)
    T = one_hot(np.array([0, 2, 4]), c)
    loss, _, _ = ce_loss_and_grad(model, np.zeros((3, 3)), T)
    assert abs(loss - np.log(c)) < 1e-9


def test_ce_grad_vanishes_at_targets_equal_predictions():
    rng = np.random.default_rng(3)
    model = random_model(rng, 4, 3)
    X = rng.standard_normal((8, 4))
    T = probe_forward(model, X)
    _, gw, gb = ce_loss_and_grad(model, X, T, weight_decay=0.0)
    assert np.abs(gb).max() < 1e-9
    # weight gradient also vanishes up to the negligible clamp correction
    assert np.abs(gw).max() < 1e-9


def _fd_check(model, X, T, wd, step=1e-5):
    """Max relative error (Frobenius) between analytic and central-difference grads."""
    _, gw, gb = ce_loss_and_grad(model, X, T, wd)
    num_w = np.zeros_like(model.weights)
    for i in range(model.dim):
        for j in range(model.n_classes):
            wp = model.weights.copy()
            wp[i, j] += step
            lp, _, _ = ce_loss_and_grad(ProbeModel(wp, model.bias), X, T, wd)
            wm = model.weights.copy()
            wm[i, j] -= step
            lm, _, _ = ce_loss_and_grad(ProbeModel(wm, model.bias), X, T, wd)
            num_w[i, j] = (lp - lm) / (2 * step)
    num_b = np.zeros_like(model.bias)
    for j in range(model.n_classes):
        bp = model.bias.copy()
        bp[j] += step
        lp, _, _ = ce_loss_and_grad(ProbeModel(model.weights, bp), X, T, wd)
        bm = model.bias.copy()
        bm[j] -= step
        lm, _, _ = ce_loss_and_grad(ProbeModel(model.weights, bm), X, T, wd)
        num_b[j] = (lp - lm) / (2 * step)
    err_w = np.linalg.norm(num_w - gw) / max(np.linalg.norm(num_w), 1e-12)
    err_b = np.linalg.norm(num_b - gb) / max(np.linalg.norm(num_b), 1e-12)
    return max(err_w, err_b)


def test_ce_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    for seed in range(20):
        model = random_model(rng, 3, 4)
        X = rng.standard_normal((5, 3))
        raw = rng.random((5, 4)) + 1e-2
        T = raw / raw.sum(axis=1, keepdims=True)
        wd = 0.0 if seed % 2 == 0 else 0.05
        assert _fd_check(model, X, T, wd) < 1e-4


# ---------------------------------------------------------------- training

def test_train_separates_gaussian_blobs():
    bank = blob_bank(np.random.default_rng(5), n_per=100, sep=6.0)
    model = train_probe(bank, 0, bank.labels, TrainConfig(epochs=50, seed=0))
    pred = probe_forward(model, bank.features[0]).argmax(axis=1)
    assert np.mean(pred == bank.labels) >= 0.99


def test_train_epochs_zero_returns_zero_model():
    bank = blob_bank(np.random.default_rng(6))
    model = train_probe(bank, 0, bank.labels, TrainConfig(epochs=0))
    assert not model.weights.any()
    assert not model.bias.any()


def test_train_determinism():
    bank = blob_bank(np.random.default_rng(7))
    cfg = TrainConfig(epochs=5, seed=11)
    a = train_probe(bank, 0, bank.labels, cfg)
    b = train_probe(bank, 0, bank.labels, cfg)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.bias, b.bias)


def test_full_batch_small_lr_loss_non_increasing():
    bank = blob_bank(np.random.default_rng(8))
    X = np.asarray(bank.features[0], dtype=np.float64)
    T = one_hot(bank.labels, 2)
    model = ProbeModel.zeros(2, 2)
    losses = []
    for _ in range(30):
        loss, gw, gb = ce_loss_and_grad(model, X, T)
        losses.append(loss)
        model = ProbeModel(model.weights - 1e-3 * gw, model.bias - 1e-3 * gb)
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_standardization_folds_into_returned_model():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((60, 3)) * np.array([50.0, 0.2, 5.0]) + np.array([10.0, -3.0, 0.0])
    labels = rng.integers(0, 2, 60).astype(np.uint16)
    bank = FeatureBank([X.astype(np.float32)], labels=labels, n_classes=2)
    cfg = TrainConfig(epochs=4, seed=3, standardize=True)
    model = train_probe(bank, 0, labels, cfg)

    # oracle: identical loop in explicitly standardized space, no folding
    Xd = np.asarray(bank.features[0], dtype=np.float64)
    mu, sd = Xd.mean(axis=0), Xd.std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    Xs = (Xd - mu) / sd
    ref = ProbeModel.zeros(3, 2)
    T = one_hot(labels, 2)
    gen = np.random.Generator(np.random.PCG64(cfg.seed))
    for _ in range(cfg.epochs):
        perm = gen.permutation(60)
        for start in range(0, 60, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            _, gw, gb = ce_loss_and_grad(ref, Xs[idx], T[idx], cfg.weight_decay)
            ref = ProbeModel(ref.weights - cfg.learning_rate * gw,
                             ref.bias - cfg.learning_rate * gb)
    want = np.asarray(probe_forward(ref, Xs))
    got = probe_forward(model, Xd)
    assert np.allclose(got, want, atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_raises_numerical_error():
    bank = blob_bank(np.random.default_rng(10))
    with pytest.raises(NumericalError, match="epoch"):
        train_probe(bank, 0, bank.labels,
                    TrainConfig(learning_rate=1e18, epochs=30, standardize=False))


def test_train_accepts_soft_targets():
    bank = blob_bank(np.random.default_rng(11), n_per=30)
    T = np.full((60, 2), 0.5)
    model = train_probe(bank, 0, T, TrainConfig(epochs=3))
    assert np.isfinite(model.weights).all()


# ---------------------------------------------------------------- ensembles

def test_predict_all_single_probe_matches_forward():
    bank = blob_bank(np.random.default_rng(12))
    model = train_probe(bank, 0, bank.labels, TrainConfig(epochs=3))
    ann = predict_all(ProbeEnsemble([model]), bank)
    assert ann.shape == (bank.n_samples, 1, 2)
    assert np.array_equal(ann[:, 0, :], probe_forward(model, bank.features[0]))


def test_predict_all_with_original_head():
    rng = np.random.default_rng(13)
    n, c = 10, 3
    feats = [rng.standard_normal((n, 4)).astype(np.float32) for _ in range(6)]
    raw = rng.random((n, c)) + 1e-3
    preds = (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)
    bank = FeatureBank(feats, original_preds=preds,
                       labels=rng.integers(0, c, n).astype(np.uint16))
    probes = [ProbeModel.zeros(4, c, tap_index=t) for t in range(6)]
    ens = ProbeEnsemble(probes, include_original=True)
    assert ens.k == 7
    ann = predict_all(ens, bank)
    assert ann.shape == (n, 7, c)
    assert np.array_equal(ann[:, 0, :], preds.astype(np.float64))
    assert np.abs(ann.sum(axis=2) - 1.0).max() < 1e-6


def test_predict_all_missing_original_preds():
    bank = blob_bank(np.random.default_rng(14))
    ens = ProbeEnsemble([ProbeModel.zeros(2, 2)], include_original=True)
    with pytest.raises(ValueError, match="original_preds"):
        predict_all(ens, bank)


def test_ensemble_json_round_trip_exact():
    rng = np.random.default_rng(15)
    ens = ProbeEnsemble([random_model(rng, 3, 4), random_model(rng, 5, 4)],
                        include_original=True)
    ens.probes[1].tap_index = 1
    back = ensemble_from_json(ensemble_to_json(ens))
    assert back.include_original
    assert back.k == 3
    for p, q in zip(ens.probes, back.probes):
        assert p.tap_index == q.tap_index
        assert np.array_equal(p.weights, q.weights)
        assert np.array_equal(p.bias, q.bias)


def test_ensemble_binary_round_trip_exact(tmp_path):
    rng = np.random.default_rng(16)
    ens = ProbeEnsemble([random_model(rng, 4, 3)])
    path = tmp_path / "ens.bin"
    save_ensemble(ens, path)
    back = load_ensemble(path)
    assert np.array_equal(ens.probes[0].weights, back.probes[0].weights)
    assert np.array_equal(ens.probes[0].bias, back.probes[0].bias)


def test_ensemble_binary_bad_magic(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"PRBE0" + b"\x00" * 16)
    with pytest.raises(ValueError, match="bad magic"):
        load_ensemble(path)


def test_ensemble_binary_trailing_bytes(tmp_path):
    ens = ProbeEnsemble([ProbeModel.zeros(2, 2)])
    path = tmp_path / "t.bin"
    save_ensemble(ens, path)
    path.write_bytes(path.read_bytes() + b"\x01")
    with pytest.raises(ValueError, match="size mismatch"):
        load_ensemble(path)


def test_log_clamp_keeps_loss_finite():
    # extreme logits drive some probabilities to exactly 0 in float64
    model = ProbeModel(np.array([[2000.0, -2000.0]]), np.zeros(2))
    X = np.array([[1.0]])
    T = np.array([[0.0, 1.0]])  # target puts mass on the zero-probability class
    loss, gw, gb = ce_loss_and_grad(model, X, T)
    assert np.isfinite(loss)
    assert abs(loss + np.log(EPS_LOG)) < 1.0  # ~ -log(eps)
    assert np.isfinite(gw).all() and np.isfinite(gb).all()
