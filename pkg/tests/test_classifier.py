import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egotraj.classifier import (TrainConfig, apply_scaling, chi2_distance, chi2_gram, chi2_kernel,
                                decision_values, dual_objective, fit_scaling, kkt_gap, load_model, predict,
                                predict_many, save_model, stratified_folds, train_ovr)
from egotraj.errors import InputError
from egotraj.kernels import chi2_distance_matrix, smo_solve


def separable_blobs(n=200, d=20, seed=0, shift=1.5):
    rng = np.random.default_rng(seed)
    a = rng.normal(2.0, 0.3, size=(n // 2, d))
    b = rng.normal(2.0, 0.3, size=(n // 2, d))
    b[:, : d // 2] += shift
    X = np.clip(np.concatenate([a, b]), 0.0, None)
    return X, ["a"] * (n // 2) + ["b"] * (n // 2)


def random_hists(n, d, rng):
    H = rng.random((n, d)) * (rng.random((n, d)) < 0.5)
    s = H.sum(axis=1, keepdims=True)
    return np.divide(H, s, out=np.zeros_like(H), where=s > 0)


@pytest.fixture(scope="module")
def blob_model():
    X, y = separable_blobs()
    return train_ovr(X, y), X, y


# -- kernel ---------------------------------------------------------------------

def test_kernel_examples():
    assert chi2_distance([1, 0], [0, 1]) == pytest.approx(2.0)
    assert chi2_kernel([1, 0], [0, 1], 1.0) == pytest.approx(math.exp(-2), abs=1e-9)
    x = np.random.default_rng(0).random(30)
    assert chi2_kernel(x, x, 3.0) == 1.0
    with pytest.raises(InputError):
        chi2_distance([1, 2], [1, 2, 3])
    with pytest.raises(InputError):
        chi2_distance([-1, 2], [1, 2])


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_kernel_symmetry(seed):
    rng = np.random.default_rng(seed)
    x, y = random_hists(2, 16, rng)
    assert chi2_kernel(x, y, 0.7) == chi2_kernel(y, x, 0.7)


def test_distance_matrix_matches_pairwise():
    rng = np.random.default_rng(1)
    X, Y = random_hists(7, 12, rng), random_hists(5, 12, rng)
    D = chi2_distance_matrix(X, Y)
    want = np.array([[chi2_distance(x, y) for y in Y] for x in X])
    np.testing.assert_allclose(D, want, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_gram_is_psd(seed):
    rng = np.random.default_rng(seed)
    X = random_hists(50, 40, rng)
    K = chi2_gram(X, X, 1.0 / chi2_distance_matrix(X, X).mean())
    assert np.linalg.eigvalsh(K).min() >= -1e-8


# -- SMO ------------------------------------------------------------------------

def test_smo_kkt_and_box(blob_model):
    X, y = separable_blobs(seed=3)
    yy = np.where(np.array(y) == "a", 1.0, -1.0)
    D = chi2_distance_matrix(X, X)
    K = np.exp(-D / D.mean())
    for C in (0.1, 1.0, 100.0):
        alpha, rho, it = smo_solve(K, yy, C, 1e-3, 1_000_000)
        assert (alpha >= 0).all() and (alpha <= C).all()
        assert abs(alpha @ yy) <= 1e-9
        assert kkt_gap(alpha, yy, K, C) <= 1e-3


def test_smo_objective_non_decreasing():
    rng = np.random.default_rng(7)
    X = random_hists(40, 10, rng)
    y = np.where(rng.random(40) < 0.5, 1.0, -1.0)
    K = chi2_gram(X, X, 1.0)
    prev = -np.inf
    for steps in range(1, 60):
        alpha, _, _ = smo_solve(K, y, 10.0, 1e-3, steps)
        obj = dual_objective(alpha, y, K)
        assert obj >= prev - 1e-12
        prev = obj


# -- training -------------------------------------------------------------------

def test_blobs_cv_and_training_accuracy(blob_model):
    model, X, y = blob_model
    assert max(model.cv_scores.values()) >= 0.95
    labels, _ = predict_many(model, X)
    assert labels == y
    assert predict(model, X[3])[0] == "a"
    for m in model.machines:
        assert len(m.sv) >= 1
        assert (np.abs(m.coef) <= model.C + 1e-12).all()


def test_two_class_machines_have_opposite_sign(blob_model):
    model, X, _ = blob_model
    probe = np.clip(np.random.default_rng(9).normal(2.5, 0.6, size=(30, 20)), 0, None)
    s = decision_values(model, probe)
    np.testing.assert_allclose(s[:, 0], -s[:, 1], atol=1e-6)


def test_identical_points_are_a_coin_flip():
    X = np.tile([[0.2, 0.8]], (6, 1))
    model = train_ovr(X, ["a", "b"] * 3, TrainConfig(folds=2))
    for acc in model.cv_scores.values():
        assert abs(acc - 0.5) <= 0.1


def test_training_is_deterministic():
    X, y = separable_blobs(n=80, seed=5, shift=0.4)
    a, b = train_ovr(X, y), train_ovr(X, y)
    assert a.C == b.C and a.gamma == b.gamma
    probe = X[::7] + 0.05
    assert np.array_equal(decision_values(a, probe), decision_values(b, probe))


def test_symmetric_midpoint_is_near_tie():
    rng = np.random.default_rng(11)
    A = np.clip(rng.normal(1.0, 0.2, size=(40, 6)) + [1.5, 1.0, 0.5, 0, 0, 0], 0, None)
    B = A[:, ::-1]  # mirror image under the coordinate reversal
    model = train_ovr(np.concatenate([A, B]), ["a"] * 40 + ["b"] * 40)
    mid = 0.5 * (A.mean(axis=0) + B.mean(axis=0))
    fa, fb = decision_values(model, mid)[0]
    scale = np.abs(decision_values(model, np.concatenate([A, B]))).max()
    assert abs(fa - fb) <= 0.1 * scale
    # with two classes the machines are mirrors, so the tie sits at zero
    assert abs(fa) <= 0.05 * scale


def test_argmax_shift_invariance(blob_model):
    model, X, _ = blob_model
    s = decision_values(model, X[:10])
    assert (np.argmax(s + 3.7, axis=1) == np.argmax(s, axis=1)).all()


def test_training_errors():
    X = np.random.default_rng(0).random((6, 3))
    with pytest.raises(InputError):
        train_ovr(X, ["a"] * 6)
    with pytest.raises(InputError):
        train_ovr(X, ["a"] * 5 + ["b"])
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(InputError):
        train_ovr(bad, ["a", "b"] * 3)
    with pytest.raises(InputError):
        train_ovr(X, ["a", "b"] * 2)
    with pytest.raises(InputError):
        TrainConfig(folds=1)
    with pytest.raises(InputError):
        TrainConfig(c_grid=())


def test_scaling_maps_to_unit_interval():
    X = np.array([[0.1, -3.0, 5.0], [0.2, 1.0, 5.0], [0.3, 2.0, 5.0]])
    lo, hi = fit_scaling(X, [1, 2])
    S = apply_scaling(X, [1, 2], lo, hi)
    np.testing.assert_allclose(S[:, 1], [0, 0.8, 1])
    np.testing.assert_allclose(S[:, 2], 0)
    np.testing.assert_array_equal(S[:, 0], X[:, 0])
    out = apply_scaling([[0.0, 10.0, 5.0]], [1, 2], lo, hi)
    assert out[0, 1] == 1.0


def test_stratified_folds_balance():
    y = np.array([0] * 10 + [1] * 6)
    f = stratified_folds(y, 4, 0)
    for k in range(4):
        assert np.sum((f == k) & (y == 0)) in (2, 3)
        assert np.sum((f == k) & (y == 1)) in (1, 2)


def test_three_class_model_and_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    centers = np.array([[3, 1, 1, 1], [1, 3, 1, 1], [1, 1, 3, 1]], dtype=float)
    X = np.concatenate([np.clip(c + 0.2 * rng.normal(size=(15, 4)), 0, None) for c in centers])
    X = np.column_stack([X, rng.normal(size=45) * 10])  # one unbounded global column
    y = ["pour"] * 15 + ["stir"] * 15 + ["take"] * 15
    model = train_ovr(X, y, global_cols=[4])
    assert model.classes == ["pour", "stir", "take"]
    assert predict_many(model, X)[0] == y
    save_model(tmp_path / "m.svm", model)
    assert (tmp_path / "m.svm").read_bytes()[:4] == b"SVM1"
    back = load_model(tmp_path / "m.svm")
    assert back.classes == model.classes and back.C == model.C and back.gamma == model.gamma
    assert back.cv_scores == model.cv_scores
    np.testing.assert_array_equal(decision_values(back, X), decision_values(model, X))
    with pytest.raises(InputError):
        decision_values(back, X[:, :3])
    raw = (tmp_path / "m.svm").read_bytes()
    (tmp_path / "t.svm").write_bytes(raw[:-8])
    with pytest.raises(InputError):
        load_model(tmp_path / "t.svm")
