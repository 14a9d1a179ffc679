import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pztrigger import modelsel, svm
from pztrigger.errors import DataFormatError, InvalidArgument

XOR = svm.LabeledDataset([[0, 0], [1, 1], [0, 1], [1, 0]], [1, 1, -1, -1])


def blobs(n, sep, seed, d=2):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(sep / 2, 1, (n, d)), rng.normal(-sep / 2, 1, (n, d))])
    y = np.r_[np.ones(n, int), -np.ones(n, int)]
    return svm.LabeledDataset(X, y)


def test_kernel_examples():
    x = np.array([0.3, -1.2, 4.0])
    assert svm.rbf_kernel(x, x, 0.5) == 1.0
    z = x + np.array([1.0, 1.0, 0.0])  # squared distance 2
    assert svm.rbf_kernel(x, z, 1.07) == pytest.approx(0.11765, abs=5e-6)
    assert svm.rbf_kernel(x, z, 1.07) == pytest.approx(math.exp(-2.14), rel=1e-14)
    with pytest.raises(InvalidArgument):
        svm.rbf_kernel(x, x[:2], 1.0)
    with pytest.raises(InvalidArgument):
        svm.rbf_kernel(x, x, 0.0)


@settings(max_examples=100)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(1e-3, 10))
def test_kernel_symmetric_and_bounded(x, z, g):
    k = svm.rbf_kernel(x, z, g)
    assert k == svm.rbf_kernel(z, x, g)
    assert 0 <= k <= 1


def test_kernel_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(5, 4)), rng.normal(size=(3, 4))
    K = svm.rbf_matrix(A, B, 0.7)
    for i in range(5):
        for j in range(3):
            assert K[i, j] == pytest.approx(svm.rbf_kernel(A[i], B[j], 0.7), rel=1e-12)


def test_gram_min_eigenvalue_nonnegative():
    rng = np.random.default_rng(5)
    for _ in range(5):
        n = int(rng.integers(5, 51))
        X = rng.normal(size=(n, 3))
        K = svm.rbf_matrix(X, X, float(rng.uniform(0.05, 5)))
        lam = svm.min_eigenvalue(K)
        assert lam >= -1e-9
        assert lam == pytest.approx(np.linalg.eigvalsh(K).min(), abs=1e-6)


def test_two_point_symmetry():
    data = svm.LabeledDataset([[0.0], [2.0]], [1, -1])
    m = svm.train_smo(data, 10.0, 1.0)
    assert svm.decision_value(m, [1.0]) == pytest.approx(0.0, abs=1e-9)
    assert svm.decision_value(m, [0.9]) > 0 > svm.decision_value(m, [1.1])
    qp = svm.brute_force_qp(data, 10.0, 1.0)
    assert qp.alpha[0] == pytest.approx(qp.alpha[1], rel=1e-9)
    assert np.all(qp.alpha <= 10.0)


def test_xor():
    m = svm.train_smo(XOR, 1000.0, 1.0)
    assert m.converged
    assert m.n_support == 4
    assert np.all(svm.predict_many(m, XOR.X) == XOR.y)
    assert svm.decision_value(m, [0.5, 0.5]) == pytest.approx(0.0, abs=1e-6)
    qp = svm.brute_force_qp(XOR, 1000.0, 1.0)
    assert svm.dual_objective(m.alpha, XOR.X, XOR.y, 1.0) == pytest.approx(qp.objective, abs=1e-6)


def test_margin_vectors_sit_on_margin():
    data = blobs(30, 2.0, 1)
    m = svm.train_smo(data, 5.0, 0.5)
    free = (m.alpha > 1e-8) & (m.alpha < m.C - 1e-8)
    assert free.any()
    f = svm.decision_values(m, data.X[free])
    assert np.all(np.abs(data.y[free] * f - 1.0) <= 10 * m.tol)


def test_far_point_gives_bias():
    m = svm.train_smo(blobs(20, 3.0, 2), 1.0, 1.0)
    assert svm.decision_value(m, [1e3, 1e3]) == pytest.approx(m.bias, abs=1e-6)


def test_prediction_tie_break():
    m = svm.SvmModel(1.0, 1.0, np.zeros((1, 1)), np.array([1.0]), 0.0)
    assert svm.sign_label(2.3) == 1
    assert svm.sign_label(-0.001) == -1
    assert svm.sign_label(0.0) == 1
    m0 = svm.SvmModel(1.0, 1.0, np.zeros((1, 1)), np.array([0.0]), 0.0)
    assert svm.decision_value(m0, [0.5]) == 0.0
    assert svm.predict(m0, [0.5]) == 1
    with pytest.raises(InvalidArgument):
        svm.decision_value(m, [1.0, 2.0])


@pytest.mark.parametrize("seed", range(5))
def test_feasibility_and_kkt(seed):
    data = blobs(25, 1.0, seed, d=3)
    tol = 1e-3
    m = svm.train_smo(data, 3.0, 0.3, tol=tol, seed=seed)
    assert m.converged
    a = m.alpha
    assert np.all(a >= 0) and np.all(a <= m.C)
    assert abs(a @ data.y) <= tol * m.C * len(data)
    assert np.all(np.abs(m.dual_coeffs) <= m.C)
    assert abs(m.dual_coeffs.sum()) <= tol * m.C * len(data)
    assert svm.kkt_violations(m, data).max() <= tol
    assert m.n_support == int((a > 0).sum())


def test_tiny_C_pins_alphas():
    data = blobs(6, 0.5, 3)
    qp = svm.brute_force_qp(data, 1e-9, 1.0)
    assert np.all(qp.alpha >= 0) and np.all(qp.alpha <= 1e-9)
    m = svm.train_smo(data, 1e-9, 1.0)
    f = svm.decision_values(m, data.X)
    # the kernel sum is bounded by sum(alpha) <= n C, so f collapses onto b
    assert np.all(np.abs(f - m.bias) <= len(data) * 1e-9)


def test_training_is_deterministic():
    data = blobs(40, 1.0, 9)
    a = svm.train_smo(data, 2.0, 0.5, seed=3).to_json()
    b = svm.train_smo(data, 2.0, 0.5, seed=3).to_json()
    assert a == b


def test_training_errors():
    one_class = svm.LabeledDataset([[0.0], [1.0]], [1, 1])
    with pytest.raises(InvalidArgument):
        svm.train_smo(one_class, 1.0, 1.0)
    with pytest.raises(InvalidArgument):
        svm.train_smo(XOR, 1.0, 1.0, tol=0.1)
    with pytest.raises(InvalidArgument):
        svm.train_smo(XOR, -1.0, 1.0)
    with pytest.raises(InvalidArgument):
        svm.LabeledDataset([[0.0]], [0])
    with pytest.raises(InvalidArgument):
        svm.brute_force_qp(blobs(7, 1.0, 0), 1.0, 1.0)


def test_non_convergence_is_flagged():
    m = svm.train_smo(blobs(30, 0.2, 4), 1e4, 5.0, tol=1e-6, max_iter=3)
    assert not m.converged
    assert m.iterations == 3


def test_model_json_round_trip():
    data = blobs(20, 2.0, 6)
    norm = modelsel.zscore_fit(data.X)
    m = svm.train_smo(svm.LabeledDataset(norm.apply(data.X), data.y), 1.5, 0.25,
                      normalizer=norm)
    text = m.to_json()
    back = svm.SvmModel.from_json(text)
    assert back.to_json() == text
    assert np.array_equal(svm.decision_values(back, data.X, raw=True),
                          svm.decision_values(m, data.X, raw=True))
    with pytest.raises(DataFormatError):
        svm.SvmModel.from_json('{"version": 2, "kernel": "rbf"}')
    with pytest.raises(DataFormatError):
        svm.SvmModel.from_json('{"version": 1, "kernel": "rbf"}')


def test_smo_large_n_uses_row_cache(monkeypatch):
    data = blobs(60, 1.5, 8)
    dense = svm.train_smo(data, 1.0, 0.5)
    monkeypatch.setattr(svm, "FULL_GRAM_LIMIT", 10)
    cached = svm.train_smo(data, 1.0, 0.5)
    assert np.allclose(cached.alpha, dense.alpha, atol=1e-9)
