import numpy as np
import pytest

from icsort import classify
from icsort.errors import TrainingError


def segment_residual(point, a, b):
    """Distance from point to segment [a, b]."""
    v = b - a
    t = np.clip(np.dot(point - a, v) / max(np.dot(v, v), 1e-300), 0, 1)
    return np.linalg.norm(point - (a + t * v))


def blobs(n=30, margin=2.0, seed=0, d=2):
    rng = np.random.default_rng(seed)
    neg = rng.normal(size=(n, d)) * 0.3 - margin
    pos = rng.normal(size=(n, d)) * 0.3 + margin
    X = np.vstack([neg, pos])
    y = np.array([0] * n + [1] * n)
    return X, y


class TestSmote:
    def test_segment_interpolation(self):
        minority = np.array([[0.0, 0.0], [1.0, 1.0]])
        syn = classify.smote_oversample(minority, 12, k=1, seed=3)
        assert syn.shape == (10, 2)
        assert np.allclose(syn[:, 0], syn[:, 1])
        assert (syn >= 0).all() and (syn <= 1).all()

    def test_target_arithmetic(self):
        rng = np.random.default_rng(1)
        minority = rng.normal(size=(5, 3))
        syn = classify.smote_oversample(minority, 40, k=3, seed=0)
        assert len(syn) == 35

    def test_synthetic_points_on_minority_segments(self):
        rng = np.random.default_rng(2)
        minority = rng.normal(size=(12, 4))
        syn = classify.smote_oversample(minority, 112, k=5, seed=9)
        for s in syn:
            best = min(
                segment_residual(s, minority[i], minority[j])
                for i in range(len(minority))
                for j in range(len(minority))
                if i != j
            )
            assert best < 1e-12

    def test_seed_reproducibility(self):
        rng = np.random.default_rng(4)
        minority = rng.normal(size=(8, 2))
        a = classify.smote_oversample(minority, 50, k=3, seed=77)
        b = classify.smote_oversample(minority, 50, k=3, seed=77)
        assert np.array_equal(a, b)

    def test_too_small_minority(self):
        with pytest.raises(TrainingError):
            classify.smote_oversample(np.zeros((1, 2)), 10, k=1, seed=0)

    def test_k_clamped_with_warning(self):
        minority = np.random.default_rng(5).normal(size=(3, 2))
        with pytest.warns(UserWarning, match="clamped"):
            classify.smote_oversample(minority, 9, k=10, seed=0)

    def test_balance_with_smote_equalizes(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(60, 3))
        y = np.array([0] * 40 + [1] * 15 + [2] * 5)
        Xb, yb = classify.balance_with_smote(X, y, k=3, seed=0)
        counts = np.bincount(yb)
        assert (counts == 40).all()


class TestStandardizer:
    def test_zero_mean_unit_sd(self):
        rng = np.random.default_rng(7)
        X = rng.normal(3.0, 5.0, size=(200, 4))
        std = classify.Standardizer.fit(X)
        Z = std.transform(X)
        assert np.abs(Z.mean(axis=0)).max() < 1e-9
        assert np.abs(Z.std(axis=0) - 1).max() < 1e-9

    def test_constant_feature_passthrough(self):
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        std = classify.Standardizer.fit(X)
        Z = std.transform(X)
        assert np.allclose(Z[:, 0], 0.0)


class TestSvm:
    def test_separable_blobs_perfect(self):
        X, y = blobs()
        model = classify.train_svm(X, y, C=1.0, seed=0)
        labels, _ = classify.predict_posterior(model, X)
        assert (labels == y).all()
        assert model.diagnostics["gap"] <= 1e-6 * (1 + abs(model.diagnostics["primal"]))

    def test_duplicated_data_same_boundary(self):
        X, y = blobs()
        m1 = classify.train_svm(X, y, C=1.0, seed=0)
        m2 = classify.train_svm(np.vstack([X, X]), np.concatenate([y, y]), C=1.0, seed=0)
        n1 = np.linalg.norm(m1.w)
        n2 = np.linalg.norm(m2.w)
        assert np.abs(m1.w / n1 - m2.w / n2).max() < 1e-6
        assert abs(m1.b / n1 - m2.b / n2) < 1e-6

    def test_posterior_monotone_in_decision(self):
        X, y = blobs(seed=3)
        model = classify.train_svm(X, y)
        f = np.linspace(-3, 3, 50)
        p = classify._platt_transform(f, model.platt_a, model.platt_b)
        assert (np.diff(p) > 0).all()

    def test_boundary_tie_goes_to_rsn(self):
        model = classify.SvmModel(w=np.array([1.0, 0.0]), b=0.0, C=1.0, platt_a=-2.0, platt_b=0.0)
        labels, _ = classify.predict_posterior(model, np.array([[0.0, 5.0]]))
        assert labels[0] == 0

    def test_label_consistency_with_sign(self):
        X, y = blobs(seed=8)
        model = classify.train_svm(X, y)
        f = model.decision_values(X)
        labels, p = classify.predict_posterior(model, X)
        assert ((f > 0) == (labels == 1)).all()

    def test_far_positive_point_confident(self):
        X, y = blobs(seed=9)
        model = classify.train_svm(X, y)
        far = np.array([[10.0, 10.0]])
        labels, p = classify.predict_posterior(model, far)
        assert labels[0] == 1 and p[0] > 0.9

    def test_platt_agrees_with_sign_on_margined_points(self):
        X, y = blobs(seed=10)
        model = classify.train_svm(X, y)
        f = model.decision_values(X)
        _, p = classify.predict_posterior(model, X)
        clear = np.abs(f) > 0.5
        assert ((p[clear] > 0.5) == (f[clear] > 0)).all()

    def test_decision_affine_in_features(self):
        model = classify.SvmModel(
            w=np.array([2.0, -1.0]), b=0.5, C=1.0, platt_a=-1.0, platt_b=0.0
        )
        x = np.array([[1.5, 2.5]])
        for alpha in (0.0, 0.5, 2.0, -3.0):
            expected = float((alpha * x[0]) @ model.w + model.b)
            assert model.decision_values(alpha * x)[0] == pytest.approx(expected, abs=1e-15)

    def test_single_class_rejected(self):
        X, _ = blobs()
        with pytest.raises(TrainingError):
            classify.train_svm(X, np.zeros(len(X), dtype=int))

    def test_iteration_cap_reports_diagnostics(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(60, 2))
        y = (rng.random(60) > 0.5).astype(int)  # unstructured: needs many passes
        with pytest.raises(TrainingError, match="gap="):
            classify.train_svm(X, y, max_iter=3)

    def test_non_finite_features_rejected(self):
        model = classify.SvmModel(w=np.ones(2), b=0.0, C=1.0, platt_a=-1.0, platt_b=0.0)
        with pytest.raises(ValueError):
            classify.predict_posterior(model, np.array([[np.nan, 1.0]]))


class TestSvmPersistence:
    def test_round_trip_identity(self, tmp_path):
        X, y = blobs(seed=11)
        std = classify.Standardizer.fit(X)
        model = classify.train_svm(std.transform(X), y, standardizer=std)
        path = classify.save_svm_model(model, tmp_path / "m.json", classify.FEATURE_NAMES[:2])
        loaded = classify.load_svm_model(path)
        assert np.array_equal(loaded.w, model.w)
        assert loaded.b == model.b
        assert (loaded.platt_a, loaded.platt_b) == (model.platt_a, model.platt_b)
        assert np.array_equal(loaded.standardizer.mean, model.standardizer.mean)
        l1, p1 = classify.predict_posterior(model, X)
        l2, p2 = classify.predict_posterior(loaded, X)
        assert np.array_equal(l1, l2) and np.array_equal(p1, p2)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format_version": 99}')
        from icsort.errors import ModelFormatError

        with pytest.raises(ModelFormatError):
            classify.load_svm_model(path)


class TestLsSvm:
    def three_blobs(self, n=20, seed=0):
        rng = np.random.default_rng(seed)
        X = np.vstack(
            [
                rng.normal(size=(n, 2)) * 0.3 + (0, 4),
                rng.normal(size=(n, 2)) * 0.3 + (-4, -2),
                rng.normal(size=(n, 2)) * 0.3 + (4, -2),
            ]
        )
        y = np.repeat([0, 1, 2], n)
        return X, y

    def test_three_blobs_perfect(self):
        X, y = self.three_blobs()
        model = classify.train_ls_svm_baseline(X, y, gamma=1.0, seed=0)
        assert (model.predict(X) == y).all()

    def test_linear_system_residual(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(25, 3))
        y = np.where(rng.random(25) > 0.5, 1.0, -1.0)
        gamma = 2.0
        alpha, b = classify.solve_ls_svm(X, y, gamma, low_rank=True)
        K = X @ X.T
        residual_top = abs(alpha.sum())
        residual_main = np.abs((K + np.eye(len(y)) / gamma) @ alpha + b - y).max()
        assert residual_top < 1e-8
        assert residual_main < 1e-8

    def test_woodbury_matches_direct_solve(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(18, 4))
        y = np.where(rng.random(18) > 0.4, 1.0, -1.0)
        a1, b1 = classify.solve_ls_svm(X, y, 1.5, low_rank=True)
        a2, b2 = classify.solve_ls_svm(X @ X.T, y, 1.5, low_rank=False)
        assert np.abs(a1 - a2).max() < 1e-8
        assert abs(b1 - b2) < 1e-8

    def test_binary_subproblem_sign_matches_smo_svm(self):
        X, y = blobs(n=25, seed=5)
        ypm = 2.0 * y - 1
        alpha, bias = classify.solve_ls_svm(X, ypm, 1.0, low_rank=True)
        w = X.T @ alpha
        f_ls = X @ w + bias
        model = classify.train_svm(X, y)
        f_svm = X @ model.w + model.b
        assert (np.sign(f_ls) == np.sign(f_svm)).all()

    def test_needs_three_classes(self):
        X, y = blobs()
        with pytest.raises(TrainingError):
            classify.train_ls_svm_baseline(X, y)

    def test_bad_gamma(self):
        X, y = self.three_blobs()
        with pytest.raises(TrainingError):
            classify.train_ls_svm_baseline(X, y, gamma=0.0)
