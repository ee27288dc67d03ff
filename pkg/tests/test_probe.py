import numpy as np
import pytest

from negharvest.probe import LogisticProbe, ProbeError, loss_and_gradient


class TestLogisticProbe:
    def test_separable_toy_perfect_accuracy(self):
        rng = np.random.default_rng(0)
        X = np.concatenate([rng.normal(5.0, 0.3, 40),
                            rng.normal(-5.0, 0.3, 40)]).reshape(-1, 1)
        y = np.concatenate([np.ones(40), np.zeros(40)])
        probe = LogisticProbe().fit(X, y)
        assert (probe.predict(X) == y).all()

    def test_weight_rescaling_leaves_fit_unchanged(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((60, 3))
        y = (X[:, 0] + 0.2 * rng.standard_normal(60) > 0).astype(float)
        w = rng.uniform(0.5, 2.0, size=60)
        a = LogisticProbe().fit(X, y, sample_weight=w)
        b = LogisticProbe().fit(X, y, sample_weight=2.0 * w)
        np.testing.assert_allclose(a.coef_, b.coef_, rtol=1e-12)
        np.testing.assert_allclose(a.intercept_, b.intercept_, rtol=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ProbeError):
            LogisticProbe().fit(np.zeros((5, 1)) + np.arange(5).reshape(5, 1),
                                np.ones(5))

    def test_nonbinary_labels_rejected(self):
        with pytest.raises(ProbeError):
            LogisticProbe().fit(np.zeros((3, 1)), np.array([0.0, 1.0, 2.0]))

    def test_nonpositive_weights_rejected(self):
        with pytest.raises(ProbeError):
            LogisticProbe().fit(np.arange(4.0).reshape(4, 1),
                                np.array([0.0, 1.0, 0.0, 1.0]),
                                sample_weight=np.array([1.0, 0.0, 1.0, 1.0]))

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((80, 4))
        y = (X @ np.array([1.0, -2.0, 0.5, 0.0]) > 0).astype(float)
        a = LogisticProbe().fit(X, y)
        b = LogisticProbe().fit(X.copy(), y.copy())
        np.testing.assert_array_equal(a.coef_, b.coef_)

    def test_probabilities_in_unit_interval(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((50, 2))
        y = (X[:, 0] > 0).astype(float)
        p = LogisticProbe().fit(X, y).predict_proba(X)
        assert ((p > 0) & (p < 1)).all()


class TestGradient:
    def finite_difference(self, params, X, y, w, h=1e-6):
        grad = np.zeros_like(params)
        for i in range(params.size):
            up, down = params.copy(), params.copy()
            up[i] += h
            down[i] -= h
            grad[i] = (loss_and_gradient(up, X, y, w)[0]
                       - loss_and_gradient(down, X, y, w)[0]) / (2 * h)
        return grad

    def test_matches_central_differences_at_random_points(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((40, 3))
        y = (rng.random(40) > 0.5).astype(float)
        w = rng.uniform(0.5, 2.0, size=40)
        worst = 0.0
        for _ in range(5):
            params = rng.standard_normal(4)
            _, analytic = loss_and_gradient(params, X, y, w)
            numeric = self.finite_difference(params, X, y, w)
            rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
            worst = max(worst, float(rel.max()))
        assert worst < 1e-5
