"""Standardization, PCA, and collinearity diagnostics."""

import json

import numpy as np
import pytest

from lsm.reduce import (
    CollinearityReport,
    PcaModel,
    Standardizer,
    _jacobi_eigh,
    collinearity,
    fit_standardizer,
    pca_fit,
    pca_transform,
    select_k,
    with_k,
)


class TestStandardizer:
    def test_hand_case(self):
        X = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]])
        s = fit_standardizer(X)
        np.testing.assert_allclose(s.mean, [3.0, 5.0])
        np.testing.assert_allclose(s.std, [2.0, np.sqrt(13.0)])
        assert not s.degenerate.any()

    def test_transform_centers_and_scales(self):
        rng = np.random.default_rng(8)
        X = rng.normal(3.0, 5.0, size=(200, 6))
        s = fit_standardizer(X)
        Z = s.transform(X)
        assert np.abs(Z.mean(axis=0)).max() < 1e-9
        assert np.abs(Z.var(axis=0, ddof=1) - 1).max() < 1e-9

    def test_zero_variance_column_flagged(self):
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        s = fit_standardizer(X)
        assert s.degenerate.tolist() == [True, False]
        assert s.std[0] == 1.0
        Z = s.transform(X)
        assert (Z[:, 0] == 0).all()

    def test_requires_two_rows_and_finite(self):
        with pytest.raises(ValueError, match="at least 2 rows"):
            fit_standardizer(np.ones((1, 3)))
        with pytest.raises(ValueError, match="non-finite"):
            fit_standardizer(np.array([[1.0, np.nan], [2.0, 3.0]]))

    def test_dict_round_trip(self):
        s = fit_standardizer(np.random.default_rng(0).normal(size=(5, 3)))
        back = Standardizer.from_dict(json.loads(json.dumps(s.to_dict())))
        np.testing.assert_array_equal(back.mean, s.mean)
        np.testing.assert_array_equal(back.std, s.std)


class TestJacobi:
    def test_matches_numpy_eigh(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            n = int(rng.integers(2, 12))
            M = rng.normal(size=(n, n))
            C = (M + M.T) / 2
            vals, vecs = _jacobi_eigh(C)
            order = np.argsort(vals)
            np.testing.assert_allclose(vals[order], np.linalg.eigvalsh(C), atol=1e-10)
            # Eigenvector property, not a comparison against numpy's signs.
            res = C @ vecs - vecs * vals[None, :]
            assert np.abs(res).max() < 1e-10
            assert np.abs(vecs.T @ vecs - np.eye(n)).max() < 1e-12


def fit(X):
    return pca_fit(X, fit_standardizer(X))


class TestPca:
    def test_eigenpair_residual_orthonormality_trace(self):
        rng = np.random.default_rng(42)
        X = rng.normal(size=(200, 10)) @ rng.normal(size=(10, 10))
        m = fit(X)
        Xs = m.standardizer.transform(X)
        C = Xs.T @ Xs / (X.shape[0] - 1)
        res = C @ m.projection - m.projection * m.eigenvalues[None, :]
        assert np.abs(res).max() < 1e-8
        assert np.abs(m.projection.T @ m.projection - np.eye(10)).max() < 1e-8
        assert abs(m.eigenvalues.sum() - np.trace(C)) < 1e-8
        assert (np.diff(m.eigenvalues) <= 1e-12).all()

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(60, 7))
        m = fit(X)
        Xs = m.standardizer.transform(X)
        Z = pca_transform(with_k(m, 7), X)
        np.testing.assert_allclose(Z @ m.projection.T, Xs, atol=1e-6)

    def test_perfectly_correlated_pair(self):
        x = np.linspace(0, 1, 30)
        m = fit(np.column_stack([x, 2 * x + 5]))
        np.testing.assert_allclose(m.eigenvalues, [2.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(m.cum_explained, [1.0, 1.0], atol=1e-9)
        assert select_k(m, 0.9) == 1

    def test_sign_convention(self):
        rng = np.random.default_rng(13)
        m = fit(rng.normal(size=(50, 6)))
        for j in range(6):
            col = m.projection[:, j]
            assert col[np.argmax(np.abs(col))] > 0

    def test_cum_explained_monotone_ends_at_one(self):
        rng = np.random.default_rng(77)
        m = fit(rng.normal(size=(40, 9)))
        assert (np.diff(m.cum_explained) >= -1e-12).all()
        assert abs(m.cum_explained[-1] - 1.0) < 1e-9

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(30, 5))
        a, b = fit(X), fit(X)
        assert (a.projection == b.projection).all()
        assert (a.eigenvalues == b.eigenvalues).all()

    def test_json_round_trip(self):
        m = fit(np.random.default_rng(5).normal(size=(20, 4)))
        back = PcaModel.from_dict(json.loads(json.dumps(m.to_dict())))
        assert (back.projection == m.projection).all()
        assert back.k == m.k

    def test_zero_variance_everywhere_rejected(self):
        with pytest.raises(ValueError, match="variance"):
            fit(np.ones((10, 3)))


class TestSelectK:
    def model_from_spectrum(self, spectrum):
        lam = np.array(spectrum, dtype=float)
        p = lam.size
        return PcaModel(
            np.eye(p), lam, np.cumsum(lam) / lam.sum(), p,
            Standardizer(np.zeros(p), np.ones(p)),
        )

    def test_hand_spectrum(self):
        m = self.model_from_spectrum([0.6, 0.25, 0.10, 0.05])
        assert select_k(m, 0.9) == 3
        assert select_k(m, 0.6) == 1
        assert select_k(m, 1.0) == 4

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(55)
        for _ in range(100):
            lam = np.sort(rng.uniform(0.01, 1.0, size=int(rng.integers(2, 12))))[::-1]
            m = self.model_from_spectrum(lam)
            ks = [select_k(m, t) for t in np.linspace(0.05, 1.0, 20)]
            assert all(a <= b for a, b in zip(ks, ks[1:]))

    def test_threshold_domain(self):
        m = self.model_from_spectrum([0.7, 0.3])
        with pytest.raises(ValueError):
            select_k(m, 0.0)
        with pytest.raises(ValueError):
            select_k(m, 1.5)


def gd_least_squares_r2(y, others, iters=5000):
    """Gradient-descent least squares fit, an oracle independent of the
    normal-equations path."""
    A = np.column_stack([np.ones(y.shape[0]), others])
    col_scale = np.linalg.norm(A, axis=0)
    A = A / col_scale
    beta = np.zeros(A.shape[1])
    L = np.linalg.eigvalsh(A.T @ A).max()
    for _ in range(iters):
        beta -= (A.T @ (A @ beta - y)) / L
    resid = y - A @ beta
    sst = float(((y - y.mean()) ** 2).sum())
    return 1.0 - float(resid @ resid) / sst


class TestCollinearity:
    def engineered(self, r2_target, n=50, seed=0):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=n)
        e = rng.normal(size=n)
        a -= a.mean()
        e -= e.mean()
        e -= (e @ a) / (a @ a) * a
        a /= np.linalg.norm(a)
        e /= np.linalg.norm(e)
        y = np.sqrt(r2_target) * a + np.sqrt(1 - r2_target) * e
        return np.column_stack([y, a])

    def test_engineered_r2(self):
        X = self.engineered(0.733)
        rep = collinearity(X)
        assert rep.r2[0] == pytest.approx(0.733, abs=1e-12)
        assert rep.tolerance[0] == pytest.approx(0.267, abs=1e-12)
        assert rep.vif[0] == pytest.approx(1 / 0.267, abs=1e-9)

    def test_reciprocal_identity(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(50, 5))
        X[:, 4] = X[:, 0] * 0.8 + rng.normal(size=50) * 0.2
        rep = collinearity(X)
        assert not rep.infinite.any()
        np.testing.assert_allclose(rep.vif * rep.tolerance, 1.0, atol=1e-9)

    def test_matches_gradient_descent_oracle(self):
        rng = np.random.default_rng(33)
        X = rng.normal(size=(50, 5))
        rep = collinearity(X)
        for i in range(5):
            want = gd_least_squares_r2(X[:, i], np.delete(X, i, axis=1))
            assert rep.r2[i] == pytest.approx(want, abs=1e-6)

    def test_exact_collinearity_flagged_infinite(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(40, 4))
        X[:, 3] = X[:, 1] + X[:, 2]
        rep = collinearity(X)
        assert rep.infinite[3]
        assert rep.vif[3] >= 1e11
        assert not rep.vif_ok[3]

    def test_threshold_flags(self):
        X = self.engineered(0.95)  # tolerance 0.05 < 0.1, vif 20 > 10
        rep = collinearity(X)
        assert not rep.tolerance_ok[0]
        assert not rep.vif_ok[0]
        ok = collinearity(np.random.default_rng(4).normal(size=(60, 3)))
        assert ok.tolerance_ok.all() and ok.vif_ok.all()

    def test_requires_more_rows_than_features(self):
        with pytest.raises(ValueError, match="more rows"):
            collinearity(np.random.default_rng(0).normal(size=(4, 4)))
        with pytest.raises(ValueError, match="2 features"):
            collinearity(np.random.default_rng(0).normal(size=(10, 1)))

    def test_csv_and_dict(self, tmp_path):
        rep = collinearity(np.random.default_rng(6).normal(size=(30, 3)), names=["a", "b", "c"])
        p = tmp_path / "vif.csv"
        rep.to_csv(str(p))
        lines = p.read_text().splitlines()
        assert lines[0] == "feature,r2,tolerance,vif,infinite,tolerance_ok,vif_ok"
        assert len(lines) == 4 and lines[1].startswith("a,")
        d = json.loads(json.dumps(rep.to_dict()))
        assert d["names"] == ["a", "b", "c"]
        assert len(d["vif"]) == 3
