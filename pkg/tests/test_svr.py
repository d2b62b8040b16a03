import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safesteer.grid import EdfDataset
from safesteer.svr import (
    ConvergenceError,
    SvrHyperparams,
    SvrModel,
    _kernel_matrix,
    derivatives,
    derivatives_naive,
    grid_search_cv,
    kernel,
    load_model,
    predict,
    r2_score,
    residual_sigma,
    save_model,
    split_dataset,
    train,
)

from conftest import make_direct_model, make_training_dataset


class TestKernel:
    def test_zero_distance(self):
        assert kernel(np.array([3.0, -1.0]), np.array([3.0, -1.0]), 7.0) == 1.0

    def test_unit_distance_paper_width(self):
        assert kernel(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 30.0) == pytest.approx(
            math.exp(-30.0), rel=1e-15
        )

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(0, 5, (2, 2))
        g = float(rng.uniform(0.1, 40.0))
        k = kernel(a, b, g)
        assert k == kernel(b, a, g)
        assert 0.0 <= k <= 1.0
        if g * np.sum((a - b) ** 2) < 700:  # above this exp underflows
            assert k > 0.0

    def test_gamma_must_be_positive(self):
        with pytest.raises(ValueError):
            kernel(np.zeros(2), np.ones(2), 0.0)


class TestPredict:
    def test_single_support_vector_at_origin(self):
        m = SvrModel(support_vectors=np.zeros((1, 2)), dual_coeffs=np.ones(1),
                     bias=0.0, gamma=30.0)
        assert predict(m, np.zeros(2)) == 1.0
        assert predict(m, np.array([1.0, 0.0])) == pytest.approx(math.exp(-30.0), rel=1e-15)

    def test_batch_matches_single(self):
        # batch uses a BLAS matvec; allow reassociation at the 1e-10 level
        m = make_direct_model(seed=2)
        pts = np.random.default_rng(0).uniform(0, 5, (40, 2))
        batch = predict(m, pts)
        singles = np.array([predict(m, p) for p in pts])
        assert np.allclose(batch, singles, rtol=0, atol=1e-10)

    def test_coord_scale_changes_length_scale(self):
        base = SvrModel(support_vectors=np.zeros((1, 2)), dual_coeffs=np.ones(1),
                        bias=0.0, gamma=30.0, coord_scale=10.0)
        # gamma 30 at scale 10 == effective gamma 0.3 in meters
        assert predict(base, np.array([1.0, 0.0])) == pytest.approx(math.exp(-0.3), rel=1e-15)


def _dual_objective(beta, K, d, eps):
    n = len(d)
    kap = beta[:n] - beta[n:]
    return 0.5 * kap @ K @ kap + eps * beta.sum() - d @ kap


def _project_box_hyperplane(beta, y, C):
    lo, hi = -1e3, 1e3
    for _ in range(80):
        nu = 0.5 * (lo + hi)
        if y @ np.clip(beta - nu * y, 0, C) > 0:
            lo = nu
        else:
            hi = nu
    return np.clip(beta - 0.5 * (lo + hi) * y, 0, C)


def _projected_gradient_solve(K, d, eps, C, iters=30000):
    """Independent dense solve of the epsilon-SVR dual (small instances)."""
    n = len(d)
    y = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([eps - d, eps + d])
    beta = np.zeros(2 * n)
    lr = 0.9 / np.linalg.eigvalsh(K).max()
    for _ in range(iters):
        kap = beta[:n] - beta[n:]
        Kk = K @ kap
        beta = _project_box_hyperplane(beta - lr * (np.concatenate([Kk, -Kk]) + p), y, C)
    return beta


def _full_kappa(model, points):
    kap = np.zeros(len(points))
    for sv, k in zip(model.support_vectors, model.dual_coeffs):
        kap[np.argmin(np.sum((points - sv) ** 2, axis=1))] = k
    return kap


class TestTrain:
    def test_small_instance_matches_reference_qp(self):
        rng = np.random.default_rng(42)
        pts = rng.uniform(0, 4, (20, 2))
        d = np.abs(np.sin(pts[:, 0]) + 0.5 * pts[:, 1]) + 0.1
        ds = EdfDataset(points=pts, distances=d)
        hp = SvrHyperparams(G=5.0, epsilon=0.05, gamma=0.8)
        model = train(ds, hp, tol=1e-7)
        K = _kernel_matrix(pts, hp.gamma)
        beta_ref = _projected_gradient_solve(K, d, hp.epsilon, hp.G)
        obj_ref = _dual_objective(beta_ref, K, d, hp.epsilon)
        kap = _full_kappa(model, pts)
        beta = np.concatenate([np.maximum(kap, 0), np.maximum(-kap, 0)])
        obj = _dual_objective(beta, K, d, hp.epsilon)
        assert abs(obj - obj_ref) <= 1e-6 * abs(obj_ref)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_dual_feasibility(self, seed):
        ds = make_training_dataset(seed=seed)
        hp = SvrHyperparams(G=4.0, epsilon=0.05, gamma=1.0)
        model = train(ds, hp)
        kap = _full_kappa(model, ds.points)
        assert np.all(np.abs(kap) <= hp.G + 1e-8)
        assert abs(kap.sum()) <= 1e-8
        assert model.n_sv <= ds.count

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_epsilon_tube_kkt(self, seed):
        ds = make_training_dataset(seed=seed)
        hp = SvrHyperparams(G=4.0, epsilon=0.05, gamma=1.0)
        model = train(ds, hp, tol=1e-6)
        kap = _full_kappa(model, ds.points)
        resid = np.abs(predict(model, ds.points) - ds.distances)
        inside = np.abs(kap) < hp.G - 1e-9
        assert np.all(resid[inside] <= hp.epsilon + 1e-6)

    def test_deterministic(self):
        ds = make_training_dataset(seed=9)
        hp = SvrHyperparams(G=6.0, epsilon=0.02, gamma=1.2)
        a = train(ds, hp)
        b = train(ds, hp)
        assert np.array_equal(a.support_vectors, b.support_vectors)
        assert np.array_equal(a.dual_coeffs, b.dual_coeffs)
        assert a.bias == b.bias

    def test_nonconvergence_reports_violation(self):
        ds = make_training_dataset(seed=0, n=40)
        with pytest.raises(ConvergenceError, match="KKT violation"):
            train(ds, SvrHyperparams(G=4.0, epsilon=0.0, gamma=1.0), max_updates=3)

    def test_needs_two_samples(self):
        ds = EdfDataset(points=np.array([[0.0, 0.0]]), distances=np.array([1.0]))
        with pytest.raises(ValueError, match="2 samples"):
            train(ds, SvrHyperparams(G=1.0, epsilon=0.1, gamma=1.0))


class TestDerivatives:
    def fd_gradient(self, model, z, h=1e-5):
        out = np.empty(2)
        for a in range(2):
            e = np.zeros(2)
            e[a] = h
            out[a] = (predict(model, z + e) - predict(model, z - e)) / (2 * h)
        return out

    def fd_hessian(self, model, z, h=1e-4):
        out = np.empty((2, 2))
        f0 = predict(model, z)
        for a in range(2):
            ea = np.zeros(2)
            ea[a] = h
            out[a, a] = (predict(model, z + ea) - 2 * f0 + predict(model, z - ea)) / h**2
        eb = np.array([0.0, h])
        ea = np.array([h, 0.0])
        out[0, 1] = out[1, 0] = (
            predict(model, z + ea + eb) - predict(model, z + ea - eb)
            - predict(model, z - ea + eb) + predict(model, z - ea - eb)
        ) / (4 * h**2)
        return out

    def fd_third(self, model, z, h=1e-3):
        out = np.empty((2, 2, 2))
        for c in range(2):
            ec = np.zeros(2)
            ec[c] = h
            hp = self.fd_hessian(model, z + ec, h)
            hm = self.fd_hessian(model, z - ec, h)
            out[:, :, c] = (hp - hm) / (2 * h)
        return out

    @pytest.mark.parametrize("seed", range(4))
    def test_gradient_matches_finite_differences(self, seed, trained_small_model):
        rng = np.random.default_rng(seed)
        for z in rng.uniform(0.5, 4.5, (30, 2)):
            bundle = derivatives(trained_small_model, z)
            fd = self.fd_gradient(trained_small_model, z)
            assert np.allclose(bundle.gradient, fd, rtol=1e-5, atol=1e-8)

    @pytest.mark.parametrize("seed", range(4))
    def test_hessian_third_match_finite_differences(self, seed, trained_small_model):
        rng = np.random.default_rng(100 + seed)
        for z in rng.uniform(0.5, 4.5, (10, 2)):
            bundle = derivatives(trained_small_model, z)
            fd_h = self.fd_hessian(trained_small_model, z)
            fd_t = self.fd_third(trained_small_model, z)
            assert np.allclose(bundle.hessian, fd_h, rtol=1e-3, atol=1e-4)
            assert np.allclose(bundle.third, fd_t, rtol=1e-3, atol=1e-3)

    def test_value_matches_predict(self, trained_small_model):
        z = np.array([2.0, 3.0])
        assert derivatives(trained_small_model, z).value == predict(trained_small_model, z)

    def test_symmetry(self):
        m = make_direct_model(seed=5, gamma=2.0)
        z = np.array([1.3, 2.1])
        b = derivatives(m, z)
        assert b.hessian[0, 1] == b.hessian[1, 0]
        t = b.third
        for perm in [(0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]:
            assert np.array_equal(t, np.transpose(t, perm))

    def test_gradient_zero_at_single_support_vector(self):
        m = SvrModel(support_vectors=np.array([[2.0, -1.0]]), dual_coeffs=np.ones(1),
                     bias=0.5, gamma=3.0)
        b = derivatives(m, np.array([2.0, -1.0]))
        assert b.gradient[0] == 0.0 and b.gradient[1] == 0.0

    @pytest.mark.parametrize("seed", range(6))
    def test_vectorized_equals_naive_loop(self, seed):
        m = make_direct_model(seed=seed, n_sv=200, gamma=22.0, span=8.0)
        rng = np.random.default_rng(seed + 50)
        for z in rng.uniform(0, 8, (20, 2)):
            a = derivatives(m, z)
            b = derivatives_naive(m, z)
            assert abs(a.value - b.value) <= 1e-10
            assert np.all(np.abs(a.gradient - b.gradient) <= 1e-10)
            assert np.all(np.abs(a.hessian - b.hessian) <= 1e-10)
            assert np.all(np.abs(a.third - b.third) <= 1e-10)

    def test_repeat_calls_bit_identical(self, trained_small_model):
        z = np.array([1.0, 1.5])
        a = derivatives(trained_small_model, z)
        b = derivatives(trained_small_model, z)
        assert a.value == b.value
        assert np.array_equal(a.gradient, b.gradient)
        assert np.array_equal(a.hessian, b.hessian)
        assert np.array_equal(a.third, b.third)


class TestResidualSigma:
    def test_perfect_interpolant_is_zero(self):
        sv = np.array([[0.0, 0.0], [4.0, 0.0]])
        m = SvrModel(support_vectors=sv, dual_coeffs=np.array([1.0, -1.0]),
                     bias=2.0, gamma=1.0)
        d = predict(m, sv)
        ds = EdfDataset(points=sv, distances=d)
        assert residual_sigma(m, ds) == 0.0

    def test_dominates_every_sample(self, trained_small_model, trained_small_dataset):
        sigma = residual_sigma(trained_small_model, trained_small_dataset)
        pred = predict(trained_small_model, trained_small_dataset.points)
        per_sample = np.abs(pred - trained_small_dataset.distances)
        assert np.all(sigma >= per_sample)

    def test_ignores_occupied_samples(self):
        m = make_direct_model(seed=1)
        pts = np.array([[0.0, 0.0], [1.0, 1.0]])
        ds = EdfDataset(points=pts, distances=np.array([0.0, 1.0]))
        sigma = residual_sigma(m, ds)
        assert sigma == abs(predict(m, pts[1]) - 1.0)

    def test_empty_free_space_errors(self):
        m = make_direct_model(seed=1)
        ds = EdfDataset(points=np.array([[0.0, 0.0], [1.0, 0.0]]),
                        distances=np.zeros(2))
        with pytest.raises(ValueError, match="free-space"):
            residual_sigma(m, ds)


class TestSaveLoad:
    def test_roundtrip_bit_exact(self, tmp_path, trained_small_model):
        path = tmp_path / "model.txt"
        save_model(trained_small_model, path)
        back = load_model(path)
        assert np.array_equal(back.support_vectors, trained_small_model.support_vectors)
        assert np.array_equal(back.dual_coeffs, trained_small_model.dual_coeffs)
        assert back.bias == trained_small_model.bias
        assert back.gamma == trained_small_model.gamma
        assert back.coord_scale == trained_small_model.coord_scale
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 5, (100, 2))
        assert np.array_equal(predict(back, pts), predict(trained_small_model, pts))

    def test_unknown_version_rejected(self, tmp_path, trained_small_model):
        path = tmp_path / "model.txt"
        save_model(trained_small_model, path)
        text = path.read_text().splitlines()
        text[0] = "safesteer-svr 99"
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(ValueError, match="version"):
            load_model(path)

    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "model.txt"
        path.write_text("something-else 1\n")
        with pytest.raises(ValueError, match="not a"):
            load_model(path)

    def test_empty_support_vectors_rejected(self, tmp_path):
        path = tmp_path / "model.txt"
        path.write_text("safesteer-svr 1\ngamma 1.0\ncoord_scale 1.0\nbias 0.0\nn_sv 0\n")
        with pytest.raises(ValueError, match="no support vectors"):
            load_model(path)

    def test_truncated_rows_rejected(self, tmp_path, trained_small_model):
        path = tmp_path / "model.txt"
        save_model(trained_small_model, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(ValueError, match="expected"):
            load_model(path)


class TestGridSearch:
    def test_single_point_grid_returns_it(self):
        ds = make_training_dataset(seed=4, n=40)
        hp, score = grid_search_cv(
            ds, {"G": [4.0], "epsilon": [0.05], "gamma": [1.0]}, folds=4
        )
        assert hp == SvrHyperparams(G=4.0, epsilon=0.05, gamma=1.0)
        assert -1.0 <= score <= 1.0

    def test_picks_better_gamma(self):
        ds = make_training_dataset(seed=4, n=60)
        hp, score = grid_search_cv(
            ds, {"G": [4.0], "epsilon": [0.01], "gamma": [1e-4, 0.8]}, folds=5
        )
        assert hp.gamma == 0.8
        assert score > 0.5

    def test_empty_grid_errors(self):
        ds = make_training_dataset(seed=4, n=20)
        with pytest.raises(ValueError, match="grid"):
            grid_search_cv(ds, {"G": [], "epsilon": [0.1], "gamma": [1.0]}, folds=2)

    def test_folds_validation(self):
        ds = make_training_dataset(seed=4, n=20)
        with pytest.raises(ValueError, match="folds"):
            grid_search_cv(ds, {"G": [1.0], "epsilon": [0.1], "gamma": [1.0]}, folds=1)


class TestSplitAndScore:
    def test_split_is_seeded_and_disjoint(self):
        ds = make_training_dataset(seed=8, n=50)
        a1, b1 = split_dataset(ds, 0.5, seed=7)
        a2, b2 = split_dataset(ds, 0.5, seed=7)
        assert np.array_equal(a1.points, a2.points)
        assert a1.count + b1.count == ds.count
        joined = np.vstack([a1.points, b1.points])
        assert len(np.unique(joined, axis=0)) == ds.count
        a3, _ = split_dataset(ds, 0.5, seed=8)
        assert not np.array_equal(a1.points, a3.points)

    def test_r2_perfect_and_mean(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        assert r2_score(y, y) == 1.0
        assert r2_score(y, np.full(4, y.mean())) == 0.0
