import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infocomb import penreg
from infocomb.penreg import ConvergenceError

from conftest import coherent_panel, random_tree
from oracles import group_lasso_projected, objective


def _noisy_pair(h, T, rng):
    Y = coherent_panel(h, T, rng)
    X = Y + rng.standard_normal(Y.shape) * rng.uniform(0.3, 1.5, h.m)
    return X, Y


# -- least squares ---------------------------------------------------------


def test_ols_self_regression(regional, rng):
    X, _ = _noisy_pair(regional, 60, rng)
    cm = penreg.fit_ols(X, X, intercept=True)
    np.testing.assert_allclose(cm.B, np.eye(regional.m), atol=1e-10)
    np.testing.assert_allclose(cm.intercept, 0, atol=1e-9)


def test_ols_two_by_two_by_hand():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    y = np.array([[1.0], [2.0], [4.0]])
    # X'X = [[2,1],[1,2]], inverse [[2,-1],[-1,2]]/3, X'y = (5, 6)
    expected = np.array([[2 * 5 - 6], [-5 + 2 * 6]]) / 3
    np.testing.assert_allclose(penreg.fit_ols(X, y).B, expected, atol=1e-12)


def test_ols_coherent(regional, rng):
    X, Y = _noisy_pair(regional, 80, rng)
    cm = penreg.fit_ols(X, Y, intercept=True)
    assert np.max(np.abs(cm.B @ regional.S_perp)) < 1e-10
    assert np.max(np.abs(cm.intercept @ regional.S_perp)) < 1e-10


@pytest.mark.parametrize("bad", [np.ones((1, 2)), np.ones((4, 2))])
def test_row_checks(bad):
    with pytest.raises(ValueError):
        penreg.fit_ols(bad, np.ones((3, 2)))


# -- ridge -------------------------------------------------------------------


def test_ridge_infinite_shrinkage(three, rng):
    X, Y = _noisy_pair(three, 40, rng)
    nu = 1e12 * np.trace(X.T @ X)
    cm = penreg.fit_ridge(X, Y, nu, intercept=True)
    assert np.max(np.abs(cm.B)) < 1e-9
    np.testing.assert_allclose(cm.predict(X[:3]), np.tile(Y.mean(0), (3, 1)), rtol=1e-9)


def test_ridge_dense_solve(rng):
    X = rng.standard_normal((10, 3))
    Y = rng.standard_normal((10, 3))
    direct = np.linalg.solve(X.T @ X + np.eye(3), X.T @ Y)
    np.testing.assert_allclose(penreg.fit_ridge(X, Y, 1.0).B, direct, atol=1e-12)


@pytest.mark.parametrize("diag", ["identity", "gram_diag"])
def test_ridge_coherent(regional, rng, diag):
    X, Y = _noisy_pair(regional, 50, rng)
    for nu in (1e-3, 1.0, 1e3):
        cm = penreg.fit_ridge(X, Y, nu, penalty_diag=diag, intercept=True)
        assert np.max(np.abs(cm.B @ regional.S_perp)) < 1e-10
        assert np.max(np.abs(cm.intercept @ regional.S_perp)) < 1e-10


def test_ridge_zero_is_ols(regional, rng):
    X, Y = _noisy_pair(regional, 50, rng)
    np.testing.assert_allclose(
        penreg.fit_ridge(X, Y, 0.0, intercept=True).B,
        penreg.fit_ols(X, Y, intercept=True).B,
        atol=1e-10,
    )


def test_ridge_errors(rng):
    X = rng.standard_normal((10, 3))
    with pytest.raises(ValueError):
        penreg.fit_ridge(X, X, -1.0)
    collinear = np.column_stack([X[:, 0], X[:, 0], X[:, 1]])
    with pytest.raises(np.linalg.LinAlgError):
        penreg.fit_ridge(collinear, X, 0.0)


def test_ridge_path_matches_direct(regional, rng):
    X, Y = _noisy_pair(regional, 50, rng)
    path = penreg.RidgePath(X, Y, intercept=True)
    nus = np.array([0.1, 10.0, 1000.0])
    preds = path.predict(X[-1], nus)
    for i, nu in enumerate(nus):
        cm = penreg.fit_ridge(X, Y, nu, intercept=True)
        np.testing.assert_allclose(path.coef(nu), cm.B, atol=1e-10)
        np.testing.assert_allclose(preds[i], cm.predict(X[-1]), rtol=1e-10)


# -- multivariate lasso -----------------------------------------------------


def test_lambda_max_threshold(regional, rng):
    X, Y = _noisy_pair(regional, 60, rng)
    lmax = penreg.lambda_max(X, Y, intercept=True)
    for scale in (1.0, 1.0001, 3.0):
        cm = penreg.fit_mlasso(X, Y, lmax * scale, intercept=True)
        assert np.all(cm.B == 0)
        np.testing.assert_allclose(cm.intercept, Y.mean(0))
    cm = penreg.fit_mlasso(X, Y, lmax * 0.99, intercept=True)
    assert penreg.count_active_groups(cm) == 1


def test_lambda_max_orthogonal():
    X = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    Y = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    assert penreg.lambda_max(X, Y) == 0.0
    with pytest.raises(ValueError):
        penreg.lambda_max(np.ones((3, 0)), Y[:3])


def test_single_group_soft_threshold(rng):
    x = rng.standard_normal((25, 1))
    Y = x @ np.array([[1.5, -0.5]]) + 0.2 * rng.standard_normal((25, 2))
    T = 25
    g = (x.T @ Y / T)[0]
    lam = 0.4 * np.linalg.norm(g)
    # stationarity x'x/T b - g + lam b/||b|| = 0 gives b = (1 - lam/||g||) g T / x'x
    expected = (1 - lam / np.linalg.norm(g)) * g * T / float(x[:, 0] @ x[:, 0])
    cm = penreg.fit_mlasso(x, Y, lam, tol=1e-10)
    np.testing.assert_allclose(cm.B[0], expected, rtol=1e-8)


def _corpus(seed, n=12):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        h = random_tree(rng)
        T = int(rng.integers(20, 80))
        X, Y = _noisy_pair(h, T, rng)
        if i % 3 == 0:  # nearly collinear predictors
            X[:, -1] = X[:, :-1] @ rng.uniform(0, 1, h.m - 1) / (h.m - 1) + 1e-4 * rng.standard_normal(T)
        intercept = bool(i % 2)
        frac = rng.uniform(0.01, 0.9)
        lam = frac * penreg.lambda_max(X, Y, intercept=intercept)
        out.append((h, X, Y, lam, intercept))
    return out


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_corpus_kkt_and_coherency(seed):
    for h, X, Y, lam, intercept in _corpus(seed):
        cm = penreg.fit_mlasso(X, Y, lam, intercept=intercept)
        assert cm.info["converged"]
        Xc = X - X.mean(0) if intercept else X
        Yc = Y - Y.mean(0) if intercept else Y
        stat, sub = penreg.mlasso_kkt(Xc, Yc, cm.B, lam)
        scale = np.sqrt(np.mean(Xc * Xc) * np.mean(Yc * Yc))
        active = ~np.isnan(stat)
        assert np.all(stat[active] <= 1e-5 * scale)
        assert np.all(sub[~active] <= lam * (1 + 1e-5))
        assert np.max(np.abs(cm.B @ h.S_perp)) <= 1e-6 * max(1.0, np.max(np.abs(cm.B)))
        if intercept:
            assert np.max(np.abs(cm.intercept @ h.S_perp)) <= 1e-6 * np.max(np.abs(Y))


def test_objective_non_increasing(regional, rng):
    X, Y = _noisy_pair(regional, 60, rng)
    lam = 0.05 * penreg.lambda_max(X, Y, intercept=True)
    trace = penreg.fit_mlasso(X, Y, lam, intercept=True).info["objective_trace"]
    assert len(trace) > 1
    assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]))


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    k=st.integers(1, 5),
    m=st.integers(1, 3),
    T=st.integers(8, 30),
    frac=st.floats(0.02, 0.95),
    intercept=st.booleans(),
)
def test_matches_projected_gradient_oracle(seed, k, m, T, frac, intercept):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((T, k)) + rng.standard_normal((T, 1))
    Y = X @ (rng.standard_normal((k, m)) * (rng.random((k, 1)) < 0.6)) + rng.standard_normal((T, m))
    lmax = penreg.lambda_max(X, Y, intercept=intercept)
    lam = frac * lmax
    cm = penreg.fit_mlasso(X, Y, lam, intercept=intercept)
    ref = group_lasso_projected(X, Y, lam, intercept=intercept, iters=5000)
    ours = objective(X, Y, cm.B, lam, intercept)
    theirs = objective(X, Y, ref, lam, intercept)
    assert abs(ours - theirs) <= 1e-4
    assert ours <= theirs + 1e-9


def test_matches_conic_solver(rng):
    cp = pytest.importorskip("cvxpy")
    for _ in range(5):
        X = rng.standard_normal((20, 4))
        Y = X @ rng.standard_normal((4, 3)) + rng.standard_normal((20, 3))
        lam = 0.3 * penreg.lambda_max(X, Y)
        B = cp.Variable((4, 3))
        loss = cp.sum_squares(Y - X @ B) / 40 + lam * cp.sum(cp.norm(B, 2, axis=1))
        cp.Problem(cp.Minimize(loss)).solve()
        ours = objective(X, Y, penreg.fit_mlasso(X, Y, lam).B, lam)
        assert abs(ours - objective(X, Y, B.value, lam)) <= 1e-4


def test_non_convergence_reported(rng, monkeypatch):
    # two sweeps only, with the Newton polish switched off
    monkeypatch.setattr(penreg, "NEWTON_MAX_DIM", 0)
    f = rng.standard_normal((80, 1))
    X = f + 0.05 * rng.standard_normal((80, 30))
    Y = X @ rng.standard_normal((30, 25)) + rng.standard_normal((80, 25))
    lam = 1e-3 * penreg.lambda_max(X, Y)
    with pytest.raises(ConvergenceError) as info:
        penreg.fit_mlasso(X, Y, lam, max_iter=2)
    assert info.value.kkt_gap > 0
    assert info.value.result is not None


def test_path_and_warm_start_agree(regional, rng):
    X, Y = _noisy_pair(regional, 60, rng)
    lmax = penreg.lambda_max(X, Y, intercept=True)
    lams = lmax * np.array([0.5, 0.1, 0.02])
    coefs, icpts = penreg.mlasso_path(X, Y, lams, intercept=True, tol=1e-9)
    for i, lam in enumerate(lams):
        cold = penreg.fit_mlasso(X, Y, lam, intercept=True, tol=1e-9)
        np.testing.assert_allclose(
            objective(X, Y, coefs[i], lam, True), objective(X, Y, cold.B, lam, True), atol=1e-9
        )
        np.testing.assert_allclose(icpts[i], Y.mean(0) - X.mean(0) @ coefs[i])
    warm = penreg.fit_mlasso(X, Y, lams[-1], intercept=True, warm_start=coefs[1], tol=1e-9)
    np.testing.assert_allclose(warm.B, coefs[-1], atol=1e-5)


# -- standardisation ---------------------------------------------------------


def test_standardize_identity(rng):
    X = rng.standard_normal((10, 3))
    Xs, Ys, sx, sy = penreg.standardize_fit(X, X, "none")
    np.testing.assert_array_equal(Xs, X)
    np.testing.assert_array_equal(sx, 1)
    np.testing.assert_array_equal(sy, 1)


def test_standardize_scale_two():
    col = np.array([0.0, 4.0, 0.0, 4.0])  # variance 4
    X = np.column_stack([col, [1.0, 2.0, 3.0, 4.0]])
    Xs, _, sx, _ = penreg.standardize_fit(X, X, "x_only")
    assert sx[0] == 2.0
    assert np.var(Xs[:, 0]) == pytest.approx(1.0)


def test_standardize_rejects_constant():
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    with pytest.raises(ValueError, match="zero-variance"):
        penreg.standardize_fit(X, X, "x_only")


@pytest.mark.parametrize("mode", ["x_only", "x_and_y"])
def test_standardized_fits_stay_coherent(regional, rng, mode):
    X, Y = _noisy_pair(regional, 70, rng)
    Xs, Ys, sx, sy = penreg.standardize_fit(X, Y, mode)
    lam = 0.05 * penreg.lambda_max(Xs, Ys, intercept=True)
    for cm in (penreg.fit_ridge(Xs, Ys, 5.0, intercept=True),
               penreg.fit_mlasso(Xs, Ys, lam, intercept=True)):
        raw = penreg.destandardize_map(cm, sx, sy)
        assert np.max(np.abs(raw.B @ regional.S_perp)) < 1e-6
        assert np.max(np.abs(raw.intercept @ regional.S_perp)) < 1e-6 * np.max(np.abs(Y))


def test_ols_roundtrip_through_standardization(regional, rng):
    X, Y = _noisy_pair(regional, 70, rng)
    Xs, Ys, sx, sy = penreg.standardize_fit(X, Y, "x_and_y")
    back = penreg.destandardize_map(penreg.fit_ols(Xs, Ys, intercept=True), sx, sy)
    direct = penreg.fit_ols(X, Y, intercept=True)
    np.testing.assert_allclose(back.B, direct.B, atol=1e-9)
    np.testing.assert_allclose(back.predict(X[:5]), direct.predict(X[:5]), rtol=1e-10)


def test_destandardize_checks(rng):
    cm = penreg.fit_ols(rng.standard_normal((10, 3)), rng.standard_normal((10, 2)))
    same = penreg.destandardize_map(cm, np.ones(3), np.ones(2))
    np.testing.assert_array_equal(same.B, cm.B)
    with pytest.raises(ValueError):
        penreg.destandardize_map(cm, np.ones(2), np.ones(2))


def test_active_group_counts(rng):
    X = rng.standard_normal((30, 4))
    Y = rng.standard_normal((30, 2))
    assert penreg.count_active_groups(np.zeros((4, 2))) == 0
    assert penreg.count_active_groups(penreg.fit_ridge(X, Y, 2.0)) == 4
