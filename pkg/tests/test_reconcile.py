import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infocomb import (
    ReconcilerSpec,
    apply,
    build_hierarchy,
    fit_icomb,
    fit_projection,
    max_coherency_violation,
    sample_cov,
)
from infocomb import penreg, reconcile
from infocomb.hierarchy import HierarchyError

from conftest import coherent_panel, random_tree

OLS_SG = np.array([[2, 1, 1], [1, 2, -1], [1, -1, 2]]) / 3


def random_spd(rng, m):
    A = rng.standard_normal((m, m))
    return A @ A.T + 0.5 * np.eye(m)


def _spec(method):
    return ReconcilerSpec(method)


def test_ols_three_node(three):
    fitted = fit_projection(_spec("ols"), three)
    np.testing.assert_allclose(fitted.SG, OLS_SG, atol=1e-15)
    # incoherency 2.0 - 1.2 - 0.9 = -0.1 is spread as S_perp * (-0.1) / 3
    out = apply(fitted, [2.0, 1.2, 0.9])
    np.testing.assert_allclose(out, [2.0 + 0.1 / 3, 1.2 - 0.1 / 3, 0.9 - 0.1 / 3], atol=1e-14)
    assert np.round(out, 4).tolist() == [2.0333, 1.1667, 0.8667]


def test_bottom_up(three):
    out = apply(fit_projection(_spec("bottom_up"), three), [7.0, 1.2, 0.9])
    np.testing.assert_allclose(out, [2.1, 1.2, 0.9], atol=1e-15)


def test_mint_identity_is_ols(regional):
    mint = fit_projection(_spec("mint"), regional, np.eye(regional.m))
    ols = fit_projection(_spec("ols"), regional)
    np.testing.assert_allclose(mint.SG, ols.SG, atol=1e-12)


def test_wls_uses_diagonal_only(regional, rng):
    W = random_spd(rng, regional.m)
    a = fit_projection(_spec("wls_v"), regional, W)
    b = fit_projection(_spec("mint"), regional, np.diag(np.diag(W)))
    np.testing.assert_allclose(a.SG, b.SG, atol=1e-12)


def test_non_pd_covariance(three):
    with pytest.raises(np.linalg.LinAlgError):
        fit_projection(_spec("mint"), three, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        fit_projection(_spec("mint"), three)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["bottom_up", "ols", "wls_v", "mint"]))
def test_projection_properties(seed, method):
    rng = np.random.default_rng(seed)
    h = random_tree(rng)
    W = random_spd(rng, h.m)
    fitted = fit_projection(_spec(method), h, W)
    SG = fitted.SG
    np.testing.assert_allclose(SG @ SG, SG, atol=1e-10)
    np.testing.assert_allclose(SG @ h.S, h.S, atol=1e-10)
    yb = h.S @ rng.standard_normal(h.n)
    np.testing.assert_allclose(SG @ yb, yb, atol=1e-10)
    out = fitted.apply(rng.standard_normal((5, h.m)) * 10)
    assert max_coherency_violation(h, out) <= 1e-8


def test_mint_forms_three_node_scalar(three):
    # S_perp' S_perp = 3, so G = J - J S_perp S_perp' / 3
    G = reconcile.mint_alternative_form(three, np.eye(3))
    expected = three.J - three.J @ three.S_perp @ three.S_perp.T / 3
    np.testing.assert_allclose(G, expected, atol=1e-15)
    np.testing.assert_allclose(G, OLS_SG[1:], atol=1e-15)


@pytest.mark.parametrize("m_n", [(10, 7), (25, 16), (50, 40)])
def test_mint_forms_agree(rng, m_n):
    m, n = m_n
    C = (rng.random((m - n, n)) < 0.4).astype(float)
    C[np.arange(m - n), rng.integers(0, n, m - n)] = 1.0
    from infocomb.hierarchy import Hierarchy

    h = Hierarchy.from_constraints(C)
    for _ in range(5):
        W = random_spd(rng, m)
        a = reconcile.projection_G(h, W)
        b = reconcile.mint_alternative_form(h, W)
        assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))


def _errors_panel(h, T, rng):
    Y = coherent_panel(h, T, rng)
    X = Y + rng.standard_normal((T, h.m)) @ np.linalg.cholesky(random_spd(rng, h.m)).T
    return X, Y


def test_decomposition_matches_sample_mint(three, rng):
    X, Y = _errors_panel(three, 200, rng)
    Psi, Z = reconcile.mint_sample_decomposition(three, X, Y)
    G = reconcile.decomposition_G(three, Psi)
    mint = fit_projection(_spec("mint"), three, sample_cov(Y - X))
    held_out = rng.standard_normal(3) * 5
    np.testing.assert_allclose(three.S @ G @ held_out, mint.apply(held_out), atol=1e-8)
    np.testing.assert_allclose(G, reconcile.mint_alternative_form(three, sample_cov(Y - X).W),
                               atol=1e-10)


def test_decomposition_rejects_coherent_forecasts(three, rng):
    Y = coherent_panel(three, 30, rng)
    with pytest.raises(np.linalg.LinAlgError, match="coherent"):
        reconcile.mint_sample_decomposition(three, Y, Y)


def test_icomb_self_map(regional, rng):
    Y = coherent_panel(regional, 60, rng)
    spec = ReconcilerSpec("icomb", penalty="ridge", param=1e-10)
    fitted = fit_icomb(spec, regional, Y, Y)
    # a coherent X has rank n, so B is the identity on the coherent subspace
    np.testing.assert_allclose(Y @ fitted.coef.B, Y, rtol=1e-6)
    np.testing.assert_allclose(fitted.apply(Y[-1]), Y[-1], rtol=1e-6)


def test_icomb_full_shrinkage_gives_means(regional, rng):
    Y = coherent_panel(regional, 60, rng)
    X = Y + rng.standard_normal(Y.shape)
    lmax = penreg.lambda_max(X, Y, intercept=True)
    spec = ReconcilerSpec("icomb", penalty="mlasso", param=lmax)
    out = fit_icomb(spec, regional, X, Y).apply(X[-1])
    np.testing.assert_allclose(out, Y.mean(0))
    assert max_coherency_violation(regional, out) <= 1e-12


@pytest.mark.parametrize("variant", reconcile.icomb_variants(), ids=lambda s: s.label)
def test_icomb_variants_coherent(regional, rng, variant):
    Y = coherent_panel(regional, 80, rng)
    X = Y + rng.standard_normal(Y.shape) * np.linspace(0.5, 2, regional.m)
    param = None
    if variant.penalty == "mlasso":
        Xs, Ys, _, _ = penreg.standardize_fit(X, Y, variant.standardization)
        param = 0.1 * penreg.lambda_max(Xs, Ys, intercept=variant.intercept)
    elif variant.penalty == "ridge":
        param = 0.5
    fitted = fit_icomb(variant, regional, X, Y, tuning=param)
    out = fitted.apply(X[-5:] * 3)
    assert max_coherency_violation(regional, out) <= 1e-6


def test_emintu_is_ols_regression(regional, rng):
    X, Y = _errors_panel(regional, 80, rng)
    spec = reconcile.parse_method("emintu")
    assert not spec.intercept and spec.label == "emintu"
    fitted = fit_icomb(spec, regional, X, Y)
    np.testing.assert_allclose(fitted.coef.B, penreg.fit_ols(X, Y).B, atol=1e-12)


def test_parse_method_tokens():
    assert reconcile.parse_method("bu").method == "bottom_up"
    assert reconcile.parse_method("wlsv").method == "wls_v"
    spec = reconcile.parse_method("icomb:mlasso:xy:0")
    assert (spec.penalty, spec.standardization, spec.intercept) == ("mlasso", "x_and_y", False)
    assert spec.label == "icomb:mlasso:xy:0"
    assert reconcile.parse_method("mint:sample").cov_estimator == "sample"
    assert reconcile.parse_method("emintu:1").label == "emintu:1"
    assert len({s.label for s in reconcile.icomb_variants()}) == 12
    with pytest.raises(ValueError):
        reconcile.parse_method("topdown")
    with pytest.raises(ValueError):
        reconcile.parse_method("icomb:lasso")


def test_fixed_map_topdown_not_projection(three):
    G = np.array([[0.5, 0, 0], [0.5, 0, 0]])
    fitted = reconcile.fixed_map(three, G)
    assert not np.allclose(fitted.SG @ three.S, three.S)
    out = fitted.apply([4.0, 9.0, -3.0])
    np.testing.assert_allclose(out, [4.0, 2.0, 2.0])


def test_apply_dimension_check(three):
    with pytest.raises(ValueError):
        apply(fit_projection(_spec("ols"), three), [1.0, 2.0])
    with pytest.raises(HierarchyError):
        fit_icomb(ReconcilerSpec("icomb", penalty="none"), three, np.ones((5, 2)), np.ones((5, 2)))


def test_ols_contracts_towards_coherent_targets(regional, rng):
    SG = fit_projection(_spec("ols"), regional).SG
    for _ in range(50):
        target = regional.S @ rng.standard_normal(regional.n)
        base = target + rng.standard_normal(regional.m) * 3
        assert np.sum((SG @ base - target) ** 2) <= np.sum((base - target) ** 2) + 1e-12
