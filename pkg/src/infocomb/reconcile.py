"""Coherent forecasts from base forecasts.

Projection methods (bottom-up, OLS, WLS with variance scaling, MinT, and the
top-down style fixed ``G`` maps) reconcile through a fixed ``m x m`` matrix
``SG``.  The information-combination family (IComb, with ridge or multivariate
lasso shrinkage, and EMinTU as its unpenalised member) reconciles through a
:class:`~infocomb.penreg.CoefficientMap` fitted on historical
(base forecast, realised value) pairs.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import penreg
from .covariance import ErrorCovariance
from .hierarchy import HierarchyError

PROJECTIONS = ("bottom_up", "ols", "wls_v", "mint")
PENALTIES = ("none", "ridge", "mlasso")

_STD_ALIASES = {
    "none": "none", "0": "none", "raw": "none",
    "x": "x_only", "x_only": "x_only",
    "xy": "x_and_y", "x_and_y": "x_and_y",
}


@dataclass(frozen=True)
class ReconcilerSpec:
    """Method tag plus hyperparameters.

    ``method`` is one of ``bottom_up``, ``ols``, ``wls_v``, ``mint``, ``emintu``,
    ``icomb`` (or ``base`` for the unreconciled passthrough used as the
    evaluation reference).  ``penalty``/``standardization``/``intercept`` apply
    to ``icomb``; ``cov_estimator`` to ``mint``.  ``param`` optionally fixes the
    IComb tuning parameter; otherwise it is chosen by cross-validation.
    """

    method: str
    horizon: int = 1
    cov_estimator: str = "shrink"
    penalty: str = "ridge"
    standardization: str = "none"
    intercept: bool = True
    param: float = None

    def __post_init__(self):
        if self.method not in PROJECTIONS + ("emintu", "icomb", "base"):
            raise ValueError(f"unknown reconciliation method {self.method!r}")
        std = _STD_ALIASES.get(self.standardization)
        if std is None:
            raise ValueError(f"unknown standardization {self.standardization!r}")
        object.__setattr__(self, "standardization", std)
        if self.method == "emintu":
            object.__setattr__(self, "penalty", "none")
            object.__setattr__(self, "standardization", "none")
        if self.penalty not in PENALTIES:
            raise ValueError(f"unknown penalty {self.penalty!r}")

    @property
    def is_projection(self):
        return self.method in PROJECTIONS

    @property
    def needs_tuning(self):
        return self.method == "icomb" and self.penalty != "none" and self.param is None

    @property
    def label(self):
        if self.method == "icomb":
            std = {"none": "none", "x_only": "x", "x_and_y": "xy"}[self.standardization]
            return f"icomb:{self.penalty}:{std}:{int(bool(self.intercept))}"
        if self.method == "emintu" and self.intercept:
            return "emintu:1"
        return self.method


def parse_method(token, horizon=1):
    """Parse a method token such as ``ols``, ``mint`` or ``icomb:ridge:xy:1``."""
    token = token.strip().lower()
    alias = {"bu": "bottom_up", "wlsv": "wls_v", "wls": "wls_v"}
    parts = token.split(":")
    name = alias.get(parts[0], parts[0])
    if name == "icomb":
        penalty = parts[1] if len(parts) > 1 else "ridge"
        std = parts[2] if len(parts) > 2 else "none"
        intercept = (parts[3] if len(parts) > 3 else "1") in ("1", "c1", "true", "yes")
        return ReconcilerSpec("icomb", horizon, penalty=penalty, standardization=std,
                              intercept=intercept)
    if name == "emintu":
        intercept = len(parts) > 1 and parts[1] in ("1", "c1", "true", "yes")
        return ReconcilerSpec("emintu", horizon, intercept=intercept)
    if name == "mint":
        cov = parts[1] if len(parts) > 1 else "shrink"
        return ReconcilerSpec("mint", horizon, cov_estimator=cov)
    return ReconcilerSpec(name, horizon)


def icomb_variants(intercepts=(True, False)):
    """The twelve IComb variants: penalty x standardisation x intercept."""
    return [
        ReconcilerSpec("icomb", penalty=p, standardization=z, intercept=c)
        for c in intercepts
        for p in ("mlasso", "ridge")
        for z in ("x_and_y", "x_only", "none")
    ]


@dataclass(frozen=True)
class FittedReconciler:
    """A reconciliation map ready to apply.

    Exactly one of ``SG`` (projection methods) and ``coef`` (IComb family) is
    set.  ``G`` holds the ``n x m`` bottom-level map for projections.
    """

    spec: ReconcilerSpec
    hierarchy: object
    SG: np.ndarray = None
    G: np.ndarray = None
    coef: penreg.CoefficientMap = None
    training_window: tuple = None
    tuning: float = None
    extra: dict = field(default_factory=dict, compare=False)

    def apply(self, base):
        return apply(self, base)


def _check_pd(W):
    W = np.asarray(getattr(W, "W", W), dtype=float)
    try:
        linalg.cho_factor(W, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        raise np.linalg.LinAlgError("error covariance is not positive definite") from None
    return W


def projection_G(h, W=None):
    """``G = (S' W^-1 S)^-1 S' W^-1`` (``W = I`` when omitted)."""
    S = h.S
    if W is None:
        return linalg.solve(S.T @ S, S.T, assume_a="pos")
    cf = linalg.cho_factor(W)
    WinvS = linalg.cho_solve(cf, S)
    A = S.T @ WinvS
    try:
        return linalg.solve(A, WinvS.T, assume_a="pos")
    except linalg.LinAlgError:
        raise np.linalg.LinAlgError("S' W^-1 S is singular") from None


def fit_projection(spec, h, W=None):
    """Fixed-matrix reconcilers: ``bottom_up``, ``ols``, ``wls_v`` and ``mint``."""
    method = spec.method
    if method == "bottom_up":
        G = h.J
    elif method == "ols":
        G = projection_G(h)
    elif method in ("wls_v", "mint"):
        if W is None:
            raise ValueError(f"{method} needs an error covariance")
        Wm = _check_pd(W)
        if method == "wls_v":
            Wm = np.diag(np.diag(Wm))
        G = projection_G(h, Wm)
    else:
        raise ValueError(f"{method!r} is not a projection method")
    return FittedReconciler(spec=spec, hierarchy=h, SG=h.S @ G, G=G)


def fixed_map(h, G, label="fixed"):
    """Reconciler for an arbitrary bottom-level map ``G`` (``n x m``)."""
    G = np.asarray(G, dtype=float)
    if G.shape != (h.n, h.m):
        raise ValueError(f"G must be {h.n} x {h.m}, got {G.shape}")
    spec = ReconcilerSpec("bottom_up")
    return FittedReconciler(spec=spec, hierarchy=h, SG=h.S @ G, G=G, extra={"label": label})


def mint_alternative_form(h, W):
    """``G = J - J W S_perp (S_perp' W S_perp)^-1 S_perp'``.

    Only the ``(m-n) x (m-n)`` matrix ``S_perp' W S_perp`` is factorised.
    """
    W = _check_pd(W)
    J = h.J
    if h.n_aggregates == 0:
        return J
    U = h.S_perp
    inner = U.T @ W @ U
    try:
        cf = linalg.cho_factor(inner)
    except linalg.LinAlgError:
        raise np.linalg.LinAlgError("S_perp' W S_perp is singular") from None
    return J - (J @ W @ U) @ linalg.cho_solve(cf, U.T)


def mint_sample_decomposition(h, X, Y):
    """Split sample MinT into a regression on historical incoherencies.

    Returns ``(Psi, Z)`` where row ``t`` of ``Z`` is the forecast incoherency
    ``x_top,t - C x_bot,t`` and ``Psi`` (``(m-n) x n``) is the least squares
    coefficient of the bottom-level errors ``Y_bot - X_bot`` on ``Z``.  The
    sample MinT bottom map is then ``G = J + Psi' S_perp'``.
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    Y = np.asarray(getattr(Y, "values", Y), dtype=float)
    if X.shape != Y.shape or X.shape[1] != h.m:
        raise HierarchyError("forecasts and actuals must both be T x m and aligned")
    Z = X @ h.S_perp
    E_bot = (Y - X)[:, h.n_aggregates:]
    ZtZ = Z.T @ Z
    scale = max(1.0, float(np.max(np.abs(ZtZ), initial=0.0)))
    if h.n_aggregates == 0 or np.max(np.abs(Z)) <= 1e-12 * max(1.0, float(np.max(np.abs(X)))):
        raise np.linalg.LinAlgError("base forecasts are coherent (Z = 0); decomposition undefined")
    if np.linalg.matrix_rank(ZtZ, tol=1e-12 * scale) < ZtZ.shape[0]:
        raise np.linalg.LinAlgError("Z'Z is singular; decomposition undefined")
    Psi = linalg.solve(ZtZ, Z.T @ E_bot, assume_a="pos")
    return Psi, Z


def decomposition_G(h, Psi):
    """Reassemble ``G = J + Psi' S_perp'`` from an incoherency regression."""
    return h.J + Psi.T @ h.S_perp.T


def fit_coefficients(spec, X, Y, param=None, warm_start=None, tol=1e-7, max_iter=10_000):
    """Fit the IComb coefficient map for ``spec`` on (forecast, actual) pairs.

    ``param`` is on the per-observation loss scale shared by both penalties:
    mlasso minimises ``(1/2T)||Y - XB||^2 + param * sum_j ||b_j||`` and ridge
    ``(1/2T)||Y - XB||^2 + (param/2)||B||^2`` (``nu = T * param``), each on the
    standardised data when a standardisation is requested.
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    Y = np.asarray(getattr(Y, "values", Y), dtype=float)
    Xs, Ys, sx, sy = penreg.standardize_fit(X, Y, spec.standardization)
    if spec.penalty == "none" or spec.method == "emintu":
        cmap = penreg.fit_ols(Xs, Ys, intercept=spec.intercept)
    elif param is None:
        raise ValueError("a tuning parameter is required for penalised IComb")
    elif spec.penalty == "ridge":
        cmap = penreg.fit_ridge(Xs, Ys, X.shape[0] * param, intercept=spec.intercept)
    else:
        if warm_start is not None:
            warm_start = warm_start * sx[:, None] / sy[None, :]
        cmap = penreg.fit_mlasso(Xs, Ys, param, intercept=spec.intercept, tol=tol,
                                 max_iter=max_iter, warm_start=warm_start)
    out = penreg.destandardize_map(cmap, sx, sy)
    return penreg.CoefficientMap(
        B=out.B,
        intercept=out.intercept,
        penalty=spec.penalty,
        penalty_value=0.0 if param is None else float(param),
        standardization=spec.standardization,
        scale_x=out.scale_x,
        scale_y=out.scale_y,
        info=cmap.info,
    )


def fit_icomb(spec, h, X, Y, tuning=None, **kwargs):
    """IComb reconciler from historical base forecasts ``X`` and actuals ``Y``."""
    if spec.method not in ("icomb", "emintu"):
        raise ValueError(f"{spec.method!r} is not an information-combination method")
    X = np.asarray(getattr(X, "values", X), dtype=float)
    Y = np.asarray(getattr(Y, "values", Y), dtype=float)
    if X.shape[1] != h.m or Y.shape[1] != h.m:
        raise HierarchyError(f"expected {h.m} columns in forecasts and actuals")
    param = spec.param if tuning is None else tuning
    cmap = fit_coefficients(spec, X, Y, param=param, **kwargs)
    return FittedReconciler(spec=spec, hierarchy=h, coef=cmap, tuning=param,
                            training_window=(0, X.shape[0]))


def apply(reconciler, base):
    """Reconcile one base forecast vector (or a stack of row vectors)."""
    base = np.asarray(base, dtype=float)
    m = reconciler.hierarchy.m
    if base.shape[-1] != m:
        raise ValueError(f"expected length-{m} forecast vectors, got shape {base.shape}")
    if reconciler.SG is not None:
        return base @ reconciler.SG.T
    if reconciler.coef is not None:
        return reconciler.coef.predict(base)
    return base.copy()


def fit(spec, h, X=None, Y=None, W=None):
    """Fit any method from its natural inputs.

    ``X``/``Y`` are historical base forecasts and actuals at the spec's horizon.
    ``W`` overrides the covariance that MinT/WLS would estimate from ``Y - X``.
    """
    from .covariance import ESTIMATORS

    if spec.method == "base":
        return FittedReconciler(spec=spec, hierarchy=h)
    if spec.method in ("bottom_up", "ols"):
        return fit_projection(spec, h)
    if spec.method in ("wls_v", "mint"):
        if W is None:
            E = np.asarray(Y, dtype=float) - np.asarray(X, dtype=float)
            estimator = "diagonal" if spec.method == "wls_v" else spec.cov_estimator
            W = ESTIMATORS[estimator](E, spec.horizon)
        return fit_projection(spec, h, W)
    return fit_icomb(spec, h, X, Y)


__all__ = [
    "ErrorCovariance",
    "FittedReconciler",
    "ReconcilerSpec",
    "apply",
    "decomposition_G",
    "fit",
    "fit_coefficients",
    "fit_icomb",
    "fit_projection",
    "fixed_map",
    "icomb_variants",
    "mint_alternative_form",
    "mint_sample_decomposition",
    "parse_method",
    "projection_G",
]
