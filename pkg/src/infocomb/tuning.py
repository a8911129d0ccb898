"""Penalty grids and rolling-window cross-validation for IComb.

The tuning parameter ``tau`` lives on the per-observation loss scale used by
:func:`infocomb.reconcile.fit_coefficients`.  The largest grid value follows the
glmnet closed form: the smallest multivariate lasso penalty giving an all-zero
fit, and for ridge the same quantity divided by ``0.001`` (glmnet computes the
ridge start as if the elastic-net mixing were ``0.001``).  The smallest value is
``0.01 * tau_max * 10^(-floor(log10 tau_max))``.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import penreg
from .reconcile import ReconcilerSpec

GRID_SIZE = 200
RIDGE_ALPHA_PROXY = 1e-3
FALLBACK_RATIO = 1e-4


@dataclass(frozen=True)
class TuningGrid:
    """Descending, log-equispaced penalty values from ``tau_max`` to ``tau_min``.

    ``fallback`` is set when the closed-form minimum is not below ``tau_max``
    (it is always in ``[0.01, 0.1)``); ``tau_min`` is then
    ``1e-4 * tau_max`` and ``rule_tau_min`` keeps the closed-form value.
    """

    values: np.ndarray
    tau_max: float
    tau_min: float
    rule_tau_min: float = None
    fallback: bool = False

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class CvPlan:
    """Rolling validation layout inside one training window.

    The last ``validation_len`` rows are predicted one at a time, each from a
    fit on the preceding ``N - validation_len`` rows.  ``refit_every`` > 1
    reuses a fit for that many consecutive validation rows.
    """

    validation_len: int = 40
    step: int = 1
    min_second_train: int = 10
    refit_every: int = 1

    def __post_init__(self):
        if self.validation_len < 1:
            raise ValueError("validation_len must be at least 1")
        if self.step < 1 or self.refit_every < 1:
            raise ValueError("step and refit_every must be positive")
        if self.min_second_train < 2:
            raise ValueError("min_second_train must be at least 2")

    def splits(self, n_rows):
        """``(train_start, train_stop, target_row)`` triples for ``n_rows`` rows."""
        second = n_rows - self.validation_len
        if second < self.min_second_train:
            raise ValueError(
                f"{n_rows} training rows leave a second training set of {second}; "
                f"need at least {self.min_second_train} plus {self.validation_len} validation rows"
            )
        out = []
        for i in range(0, self.validation_len, self.step):
            fit_at = i - (i % self.refit_every)
            out.append((fit_at, fit_at + second, second + i))
        return out


def _floor_log10(x):
    q = Fraction(x)
    e = math.floor(math.log10(x))
    while Fraction(10) ** e > q:
        e -= 1
    while Fraction(10) ** (e + 1) <= q:
        e += 1
    return e


def tau_min_rule(tau_max):
    """``0.01 * tau_max * 10^(-floor(log10 tau_max))``, correctly rounded."""
    if not tau_max > 0 or not math.isfinite(tau_max):
        raise ValueError(f"tau_max must be positive and finite, got {tau_max}")
    e = _floor_log10(tau_max)
    return float(Fraction(tau_max) / 100 / Fraction(10) ** e)


def make_grid(tau_max, size=GRID_SIZE):
    if size < 1:
        raise ValueError("grid size must be positive")
    rule = tau_min_rule(tau_max)
    tau_min, fallback = rule, False
    if rule >= tau_max and size > 1:
        tau_min, fallback = FALLBACK_RATIO * tau_max, True
    if size == 1:
        values = np.array([float(tau_max)])
    else:
        values = np.geomspace(tau_max, tau_min, size)
        values[0], values[-1] = tau_max, tau_min
    return TuningGrid(values, float(tau_max), float(values[-1]), rule, fallback)


def build_grid(X, Y, intercept=True, penalty="mlasso", size=GRID_SIZE):
    """Grid for already-standardised ``X``/``Y`` (see module docstring)."""
    tau_max = penreg.lambda_max(X, Y, intercept=intercept)
    if not tau_max > 0:
        raise ValueError("tau_max is zero: the predictors are orthogonal to the responses")
    if penalty == "ridge":
        tau_max = tau_max / RIDGE_ALPHA_PROXY
    elif penalty != "mlasso":
        raise ValueError(f"no tuning grid for penalty {penalty!r}")
    return make_grid(tau_max, size)


def grid_for_spec(spec, X, Y, size=GRID_SIZE):
    Xs, Ys, _, _ = penreg.standardize_fit(X, Y, spec.standardization)
    return build_grid(Xs, Ys, intercept=spec.intercept, penalty=spec.penalty, size=size)


def _path_predictions(spec, Xtr, Ytr, x_new, grid, tol, max_iter):
    """Predictions of ``x_new`` rows for every grid value (``len(grid) x r x m``)."""
    Xs, Ys, sx, sy = penreg.standardize_fit(Xtr, Ytr, spec.standardization)
    xs = x_new / sx
    if spec.penalty == "ridge":
        path = penreg.RidgePath(Xs, Ys, intercept=spec.intercept)
        nus = Xtr.shape[0] * grid
        preds = np.stack([path.predict(row, nus) for row in xs], axis=1)
        return preds * sy
    coefs, icpts = penreg.mlasso_path(
        Xs, Ys, grid, intercept=spec.intercept, tol=tol, max_iter=max_iter
    )
    preds = np.einsum("rk,lkm->lrm", xs, coefs)
    if icpts is not None:
        preds = preds + icpts[:, None, :]
    return preds * sy


def rolling_cv(spec, hierarchy, X, Y, plan=None, grid=None, tol=1e-6, max_iter=10_000):
    """Select the IComb tuning parameter by rolling one-step validation.

    ``X``/``Y`` are the training window's one-step base forecasts and actuals.
    Returns ``(best, curve)``: ``curve[i]`` is the mean over validation rows of
    the squared reconciled error summed over all series, for ``grid.values[i]``.
    Ties go to the larger penalty.
    """
    if not isinstance(spec, ReconcilerSpec) or spec.method != "icomb":
        raise ValueError("rolling_cv tunes icomb specs only")
    if spec.penalty == "none":
        raise ValueError("an unpenalised spec has nothing to tune")
    plan = plan or CvPlan()
    X = np.asarray(getattr(X, "values", X), dtype=float)
    Y = np.asarray(getattr(Y, "values", Y), dtype=float)
    if X.shape != Y.shape or X.shape[1] != hierarchy.m:
        raise ValueError(f"X and Y must both be N x {hierarchy.m}")
    splits = plan.splits(X.shape[0])
    if grid is None:
        grid = grid_for_spec(spec, X, Y)
    values = np.asarray(getattr(grid, "values", grid), dtype=float)

    sse = np.zeros(len(values))
    by_fit = {}
    for start, stop, target in splits:
        by_fit.setdefault((start, stop), []).append(target)
    for (start, stop), targets in by_fit.items():
        preds = _path_predictions(
            spec, X[start:stop], Y[start:stop], X[targets], values, tol, max_iter
        )
        err = preds - Y[targets][None, :, :]
        sse += np.sum(err * err, axis=(1, 2))
    curve = sse / len(splits)
    best = int(np.argmin(curve))
    return float(values[best]), curve


def tune(spec, hierarchy, X, Y, plan=None, size=GRID_SIZE, **kwargs):
    """Grid plus CV in one call; returns ``(best, curve, grid)``."""
    grid = grid_for_spec(spec, X, Y, size=size)
    best, curve = rolling_cv(spec, hierarchy, X, Y, plan=plan, grid=grid, **kwargs)
    return best, curve, grid
