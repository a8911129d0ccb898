"""Multivariate regression engines for information-combination reconciliation.

Every estimator regresses all ``m`` response columns of ``Y`` on the same ``k``
predictors ``X`` and returns a :class:`CoefficientMap` ``B`` (``k x m``), so a
new row ``x`` is mapped to ``x @ B + intercept``.  Intercepts are always fitted
by centring, never by an explicit column of ones, so penalties never touch them.

When ``Y`` satisfies ``Y @ S_perp = 0`` every estimator here returns ``B`` with
``B @ S_perp = 0`` (and a coherent intercept): OLS and ridge because ``B`` is a
linear map of ``X'Y``, the multivariate lasso because each block update is a
scalar multiple of a combination of rows of ``Y``.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from . import _kernels

ACTIVE_TOL = 1e-12
SVD_RCOND = 1e-10
STANDARDIZATIONS = ("none", "x_only", "x_and_y")
_SINGULAR_COND = 1e12
CD_CHUNK = 300
NEWTON_MAX_DIM = 2000


class ConvergenceError(RuntimeError):
    """Coordinate descent stopped at ``max_iter`` without meeting its tolerances."""

    def __init__(self, message, result=None, kkt_gap=None):
        super().__init__(message)
        self.result = result
        self.kkt_gap = kkt_gap


@dataclass(frozen=True)
class CoefficientMap:
    """Affine map ``x -> x @ B + intercept`` from ``k`` inputs to ``m`` outputs."""

    B: np.ndarray
    intercept: np.ndarray = None
    penalty: str = "none"
    penalty_value: float = 0.0
    standardization: str = "none"
    scale_x: np.ndarray = None
    scale_y: np.ndarray = None
    info: dict = field(default_factory=dict, compare=False)

    @property
    def shape(self):
        return self.B.shape

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        out = X @ self.B
        if self.intercept is not None:
            out = out + self.intercept
        return out


def _as_array(A):
    values = getattr(A, "values", A)
    return np.asarray(values, dtype=float)


def _check_pair(X, Y, min_rows=2):
    X = _as_array(X)
    Y = _as_array(Y)
    if X.ndim != 2 or Y.ndim != 2:
        raise ValueError("X and Y must be 2-d")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"row-count mismatch: X has {X.shape[0]} rows, Y has {Y.shape[0]}")
    if X.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {X.shape[0]}")
    return X, Y


def _center(X, Y, intercept):
    if not intercept:
        return X, Y, None, None
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    return X - x_mean, Y - y_mean, x_mean, y_mean


def _intercept(B, x_mean, y_mean):
    if x_mean is None:
        return None
    return y_mean - x_mean @ B


def fit_ols(X, Y, intercept=False, rcond=SVD_RCOND):
    """Least squares ``B = argmin ||Y - XB||``, minimum-norm when ``X`` is rank deficient.

    Solved by the thin SVD of the (centred) ``X`` with singular values below
    ``rcond * sigma_max`` discarded, which is the unconstrained empirical MinT
    map when ``X`` holds historical base forecasts.
    """
    X, Y = _check_pair(X, Y)
    Xc, Yc, x_mean, y_mean = _center(X, Y, intercept)
    B, _, rank, sv = np.linalg.lstsq(Xc, Yc, rcond=rcond)
    return CoefficientMap(
        B=B,
        intercept=_intercept(B, x_mean, y_mean),
        penalty="none",
        info={"rank": int(rank)},
    )


def fit_ridge(X, Y, nu, penalty_diag="identity", intercept=False):
    """Ridge estimate ``B = (X'X + nu * Lambda)^{-1} X'Y``.

    ``penalty_diag`` selects ``Lambda``: ``"identity"`` or ``"gram_diag"`` (the
    diagonal of ``X'X`` after centring, which shrinks standardised coefficients).
    """
    if nu < 0:
        raise ValueError(f"ridge penalty must be non-negative, got {nu}")
    X, Y = _check_pair(X, Y)
    Xc, Yc, x_mean, y_mean = _center(X, Y, intercept)
    gram = Xc.T @ Xc
    if penalty_diag == "identity":
        lam = np.ones(gram.shape[0])
    elif penalty_diag == "gram_diag":
        lam = np.diag(gram).copy()
        if np.any(lam <= 0):
            raise ValueError("gram_diag penalty needs every predictor column to be non-zero")
    else:
        raise ValueError(f"unknown penalty_diag {penalty_diag!r}")
    A = gram + nu * np.diag(lam)
    try:
        chol = linalg.cho_factor(A, check_finite=False)
        if nu == 0 and np.linalg.cond(A) > _SINGULAR_COND:
            raise linalg.LinAlgError("ill-conditioned")
    except linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "X'X + nu*Lambda is singular; use fit_ols (SVD least squares) for nu = 0"
        ) from None
    B = linalg.cho_solve(chol, Xc.T @ Yc, check_finite=False)
    return CoefficientMap(
        B=B,
        intercept=_intercept(B, x_mean, y_mean),
        penalty="ridge",
        penalty_value=float(nu),
        info={"penalty_diag": penalty_diag},
    )


class RidgePath:
    """All ridge solutions ``(X'X + nu I)^{-1} X'Y`` from one thin SVD of ``X``."""

    def __init__(self, X, Y, intercept=False):
        X, Y = _check_pair(X, Y)
        Xc, Yc, self.x_mean, self.y_mean = _center(X, Y, intercept)
        U, self.s, Vt = np.linalg.svd(Xc, full_matrices=False)
        self.V = Vt.T
        self.UtY = U.T @ Yc

    def coef(self, nu):
        d = self.s / (self.s**2 + nu)
        return (self.V * d) @ self.UtY

    def predict(self, x_new, nus):
        """Predictions at one row ``x_new`` for every ``nu`` (``len(nus) x m``)."""
        x = np.asarray(x_new, dtype=float)
        if self.x_mean is not None:
            x = x - self.x_mean
        a = (x @ self.V) * self.s
        nus = np.asarray(nus, dtype=float)
        weights = a[None, :] / (self.s[None, :] ** 2 + nus[:, None])
        out = weights @ self.UtY
        if self.y_mean is not None:
            out = out + self.y_mean
        return out


def lambda_max(X, Y, intercept=False):
    """Smallest ``lam`` at which the multivariate lasso returns ``B = 0``.

    Equals ``max_j ||x_j' Y||_2 / T`` on centred data when ``intercept`` is set.
    """
    X, Y = _check_pair(X, Y, min_rows=1)
    if X.shape[1] == 0:
        raise ValueError("lambda_max of an empty predictor matrix")
    Xc, Yc, _, _ = _center(X, Y, intercept)
    G = Xc.T @ Yc / X.shape[0]
    return float(np.max(np.sqrt(np.sum(G * G, axis=1))))


def mlasso_objective(X, Y, B, lam):
    R = Y - X @ B
    return 0.5 * float(np.sum(R * R)) / X.shape[0] + lam * float(
        np.sum(np.sqrt(np.sum(B * B, axis=1)))
    )


def mlasso_kkt(X, Y, B, lam):
    """Optimality residuals of the multivariate lasso at ``B``.

    Returns ``(stationarity, subgradient)``: for each active row ``j`` the norm
    of ``-x_j'(Y - XB)/T + lam * b_j/||b_j||``; for each inactive row the norm of
    ``x_j'(Y - XB)/T`` (which must not exceed ``lam``).  Entries not applicable to
    a row are ``nan``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    T = X.shape[0]
    G = X.T @ (Y - X @ B) / T
    norms = np.sqrt(np.sum(B * B, axis=1))
    active = norms > 0
    stationarity = np.full(B.shape[0], np.nan)
    subgrad = np.full(B.shape[0], np.nan)
    if np.any(active):
        resid = -G[active] + lam * B[active] / norms[active, None]
        stationarity[active] = np.sqrt(np.sum(resid * resid, axis=1))
    subgrad[~active] = np.sqrt(np.sum(G[~active] ** 2, axis=1))
    return stationarity, subgrad


def _kkt_ok(G, C, B, lam, tol):
    """KKT certificate in Gram form (``G = X'X/T``, ``C = X'Y/T``)."""
    gap_active, worst_inactive = _kernels.group_kkt(G, C, B, lam)
    gap_inactive = worst_inactive - lam * (1 + 10 * tol)
    ok = gap_active <= 10 * tol and gap_inactive <= 0
    return ok, float(max(gap_active, gap_inactive, 0.0))


class _LassoProblem:
    """Centred data divided by its overall RMS, shared by every fit on a path."""

    def __init__(self, X, Y, intercept):
        X, Y = _check_pair(X, Y, min_rows=1)
        Xc, Yc, self.x_mean, self.y_mean = _center(X, Y, intercept)
        self.T, self.k = Xc.shape
        self.m = Yc.shape[1]
        self.sx = float(np.sqrt(np.mean(Xc * Xc))) or 1.0
        self.sy = float(np.sqrt(np.mean(Yc * Yc))) or 1.0
        Xn = Xc / self.sx
        Yn = Yc / self.sy
        self.G = np.ascontiguousarray(Xn.T @ Xn / self.T)
        self.C = np.ascontiguousarray(Xn.T @ Yn / self.T)
        self.yy = 0.5 * float(np.sum(Yn * Yn)) / self.T

    def to_raw(self, Bn):
        return Bn * (self.sy / self.sx)

    def from_raw(self, B):
        return np.array(B, dtype=float) * (self.sx / self.sy)

    def _objective(self, Bn, lam_n):
        return self.yy + 0.5 * float(np.sum(Bn * (self.G @ Bn))) - float(np.sum(self.C * Bn)) + (
            lam_n * float(np.sum(np.sqrt(np.sum(Bn * Bn, axis=1))))
        )

    def solve(self, lam, Bn, tol, max_iter, record=True):
        """Run CD from ``Bn`` (normalised units, updated in place) until certified.

        Sweeps run in chunks.  When CD stalls (a chunk ends without meeting the
        step tolerance, or a tightened step tolerance still fails the KKT
        check) a Newton polish on the active rows is tried, which rescues the
        slow linear convergence of CD on nearly collinear predictors.  With
        ``record`` off only one objective value per chunk is traced.
        """
        lam_n = lam / (self.sx * self.sy)
        Bn[np.diag(self.G) <= 0] = 0.0
        sweeps = 0
        trace = []
        step_tol = tol
        converged = False
        gap = np.inf
        chunk = CD_CHUNK
        obj = np.empty(chunk if record else 1)
        failures = 0
        while sweeps < max_iter:
            budget = min(chunk, max_iter - sweeps)
            if record and obj.shape[0] < budget:
                obj = np.empty(budget)
            n = _kernels.group_cd(self.G, self.C, Bn, lam_n, step_tol, budget, obj)
            trace.extend(obj[: n if record else 1] + self.yy)
            sweeps += n
            ok, gap = _kkt_ok(self.G, self.C, Bn, lam_n, tol)
            if ok:
                converged = True
                break
            chunk = CD_CHUNK
            stalled = n == budget or failures > 0
            if n < budget:
                step_tol = max(step_tol / 10, 1e-15)
                failures += 1
            if stalled and _newton_polish(self.G, self.C, Bn, lam_n, tol):
                # a few sweeps settle which rows are zero before polishing again
                chunk = 10
                trace.append(self._objective(Bn, lam_n))
                ok, gap = _kkt_ok(self.G, self.C, Bn, lam_n, tol)
                if ok:
                    converged = True
                    break
        info = {
            "sweeps": sweeps,
            "kkt_gap": gap,
            "objective_trace": np.asarray(trace) * self.sy * self.sy,
            "converged": converged,
        }
        return Bn, info


def _min_norm_solve(H, g):
    """``H^+ g`` for symmetric PSD ``H``; Cholesky when well conditioned."""
    try:
        cf = linalg.cho_factor(H, check_finite=False)
        diag = np.abs(np.diag(cf[0]))
        if diag.min() > 1e-7 * diag.max():
            return linalg.cho_solve(cf, g, check_finite=False)
    except linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(H)
    keep = w > 1e-12 * max(float(w[-1]), 0.0)
    return V[:, keep] @ ((V[:, keep].T @ g) / w[keep])


def _newton_polish(G_full, C_full, B, lam, tol, max_steps=50):
    """Damped Newton on the active rows of ``B`` (updated in place).

    Away from zero rows the objective is smooth; its Hessian is ``G (x) I_m``
    plus ``lam / ||b_j|| (I - u_j u_j')`` per nonzero row.  Each step
    backtracks until the objective strictly decreases, and a row whose step
    would pass through the origin is set to zero in the trial point.  Rows
    that reach zero stay there; CD may revive them afterwards.  Returns
    whether ``B`` changed.
    """
    rows = np.flatnonzero(np.any(B != 0.0, axis=1))
    m = B.shape[1]
    if rows.size == 0 or rows.size * m > NEWTON_MAX_DIM:
        return False
    G_all = G_full[np.ix_(rows, rows)]
    C_all = C_full[rows]
    eye = np.eye(m)

    def objective(bk):
        return 0.5 * float(np.sum(bk * (G_all @ bk))) - float(np.sum(C_all * bk)) + (
            lam * float(np.sum(np.sqrt(np.sum(bk * bk, axis=1))))
        )

    bk = B[rows].copy()
    f_start = f = objective(bk)
    for _ in range(max_steps):
        live = np.flatnonzero(np.any(bk != 0.0, axis=1))
        if live.size == 0:
            break
        b = bk[live]
        norms = np.sqrt(np.sum(b * b, axis=1))
        u = b / norms[:, None]
        grad = G_all[live] @ bk - C_all[live] + lam * u
        if float(np.max(np.abs(grad))) <= 0.1 * tol:
            break
        H = np.kron(G_all[np.ix_(live, live)], eye)
        for j in range(live.size):
            blk = slice(j * m, (j + 1) * m)
            H[blk, blk] += lam / norms[j] * (eye - np.outer(u[j], u[j]))
        d = np.zeros_like(bk)
        d[live] = -_min_norm_solve(H, grad.ravel()).reshape(live.size, m)
        target = f - 1e-15 * max(1.0, abs(f))
        t = 1.0
        while t > 1e-10:
            trial = bk + t * d
            trial[np.sum(trial * bk, axis=1) <= 0] = 0.0
            f_new = objective(trial)
            if f_new < target:
                break
            t *= 0.5
        else:
            break
        bk, f = trial, f_new
    if not f < f_start:
        return False
    B[rows] = bk
    return True


def _lasso_result(prob, lam, Bn, info, max_iter):
    B = prob.to_raw(Bn)
    result = CoefficientMap(
        B=B,
        intercept=_intercept(B, prob.x_mean, prob.y_mean),
        penalty="mlasso",
        penalty_value=float(lam),
        info=info,
    )
    if not info["converged"]:
        gap = info["kkt_gap"]
        raise ConvergenceError(
            f"multivariate lasso did not converge in {max_iter} sweeps (KKT gap {gap:.3g})",
            result=result,
            kkt_gap=gap,
        )
    return result


def fit_mlasso(X, Y, lam, intercept=False, tol=1e-7, max_iter=10_000, warm_start=None):
    """Multivariate (group) lasso by block coordinate descent.

    Minimises ``(1/2T)||Y - XB||_F^2 + lam * sum_j ||B[j, :]||_2`` with one group
    per predictor row.  The problem is solved after dividing ``X`` and ``Y`` by
    their overall root-mean-square (with ``lam`` rescaled to match) so ``tol``
    and the KKT checks are scale free.  A fit is accepted when a sweep changes no
    scaled coefficient by more than ``tol`` and the KKT certificate holds: active
    rows with stationarity residual at most ``10 * tol``, inactive rows with
    ``||x_j'R/T|| <= lam (1 + 10 tol)``.

    Raises
    ------
    ConvergenceError
        When ``max_iter`` sweeps pass without an accepted fit; the partial map
        and its KKT gap are attached.
    """
    if lam < 0:
        raise ValueError(f"lasso penalty must be non-negative, got {lam}")
    prob = _LassoProblem(X, Y, intercept)
    if warm_start is None:
        Bn = np.zeros((prob.k, prob.m))
    else:
        Bn = prob.from_raw(warm_start)
    Bn, info = prob.solve(lam, Bn, tol, max_iter)
    return _lasso_result(prob, lam, Bn, info, max_iter)


def mlasso_path(X, Y, lams, intercept=False, tol=1e-7, max_iter=10_000):
    """Multivariate lasso fits along ``lams``.

    Each fit starts from the previous one's solution, so pass ``lams`` in
    decreasing order.  Returns ``(B, intercepts)``
    with shapes ``(len(lams), k, m)`` and ``(len(lams), m)`` (the intercepts
    are ``None`` without ``intercept``).
    """
    lams = np.asarray(lams, dtype=float)
    if np.any(lams < 0):
        raise ValueError("lasso penalties must be non-negative")
    prob = _LassoProblem(X, Y, intercept)
    Bn = np.zeros((prob.k, prob.m))
    coefs = np.empty((len(lams), prob.k, prob.m))
    for i, lam in enumerate(lams):
        Bn, info = prob.solve(lam, Bn, tol, max_iter, record=False)
        if not info["converged"]:
            _lasso_result(prob, lam, Bn, info, max_iter)
        coefs[i] = prob.to_raw(Bn)
    if prob.x_mean is None:
        return coefs, None
    return coefs, prob.y_mean[None, :] - np.einsum("k,lkm->lm", prob.x_mean, coefs)


def standardize_fit(X, Y, mode="none"):
    """Divide columns by their standard deviations according to ``mode``.

    Returns ``(X_star, Y_star, scale_x, scale_y)`` with ``X_star = X / scale_x``.
    ``"x_only"`` leaves ``Y`` unscaled; ``"none"`` leaves both unscaled.  No
    centring happens here.
    """
    X, Y = _check_pair(X, Y, min_rows=1)
    if mode not in STANDARDIZATIONS:
        raise ValueError(f"unknown standardization {mode!r}; expected one of {STANDARDIZATIONS}")
    scale_x = np.ones(X.shape[1])
    scale_y = np.ones(Y.shape[1])
    if mode in ("x_only", "x_and_y"):
        scale_x = _column_scale(X, "X")
    if mode == "x_and_y":
        scale_y = _column_scale(Y, "Y")
    return X / scale_x, Y / scale_y, scale_x, scale_y


def _column_scale(A, name):
    sd = A.std(axis=0)
    bad = np.flatnonzero(sd <= 1e-12 * max(1.0, float(np.max(np.abs(A), initial=0.0))))
    if bad.size:
        raise ValueError(f"zero-variance column(s) {bad.tolist()} in {name}; cannot standardize")
    return sd


def destandardize_map(cmap, scale_x, scale_y):
    """Express a map fitted on standardised data in raw units.

    ``B = diag(1/scale_x) B* diag(scale_y)`` and ``intercept = intercept* * scale_y``.
    """
    scale_x = np.asarray(scale_x, dtype=float)
    scale_y = np.asarray(scale_y, dtype=float)
    k, m = cmap.B.shape
    if scale_x.shape != (k,) or scale_y.shape != (m,):
        raise ValueError(
            f"scale shapes {scale_x.shape}, {scale_y.shape} do not match map shape {cmap.B.shape}"
        )
    if np.any(scale_x <= 0) or np.any(scale_y <= 0):
        raise ValueError("scales must be positive")
    B = cmap.B / scale_x[:, None] * scale_y[None, :]
    icpt = None if cmap.intercept is None else cmap.intercept * scale_y
    return replace(cmap, B=B, intercept=icpt, scale_x=scale_x, scale_y=scale_y)


def count_active_groups(cmap, tol=ACTIVE_TOL):
    B = getattr(cmap, "B", cmap)
    return int(np.sum(np.any(np.abs(B) > tol, axis=1)))
