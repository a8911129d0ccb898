"""Hot numeric loops, compiled with numba when available.

Two kernels carry the inner loops of the package:

* ``linear_recursion`` -- the first-order recursion ``s_t = a_t s_{t-1} + b_t u_t``
  applied row-wise to a batch of paths.  AR(1) factor generation, the ARMA(1,1)
  one-step forecast filter and the scalar Kalman filter are all instances.
* ``group_cd`` -- block coordinate descent for the multivariate (group) lasso
  with one group per predictor row, on the Gram matrices ``X'X/T`` and
  ``X'Y/T``.

Each kernel has a loop implementation (compiled by ``numba.njit``) and a pure
numpy implementation vectorised over the batch/response axis.  The compiled path
is used unless ``INFOCOMB_DISABLE_NUMBA`` is set to a truthy value or numba is
not importable.  Both implementations stay importable so tests and the benchmark
can compare them directly.
"""

import math
import os

import numpy as np

_FLAG = "INFOCOMB_DISABLE_NUMBA"


def _numba_requested():
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:  # pragma: no cover - exercised implicitly
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False


# --------------------------------------------------------------------------
# linear recursion
# --------------------------------------------------------------------------


def _linear_recursion_loops(u, a, b, init, out):
    reps, T = u.shape
    for r in range(reps):
        s = init[r]
        for t in range(T):
            s = a[t] * s + b[t] * u[r, t]
            out[r, t] = s
    return out


def linear_recursion_numpy(u, a, b, init):
    """Numpy version of :func:`linear_recursion`, vectorised over paths."""
    u = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty_like(u)
    s = np.array(init, dtype=np.float64, copy=True)
    for t in range(u.shape[1]):
        s = a[t] * s + b[t] * u[:, t]
        out[:, t] = s
    return out


# --------------------------------------------------------------------------
# group-lasso block coordinate descent
# --------------------------------------------------------------------------


def _group_cd_loops(G, C, B, lam, tol, max_iter, obj):
    k, m = C.shape
    g = np.empty(m)
    for it in range(max_iter):
        max_delta = 0.0
        for j in range(k):
            sj = G[j, j]
            if sj <= 0.0:
                continue
            # g = C_j - G_j B + G_jj B_j
            for c in range(m):
                g[c] = C[j, c]
            for l in range(k):
                w = G[j, l]
                if w != 0.0 and l != j:
                    for c in range(m):
                        g[c] -= w * B[l, c]
            norm = 0.0
            for c in range(m):
                norm += g[c] * g[c]
            norm = math.sqrt(norm)
            if norm <= lam:
                scale = 0.0
            else:
                scale = (1.0 - lam / norm) / sj
            rs = math.sqrt(sj)
            for c in range(m):
                new = scale * g[c]
                ad = abs(new - B[j, c]) * rs
                if ad > max_delta:
                    max_delta = ad
                B[j, c] = new
        if max_delta > tol and it + 1 < max_iter and obj.shape[0] < max_iter:
            continue
        # objective without the constant ||Y||^2 / 2T
        slot = it if obj.shape[0] >= max_iter else 0
        quad = 0.0
        for j in range(k):
            for l in range(k):
                w = G[j, l]
                if w != 0.0:
                    dot = 0.0
                    for c in range(m):
                        dot += B[j, c] * B[l, c]
                    quad += w * dot
        lin = 0.0
        pen = 0.0
        for j in range(k):
            nrm = 0.0
            for c in range(m):
                lin += C[j, c] * B[j, c]
                nrm += B[j, c] * B[j, c]
            pen += math.sqrt(nrm)
        obj[slot] = 0.5 * quad - lin + lam * pen
        if max_delta <= tol:
            return it + 1
    return max_iter


def group_cd_numpy(G, C, B, lam, tol, max_iter, obj):
    """Numpy version of :func:`group_cd`; updates ``B`` in place."""
    k = C.shape[0]
    for it in range(max_iter):
        max_delta = 0.0
        for j in range(k):
            sj = G[j, j]
            if sj <= 0.0:
                continue
            g = C[j] - G[j] @ B + sj * B[j]
            norm = math.sqrt(float(g @ g))
            scale = 0.0 if norm <= lam else (1.0 - lam / norm) / sj
            new = scale * g
            max_delta = max(max_delta, float(np.max(np.abs(new - B[j]))) * math.sqrt(sj))
            B[j] = new
        if max_delta > tol and it + 1 < max_iter and obj.shape[0] < max_iter:
            continue
        obj[it if obj.shape[0] >= max_iter else 0] = (
            0.5 * float(np.sum(B * (G @ B)))
            - float(np.sum(C * B))
            + lam * float(np.sum(np.sqrt(np.sum(B * B, axis=1))))
        )
        if max_delta <= tol:
            return it + 1
    return max_iter


def _group_kkt_loops(G, C, B, lam):
    """Largest active stationarity residual and largest inactive gradient norm."""
    k, m = C.shape
    worst_active = 0.0
    worst_inactive = 0.0
    for j in range(k):
        bn = 0.0
        for c in range(m):
            bn += B[j, c] * B[j, c]
        bn = math.sqrt(bn)
        acc = 0.0
        for c in range(m):
            grad = C[j, c]
            for l in range(k):
                grad -= G[j, l] * B[l, c]
            if bn > 0.0:
                r = -grad + lam * B[j, c] / bn
            else:
                r = grad
            acc += r * r
        acc = math.sqrt(acc)
        if bn > 0.0:
            if acc > worst_active:
                worst_active = acc
        elif acc > worst_inactive:
            worst_inactive = acc
    return worst_active, worst_inactive


def group_kkt_numpy(G, C, B, lam):
    grad = C - G @ B
    norms = np.sqrt(np.sum(B * B, axis=1))
    active = norms > 0
    resid = -grad[active] + lam * B[active] / norms[active, None]
    stat = np.sqrt(np.sum(resid * resid, axis=1))
    sub = np.sqrt(np.sum(grad[~active] ** 2, axis=1))
    return float(np.max(stat, initial=0.0)), float(np.max(sub, initial=0.0))


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

if _HAVE_NUMBA:
    _linear_recursion_nb = numba.njit(cache=True, nogil=True)(_linear_recursion_loops)
    group_cd_numba = numba.njit(cache=True, nogil=True)(_group_cd_loops)
    group_kkt_numba = numba.njit(cache=True, nogil=True)(_group_kkt_loops)

    def linear_recursion_numba(u, a, b, init):
        """Compiled version of :func:`linear_recursion`."""
        u = np.ascontiguousarray(u, dtype=np.float64)
        out = np.empty_like(u)
        return _linear_recursion_nb(
            u,
            np.ascontiguousarray(a, dtype=np.float64),
            np.ascontiguousarray(b, dtype=np.float64),
            np.ascontiguousarray(init, dtype=np.float64),
            out,
        )

else:  # pragma: no cover
    linear_recursion_numba = None
    group_cd_numba = None
    group_kkt_numba = None

USE_NUMBA = _HAVE_NUMBA and _numba_requested()


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"


def linear_recursion(u, a, b, init):
    """Run ``s_t = a[t] * s_{t-1} + b[t] * u[:, t]`` for every row of ``u``.

    Parameters
    ----------
    u : (reps, T) array
        Inputs, one path per row.
    a, b : (T,) arrays
        Time-varying recursion and input coefficients shared by all rows.
    init : (reps,) array
        State before the first input.

    Returns
    -------
    (reps, T) array of states ``s_1 .. s_T``.
    """
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), (np.shape(u)[1],))
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), (np.shape(u)[1],))
    init = np.broadcast_to(np.asarray(init, dtype=np.float64), (np.shape(u)[0],))
    if USE_NUMBA:
        return linear_recursion_numba(u, a, b, init)
    return linear_recursion_numpy(u, a, b, init)


def group_cd(G, C, B, lam, tol, max_iter, obj):
    """Block coordinate descent sweeps for the multivariate lasso, in Gram form.

    Minimises ``(1/2) tr(B'GB) - tr(C'B) + lam * sum_j ||B[j]||_2``, which equals
    ``(1/2T)||Y - XB||^2 + lam * sum_j ||B[j]||_2`` up to a constant when
    ``G = X'X/T`` and ``C = X'Y/T``.  ``B`` is updated in place.  If ``obj`` has
    room for ``max_iter`` entries, ``obj[i]`` receives the objective (without
    the constant) after sweep ``i``; otherwise only ``obj[0]`` is written, with
    the objective after the last sweep.  Stops once
    the largest change of a fitted-value scaled coefficient
    (``sqrt(G_jj) * |dB_jc|``) in a sweep is at most ``tol``.

    Returns the number of sweeps performed.
    """
    if USE_NUMBA:
        return int(group_cd_numba(G, C, B, float(lam), float(tol), int(max_iter), obj))
    return group_cd_numpy(G, C, B, float(lam), float(tol), int(max_iter), obj)


def group_kkt(G, C, B, lam):
    """``(max active stationarity, max inactive ||grad||)`` for the Gram-form lasso."""
    if USE_NUMBA:
        return group_kkt_numba(G, C, B, float(lam))
    return group_kkt_numpy(G, C, B, float(lam))
