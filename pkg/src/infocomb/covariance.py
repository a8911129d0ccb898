"""Estimators of the h-step base forecast error covariance ``W_h``.

Errors are treated as mean zero throughout: ``W = E'E / N`` with no centring.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ErrorCovariance:
    W: np.ndarray
    estimator: str
    horizon: int = 1
    sample_size: int = 0
    intensity: float = None

    def is_positive_definite(self):
        try:
            np.linalg.cholesky(self.W)
        except np.linalg.LinAlgError:
            return False
        return bool(np.all(np.isfinite(self.W)))


def _errors(errors):
    E = np.asarray(getattr(errors, "values", errors), dtype=float)
    if E.ndim != 2:
        raise ValueError("errors must be a 2-d (rows x series) array")
    if E.shape[0] < 2:
        raise ValueError(f"need at least 2 error rows, got {E.shape[0]}")
    return E


def sample_cov(errors, h=1):
    """``W = (1/N) sum_t e_t e_t'`` over the ``N`` available h-step error rows."""
    E = _errors(errors)
    W = E.T @ E / E.shape[0]
    return ErrorCovariance(W=W, estimator="sample", horizon=h, sample_size=E.shape[0])


def diagonal_cov(errors, h=1):
    """Variance scaling: the sample covariance with off-diagonal entries zeroed."""
    base = sample_cov(errors, h)
    return ErrorCovariance(
        W=np.diag(np.diag(base.W)), estimator="diagonal", horizon=h, sample_size=base.sample_size
    )


def shrinkage_intensity(E):
    """Analytic intensity for shrinking a covariance towards its diagonal.

    Ratio of the summed estimated variances of the off-diagonal sample
    correlations to their summed squares, clamped to ``[0, 1]`` (the
    Schafer-Strimmer rule on mean-zero data).
    """
    T, m = E.shape
    if m < 2:
        return 0.0
    sd = np.sqrt(np.mean(E * E, axis=0))
    if np.any(sd <= 0):
        raise ValueError("a series has zero error variance; intensity undefined")
    Z = E / sd
    corr = Z.T @ Z / T
    Z2 = Z * Z
    var_corr = (Z2.T @ Z2 - (Z.T @ Z) ** 2 / T) / (T * (T - 1))
    off = ~np.eye(m, dtype=bool)
    num = float(np.sum(var_corr[off]))
    den = float(np.sum(corr[off] ** 2))
    if den <= 0.0:
        return 1.0
    return float(min(1.0, max(0.0, num / den)))


def shrink_cov(errors, h=1):
    """``W = delta * diag(W_sample) + (1 - delta) * W_sample``.

    ``delta`` comes from :func:`shrinkage_intensity`.  The result is positive
    definite whenever every sample variance is positive and ``delta > 0``.
    """
    E = _errors(errors)
    base = sample_cov(E, h)
    delta = shrinkage_intensity(E)
    W = (1.0 - delta) * base.W
    W[np.diag_indices_from(W)] = np.diag(base.W)
    return ErrorCovariance(
        W=W, estimator="shrink", horizon=h, sample_size=E.shape[0], intensity=delta
    )


ESTIMATORS = {"sample": sample_cov, "diagonal": diagonal_cov, "shrink": shrink_cov}
