"""Monte Carlo experiments on a one-factor, three-series hierarchy.

The data generating process is

    f_t  = phi f_{t-1} + e1_t
    y2_t = c2 + a f_t + e2_t
    y3_t = c3 + a f_t + e3_t
    y1_t = y2_t + y3_t

with i.i.d. standard normal shocks.  Each series is forecast one step ahead
by the univariate model implied for it, an ARMA(1,1) whose forecast puts
weight ``(phi - theta) theta^(j-1)`` on ``y_{T-j+1}``.  In the
``factor`` scenario the forecaster of ``y3`` knows ``f_{T+1}`` instead.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels, penreg, reconcile
from .covariance import ErrorCovariance
from .hierarchy import build_hierarchy, max_coherency_violation

SCENARIOS = ("univariate", "factor")
ORACLE_SEED = 20_240_917
STUDY_LENGTH = 200
BLOCK = 4096


def three_node():
    """``y1 = y2 + y3`` with nodes ``y1``, ``y2``, ``y3``."""
    return build_hierarchy([(None, "y1"), ("y1", "y2"), ("y1", "y3")])


def _scenario(name):
    aliases = {"factor_informed": "factor", "uni": "univariate"}
    name = aliases.get(name, name)
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    return name


@dataclass(frozen=True)
class FactorDgp:
    phi: float = 0.6
    loading: float = 0.8
    intercepts: tuple = (1.0, 1.0)
    seed: int = None

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ValueError(f"|phi| must be below 1, got {self.phi}")

    @property
    def factor_var(self):
        return 1.0 / (1.0 - self.phi**2)

    @property
    def means(self):
        c2, c3 = self.intercepts
        return np.array([c2 + c3, c2, c3])


@dataclass(frozen=True)
class ArmaForecaster:
    """One-step forecast ``mean + sum_j (ar - ma) ma^(j-1) (y_{T-j+1} - mean)``.

    Truncating the sum at the sample start keeps the forecast unbiased for the
    unconditional mean; with an infinite past the constant is
    ``mean (1 - ar) / (1 - ma)``.
    """

    mean: float
    ar: float = 0.6
    ma: float = 0.33
    innovation_var: float = None

    def __post_init__(self):
        if not abs(self.ma) < 1:
            raise ValueError("weights are only summable for |ma| < 1")

    @property
    def const(self):
        return self.mean * (1.0 - self.ar) / (1.0 - self.ma)

    def weights(self, length):
        """Weights on ``y_T, y_{T-1}, ...`` (``length`` of them)."""
        return (self.ar - self.ma) * self.ma ** np.arange(length)


TOP_MODEL = ArmaForecaster(mean=2.0, ma=0.24, innovation_var=4.99)
BOTTOM_MODEL = ArmaForecaster(mean=1.0, ma=0.33, innovation_var=1.8)
MODELS = (TOP_MODEL, BOTTOM_MODEL, BOTTOM_MODEL)


def univariate_forecast(series, model):
    """Forecast of the value after ``series`` (last element is ``y_T``)."""
    y = np.asarray(series, dtype=float)
    if y.shape[-1] == 0:
        raise ValueError("cannot forecast an empty series")
    w = model.weights(y.shape[-1])
    return model.mean + (y[..., ::-1] - model.mean) @ w


def _draw(seed, start, count, length):
    """Standard normals for replications ``start .. start+count-1``.

    Replication ``r`` always uses the stream spawned for ``(seed, r)``.
    """
    out = np.empty((count, 3 * length + 1))
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(start + i,)))
        out[i] = rng.standard_normal(3 * length + 1)
    return out


def _paths_from_draws(dgp, z, length):
    f0 = z[:, 0] * math.sqrt(dgp.factor_var)
    e1 = z[:, 1 : 1 + length]
    e2 = z[:, 1 + length : 1 + 2 * length]
    e3 = z[:, 1 + 2 * length :]
    f = _kernels.linear_recursion(e1, dgp.phi, 1.0, f0)
    c2, c3 = dgp.intercepts
    y2 = c2 + dgp.loading * f + e2
    y3 = c3 + dgp.loading * f + e3
    y = np.stack([y2 + y3, y2, y3], axis=-1)
    return y, f


def generate_paths(dgp, T, reps, seed=None, start=0):
    """``reps`` independent coherent panels of length ``T``.

    Returns ``(y, f)`` with ``y`` of shape ``(reps, T, 3)`` (columns ``y1, y2,
    y3``) and the factor ``f`` of shape ``(reps, T)``.  ``f_0`` is drawn from the
    stationary distribution, so no burn-in is needed.
    """
    if T < 1 or reps < 1:
        raise ValueError("T and reps must be positive")
    seed = dgp.seed if seed is None else seed
    if seed is None:
        raise ValueError("a seed is required")
    return _paths_from_draws(dgp, _draw(seed, start, reps, T), T)


def base_forecasts(y_hist, f_next, dgp, scenario):
    """One-step base forecasts from histories ``y_hist`` (``reps x T x 3``)."""
    out = np.column_stack([univariate_forecast(y_hist[..., i], MODELS[i]) for i in range(3)])
    if _scenario(scenario) == "factor":
        out[:, 2] = dgp.intercepts[1] + dgp.loading * f_next
    return out


# --------------------------------------------------------------------------
# oracles
# --------------------------------------------------------------------------


def _oracle_pairs(scenario, n_paths, steps, burn, seed, dgp):
    rng = np.random.default_rng(seed)
    total = burn + steps + 1
    e = rng.standard_normal((3, n_paths, total))
    f0 = rng.standard_normal(n_paths) * math.sqrt(dgp.factor_var)
    f = _kernels.linear_recursion(e[0], dgp.phi, 1.0, f0)
    c2, c3 = dgp.intercepts
    y2 = c2 + dgp.loading * f + e[1]
    y3 = c3 + dgp.loading * f + e[2]
    ys = (y2 + y3, y2, y3)
    preds = []
    for y, model in zip(ys, MODELS):
        # xhat_{t+1} = (ar - ma) (y_t - mean) + ma xhat_t, started at zero
        xhat = _kernels.linear_recursion(y - model.mean, model.ma, model.ar - model.ma, 0.0)
        preds.append(model.mean + xhat[:, burn : burn + steps])
    X = np.stack(preds, axis=-1)
    Y = np.stack([y[:, burn + 1 : burn + steps + 1] for y in ys], axis=-1)
    if scenario == "factor":
        X[..., 2] = c3 + dgp.loading * f[:, burn + 1 : burn + steps + 1]
    return X.reshape(-1, 3), Y.reshape(-1, 3)


@lru_cache(maxsize=8)
def _oracle_sample(scenario, n_paths, steps, burn, seed, dgp):
    return _oracle_pairs(scenario, n_paths, steps, burn, seed, dgp)


def oracle_mint_w(scenario="univariate", n_paths=1000, steps=1000, burn=300,
                  seed=ORACLE_SEED, dgp=FactorDgp()):
    """Brute-force one-step error covariance of the scenario's base forecasts.

    Averages outer products of ``n_paths * steps`` simulated error triples; the
    forecasts run the exact ARMA filter after ``burn`` warm-up steps.
    """
    X, Y = _oracle_sample(_scenario(scenario), n_paths, steps, burn, seed, dgp)
    E = Y - X
    return ErrorCovariance(W=E.T @ E / E.shape[0], estimator="oracle", horizon=1,
                           sample_size=E.shape[0])


def oracle_icomb_b(scenario="univariate", n_paths=1000, steps=1000, burn=300,
                   seed=ORACLE_SEED, dgp=FactorDgp()):
    """Brute-force population regression of ``y_{T+1}`` on the base forecasts (with intercept)."""
    X, Y = _oracle_sample(_scenario(scenario), n_paths, steps, burn, seed, dgp)
    return penreg.fit_ols(X, Y, intercept=True)


def population_moments(scenario="univariate", length=STUDY_LENGTH, dgp=FactorDgp()):
    """Exact Gaussian second moments of (demeaned) forecasts and targets.

    Every quantity in one replication is a linear function of the ``3 L + 4``
    shocks (``f_0`` and three shocks per period), so the moments follow from the
    loading matrices.  Returns ``(Sxx, Sxy, Syy)`` for the forecast triple ``x``
    and target ``y``.
    """
    scenario = _scenario(scenario)
    L, phi, a = length, dgp.phi, dgp.loading
    n_shock = 1 + 3 * (L + 1)
    F = np.zeros((L + 2, n_shock))
    F[0, 0] = math.sqrt(dgp.factor_var)
    for t in range(1, L + 2):
        F[t] = phi * F[t - 1]
        F[t, t] += 1.0
    Y = np.zeros((3, L + 2, n_shock))
    for t in range(1, L + 2):
        for k in (1, 2):
            Y[k, t] = a * F[t]
            Y[k, t, 1 + k * (L + 1) + t - 1] += 1.0
        Y[0, t] = Y[1, t] + Y[2, t]
    X = np.zeros((3, n_shock))
    for i, model in enumerate(MODELS):
        X[i] = model.weights(L) @ Y[i, L:0:-1]
    if scenario == "factor":
        X[2] = a * F[L + 1]
    target = Y[:, L + 1]
    return X @ X.T, X @ target.T, target @ target.T


def population_study(scenario="univariate", length=STUDY_LENGTH, dgp=FactorDgp()):
    """Exact MSFE sums of the four study methods, plus the ideal ``W`` and ``B``."""
    Sxx, Sxy, Syy = population_moments(scenario, length, dgp)
    h = three_node()

    def msfe(A):
        # E||y - A x||^2 for a linear map A
        return float(np.trace(Syy - 2 * A @ Sxy + A @ Sxx @ A.T))

    W = Syy - Sxy - Sxy.T + Sxx
    B = np.linalg.solve(Sxx, Sxy)
    out = {
        "base": msfe(np.eye(3)),
        "ols": msfe(reconcile.fit_projection(reconcile.ReconcilerSpec("ols"), h).SG),
        "mint": msfe(reconcile.fit_projection(reconcile.ReconcilerSpec("mint"), h, W).SG),
        "icomb": msfe(B.T),
    }
    return out, W, B


# --------------------------------------------------------------------------
# study
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyResult:
    scenario: str
    reps: int
    seed: int
    length: int
    msfe: dict
    std_error: dict
    max_coherency: float
    extra: dict = field(default_factory=dict, compare=False)

    def as_rows(self):
        return [
            {"scenario": self.scenario, "method": k, "msfe_sum": self.msfe[k],
             "std_error": self.std_error[k]}
            for k in ("base", "ols", "mint", "icomb")
        ]


def _study_block(args):
    dgp, scenario, seed, start, count, length, maps = args
    z = _draw(seed, start, count, length + 1)
    y, f = _paths_from_draws(dgp, z, length + 1)
    hist, target = y[:, :length], y[:, length]
    x = base_forecasts(hist, f[:, length], dgp, scenario)
    sq, worst = {}, 0.0
    for name, fn in maps.items():
        pred = fn(x)
        if name != "base":
            worst = max(worst, max_coherency_violation(three_node(), pred))
        err = target - pred
        sq[name] = np.sum(err * err, axis=1)
    return sq, worst


def run_study(scenario, reps, seed, length=STUDY_LENGTH, dgp=FactorDgp(), threads=1):
    """MSFE sums of base, OLS, ideal MinT and ideal IComb forecasts.

    Replication ``r`` draws from its own stream ``(seed, r)``, so results do not
    depend on ``threads``.
    """
    scenario = _scenario(scenario)
    if reps < 1:
        raise ValueError("reps must be positive")
    h = three_node()
    ols = reconcile.fit_projection(reconcile.ReconcilerSpec("ols"), h)
    mint = reconcile.fit_projection(
        reconcile.ReconcilerSpec("mint"), h, oracle_mint_w(scenario, dgp=dgp)
    )
    icomb = oracle_icomb_b(scenario, dgp=dgp)
    maps = {
        "base": lambda x: x,
        "ols": ols.apply,
        "mint": mint.apply,
        "icomb": icomb.predict,
    }
    jobs = [
        (dgp, scenario, seed, start, min(BLOCK, reps - start), length, maps)
        for start in range(0, reps, BLOCK)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_study_block, jobs))
    else:
        parts = [_study_block(job) for job in jobs]
    msfe, se = {}, {}
    for name in maps:
        sq = np.concatenate([p[0][name] for p in parts])
        msfe[name] = float(np.mean(sq))
        se[name] = float(np.std(sq, ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    worst = max(p[1] for p in parts)
    return StudyResult(scenario, reps, seed, length, msfe, se, worst)


# --------------------------------------------------------------------------
# top-down counterexample
# --------------------------------------------------------------------------

TOPDOWN_G = np.array([[0.5, 0.0, 0.0], [0.5, 0.0, 0.0]])


def kalman_gains(dgp, length):
    """Filter gains for ``u_t = (y2 + y3 - c2 - c3)/2 = a f_t + v_t``, ``var(v) = 1/2``."""
    a, phi, R = dgp.loading, dgp.phi, 0.5
    P = dgp.factor_var
    gains = np.empty(length)
    for t in range(length):
        P_pred = phi * phi * P + 1.0 if t else dgp.factor_var
        K = P_pred * a / (a * a * P_pred + R)
        gains[t] = K
        P = (1.0 - K * a) * P_pred
    return gains


def conditional_mean(y_hist, dgp):
    """``E(y_{T+1} | y_1..y_T)`` for each replication (``reps x 3``)."""
    length = y_hist.shape[1]
    c2, c3 = dgp.intercepts
    u = (y_hist[..., 1] + y_hist[..., 2] - c2 - c3) / 2.0
    K = kalman_gains(dgp, length)
    # m_t = phi (1 - a K_t) m_{t-1} + K_t u_t; the first prediction uses E f_1 = 0
    a_t = dgp.phi * (1.0 - dgp.loading * K)
    a_t[0] = 0.0
    m = _kernels.linear_recursion(u, a_t, K, 0.0)[:, -1]
    f_next = dgp.phi * m
    return np.column_stack([c2 + c3 + 2 * dgp.loading * f_next,
                            c2 + dgp.loading * f_next,
                            c3 + dgp.loading * f_next])


@dataclass(frozen=True)
class TopdownResult:
    bias: np.ndarray
    std_error: np.ndarray
    reps: int
    GS: np.ndarray
    sgs_equals_s: bool
    max_coherency: float

    @property
    def z_scores(self):
        return self.bias / self.std_error


def topdown_unbiasedness_check(reps, seed, noise_sd=0.5, length=STUDY_LENGTH, dgp=FactorDgp(),
                               G=TOPDOWN_G):
    """Mean reconciled error of a top-down map applied to unbiased forecasts.

    Base forecasts are the exact conditional means plus independent
    ``N(0, noise_sd^2)`` noise, hence conditionally unbiased.
    """
    h = three_node()
    fixed = reconcile.fixed_map(h, G, label="top-down")
    errs = []
    worst = 0.0
    for start in range(0, reps, BLOCK):
        count = min(BLOCK, reps - start)
        z = _draw(seed, start, count, length + 1)
        y, _ = _paths_from_draws(dgp, z, length + 1)
        cm = conditional_mean(y[:, :length], dgp)
        # noise streams use two-element spawn keys, disjoint from the path streams
        noise_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, start)))
        base = cm + noise_sd * noise_rng.standard_normal(cm.shape)
        rec = fixed.apply(base)
        worst = max(worst, max_coherency_violation(h, rec))
        errs.append(y[:, length] - rec)
    E = np.concatenate(errs)
    GS = G @ h.S
    return TopdownResult(
        bias=E.mean(axis=0),
        std_error=E.std(axis=0, ddof=1) / math.sqrt(reps),
        reps=reps,
        GS=GS,
        sgs_equals_s=bool(np.array_equal(h.S @ GS, h.S)),
        max_coherency=worst,
    )


# --------------------------------------------------------------------------
# synthetic hierarchy for end-to-end evaluation
# --------------------------------------------------------------------------


def regional_hierarchy():
    """Total, three regions, two zones per region (1 + 3 + 6 nodes)."""
    edges = [(None, "Total")]
    for r in "ABC":
        edges.append(("Total", r))
    for r in "ABC":
        edges += [(r, r + "1"), (r, r + "2")]
    return build_hierarchy(edges)


@dataclass(frozen=True)
class SyntheticPanel:
    hierarchy: object
    actuals: np.ndarray
    forecasts: np.ndarray
    factor: np.ndarray

    @property
    def horizons(self):
        return self.forecasts.shape[1]


def synthetic_panel(length=200, horizons=3, seed=0, phi=0.8, ewma=0.3):
    """Factor-driven panel whose base forecasts hold unequal information.

    Bottom series load on one AR(1) factor plus their own noise.  The total's
    forecaster sees the factor but is miscalibrated (under-loaded and biased);
    every other node gets an exponentially smoothed forecast of its own past,
    with smoothing constants spread around ``ewma`` so that the aggregate
    forecasts are not exact sums of the bottom ones.
    ``forecasts[t, h-1]`` is made at origin ``t`` for ``actuals[t + h]``;
    cells whose origin has no past are ``nan``.
    """
    h = regional_hierarchy()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    n = h.n
    loads = np.linspace(0.6, 1.4, n)
    means = np.linspace(5.0, 10.0, n)
    noise_sd = np.linspace(0.6, 1.0, n)
    e = rng.standard_normal(length)
    f0 = rng.standard_normal() / math.sqrt(1.0 - phi * phi)
    f = _kernels.linear_recursion(e[None, :], phi, 1.0, f0)[0]
    bottom = means + np.outer(f, loads) + rng.standard_normal((length, n)) * noise_sd
    Y = h.aggregate(bottom)

    F = np.full((length, horizons, h.m), np.nan)
    alpha = ewma * np.linspace(0.6, 1.4, h.m)
    level = np.empty(h.m)
    for t in range(length):
        level = Y[t] if t == 0 else alpha * Y[t] + (1 - alpha) * level
        if t < 1:
            continue
        F[t, :, :] = level
        for k in range(horizons):
            F[t, k, 0] = 0.5 * loads.sum() * phi ** (k + 1) * f[t] + means.sum() + 1.0
    return SyntheticPanel(h, Y, F, f)
