"""Rolling-origin out-of-sample evaluation of reconciliation methods."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import penreg, reconcile, tuning
from .covariance import ESTIMATORS
from .hierarchy import HierarchyError, PanelMatrix

RANGES = ((1, 6), (1, 12))


@dataclass(frozen=True)
class ForecastCube:
    """Base forecasts indexed ``(origin, horizon - 1, node)``.

    ``origins`` holds the time labels at which each forecast set was made; they
    must appear in the actuals' time index.
    """

    values: np.ndarray
    origins: tuple
    nodes: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 3:
            raise HierarchyError("forecast cube must be 3-d (origin, horizon, node)")
        if values.shape[0] != len(self.origins) or values.shape[2] != len(self.nodes):
            raise HierarchyError("forecast cube shape does not match its labels")
        if len(set(self.origins)) != len(self.origins):
            raise HierarchyError("duplicate forecast origins")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origins", tuple(self.origins))
        object.__setattr__(self, "nodes", tuple(self.nodes))

    @property
    def horizons(self):
        return self.values.shape[1]

    def reorder(self, h):
        missing = [node for node in h.nodes if node not in self.nodes]
        if missing:
            raise HierarchyError(f"forecasts are missing node columns: {missing}")
        pos = {node: i for i, node in enumerate(self.nodes)}
        return ForecastCube(self.values[:, :, [pos[n] for n in h.nodes]], self.origins, h.nodes)


def prial(msfe_method, msfe_base):
    """``100 * (MSFE_method - MSFE_base) / MSFE_base``; negative means improvement."""
    if not msfe_base > 0:
        raise ValueError(f"PRIAL needs a positive base MSFE, got {msfe_base}")
    return 100.0 * (msfe_method - msfe_base) / msfe_base


@dataclass
class EvaluationReport:
    """Scores of every method at every node and horizon.

    ``msfe[(method, node, h)]`` and ``base_msfe[(node, h)]`` hold raw MSFEs.
    ``prial[(method, group, cell)]`` uses groups that are node names or level
    names (``level0`` for the top, and so on) and cells that are horizon strings
    (``"1"``) or horizon ranges (``"1-6"``); range cells average MSFEs over the
    horizons first.  Level MSFEs are unweighted means over member nodes.
    """

    methods: list
    nodes: tuple
    levels: dict
    horizons: int
    origins: int
    msfe: dict
    base_msfe: dict
    prial: dict
    active_counts: dict = field(default_factory=dict)
    tuning: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def cells(self):
        out = [str(h) for h in range(1, self.horizons + 1)]
        out += [f"{a}-{b}" for a, b in RANGES if b <= self.horizons]
        return out

    def rows(self):
        """Long-form records, one per report cell, in a fixed order."""
        out = []
        for node in self.nodes:
            for h in range(1, self.horizons + 1):
                out.append(("base_msfe", "base", node, str(h), self.base_msfe[(node, h)]))
        for method in self.methods:
            for node in self.nodes:
                for h in range(1, self.horizons + 1):
                    out.append(("msfe", method, node, str(h), self.msfe[(method, node, h)]))
        for method in self.methods:
            for group in list(self.levels) + list(self.nodes):
                for cell in self.cells:
                    out.append(("prial", method, group, cell, self.prial[(method, group, cell)]))
        return out

    def table(self, scale=1.0):
        """Text table of level PRIALs with a base-MSFE row per level."""
        width = max([len(m) for m in self.methods] + [8])
        cells = self.cells
        lines = []
        for level, idx in self.levels.items():
            members = ", ".join(self.nodes[i] for i in idx)
            lines.append(f"{level} ({members})")
            lines.append(" " * width + "".join(f"{c:>10}" for c in cells))
            base = [self._group_msfe(None, level, c) * scale for c in cells]
            lines.append(f"{'base MSFE':<{width}}" + "".join(f"{v:>10.4g}" for v in base))
            for method in self.methods:
                vals = [self.prial[(method, level, c)] for c in cells]
                lines.append(f"{method:<{width}}" + "".join(f"{v:>10.2f}" for v in vals))
            lines.append("")
        return "\n".join(lines)

    def _group_msfe(self, method, group, cell):
        idx = self.levels.get(group)
        if idx is None:
            idx = [self.nodes.index(group)]
        a, _, b = cell.partition("-")
        hs = range(int(a), int(b or a) + 1)
        if method is None:
            vals = [self.base_msfe[(self.nodes[i], h)] for i in idx for h in hs]
        else:
            vals = [self.msfe[(method, self.nodes[i], h)] for i in idx for h in hs]
        return float(np.mean(vals))


def _cube_from_array(F, nodes):
    keep = [t for t in range(F.shape[0]) if np.all(np.isfinite(F[t]))]
    return ForecastCube(F[keep], tuple(keep), nodes)


class _Context:
    """Aligned arrays plus the pair lookup shared by all origins."""

    def __init__(self, h, actuals, base, window, horizons):
        if isinstance(actuals, PanelMatrix):
            actuals = actuals.reorder(h)
            self.Y = actuals.values
            time_index = actuals.time_index
        else:
            self.Y = np.asarray(actuals, dtype=float)
            time_index = tuple(range(self.Y.shape[0]))
        if self.Y.ndim != 2 or self.Y.shape[1] != h.m:
            raise HierarchyError(f"actuals must have {h.m} columns")
        if not isinstance(base, ForecastCube):
            base = _cube_from_array(np.asarray(base, dtype=float), h.nodes)
        base = base.reorder(h)
        if horizons is None:
            horizons = base.horizons
        if horizons > base.horizons:
            raise HierarchyError(f"forecasts cover {base.horizons} horizons, {horizons} requested")
        row_of = {label: i for i, label in enumerate(time_index)}
        unknown = [o for o in base.origins if o not in row_of]
        if unknown:
            raise HierarchyError(f"forecast origins not in the actuals time index: {unknown[:5]}")
        self.h = h
        self.window = window
        self.H = horizons
        self.time_index = time_index
        self.F = {row_of[o]: base.values[i, :horizons] for i, o in enumerate(base.origins)}
        self.rows = sorted(self.F)

    def pairs(self, p, k):
        """Training pairs for origin row ``p`` at horizon ``k``: last ``window`` targets up to ``p``."""
        qs = range(p - k - self.window + 1, p - k + 1)
        missing = [q for q in qs if q not in self.F or q < 0]
        if missing:
            label = self.time_index[p]
            raise HierarchyError(
                f"insufficient history at origin {label!r}: horizon {k} needs forecasts "
                f"from {len(missing)} earlier origins that are not available"
            )
        X = np.stack([self.F[q][k - 1] for q in qs])
        if not np.all(np.isfinite(X)):
            raise HierarchyError(f"missing forecast cells in the window of origin {self.time_index[p]!r}")
        Y = self.Y[p - self.window + 1 : p + 1]
        return X, Y

    def eligible(self):
        out = []
        for p in self.rows:
            if p + self.H >= self.Y.shape[0]:
                continue
            if all(q in self.F for q in range(p - self.H - self.window + 1, p)):
                if p - self.H - self.window + 1 >= 0:
                    out.append(p)
        return out


def _fit_one(spec, ctx, X, Y, tau):
    if spec.method == "base":
        return reconcile.FittedReconciler(spec=spec, hierarchy=ctx.h)
    if spec.method in ("bottom_up", "ols"):
        return reconcile.fit_projection(spec, ctx.h)
    if spec.method in ("wls_v", "mint"):
        estimator = "diagonal" if spec.method == "wls_v" else spec.cov_estimator
        W = ESTIMATORS[estimator](Y - X, spec.horizon)
        return reconcile.fit_projection(spec, ctx.h, W)
    return reconcile.fit_icomb(spec, ctx.h, X, Y, tuning=tau)


def _evaluate_origin(p, specs, ctx, taus):
    sq = {}
    active = {}
    targets = ctx.Y[p + 1 : p + ctx.H + 1]
    pairs = [ctx.pairs(p, k) for k in range(1, ctx.H + 1)]
    for spec in specs:
        out = np.empty((ctx.H, ctx.h.m))
        for k in range(1, ctx.H + 1):
            X, Y = pairs[k - 1]
            fitted = _fit_one(spec, ctx, X, Y, taus.get(spec.label))
            pred = fitted.apply(ctx.F[p][k - 1])
            out[k - 1] = (targets[k - 1] - pred) ** 2
            if k == 1 and fitted.coef is not None:
                active[spec.label] = penreg.count_active_groups(fitted.coef)
        sq[spec.label] = out
    return sq, active


def rolling_evaluate(hierarchy, actuals, base_forecasts, methods, window=120, horizons=None,
                     origins=None, plan=None, tune_every=1, grid_size=tuning.GRID_SIZE,
                     threads=1):
    """Score every method over rolling forecast origins.

    At each origin every method is refit, per horizon ``k``, on the ``window``
    most recent (forecast, actual) pairs whose actuals are already observed,
    then applies to that origin's ``k``-step base forecasts.  Penalised IComb
    parameters are chosen by :func:`infocomb.tuning.rolling_cv` on the one-step
    pairs and reused for every horizon; ``tune_every > 1`` re-tunes only at
    every ``tune_every``-th origin.

    ``origins`` limits evaluation to the given time labels (default: every
    origin with full history and all ``horizons`` actuals available).
    """
    h = hierarchy
    ctx = _Context(h, actuals, base_forecasts, window, horizons)
    specs = [m if isinstance(m, reconcile.ReconcilerSpec) else reconcile.parse_method(m)
             for m in methods]
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate methods in {labels}")

    if origins is None:
        rows = ctx.eligible()
    else:
        row_of = {label: i for i, label in enumerate(ctx.time_index)}
        rows = []
        for o in origins:
            if o not in row_of or row_of[o] not in ctx.F:
                raise HierarchyError(f"no base forecasts for origin {o!r}")
            if row_of[o] + ctx.H >= ctx.Y.shape[0]:
                raise HierarchyError(f"actuals end before the last horizon of origin {o!r}")
            rows.append(row_of[o])
    if not rows:
        raise HierarchyError(f"no origin has {window} training pairs and {ctx.H} future actuals")

    tuned = [s for s in specs if s.needs_tuning]
    tune_jobs = [(i, spec) for i in range(0, len(rows), tune_every) for spec in tuned]

    def run_tune(job):
        i, spec = job
        X, Y = ctx.pairs(rows[i], 1)
        grid = tuning.grid_for_spec(spec, X, Y, size=grid_size)
        return tuning.rolling_cv(spec, h, X, Y, plan=plan, grid=grid)[0]

    best = dict(zip(tune_jobs, _map(run_tune, tune_jobs, threads)))
    taus = [{s.label: best[(i - i % tune_every, s)] for s in tuned} for i in range(len(rows))]
    for s in specs:
        if s.method == "icomb" and s.param is not None:
            for t in taus:
                t[s.label] = s.param

    jobs = [(p, specs, ctx, t) for p, t in zip(rows, taus)]
    results = _map(lambda a: _evaluate_origin(*a), jobs, threads)

    base_spec = reconcile.ReconcilerSpec("base")
    base_sq = np.mean([_base_sq(ctx, p) for p in rows], axis=0)
    base_msfe = {(node, k): float(base_sq[k - 1, j])
                 for j, node in enumerate(h.nodes) for k in range(1, ctx.H + 1)}
    msfe = {}
    for label in labels:
        mean_sq = np.mean([r[0][label] for r in results], axis=0)
        for j, node in enumerate(h.nodes):
            for k in range(1, ctx.H + 1):
                msfe[(label, node, k)] = float(mean_sq[k - 1, j])

    levels = {f"level{d}": idx for d, idx in h.levels().items()}
    report = EvaluationReport(
        methods=labels,
        nodes=h.nodes,
        levels=levels,
        horizons=ctx.H,
        origins=len(rows),
        msfe=msfe,
        base_msfe=base_msfe,
        prial={},
        active_counts={label: [r[1][label] for r in results]
                       for label in labels if any(label in r[1] for r in results)},
        tuning={s.label: [t[s.label] for t in taus] for s in specs if s.label in taus[0]},
        metadata={
            "window": window,
            "level_weighting": "unweighted",
            "origins": [ctx.time_index[p] for p in rows],
            "tune_every": tune_every,
            "reference": base_spec.label,
        },
    )
    for label in labels:
        for group in list(levels) + list(h.nodes):
            for cell in report.cells:
                b = report._group_msfe(None, group, cell)
                v = report._group_msfe(label, group, cell)
                report.prial[(label, group, cell)] = prial(v, b) if b > 0 else float("nan")
    return report


def _map(fn, jobs, threads):
    """``[fn(j) for j in jobs]``, on a thread pool when ``threads > 1``."""
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def training_pairs(hierarchy, actuals, base_forecasts, origin, horizon, window):
    """The ``window`` (k-step forecast, actual) pairs available at ``origin``.

    Pairs end with the forecast made ``horizon`` periods before ``origin``, so
    every actual used is observed by the origin.
    """
    ctx = _Context(hierarchy, actuals, base_forecasts, window, horizon)
    row = ctx.time_index.index(origin) if origin in ctx.time_index else None
    if row is None:
        raise HierarchyError(f"origin {origin!r} is not in the actuals time index")
    return ctx.pairs(row, horizon)


def _base_sq(ctx, p):
    targets = ctx.Y[p + 1 : p + ctx.H + 1]
    return (targets - ctx.F[p]) ** 2
