"""Command-line interface: CSV ingestion, dispatch, and report emission.

Exit codes are 0 on success, 2 for invalid input, 3 for numerical failures
(non-convergence, singular systems) and 4 for I/O errors.  Floats are written
with shortest round-trip formatting and JSON keys are sorted, so repeated runs
with the same flags produce identical bytes.
"""

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
from datetime import date, datetime

import numpy as np

from . import evaluate, reconcile, simulate, tuning
from .evaluate import ForecastCube
from .hierarchy import HierarchyError, PanelMatrix, build_hierarchy
from .penreg import ConvergenceError

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
DEMO_SEED = 20_240_601
DEMO_REPS = 10_000
# MSFE sums reported for the univariate three-node study
REFERENCE_SUMS = {"base": 8.600, "ols": 8.583, "mint": 8.569, "icomb": 8.484}


class InputError(ValueError):
    """Malformed input file or inconsistent flags."""


# --------------------------------------------------------------------------
# ingestion
# --------------------------------------------------------------------------


def _fmt(x):
    """Shortest round-trip text for a float."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _read_rows(path):
    """Header plus ``(line_number, row)`` pairs; blank lines are skipped."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: file is empty")
        rows = [(reader.line_num, row) for row in reader if any(c.strip() for c in row)]
    return [c.strip() for c in header], rows


def _number(text, where):
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"{where}: non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise InputError(f"{where}: non-finite value {text!r}")
    return value


def _time_key(labels):
    """Sort key for time labels: integers, else ISO-8601 dates or datetimes."""
    try:
        return {lab: int(lab) for lab in labels}
    except ValueError:
        pass
    out = {}
    for lab in labels:
        try:
            out[lab] = datetime.fromisoformat(lab)
        except ValueError:
            try:
                d = date.fromisoformat(lab)
            except ValueError:
                raise InputError(f"time label {lab!r} is neither an integer nor ISO-8601") from None
            out[lab] = datetime(d.year, d.month, d.day)
    return out


def ingest_hierarchy(path):
    """Hierarchy from a ``child,parent`` CSV; roots have an empty parent."""
    header, rows = _read_rows(path)
    if sorted(header) != ["child", "parent"]:
        raise InputError(f"{path}: header must be 'child,parent', got {','.join(header)}")
    ci, pi = header.index("child"), header.index("parent")
    edges = []
    for line, row in rows:
        if len(row) != 2:
            raise InputError(f"{path}:{line}: expected 2 fields, got {len(row)}")
        edges.append((row[pi].strip() or None, row[ci].strip()))
    return build_hierarchy(edges)


def ingest_actuals(path, h):
    """Actuals from a ``time,<node>,...`` CSV, in node order, sorted by time."""
    header, rows = _read_rows(path)
    if not header or header[0] != "time":
        raise InputError(f"{path}: first column must be 'time'")
    cols = header[1:]
    dup = sorted({c for c in cols if cols.count(c) > 1})
    if dup:
        raise InputError(f"{path}: duplicate node columns {dup}")
    unknown = [c for c in cols if c not in h.index]
    if unknown:
        raise InputError(f"{path}: unknown node columns {unknown}")
    missing = [node for node in h.nodes if node not in cols]
    if missing:
        raise InputError(f"{path}: missing node columns {missing}")
    if not rows:
        raise InputError(f"{path}: no data rows")
    times, values, seen = [], [], {}
    for line, row in rows:
        if len(row) != len(header):
            raise InputError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        label = row[0].strip()
        if label in seen:
            raise InputError(f"{path}: duplicate time {label!r} on lines {seen[label]} and {line}")
        seen[label] = line
        times.append(label)
        values.append([_number(c, f"{path}:{line} column {name!r}") for c, name in zip(row[1:], cols)])
    key = _time_key(times)
    order = sorted(range(len(times)), key=lambda i: key[times[i]])
    panel = PanelMatrix(np.array(values)[order], tuple(cols), tuple(times[i] for i in order))
    return panel.reorder(h)


def ingest_forecasts(path, h):
    """Base forecasts from a long ``origin,horizon,node,value`` CSV.

    Every (origin, horizon, node) cell from horizon 1 to the largest horizon
    present must appear exactly once.
    """
    header, rows = _read_rows(path)
    if header != ["origin", "horizon", "node", "value"]:
        raise InputError(f"{path}: header must be 'origin,horizon,node,value'")
    cells = {}
    for line, row in rows:
        if len(row) != 4:
            raise InputError(f"{path}:{line}: expected 4 fields, got {len(row)}")
        origin, hz, node, value = (c.strip() for c in row)
        try:
            k = int(hz)
        except ValueError:
            raise InputError(f"{path}:{line}: horizon {hz!r} is not an integer") from None
        if k < 1:
            raise InputError(f"{path}:{line}: horizon {k} is invalid (horizons start at 1)")
        if node not in h.index:
            raise InputError(f"{path}:{line}: unknown node {node!r}")
        cell = (origin, k, node)
        if cell in cells:
            raise InputError(
                f"{path}: duplicate cell origin={origin} horizon={k} node={node} "
                f"on lines {cells[cell][0]} and {line}"
            )
        cells[cell] = (line, _number(value, f"{path}:{line}"))
    if not cells:
        raise InputError(f"{path}: no data rows")
    origins = sorted({c[0] for c in cells}, key=_time_key({c[0] for c in cells}).get)
    H = max(c[1] for c in cells)
    F = np.empty((len(origins), H, h.m))
    gaps = []
    for i, o in enumerate(origins):
        for k in range(1, H + 1):
            for j, node in enumerate(h.nodes):
                got = cells.get((o, k, node))
                if got is None:
                    gaps.append(f"({o}, {k}, {node})")
                    continue
                F[i, k - 1, j] = got[1]
    if gaps:
        shown = ", ".join(gaps[:5]) + (" ..." if len(gaps) > 5 else "")
        raise InputError(f"{path}: {len(gaps)} missing (origin, horizon, node) cells: {shown}")
    return ForecastCube(F, tuple(origins), h.nodes)


def panel_to_csv(panel):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", *panel.column_nodes])
    for t, row in zip(panel.time_index, panel.values):
        w.writerow([t, *map(_fmt, row)])
    return buf.getvalue()


def forecasts_to_csv(cube):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["origin", "horizon", "node", "value"])
    for i, o in enumerate(cube.origins):
        for k in range(cube.horizons):
            for j, node in enumerate(cube.nodes):
                w.writerow([o, k + 1, node, _fmt(cube.values[i, k, j])])
    return buf.getvalue()


def hierarchy_to_csv(h):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["child", "parent"])
    for parent, child in h.edges():
        w.writerow([child, parent or ""])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def to_json(obj):
    return json.dumps(_json_safe(obj), sort_keys=True, indent=2) + "\n"


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _load(args):
    h = ingest_hierarchy(args.hierarchy)
    Y = ingest_actuals(args.actuals, h)
    F = ingest_forecasts(args.forecasts, h)
    return h, Y, F


def _spec_from_args(args):
    spec = reconcile.parse_method(args.method)
    if spec.method != "icomb":
        return spec
    return reconcile.ReconcilerSpec(
        "icomb",
        penalty=args.penalty or spec.penalty,
        standardization=args.standardize or spec.standardization,
        intercept=spec.intercept if args.intercept is None else args.intercept,
        param=args.param,
    )


def _origin(args, F):
    if args.origin is None:
        return F.origins[-1]
    if args.origin not in F.origins:
        raise InputError(f"no base forecasts for origin {args.origin!r}")
    return args.origin


def _tune(spec, h, X, Y, args):
    plan = tuning.CvPlan(validation_len=args.validation)
    return tuning.tune(spec, h, X, Y, plan=plan, size=args.grid_size)


def cmd_reconcile(args):
    h, Y, F = _load(args)
    spec = _spec_from_args(args)
    origin = _origin(args, F)
    row = F.origins.index(origin)
    horizons = args.horizons or F.horizons
    if horizons > F.horizons:
        raise InputError(f"forecasts cover {F.horizons} horizons, {horizons} requested")
    tau = spec.param
    if spec.needs_tuning:
        X1, Y1 = evaluate.training_pairs(h, Y, F, origin, 1, args.window)
        tau = _tune(spec, h, X1, Y1, args)[0]
    out = np.empty((1, horizons, h.m))
    for k in range(1, horizons + 1):
        kspec = dataclasses.replace(spec, horizon=k)
        X = Yk = None
        if kspec.method not in ("base", "bottom_up", "ols"):
            X, Yk = evaluate.training_pairs(h, Y, F, origin, k, args.window)
        if kspec.method == "icomb":
            fitted = reconcile.fit_icomb(kspec, h, X, Yk, tuning=tau)
        else:
            fitted = reconcile.fit(kspec, h, X, Yk)
        out[0, k - 1] = fitted.apply(F.values[row, k - 1])
    _emit(forecasts_to_csv(ForecastCube(out, (origin,), h.nodes)), args.out)
    return EXIT_OK


def cmd_tune(args):
    h, Y, F = _load(args)
    spec = _spec_from_args(args)
    if not spec.needs_tuning:
        raise InputError(f"method {spec.label!r} has no tuning parameter to select")
    origin = _origin(args, F)
    X, Yk = evaluate.training_pairs(h, Y, F, origin, 1, args.window)
    best, curve, grid = _tune(spec, h, X, Yk, args)
    report = {
        "method": spec.label,
        "origin": origin,
        "window": args.window,
        "validation": args.validation,
        "tau": best,
        "tau_max": grid.tau_max,
        "tau_min": grid.tau_min,
        "tau_min_rule": grid.rule_tau_min,
        "grid_fallback": grid.fallback,
        "grid": grid.values,
        "cv_loss": curve,
    }
    _emit(to_json(report), args.out)
    return EXIT_OK


def _methods(text):
    tokens = [t for t in text.split(",") if t.strip()]
    if not tokens:
        raise InputError("no methods given")
    out = []
    for t in tokens:
        if t.strip().lower() == "icomb:all":
            out.extend(reconcile.icomb_variants())
        else:
            out.append(reconcile.parse_method(t))
    return out


def cmd_evaluate(args):
    h, Y, F = _load(args)
    report = evaluate.rolling_evaluate(
        h, Y, F, _methods(args.methods), window=args.window, horizons=args.horizons,
        plan=tuning.CvPlan(validation_len=args.validation), tune_every=args.tune_every,
        grid_size=args.grid_size, threads=args.threads,
    )
    if args.out is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "method", "group", "cell", "value"])
        for kind, method, group, cell, value in report.rows():
            w.writerow([kind, method, group, cell, _fmt(value)])
        _emit(buf.getvalue(), args.out)
    sys.stdout.write(report.table())
    return EXIT_OK


def cmd_simulate(args):
    res = simulate.run_study(args.scenario, args.reps, args.seed, length=args.length,
                             threads=args.threads)
    rows = res.as_rows()
    if args.format == "json":
        text = to_json({"scenario": res.scenario, "reps": res.reps, "seed": res.seed,
                        "length": res.length, "max_coherency": res.max_coherency,
                        "rows": rows})
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "method", "msfe_sum", "std_error"])
        for r in rows:
            w.writerow([r["scenario"], r["method"], _fmt(r["msfe_sum"]), _fmt(r["std_error"])])
        text = buf.getvalue()
    _emit(text, args.out)
    return EXIT_OK


def cmd_demo(args):
    res = simulate.run_study("univariate", args.reps, args.seed, threads=args.threads)
    lines = [f"univariate three-node study: {res.reps} replications, seed {res.seed}",
             f"{'method':<8}{'msfe_sum':>10}{'std_err':>10}{'reference':>11}"]
    for name, ref in REFERENCE_SUMS.items():
        lines.append(f"{name:<8}{res.msfe[name]:>10.3f}{res.std_error[name]:>10.3f}{ref:>11.3f}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_synth(args):
    panel = simulate.synthetic_panel(length=args.length, horizons=args.horizons, seed=args.seed)
    h = panel.hierarchy
    times = tuple(str(t) for t in range(panel.actuals.shape[0]))
    cube = evaluate._cube_from_array(panel.forecasts, h.nodes)
    cube = ForecastCube(cube.values, tuple(str(o) for o in cube.origins), h.nodes)
    os.makedirs(args.dir, exist_ok=True)
    files = {
        "hierarchy.csv": hierarchy_to_csv(h),
        "actuals.csv": panel_to_csv(PanelMatrix(panel.actuals, h.nodes, times)),
        "forecasts.csv": forecasts_to_csv(cube),
    }
    for name, text in files.items():
        _emit(text, os.path.join(args.dir, name))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    common.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                        help="worker threads (results do not depend on it)")
    common.add_argument("--out", help="output file (default: stdout)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--hierarchy", required=True, help="child,parent CSV")
    data.add_argument("--actuals", required=True, help="time,<nodes> CSV")
    data.add_argument("--forecasts", required=True,
                      help="origin,horizon,node,value CSV")
    data.add_argument("--window", type=_positive_int, default=120,
                      help="training pairs per fit (default 120)")
    data.add_argument("--grid-size", type=_positive_int, default=tuning.GRID_SIZE)
    data.add_argument("--validation", type=_positive_int, default=40,
                      help="rolling validation rows for tuning (default 40)")

    single = argparse.ArgumentParser(add_help=False)
    single.add_argument("--method", default="icomb", help="bu, ols, wlsv, mint, emintu or icomb")
    single.add_argument("--penalty", choices=reconcile.PENALTIES)
    single.add_argument("--standardize", choices=("none", "x", "xy"))
    single.add_argument("--intercept", dest="intercept", action="store_true", default=None)
    single.add_argument("--no-intercept", dest="intercept", action="store_false")
    single.add_argument("--param", type=float, help="fixed tuning parameter (skips tuning)")
    single.add_argument("--origin", help="forecast origin (default: the last one)")

    parser = argparse.ArgumentParser(
        prog="infocomb", description="Forecast reconciliation by information combination."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconcile", parents=[common, data, single],
                       help="reconcile the base forecasts of one origin")
    p.add_argument("--horizons", type=_positive_int)
    p.set_defaults(func=cmd_reconcile)

    p = sub.add_parser("tune", parents=[common, data, single],
                       help="select the IComb tuning parameter by rolling validation")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", parents=[common, data],
                       help="rolling-origin evaluation with PRIAL tables")
    p.add_argument("--methods", default="bu,ols,wlsv,mint,emintu,icomb:all",
                   help="comma-separated method tokens; icomb:all expands to 12 variants")
    p.add_argument("--horizons", type=_positive_int)
    p.add_argument("--tune-every", type=_positive_int, default=1,
                   help="re-tune penalised IComb every this many origins")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", parents=[common], help="three-node Monte Carlo study")
    p.add_argument("--scenario", choices=simulate.SCENARIOS, default="univariate")
    p.add_argument("--reps", type=_positive_int, default=100_000)
    p.add_argument("--length", type=_positive_int, default=simulate.STUDY_LENGTH)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("demo", parents=[common], help="short univariate study vs reference sums")
    p.add_argument("--reps", type=_positive_int, default=DEMO_REPS)
    p.set_defaults(func=cmd_demo, seed=DEMO_SEED)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic panel as CSV files")
    p.add_argument("--dir", required=True, help="output directory")
    p.add_argument("--length", type=_positive_int, default=200)
    p.add_argument("--horizons", type=_positive_int, default=3)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("hierarchy", "actuals", "forecasts"):
        path = getattr(args, name, None)
        if path is not None and not os.path.isfile(path):
            print(f"infocomb: I/O error: no such file: {path}", file=sys.stderr)
            return EXIT_IO
    try:
        return args.func(args)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"infocomb: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, HierarchyError, ValueError) as exc:
        print(f"infocomb: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"infocomb: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
