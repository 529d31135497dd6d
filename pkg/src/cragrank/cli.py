"""Command-line interface.

Subcommands: preprocess, fit, predict, evaluate, crossval, synth.  All float
output is serialized with 9 significant digits, and every command is
deterministic given its inputs and seeds (including across --threads
settings).  Exit codes: 0 success, 1 bad input, 2 empty result.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, ParseError
from .evaluation import (
    compute_metrics,
    cross_validate_predictions,
    linear_fit_r_squared,
    make_fold_plan,
    precision_recall_curve,
    predict_probabilities,
    rating_at_nearest_week,
)
from .ingest import (
    load_tick_mapping,
    parse_ascent_log,
    preprocess,
    read_clean_dataset,
    write_clean_dataset,
    write_raw_ascent_log,
)
from .model import AscentOutcome, Hyperparameters, bt_probability
from .solver import FitReport, ModelState, bt_marginal_log_likelihood, fit, initialize_state
from .synthetic import generate_world, simulate_trials, trials_to_raw_rows, write_truth_csv

_HYPER_KEYS = ("sigma_c_sq", "sigma_r_sq", "w_sq", "g0", "b")


def _fmt(x: float) -> str:
    return f"{x:.9g}"


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit 1 (reserving 2 for empty results)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_hyper_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("hyperparameters")
    group.add_argument("--hyper-config", metavar="FILE",
                       help="JSON file of hyperparameter overrides (flags win)")
    group.add_argument("--sigma-c-sq", type=float, help="initial climber prior variance")
    group.add_argument("--sigma-r-sq", type=float, help="route prior variance")
    group.add_argument("--w-sq", type=float, help="rating drift variance per week")
    group.add_argument("--g0", type=int, help="reference grade with prior mean 0")
    group.add_argument("--b", type=float, help="prior-mean slope per grade")


def _add_fit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-iterations", type=int, default=1000,
                        help="outer iteration budget (default 1000)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads; output is identical for any value")


def _resolve_hyper(args: argparse.Namespace) -> Hyperparameters:
    values: dict = {}
    if getattr(args, "hyper_config", None):
        with open(args.hyper_config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(_HYPER_KEYS)
        if unknown:
            raise ValueError(f"unknown hyperparameter keys in config: {sorted(unknown)}")
        values.update(loaded)
    for key in _HYPER_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if "g0" in values:
        values["g0"] = int(values["g0"])
    return Hyperparameters(**values)


# ---------------------------------------------------------------------------
# Ratings file round-trip


def _write_ratings(state: ModelState, report: FitReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "route_ratings.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["route_idx", "route_id", "grade", "rating"])
        for idx, route in enumerate(state.routes):
            writer.writerow([idx, route.route_id, route.grade, _fmt(route.rating)])
    with open(out_dir / "climber_ratings.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["climber_idx", "climber_id", "week", "rating"])
        for idx, climber in enumerate(state.climbers):
            for week, rating in zip(climber.weeks, climber.ratings):
                writer.writerow([idx, climber.climber_id, int(week), _fmt(rating)])
    with open(out_dir / "fit_report.txt", "w", encoding="utf-8") as fh:
        fh.write(f"iterations={report.iterations}\n")
        fh.write(f"converged={'true' if report.converged else 'false'}\n")
        fh.write(f"final_bt_log_likelihood={_fmt(report.final_bt_log_likelihood)}\n")


def _read_ratings(ratings_dir: Path):
    routes: dict[str, float] = {}
    with open(ratings_dir / "route_ratings.csv", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            routes[rec["route_id"]] = float(rec["rating"])
    climbers: dict[str, list[tuple[int, float]]] = {}
    with open(ratings_dir / "climber_ratings.csv", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            climbers.setdefault(rec["climber_id"], []).append(
                (int(rec["week"]), float(rec["rating"]))
            )
    packed = {
        cid: (
            np.array([w for w, _ in sorted(points)], dtype=np.int64),
            np.array([r for _, r in sorted(points)]),
        )
        for cid, points in climbers.items()
    }
    return routes, packed


def _write_report_files(report, r_squared: float, out_dir: Path) -> None:
    payload = report.as_dict()
    payload["ratings_grades_r_squared"] = r_squared
    with open(out_dir / "report.txt", "w", encoding="utf-8") as fh:
        for key, value in payload.items():
            fh.write(f"{key}={_fmt(value) if isinstance(value, float) else value}\n")
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_pr_curve(points, out_dir: Path) -> None:
    with open(out_dir / "pr_curve.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "classifier_point"])
        for pt in points:
            writer.writerow(
                [_fmt(pt.threshold), _fmt(pt.precision), _fmt(pt.recall),
                 "1" if pt.classifier_point else "0"]
            )


def _write_ratings_vs_grades(state: ModelState, out_dir: Path) -> None:
    with open(out_dir / "ratings_vs_grades.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grade", "prior_mean", "rating"])
        for route in state.routes:
            writer.writerow([route.grade, _fmt(route.prior_mean), _fmt(route.rating)])


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_preprocess(args: argparse.Namespace) -> int:
    mapping = load_tick_mapping(args.tick_mapping) if args.tick_mapping else None
    rows = parse_ascent_log(args.raw_csv)
    dataset = preprocess(rows, mapping)
    write_clean_dataset(dataset, args.out)
    kept = dataset.provenance["rows_kept"]
    read = dataset.provenance["rows_read"]
    print(f"kept {kept} of {read} ascent rows "
          f"({len(dataset.climbers)} climbers, {len(dataset.routes)} routes)")
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    dataset = read_clean_dataset(args.dataset_dir)
    hyper = _resolve_hyper(args)
    state, report = fit(dataset, hyper, args.max_iterations, threads=args.threads)
    if not report.converged:
        print(f"warning: not converged after {report.iterations} iterations", file=sys.stderr)
    _write_ratings(state, report, Path(args.out))
    print(f"fit finished: iterations={report.iterations} converged={report.converged} "
          f"log_likelihood={_fmt(report.final_bt_log_likelihood)}")
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    routes, climbers = _read_ratings(Path(args.ratings_dir))
    queries = []
    problems = []
    with open(args.query_csv, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = ("climber_id", "route_id", "week")
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in required):
            raise ParseError("query CSV must have columns climber_id,route_id,week")
        for rec in reader:
            if any(rec.get(c) is None for c in required):
                problems.append(f"line {reader.line_num}: too few fields")
                continue
            try:
                week = int(rec["week"].strip())
            except ValueError:
                problems.append(f"line {reader.line_num}: week must be an integer, "
                                f"got {rec['week']!r}")
                continue
            queries.append((rec["climber_id"], rec["route_id"], week))
    if problems:
        for problem in problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1

    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["climber_id", "route_id", "week", "probability", "fallback"])
        for climber_id, route_id, week in queries:
            fallback = []
            if climber_id in climbers:
                weeks, ratings = climbers[climber_id]
                climber_rating = rating_at_nearest_week(weeks, ratings, week)
            else:
                climber_rating = 0.0
                fallback.append("climber")
            if route_id in routes:
                route_rating = routes[route_id]
            else:
                route_rating = 0.0
                fallback.append("route")
            p = bt_probability(climber_rating, route_rating)
            writer.writerow(
                [climber_id, route_id, week, _fmt(p), "+".join(fallback) or "none"]
            )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    dataset = read_clean_dataset(args.dataset_dir)
    hyper = _resolve_hyper(args)
    state, fit_rep = fit(dataset, hyper, args.max_iterations, threads=args.threads)
    if not fit_rep.converged:
        print(f"warning: not converged after {fit_rep.iterations} iterations", file=sys.stderr)
    predictions = predict_probabilities(state, dataset.ascents)
    actuals = [a.outcome for a in dataset.ascents]
    report = compute_metrics(predictions, actuals)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    r_squared = linear_fit_r_squared(
        [r.grade for r in state.routes], [r.rating for r in state.routes]
    )
    _write_report_files(report, r_squared, out_dir)
    _write_pr_curve(precision_recall_curve(predictions, actuals), out_dir)
    _write_ratings_vs_grades(state, out_dir)
    print(f"accuracy={_fmt(report.accuracy)} log_loss={_fmt(report.log_loss)} "
          f"baseline_log_loss={_fmt(report.baseline_log_loss)}")
    return 0


def _cmd_crossval(args: argparse.Namespace) -> int:
    dataset = read_clean_dataset(args.dataset_dir)
    hyper = _resolve_hyper(args)
    plan = make_fold_plan(dataset, args.folds, args.repeats, args.seed)
    pooled_p, pooled_y = cross_validate_predictions(
        dataset, hyper, plan, max_iterations=args.max_iterations, threads=args.threads
    )
    report = compute_metrics(pooled_p, pooled_y)
    state, fit_rep = fit(dataset, hyper, args.max_iterations, threads=args.threads)
    if not fit_rep.converged:
        print(f"warning: full fit not converged after {fit_rep.iterations} iterations",
              file=sys.stderr)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    r_squared = linear_fit_r_squared(
        [r.grade for r in state.routes], [r.rating for r in state.routes]
    )
    _write_report_files(report, r_squared, out_dir)
    _write_pr_curve(precision_recall_curve(pooled_p, pooled_y), out_dir)
    _write_ratings_vs_grades(state, out_dir)
    print(f"held-out accuracy={_fmt(report.accuracy)} log_loss={_fmt(report.log_loss)} "
          f"baseline_accuracy={_fmt(report.baseline_accuracy)}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    hyper = _resolve_hyper(args)
    world = generate_world(
        n_climbers=args.climbers,
        n_routes=args.routes,
        n_periods=args.periods,
        grade_range=(args.grade_min, args.grade_max),
        hyper=hyper,
        seed=args.seed,
    )
    trials = simulate_trials(world, args.ascents_per_period, seed=args.seed + 1)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_raw_ascent_log(trials_to_raw_rows(world, trials), out_dir / "raw_ascents.csv")
    write_truth_csv(world, out_dir / "truth.csv")
    print(f"wrote {trials[0].shape[0]} raw ascents for {args.climbers} climbers "
          f"on {args.routes} routes")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cragrank",
                     description="Climber and route ratings from ascent logs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[], help="clean a raw ascent log",
                       description="Clean a raw ascent-log CSV into a dataset directory.")
    p.add_argument("raw_csv", help="raw ascent log (climber_id,route_id,tick_type,"
                                   "date,grade_label,grade_system)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--tick-mapping", help="custom tick_string,class mapping file")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("fit", help="fit ratings on a cleaned dataset")
    p.add_argument("dataset_dir", help="directory from `cragrank preprocess`")
    p.add_argument("--out", required=True, help="output directory for rating files")
    _add_fit_flags(p)
    _add_hyper_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="predict success probabilities")
    p.add_argument("ratings_dir", help="directory from `cragrank fit`")
    p.add_argument("query_csv", help="queries (climber_id,route_id,week)")
    p.add_argument("--out", required=True, help="output predictions CSV")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="fit and score on the same dataset")
    p.add_argument("dataset_dir")
    p.add_argument("--out", required=True, help="output directory for reports")
    _add_fit_flags(p)
    _add_hyper_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("crossval", help="repeated stratified k-fold evaluation")
    p.add_argument("dataset_dir")
    p.add_argument("--out", required=True, help="output directory for reports")
    p.add_argument("-k", "--folds", type=int, default=10, help="folds (default 10)")
    p.add_argument("--repeats", type=int, default=3, help="repeats (default 3)")
    p.add_argument("--seed", type=int, default=0, help="fold shuffling seed")
    _add_fit_flags(p)
    _add_hyper_flags(p)
    p.set_defaults(func=_cmd_crossval)

    p = sub.add_parser("synth", help="generate a synthetic ascent log")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--climbers", type=int, default=100)
    p.add_argument("--routes", type=int, default=200)
    p.add_argument("--periods", type=int, default=10)
    p.add_argument("--ascents-per-period", type=int, default=20,
                   help="ascents per climber per period (default 20)")
    p.add_argument("--grade-min", type=int, default=18)
    p.add_argument("--grade-max", type=int, default=28)
    p.add_argument("--seed", type=int, default=0,
                   help="world seed; the ascent draw uses seed+1")
    _add_hyper_flags(p)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmptyDatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for key, value in exc.provenance.items():
            print(f"  {key}={value}", file=sys.stderr)
        return 2
    except (ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
