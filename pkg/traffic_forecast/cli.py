"""Batch command-line front end: ingest, fit, forecast, sweep, simulate, recover."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import timezone, tzinfo
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from . import (
    config,
    estimation,
    evaluation,
    export,
    ingest,
    metrics,
    model_core,
    schema,
    simulate,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
DEFAULT_SWEEP = tuple(round(0.05 * j, 2) for j in range(1, 21))


class UsageError(Exception):
    """Bad flags or flag combinations."""


class ConfigError(Exception):
    """The ingest config file could not be read or failed validation."""


# (exception, kind, exit code); first match wins, so subclasses come first.
_ERRORS = (
    (UsageError, "usage", EXIT_USAGE),
    (model_core.DomainError, "domain", EXIT_USAGE),
    (evaluation.ProtocolError, "protocol", EXIT_USAGE),
    (ingest.SchemaError, "schema", EXIT_DATA),
    (estimation.EmptyDataError, "data", EXIT_DATA),
    (ConfigError, "config", EXIT_DATA),
    (OSError, "io", EXIT_DATA),
)


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _timezone(text: str) -> tzinfo:
    try:
        return schema.parse_timezone(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _grid_size(text: str) -> int:
    value = _positive_int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("grid size must be at least 2")
    return value


def _load_config(path: Optional[Path]) -> config.IngestConfig:
    try:
        return config.load_ingest_config(path)
    except OSError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _write(path: Path, payload: bytes, outputs: List[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    outputs.append(str(path))


def _emit(args: argparse.Namespace, document: Dict[str, Any], text: Sequence[str]) -> None:
    if args.json:
        sys.stdout.write(export.to_json(document).decode("utf-8"))
        return
    for line in text:
        print(line)


def _read_series(args: argparse.Namespace) -> Tuple[ingest.TrafficSeries, ingest.CountsMeta]:
    return ingest.load_counts(args.counts)


def _write_counts(
    path: Path, series: ingest.TrafficSeries, meta: ingest.CountsMeta, outputs: List[str]
) -> None:
    _write(path, export.series_to_csv(series), outputs)
    _write(ingest.meta_path(path), export.to_json(meta.to_dict()), outputs)


def _day_timezone(args: argparse.Namespace, meta: ingest.CountsMeta) -> tzinfo:
    if args.timezone is not None:
        return args.timezone
    settings = _load_config(args.config)
    return settings.timezone or meta.log_timezone or timezone.utc


def cmd_ingest(args: argparse.Namespace) -> int:
    settings = _load_config(args.config)
    timestamps, stats = ingest.parse_logs(args.logs, settings.status_filter, args.workers)
    series = ingest.bin_counts(
        timestamps,
        args.interval,
        maintenance=settings.maintenance,
        source=",".join(str(p) for p in args.logs),
    )
    outputs: List[str] = []
    meta = ingest.CountsMeta(series.interval_seconds, stats.first_offset)
    _write_counts(args.out or args.out_dir / "counts.csv", series, meta, outputs)

    if not series.counts:
        logger.warning(json.dumps({"event": "empty_input", "files": len(args.logs)}))
    summary: Dict[str, Any] = {
        "command": "ingest",
        "arrivals": series.total_arrivals,
        "intervals": len(series),
        "missing_intervals": series.missing,
        "excluded_arrivals": series.excluded,
        "interval_seconds": series.interval_seconds,
        "start": ingest.format_timestamp(series.start) if series.counts else None,
        "end": ingest.format_timestamp(series.end) if series.counts else None,
        "lines": stats.lines,
        "malformed": stats.malformed,
        "filtered": stats.filtered,
        "utc_offset": meta.to_dict()["utc_offset"],
        "outputs": outputs,
    }
    _emit(
        args,
        summary,
        [
            f"arrivals:  {summary['arrivals']}",
            f"start:     {summary['start'] or '-'}",
            f"end:       {summary['end'] or '-'}",
            f"intervals: {summary['intervals']} x {series.interval_seconds}s"
            f" ({series.missing} missing)",
            f"offset:    {summary['utc_offset'] or '-'}",
            f"lines:     {stats.lines} ({stats.malformed} malformed, {stats.filtered} filtered)",
            *(f"wrote {path}" for path in outputs),
        ],
    )
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    series, meta = _read_series(args)
    report = estimation.compare_models(
        series.counts,
        args.alpha1,
        args.beta1,
        args.grid,
        refine=args.refine,
        workers=args.workers,
    )
    outputs: List[str] = []
    _write(args.out_dir / "fit.json", export.fit_report_to_json(report), outputs)
    _write(args.out_dir / "curve.csv", export.curve_to_csv(report.curve), outputs)
    shape = estimation.curve_diagnostics(report.curve)

    summary: Dict[str, Any] = {
        "command": "fit",
        "k_hat": report.k_hat,
        "k_refined": report.k_refined,
        "aic_proposed": report.aic_proposed,
        "aic_stationary": report.aic_stationary,
        "selected": report.selected.value,
        "n_observations": report.n_observations,
        "unimodal": shape["unimodal"],
        "outputs": outputs,
    }
    lines = [
        f"k_hat:          {report.k_hat!r}",
        f"aic_proposed:   {report.aic_proposed:.3f}",
        f"aic_stationary: {report.aic_stationary:.3f}",
        f"selected:       {report.selected.value}",
    ]
    if report.k_refined is not None:
        lines.insert(1, f"k_refined:      {report.k_refined!r}")
    if args.per_day:
        days = ingest.split_days(series, _day_timezone(args, meta))
        table = evaluation.daily_aic(days, args.alpha1, args.beta1, args.grid, workers=args.workers)
        _write(args.out_dir / "aic-days.csv", export.daily_aic_to_csv(table), outputs)
        summary["days"] = [
            {
                "label": label,
                "k_hat": fit.k_hat,
                "aic_proposed": fit.aic_proposed,
                "aic_stationary": fit.aic_stationary,
                "selected": fit.selected.value,
            }
            for label, fit in table
        ]
        lines.extend(
            f"{label}  k_hat={fit.k_hat!r}  aic_proposed={fit.aic_proposed:.3f}"
            f"  aic_stationary={fit.aic_stationary:.3f}  selected={fit.selected.value}"
            for label, fit in table
        )
    _emit(args, summary, [*lines, *(f"wrote {path}" for path in outputs)])
    return EXIT_OK


def _peak_row(report: evaluation.EvaluationReport, t_star: Optional[int]) -> Dict[str, Any]:
    try:
        return evaluation.interval_report(report, t_star).to_dict()
    except IndexError as exc:
        raise UsageError(f"--t-star: {exc}") from None


def _report_document(report: evaluation.EvaluationReport, t_star: Optional[int]) -> Dict[str, Any]:
    document = report.to_dict()
    document["interval"] = _peak_row(report, t_star)
    return document


def cmd_forecast(args: argparse.Namespace) -> int:
    series, meta = _read_series(args)
    outputs: List[str] = []
    if args.k is not None:
        reports = [
            evaluation.evaluate(
                series.counts,
                args.k,
                args.alpha1,
                args.beta1,
                args.levels,
                label=series.start.date().isoformat(),
            )
        ]
        names = ["records.csv"]
    else:
        days = ingest.split_days(series, _day_timezone(args, meta))
        reports = evaluation.daily_protocol(
            days,
            args.alpha1,
            args.beta1,
            args.grid,
            levels=args.levels,
            carry_over=args.carry_over,
            workers=args.workers,
        )
        names = [f"records-{report.label}.csv" for report in reports]

    for name, report in zip(names, reports):
        _write(
            args.out_dir / name,
            export.records_to_csv(report.records, report.stationary_records),
            outputs,
        )
    documents = [_report_document(report, args.t_star) for report in reports]
    _write(args.out_dir / "report.json", export.evaluation_reports_to_json(documents), outputs)

    lines = []
    for report in reports:
        verdict = "proposed" if report.mse_proposed < report.mse_stationary else "stationary"
        lines.append(
            f"{report.label or '-'}  k={report.k_used!r}"
            f"  mse_proposed={report.mse_proposed:.3f}"
            f"  mse_stationary={report.mse_stationary:.3f}"
            f"  coverage95={report.coverage95:.3f}  better={verdict}"
        )
    _emit(
        args,
        {"command": "forecast", "reports": documents, "outputs": outputs},
        [*lines, *(f"wrote {path}" for path in outputs)],
    )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    series, _ = _read_series(args)
    pairs = evaluation.k_sweep(series.counts, args.ks, args.alpha1, args.beta1)
    outputs: List[str] = []
    _write(args.out_dir / "sweep.csv", export.sweep_to_csv(pairs), outputs)
    best_k, best_mse = min(pairs, key=lambda pair: pair[1])
    _emit(
        args,
        {
            "command": "sweep",
            "k": [k for k, _ in pairs],
            "mse": [value for _, value in pairs],
            "best_k": best_k,
            "outputs": outputs,
        },
        [
            *(f"{k!r}\t{value:.6f}" for k, value in pairs),
            f"best k: {best_k!r} (mse {best_mse:.6f})",
            *(f"wrote {path}" for path in outputs),
        ],
    )
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    sim = simulate.simulate_traffic(
        simulate.SimConfig(
            k_true=args.k,
            alpha1=args.alpha1,
            beta1=args.beta1,
            T=args.ticks,
            seed=args.seed,
            interval_seconds=args.interval,
        )
    )
    outputs: List[str] = []
    _write_counts(
        args.out or args.out_dir / "counts.csv",
        sim.series,
        ingest.CountsMeta(sim.series.interval_seconds),
        outputs,
    )
    if args.theta_out is not None:
        _write(args.theta_out, export.theta_to_csv(sim.series, sim.theta), outputs)
    _emit(
        args,
        {
            "command": "simulate",
            "k_true": args.k,
            "ticks": args.ticks,
            "seed": args.seed,
            "arrivals": sim.series.total_arrivals,
            "outputs": outputs,
        },
        [
            f"simulated {args.ticks} ticks at k={args.k!r} (seed {args.seed}):"
            f" {sim.series.total_arrivals} arrivals",
            *(f"wrote {path}" for path in outputs),
        ],
    )
    return EXIT_OK


def cmd_recover(args: argparse.Namespace) -> int:
    summary = simulate.recovery_experiment(
        args.k,
        args.ticks,
        args.seeds,
        args.alpha1,
        args.beta1,
        grid_size=args.grid,
        base_seed=args.base_seed,
        workers=args.workers,
    )
    document = summary.to_dict()
    outputs: List[str] = []
    _write(args.out_dir / "recovery.json", export.to_json(document), outputs)
    _emit(
        args,
        {"command": "recover", **document, "outputs": outputs},
        [
            f"k_true={summary.k_true!r}  T={summary.T}  seeds={len(summary.seeds)}",
            f"median k_hat={summary.median:.4f}  iqr={summary.iqr:.4f}",
            f"aic correct={summary.aic_correct_fraction:.2f}"
            f"  mse wins={summary.mse_win_fraction:.2f}",
            *(f"wrote {path}" for path in outputs),
        ],
    )
    return EXIT_OK


def _common_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--alpha1", type=float, default=config.get_alpha1(),
                        help="prior shape (default: %(default)s)")
    common.add_argument("--beta1", type=float, default=config.get_beta1(),
                        help="prior rate (default: %(default)s)")
    common.add_argument("--out-dir", type=Path, default=Path("."),
                        help="directory for output files (default: current directory)")
    common.add_argument("--json", action="store_true",
                        help="print one JSON document on stdout instead of text")
    common.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    common.add_argument("--metrics-out", type=Path, default=None,
                        help="write Prometheus text metrics to this file")
    common.add_argument("--workers", type=_positive_int, default=config.get_workers(),
                        help="thread pool width (default: %(default)s)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = _ArgumentParser(
        prog="traffic-forecast",
        description="Time-varying Poisson forecasting of web-server traffic",
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_ArgumentParser)
    commands.required = True

    p = commands.add_parser("ingest", parents=[common], help="bin access logs into counts")
    p.add_argument("logs", type=Path, nargs="+", help="access logs (.gz accepted)")
    p.add_argument("--interval", type=_positive_int, default=config.get_interval_s(),
                   help="bin width in seconds (default: %(default)s)")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON file with maintenance windows, timezone and status filter")
    p.add_argument("--out", type=Path, default=None, help="counts CSV (default: OUT_DIR/counts.csv)")
    p.set_defaults(handler=cmd_ingest)

    p = commands.add_parser("fit", parents=[common], help="estimate k by grid likelihood")
    p.add_argument("counts", type=Path)
    p.add_argument("--grid", type=_grid_size, default=config.get_grid_size(),
                   help="number of k grid points (default: %(default)s)")
    p.add_argument("--refine", action="store_true", help="refine k-hat between grid points")
    p.add_argument("--per-day", action="store_true",
                   help="also fit each calendar day and write aic-days.csv")
    p.add_argument("--timezone", type=_timezone, default=None,
                   help="day boundary timezone (default: config file, then the log's offset, then UTC)")
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(handler=cmd_fit)

    p = commands.add_parser("forecast", parents=[common], help="rolling one-step forecasts")
    p.add_argument("counts", type=Path)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--k", type=float, help="forecast the whole series with this k")
    which.add_argument("--fit-previous-day", action="store_true",
                       help="fit k on each day and forecast the next day with it")
    p.add_argument("--levels", type=_float_list, default=list(config.get_levels()),
                   help="upper-limit levels, comma separated (default: 0.95,0.99)")
    p.add_argument("--grid", type=_grid_size, default=config.get_grid_size())
    p.add_argument("--timezone", type=_timezone, default=None,
                   help="day boundary timezone (default: config file, then the log's offset, then UTC)")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--carry-over", action="store_true",
                   help="start each day from the previous day's filter state")
    p.add_argument("--t-star", type=int, default=None,
                   help="interval reported in detail (default: the peak)")
    p.set_defaults(handler=cmd_forecast)

    p = commands.add_parser("sweep", parents=[common], help="rolling MSE as a function of k")
    p.add_argument("counts", type=Path)
    p.add_argument("--ks", type=_float_list, default=list(DEFAULT_SWEEP),
                   help="k values, comma separated (default: 0.05..1.0 step 0.05)")
    p.set_defaults(handler=cmd_sweep)

    p = commands.add_parser("simulate", parents=[common], help="draw synthetic traffic")
    p.add_argument("--k", type=float, required=True, help="true discount constant")
    p.add_argument("--ticks", type=int, default=288)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--interval", type=_positive_int, default=config.get_interval_s())
    p.add_argument("--out", type=Path, default=None, help="counts CSV (default: OUT_DIR/counts.csv)")
    p.add_argument("--theta-out", type=Path, default=None, help="also write the latent rate path")
    p.set_defaults(handler=cmd_simulate)

    p = commands.add_parser("recover", parents=[common], help="parameter recovery on simulations")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--ticks", type=int, default=288)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--grid", type=_grid_size, default=config.get_grid_size())
    p.set_defaults(handler=cmd_recover)
    return parser


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
    )
    logging.getLogger().setLevel(logging.DEBUG if verbose else logging.INFO)


def _validate(args: argparse.Namespace) -> None:
    model_core.initial_state(args.alpha1, args.beta1)
    k = getattr(args, "k", None)
    if k is not None:
        model_core.check_k(k)
    for level in getattr(args, "levels", None) or ():
        model_core.check_level(level)
    for value in getattr(args, "ks", None) or ():
        model_core.check_k(value)
    if getattr(args, "ks", None) == []:
        raise UsageError("--ks needs at least one value")
    if getattr(args, "levels", None) == []:
        raise UsageError("--levels needs at least one value")


def _fail(exc: BaseException) -> int:
    for kind_type, kind, code in _ERRORS:
        if isinstance(exc, kind_type):
            message = " ".join(str(exc).split()) or kind_type.__name__
            print(f"error: {kind}: {message}", file=sys.stderr)
            return code
    raise exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args: Optional[argparse.Namespace] = None
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.verbose)
        metrics.inc("commands_total", {"command": args.command})
        _validate(args)
        handler: Callable[[argparse.Namespace], int] = args.handler
        return handler(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes, re-raised otherwise
        return _fail(exc)
    finally:
        if args is not None and args.metrics_out is not None:
            args.metrics_out.parent.mkdir(parents=True, exist_ok=True)
            args.metrics_out.write_text(metrics.to_prometheus(), encoding="utf-8")
