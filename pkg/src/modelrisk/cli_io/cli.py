"""Command-line interface: ``calibrate``, ``run``, ``synth`` and ``report``.

Settings resolve as defaults, then the ``--config`` JSON file, then flags.
Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure on every slice.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import sys
from pathlib import Path

from .. import __version__
from ..calibration import ModelKind, alternating_calibrate
from ..errors import EmptyDataset, ModelRiskError, ParseError
from ..risk_engine import run_all, summarize
from .config import ALL_FREQUENCIES, ALL_MODELS, ConfigError, RunConfig
from .emit import SUMMARY_CSV, SUMMARY_JSON, emit_reports, read_reports_csv, write_summary_csv, write_summary_json
from .market import filter_quotes, ingest, write_market_csv
from .synthetic import SyntheticSpec, generate_synthetic, write_truth_csv

log = logging.getLogger("modelrisk")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, freq=True):
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--model", choices=["bs", "heston", "both"])
    if freq:
        p.add_argument("--freq", choices=[*ALL_FREQUENCIES, "all"])
    p.add_argument("--grid-size", type=int, dest="grid_size")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="modelrisk", description="Option-pricing model risk by relative entropy.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="calibrate one slice and print the parameters and eta1")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--date", type=dt.date.fromisoformat, help="slice date (default: first)")
    p.add_argument("--expiry", type=dt.date.fromisoformat, help="slice expiry (default: first)")
    _common(p, freq=False)

    p = sub.add_parser("run", help="full recalibration-schedule sweep")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int)
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic quote file and its parameter path")
    p.add_argument("--config", type=Path, help="JSON file whose 'scenario' object defines the market")
    p.add_argument("--model", choices=["bs", "heston"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("report", help="summarize stored report files")
    p.add_argument("--input", type=Path, required=True, nargs="+", help="reports.csv files")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args):
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    over = {}
    model = getattr(args, "model", None)
    if model:
        over["models"] = ALL_MODELS if model == "both" else (model,)
    freq = getattr(args, "freq", None)
    if freq:
        over["frequencies"] = ALL_FREQUENCIES if freq == "all" else (freq,)
    if getattr(args, "grid_size", None) is not None:
        over["grid_size"] = args.grid_size
    if getattr(args, "out", None) is not None:
        over["out_dir"] = str(args.out)
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    return dataclasses.replace(cfg, **over) if over else cfg


def _load_slices(path, cfg):
    return [filter_quotes(s, cfg.filter) for s in ingest(path)]


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_calibrate(args):
    cfg = resolve_config(args)
    slices = _load_slices(args.input, cfg)
    chosen = [
        s for s in slices
        if (args.date is None or s.date == args.date) and (args.expiry is None or s.expiry == args.expiry)
    ]
    if not chosen:
        raise EmptyDataset("no slice matches the requested date and expiry")
    s = chosen[0]
    cal_cfg = cfg.engine_config().calibration
    failures = 0
    for kind in cfg.models:
        try:
            if s.is_empty:
                raise EmptyDataset("slice has no quotes left after filtering")
            res = alternating_calibrate(s, kind, cal_cfg, grid=s.grid(cfg.grid_size))
        except ModelRiskError as exc:
            failures += 1
            print(json.dumps({"model": kind, "date": s.date.isoformat(), "expiry": s.expiry.isoformat(),
                              "error": exc.code, "message": str(exc)}))
            continue
        print(json.dumps({
            "model": kind,
            "date": s.date.isoformat(),
            "expiry": s.expiry.isoformat(),
            "theta": res.theta_star.values(),
            "eta1": res.eta1,
            "iterations": res.iterations,
            "converged": res.converged,
        }))
    return EXIT_SOLVER if failures == len(cfg.models) else EXIT_OK


def cmd_run(args):
    cfg = resolve_config(args)
    slices = _load_slices(args.input, cfg)
    result = run_all(slices, cfg.models, cfg.frequencies, cfg.engine_config())
    table = summarize(result.reports, cfg.bucket_edges) if result.reports else None
    meta = {
        "version": __version__,
        "config_sha256": cfg.digest(),
        "input_sha256": _file_digest(args.input),
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("out_dir", "workers")},
    }
    paths = emit_reports(result.reports, table, cfg.out_dir, result.gaps, meta)
    for g in result.gaps:
        log.warning("gap %s %s %s %s: %s", g.model, g.frequency, g.date, g.expiry, g.code)
    print(f"{len(result.reports)} reports, {len(result.gaps)} gaps -> {paths['reports'].parent}")
    if not result.reports:
        return EXIT_SOLVER
    return EXIT_OK


def cmd_synth(args):
    scenario = {}
    if args.config:
        try:
            scenario = json.loads(args.config.read_text()).get("scenario", {})
        except (OSError, json.JSONDecodeError, AttributeError) as exc:
            raise ConfigError(f"cannot read scenario from {args.config}: {exc}") from None
    if args.model and "model" not in scenario:
        scenario["model"] = args.model
        if args.model == ModelKind.BS.value:
            scenario.setdefault("start_params", {"sigma": 0.25})
    try:
        spec = SyntheticSpec.from_dict(scenario)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None
    market = generate_synthetic(spec, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_market_csv(market.slices, args.out / "market.csv")
    write_truth_csv(market, args.out / "truth.csv")
    print(f"{len(market.slices)} slices -> {args.out}")
    return EXIT_OK


def cmd_report(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    reports = []
    for path in args.input:
        try:
            reports.extend(read_reports_csv(path))
        except OSError as exc:
            raise ParseError(f"cannot read {path}: {exc}") from exc
    table = summarize(reports, cfg.bucket_edges) if reports else None
    args.out.mkdir(parents=True, exist_ok=True)
    meta = {"version": __version__, "sources": [_file_digest(p) for p in args.input], "n_reports": len(reports)}
    write_summary_csv(table, args.out / SUMMARY_CSV)
    write_summary_json(table, args.out / SUMMARY_JSON, meta)
    print(f"summarized {len(reports)} reports -> {args.out}")
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "run": cmd_run, "synth": cmd_synth, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"modelrisk: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, EmptyDataset) as exc:
        print(f"modelrisk: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
