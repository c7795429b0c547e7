"""Recalibration-frequency experiment on a drifting synthetic Heston market.

Calibrates BS and Heston under every recalibration interval and prints the
mean eta1, eta2, eta3 per (model, interval), then writes the usual report
files. Example:

    python3 scripts/frequency_sweep.py --days 250 --grid-size 1024 --out out/sweep
"""

import argparse
import os
import time

from modelrisk.calibration import CalibrationConfig
from modelrisk.cli_io.emit import emit_reports
from modelrisk.cli_io.market import filter_quotes
from modelrisk.cli_io.synthetic import frequency_sweep_spec, generate_synthetic
from modelrisk.risk_engine import EngineConfig, Frequency, frequency_profile, run_all, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=int, default=250)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--grid-size", type=int, default=1024)
    ap.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    ap.add_argument("--models", default="bs,heston")
    ap.add_argument("--out", default=None, help="directory for report files")
    args = ap.parse_args()

    spec = frequency_sweep_spec(args.days)
    slices = [filter_quotes(s) for s in generate_synthetic(spec, seed=args.seed).slices]
    cfg = EngineConfig(calibration=CalibrationConfig(grid_size=args.grid_size), workers=args.workers)
    freqs = [f.value for f in Frequency]

    t0 = time.perf_counter()
    res = run_all(slices, args.models.split(","), freqs, cfg)
    elapsed = time.perf_counter() - t0
    print(f"{len(slices)} slices, {len(res.reports)} reports, {len(res.gaps)} gaps, {elapsed / 60:.1f} min")

    for model, by_freq in frequency_profile(res.reports).items():
        print(f"\n{model:>8} {'eta1':>11} {'eta2':>11} {'eta3':>11}")
        for freq, (e1, e2, e3) in by_freq.items():
            print(f"{freq:>8} {e1:11.4e} {e2:11.4e} {e3:11.4e}")

    if args.out:
        table = summarize(res.reports) if res.reports else None
        emit_reports(res.reports, table, args.out, res.gaps, {"seed": args.seed, "days": args.days})
        print(f"\nreports written to {args.out}")


if __name__ == "__main__":
    main()
