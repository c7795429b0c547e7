"""BS market whose volatility steps from 0.2 to 0.3: measured eta2 against the closed form."""

import argparse

from modelrisk.calibration import CalibrationConfig
from modelrisk.cli_io.market import filter_quotes
from modelrisk.cli_io.synthetic import SyntheticSpec, generate_synthetic
from modelrisk.models import bs_eta2_closed_form
from modelrisk.risk_engine import EngineConfig, Schedule, run_schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid-size", type=int, default=4096)
    ap.add_argument("--days", type=int, default=40)
    args = ap.parse_args()

    step = args.days // 2
    spec = SyntheticSpec(
        model="bs",
        start_params={"sigma": 0.2},
        end_params={"sigma": 0.3},
        step_day=step,
        n_days=args.days,
        expiry_offsets=(200, 400),
    )
    slices = [filter_quotes(s) for s in generate_synthetic(spec).slices]
    cfg = EngineConfig(calibration=CalibrationConfig(grid_size=args.grid_size))
    step_date = spec.trading_days()[step]

    print(f"{'expiry':>10} {'tau':>7} {'eta2':>12} {'closed form':>12} {'gap':>9}")
    for expiry in sorted({s.expiry for s in slices}):
        series = [s for s in slices if s.expiry == expiry]
        res = run_schedule(series, "bs", Schedule.every("1d", [s.date for s in series]), cfg)
        for r in res.reports:
            if r.date == step_date:
                exact = bs_eta2_closed_form(0.2, 0.3, r.tau)
                print(f"{expiry} {r.tau:7.4f} {r.eta2:12.6e} {exact:12.6e} {abs(r.eta2 - exact):9.2e}")


if __name__ == "__main__":
    main()
