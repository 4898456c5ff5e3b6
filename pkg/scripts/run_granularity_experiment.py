#!/usr/bin/env python3
"""Sweep forecast error across time-step granularity and horizon.

Trains ARIMA, LSTM, and CNN forecasters on the committed seasonal
synthetic fixture (or a series CSV you supply) for every combination of
granularity and horizon, and writes reports.csv, per-cell CDF files,
reports.jsonl, and SVG charts into the output directory.

Typical run:
    python3 scripts/run_granularity_experiment.py --out runs/granularity
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from apload.evaluation import (
    GranularityExperimentConfig,
    emit_report,
    run_granularity_experiment,
)
from apload.fixtures import seasonal_fixture
from apload.forecasters import HyperConfig
from apload.load_derivation import read_series_csv


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--series", help="series CSV (default: seasonal fixture)")
    ap.add_argument("--granularities", default="600,120,60",
                    help="comma list of step sizes in seconds")
    ap.add_argument("--horizons-min", default="10,30,60",
                    help="comma list of forecast horizons in minutes")
    ap.add_argument("--models", default="arima,lstm,cnn")
    ap.add_argument("--k-aps", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--patience", type=int, default=10)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--train-stride", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    if args.series:
        series = read_series_csv(args.series)
    else:
        series = seasonal_fixture()

    cfg = GranularityExperimentConfig(
        granularities_s=tuple(int(g) for g in args.granularities.split(",")),
        horizons_min=tuple(int(h) for h in args.horizons_min.split(",")),
        models=tuple(args.models.split(",")),
        k_aps=args.k_aps,
        seed=args.seed,
        train_stride=args.train_stride,
        jobs=args.jobs,
        hyper=HyperConfig(max_epochs=args.epochs, patience=args.patience,
                          lstm_hidden=args.hidden, seed=args.seed),
    )
    t0 = time.perf_counter()
    reports = run_granularity_experiment(series, cfg)
    written = emit_report(reports, args.out, fmt="plotdata-svg")
    dt = time.perf_counter() - t0
    for r in sorted(reports,
                    key=lambda r: (r.model_kind, r.granularity_s, r.horizon_steps)):
        s = r.summary()
        print(f"{r.model_kind:12s} G={r.granularity_s:4d}s S={r.horizon_steps:3d} "
              f"MAPE mean {s['mean']:7.2f}%  median {s['median']:7.2f}%  "
              f"n={s['count']}")
    print(f"{len(reports)} cells in {dt:.1f}s -> {written[0]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
