#!/usr/bin/env python3
"""Compare on-prem and off-prem training across repeated AP draws.

On-prem models train on the very APs they are scored on; off-prem models
train on a disjoint AP population. Each (model, k_test, horizon, mode)
cell is repeated over fresh AP draws and the per-repetition reports are
pooled. Uses the committed heterogeneous fixture unless --series points
at a derived load CSV.

Typical run:
    python3 scripts/run_generalization_experiment.py --out runs/generalization
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from apload.evaluation import (
    GeneralizationExperimentConfig,
    emit_report,
    run_generalization_experiment,
)
from apload.fixtures import heterogeneous_fixture
from apload.forecasters import HyperConfig
from apload.load_derivation import read_series_csv


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--series", help="series CSV (default: heterogeneous fixture)")
    ap.add_argument("--k-test", default="4,16,32",
                    help="comma list of evaluation population sizes")
    ap.add_argument("--horizons-min", default="10,60")
    ap.add_argument("--models", default="lstm")
    ap.add_argument("--repetitions", type=int, default=10)
    ap.add_argument("--k-train-offprem", type=int, default=64)
    ap.add_argument("--granularity-s", type=int, default=120)
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
        series = heterogeneous_fixture()

    cfg = GeneralizationExperimentConfig(
        k_test_values=tuple(int(k) for k in args.k_test.split(",")),
        horizons_min=tuple(int(h) for h in args.horizons_min.split(",")),
        granularity_s=args.granularity_s,
        repetitions=args.repetitions,
        models=tuple(args.models.split(",")),
        k_train_offprem=args.k_train_offprem,
        seed=args.seed,
        train_stride=args.train_stride,
        jobs=args.jobs,
        hyper=HyperConfig(max_epochs=args.epochs, patience=args.patience,
                          lstm_hidden=args.hidden, seed=args.seed),
    )
    t0 = time.perf_counter()
    reports = run_generalization_experiment(series, cfg)
    written = emit_report(reports, args.out, fmt="plotdata-svg")
    dt = time.perf_counter() - t0
    pooled = [r for r in reports if r.repetition is None]
    for r in sorted(pooled,
                    key=lambda r: (r.model_kind, r.k_test, r.horizon_steps, r.mode)):
        s = r.summary()
        print(f"{r.model_kind:6s} k={r.k_test:3d} S={r.horizon_steps:3d} "
              f"{r.mode:9s} MAPE median {s['median']:7.2f}%  "
              f"IQR [{s['q1']:.2f}, {s['q3']:.2f}]  n={s['count']}")
    print(f"{len(reports)} reports ({len(pooled)} pooled) in {dt:.1f}s "
          f"-> {written[0]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
