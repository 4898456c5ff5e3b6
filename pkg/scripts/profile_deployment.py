#!/usr/bin/env python3
"""Measure deployment cost of the forecasters: training and inference
wall time, peak memory, and extrapolated monthly energy under a
retraining/inference cadence.

Trains an LSTM and a CNN on the seasonal fixture (or a supplied series
CSV), times one full training and single-window inference calls, then
scales both to a month assuming retraining every --retrain-days days and
one inference per --infer-period-s seconds for --k-aps APs at
--power-watts average draw. Also quantizes each model and reports the
int8 speedup. Writes deployment.csv in the output directory.

Typical run:
    python3 scripts/profile_deployment.py --out runs/deployment
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from apload.dataset_windows import WindowConfig, split_holdout, windows_for_aps
from apload.fixtures import seasonal_fixture
from apload.forecasters import HyperConfig, train_neural
from apload.load_derivation import read_series_csv
from apload.profiler import (
    CadenceConfig,
    ResourceProfile,
    build_deployment_row,
    measure,
    write_deployment_csv,
)
from apload.quantization import calibrate, quantize_model


def per_call(fn, reps: int, watts: float) -> ResourceProfile:
    fn()  # warm-up
    _, prof = measure(lambda: [fn() for _ in range(reps)], watts=watts,
                      label="inference")
    return ResourceProfile(prof.wall_time_s / reps, prof.peak_rss_bytes,
                           prof.est_energy_kwh / reps, "inference")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--series", help="series CSV (default: seasonal fixture)")
    ap.add_argument("--models", default="lstm,cnn")
    ap.add_argument("--granularity-s", type=int, default=120)
    ap.add_argument("--lookback-steps", type=int, default=30)
    ap.add_argument("--horizon-steps", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--retrain-days", type=float, default=14.0)
    ap.add_argument("--infer-period-s", type=float, default=120.0)
    ap.add_argument("--k-aps", type=int, default=4)
    ap.add_argument("--power-watts", type=float, default=65.0)
    ap.add_argument("--infer-reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    series = read_series_csv(args.series) if args.series else seasonal_fixture()
    wcfg = WindowConfig(lookback_steps=args.lookback_steps,
                        horizon_steps=args.horizon_steps)
    full = windows_for_aps(series, wcfg)
    train, val, test = split_holdout(full)
    cadence = CadenceConfig(retrain_period_days=args.retrain_days,
                            inference_period_s=args.infer_period_s,
                            k_eval_aps=args.k_aps,
                            avg_power_watts=args.power_watts)
    hyper = HyperConfig(max_epochs=args.epochs, lstm_hidden=args.hidden,
                        seed=args.seed)

    rows = []
    for kind in args.models.split(","):
        t0 = time.perf_counter()
        model, train_prof = measure(
            train_neural, kind, train, val, hyper,
            watts=args.power_watts, label="train",
        )
        window, ap_id = test.X[0], test.ap_ids[0]
        infer_prof = per_call(lambda: model.predict(window, ap_id),
                              args.infer_reps, args.power_watts)
        rows.append(build_deployment_row(kind, "float32", train_prof,
                                         infer_prof, cadence))

        calib = train.take(np.arange(min(256, len(train))))
        ranges = calibrate(model, calib.X, calib.ap_ids)
        qm = quantize_model(model, ranges)
        q_infer = per_call(lambda: qm.predict(window, ap_id),
                           args.infer_reps, args.power_watts)
        rows.append(build_deployment_row(kind, "int8", train_prof, q_infer,
                                         cadence))
        print(f"{kind}: trained in {train_prof.wall_time_s:.1f}s, "
              f"float {infer_prof.wall_time_s * 1e3:.3f} ms/call, "
              f"int8 {q_infer.wall_time_s * 1e3:.3f} ms/call "
              f"(x{infer_prof.wall_time_s / q_infer.wall_time_s:.2f}), "
              f"total {time.perf_counter() - t0:.1f}s")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "deployment.csv"
    write_deployment_csv(rows, path)
    for row in rows:
        print(f"{row.model:6s} {row.env:8s} train {row.train_kwh_month:.3e} "
              f"kWh/mo  infer {row.infer_kwh_month:.3e} kWh/mo")
    print(f"-> {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
