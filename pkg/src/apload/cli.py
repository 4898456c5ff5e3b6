"""apload command line: synth/ingest -> derive -> train -> eval -> quantize
-> profile -> report, plus a selftest.

Every state-producing command writes a manifest.json into its output
directory recording the resolved configuration, seed, input/output paths
with SHA-256 checksums, and timestamps. Reruns with identical inputs and
seeds reproduce identical numeric outputs (timestamps aside).

Configuration precedence: explicit flag > --config file entry > built-in
default. Config files are flat `key = value` lines keyed by the flag's
dest name (dashes and underscores interchangeable, '#' comments).

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from . import __version__, evaluation, nn_core
from .dataset_windows import WindowConfig, fit_normalizer, split_holdout, windows_for_aps
from .evaluation import (
    EPSILON_MB,
    EvalReport,
    emit_report,
    evaluate_predictions,
    report_from_json,
)
from .forecasters import (
    ArimaForecaster,
    HyperConfig,
    NeuralForecaster,
    load_model,
    save_model,
)
from .load_derivation import derive_load_series, read_series_csv, write_series_csv
from .profiler import (
    CadenceConfig,
    ResourceProfile,
    build_deployment_row,
    measure,
    monthly_multipliers,
    write_deployment_csv,
)
from .quantization import (
    calibrate,
    load_quantized,
    quantize_model,
    save_quantized,
)
from .trace_ingest import (
    ParseError,
    SynthConfig,
    generate_synthetic,
    parse_records_file,
    serialize_records,
    validate_records,
)

VALIDATION_ERRORS = (ValueError, KeyError, FileNotFoundError, IsADirectoryError,
                     NotADirectoryError, PermissionError)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def load_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {line_no}: expected key = value")
            key, val = line.split("=", 1)
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _scan_config_path(argv) -> str | None:
    it = iter(range(len(argv)))
    for i in it:
        tok = argv[i]
        if tok == "--config":
            return argv[i + 1] if i + 1 < len(argv) else None
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


class _ArgHelper:
    """add_argument wrapper that lets a config file override defaults."""

    def __init__(self, parser, config: dict[str, str]):
        self.parser = parser
        self.config = config

    def add(self, *names, **kw):
        dest = kw.get("dest") or names[-1].lstrip("-").replace("-", "_")
        if dest in self.config:
            raw = self.config[dest]
            if kw.get("action") == "store_true":
                kw["default"] = raw.lower() in ("1", "true", "yes", "on")
            else:
                ty = kw.get("type", str)
                kw["default"] = ty(raw)
            kw["required"] = False
        self.parser.add_argument(*names, **kw)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: list[dict]
    outputs: list[dict]
    started_utc: str
    finished_utc: str
    versions: dict

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=2)


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_manifest(out_dir, command, args, inputs, outputs, started_utc) -> str:
    config = {
        k: v for k, v in sorted(vars(args).items())
        if k != "func" and not callable(v)
    }
    manifest = RunManifest(
        command=command,
        config=config,
        seed=getattr(args, "seed", 0),
        inputs=[{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        outputs=[{"path": str(p), "sha256": _sha256(p)} for p in outputs],
        started_utc=started_utc,
        finished_utc=_utcnow(),
        versions={
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "apload": __version__,
        },
    )
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json() + "\n")
    return path


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _split_csv(text: str | None) -> list[str] | None:
    if not text:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


# --- commands ----------------------------------------------------------------

def cmd_synth(args):
    out = _ensure_out(args)
    cfg = SynthConfig(
        num_aps=args.num_aps,
        days=args.days,
        seed=args.seed,
        sessions_per_ap_hour=args.sessions_per_ap_hour,
        diurnal_amplitude=args.diurnal_amplitude,
    )
    rs = generate_synthetic(cfg)
    path = os.path.join(out, "records.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_records(rs))
    print(f"synth: {len(rs.records)} sessions across {len(rs.ap_ids())} APs -> {path}")
    return [], [path]


def cmd_ingest(args):
    out = _ensure_out(args)
    parsed = parse_records_file(args.records, strict=args.strict)
    report = validate_records(parsed)
    clean_path = os.path.join(out, "records.csv")
    with open(clean_path, "w", encoding="utf-8") as fh:
        fh.write(serialize_records(parsed.record_set))
    report_path = os.path.join(out, "validation.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.summary() + "\n")
        for line_no, reason in parsed.rejects:
            fh.write(f"line {line_no}: {reason}\n")
    print(report.summary())
    return [args.records], [clean_path, report_path]


def cmd_derive(args):
    out = _ensure_out(args)
    parsed = parse_records_file(args.records)
    ap_filter = _split_csv(args.aps)
    series = derive_load_series(
        parsed.record_set, args.granularity_s,
        ap_filter=set(ap_filter) if ap_filter else None,
    )
    path = os.path.join(out, "series.csv")
    write_series_csv(series, path)
    steps = sum(len(s) for s in series.values())
    print(f"derive: {len(series)} APs, {steps} steps at {args.granularity_s}s -> {path}")
    return [args.records], [path]


def _load_resampled(series_path, granularity_s: int | None):
    series = read_series_csv(series_path)
    if granularity_s:
        series = {
            ap: evaluation._resample(s, granularity_s) for ap, s in series.items()
        }
    return series


def _hyper_from_args(args) -> HyperConfig:
    return HyperConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
        lstm_hidden=args.hidden,
    )


def cmd_train(args):
    out = _ensure_out(args)
    series = _load_resampled(args.series, args.granularity_s)
    g = next(iter(series.values())).granularity_s
    aps = _split_csv(args.aps) or sorted(series)
    feats = tuple(_split_csv(args.features) or ("up", "down"))
    targets = tuple(_split_csv(args.target_features) or feats)
    wcfg = WindowConfig(
        args.lookback_steps, args.horizon_steps, stride=args.stride,
        input_features=feats, target_features=targets,
    )
    ds = windows_for_aps(series, wcfg, aps)
    tr, va, _ = split_holdout(ds)
    kind = args.model
    if kind in ("lstm", "cnn"):
        model = evaluation._build_and_train(
            kind, series, tr, va, wcfg, g, _hyper_from_args(args), args.seed
        )
        result = model.train_result
        log_path = os.path.join(out, "train_log.json")
        with open(log_path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "history": result.history,
                    "best_epoch": result.best_epoch,
                    "best_val_loss": result.best_val_loss,
                    "epochs_run": result.epochs_run,
                },
                fh, sort_keys=True, indent=2,
            )
        extra = [log_path]
        print(
            f"train[{kind}]: {len(tr)} train / {len(va)} val windows, "
            f"best epoch {result.best_epoch} val_loss {result.best_val_loss:.6g}"
        )
    elif kind in ("arima", "persistence"):
        model = evaluation._build_and_train(
            kind, series, tr, va, wcfg, g, HyperConfig(seed=args.seed), args.seed
        )
        extra = []
        if kind == "arima":
            print(f"train[arima]: orders {model.orders} over {len(aps)} APs")
        else:
            print("train[persistence]: no parameters")
    else:
        raise ValueError(f"unknown model kind: {kind}")
    ckpt = os.path.join(out, "model.ckpt")
    save_model(model, ckpt)
    return [args.series], [ckpt] + extra


def _eval_windows(model, series, aps, stride):
    meta = model.meta
    wcfg = WindowConfig(
        meta.lookback_steps, meta.horizon_steps, stride=stride,
        input_features=meta.input_features, target_features=meta.target_features,
    )
    return windows_for_aps(series, wcfg, aps), wcfg


def cmd_eval(args):
    out = _ensure_out(args)
    model = load_model(args.ckpt)
    meta = model.meta
    series = _load_resampled(args.series, meta.granularity_s)
    aps = _split_csv(args.aps) or list(meta.train_aps) or sorted(series)
    missing = [a for a in aps if a not in series]
    if missing:
        raise ValueError(f"APs not in series file: {missing}")
    ds, _ = _eval_windows(model, series, aps, args.stride)
    tr, va, te = split_holdout(ds)
    part = {"test": te, "val": va, "train": tr}[args.split]
    part = evaluation._subsample(part, args.eval_stride)
    if isinstance(model, NeuralForecaster) and any(
        str(a) not in model.normalizer.stats for a in aps
    ):
        # unseen APs: scale them by their own training-period ranges
        model = model.with_normalizer(fit_normalizer(tr))
    history = (
        evaluation._history_provider(series, meta.target_columns)
        if isinstance(model, ArimaForecaster)
        else None
    )
    mapes, excl = evaluate_predictions(model, part, args.epsilon_mb, history)
    on_prem = bool(meta.train_aps) and set(aps) <= set(meta.train_aps)
    report = EvalReport(
        model_kind=meta.kind,
        granularity_s=meta.granularity_s,
        horizon_steps=meta.horizon_steps,
        k_test=len(aps),
        mode="on_prem" if on_prem or not meta.train_aps else "off_prem",
        seed=args.seed,
        split=args.split,
        per_prediction_mape=tuple(mapes),
        excluded_zero_fraction=excl,
    )
    written = emit_report([report], out, fmt=args.fmt)
    s = report.summary()
    print(
        f"eval[{meta.kind}] {args.split}: {s['count']} predictions, "
        f"mean MAPE {s['mean']:.2f}% median {s['median']:.2f}% "
        f"(excluded zero fraction {excl:.3f})"
    )
    return [args.ckpt, args.series], written


def cmd_quantize(args):
    out = _ensure_out(args)
    model = load_model(args.ckpt)
    if not isinstance(model, NeuralForecaster):
        raise ValueError("quantization applies to neural checkpoints only")
    meta = model.meta
    series = _load_resampled(args.series, meta.granularity_s)
    aps = _split_csv(args.aps) or list(meta.train_aps) or sorted(series)
    ds, _ = _eval_windows(model, series, aps, args.stride)
    tr, _, _ = split_holdout(ds)
    n = min(args.calib_windows, len(tr))
    if n < 32:
        raise ValueError(f"need at least 32 calibration windows, have {len(tr)}")
    calib = tr.take(np.arange(n))
    ranges = calibrate(model, calib.X, calib.ap_ids)
    qm = quantize_model(model, ranges, backend=args.backend)
    qpath = os.path.join(out, "model_int8.ckpt")
    save_quantized(qm, qpath)

    float_pred = model.predict_batch(calib.X, calib.ap_ids)
    quant_pred = qm.predict_batch(calib.X, calib.ap_ids)
    float_mape = evaluation.mape(calib.Y, float_pred, args.epsilon_mb)
    quant_mape = evaluation.mape(calib.Y, quant_pred, args.epsilon_mb)
    corr = float(np.corrcoef(float_pred.ravel(), quant_pred.ravel())[0, 1])
    stats = {
        "calibration_windows": int(n),
        "int8_payload_bytes": qm.int8_payload_bytes(),
        "float32_payload_bytes": qm.float32_payload_bytes(),
        "payload_ratio": qm.int8_payload_bytes() / qm.float32_payload_bytes(),
        "float_mape": float_mape,
        "quant_mape": quant_mape,
        "mape_gap_pp": quant_mape - float_mape,
        "prediction_correlation": corr,
    }
    spath = os.path.join(out, "quant_report.json")
    with open(spath, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)
    print(
        f"quantize: payload {stats['int8_payload_bytes']} B "
        f"({100 * stats['payload_ratio']:.0f}% of float32), "
        f"MAPE gap {stats['mape_gap_pp']:+.2f} pp, corr {corr:.4f}"
    )
    return [args.ckpt, args.series], [qpath, spath]


def _per_call_profile(fn, reps: int, watts: float) -> ResourceProfile:
    fn()  # warm-up: JIT compilation and allocator effects stay out of the timing

    def loop():
        for _ in range(reps):
            fn()

    _, prof = measure(loop, watts=watts, label="inference")
    return ResourceProfile(
        prof.wall_time_s / reps, prof.peak_rss_bytes,
        prof.est_energy_kwh / reps, "inference",
    )


def cmd_profile(args):
    out = _ensure_out(args)
    model = load_model(args.ckpt)
    meta = model.meta
    series = _load_resampled(args.series, meta.granularity_s)
    aps = _split_csv(args.aps) or list(meta.train_aps) or sorted(series)
    ds, wcfg = _eval_windows(model, series, aps, args.stride)
    tr, va, te = split_holdout(ds)
    cadence = CadenceConfig(
        retrain_period_days=args.retrain_days,
        inference_period_s=args.infer_period_s,
        k_eval_aps=args.k_aps,
        avg_power_watts=args.power_watts,
    )

    if isinstance(model, NeuralForecaster):
        hyper = replace(
            _hyper_from_args(args), max_epochs=args.profile_epochs, patience=args.profile_epochs
        )
        _, train_prof = measure(
            evaluation._build_and_train,
            meta.kind, series, tr, va, wcfg, meta.granularity_s, hyper, args.seed,
            watts=args.power_watts, label="train",
        )
    else:
        _, train_prof = measure(
            evaluation._build_and_train,
            meta.kind, series, tr, va, wcfg, meta.granularity_s,
            HyperConfig(seed=args.seed), args.seed,
            watts=args.power_watts, label="train",
        )
    window, ap = te.X[0], te.ap_ids[0]
    infer_prof = _per_call_profile(
        lambda: model.predict(window, ap_id=ap), args.infer_reps, args.power_watts
    )
    rows = [
        build_deployment_row(
            meta.kind, "float32", train_prof, infer_prof, cadence,
            args.mem_total_bytes,
        )
    ]
    speedup = None
    if args.quantized_ckpt:
        qm = load_quantized(args.quantized_ckpt, backend=args.backend)
        q_prof = _per_call_profile(
            lambda: qm.predict(window, ap_id=ap), args.infer_reps, args.power_watts
        )
        rows.append(
            build_deployment_row(
                meta.kind, "int8", train_prof, q_prof, cadence,
                args.mem_total_bytes,
            )
        )
        speedup = infer_prof.wall_time_s / q_prof.wall_time_s
    csv_path = os.path.join(out, "deployment.csv")
    write_deployment_csv(rows, csv_path)
    trainings, calls = monthly_multipliers(cadence)
    raw = {
        "cadence": {
            "retrain_period_days": cadence.retrain_period_days,
            "inference_period_s": cadence.inference_period_s,
            "k_eval_aps": cadence.k_eval_aps,
            "avg_power_watts": cadence.avg_power_watts,
            "trainings_per_month": trainings,
            "inference_calls_per_month": calls,
        },
        "rows": [
            {
                "model": r.model, "env": r.env,
                "train_wall_s": r.train.wall_time_s,
                "infer_wall_s": r.infer.wall_time_s,
                "train_kwh_month": r.train_kwh_month,
                "infer_kwh_month": r.infer_kwh_month,
            }
            for r in rows
        ],
        "quantized_speedup": speedup,
    }
    json_path = os.path.join(out, "profile.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, sort_keys=True, indent=2)
    for r in rows:
        print(
            f"profile[{r.model}/{r.env}]: train {r.train.wall_time_s:.3f}s "
            f"({r.train_kwh_month:.3e} kWh/mo), infer "
            f"{r.infer.wall_time_s * 1e3:.3f}ms/call ({r.infer_kwh_month:.3e} kWh/mo)"
        )
    if speedup is not None:
        print(f"profile: quantized inference speedup x{speedup:.2f}")
    inputs = [args.ckpt, args.series]
    if args.quantized_ckpt:
        inputs.append(args.quantized_ckpt)
    return inputs, [csv_path, json_path]


def cmd_report(args):
    out = _ensure_out(args)
    reports = []
    resolved = []
    for path in args.inputs:
        if os.path.isdir(path):
            path = os.path.join(path, "reports.jsonl")
        resolved.append(path)
        with open(path, "r", encoding="utf-8") as fh:
            reports.extend(report_from_json(line) for line in fh if line.strip())
    if not reports:
        raise ValueError("no reports found in the given inputs")
    written = emit_report(reports, out, fmt=args.fmt)
    print(f"report: {len(reports)} reports -> {', '.join(sorted(written))}")
    return resolved, written


def cmd_selftest(args):
    from fractions import Fraction

    from .load_derivation import MB, session_step_load
    from .trace_ingest import AssociationRecord

    failures = []

    def check(name, ok, detail=""):
        print(f"{'ok' if ok else 'FAIL'} {name}{': ' + detail if detail else ''}")
        if not ok:
            failures.append(name)

    errs = nn_core.gradient_suite(seed=args.seed)
    for name, err in sorted(errs.items()):
        check(f"gradient {name}", err < 1e-4, f"max rel err {err:.2e}")

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(200):
        start = int(rng.integers(0, 10**6))
        dur = int(rng.integers(1, 10**4))
        rec = AssociationRecord(
            "02:00:00:00:00:01", "ap0", start, start + dur,
            int(rng.integers(0, 10**9)), int(rng.integers(0, 10**9)),
        )
        for w in (60, 120, 600):
            parts = session_step_load(rec, w)
            up = sum(p[1] for p in parts)
            down = sum(p[2] for p in parts)
            for total, ref in ((up, rec.bytes_up / MB), (down, rec.bytes_down / MB)):
                if ref > 0:
                    worst = max(worst, abs(total - ref) / ref)
    check("conservation 200x3 widths", worst < 1e-9, f"worst rel err {worst:.1e}")

    rec = AssociationRecord("02:00:00:00:00:01", "ap0", 0, 600, 100_000_000, 0)
    parts = session_step_load(rec, 60)
    check(
        "10min/100MB -> ten 10MB steps",
        len(parts) == 10 and all(p[1] == 10.0 for p in parts),
    )

    ok_mape = True
    for _ in range(100):
        a = rng.uniform(0.5, 100, size=20)
        p = rng.uniform(0, 100, size=20)
        oracle = sum(abs(x - y) / abs(x) for x, y in zip(a, p)) / len(a) * 100
        got = evaluation.mape(a, p)
        if abs(got - oracle) / oracle > 1e-12:
            ok_mape = False
    check("mape matches loop oracle", ok_mape)

    cadence = CadenceConfig()
    trainings, calls = monthly_multipliers(cadence)
    check(
        "cadence multipliers",
        trainings == float(Fraction(30, 14)) and calls == 86400.0,
        f"{trainings:.6f} trainings/mo, {calls:.0f} calls/mo",
    )

    if failures:
        print(f"selftest: {len(failures)} failure(s): {', '.join(failures)}")
        return 2
    print("selftest: all checks passed")
    return 0


# --- parser ------------------------------------------------------------------

def build_parser(config: dict[str, str]) -> _Parser:
    parser = _Parser(prog="apload", description=__doc__)
    parser.add_argument("--version", action="version", version=f"apload {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def common(p):
        h = _ArgHelper(p, config)
        h.add("--seed", type=int, default=0, help="global RNG seed")
        h.add("--jobs", type=int, default=1, help="parallel worker count")
        h.add("--config", type=str, default=None, help="flat key=value config file")
        return h

    p = sub.add_parser("synth", help="generate synthetic association records")
    h = common(p)
    h.add("--out", required=True)
    h.add("--num-aps", type=int, default=8)
    h.add("--days", type=float, default=1.0)
    h.add("--sessions-per-ap-hour", type=float, default=6.0)
    h.add("--diurnal-amplitude", type=float, default=0.6)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse and validate an association CSV")
    h = common(p)
    h.add("--records", required=True)
    h.add("--out", required=True)
    h.add("--strict", action="store_true", help="fail on the first bad row")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("derive", help="derive per-AP load series from records")
    h = common(p)
    h.add("--records", required=True)
    h.add("--granularity-s", type=int, default=120)
    h.add("--aps", type=str, default=None, help="comma-separated AP filter")
    h.add("--out", required=True)
    p.set_defaults(func=cmd_derive)

    def train_flags(h):
        h.add("--lookback-steps", type=int, default=30)
        h.add("--horizon-steps", type=int, default=5)
        h.add("--stride", type=int, default=1)
        h.add("--features", type=str, default="up,down")
        h.add("--target-features", type=str, default=None)
        h.add("--epochs", type=int, default=100)
        h.add("--patience", type=int, default=10)
        h.add("--lr", type=float, default=1e-3)
        h.add("--batch-size", type=int, default=32)
        h.add("--hidden", type=int, default=64)

    p = sub.add_parser("train", help="train a forecaster on a load series")
    h = common(p)
    h.add("--series", required=True)
    h.add("--model", required=True, choices=("persistence", "arima", "lstm", "cnn"))
    h.add("--granularity-s", type=int, default=None,
          help="resample the series before windowing")
    h.add("--aps", type=str, default=None)
    h.add("--out", required=True)
    train_flags(h)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a load series")
    h = common(p)
    h.add("--series", required=True)
    h.add("--ckpt", required=True)
    h.add("--out", required=True)
    h.add("--aps", type=str, default=None)
    h.add("--split", choices=("train", "val", "test"), default="test")
    h.add("--stride", type=int, default=1)
    h.add("--eval-stride", type=int, default=1)
    h.add("--epsilon-mb", type=float, default=EPSILON_MB)
    h.add("--fmt", choices=("csv", "plotdata-svg"), default="csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quantize", help="post-training int8 quantization")
    h = common(p)
    h.add("--ckpt", required=True)
    h.add("--series", required=True)
    h.add("--out", required=True)
    h.add("--aps", type=str, default=None)
    h.add("--stride", type=int, default=1)
    h.add("--calib-windows", type=int, default=128)
    h.add("--epsilon-mb", type=float, default=EPSILON_MB)
    h.add("--backend", choices=("auto", "numba", "numpy"), default="auto")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("profile", help="time/memory/energy deployment costs")
    h = common(p)
    h.add("--ckpt", required=True)
    h.add("--series", required=True)
    h.add("--out", required=True)
    h.add("--aps", type=str, default=None)
    h.add("--quantized-ckpt", type=str, default=None)
    h.add("--backend", choices=("auto", "numba", "numpy"), default="auto")
    h.add("--power-watts", type=float, default=65.0)
    h.add("--retrain-days", type=float, default=14.0)
    h.add("--infer-period-s", type=float, default=120.0)
    h.add("--k-aps", type=int, default=4)
    h.add("--profile-epochs", type=int, default=3)
    h.add("--infer-reps", type=int, default=100)
    h.add("--mem-total-bytes", type=int, default=None)
    train_flags(h)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("report", help="re-emit reports (tables, CDFs, charts)")
    h = common(p)
    h.add("--inputs", nargs="+", required=True,
          help="reports.jsonl files or directories containing one")
    h.add("--out", required=True)
    h.add("--fmt", choices=("csv", "plotdata-svg"), default="plotdata-svg")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="gradient, conservation, and unit checks")
    common(p)
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    config_path = _scan_config_path(argv)
    try:
        config = load_config_file(config_path) if config_path else {}
    except (OSError, ValueError) as exc:
        print(f"apload: cannot read config: {exc}", file=sys.stderr)
        return 1
    parser = build_parser(config)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = _utcnow()
    try:
        result = args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"apload {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"apload {args.command}: runtime failure: {exc!r}", file=sys.stderr)
        return 2
    if isinstance(result, int):
        return result
    inputs, outputs = result
    write_manifest(args.out, args.command, args, inputs, outputs, started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
