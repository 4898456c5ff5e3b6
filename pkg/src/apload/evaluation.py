"""MAPE metrics, error CDFs, and the two experiment grids.

The granularity experiment trains each model kind for every
(granularity, horizon) cell on a fixed AP population and scores it on
the validation split. The generalization experiment repeatedly draws
train/test AP populations (on-prem: identical; off-prem: disjoint,
64 training APs) and scores on the test split, pooling repetitions.

Ground-truth steps whose absolute load is at or below epsilon_mb are
excluded from MAPE (a percentage error against zero is undefined); the
excluded fraction is carried in every report. A prediction with no
usable step yields NaN, never a fake 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import forecasters
from .dataset_windows import (
    WindowConfig,
    WindowedDataset,
    build_ap_split,
    fit_normalizer,
    split_holdout,
    windows_for_aps,
)
from .forecasters import (
    ArimaForecaster,
    ForecastModel,
    HyperConfig,
    ModelMeta,
    NeuralForecaster,
    PersistenceModel,
    arima_grid_search,
    default_fit_window_steps,
    train_neural,
)
from .load_derivation import LoadSeries

EPSILON_MB = 1e-6


def mape(actual, predicted, epsilon_mb: float = EPSILON_MB) -> float:
    """Mean absolute percentage error, in percent.

    Points with |actual| <= epsilon_mb are excluded. Returns NaN when
    every point is excluded.
    """
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.size != p.size:
        raise ValueError(f"length mismatch: {a.size} vs {p.size}")
    if a.size == 0:
        raise ValueError("empty input")
    keep = np.abs(a) > epsilon_mb
    if not np.any(keep):
        return float("nan")
    return float(100.0 * np.mean(np.abs(a[keep] - p[keep]) / np.abs(a[keep])))


def mape_with_exclusions(actual, predicted, epsilon_mb: float = EPSILON_MB):
    """(mape-or-NaN, excluded fraction) for one prediction."""
    a = np.asarray(actual, dtype=float).ravel()
    keep = np.abs(a) > epsilon_mb
    excluded = 1.0 - keep.sum() / a.size
    return mape(actual, predicted, epsilon_mb), float(excluded)


def mape_cdf(errors) -> list[tuple[float, float]]:
    """Empirical right-continuous CDF points (value, fraction <= value)."""
    err = np.asarray([e for e in np.asarray(errors, dtype=float).ravel()], dtype=float)
    if err.size == 0:
        raise ValueError("empty error list")
    err = np.sort(err)
    n = err.size
    return [(float(v), float((i + 1) / n)) for i, v in enumerate(err)]


@dataclass(frozen=True)
class EvalReport:
    """Per-cell evaluation outcome plus enough key fields to locate it."""

    model_kind: str
    granularity_s: int
    horizon_steps: int
    k_test: int
    mode: str
    seed: int
    split: str
    per_prediction_mape: tuple[float, ...]
    excluded_zero_fraction: float
    repetition: int | None = None
    cdf: tuple[tuple[float, float], ...] | None = None

    @property
    def horizon_min(self) -> float:
        return self.horizon_steps * self.granularity_s / 60.0

    def _finite(self) -> np.ndarray:
        vals = np.asarray(self.per_prediction_mape, dtype=float)
        return vals[np.isfinite(vals)]

    def summary(self) -> dict:
        vals = self._finite()
        if vals.size == 0:
            stats = {k: float("nan") for k in ("mean", "median", "q1", "q3")}
        else:
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            stats = {
                "mean": float(vals.mean()),
                "median": float(med),
                "q1": float(q1),
                "q3": float(q3),
            }
        stats["count"] = int(vals.size)
        stats["excluded_zero_fraction"] = self.excluded_zero_fraction
        return stats


def evaluate_predictions(
    model: ForecastModel,
    ds: WindowedDataset,
    epsilon_mb: float = EPSILON_MB,
    history_provider=None,
) -> tuple[list[float], float]:
    """Per-prediction MAPEs of a model over a windowed dataset.

    ARIMA models refit from trailing history; history_provider(ap_id,
    t_anchor) must return the per-feature history matrix ending at the
    anchor step (inclusive). Neural models run in one normalized batch.
    """
    per_pred: list[float] = []
    excluded: list[float] = []
    if isinstance(model, NeuralForecaster):
        preds = model.predict_batch(ds.X, ds.ap_ids)
        for k in range(len(ds)):
            m, ex = mape_with_exclusions(ds.Y[k], preds[k], epsilon_mb)
            per_pred.append(m)
            excluded.append(ex)
        return per_pred, float(np.mean(excluded))
    for k in range(len(ds)):
        if isinstance(model, ArimaForecaster) and history_provider is not None:
            hist = history_provider(ds.ap_ids[k], int(ds.t_anchor[k]))
            pred = model.forecast_from_history(hist)
        else:
            pred = model.predict(ds.X[k], ap_id=ds.ap_ids[k])
        m, ex = mape_with_exclusions(ds.Y[k], pred, epsilon_mb)
        per_pred.append(m)
        excluded.append(ex)
    return per_pred, float(np.mean(excluded))


def pooled_report(reports: list[EvalReport]) -> EvalReport:
    """Merge per-repetition reports of one cell into a pooled report."""
    first = reports[0]
    all_mapes: list[float] = []
    weights_excl = []
    for r in reports:
        all_mapes.extend(r.per_prediction_mape)
        weights_excl.append((len(r.per_prediction_mape), r.excluded_zero_fraction))
    total = sum(n for n, _ in weights_excl)
    excl = sum(n * e for n, e in weights_excl) / total if total else 0.0
    return replace(
        first,
        repetition=None,
        per_prediction_mape=tuple(all_mapes),
        excluded_zero_fraction=excl,
        cdf=tuple(mape_cdf([m for m in all_mapes if np.isfinite(m)]))
        if any(np.isfinite(m) for m in all_mapes)
        else None,
    )


def _resample(series: LoadSeries, new_g: int) -> LoadSeries:
    if new_g == series.granularity_s:
        return series
    factor, rem = divmod(new_g, series.granularity_s)
    if rem or factor < 1:
        raise ValueError(
            f"cannot resample {series.granularity_s}s series to {new_g}s"
        )
    n = (len(series) // factor) * factor
    if n == 0:
        raise ValueError("series too short for resampling")
    loads = series.loads[:n].reshape(-1, factor, 2).sum(axis=1)
    return LoadSeries(series.ap_id, new_g, series.t0, loads)


def _subsample(ds: WindowedDataset, stride: int) -> WindowedDataset:
    if stride <= 1:
        return ds
    return ds.take(np.arange(0, len(ds), stride))


def _parallel_map(fn, items, jobs: int) -> list:
    """Order-preserving map; independent seeded jobs make the result
    identical whatever the scheduling."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _history_provider(series_map, target_columns):
    def provider(ap_id, t_anchor):
        s = series_map[str(ap_id)]
        idx = (t_anchor - s.t0) // s.granularity_s
        return s.loads[: idx + 1, :][:, target_columns]

    return provider


def _fit_arima_forecaster(
    series_map, train, cfg: WindowConfig, granularity_s: int
) -> ArimaForecaster:
    """Grid-search orders per AP on training history, majority-vote them
    into one order per target feature.

    Each AP's training portion ends where its training anchors end; the
    search sees only that prefix, so no evaluation data leaks in.
    """
    fit_window = default_fit_window_steps(granularity_s)
    tcols = [cfg.input_features.index(n) for n in cfg.target_features]
    votes: dict[int, dict[tuple, int]] = {j: {} for j in range(len(tcols))}
    for ap in np.unique(train.ap_ids):
        s = series_map[str(ap)]
        anchors = train.t_anchor[train.ap_ids == ap]
        end = (int(anchors.max()) - s.t0) // s.granularity_s + 1
        for j, col in enumerate(tcols):
            hist = s.loads[:end, col]
            try:
                order = arima_grid_search(hist, fit_window_steps=fit_window)
            except forecasters.ArimaError:
                order = (0, 1, 0)
            votes[j][order] = votes[j].get(order, 0) + 1
    orders = tuple(
        max(sorted(votes[j]), key=lambda o: votes[j][o]) for j in range(len(tcols))
    )
    meta = ModelMeta(
        kind="arima",
        granularity_s=granularity_s,
        lookback_steps=cfg.lookback_steps,
        horizon_steps=cfg.horizon_steps,
        input_features=cfg.input_features,
        target_features=cfg.target_features,
        train_aps=tuple(sorted(set(str(a) for a in train.ap_ids))),
    )
    return ArimaForecaster(meta, orders, fit_window)


def _persistence(cfg: WindowConfig, granularity_s: int) -> PersistenceModel:
    return PersistenceModel(
        ModelMeta(
            kind="persistence",
            granularity_s=granularity_s,
            lookback_steps=cfg.lookback_steps,
            horizon_steps=cfg.horizon_steps,
            input_features=cfg.input_features,
            target_features=cfg.target_features,
        )
    )


@dataclass
class GranularityExperimentConfig:
    granularities_s: tuple[int, ...] = (600, 120, 60)
    horizons_min: tuple[int, ...] = (10, 30, 60)
    models: tuple[str, ...] = ("arima", "lstm", "cnn")
    k_aps: int = 16
    seed: int = 0
    lookback_window_s: int = 3600
    train_stride: int = 1
    eval_stride: int = 1
    epsilon_mb: float = EPSILON_MB
    jobs: int = 1
    hyper: HyperConfig = field(default_factory=HyperConfig)


def run_granularity_experiment(
    series_map: dict[str, LoadSeries], cfg: GranularityExperimentConfig
) -> list[EvalReport]:
    """One report per (model, granularity, horizon) cell, scored on the
    validation split of a fixed randomly selected AP population."""
    rng = np.random.default_rng(cfg.seed)
    pool = sorted(series_map)
    if len(pool) < cfg.k_aps:
        raise ValueError(f"need {cfg.k_aps} APs, have {len(pool)}")
    chosen = sorted(pool[i] for i in rng.permutation(len(pool))[: cfg.k_aps])

    reports: list[EvalReport] = []
    for g in cfg.granularities_s:
        resampled = {ap: _resample(series_map[ap], g) for ap in chosen}
        lookback = max(1, cfg.lookback_window_s // g)
        for horizon_min in cfg.horizons_min:
            horizon = max(1, horizon_min * 60 // g)
            wcfg = WindowConfig(lookback, horizon, stride=cfg.train_stride)
            ds = windows_for_aps(resampled, wcfg)
            train, val, _ = split_holdout(ds)
            val_eval = _subsample(val, cfg.eval_stride)

            def run_cell(kind, resampled=resampled, train=train, val=val,
                         val_eval=val_eval, wcfg=wcfg, g=g, horizon=horizon):
                model = _build_and_train(
                    kind, resampled, train, val, wcfg, g, cfg.hyper, cfg.seed
                )
                history = (
                    _history_provider(resampled, model.meta.target_columns)
                    if kind == "arima"
                    else None
                )
                mapes, excl = evaluate_predictions(
                    model, val_eval, cfg.epsilon_mb, history
                )
                return EvalReport(
                    model_kind=kind,
                    granularity_s=g,
                    horizon_steps=horizon,
                    k_test=cfg.k_aps,
                    mode="on_prem",
                    seed=cfg.seed,
                    split="val",
                    per_prediction_mape=tuple(mapes),
                    excluded_zero_fraction=excl,
                )

            reports.extend(_parallel_map(run_cell, cfg.models, cfg.jobs))
    return reports


def _build_and_train(kind, series_map, train, val, wcfg, g, hyper, seed):
    if kind == "persistence":
        return _persistence(wcfg, g)
    if kind == "arima":
        return _fit_arima_forecaster(series_map, train, wcfg, g)
    if kind in ("lstm", "cnn"):
        return train_neural(kind, train, val, replace(hyper, seed=seed))
    raise ValueError(f"unknown model kind: {kind}")


@dataclass
class GeneralizationExperimentConfig:
    k_test_values: tuple[int, ...] = (4, 16, 32)
    horizons_min: tuple[int, ...] = (10, 60)
    granularity_s: int = 120
    repetitions: int = 10
    models: tuple[str, ...] = ("lstm",)
    modes: tuple[str, ...] = ("on_prem", "off_prem")
    k_train_offprem: int = 64
    seed: int = 0
    lookback_window_s: int = 3600
    train_stride: int = 1
    eval_stride: int = 1
    epsilon_mb: float = EPSILON_MB
    jobs: int = 1
    hyper: HyperConfig = field(default_factory=HyperConfig)


def run_generalization_experiment(
    series_map: dict[str, LoadSeries], cfg: GeneralizationExperimentConfig
) -> list[EvalReport]:
    """On-/off-prem comparison over repeated AP draws, scored on the test
    split of the test APs; appends one pooled report per cell."""
    all_aps = sorted(series_map)
    resampled = {
        ap: _resample(series_map[ap], cfg.granularity_s) for ap in all_aps
    }
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.repetitions)
    reports: list[EvalReport] = []
    for k_test in cfg.k_test_values:
        for horizon_min in cfg.horizons_min:
            horizon = max(1, horizon_min * 60 // cfg.granularity_s)
            lookback = max(1, cfg.lookback_window_s // cfg.granularity_s)
            wcfg = WindowConfig(lookback, horizon, stride=cfg.train_stride)
            for mode in cfg.modes:
                for kind in cfg.models:

                    def run_rep(rep, mode=mode, kind=kind, wcfg=wcfg,
                                k_test=k_test):
                        rep_seed = int(seeds[rep].generate_state(1)[0] % 2**31)
                        return _run_generalization_cell(
                            resampled, all_aps, k_test, mode, kind, wcfg,
                            cfg, rep, rep_seed,
                        )

                    cell = _parallel_map(run_rep, range(cfg.repetitions), cfg.jobs)
                    reports.extend(cell)
                    reports.append(pooled_report(cell))
    return reports


def _run_generalization_cell(
    resampled, all_aps, k_test, mode, kind, wcfg, cfg, rep, rep_seed
) -> EvalReport:
    train_aps, test_aps = build_ap_split(
        all_aps, k_test, mode, cfg.k_train_offprem, seed=rep_seed
    )
    train_ds_full = windows_for_aps(resampled, wcfg, train_aps)
    tr, va, _ = split_holdout(train_ds_full)
    test_ds_full = windows_for_aps(resampled, wcfg, test_aps)
    tr_t, _, te = split_holdout(test_ds_full)
    te = _subsample(te, cfg.eval_stride)

    model = _build_and_train(
        kind, resampled, tr, va, wcfg, cfg.granularity_s, cfg.hyper, rep_seed
    )
    if isinstance(model, NeuralForecaster) and mode == "off_prem":
        # scale unseen APs by their own training-period ranges
        model = model.with_normalizer(fit_normalizer(tr_t))
    history = (
        _history_provider(resampled, model.meta.target_columns)
        if kind == "arima"
        else None
    )
    mapes, excl = evaluate_predictions(model, te, cfg.epsilon_mb, history)
    return EvalReport(
        model_kind=kind,
        granularity_s=cfg.granularity_s,
        horizon_steps=wcfg.horizon_steps,
        k_test=k_test,
        mode=mode,
        seed=cfg.seed,
        split="test",
        per_prediction_mape=tuple(mapes),
        excluded_zero_fraction=excl,
        repetition=rep,
    )


REPORT_CSV_HEADER = (
    "model,granularity_s,horizon_steps,horizon_min,k_test,mode,seed,repetition,"
    "split,count,mean_mape,median_mape,q1_mape,q3_mape,excluded_zero_fraction"
)


def emit_report(reports: list[EvalReport], out_dir, fmt: str = "csv") -> list[str]:
    """Write reports.csv (one row per report), CDF point files, and, for
    fmt='plotdata-svg', grouped box/line charts."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []
    csv_path = os.path.join(out_dir, "reports.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(REPORT_CSV_HEADER + "\n")
        for r in reports:
            s = r.summary()
            rep = "" if r.repetition is None else str(r.repetition)
            fh.write(
                f"{r.model_kind},{r.granularity_s},{r.horizon_steps},"
                f"{r.horizon_min!r},{r.k_test},{r.mode},{r.seed},{rep},{r.split},"
                f"{s['count']},{s['mean']!r},{s['median']!r},{s['q1']!r},"
                f"{s['q3']!r},{s['excluded_zero_fraction']!r}\n"
            )
    written.append(csv_path)
    jsonl_path = os.path.join(out_dir, "reports.jsonl")
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(report_to_json(r) + "\n")
    written.append(jsonl_path)
    for i, r in enumerate(reports):
        if r.cdf is None:
            continue
        cdf_path = os.path.join(
            out_dir, f"cdf_{i:03d}_{r.model_kind}_{r.mode}_k{r.k_test}.csv"
        )
        with open(cdf_path, "w", encoding="utf-8") as fh:
            fh.write("mape,cumulative_fraction\n")
            for v, f in r.cdf:
                fh.write(f"{v!r},{f!r}\n")
        written.append(cdf_path)
    if fmt == "plotdata-svg":
        written.extend(_emit_svgs(reports, out_dir))
    elif fmt != "csv":
        raise ValueError(f"unknown report format: {fmt}")
    return written


def parse_report_csv(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rows.append(dict(zip(header, parts)))
    return rows


def _emit_svgs(reports, out_dir) -> list[str]:
    import os

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    # mean MAPE vs horizon, one line per (model, granularity)
    val_reports = [r for r in reports if r.split == "val"]
    if val_reports:
        fig, ax = plt.subplots(figsize=(7, 4))
        keys = sorted({(r.model_kind, r.granularity_s) for r in val_reports})
        for kind, g in keys:
            pts = sorted(
                (r.horizon_min, r.summary()["mean"])
                for r in val_reports
                if r.model_kind == kind and r.granularity_s == g
            )
            if pts:
                ax.plot(*zip(*pts), marker="o", label=f"{kind} G={g}s")
        ax.set_xlabel("forecast horizon [min]")
        ax.set_ylabel("mean MAPE [%]")
        ax.legend(fontsize=7)
        path = os.path.join(out_dir, "mape_vs_horizon.svg")
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    pooled = [r for r in reports if r.split == "test" and r.repetition is None]
    if pooled:
        fig, ax = plt.subplots(figsize=(7, 4))
        labels, data = [], []
        for r in pooled:
            vals = r._finite()
            if vals.size:
                labels.append(f"{r.model_kind}\n{r.mode}\nk={r.k_test}\nS={r.horizon_min:g}m")
                data.append(vals)
        if data:
            ax.boxplot(data, tick_labels=labels, showfliers=False)
            ax.set_ylabel("MAPE [%]")
            path = os.path.join(out_dir, "onprem_offprem_box.svg")
            fig.savefig(path)
            plt.close(fig)
            written.append(path)
    cdf_reports = [r for r in reports if r.cdf]
    if cdf_reports:
        fig, ax = plt.subplots(figsize=(7, 4))
        for r in cdf_reports:
            xs, ys = zip(*r.cdf)
            ax.step(xs, ys, where="post",
                    label=f"{r.model_kind} {r.mode} k={r.k_test}")
        ax.set_xlabel("MAPE [%]")
        ax.set_ylabel("cumulative fraction")
        ax.legend(fontsize=7)
        path = os.path.join(out_dir, "mape_cdf.svg")
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def report_to_json(report: EvalReport) -> str:
    d = {
        "model_kind": report.model_kind,
        "granularity_s": report.granularity_s,
        "horizon_steps": report.horizon_steps,
        "k_test": report.k_test,
        "mode": report.mode,
        "seed": report.seed,
        "split": report.split,
        "repetition": report.repetition,
        "summary": report.summary(),
        "per_prediction_mape": list(report.per_prediction_mape),
        "excluded_zero_fraction": report.excluded_zero_fraction,
        "cdf": None if report.cdf is None else [list(p) for p in report.cdf],
    }
    return json.dumps(d, sort_keys=True)


def report_from_json(line: str) -> EvalReport:
    d = json.loads(line)
    return EvalReport(
        model_kind=d["model_kind"],
        granularity_s=d["granularity_s"],
        horizon_steps=d["horizon_steps"],
        k_test=d["k_test"],
        mode=d["mode"],
        seed=d["seed"],
        split=d["split"],
        per_prediction_mape=tuple(d["per_prediction_mape"]),
        excluded_zero_fraction=d["excluded_zero_fraction"],
        repetition=d["repetition"],
        cdf=None if d["cdf"] is None else tuple(tuple(p) for p in d["cdf"]),
    )
