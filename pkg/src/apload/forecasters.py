"""Forecasting models behind one interface: ARIMA, LSTM, CNN, persistence.

Every model consumes the last L steps of a load series and emits the next
S steps for the target features, clamped to be non-negative. The neural
models run on normalized data through nn_core layer stacks; ARIMA is
univariate per target feature and refit from recent history; persistence
repeats the last observation.

ARIMA notes. Estimation is conditional least squares: residuals are
computed recursively with zero pre-sample values and the sum of squares
starts after a conditioning offset, so competing orders in a grid search
are scored on an identical time window. Stationarity of the AR part and
invertibility of the MA part are enforced through a partial-correlation
reparameterization during optimization. Order selection uses
AIC = n*ln(SSE/n) + 2*(p+q+1); orders within 2.0 AIC units of the best
form an equivalence class resolved toward the smallest p+d+q and then
lexicographically. Fits whose AR and MA roots nearly cancel (parameter
redundancy) or sit essentially on the unit circle are excluded from
selection while any alternative survives, since their apparent likelihood
gains are artifacts of a degenerate parameterization.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter

from . import nn_core
from .dataset_windows import (
    Normalizer,
    WindowedDataset,
    fit_normalizer,
    normalize_dataset,
)

DEFAULT_ORDER_GRID = tuple(
    (p, d, q) for p in range(4) for d in range(3) for q in range(4)
)
AIC_TIE_WIDTH = 2.0
COMMON_ROOT_TOL = 0.1
UNIT_ROOT_TOL = 0.99


class ArimaError(ValueError):
    pass


class NonStationaryWarning(UserWarning):
    pass


def default_fit_window_steps(granularity_s: int) -> int:
    """One day of history, in steps."""
    return max(1, 86400 // granularity_s)


# --- stationarity / invertibility reparameterization ---------------------

def _pacf_to_poly(r: np.ndarray) -> np.ndarray:
    """Levinson-Durbin recursion: partial correlations -> AR coefficients."""
    a = np.empty(0)
    for k, rk in enumerate(r, start=1):
        prev = a
        a = np.empty(k)
        a[: k - 1] = prev - rk * prev[::-1]
        a[k - 1] = rk
    return a

def _poly_to_pacf(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float).copy()
    r = np.empty(len(a))
    for k in range(len(a), 0, -1):
        rk = a[k - 1]
        r[k - 1] = rk
        if k > 1:
            a = (a[: k - 1] + rk * a[: k - 1][::-1]) / max(1.0 - rk * rk, 1e-12)
    return r

def _u_to_r(u: np.ndarray) -> np.ndarray:
    return u / np.sqrt(1.0 + u * u)

def _r_to_u(r: np.ndarray) -> np.ndarray:
    r = np.clip(r, -0.98, 0.98)
    return r / np.sqrt(1.0 - r * r)


def _char_roots(coeffs: np.ndarray, sign: float) -> np.ndarray:
    """Characteristic roots; AR passes sign=-1, MA passes sign=+1.

    Stationarity/invertibility correspond to all roots inside the unit
    circle in this convention.
    """
    if len(coeffs) == 0:
        return np.empty(0, dtype=complex)
    return np.roots(np.r_[1.0, sign * np.asarray(coeffs, dtype=float)])


def _residuals(y: np.ndarray, c: float, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """One-step residuals for t >= p with zero pre-sample residuals."""
    p, q = len(phi), len(theta)
    z = y[p:] - c
    if p:
        lags = np.column_stack([y[p - i - 1 : len(y) - i - 1] for i in range(p)])
        z = z - lags @ phi
    if q:
        z = lfilter([1.0], np.r_[1.0, theta], z)
    return z


@dataclass(frozen=True)
class ArimaModel:
    """A fitted ARIMA(p, d, q) with everything forecasting needs.

    diff_tail holds the last p values of the d-times-differenced series,
    resid_tail the last q residuals, and level_tails the final value of
    each differencing level (original first) for un-differencing.
    """

    order: tuple[int, int, int]
    phi: np.ndarray
    theta: np.ndarray
    intercept: float
    diff_tail: np.ndarray
    resid_tail: np.ndarray
    level_tails: np.ndarray
    residuals: np.ndarray
    sse: float
    nobs: int
    fit_window_steps: int
    nonstationary: bool = False

    @property
    def aic(self) -> float:
        p, _, q = self.order
        return self.nobs * np.log(max(self.sse / self.nobs, 1e-300)) + 2.0 * (p + q + 1)


def arima_fit(
    series,
    order: tuple[int, int, int],
    fit_window_steps: int | None = None,
    cond: int | None = None,
) -> ArimaModel:
    """Conditional least-squares fit of one ARIMA order.

    The series is first cut to its trailing fit window (when given), then
    differenced d times. AR-only orders solve an exact linear least
    squares; orders with MA terms run Levenberg-Marquardt over the
    constrained parameterization, started from the AR-only solution.
    cond sets the index of the first residual counted in the SSE
    (default p+q); a grid search passes a shared value so orders compete
    on the same window.
    """
    p, d, q = order
    if p < 0 or q < 0 or not 0 <= d <= 2:
        raise ArimaError(f"unsupported order {order}: need p,q >= 0 and 0 <= d <= 2")
    y = np.asarray(series, dtype=float).ravel()
    if fit_window_steps is not None and len(y) > fit_window_steps:
        y = y[-fit_window_steps:]
    window_len = len(y)

    levels = [y]
    for _ in range(d):
        levels.append(np.diff(levels[-1]))
    z = levels[-1]
    if cond is None:
        cond = p + q
    start = max(cond, p)
    if len(z) - start < max(p + q + 2, 8):
        raise ArimaError(
            f"series too short for order {order}: {len(z)} differenced points"
        )

    if p:
        X = np.column_stack(
            [np.ones(len(z) - start)]
            + [z[start - i - 1 : len(z) - i - 1] for i in range(p)]
        )
        beta, *_ = np.linalg.lstsq(X, z[start:], rcond=None)
        c, phi = float(beta[0]), beta[1:]
    else:
        c, phi = float(np.mean(z[start:])), np.empty(0)
    theta = np.empty(0)

    skip = start - p
    if q:
        x0 = np.r_[
            c, _r_to_u(_poly_to_pacf(phi)) if p else np.empty(0), np.zeros(q)
        ]

        def unpack(params):
            c_ = params[0]
            phi_ = _pacf_to_poly(_u_to_r(params[1 : 1 + p])) if p else np.empty(0)
            th_ = -_pacf_to_poly(_u_to_r(params[1 + p :]))
            return c_, phi_, th_

        sol = least_squares(
            lambda prm: _residuals(z, *unpack(prm))[skip:],
            x0, method="lm", xtol=1e-10, ftol=1e-10, max_nfev=400,
        )
        c, phi, theta = unpack(sol.x)

    resid_full = _residuals(z, c, phi, theta)
    resid = resid_full[skip:]
    if not np.all(np.isfinite(resid)):
        raise ArimaError(f"non-finite residuals for order {order}")

    nonstat = False
    ar_roots = _char_roots(phi, -1.0)
    if ar_roots.size and np.max(np.abs(ar_roots)) >= 1.0:
        nonstat = True
        warnings.warn(
            f"AR polynomial of order {order} has roots on/outside the unit "
            "circle; forecasts may diverge",
            NonStationaryWarning,
            stacklevel=2,
        )

    return ArimaModel(
        order=(p, d, q),
        phi=np.asarray(phi, dtype=float),
        theta=np.asarray(theta, dtype=float),
        intercept=float(c),
        diff_tail=z[len(z) - p :].copy() if p else np.empty(0),
        resid_tail=resid_full[len(resid_full) - q :].copy() if q else np.empty(0),
        level_tails=np.array([lv[-1] for lv in levels[:-1]], dtype=float),
        residuals=resid,
        sse=float(resid @ resid),
        nobs=len(resid),
        fit_window_steps=window_len,
        nonstationary=nonstat,
    )


def _degenerate_fit(model: ArimaModel) -> bool:
    """Common-factor or near-unit-root parameterizations.

    Such fits reduce the conditional SSE through redundancy rather than
    structure, so a grid search skips them when alternatives exist.
    """
    ra = _char_roots(model.phi, -1.0)
    rm = _char_roots(model.theta, +1.0)
    if ra.size and rm.size:
        if np.min(np.abs(ra[:, None] - rm[None, :])) < COMMON_ROOT_TOL:
            return True
    for roots in (ra, rm):
        if roots.size and np.max(np.abs(roots)) > UNIT_ROOT_TOL:
            return True
    return False


def arima_grid_search(
    series,
    grid=DEFAULT_ORDER_GRID,
    fit_window_steps: int | None = None,
) -> tuple[int, int, int]:
    """Pick the best (p, d, q) by AIC over the grid.

    All orders are scored on the same conditioning window. Orders within
    AIC_TIE_WIDTH of the minimum tie; the tie resolves to the smallest
    p+d+q, then lexicographically. Degenerate fits participate only if
    nothing non-degenerate succeeds; if every fit fails, ArimaError.
    """
    grid = list(grid)
    if not grid:
        raise ArimaError("empty order grid")
    cond = max(p + q for p, _, q in grid)
    scored = []
    fallback = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonStationaryWarning)
        for order in grid:
            try:
                model = arima_fit(
                    series, order, fit_window_steps=fit_window_steps, cond=cond
                )
            except (ArimaError, np.linalg.LinAlgError):
                continue
            entry = (model.aic, order)
            if _degenerate_fit(model):
                fallback.append(entry)
            else:
                scored.append(entry)
    if not scored:
        scored = fallback
    if not scored:
        raise ArimaError("all ARIMA fits failed over the grid")
    best_aic = min(a for a, _ in scored)
    tied = [o for a, o in scored if a - best_aic <= AIC_TIE_WIDTH]
    return min(tied, key=lambda o: (o[0] + o[1] + o[2], o))


def arima_forecast(model: ArimaModel, steps: int) -> np.ndarray:
    """Recursive multi-step forecast.

    Future shocks are zero; forecasts feed back into the AR lags; the
    differenced forecast is integrated back through the stored level
    tails; negatives are clamped at the very end.
    """
    if steps < 1:
        raise ArimaError("steps must be >= 1")
    p, d, q = model.order
    hist = list(model.diff_tail[::-1])       # hist[0] = most recent
    resid = list(model.resid_tail[::-1])
    out = np.empty(steps)
    for h in range(steps):
        val = model.intercept
        for i in range(p):
            val += model.phi[i] * hist[i]
        for j in range(q):
            # theta[j] multiplies the shock j+1 steps back from t+h+1;
            # future shocks are zero, observed ones come from resid_tail
            if j >= h:
                val += model.theta[j] * resid[j - h]
        out[h] = val
        if p:
            hist.insert(0, val)
    for level_last in model.level_tails[::-1][: d]:
        out = level_last + np.cumsum(out)
    return np.maximum(out, 0.0)


# --- the uniform forecaster interface -------------------------------------

@dataclass(frozen=True)
class ModelMeta:
    """Shape contract of a trained forecaster."""

    kind: str
    granularity_s: int
    lookback_steps: int
    horizon_steps: int
    input_features: tuple[str, ...]
    target_features: tuple[str, ...]
    train_aps: tuple[str, ...] = ()

    @property
    def target_columns(self) -> list[int]:
        return [self.input_features.index(n) for n in self.target_features]


class ForecastModel:
    meta: ModelMeta

    def predict(self, window: np.ndarray, ap_id: str | None = None) -> np.ndarray:
        raise NotImplementedError

    def _check_window(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=float)
        expected = (self.meta.lookback_steps, len(self.meta.input_features))
        if window.shape != expected:
            raise nn_core.ShapeError(
                f"{self.meta.kind} expects window {expected}, got {window.shape}"
            )
        return window


@dataclass
class PersistenceModel(ForecastModel):
    """Repeats the last observed target values S times."""

    meta: ModelMeta

    def predict(self, window, ap_id=None):
        window = self._check_window(window)
        last = window[-1, self.meta.target_columns]
        return np.tile(last, (self.meta.horizon_steps, 1))


def persistence_forecast(window: np.ndarray, horizon_steps: int) -> np.ndarray:
    window = np.asarray(window, dtype=float)
    return np.tile(window[-1], (horizon_steps, 1))


@dataclass
class ArimaForecaster(ForecastModel):
    """Per-feature univariate ARIMA, refit on recent history per call.

    orders[j] is the (p, d, q) used for target feature j, normally chosen
    once per AP by grid search over training history.
    """

    meta: ModelMeta
    orders: tuple[tuple[int, int, int], ...]
    fit_window_steps: int

    def forecast_from_history(self, history: np.ndarray) -> np.ndarray:
        history = np.asarray(history, dtype=float)
        if history.ndim != 2 or history.shape[1] != len(self.meta.target_features):
            raise nn_core.ShapeError(
                f"history must be [n, {len(self.meta.target_features)}], "
                f"got {history.shape}"
            )
        S = self.meta.horizon_steps
        out = np.empty((S, history.shape[1]))
        for j, order in enumerate(self.orders):
            try:
                model = arima_fit(
                    history[:, j], order, fit_window_steps=self.fit_window_steps
                )
                out[:, j] = arima_forecast(model, S)
            except ArimaError:
                out[:, j] = history[-1, j]  # degenerate fallback: persistence
        return out

    def predict(self, window, ap_id=None):
        window = self._check_window(window)
        return self.forecast_from_history(window[:, self.meta.target_columns])


@dataclass
class HyperConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    lstm_hidden: int = 64
    conv_channels: tuple[int, int] = (8, 16)


def build_network(kind: str, L: int, n_in: int, S: int, n_out: int,
                  hyper: HyperConfig) -> nn_core.Sequential:
    """Default architectures; both end in a dense head emitting all S
    horizon steps at once."""
    rng = np.random.default_rng(hyper.seed)
    head = S * n_out
    if kind == "lstm":
        h = hyper.lstm_hidden
        specs = [
            {"kind": "lstm", "input_size": n_in, "hidden_size": h,
             "return_sequences": True},
            {"kind": "lstm", "input_size": h, "hidden_size": h,
             "return_sequences": False},
            {"kind": "dense", "in_dim": h, "out_dim": head},
        ]
    elif kind == "cnn":
        c1, c2 = hyper.conv_channels
        pooled = L // 2
        if pooled == 0:
            raise ValueError("lookback too short for the CNN architecture")
        specs = [
            {"kind": "reshape", "target_shape": [1, L, n_in]},
            {"kind": "conv2d", "in_ch": 1, "out_ch": c1, "kh": 3, "kw": 3,
             "stride": 1, "padding": "same"},
            {"kind": "relu"},
            {"kind": "maxpool2d", "ph": 2, "pw": 1},
            {"kind": "conv2d", "in_ch": c1, "out_ch": c2, "kh": 3, "kw": 3,
             "stride": 1, "padding": "same"},
            {"kind": "relu"},
            {"kind": "flatten"},
            {"kind": "dense", "in_dim": c2 * pooled * n_in, "out_dim": head},
        ]
    else:
        raise ValueError(f"unknown network kind: {kind}")
    return nn_core.Sequential.from_specs(specs, rng=rng)


@dataclass
class NeuralForecaster(ForecastModel):
    meta: ModelMeta
    network: nn_core.Sequential
    normalizer: Normalizer
    train_result: nn_core.TrainResult | None = None

    def with_normalizer(self, normalizer: Normalizer) -> "NeuralForecaster":
        """Same weights, different per-AP scaling (for APs outside the
        training population)."""
        return replace(self, normalizer=normalizer)

    def predict_batch(self, X: np.ndarray, ap_ids) -> np.ndarray:
        """Normalized batch path: X is [B, L, |M|] raw loads."""
        meta = self.meta
        Xn = self.normalizer.apply(X, ap_ids, meta.input_features)
        raw = self.network.forward(Xn)
        S, n_out = meta.horizon_steps, len(meta.target_features)
        Yn = raw.reshape(-1, S, n_out)
        Y = self.normalizer.invert(Yn, ap_ids, meta.target_features)
        return np.maximum(Y, 0.0)

    def predict(self, window, ap_id=None):
        window = self._check_window(window)
        if ap_id is None:
            raise ValueError("neural prediction needs the ap_id for scaling")
        return self.predict_batch(window[None], np.array([ap_id], dtype=object))[0]


def train_neural(
    kind: str,
    train: WindowedDataset,
    val: WindowedDataset,
    hyper: HyperConfig = HyperConfig(),
    normalizer: Normalizer | None = None,
) -> NeuralForecaster:
    """Fit an LSTM or CNN forecaster on windowed data.

    The normalizer is fitted on the training set unless one is supplied.
    Returns the model restored to its best validation epoch, with the
    training log attached.
    """
    if train.config != val.config or train.granularity_s != val.granularity_s:
        raise ValueError("train and val datasets disagree on windowing")
    cfg = train.config
    norm = fit_normalizer(train) if normalizer is None else normalizer
    tr = normalize_dataset(train, norm)
    va = normalize_dataset(val, norm)
    n_out = len(cfg.target_features)
    net = build_network(
        kind, cfg.lookback_steps, len(cfg.input_features),
        cfg.horizon_steps, n_out, hyper,
    )
    result = nn_core.train_model(
        net,
        tr.X, tr.Y.reshape(len(tr), -1),
        va.X, va.Y.reshape(len(va), -1),
        nn_core.TrainConfig(
            lr=hyper.lr, batch_size=hyper.batch_size,
            max_epochs=hyper.max_epochs, patience=hyper.patience,
            seed=hyper.seed,
        ),
    )
    meta = ModelMeta(
        kind=kind,
        granularity_s=train.granularity_s,
        lookback_steps=cfg.lookback_steps,
        horizon_steps=cfg.horizon_steps,
        input_features=cfg.input_features,
        target_features=cfg.target_features,
        train_aps=tuple(sorted(set(str(a) for a in train.ap_ids))),
    )
    return NeuralForecaster(meta, net, norm, result)


# --- checkpoint serialization ---------------------------------------------

CHECKPOINT_MAGIC = b"APLDCKPT"


def _meta_to_dict(meta: ModelMeta) -> dict:
    return {
        "kind": meta.kind,
        "granularity_s": meta.granularity_s,
        "lookback_steps": meta.lookback_steps,
        "horizon_steps": meta.horizon_steps,
        "input_features": list(meta.input_features),
        "target_features": list(meta.target_features),
        "train_aps": list(meta.train_aps),
    }


def _meta_from_dict(d: dict) -> ModelMeta:
    return ModelMeta(
        kind=d["kind"],
        granularity_s=d["granularity_s"],
        lookback_steps=d["lookback_steps"],
        horizon_steps=d["horizon_steps"],
        input_features=tuple(d["input_features"]),
        target_features=tuple(d["target_features"]),
        train_aps=tuple(d["train_aps"]),
    )


def _normalizer_to_dict(norm: Normalizer) -> dict:
    return {
        "kind": norm.kind,
        "feature_names": list(norm.feature_names),
        "stats": {
            ap: [mn.tolist(), mx.tolist()] for ap, (mn, mx) in sorted(norm.stats.items())
        },
    }


def _normalizer_from_dict(d: dict) -> Normalizer:
    norm = Normalizer(feature_names=tuple(d["feature_names"]), kind=d["kind"])
    for ap, (mn, mx) in d["stats"].items():
        norm.stats[ap] = (np.array(mn, dtype=float), np.array(mx, dtype=float))
    return norm


def save_model(model: ForecastModel, path) -> None:
    """Self-describing checkpoint: JSON header, then for neural models a
    little-endian float64 weight payload in declared parameter order."""
    header: dict = {"format": 1, "meta": _meta_to_dict(model.meta)}
    payload = b""
    if isinstance(model, NeuralForecaster):
        params = model.network.params()
        header["model"] = "neural"
        header["layer_specs"] = model.network.specs()
        header["weights"] = [
            {"name": name, "shape": list(arr.shape)} for name, arr in params
        ]
        header["normalizer"] = _normalizer_to_dict(model.normalizer)
        payload = b"".join(
            np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in params
        )
    elif isinstance(model, ArimaForecaster):
        header["model"] = "arima"
        header["orders"] = [list(o) for o in model.orders]
        header["fit_window_steps"] = model.fit_window_steps
    elif isinstance(model, PersistenceModel):
        header["model"] = "persistence"
    else:
        raise ValueError(f"cannot serialize {type(model).__name__}")
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_model(path) -> ForecastModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        payload = fh.read()
    meta = _meta_from_dict(header["meta"])
    kind = header["model"]
    if kind == "persistence":
        return PersistenceModel(meta)
    if kind == "arima":
        return ArimaForecaster(
            meta,
            tuple(tuple(o) for o in header["orders"]),
            header["fit_window_steps"],
        )
    net = nn_core.Sequential.from_specs(header["layer_specs"])
    weights = []
    offset = 0
    for wspec in header["weights"]:
        shape = tuple(wspec["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(
            payload, dtype="<f8", count=count, offset=offset
        ).reshape(shape).astype(np.float64)
        weights.append(arr)
        offset += count * 8
    net.set_weights(weights)
    return NeuralForecaster(meta, net, _normalizer_from_dict(header["normalizer"]))
