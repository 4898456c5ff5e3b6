"""Supervised windowing, chronological splits, and normalization.

A forecaster maps the last L steps of a load series (the lookback) to the
next S steps (the horizon). This module slices per-AP series into such
(X, Y) samples, builds leak-free chronological train/val/test splits,
selects train/test AP populations for the on-/off-premises settings, and
scales features per AP to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .load_derivation import LoadSeries

FEATURES = ("up", "down")


@dataclass(frozen=True)
class WindowConfig:
    lookback_steps: int
    horizon_steps: int
    stride: int = 1
    input_features: tuple[str, ...] = FEATURES
    target_features: tuple[str, ...] = FEATURES

    def __post_init__(self):
        if self.lookback_steps < 1 or self.horizon_steps < 1 or self.stride < 1:
            raise ValueError("lookback, horizon, and stride must be >= 1")
        if not self.target_features:
            raise ValueError("target feature set must be non-empty")
        unknown = set(self.input_features) - set(FEATURES)
        if unknown:
            raise ValueError(f"unknown features: {sorted(unknown)}")
        if not set(self.target_features) <= set(self.input_features):
            raise ValueError("target features must be a subset of input features")


@dataclass(frozen=True)
class WindowedDataset:
    """Sample tensors plus per-sample provenance.

    X has shape [n, L, |M|], Y has shape [n, S, |N|]. t_anchor[k] is the
    epoch second of the last lookback step of sample k; targets cover
    (t_anchor, t_anchor + S*w].
    """

    X: np.ndarray
    Y: np.ndarray
    ap_ids: np.ndarray
    t_anchor: np.ndarray
    granularity_s: int
    config: WindowConfig

    def __post_init__(self):
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y sample counts differ")
        if self.X.shape[0] != len(self.ap_ids) or self.X.shape[0] != len(self.t_anchor):
            raise ValueError("provenance arrays must match sample count")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("non-finite values in windowed data")

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx)
        return WindowedDataset(
            self.X[idx], self.Y[idx], self.ap_ids[idx], self.t_anchor[idx],
            self.granularity_s, self.config,
        )


def _feature_matrix(series: LoadSeries, names) -> np.ndarray:
    cols = {"up": series.loads[:, 0], "down": series.loads[:, 1]}
    return np.stack([cols[n] for n in names], axis=1)


def window_count(length: int, cfg: WindowConfig) -> int:
    if length < cfg.lookback_steps + cfg.horizon_steps:
        return 0
    return (length - cfg.lookback_steps - cfg.horizon_steps) // cfg.stride + 1


def make_windows(series: LoadSeries, cfg: WindowConfig) -> WindowedDataset:
    """Slice one AP's series into lookback/horizon samples.

    Sample k reads steps [k*stride, k*stride + L) as input and the next S
    steps (restricted to the target features) as output.
    """
    L, S = cfg.lookback_steps, cfg.horizon_steps
    n = window_count(len(series), cfg)
    if n == 0:
        raise ValueError(
            f"insufficient history: {len(series)} steps < L+S = {L + S}"
        )
    xm = _feature_matrix(series, cfg.input_features)
    ym = _feature_matrix(series, cfg.target_features)
    starts = np.arange(n) * cfg.stride
    X = np.stack([xm[s : s + L] for s in starts])
    Y = np.stack([ym[s + L : s + L + S] for s in starts])
    anchors = series.t0 + (starts + L - 1) * series.granularity_s
    ap_ids = np.full(n, series.ap_id, dtype=object)
    return WindowedDataset(X, Y, ap_ids, anchors.astype(np.int64), series.granularity_s, cfg)


def concat_datasets(datasets) -> WindowedDataset:
    datasets = list(datasets)
    if not datasets:
        raise ValueError("nothing to concatenate")
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.config != first.config or ds.granularity_s != first.granularity_s:
            raise ValueError("incompatible datasets")
    return WindowedDataset(
        np.concatenate([d.X for d in datasets]),
        np.concatenate([d.Y for d in datasets]),
        np.concatenate([d.ap_ids for d in datasets]),
        np.concatenate([d.t_anchor for d in datasets]),
        first.granularity_s,
        first.config,
    )


def windows_for_aps(series_map: dict[str, LoadSeries], cfg: WindowConfig, ap_ids=None):
    ids = sorted(series_map) if ap_ids is None else sorted(ap_ids)
    return concat_datasets(make_windows(series_map[a], cfg) for a in ids)


def split_holdout(
    ds: WindowedDataset, train_frac: float = 0.8, val_frac_of_train: float = 0.125
):
    """Per-AP chronological holdout split with leakage guard.

    For each AP the last (1 - train_frac) of samples become the test set.
    Samples at the tail of the train portion whose horizon would overlap
    any test lookback are dropped, enforcing
    max t_anchor(train) + S*w <= min t_anchor(test) - (L-1)*w.
    Validation is the chronological tail of what remains of the train
    portion.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie strictly between 0 and 1")
    L, S = ds.config.lookback_steps, ds.config.horizon_steps
    w = ds.granularity_s
    train_idx, val_idx, test_idx = [], [], []
    for ap in np.unique(ds.ap_ids):
        idx = np.flatnonzero(ds.ap_ids == ap)
        idx = idx[np.argsort(ds.t_anchor[idx], kind="stable")]
        n = len(idx)
        n_train_portion = int(np.floor(train_frac * n))
        test = idx[n_train_portion:]
        portion = idx[:n_train_portion]
        if len(test):
            cutoff = ds.t_anchor[test].min() - (L - 1) * w - S * w
            portion = portion[ds.t_anchor[portion] <= cutoff]
        n_val = int(np.ceil(val_frac_of_train * len(portion))) if val_frac_of_train > 0 else 0
        if n_val:
            val_idx.append(portion[len(portion) - n_val :])
        train_idx.append(portion[: len(portion) - n_val])
        test_idx.append(test)

    def gather(chunks):
        chunks = [c for c in chunks if len(c)]
        if not chunks:
            raise ValueError("empty split: not enough samples")
        return ds.take(np.concatenate(chunks))

    return gather(train_idx), gather(val_idx), gather(test_idx)


def build_ap_split(
    all_aps, k_test: int, mode: str, k_train_offprem: int = 64, seed: int = 0
):
    """Choose train/test AP populations.

    on_prem: models will train on the very APs they are tested on.
    off_prem: training APs are drawn disjointly from the test APs,
    k_train_offprem of them. Selection is a uniform shuffle under seed.
    """
    aps = sorted(all_aps)
    if mode not in ("on_prem", "off_prem"):
        raise ValueError(f"unknown mode: {mode}")
    rng = np.random.default_rng(seed)
    perm = [aps[i] for i in rng.permutation(len(aps))]
    if mode == "on_prem":
        if len(aps) < k_test:
            raise ValueError(f"need at least {k_test} APs, have {len(aps)}")
        test = sorted(perm[:k_test])
        return list(test), list(test)
    needed = k_test + k_train_offprem
    if len(aps) < needed:
        raise ValueError(f"need at least {needed} APs for off_prem, have {len(aps)}")
    test = sorted(perm[:k_test])
    train = sorted(perm[k_test : k_test + k_train_offprem])
    return train, test


@dataclass
class Normalizer:
    """Per-AP, per-feature min-max scaling to [0, 1].

    Fitted on training data only. Constant features (max == min) map to
    zero; inverting is then the constant itself, so apply-then-invert is
    the identity on everything the model can express.
    """

    feature_names: tuple[str, ...]
    stats: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    kind: str = "minmax_per_ap"

    def _bounds(self, ap_ids, names):
        cols = [self.feature_names.index(n) for n in names]
        lo = np.empty((len(ap_ids), len(cols)))
        hi = np.empty((len(ap_ids), len(cols)))
        for i, ap in enumerate(ap_ids):
            mn, mx = self.stats[ap]
            lo[i], hi[i] = mn[cols], mx[cols]
        return lo[:, None, :], hi[:, None, :]

    def apply(self, arr: np.ndarray, ap_ids, names=None) -> np.ndarray:
        names = self.feature_names if names is None else names
        lo, hi = self._bounds(ap_ids, names)
        span = hi - lo
        out = np.where(span > 0, (arr - lo) / np.where(span > 0, span, 1.0), 0.0)
        return out

    def invert(self, arr: np.ndarray, ap_ids, names=None) -> np.ndarray:
        names = self.feature_names if names is None else names
        lo, hi = self._bounds(ap_ids, names)
        span = hi - lo
        return np.where(span > 0, arr * span + lo, lo)


def fit_normalizer(train: WindowedDataset) -> Normalizer:
    """Collect per-AP min/max over the training samples' inputs and targets."""
    cfg = train.config
    norm = Normalizer(feature_names=cfg.input_features)
    tcols = [cfg.input_features.index(n) for n in cfg.target_features]
    for ap in np.unique(train.ap_ids):
        mask = train.ap_ids == ap
        x = train.X[mask].reshape(-1, len(cfg.input_features))
        mn = x.min(axis=0)
        mx = x.max(axis=0)
        y = train.Y[mask].reshape(-1, len(cfg.target_features))
        for j, c in enumerate(tcols):
            mn[c] = min(mn[c], y[:, j].min())
            mx[c] = max(mx[c], y[:, j].max())
        norm.stats[str(ap)] = (mn, mx)
    return norm


def normalize_dataset(ds: WindowedDataset, norm: Normalizer) -> WindowedDataset:
    X = norm.apply(ds.X, ds.ap_ids, ds.config.input_features)
    Y = norm.apply(ds.Y, ds.ap_ids, ds.config.target_features)
    return WindowedDataset(X, Y, ds.ap_ids, ds.t_anchor, ds.granularity_s, ds.config)
