import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apload.dataset_windows import (
    Normalizer,
    WindowConfig,
    WindowedDataset,
    build_ap_split,
    concat_datasets,
    fit_normalizer,
    make_windows,
    normalize_dataset,
    split_holdout,
    window_count,
    windows_for_aps,
)
from apload.load_derivation import LoadSeries


def series_of(n, ap="ap0", w=60, t0=0, seed=0):
    rng = np.random.default_rng(seed)
    return LoadSeries(ap, w, t0, rng.uniform(0.0, 20.0, size=(n, 2)))


def count_oracle(length, L, S, stride):
    """Enumerate anchor positions directly instead of using the closed form."""
    return sum(
        1 for a in range(0, length, stride) if a + L + S <= length
    )


@given(
    st.integers(min_value=0, max_value=400),
    st.integers(min_value=1, max_value=12),
    st.integers(min_value=1, max_value=12),
    st.integers(min_value=1, max_value=7),
)
def test_window_count_matches_enumeration(length, L, S, stride):
    cfg = WindowConfig(L, S, stride)
    assert window_count(length, cfg) == count_oracle(length, L, S, stride)


@given(
    st.integers(min_value=2, max_value=60),
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=1, max_value=4),
)
def test_make_windows_slices_match_source(n, L, S, stride):
    if n < L + S:
        n = L + S
    s = series_of(n, seed=n)
    cfg = WindowConfig(L, S, stride)
    ds = make_windows(s, cfg)
    assert len(ds) == window_count(n, cfg)
    for k in range(len(ds)):
        a = k * stride
        np.testing.assert_array_equal(ds.X[k], s.loads[a : a + L])
        np.testing.assert_array_equal(ds.Y[k], s.loads[a + L : a + L + S])
        assert ds.t_anchor[k] == s.t0 + (a + L - 1) * s.granularity_s


def test_make_windows_feature_selection():
    s = series_of(12)
    cfg = WindowConfig(4, 2, input_features=("up", "down"), target_features=("down",))
    ds = make_windows(s, cfg)
    assert ds.X.shape[2] == 2 and ds.Y.shape[2] == 1
    np.testing.assert_array_equal(ds.Y[0][:, 0], s.loads[4:6, 1])


def test_make_windows_insufficient_history():
    with pytest.raises(ValueError):
        make_windows(series_of(5), WindowConfig(4, 2))


def test_window_config_validation():
    with pytest.raises(ValueError):
        WindowConfig(0, 1)
    with pytest.raises(ValueError):
        WindowConfig(1, 1, stride=0)
    with pytest.raises(ValueError):
        WindowConfig(1, 1, input_features=("up", "sideways"))
    with pytest.raises(ValueError):
        WindowConfig(1, 1, input_features=("up",), target_features=("down",))


def test_windowed_dataset_validation():
    cfg = WindowConfig(2, 1)
    X = np.zeros((3, 2, 2))
    Y = np.zeros((2, 1, 2))
    with pytest.raises(ValueError):
        WindowedDataset(X, Y, np.array(["a"] * 3, dtype=object),
                        np.zeros(3, dtype=np.int64), 60, cfg)
    Ybad = np.full((3, 1, 2), np.nan)
    with pytest.raises(ValueError):
        WindowedDataset(X, Ybad, np.array(["a"] * 3, dtype=object),
                        np.zeros(3, dtype=np.int64), 60, cfg)


def test_concat_rejects_mismatched_config():
    a = make_windows(series_of(10), WindowConfig(2, 1))
    b = make_windows(series_of(10), WindowConfig(3, 1))
    with pytest.raises(ValueError):
        concat_datasets([a, b])


def test_windows_for_aps_sorted_by_ap():
    smap = {"b": series_of(10, "b", seed=1), "a": series_of(10, "a", seed=2)}
    ds = windows_for_aps(smap, WindowConfig(2, 1))
    order = list(dict.fromkeys(ds.ap_ids))
    assert order == ["a", "b"]


class TestSplitHoldout:
    def build(self, n=120, aps=("ap0", "ap1"), L=6, S=3, w=60):
        smap = {a: series_of(n, a, w=w, seed=hash(a) % 100) for a in aps}
        return windows_for_aps(smap, WindowConfig(L, S)), L, S, w

    def test_split_fractions_and_disjointness(self):
        ds, L, S, w = self.build()
        train, val, test = split_holdout(ds)
        keys = lambda d: {(a, int(t)) for a, t in zip(d.ap_ids, d.t_anchor)}
        kt, kv, ks = keys(train), keys(val), keys(test)
        assert not (kt & kv) and not (kt & ks) and not (kv & ks)
        per_ap = len(ds) // 2
        assert sum(np.count_nonzero(test.ap_ids == a) for a in ("ap0", "ap1")) == (
            len(test)
        )
        assert len(test) == 2 * (per_ap - int(np.floor(0.8 * per_ap)))

    def test_leakage_guard_gap(self):
        """No train or val target may overlap any test lookback: the last
        kept anchor sits at least (L-1+S) steps before the first test
        anchor."""
        ds, L, S, w = self.build()
        train, val, test = split_holdout(ds)
        for ap in ("ap0", "ap1"):
            kept = np.concatenate(
                [
                    train.t_anchor[train.ap_ids == ap],
                    val.t_anchor[val.ap_ids == ap],
                ]
            )
            first_test = test.t_anchor[test.ap_ids == ap].min()
            assert kept.max() + S * w <= first_test - (L - 1) * w

    def test_val_is_chronological_tail_of_train_portion(self):
        ds, L, S, w = self.build()
        train, val, test = split_holdout(ds)
        for ap in ("ap0", "ap1"):
            tr = train.t_anchor[train.ap_ids == ap]
            va = val.t_anchor[val.ap_ids == ap]
            assert tr.max() < va.min()

    def test_val_fraction_ceil(self):
        ds, L, S, w = self.build()
        train, val, test = split_holdout(ds)
        for ap in ("ap0", "ap1"):
            n_tr = np.count_nonzero(train.ap_ids == ap)
            n_va = np.count_nonzero(val.ap_ids == ap)
            kept = n_tr + n_va
            assert n_va == int(np.ceil(0.125 * kept))

    def test_bad_fraction_rejected(self):
        ds, *_ = self.build()
        with pytest.raises(ValueError):
            split_holdout(ds, train_frac=1.0)

    def test_too_small_dataset_raises(self):
        smap = {"ap0": series_of(10, "ap0")}
        ds = windows_for_aps(smap, WindowConfig(6, 3))
        with pytest.raises(ValueError):
            split_holdout(ds)

    @settings(deadline=None, max_examples=25)
    @given(st.integers(min_value=60, max_value=300))
    def test_split_partitions_kept_samples(self, n):
        ds, L, S, w = self.build(n=n)
        train, val, test = split_holdout(ds)
        assert len(train) + len(val) + len(test) <= len(ds)
        assert len(train) > 0 and len(val) > 0 and len(test) > 0


class TestApSplit:
    def test_on_prem_trains_on_test_aps(self):
        aps = [f"ap{i}" for i in range(10)]
        train, test = build_ap_split(aps, k_test=4, mode="on_prem", seed=3)
        assert train == test and len(test) == 4
        assert set(test) <= set(aps)

    def test_off_prem_disjoint_populations(self):
        aps = [f"ap{i:03d}" for i in range(80)]
        train, test = build_ap_split(
            aps, k_test=8, mode="off_prem", k_train_offprem=64, seed=1
        )
        assert len(train) == 64 and len(test) == 8
        assert not set(train) & set(test)

    def test_deterministic_and_seed_sensitive(self):
        aps = [f"ap{i}" for i in range(30)]
        a = build_ap_split(aps, 4, "on_prem", seed=5)
        b = build_ap_split(aps, 4, "on_prem", seed=5)
        c = build_ap_split(aps, 4, "on_prem", seed=6)
        assert a == b
        assert a != c

    def test_insufficient_aps(self):
        with pytest.raises(ValueError):
            build_ap_split(["a", "b"], 3, "on_prem")
        with pytest.raises(ValueError):
            build_ap_split([f"ap{i}" for i in range(20)], 4, "off_prem",
                           k_train_offprem=64)
        with pytest.raises(ValueError):
            build_ap_split(["a"], 1, "sideways")


class TestNormalizer:
    def fitted(self, n=80, aps=("ap0", "ap1")):
        smap = {a: series_of(n, a, seed=len(a) + ord(a[-1])) for a in aps}
        ds = windows_for_aps(smap, WindowConfig(4, 2))
        return ds, fit_normalizer(ds)

    def test_apply_range_and_invert_identity(self):
        ds, norm = self.fitted()
        Xn = norm.apply(ds.X, ds.ap_ids)
        assert Xn.min() >= 0.0 and Xn.max() <= 1.0
        back = norm.invert(Xn, ds.ap_ids)
        np.testing.assert_allclose(back, ds.X, rtol=1e-12, atol=1e-12)

    def test_stats_are_per_ap(self):
        ds, norm = self.fitted()
        assert sorted(norm.stats) == ["ap0", "ap1"]
        mn0, mx0 = norm.stats["ap0"]
        mn1, mx1 = norm.stats["ap1"]
        assert not np.allclose(mx0, mx1)

    def test_constant_feature_maps_to_zero_and_inverts_to_constant(self):
        s = LoadSeries("ap0", 60, 0, np.column_stack(
            [np.full(20, 7.0), np.arange(20.0)]
        ))
        ds = windows_for_aps({"ap0": s}, WindowConfig(4, 2))
        norm = fit_normalizer(ds)
        Xn = norm.apply(ds.X, ds.ap_ids)
        assert np.all(Xn[:, :, 0] == 0.0)
        back = norm.invert(Xn, ds.ap_ids)
        assert np.all(back[:, :, 0] == 7.0)

    def test_fit_covers_targets_beyond_lookback_range(self):
        """The horizon of the last training window can exceed every
        lookback value; the fitted max must include it."""
        vals = np.concatenate([np.linspace(1, 10, 20), [99.0]])
        s = LoadSeries("ap0", 60, 0, np.column_stack([vals, vals]))
        ds = windows_for_aps({"ap0": s}, WindowConfig(4, 1))
        norm = fit_normalizer(ds)
        _, mx = norm.stats["ap0"]
        assert mx[0] == 99.0

    def test_normalize_dataset_scales_targets_with_target_features(self):
        smap = {"ap0": series_of(40, "ap0", seed=9)}
        cfg = WindowConfig(4, 2, target_features=("down",))
        ds = windows_for_aps(smap, cfg)
        norm = fit_normalizer(ds)
        nds = normalize_dataset(ds, norm)
        assert nds.Y.shape == ds.Y.shape
        assert nds.Y.min() >= 0.0 and nds.Y.max() <= 1.0

    def test_unknown_ap_raises(self):
        ds, norm = self.fitted()
        with pytest.raises(KeyError):
            norm.apply(ds.X[:1], np.array(["ap9"], dtype=object))
