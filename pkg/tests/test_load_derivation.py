import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apload.load_derivation import (
    MB,
    LoadSeries,
    aggregate_window,
    derive_load_series,
    read_series_csv,
    session_step_load,
    write_series_csv,
)
from apload.trace_ingest import AssociationRecord, RecordSet


def oracle_steps(start_ts: int, duration_s: int, w: int):
    """Independent placement oracle: walk the session in w-sized chunks.

    Consumes the duration chunk by chunk starting from the step that
    contains start_ts; each chunk lands in the next consecutive step.
    """
    steps = []
    step = start_ts // w
    remaining = duration_s
    while remaining > 0:
        steps.append(step)
        step += 1
        remaining -= w
    return steps


session_st = st.tuples(
    st.integers(min_value=0, max_value=10**6),      # start_ts
    st.integers(min_value=1, max_value=10**5),      # duration
    st.integers(min_value=0, max_value=10**11),     # bytes_up
    st.integers(min_value=0, max_value=10**11),     # bytes_down
)


@given(session_st, st.sampled_from([1, 7, 60, 120, 600]))
def test_step_placement_matches_chunk_walk_oracle(sess, w):
    start, dur, bu, bd = sess
    rec = AssociationRecord("m", "ap0", start, start + dur, bu, bd)
    contrib = session_step_load(rec, w)
    assert [s for s, _, _ in contrib] == oracle_steps(start, dur, w)


@given(session_st, st.sampled_from([1, 7, 60, 120, 600]))
def test_per_session_conservation_and_equal_split(sess, w):
    start, dur, bu, bd = sess
    rec = AssociationRecord("m", "ap0", start, start + dur, bu, bd)
    contrib = session_step_load(rec, w)
    n = math.ceil(dur / w)
    assert len(contrib) == n
    ups = [u for _, u, _ in contrib]
    downs = [d for _, _, d in contrib]
    assert len(set(ups)) == 1 and len(set(downs)) == 1  # equal spreading
    assert math.isclose(sum(ups), bu / MB, rel_tol=1e-9, abs_tol=1e-15)
    assert math.isclose(sum(downs), bd / MB, rel_tol=1e-9, abs_tol=1e-15)


def test_footnote_case_ten_exact_steps():
    """A 100 MB, 10 minute session at one-minute steps is exactly ten
    10 MB steps."""
    rec = AssociationRecord("m", "ap0", 0, 600, 0, 100_000_000)
    contrib = session_step_load(rec, 60)
    assert len(contrib) == 10
    assert all(d == 10.0 for _, _, d in contrib)
    assert all(u == 0.0 for _, u, _ in contrib)


def test_session_step_load_rejects_bad_width():
    rec = AssociationRecord("m", "ap0", 0, 600, 1, 1)
    with pytest.raises(ValueError):
        session_step_load(rec, 0)


def test_partial_final_step_gets_full_share():
    # 130 s at w=60 spans ceil(130/60)=3 steps of bytes/3 each
    rec = AssociationRecord("m", "ap0", 0, 130, 0, 3 * MB)
    contrib = session_step_load(rec, 60)
    assert [s for s, _, _ in contrib] == [0, 1, 2]
    assert all(d == pytest.approx(1.0) for _, _, d in contrib)


def test_start_offset_within_step():
    # starting mid-step still charges the containing step first
    rec = AssociationRecord("m", "ap0", 119, 121, 0, 2 * MB)
    contrib = session_step_load(rec, 60)
    assert [s for s, _, _ in contrib] == [1]


class TestDeriveSeries:
    def build(self, recs, w=60):
        return derive_load_series(RecordSet.from_records(recs), w)

    def test_overlapping_sessions_accumulate(self):
        recs = [
            AssociationRecord("a", "ap0", 0, 120, 0, 2 * MB),
            AssociationRecord("b", "ap0", 60, 120, 0, 3 * MB),
        ]
        series = self.build(recs)["ap0"]
        np.testing.assert_allclose(series.loads[:, 1], [1.0, 4.0])

    def test_zero_fill_between_sessions(self):
        recs = [
            AssociationRecord("a", "ap0", 0, 60, MB, 0),
            AssociationRecord("b", "ap0", 600, 660, MB, 0),
        ]
        series = self.build(recs)["ap0"]
        assert len(series) == 11
        assert series.t0 == 0
        np.testing.assert_array_equal(series.loads[1:10], 0.0)
        assert series.loads[0, 0] == series.loads[10, 0] == 1.0

    def test_series_origin_follows_first_session(self):
        recs = [AssociationRecord("a", "ap0", 3725, 3790, MB, 0)]
        series = self.build(recs, w=60)["ap0"]
        assert series.t0 == (3725 // 60) * 60

    def test_ap_filter(self):
        recs = [
            AssociationRecord("a", "ap0", 0, 60, MB, 0),
            AssociationRecord("b", "ap1", 0, 60, MB, 0),
        ]
        out = derive_load_series(RecordSet.from_records(recs), 60, ap_filter=["ap1"])
        assert sorted(out) == ["ap1"]

    def test_no_records_raises(self):
        with pytest.raises(ValueError):
            derive_load_series(RecordSet.from_records([]), 60)

    @settings(deadline=None, max_examples=30)
    @given(
        st.lists(session_st, min_size=1, max_size=40),
        st.sampled_from([60, 120, 600]),
    )
    def test_total_conservation_across_sessions(self, sessions, w):
        recs = [
            AssociationRecord(f"m{i}", "ap0", s, s + d, bu, bd)
            for i, (s, d, bu, bd) in enumerate(sessions)
        ]
        series = self.build(recs, w)["ap0"]
        total_up = sum(r.bytes_up for r in recs) / MB
        total_down = sum(r.bytes_down for r in recs) / MB
        got_up, got_down = series.loads.sum(axis=0)
        assert got_up == pytest.approx(total_up, rel=1e-9, abs=1e-12)
        assert got_down == pytest.approx(total_down, rel=1e-9, abs=1e-12)


def test_aggregate_window_sums_steps():
    loads = np.arange(10.0).reshape(5, 2)
    series = LoadSeries("ap0", 60, 120, loads)
    up, down = aggregate_window(series, 180, 360)
    assert up == loads[1:4, 0].sum()
    assert down == loads[1:4, 1].sum()


def test_aggregate_window_validates_bounds():
    series = LoadSeries("ap0", 60, 0, np.ones((5, 2)))
    with pytest.raises(ValueError):
        aggregate_window(series, 30, 120)  # misaligned
    with pytest.raises(ValueError):
        aggregate_window(series, 0, 360)   # past the end
    with pytest.raises(ValueError):
        aggregate_window(series, 120, 120)  # empty


class TestSeriesCsv:
    def roundtrip(self, series_map, tmp_path):
        path = tmp_path / "series.csv"
        write_series_csv(series_map, path)
        return read_series_csv(path)

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        series_map = {
            f"ap{k}": LoadSeries(
                f"ap{k}", 120, 1200 * k, rng.uniform(0, 50, size=(30, 2))
            )
            for k in range(3)
        }
        back = self.roundtrip(series_map, tmp_path)
        assert sorted(back) == sorted(series_map)
        for ap, orig in series_map.items():
            assert back[ap].granularity_s == orig.granularity_s
            assert back[ap].t0 == orig.t0
            np.testing.assert_array_equal(back[ap].loads, orig.loads)

    def test_single_step_ap_borrows_file_granularity(self, tmp_path):
        m = {
            "ap0": LoadSeries("ap0", 60, 0, np.array([[1.5, 2.5]])),
            "ap1": LoadSeries("ap1", 60, 0, np.ones((3, 2))),
        }
        back = self.roundtrip(m, tmp_path)
        assert back["ap0"].granularity_s == 60
        np.testing.assert_array_equal(back["ap0"].loads, m["ap0"].loads)

    def test_all_single_step_file_is_ambiguous(self, tmp_path):
        m = {"ap0": LoadSeries("ap0", 60, 0, np.array([[1.5, 2.5]]))}
        path = tmp_path / "series.csv"
        write_series_csv(m, path)
        with pytest.raises(ValueError):
            read_series_csv(path)

    def test_read_rejects_gap_in_step_indices(self, tmp_path):
        m = {"ap0": LoadSeries("ap0", 60, 0, np.ones((4, 2)))}
        path = tmp_path / "series.csv"
        write_series_csv(m, path)
        lines = path.read_text().splitlines()
        del lines[2]  # remove one interior step
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError):
            read_series_csv(path)
