"""Tests for the committed synthetic fixtures.

The digests pin the exact bytes the experiment suites run against; if a
generator changes, these fail and force a deliberate re-pin.
"""

import numpy as np
import pytest

from apload.fixtures import (
    HETEROGENEOUS_SEED,
    SEASONAL_SEED,
    fixture_digest,
    heterogeneous_fixture,
    seasonal_fixture,
)
from apload.load_derivation import LoadSeries

SEASONAL_DIGEST = (
    "cd4fd59f7df097409e6c1ab0c24da9ff01f5470bf368d589a87848d661217634"
)


class TestSeasonalFixture:
    def test_shape_and_keys(self):
        fx = seasonal_fixture()
        assert sorted(fx) == [f"ap{a:02d}" for a in range(16)]
        for s in fx.values():
            assert s.granularity_s == 120
            assert s.t0 == 0
            assert s.loads.shape == (2 * 86400 // 120, 2)

    def test_deterministic(self):
        a = seasonal_fixture()
        b = seasonal_fixture()
        for ap in a:
            np.testing.assert_array_equal(a[ap].loads, b[ap].loads)

    def test_digest_pinned(self):
        assert fixture_digest(seasonal_fixture()) == SEASONAL_DIGEST

    def test_seed_changes_data(self):
        other = seasonal_fixture(seed=SEASONAL_SEED + 1)
        assert fixture_digest(other) != SEASONAL_DIGEST

    def test_loads_strictly_positive(self):
        for s in seasonal_fixture().values():
            assert np.all(s.loads > 0)

    def test_downlink_heavier_than_uplink(self):
        for s in seasonal_fixture().values():
            assert s.loads[:, 1].mean() > s.loads[:, 0].mean()

    def test_custom_size(self):
        fx = seasonal_fixture(num_aps=4, days=0.5)
        assert len(fx) == 4
        assert fx["ap00"].loads.shape[0] == 86400 // 2 // 120


class TestHeterogeneousFixture:
    def test_shape_and_keys(self):
        fx = heterogeneous_fixture()
        assert len(fx) == 80
        for s in fx.values():
            assert s.granularity_s == 120
            assert s.loads.shape == (int(1.5 * 86400) // 120, 2)

    def test_deterministic(self):
        a = heterogeneous_fixture()
        b = heterogeneous_fixture()
        assert fixture_digest(a) == fixture_digest(b)

    def test_seed_changes_data(self):
        a = heterogeneous_fixture()
        b = heterogeneous_fixture(seed=HETEROGENEOUS_SEED + 1)
        assert fixture_digest(a) != fixture_digest(b)

    def test_loads_strictly_positive(self):
        for s in heterogeneous_fixture().values():
            assert np.all(s.loads > 0)

    def test_shape_diversity_across_aps(self):
        """Normalized uplink traces should not all look alike."""
        fx = heterogeneous_fixture()
        traces = []
        for ap in sorted(fx)[:12]:
            u = fx[ap].loads[:, 0]
            traces.append((u - u.mean()) / u.std())
        traces = np.stack(traces)
        corr = np.corrcoef(traces)
        off_diag = corr[~np.eye(len(traces), dtype=bool)]
        assert np.mean(np.abs(off_diag)) < 0.8


class TestFixtureDigest:
    @staticmethod
    def _mini(ap_id="apA", bump=0.0):
        loads = np.arange(12, dtype=np.float64).reshape(6, 2) + 1.0
        loads[0, 0] += bump
        return LoadSeries(ap_id, 60, 0, loads)

    def test_hex_shape(self):
        d = fixture_digest({"apA": self._mini()})
        assert len(d) == 64
        int(d, 16)

    def test_sensitive_to_data(self):
        base = fixture_digest({"apA": self._mini()})
        assert fixture_digest({"apA": self._mini(bump=1e-9)}) != base

    def test_sensitive_to_ap_id(self):
        a = fixture_digest({"apA": self._mini("apA")})
        b = fixture_digest({"apB": self._mini("apB")})
        assert a != b

    def test_insertion_order_irrelevant(self):
        s1, s2 = self._mini("apA"), self._mini("apB", bump=3.0)
        assert fixture_digest({"apA": s1, "apB": s2}) == fixture_digest(
            {"apB": s2, "apA": s1}
        )
