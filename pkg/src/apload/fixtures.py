"""Committed synthetic fixtures: seeded, parameter-frozen load series.

Fixtures are generated, not stored, so the repository stays small while
every run sees bit-identical data (fixed seeds, fixed parameters, one
numpy code path). Two families:

- seasonal_fixture: 16 APs, two days, strong diurnal cycle plus a fast
  per-AP secondary oscillation (15 to 30 steps at 120 s). The fast
  component is fully visible inside a one-hour lookback, so pattern
  models can track it while last-value persistence and mean-reverting
  linear extrapolation cannot hold it over long horizons.

- heterogeneous_fixture: 80 APs, 1.5 days, with per-AP period, phase,
  harmonic mix, amplitude, and noise all drawn independently. AP-to-AP
  shape diversity is the point: a model trained on other APs faces a
  real transfer gap.

Both emit dicts keyed by AP id, matching the loaders' output shape.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .load_derivation import LoadSeries

SEASONAL_SEED = 1301
HETEROGENEOUS_SEED = 2207

DAY_S = 86400


def _series(ap_id, granularity_s, up, down) -> LoadSeries:
    loads = np.stack([up, down], axis=1)
    return LoadSeries(ap_id, granularity_s, 0, loads)


def seasonal_fixture(granularity_s: int = 120, num_aps: int = 16,
                     days: float = 2.0, seed: int = SEASONAL_SEED):
    """16-AP two-day fixture with diurnal plus fast seasonal structure."""
    rng = np.random.default_rng(seed)
    n = int(days * DAY_S) // granularity_s
    t = np.arange(n) * granularity_s
    periods = (1800, 2400, 3600)
    out: dict[str, LoadSeries] = {}
    for a in range(num_aps):
        amp = float(rng.uniform(2.0, 12.0))
        p = periods[a % len(periods)]
        phase = float(rng.uniform(0, 2 * np.pi))
        ratio = float(rng.uniform(1.5, 4.0))
        diurnal = 1.0 + 0.45 * np.sin(2 * np.pi * t / DAY_S - np.pi / 2)
        seasonal = 1.0 + 0.5 * np.sin(2 * np.pi * t / p + phase)
        signal = amp * diurnal * seasonal
        up = signal * (1.0 + 0.06 * rng.standard_normal(n))
        down = ratio * signal * (1.0 + 0.06 * rng.standard_normal(n))
        floor = 0.08 * amp
        out[f"ap{a:02d}"] = _series(
            f"ap{a:02d}", granularity_s,
            np.maximum(up, floor), np.maximum(down, ratio * floor),
        )
    return out


def heterogeneous_fixture(granularity_s: int = 120, num_aps: int = 80,
                          days: float = 1.5, seed: int = HETEROGENEOUS_SEED):
    """80-AP fixture where every AP has its own temporal shape."""
    rng = np.random.default_rng(seed)
    n = int(days * DAY_S) // granularity_s
    t = np.arange(n) * granularity_s
    periods = (5400, 7200, 9000, 10800, 14400)
    out: dict[str, LoadSeries] = {}
    for a in range(num_aps):
        amp = float(np.exp(rng.uniform(np.log(1.0), np.log(12.0))))
        p = int(rng.choice(periods))
        ph1 = float(rng.uniform(0, 2 * np.pi))
        ph2 = float(rng.uniform(0, 2 * np.pi))
        a1 = float(rng.uniform(0.3, 0.55))
        a2 = float(rng.uniform(0.0, 0.3))
        diurnal_shift = float(rng.uniform(-7200, 7200))
        ratio = float(rng.uniform(1.2, 4.5))
        noise = float(rng.uniform(0.04, 0.1))
        diurnal = 1.0 + 0.4 * np.sin(
            2 * np.pi * (t - diurnal_shift) / DAY_S - np.pi / 2
        )
        seasonal = (
            1.0
            + a1 * np.sin(2 * np.pi * t / p + ph1)
            + a2 * np.sin(4 * np.pi * t / p + ph2)
        )
        signal = amp * diurnal * np.maximum(seasonal, 0.05)
        up = signal * (1.0 + noise * rng.standard_normal(n))
        down = ratio * signal * (1.0 + noise * rng.standard_normal(n))
        floor = 0.05 * amp
        out[f"ap{a:02d}"] = _series(
            f"ap{a:02d}", granularity_s,
            np.maximum(up, floor), np.maximum(down, ratio * floor),
        )
    return out


def fixture_digest(series_map) -> str:
    """SHA-256 over the sorted per-AP load arrays; pins fixture identity."""
    h = hashlib.sha256()
    for ap in sorted(series_map):
        s = series_map[ap]
        h.update(ap.encode("utf-8"))
        h.update(np.int64(s.granularity_s).tobytes())
        h.update(np.int64(s.t0).tobytes())
        h.update(np.ascontiguousarray(s.loads, dtype=np.float64).tobytes())
    return h.hexdigest()
