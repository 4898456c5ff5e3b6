"""Conversion of association records into per-AP load time series.

A session's bytes are spread equally over the time steps it spans: with
step size w seconds, a session of duration T contributes to
n = ceil(T / w) consecutive steps starting at the step containing its
start time, each step receiving total_bytes / n. Summing the spread
contributions of all sessions on an AP, with explicit zeros where nothing
was active, yields that AP's load series in MB (1e6 bytes) per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trace_ingest import AssociationRecord, RecordSet

MB = 1e6

SERIES_CSV_HEADER = "ap_id,step_index,ts,load_up_mb,load_down_mb"


@dataclass(frozen=True)
class LoadSeries:
    """Per-AP load series: loads[i] = (up_mb, down_mb) for step i.

    t0 is the epoch second of step 0 and is always a multiple of the
    granularity; step i covers [t0 + i*w, t0 + (i+1)*w).
    """

    ap_id: str
    granularity_s: int
    t0: int
    loads: np.ndarray  # shape [num_steps, 2], float64, columns (up, down)

    def __post_init__(self):
        if self.granularity_s <= 0:
            raise ValueError("granularity must be positive")
        if self.t0 % self.granularity_s != 0:
            raise ValueError("t0 must be aligned to the granularity")
        loads = np.asarray(self.loads, dtype=np.float64)
        if loads.ndim != 2 or loads.shape[1] != 2 or loads.shape[0] < 1:
            raise ValueError("loads must have shape [num_steps >= 1, 2]")
        if not np.all(np.isfinite(loads)) or np.any(loads < 0):
            raise ValueError("loads must be finite and non-negative")
        object.__setattr__(self, "loads", loads)

    def __len__(self) -> int:
        return self.loads.shape[0]

    @property
    def t_end(self) -> int:
        return self.t0 + len(self) * self.granularity_s

    def step_times(self) -> np.ndarray:
        return self.t0 + self.granularity_s * np.arange(len(self), dtype=np.int64)


def session_step_load(rec: AssociationRecord, w: int) -> list[tuple[int, float, float]]:
    """Spread one session's bytes equally over the steps it spans.

    Returns (step_index, up_mb, down_mb) tuples for n = ceil(T/w)
    consecutive steps beginning at floor(start_ts / w). The per-step
    amounts are total/n in each direction, so the sum over steps
    reconstructs the session volume.
    """
    if w <= 0:
        raise ValueError("step size must be positive")
    n = math.ceil(rec.duration_s / w)
    first = rec.start_ts // w
    up = rec.bytes_up / MB / n
    down = rec.bytes_down / MB / n
    return [(first + i, up, down) for i in range(n)]


def derive_load_series(
    rs: RecordSet, w: int, ap_filter=None
) -> dict[str, LoadSeries]:
    """Build zero-filled per-AP LoadSeries at granularity w from records.

    Each AP's series spans from the step of its earliest session start to
    the last step any of its sessions touches. Steps with no active
    session are explicit zeros so the output is a regular grid.
    """
    ap_ids = rs.ap_ids() if ap_filter is None else sorted(set(ap_filter))
    out: dict[str, LoadSeries] = {}
    for ap_id in ap_ids:
        recs = rs.records_for_ap(ap_id)
        if not recs:
            continue
        first_step = min(r.start_ts // w for r in recs)
        last_step = max(
            r.start_ts // w + math.ceil(r.duration_s / w) - 1 for r in recs
        )
        loads = np.zeros((last_step - first_step + 1, 2), dtype=np.float64)
        for rec in recs:
            for step, up, down in session_step_load(rec, w):
                loads[step - first_step, 0] += up
                loads[step - first_step, 1] += down
        out[ap_id] = LoadSeries(ap_id, w, first_step * w, loads)
    if not out:
        raise ValueError("no records for requested APs")
    return out


def aggregate_window(series: LoadSeries, t_start: int, t_end: int) -> tuple[float, float]:
    """Sum step loads over the step-aligned window [t_start, t_end)."""
    w = series.granularity_s
    if t_start % w or t_end % w:
        raise ValueError("window bounds must be step-aligned")
    if t_start < series.t0 or t_end > series.t_end or t_end <= t_start:
        raise ValueError("window out of range")
    i = (t_start - series.t0) // w
    j = (t_end - series.t0) // w
    up, down = series.loads[i:j].sum(axis=0)
    return float(up), float(down)


def write_series_csv(series_map: dict[str, LoadSeries], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SERIES_CSV_HEADER + "\n")
        for ap_id in sorted(series_map):
            s = series_map[ap_id]
            for i, ts in enumerate(s.step_times()):
                up, down = s.loads[i]
                # repr of the Python float round-trips bit-exactly
                fh.write(f"{ap_id},{i},{ts},{float(up)!r},{float(down)!r}\n")


def read_series_csv(path) -> dict[str, LoadSeries]:
    """Inverse of write_series_csv; infers granularity from step spacing."""
    rows: dict[str, list[tuple[int, int, float, float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != SERIES_CSV_HEADER:
            raise ValueError(f"bad series header: {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            ap_id, idx, ts, up, down = line.split(",")
            rows.setdefault(ap_id, []).append(
                (int(idx), int(ts), float(up), float(down))
            )
    file_w = None
    for entries in rows.values():
        entries.sort()
        if len(entries) >= 2:
            file_w = entries[1][1] - entries[0][1]
            break
    out: dict[str, LoadSeries] = {}
    for ap_id, entries in rows.items():
        indices = [e[0] for e in entries]
        if indices != list(range(len(entries))):
            raise ValueError(f"non-contiguous step indices for {ap_id}")
        if len(entries) >= 2:
            w = entries[1][1] - entries[0][1]
        elif file_w is not None:
            w = file_w
        else:
            raise ValueError(
                "cannot infer granularity: no AP has two or more steps"
            )
        loads = np.array([[e[2], e[3]] for e in entries], dtype=np.float64)
        out[ap_id] = LoadSeries(ap_id, w, entries[0][1], loads)
    return out
