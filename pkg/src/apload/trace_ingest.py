"""Parsing, validation, and synthetic generation of Wi-Fi association records.

An association record is one client session on one access point: who
connected, where, when, and how many bytes moved in each direction.
Real traces arrive as CSV; the synthetic generator produces record sets
with the same schema for experiments that need ground truth.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

CSV_HEADER = "user_mac,ap_id,start_ts,end_ts,bytes_up,bytes_down"

SECONDS_PER_DAY = 86400


class ParseError(ValueError):
    """Raised in strict mode for the first bad row; carries the line number."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


@dataclass(frozen=True)
class AssociationRecord:
    """One client session: identifiers, time span, and byte counts."""

    user_mac: str
    ap_id: str
    start_ts: int
    end_ts: int
    bytes_up: int
    bytes_down: int

    def __post_init__(self):
        if self.end_ts <= self.start_ts:
            raise ValueError(
                f"zero or negative duration: start={self.start_ts} end={self.end_ts}"
            )
        if self.bytes_up < 0 or self.bytes_down < 0:
            raise ValueError("negative byte count")

    @property
    def duration_s(self) -> int:
        return self.end_ts - self.start_ts

    @property
    def bytes_total(self) -> int:
        return self.bytes_up + self.bytes_down


@dataclass(frozen=True)
class RecordSet:
    """Immutable ordered collection of records with a per-AP index."""

    records: tuple[AssociationRecord, ...]
    ap_index: dict[str, tuple[int, ...]] = field(default_factory=dict)

    @staticmethod
    def from_records(records) -> "RecordSet":
        records = tuple(records)
        index: dict[str, list[int]] = {}
        for i, rec in enumerate(records):
            index.setdefault(rec.ap_id, []).append(i)
        return RecordSet(records, {k: tuple(v) for k, v in index.items()})

    def __len__(self) -> int:
        return len(self.records)

    def records_for_ap(self, ap_id: str):
        return [self.records[i] for i in self.ap_index.get(ap_id, ())]

    def ap_ids(self) -> list[str]:
        return sorted(self.ap_index)


@dataclass(frozen=True)
class ParseResult:
    """Accepted records plus the rows that failed validation.

    Bad rows are collected rather than fatal because production traces are
    dirty; strict parsing turns the first one into a ParseError instead.
    """

    record_set: RecordSet
    rejects: tuple[tuple[int, str], ...] = ()

    @property
    def total_rows(self) -> int:
        return len(self.record_set) + len(self.rejects)


@dataclass(frozen=True)
class ValidationReport:
    total_rows: int
    accepted: int
    rejected_by_reason: dict[str, int]
    time_span: tuple[int, int] | None
    ap_count: int

    def summary(self) -> str:
        lines = [
            f"rows: {self.total_rows} total, {self.accepted} accepted",
            f"aps: {self.ap_count}",
        ]
        if self.time_span is not None:
            lines.append(f"time span: [{self.time_span[0]}, {self.time_span[1]}] s")
        for reason, count in sorted(self.rejected_by_reason.items()):
            lines.append(f"rejected ({reason}): {count}")
        return "\n".join(lines)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic association-record generator.

    Session arrivals follow an inhomogeneous Poisson process whose rate is
    modulated by a diurnal sinusoid (trough at midnight, peak at noon).
    Durations and byte volumes are log-normal; the duration default keeps
    the median session under five minutes.
    """

    num_aps: int
    days: float
    seed: int = 0
    sessions_per_ap_hour: float = 6.0
    diurnal_amplitude: float = 0.6
    session_bytes_lognormal: tuple[float, float] = (16.8, 1.5)
    session_duration_lognormal: tuple[float, float] = (5.2, 1.0)

    def __post_init__(self):
        if self.num_aps <= 0 or self.days <= 0:
            raise ValueError("num_aps and days must be positive")
        if self.sessions_per_ap_hour < 0:
            raise ValueError("sessions_per_ap_hour must be >= 0")
        if not 0.0 <= self.diurnal_amplitude <= 1.0:
            raise ValueError("diurnal_amplitude must lie in [0, 1]")
        if self.session_bytes_lognormal[1] < 0 or self.session_duration_lognormal[1] < 0:
            raise ValueError("log-normal sigma must be >= 0")


def _parse_row(line_no: int, row: str) -> AssociationRecord:
    parts = row.split(",")
    if len(parts) != 6:
        raise ParseError(line_no, f"expected 6 fields, got {len(parts)}")
    user_mac, ap_id, *rest = (p.strip() for p in parts)
    if not user_mac or not ap_id:
        raise ParseError(line_no, "empty identifier field")
    try:
        start_ts, end_ts, bytes_up, bytes_down = (int(v) for v in rest)
    except ValueError:
        raise ParseError(line_no, f"non-integer numeric field in: {row!r}") from None
    if end_ts <= start_ts:
        raise ParseError(line_no, "zero duration" if end_ts == start_ts else "negative duration")
    if bytes_up < 0 or bytes_down < 0:
        raise ParseError(line_no, "negative byte count")
    return AssociationRecord(user_mac, ap_id, start_ts, end_ts, bytes_up, bytes_down)


def parse_records(source, strict: bool = False) -> ParseResult:
    """Parse CSV association records from a path, text, or binary stream.

    Every well-formed row becomes one record, in file order. Rows that fail
    structural or semantic validation are collected with their line number
    and reason; with strict=True the first such row raises ParseError.
    """
    if isinstance(source, (str, bytes)):
        text = source.decode("utf-8") if isinstance(source, bytes) else source
        stream = io.StringIO(text)
    elif isinstance(source, io.TextIOBase):
        stream = source
    else:
        stream = io.TextIOWrapper(source, encoding="utf-8")

    header = stream.readline().strip()
    if header != CSV_HEADER:
        raise ParseError(1, f"bad header: expected {CSV_HEADER!r}, got {header!r}")

    records: list[AssociationRecord] = []
    rejects: list[tuple[int, str]] = []
    for line_no, line in enumerate(stream, start=2):
        row = line.strip()
        if not row:
            continue
        try:
            records.append(_parse_row(line_no, row))
        except ParseError as err:
            if strict:
                raise
            rejects.append((err.line_no, err.reason))
    return ParseResult(RecordSet.from_records(records), tuple(rejects))


def parse_records_file(path, strict: bool = False) -> ParseResult:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_records(fh, strict=strict)


def serialize_records(rs: RecordSet) -> str:
    """Render a RecordSet back to its CSV form (round-trips with parse)."""
    lines = [CSV_HEADER]
    for r in rs.records:
        lines.append(
            f"{r.user_mac},{r.ap_id},{r.start_ts},{r.end_ts},{r.bytes_up},{r.bytes_down}"
        )
    return "\n".join(lines) + "\n"


def validate_records(parsed) -> ValidationReport:
    """Summarize a ParseResult (or bare RecordSet) without mutating it."""
    if isinstance(parsed, RecordSet):
        parsed = ParseResult(parsed, ())
    rs = parsed.record_set
    by_reason: dict[str, int] = {}
    for _, reason in parsed.rejects:
        by_reason[reason] = by_reason.get(reason, 0) + 1
    span = None
    if rs.records:
        span = (min(r.start_ts for r in rs.records), max(r.end_ts for r in rs.records))
    return ValidationReport(
        total_rows=parsed.total_rows,
        accepted=len(rs),
        rejected_by_reason=by_reason,
        time_span=span,
        ap_count=len(rs.ap_index),
    )


def _diurnal_factor(hour_center_s: float, amplitude: float) -> float:
    phase = 2.0 * np.pi * (hour_center_s % SECONDS_PER_DAY) / SECONDS_PER_DAY
    return 1.0 + amplitude * np.sin(phase - np.pi / 2.0)


def generate_synthetic(cfg: SynthConfig) -> RecordSet:
    """Generate a deterministic synthetic RecordSet under cfg.

    The arrival process is piecewise-constant-rate Poisson per hour, with
    the hourly rate following the diurnal sinusoid. Arrival times within an
    hour are uniform. One RNG stream drawn in a fixed AP-then-hour order
    makes the output a pure function of the config.
    """
    rng = np.random.default_rng(cfg.seed)
    mu_b, sigma_b = cfg.session_bytes_lognormal
    mu_d, sigma_d = cfg.session_duration_lognormal
    horizon_s = int(round(cfg.days * SECONDS_PER_DAY))
    hours = int(round(cfg.days * 24))

    records: list[AssociationRecord] = []
    session_no = 0
    for ap in range(cfg.num_aps):
        ap_id = f"ap{ap:04d}"
        for h in range(hours):
            hour_start = h * 3600
            lam = cfg.sessions_per_ap_hour * _diurnal_factor(
                hour_start + 1800.0, cfg.diurnal_amplitude
            )
            count = int(rng.poisson(lam)) if lam > 0 else 0
            if count == 0:
                continue
            starts = np.sort(rng.uniform(hour_start, hour_start + 3600.0, size=count))
            durations = rng.lognormal(mu_d, sigma_d, size=count)
            ups = rng.lognormal(mu_b, sigma_b, size=count)
            downs = rng.lognormal(mu_b + 1.0, sigma_b, size=count)
            for s, d, bu, bd in zip(starts, durations, ups, downs):
                start_ts = int(s)
                end_ts = min(start_ts + max(1, int(round(d))), horizon_s)
                if end_ts <= start_ts:
                    continue
                mac = "02:00:{:02x}:{:02x}:{:02x}:{:02x}".format(
                    (session_no >> 24) & 0xFF,
                    (session_no >> 16) & 0xFF,
                    (session_no >> 8) & 0xFF,
                    session_no & 0xFF,
                )
                session_no += 1
                records.append(
                    AssociationRecord(mac, ap_id, start_ts, end_ts, int(bu), int(bd))
                )
    records.sort(key=lambda r: (r.start_ts, r.ap_id, r.user_mac))
    return RecordSet.from_records(records)
