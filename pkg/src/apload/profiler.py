"""Wall-time, memory, and energy accounting for train and inference jobs.

Energy is modeled as wall time times a configured average device power
(kWh = W * s / 3.6e6). That keeps the arithmetic self-contained and
testable; absolute figures are estimates, not hardware measurements.
Monthly cost extrapolates per-call profiles to a deployment cadence
(periodic retraining plus one inference per AP per measurement period)
over a 30-day month.

Peak memory comes from resource.getrusage ru_maxrss, which on Linux is
the process high-water mark in KiB. It never decreases within a process,
so profiles taken after a large earlier job inherit its peak.
"""

from __future__ import annotations

import csv
import os
import resource
import time
from dataclasses import dataclass

HOURS_PER_KWH_DIVISOR = 3.6e6  # joules per kWh
DAYS_PER_MONTH = 30.0

DEPLOYMENT_CSV_HEADER = (
    "model,env,train_wall_s,infer_wall_s,train_mem_pct,infer_mem_pct,"
    "train_peak_rss_bytes,infer_peak_rss_bytes,"
    "train_kwh_month,infer_kwh_month"
)


class TaskFailure(RuntimeError):
    """Wraps a measured task's exception; .profile holds the partial profile."""

    def __init__(self, cause: BaseException, profile: "ResourceProfile"):
        super().__init__(f"measured task failed: {cause!r}")
        self.cause = cause
        self.profile = profile


@dataclass(frozen=True)
class ResourceProfile:
    wall_time_s: float
    peak_rss_bytes: int
    est_energy_kwh: float
    label: str = "train"

    def __post_init__(self):
        if self.wall_time_s < 0 or self.peak_rss_bytes < 0 or self.est_energy_kwh < 0:
            raise ValueError("resource profile fields must be non-negative")
        if self.label not in ("train", "inference"):
            raise ValueError(f"unknown profile label: {self.label}")


@dataclass(frozen=True)
class CadenceConfig:
    """How often models retrain and predict once deployed."""

    retrain_period_days: float = 14.0
    inference_period_s: float = 120.0
    k_eval_aps: int = 4
    avg_power_watts: float = 65.0

    def __post_init__(self):
        if (
            self.retrain_period_days <= 0
            or self.inference_period_s <= 0
            or self.k_eval_aps <= 0
            or self.avg_power_watts <= 0
        ):
            raise ValueError("cadence parameters must be positive")


def energy_kwh(watts: float, seconds: float) -> float:
    return watts * seconds / HOURS_PER_KWH_DIVISOR


def peak_rss_bytes() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def measure(task, *args, watts: float = 65.0, label: str = "train", **kwargs):
    """Run task(*args, **kwargs) and profile it.

    Returns (result, ResourceProfile). A failing task raises TaskFailure
    carrying the partial profile for the time spent before the error.
    """
    start = time.perf_counter()
    try:
        result = task(*args, **kwargs)
    except Exception as exc:
        elapsed = time.perf_counter() - start
        profile = ResourceProfile(
            elapsed, peak_rss_bytes(), energy_kwh(watts, elapsed), label
        )
        raise TaskFailure(exc, profile) from exc
    elapsed = time.perf_counter() - start
    return result, ResourceProfile(
        elapsed, peak_rss_bytes(), energy_kwh(watts, elapsed), label
    )


def monthly_multipliers(cadence: CadenceConfig) -> tuple[float, float]:
    """(trainings per month, inference calls per month across the AP fleet)."""
    trainings = DAYS_PER_MONTH / cadence.retrain_period_days
    calls = (DAYS_PER_MONTH * 86400.0 / cadence.inference_period_s) * cadence.k_eval_aps
    return trainings, calls


def monthly_energy(
    train_profile: ResourceProfile,
    infer_profile: ResourceProfile,
    cadence: CadenceConfig,
) -> tuple[float, float]:
    """Extrapolate per-event energy to (train, inference) kWh per 30-day month."""
    trainings, calls = monthly_multipliers(cadence)
    return (
        trainings * train_profile.est_energy_kwh,
        calls * infer_profile.est_energy_kwh,
    )


def system_memory_bytes() -> int:
    """Total physical memory, used as the denominator for memory percent."""
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError):  # pragma: no cover - exotic platforms
        return 8 * 1024**3


def memory_percent(profile: ResourceProfile, total_bytes: int | None = None) -> float:
    total = total_bytes if total_bytes else system_memory_bytes()
    return 100.0 * profile.peak_rss_bytes / total


@dataclass(frozen=True)
class DeploymentRow:
    """One model's line in the deployment-cost table."""

    model: str
    env: str
    train: ResourceProfile
    infer: ResourceProfile
    train_kwh_month: float
    infer_kwh_month: float
    mem_total_bytes: int

    def as_csv_row(self) -> list[str]:
        return [
            self.model,
            self.env,
            repr(self.train.wall_time_s),
            repr(self.infer.wall_time_s),
            repr(memory_percent(self.train, self.mem_total_bytes)),
            repr(memory_percent(self.infer, self.mem_total_bytes)),
            str(self.train.peak_rss_bytes),
            str(self.infer.peak_rss_bytes),
            repr(self.train_kwh_month),
            repr(self.infer_kwh_month),
        ]


def build_deployment_row(
    model: str,
    env: str,
    train_profile: ResourceProfile,
    infer_profile: ResourceProfile,
    cadence: CadenceConfig,
    mem_total_bytes: int | None = None,
) -> DeploymentRow:
    train_kwh, infer_kwh = monthly_energy(train_profile, infer_profile, cadence)
    return DeploymentRow(
        model=model,
        env=env,
        train=train_profile,
        infer=infer_profile,
        train_kwh_month=train_kwh,
        infer_kwh_month=infer_kwh,
        mem_total_bytes=mem_total_bytes or system_memory_bytes(),
    )


def write_deployment_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DEPLOYMENT_CSV_HEADER.split(","))
        for row in rows:
            writer.writerow(row.as_csv_row())
