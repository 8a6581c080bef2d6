"""Probe sweeps: try a ladder of power caps and measure cost at each rung.

A sweep sets each candidate cap in ascending order, runs the workload for a
short fixed window, nets the window's energy against the idle baseline and
emits one normalized point per cap. The pre-sweep cap is restored on every
exit path, including failures, and a failed actuation discards any partial
results.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .energy import IdleBaseline, net_energy
from .hal import CapActuator, PowerTrace, set_power_limit, start_sampler
from .simdev import SimBackend, WorkloadSpec

DEFAULT_PROBE_DURATION_S = 30.0
DEFAULT_WARMUP_S = 2.0


@dataclass(frozen=True, slots=True)
class ProbeSchedule:
    """Which caps to try and for how long.

    ``warmup_s`` seconds at the head of each probe are discarded so the cap
    transition settles before measurement starts.
    """

    limits: tuple[float, ...]
    probe_duration_s: float = DEFAULT_PROBE_DURATION_S
    warmup_s: float = DEFAULT_WARMUP_S

    def __post_init__(self) -> None:
        if not self.limits:
            raise ValueError("schedule needs at least one limit")
        prev = 0.0
        for limit in self.limits:
            if not (0.0 < limit <= 1.0):
                raise ValueError(f"limit {limit} outside (0, 1]")
            if limit <= prev:
                raise ValueError("limits must be strictly increasing")
            prev = limit
        if not (self.probe_duration_s > self.warmup_s >= 0.0):
            raise ValueError("need probe_duration_s > warmup_s >= 0")


def default_schedule() -> ProbeSchedule:
    """Eight caps from 30% to 100% in 10% steps, 30 s each, 2 s warmup."""
    return ProbeSchedule(
        limits=tuple(round(0.3 + 0.1 * i, 10) for i in range(8)),
        probe_duration_s=DEFAULT_PROBE_DURATION_S,
        warmup_s=DEFAULT_WARMUP_S,
    )


@dataclass(frozen=True, slots=True)
class ProbePoint:
    """One cap trial: net energy, effective duration and work completed."""

    limit_fraction: float
    energy_j: float
    duration_s: float
    samples_processed: int
    energy_per_sample_j: float
    throughput_sps: float

    def __post_init__(self) -> None:
        if min(
            self.limit_fraction,
            self.energy_j,
            self.duration_s,
            self.samples_processed,
            self.energy_per_sample_j,
            self.throughput_sps,
        ) <= 0:
            raise ValueError("probe point fields must all be positive")

    @property
    def delay_per_sample_s(self) -> float:
        return self.duration_s / self.samples_processed

    @classmethod
    def from_measurement(
        cls, limit: float, energy_j: float, duration_s: float, samples: int
    ) -> "ProbePoint":
        return cls(
            limit_fraction=limit,
            energy_j=energy_j,
            duration_s=duration_s,
            samples_processed=samples,
            energy_per_sample_j=energy_j / samples,
            throughput_sps=samples / duration_s,
        )


def _probe_once(
    backend: SimBackend,
    workload: WorkloadSpec,
    actuator: CapActuator,
    limit: float,
    schedule: ProbeSchedule,
    baseline: IdleBaseline,
    period_s: float,
) -> tuple[ProbePoint, PowerTrace]:
    set_power_limit(actuator, limit)
    if schedule.warmup_s > 0:
        backend.run_busy(workload, schedule.warmup_s)
    session = start_sampler(backend, period_s)
    try:
        t0 = backend.now()
        samples = backend.run_slice(workload, schedule.probe_duration_s - schedule.warmup_s)
        duration = backend.now() - t0
    finally:
        trace = session.stop()
    if samples == 0:
        raise ValueError(
            f"no sample completed within the probe window at limit {limit}; "
            "increase probe_duration_s"
        )
    breakdown = net_energy(trace, baseline)
    point = ProbePoint.from_measurement(
        limit=limit, energy_j=breakdown.total_j, duration_s=duration, samples=samples
    )
    return point, trace


def run_sweep(
    backend: SimBackend,
    workload: WorkloadSpec,
    schedule: ProbeSchedule,
    baseline: IdleBaseline,
    actuator: CapActuator | None = None,
    period_s: float = 0.1,
    *,
    trace_sink: list | None = None,
) -> list[ProbePoint]:
    """Probe every cap in the schedule, lowest first.

    Returns one point per limit in schedule order. The cap active before the
    sweep is restored afterwards on all exit paths; if actuation fails
    mid-sweep the partial results are discarded and the error propagates.
    ``trace_sink``, when given, receives each probe's raw trace for report
    embedding.
    """
    if actuator is None:
        actuator = CapActuator(backend, min_fraction=min(schedule.limits))
    if min(schedule.limits) < actuator.min_fraction - 1e-12:
        raise ValueError("schedule probes below the actuator guard floor")
    original = actuator.current_fraction
    points: list[ProbePoint] = []
    try:
        for limit in schedule.limits:
            point, trace = _probe_once(
                backend, workload, actuator, limit, schedule, baseline, period_s
            )
            points.append(point)
            if trace_sink is not None:
                trace_sink.append(trace)
    finally:
        set_power_limit(actuator, original)
    return points


def fine_sweep(
    backend: SimBackend,
    workload: WorkloadSpec,
    lo: float,
    hi: float,
    step_fraction: float,
    baseline: IdleBaseline,
    probe_duration_s: float = DEFAULT_PROBE_DURATION_S,
    warmup_s: float = DEFAULT_WARMUP_S,
    actuator: CapActuator | None = None,
    period_s: float = 0.1,
) -> list[ProbePoint]:
    """Dense sweep between ``lo`` and ``hi`` at ``step_fraction`` spacing.

    Used as the brute-force reference against fitted minima and for
    fine-grained reports.
    """
    if step_fraction <= 0:
        raise ValueError("step_fraction must be positive")
    if not (0 < lo < hi <= 1.0):
        raise ValueError("need 0 < lo < hi <= 1")
    count = int(np.floor((hi - lo) / step_fraction + 1e-9)) + 1
    limits = tuple(round(lo + k * step_fraction, 12) for k in range(count))
    schedule = ProbeSchedule(
        limits=limits, probe_duration_s=probe_duration_s, warmup_s=warmup_s
    )
    return run_sweep(backend, workload, schedule, baseline, actuator, period_s)


PROBES_CSV_HEADER = [
    "limit",
    "energy_j",
    "duration_s",
    "samples",
    "energy_per_sample_j",
    "throughput_sps",
]


def write_probes_csv(points: Sequence[ProbePoint], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROBES_CSV_HEADER)
        for p in points:
            writer.writerow(
                [
                    repr(p.limit_fraction),
                    repr(p.energy_j),
                    repr(p.duration_s),
                    p.samples_processed,
                    repr(p.energy_per_sample_j),
                    repr(p.throughput_sps),
                ]
            )


def read_probes_csv(path: str | Path) -> list[ProbePoint]:
    points: list[ProbePoint] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PROBES_CSV_HEADER:
            raise ValueError(f"unexpected probes CSV header: {header}")
        for row in reader:
            points.append(
                ProbePoint(
                    limit_fraction=float(row[0]),
                    energy_j=float(row[1]),
                    duration_s=float(row[2]),
                    samples_processed=int(row[3]),
                    energy_per_sample_j=float(row[4]),
                    throughput_sps=float(row[5]),
                )
            )
    return points
