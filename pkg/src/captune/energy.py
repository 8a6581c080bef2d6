"""Energy accounting over power traces.

Phase energy is the time integral of sampled power minus the machine's idle
draw over the same span, so only workload-attributable joules are reported.
Traces are integrated with the trapezoidal rule, which is exact for
piecewise-linear power and costs nothing extra.

The idle integral is taken over a fixed measurement window that generally
differs from the phase duration, so the subtraction scales the idle mean by
the active duration rather than subtracting the raw idle integral.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingDomain, NotIntegrable
from .hal import ALL_DOMAINS, Backend, PowerDomain, PowerSample, PowerTrace, start_sampler


@dataclass(frozen=True, slots=True)
class IdleBaseline:
    """Per-domain mean idle watts over a measurement window of ``t_m`` seconds."""

    mean_watts_per_domain: dict[PowerDomain, float]
    t_m: float

    def __post_init__(self) -> None:
        if self.t_m <= 0:
            raise ValueError("idle measurement window must be positive")
        for domain, watts in self.mean_watts_per_domain.items():
            if watts < 0:
                raise ValueError(f"idle mean for {domain.value} is negative")

    @property
    def total_mean_w(self) -> float:
        return float(sum(self.mean_watts_per_domain.values()))


@dataclass(frozen=True, slots=True)
class EnergyBreakdown:
    """Net joules per domain for one phase, plus the phase duration.

    ``clamped`` is set when any domain's idle subtraction went negative and
    was floored at zero — expected occasionally from idle drift.
    """

    joules_per_domain: dict[PowerDomain, float]
    total_j: float
    duration_s: float
    clamped: bool = False

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("phase duration must be positive")
        for domain, joules in self.joules_per_domain.items():
            if joules < 0:
                raise ValueError(f"net energy for {domain.value} is negative")
        if abs(self.total_j - sum(self.joules_per_domain.values())) > 1e-6 * max(1.0, self.total_j):
            raise ValueError("total_j does not equal the sum of domain joules")


@dataclass(frozen=True, slots=True)
class PipelineAccount:
    """Whole-pipeline energy: probe overhead plus the main phase."""

    probe_energy_j: float
    main_energy_j: float
    idle_correction_j: float
    net_j: float
    clamped: bool = False


def integrate_trace(trace: PowerTrace, domain: PowerDomain) -> float:
    """Trapezoidal integral of one domain's watts over time, in joules.

    Raises:
        NotIntegrable: fewer than two samples for the domain.
    """
    ts, ws = trace.domain_series(domain)
    if len(ts) < 2:
        raise NotIntegrable(
            f"domain {domain.value} has {len(ts)} sample(s); need at least 2"
        )
    return float(np.trapezoid(ws, ts))


def sum_domains(trace: PowerTrace) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise total wattage across CPU, GPU and DRAM.

    The result is evaluated on the union of the domains' timestamps within
    their common time window, linearly interpolating each domain at
    non-aligned points. Returns (times, watts).

    Raises:
        MissingDomain: any of the three domains has no samples.
    """
    series = {}
    for domain in ALL_DOMAINS:
        ts, ws = trace.domain_series(domain)
        if len(ts) == 0:
            raise MissingDomain(f"trace has no samples for {domain.value}")
        series[domain] = (ts, ws)

    lo = max(ts[0] for ts, _ in series.values())
    hi = min(ts[-1] for ts, _ in series.values())
    grid = np.unique(
        np.concatenate([ts[(ts >= lo) & (ts <= hi)] for ts, _ in series.values()])
    )
    if len(grid) == 0:
        grid = np.asarray([lo])
    total = np.zeros_like(grid, dtype=float)
    for ts, ws in series.values():
        total += np.interp(grid, ts, ws)
    return grid, total


def measure_idle(backend: Backend, t_m: float, period_s: float = 0.1) -> IdleBaseline:
    """Sample an idle machine for ``t_m`` seconds and average each domain.

    The caller asserts no workload is active. Means are time-weighted
    (integral over span) so irregular gaps do not bias them.
    """
    if t_m <= 0:
        raise ValueError("idle window t_m must be positive")
    session = start_sampler(backend, period_s)
    backend.sleep(t_m)
    trace = session.stop()
    means: dict[PowerDomain, float] = {}
    for domain in ALL_DOMAINS:
        ts, ws = trace.domain_series(domain)
        if len(ts) >= 2 and ts[-1] > ts[0]:
            means[domain] = float(np.trapezoid(ws, ts) / (ts[-1] - ts[0]))
        elif len(ts) >= 1:
            means[domain] = float(np.mean(ws))
        else:
            raise NotIntegrable(f"no idle samples collected for {domain.value}")
    return IdleBaseline(mean_watts_per_domain=means, t_m=t_m)


def net_energy(trace: PowerTrace, baseline: IdleBaseline) -> EnergyBreakdown:
    """Workload-attributable energy: per-domain integral minus idle mean x span.

    Each domain is floored at zero; the breakdown's ``clamped`` flag records
    whether flooring happened anywhere.
    """
    joules: dict[PowerDomain, float] = {}
    clamped = False
    present = [d for d in ALL_DOMAINS if len(trace.domain_series(d)[0]) > 0]
    if not present:
        raise NotIntegrable("trace has no samples in any domain")
    for domain in present:
        ts, _ = trace.domain_series(domain)
        gross = integrate_trace(trace, domain)
        span = float(ts[-1] - ts[0])
        idle_mean = baseline.mean_watts_per_domain.get(domain, 0.0)
        net = gross - idle_mean * span
        if net < 0:
            net = 0.0
            clamped = True
        joules[domain] = net
    return EnergyBreakdown(
        joules_per_domain=joules,
        total_j=float(sum(joules.values())),
        duration_s=trace.span(),
        clamped=clamped,
    )


def account_pipeline(
    probe_energies: Sequence[float], main: EnergyBreakdown
) -> PipelineAccount:
    """Combine probe-run energies with the main phase into one account.

    Inputs are already idle-netted, so no further idle correction is applied
    here; the correction field exists for accounts built from gross numbers.
    """
    probe_total = float(sum(probe_energies))
    net = probe_total + main.total_j
    clamped = False
    if net < 0:
        net = 0.0
        clamped = True
    return PipelineAccount(
        probe_energy_j=probe_total,
        main_energy_j=main.total_j,
        idle_correction_j=0.0,
        net_j=net,
        clamped=clamped,
    )


TRACE_CSV_HEADER = ["t_s", "domain", "watts"]


def write_trace_csv(trace: PowerTrace, path: str | Path) -> None:
    """Export a trace as ``t_s,domain,watts`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_CSV_HEADER)
        for s in trace.samples:
            writer.writerow([repr(s.t), s.domain.value, repr(s.watts)])


def read_trace_csv(path: str | Path, session_id: str = "") -> PowerTrace:
    """Import a trace previously written by :func:`write_trace_csv`."""
    samples: list[PowerSample] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_CSV_HEADER:
            raise ValueError(f"unexpected trace CSV header: {header}")
        for row in reader:
            samples.append(
                PowerSample(t=float(row[0]), watts=float(row[2]), domain=PowerDomain(row[1]))
            )
    return PowerTrace(samples=samples, session_id=session_id or Path(path).stem)
