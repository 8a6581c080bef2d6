"""Pipeline orchestration, run reports, and analysis helpers.

A run report is a single self-contained JSON document: config snapshot,
idle baseline, probe evidence, fit, decision, phase energies with their
raw traces embedded, and summary analytics. Everything in it can be
re-derived from the embedded traces, which keeps results auditable.

Report rendering is data-only: the fig* emitters produce CSV columns ready
for external plotting tools.
"""

from __future__ import annotations

import csv
import io
import json
import time as _time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import RunConfig
from .energy import (
    EnergyBreakdown,
    IdleBaseline,
    account_pipeline,
    measure_idle,
    net_energy,
)
from .errors import ConfigError, DegenerateVariance, UnknownFormat
from .hal import CapActuator, PowerDomain, PowerSample, PowerTrace, set_power_limit
from .fitcore import CurveFit, SimplexOptions, sample_curve
from .policy import Decision, PolicyDoc, compare_exponents, decide
from .profiler import ProbePoint, run_sweep
from .simdev import SimBackend, WorkloadSpec, archetype, setup_dimms

SCHEMA_VERSION = 1

REPORT_FORMATS = ("fig4", "fig5", "fig6", "summary")


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient.

    Raises:
        DegenerateVariance: fewer than two pairs, or a zero-variance series.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) != len(y):
        raise ValueError("series must have equal length")
    if len(x) < 2:
        raise DegenerateVariance("need at least two pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateVariance("zero variance in a series")
    r = float(np.sum(dx * dy) / (sx * sy))
    return max(-1.0, min(1.0, r))


def _trace_rows(trace: PowerTrace) -> list[list]:
    return [[s.t, s.domain.value, s.watts] for s in trace.samples]


def _trace_from_rows(rows: Sequence[Sequence]) -> PowerTrace:
    samples = [
        PowerSample(t=float(t), watts=float(w), domain=PowerDomain(d)) for t, d, w in rows
    ]
    return PowerTrace(samples=samples)


def _breakdown_dict(b: EnergyBreakdown) -> dict:
    return {
        "joules_per_domain": {d.value: j for d, j in b.joules_per_domain.items()},
        "total_j": b.total_j,
        "duration_s": b.duration_s,
        "clamped": b.clamped,
    }


def _point_dict(p: ProbePoint) -> dict:
    return {
        "limit": p.limit_fraction,
        "energy_j": p.energy_j,
        "duration_s": p.duration_s,
        "samples": p.samples_processed,
        "energy_per_sample_j": p.energy_per_sample_j,
        "throughput_sps": p.throughput_sps,
    }


def point_from_dict(doc: Mapping) -> ProbePoint:
    return ProbePoint(
        limit_fraction=float(doc["limit"]),
        energy_j=float(doc["energy_j"]),
        duration_s=float(doc["duration_s"]),
        samples_processed=int(doc["samples"]),
        energy_per_sample_j=float(doc["energy_per_sample_j"]),
        throughput_sps=float(doc["throughput_sps"]),
    )


def _fit_dict(fit: CurveFit | None) -> dict | None:
    if fit is None:
        return None
    return {
        "coeffs": asdict(fit.coeffs),
        "rel_error": fit.rel_error,
        "converged": fit.converged,
        "n_points": fit.n_points,
        "curve": sample_curve(fit, 0.0, 1.0, 0.01),
    }


def _decision_dict(decision: Decision) -> dict:
    return {
        "chosen_limit": decision.chosen_limit,
        "predicted_score": decision.predicted_score,
        "method": decision.method,
        "m": decision.m,
    }


def _run_phase(
    backend: SimBackend,
    workload: WorkloadSpec,
    actuator: CapActuator,
    limit: float,
    epochs: int,
    baseline: IdleBaseline,
    period_s: float,
) -> dict:
    """Run the main workload phase at one cap and account its energy."""
    set_power_limit(actuator, limit)
    results = [backend.run_epoch(workload, period_s) for _ in range(epochs)]
    breakdowns = [net_energy(r.trace, baseline) for r in results]
    total_j = float(sum(b.total_j for b in breakdowns))
    duration = float(sum(r.duration_s for r in results))
    merged_rows: list[list] = []
    for r in results:
        merged_rows.extend(_trace_rows(r.trace))
    return {
        "limit": actuator.current_fraction,
        "epochs": epochs,
        "energy_j": total_j,
        "duration_s": duration,
        "mean_util": float(np.mean([r.mean_util for r in results])),
        "breakdowns": [_breakdown_dict(b) for b in breakdowns],
        "trace": merged_rows,
        "epoch_spans": [r.duration_s for r in results],
    }


def run_pipeline(
    cfg: RunConfig,
    policy: PolicyDoc,
    fit_opts: SimplexOptions | None = None,
    include_exponents: bool = True,
) -> dict:
    """Measure idle, sweep, fit, decide, run the main phase, and account it.

    Returns the full run-report document. The device cap is restored on
    every exit path. Only the simulated backend can host the workload; the
    command backend serves sensing and actuation commands but has no
    sample-progress channel to probe against.
    """
    if cfg.backend != "simulated":
        raise ConfigError(
            "the full pipeline needs a workload host; backend must be 'simulated'"
        )
    device, workload = archetype(cfg.archetype, setup=cfg.setup, seed=cfg.seed)
    backend = SimBackend(device, dimms=setup_dimms(cfg.setup))
    actuator = CapActuator(backend, min_fraction=cfg.guard_min_fraction)
    original = actuator.current_fraction
    started = _time.perf_counter()
    probe_traces: list[PowerTrace] = []
    try:
        baseline = measure_idle(backend, cfg.idle_window_s, cfg.sample_period_s)
        t_sweep0 = backend.now()
        points = run_sweep(
            backend,
            workload,
            policy.schedule,
            baseline,
            actuator,
            cfg.sample_period_s,
            trace_sink=probe_traces,
        )
        sweep_s = backend.now() - t_sweep0
        decision = decide(points, policy, fit_opts)
        exponents = (
            compare_exponents(points, [0, 1, 2, 3], policy, fit_opts)
            if include_exponents
            else {}
        )

        main = _run_phase(
            backend,
            workload,
            actuator,
            decision.chosen_limit,
            cfg.main_epochs,
            baseline,
            cfg.sample_period_s,
        )
        reference = None
        if cfg.reference_run:
            reference = _run_phase(
                backend,
                workload,
                actuator,
                policy.limit_hi,
                cfg.main_epochs,
                baseline,
                cfg.sample_period_s,
            )
    finally:
        set_power_limit(actuator, original)

    main_joules: dict[PowerDomain, float] = {}
    clamped = False
    for b_doc in main["breakdowns"]:
        clamped = clamped or b_doc["clamped"]
        for dom, joules in b_doc["joules_per_domain"].items():
            main_joules[PowerDomain(dom)] = main_joules.get(PowerDomain(dom), 0.0) + joules
    main_breakdown = EnergyBreakdown(
        joules_per_domain=main_joules,
        total_j=main["energy_j"],
        duration_s=main["duration_s"],
        clamped=clamped,
    )
    account = account_pipeline([p.energy_j for p in points], main_breakdown)

    analysis: dict = {}
    try:
        analysis["r_energy_duration_probes"] = pearson_r(
            [p.energy_j for p in points], [p.duration_s for p in points]
        )
    except DegenerateVariance:
        analysis["r_energy_duration_probes"] = None
    try:
        analysis["r_limit_energy_probes"] = pearson_r(
            [p.limit_fraction for p in points], [p.energy_j for p in points]
        )
    except DegenerateVariance:
        analysis["r_limit_energy_probes"] = None
    if reference is not None and reference["energy_j"] > 0:
        analysis["energy_saving_pct"] = 100.0 * (1.0 - main["energy_j"] / reference["energy_j"])
        analysis["time_increase_pct"] = 100.0 * (
            main["duration_s"] / reference["duration_s"] - 1.0
        )

    report = {
        "schema_version": SCHEMA_VERSION,
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "config": dict(cfg.options)
        or {"backend": cfg.backend, "archetype": cfg.archetype, "setup": cfg.setup},
        "archetype": cfg.archetype,
        "setup": cfg.setup,
        "policy": policy.to_dict(),
        "idle_baseline": {
            "mean_watts": {d.value: w for d, w in baseline.mean_watts_per_domain.items()},
            "t_m": baseline.t_m,
        },
        "probes": [_point_dict(p) for p in points],
        "probe_traces": [
            {"limit": p.limit_fraction, "trace": _trace_rows(t)}
            for p, t in zip(points, probe_traces)
        ],
        "fit": _fit_dict(decision.fit),
        "decision": _decision_dict(decision),
        "exponents": {str(m): _decision_dict(d) for m, d in exponents.items()},
        "main_phase": main,
        "reference_phase": reference,
        "pipeline_account": {
            "probe_energy_j": account.probe_energy_j,
            "main_energy_j": account.main_energy_j,
            "idle_correction_j": account.idle_correction_j,
            "net_j": account.net_j,
            "clamped": account.clamped,
        },
        "timing": {
            "sweep_simulated_s": sweep_s,
            "main_simulated_s": main["duration_s"],
            "total_simulated_s": backend.now(),
            "wall_s": _time.perf_counter() - started,
        },
        "analysis": analysis,
    }
    return report


def write_report(report: Mapping, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True), "utf-8")


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text("utf-8"))


def strip_volatile(report: Mapping) -> dict:
    """Drop timestamps and wall-clock timings so equal runs compare equal."""
    out = dict(report)
    out.pop("generated_at", None)
    timing = dict(out.get("timing", {}))
    timing.pop("wall_s", None)
    out["timing"] = timing
    return out


def measure_overhead(
    make_backend,
    workload: WorkloadSpec,
    period_s: float = 0.1,
    repetitions: int = 10,
    slice_s: float = 20.0,
) -> dict:
    """Paired sampler-off/sampler-on runs of the same workload slice.

    The headline number is the simulated-duration delta: the sampler rides
    the virtual clock out-of-band, so a correct implementation adds nothing
    to the workload's own time. Host-side wall deltas are reported for
    information only; they measure this process, not the device.
    """
    from .hal import start_sampler

    sim_off, sim_on, wall_off, wall_on = [], [], [], []
    for _ in range(repetitions):
        backend = make_backend()
        w0 = _time.perf_counter()
        t0 = backend.now()
        backend.run_busy(workload, slice_s)
        sim_off.append(backend.now() - t0)
        wall_off.append(_time.perf_counter() - w0)

        backend = make_backend()
        w0 = _time.perf_counter()
        session = start_sampler(backend, period_s)
        t0 = backend.now()
        backend.run_busy(workload, slice_s)
        sim_on.append(backend.now() - t0)
        session.stop()
        wall_on.append(_time.perf_counter() - w0)

    mean_off = float(np.mean(sim_off))
    mean_on = float(np.mean(sim_on))
    return {
        "repetitions": repetitions,
        "period_s": period_s,
        "slice_s": slice_s,
        "simulated_off_s": mean_off,
        "simulated_on_s": mean_on,
        "simulated_overhead_pct": 100.0 * (mean_on - mean_off) / mean_off,
        "wall_off_s": float(np.mean(wall_off)),
        "wall_on_s": float(np.mean(wall_on)),
    }


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def emit_fig4_csv(report: Mapping) -> str:
    """Energy and time versus cap, one row per probe limit."""
    m = int(report["decision"]["m"])
    rows = []
    for p in report["probes"]:
        delay = p["duration_s"] / p["samples"]
        rows.append(
            [
                p["limit"],
                p["energy_j"],
                p["duration_s"],
                p["energy_per_sample_j"],
                delay,
                p["energy_per_sample_j"] * delay**m,
            ]
        )
    return _csv_text(
        ["limit", "energy_j", "duration_s", "energy_per_sample_j", "delay_per_sample_s", "score"],
        rows,
    )


def emit_fig5_csv(report: Mapping) -> str:
    """Decision comparison across delay exponents."""
    rows = []
    for m_str, dec in sorted(report.get("exponents", {}).items(), key=lambda kv: int(kv[0])):
        rows.append([m_str, dec["chosen_limit"], dec["predicted_score"], dec["method"]])
    return _csv_text(["m", "chosen_limit", "predicted_score", "method"], rows)


def emit_fig6_csv(reports: Sequence[Mapping]) -> str:
    """Savings/delay tradeoff per archetype, from a batch of run reports."""
    rows = []
    for report in reports:
        analysis = report.get("analysis", {})
        if "energy_saving_pct" not in analysis:
            continue
        rows.append(
            [
                report.get("archetype", "?"),
                report["decision"]["chosen_limit"],
                analysis["energy_saving_pct"],
                analysis["time_increase_pct"],
            ]
        )
    return _csv_text(
        ["archetype", "chosen_limit", "energy_saving_pct", "time_increase_pct"], rows
    )


def summary_line(report: Mapping) -> str:
    analysis = report.get("analysis", {})
    saving = analysis.get("energy_saving_pct")
    delay = analysis.get("time_increase_pct")
    chosen = report["decision"]["chosen_limit"]
    if saving is None:
        return f"chosen cap {chosen:.2f} (no reference phase for savings)"
    return (
        f"chosen cap {chosen:.2f}: {saving:.1f}% energy saving, "
        f"{delay:+.1f}% time vs uncapped"
    )


def render_report(report_docs: Sequence[Mapping], fmt: str) -> str:
    """Render one of the supported report formats to CSV/text."""
    if fmt not in REPORT_FORMATS:
        raise UnknownFormat(f"unknown format {fmt!r}; supported: {', '.join(REPORT_FORMATS)}")
    if fmt == "fig6":
        return emit_fig6_csv(report_docs)
    if len(report_docs) != 1:
        raise UnknownFormat(f"format {fmt!r} renders a single report")
    report = report_docs[0]
    if fmt == "fig4":
        return emit_fig4_csv(report)
    if fmt == "fig5":
        return emit_fig5_csv(report)
    return summary_line(report) + "\n"
