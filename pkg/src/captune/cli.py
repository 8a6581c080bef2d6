"""Operator command line.

Subcommands: idle, probe, fit, decide, run, simulate, overhead, report.
Exit codes: 0 success, 2 usage/config error, 3 backend failure,
4 fit or decision failure.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import click

from . import report as report_mod
from .config import ENV_CONFIG, RunConfig, load_run_config
from .energy import measure_idle, net_energy, write_trace_csv
from .errors import (
    ActuationFailed,
    AlreadyRunning,
    BackendUnavailable,
    CaptuneError,
    ConfigError,
    DegenerateVariance,
    DidNotConverge,
    EmptyPointSet,
    InsufficientPoints,
    NotConverged,
    NotIntegrable,
    UnknownArchetype,
    UnknownFormat,
)
from .fitcore import fit_cost_curve, sample_curve
from .hal import CapActuator, create_backend
from .policy import PolicyDoc, decide, energy_delay_score
from .profiler import read_probes_csv, run_sweep, write_probes_csv
from .simdev import SimBackend, archetype, archetype_names, setup_dimms

EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_ANALYSIS = 4

_USAGE_ERRORS = (ConfigError, UnknownArchetype, UnknownFormat)
_BACKEND_ERRORS = (BackendUnavailable, ActuationFailed, AlreadyRunning)
_ANALYSIS_ERRORS = (
    DidNotConverge,
    NotConverged,
    InsufficientPoints,
    EmptyPointSet,
    DegenerateVariance,
    NotIntegrable,
)


def _fail(category: str, exc: Exception, code: int) -> None:
    click.echo(json.dumps({"error": {"category": category, "message": str(exc)}}), err=True)
    sys.exit(code)


class _Cli(click.Group):
    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except _USAGE_ERRORS as exc:
            _fail("usage", exc, EXIT_USAGE)
        except _BACKEND_ERRORS as exc:
            _fail("backend", exc, EXIT_BACKEND)
        except _ANALYSIS_ERRORS as exc:
            _fail("analysis", exc, EXIT_ANALYSIS)
        except CaptuneError as exc:
            _fail("error", exc, 1)


@click.group(cls=_Cli)
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    envvar=ENV_CONFIG,
    default=None,
    help="Run config file (key = value lines).",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Energy-aware power-cap tuning for ML workloads."""
    ctx.ensure_object(dict)
    ctx.obj["cfg"] = load_run_config(config_path)


def _make_backend(cfg: RunConfig):
    options = dict(cfg.options)
    options.setdefault("archetype", cfg.archetype)
    options.setdefault("setup", cfg.setup)
    return create_backend(cfg.backend, options)


def _sim_context(cfg: RunConfig):
    device, workload = archetype(cfg.archetype, setup=cfg.setup, seed=cfg.seed)
    backend = SimBackend(device, dimms=setup_dimms(cfg.setup))
    return backend, workload


@main.command()
@click.option("--t-m", "t_m", type=float, default=None, help="Idle window seconds.")
@click.pass_context
def idle(ctx: click.Context, t_m: float | None) -> None:
    """Measure the per-domain idle baseline."""
    cfg: RunConfig = ctx.obj["cfg"]
    backend = _make_backend(cfg)
    baseline = measure_idle(backend, t_m or cfg.idle_window_s, cfg.sample_period_s)
    click.echo(
        json.dumps(
            {
                "mean_watts": {d.value: w for d, w in baseline.mean_watts_per_domain.items()},
                "t_m": baseline.t_m,
            },
            indent=2,
        )
    )


@main.command()
@click.option("--policy", "policy_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default="probes.csv")
@click.pass_context
def probe(ctx: click.Context, policy_path: str | None, out: str) -> None:
    """Run the cap sweep and write probes.csv."""
    cfg: RunConfig = ctx.obj["cfg"]
    policy = PolicyDoc.from_json_file(policy_path) if policy_path else PolicyDoc()
    backend, workload = _sim_context(cfg)
    actuator = CapActuator(backend, min_fraction=cfg.guard_min_fraction)
    baseline = measure_idle(backend, cfg.idle_window_s, cfg.sample_period_s)
    points = run_sweep(
        backend, workload, policy.schedule, baseline, actuator, cfg.sample_period_s
    )
    write_probes_csv(points, out)
    click.echo(f"wrote {len(points)} probes to {out}")


@main.command()
@click.option("--points", "points_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def fit(ctx: click.Context, points_path: str, out: str | None) -> None:
    """Fit the cost curve to probes.csv (scores use the default m=1)."""
    points = read_probes_csv(points_path)
    pairs = [(p.limit_fraction, energy_delay_score(p, 1)) for p in points]
    result = fit_cost_curve(pairs)
    doc = {
        "coeffs": {
            k: getattr(result.coeffs, k) for k in ("a", "b", "c", "d", "e", "f", "g")
        },
        "rel_error": result.rel_error,
        "converged": result.converged,
        "n_points": result.n_points,
        "curve": sample_curve(result, 0.0, 1.0, 0.01),
    }
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text + "\n", "utf-8")
        click.echo(f"wrote fit to {out}")
    else:
        click.echo(text)


@main.command(name="decide")
@click.option("--points", "points_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--policy", "policy_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--m", "m_override", type=int, default=None, help="Delay exponent override.")
@click.pass_context
def decide_cmd(ctx: click.Context, points_path: str, policy_path: str | None, m_override: int | None) -> None:
    """Choose a cap from existing probe points."""
    policy = PolicyDoc.from_json_file(policy_path) if policy_path else PolicyDoc()
    if m_override is not None:
        policy = policy.with_m(m_override)
    points = read_probes_csv(points_path)
    decision = decide(points, policy)
    click.echo(
        json.dumps(
            {
                "chosen_limit": decision.chosen_limit,
                "predicted_score": decision.predicted_score,
                "method": decision.method,
                "m": decision.m,
            },
            indent=2,
        )
    )


def _run_one(cfg: RunConfig, policy: PolicyDoc, include_exponents: bool) -> dict:
    return report_mod.run_pipeline(cfg, policy, include_exponents=include_exponents)


@main.command()
@click.option("--policy", "policy_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--m", "m_override", type=int, default=None, help="Delay exponent override.")
@click.option("--out", type=click.Path(), default="report.json")
@click.option("--batch", is_flag=True, help="Run every bundled archetype.")
@click.option("--parallel", is_flag=True, help="Run batch archetypes concurrently.")
@click.option("--reference/--no-reference", default=None, help="Also run an uncapped reference phase.")
@click.pass_context
def run(
    ctx: click.Context,
    policy_path: str | None,
    m_override: int | None,
    out: str,
    batch: bool,
    parallel: bool,
    reference: bool | None,
) -> None:
    """Full pipeline: idle, sweep, fit, decide, main phase, report."""
    cfg: RunConfig = ctx.obj["cfg"]
    if reference is not None:
        cfg = replace(cfg, reference_run=reference)
    policy = PolicyDoc.from_json_file(policy_path) if policy_path else PolicyDoc()
    if m_override is not None:
        policy = policy.with_m(m_override)
    if not batch:
        doc = _run_one(cfg, policy, include_exponents=True)
        report_mod.write_report(doc, out)
        click.echo(report_mod.summary_line(doc))
        click.echo(f"wrote report to {out}")
        return

    out_dir = Path(out if out != "report.json" else "reports")
    out_dir.mkdir(parents=True, exist_ok=True)
    names = archetype_names()
    cfgs = [replace(cfg, archetype=name) for name in names]
    if parallel:
        with ProcessPoolExecutor() as pool:
            docs = list(pool.map(_run_one, cfgs, [policy] * len(cfgs), [False] * len(cfgs)))
    else:
        docs = [_run_one(c, policy, False) for c in cfgs]
    for name, doc in zip(names, docs):
        report_mod.write_report(doc, out_dir / f"{name}.json")
    click.echo(report_mod.emit_fig6_csv(docs), nl=False)
    savings = [d["analysis"].get("energy_saving_pct") for d in docs]
    savings = [s for s in savings if s is not None]
    if savings:
        times = [d["analysis"]["time_increase_pct"] for d in docs if "time_increase_pct" in d["analysis"]]
        click.echo(
            f"mean energy saving {sum(savings) / len(savings):.1f}%, "
            f"mean time increase {sum(times) / len(times):.1f}% over {len(savings)} archetypes"
        )
    click.echo(f"wrote {len(docs)} reports to {out_dir}/")


@main.command()
@click.option("--archetype", "archetype_name", default=None)
@click.option("--cap", type=float, default=1.0)
@click.option("--epochs", type=int, default=1)
@click.option("--allow-unstable", is_flag=True, help="Permit caps below the guard floor.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="sim-out")
@click.pass_context
def simulate(
    ctx: click.Context,
    archetype_name: str | None,
    cap: float,
    epochs: int,
    allow_unstable: bool,
    out_dir: str,
) -> None:
    """Run simulated epochs at a fixed cap; emit traces and a summary CSV."""
    cfg: RunConfig = ctx.obj["cfg"]
    name = archetype_name or cfg.archetype
    if cap < cfg.guard_min_fraction and not allow_unstable:
        raise ConfigError(
            f"cap {cap} is below the guard floor {cfg.guard_min_fraction}; "
            "pass --allow-unstable to override"
        )
    device, workload = archetype(name, setup=cfg.setup, seed=cfg.seed)
    backend = SimBackend(device, dimms=setup_dimms(cfg.setup))
    backend.apply_limit(cap)
    baseline = measure_idle(backend, cfg.idle_window_s, cfg.sample_period_s)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["epoch,energy_j,duration_s,samples"]
    for i in range(epochs):
        result = backend.run_epoch(workload, cfg.sample_period_s)
        write_trace_csv(result.trace, out / f"{name}-epoch{i}.csv")
        breakdown = net_energy(result.trace, baseline)
        rows.append(
            f"{i},{breakdown.total_j!r},{result.duration_s!r},{result.samples_processed}"
        )
    (out / f"{name}-summary.csv").write_text("\n".join(rows) + "\n", "utf-8")
    click.echo(f"wrote {epochs} epoch trace(s) and summary to {out}/")


@main.command()
@click.option("--period", "period_s", type=float, default=0.1)
@click.option("--reps", type=int, default=10)
@click.option("--slice", "slice_s", type=float, default=20.0)
@click.pass_context
def overhead(ctx: click.Context, period_s: float, reps: int, slice_s: float) -> None:
    """Paired sampler-off/on runs; report the sampling overhead."""
    cfg: RunConfig = ctx.obj["cfg"]
    device, workload = archetype(cfg.archetype, setup=cfg.setup, seed=cfg.seed)

    def make_backend() -> SimBackend:
        return SimBackend(device, dimms=setup_dimms(cfg.setup))

    doc = report_mod.measure_overhead(make_backend, workload, period_s, reps, slice_s)
    click.echo(json.dumps(doc, indent=2))


@main.command(name="report")
@click.argument("report_files", nargs=-1, type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--format", "fmt", type=str, default="summary")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def report_cmd(report_files: tuple[str, ...], fmt: str, out: str | None) -> None:
    """Render run reports as plot-ready CSV or a one-line summary."""
    docs = [report_mod.load_report(p) for p in report_files]
    text = report_mod.render_report(docs, fmt)
    if out:
        Path(out).write_text(text, "utf-8")
        click.echo(f"wrote {fmt} data to {out}")
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
