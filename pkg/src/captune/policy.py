"""Cap selection under an energy-delay policy.

The score of a probe point is its per-sample energy times its per-sample
delay raised to the policy exponent ``m``: m=0 optimises energy alone,
larger m weights latency more heavily. The decision fits the cost curve to
the probes and takes its minimum inside the policy bounds; when the fit
fails the gate, the best measured point is used instead. An optional QoS
guard restricts the choice to points whose delay stays within a percentage
of the fastest (highest-cap) probe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigError, InsufficientPoints
from .fitcore import CurveFit, SimplexOptions, curve_value, fit_cost_curve, locate_minimum
from .profiler import ProbePoint, ProbeSchedule, default_schedule

SUPPORTED_EXPONENTS = (0, 1, 2, 3)


@dataclass(frozen=True, slots=True)
class PolicyDoc:
    """A small versioned cap-selection policy document.

    Serialised shape:
    ``{policy_id, m, limit_lo, limit_hi, probe: {limits, duration_s,
    warmup_s}, max_delay_increase_pct?}``
    """

    m: int = 1
    limit_lo: float = 0.3
    limit_hi: float = 1.0
    schedule: ProbeSchedule = field(default_factory=default_schedule)
    max_delay_increase_pct: float | None = None
    policy_id: str = "default"

    def __post_init__(self) -> None:
        if isinstance(self.m, bool) or not isinstance(self.m, int):
            raise ConfigError("policy exponent m must be an integer")
        if self.m not in SUPPORTED_EXPONENTS:
            raise ConfigError(f"policy exponent m must be one of {SUPPORTED_EXPONENTS}")
        if not (0.3 <= self.limit_lo < self.limit_hi <= 1.0):
            raise ConfigError("policy bounds must satisfy 0.3 <= lo < hi <= 1.0")
        if self.max_delay_increase_pct is not None and self.max_delay_increase_pct < 0:
            raise ConfigError("max_delay_increase_pct must be >= 0")

    def with_m(self, m: int) -> "PolicyDoc":
        return replace(self, m=m)

    def to_dict(self) -> dict:
        doc = {
            "policy_id": self.policy_id,
            "m": self.m,
            "limit_lo": self.limit_lo,
            "limit_hi": self.limit_hi,
            "probe": {
                "limits": list(self.schedule.limits),
                "duration_s": self.schedule.probe_duration_s,
                "warmup_s": self.schedule.warmup_s,
            },
        }
        if self.max_delay_increase_pct is not None:
            doc["max_delay_increase_pct"] = self.max_delay_increase_pct
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PolicyDoc":
        try:
            probe = doc.get("probe", {})
            schedule = (
                ProbeSchedule(
                    limits=tuple(probe["limits"]),
                    probe_duration_s=float(probe.get("duration_s", 30.0)),
                    warmup_s=float(probe.get("warmup_s", 2.0)),
                )
                if probe
                else default_schedule()
            )
            return cls(
                m=doc.get("m", 1),
                limit_lo=float(doc.get("limit_lo", 0.3)),
                limit_hi=float(doc.get("limit_hi", 1.0)),
                schedule=schedule,
                max_delay_increase_pct=(
                    float(doc["max_delay_increase_pct"])
                    if "max_delay_increase_pct" in doc
                    else None
                ),
                policy_id=str(doc.get("policy_id", "default")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed policy document: {exc}") from exc

    @classmethod
    def from_json_file(cls, path: str | Path) -> "PolicyDoc":
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"policy file is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


def energy_delay_score(point: ProbePoint, m: int) -> float:
    """Per-sample energy times per-sample delay to the power ``m``."""
    return point.energy_per_sample_j * point.delay_per_sample_s**m


def pareto_front(points: Sequence[ProbePoint]) -> list[ProbePoint]:
    """Points not dominated in (energy per sample, delay per sample).

    A point is dominated when another is no worse on both axes and strictly
    better on at least one. Input order is preserved.
    """
    if not points:
        raise InsufficientPoints("pareto_front needs at least one point")
    front: list[ProbePoint] = []
    for p in points:
        dominated = False
        for q in points:
            if q is p:
                continue
            if (
                q.energy_per_sample_j <= p.energy_per_sample_j
                and q.delay_per_sample_s <= p.delay_per_sample_s
                and (
                    q.energy_per_sample_j < p.energy_per_sample_j
                    or q.delay_per_sample_s < p.delay_per_sample_s
                )
            ):
                dominated = True
                break
        if not dominated:
            front.append(p)
    return front


def select_measured(points: Sequence[ProbePoint], m: int) -> ProbePoint:
    """Lowest-score measured point; ties break toward the lower limit."""
    if not points:
        raise InsufficientPoints("no points to select from")
    ordered = sorted(points, key=lambda p: p.limit_fraction)
    return min(ordered, key=lambda p: energy_delay_score(p, m))


@dataclass(frozen=True, slots=True)
class Decision:
    """A chosen cap plus the evidence that produced it."""

    chosen_limit: float
    predicted_score: float
    method: str  # "fitted" | "measured_fallback"
    fit: CurveFit | None
    probe_points: tuple[ProbePoint, ...]
    m: int

    def __post_init__(self) -> None:
        if self.method not in ("fitted", "measured_fallback"):
            raise ValueError(f"unknown decision method {self.method!r}")
        if self.method == "fitted" and (self.fit is None or not self.fit.converged):
            raise ValueError("a fitted decision requires a converged fit")


def decide(
    points: Sequence[ProbePoint],
    policy: PolicyDoc,
    fit_opts: SimplexOptions | None = None,
) -> Decision:
    """Choose a cap from probe evidence under a policy.

    Fits the cost curve to (cap, score) pairs; a converged fit contributes
    its minimum over the policy bounds, otherwise the best measured point
    wins. When the policy carries a delay guard, the choice snaps to the
    lowest-score probe whose delay stays within the allowed increase over
    the highest-cap probe.

    Raises:
        InsufficientPoints: fewer than two probes inside the policy bounds.
    """
    eligible = [
        p
        for p in points
        if policy.limit_lo - 1e-9 <= p.limit_fraction <= policy.limit_hi + 1e-9
    ]
    eligible.sort(key=lambda p: p.limit_fraction)
    if len(eligible) < 2:
        raise InsufficientPoints(
            f"need at least 2 probes within [{policy.limit_lo}, {policy.limit_hi}], "
            f"got {len(eligible)}"
        )

    scores = [(p.limit_fraction, energy_delay_score(p, policy.m)) for p in eligible]
    fit = fit_cost_curve(scores, fit_opts)

    if fit.converged:
        chosen = locate_minimum(fit, policy.limit_lo, policy.limit_hi)
        predicted = curve_value(fit.coeffs, chosen)
        method = "fitted"
    else:
        best = select_measured(eligible, policy.m)
        chosen = best.limit_fraction
        predicted = energy_delay_score(best, policy.m)
        method = "measured_fallback"

    if policy.max_delay_increase_pct is not None:
        reference = max(eligible, key=lambda p: p.limit_fraction)
        allowed = reference.delay_per_sample_s * (1.0 + policy.max_delay_increase_pct / 100.0)
        within = [p for p in eligible if p.delay_per_sample_s <= allowed + 1e-12]
        best = select_measured(within, policy.m)
        chosen = best.limit_fraction
        predicted = energy_delay_score(best, policy.m)

    return Decision(
        chosen_limit=chosen,
        predicted_score=predicted,
        method=method,
        fit=fit,
        probe_points=tuple(eligible),
        m=policy.m,
    )


def compare_exponents(
    points: Sequence[ProbePoint],
    ms: Sequence[int],
    policy: PolicyDoc | None = None,
    fit_opts: SimplexOptions | None = None,
) -> dict[int, Decision]:
    """Run the decision under several delay exponents for side-by-side reports."""
    base = policy or PolicyDoc()
    return {m: decide(points, base.with_m(m), fit_opts) for m in ms}
