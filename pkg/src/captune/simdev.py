"""Deterministic device-and-workload simulator.

The simulator stands in for a GPU machine so the whole capping pipeline can
run on a desk: it maps a power cap to a sustainable clock through a
switched-capacitance power model, maps the clock to workload throughput
through a compute/memory-bound split, and emits noisy power traces on a
virtual clock.

Power model
-----------
Dynamic draw follows ``P = 1/2 * C * V(f)^2 * f`` with an affine voltage
curve ``V(f) = v0 + slope * f``. Because voltage enters squared, power is
strongly super-linear in clock near the top of the range: the first watts
shaved off the cap cost very little frequency, which is exactly why capping
pays. The effective capacitance is derived so the device draws its TDP at
full clock.

A workload only draws what its kernels demand. The demand scale is the
utilization fraction, so lightweight jobs never push the board to the cap
and show identical behaviour at every limit — the cap simply never binds.

Caps below ``instability_floor`` destabilise the part: the sustained clock
degrades sharply and both runtime and energy spike.

Throughput model
----------------
Per-sample time splits into a clock-insensitive share (memory and host
bound) and a compute share that stretches inversely with the clock:
``rate = 1 / (membound_time + compute_time * f_max / f(cap))``.

All randomness comes from a generator seeded in the device model, so equal
seeds reproduce bit-identical traces.
"""

from __future__ import annotations

import configparser
import zlib
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import numpy as np

from .errors import ActuationFailed, BackendUnavailable, UnknownArchetype
from .hal import (
    Backend,
    DimmSpec,
    PowerDomain,
    PowerTrace,
    register_backend,
    start_sampler,
)

# Sustained-clock degradation below the instability floor.
INSTABILITY_PENALTY = 1.6
INSTABILITY_EXPONENT = 3

# Transient boost excursions: short bursts may exceed the cap, bounded in
# amplitude and duty cycle so windowed means stay essentially capped.
BOOST_MULTIPLIER = 1.08
BOOST_CEILING = 1.10
BOOST_PERIOD_S = 5.0
BOOST_LEN_S = 0.25

# Host-side draw while feeding the device, as a multiple of CPU idle.
CPU_BUSY_FACTOR = 1.8


@dataclass(frozen=True, slots=True)
class VoltageCurve:
    """Affine voltage-frequency curve ``V(f) = v0 + slope * f``."""

    v0: float
    slope: float

    def __post_init__(self) -> None:
        if self.v0 <= 0:
            raise ValueError("v0 must be positive")
        if self.slope < 0:
            raise ValueError("voltage curve must be monotone non-decreasing")

    def volts(self, f: float) -> float:
        return self.v0 + self.slope * f


@dataclass(slots=True)
class DeviceModel:
    """Parameters of one simulated device.

    ``c_eff`` may be left None, in which case it is derived so dynamic power
    at ``f_max`` equals the TDP; an explicit value must reproduce the TDP
    within 2%.
    """

    tdp_w: float
    idle_w: dict[PowerDomain, float]
    v_of_f: VoltageCurve
    f_max: float = 1.0
    c_eff: float | None = None
    instability_floor: float = 0.3
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tdp_w <= 0 or self.f_max <= 0:
            raise ValueError("tdp_w and f_max must be positive")
        if self.tdp_w <= sum(self.idle_w.values()):
            raise ValueError("TDP must exceed the total idle draw")
        if not (0 < self.instability_floor < 1):
            raise ValueError("instability_floor must lie in (0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        derived = 2.0 * self.tdp_w / (self.v_of_f.volts(self.f_max) ** 2 * self.f_max)
        if self.c_eff is None:
            self.c_eff = derived
        else:
            full = 0.5 * self.c_eff * self.v_of_f.volts(self.f_max) ** 2 * self.f_max
            if abs(full - self.tdp_w) > 0.02 * self.tdp_w:
                raise ValueError(
                    f"c_eff gives {full:.1f} W at f_max; must match TDP within 2%"
                )

    def dyn_power_w(self, f: float) -> float:
        """Dynamic board draw at clock ``f`` under full load."""
        return 0.5 * self.c_eff * self.v_of_f.volts(f) ** 2 * f

    def idle_gpu_w(self) -> float:
        return self.idle_w.get(PowerDomain.GPU, 0.0)


@dataclass(frozen=True, slots=True)
class WorkloadSpec:
    """A synthetic workload archetype.

    ``compute_intensity`` is the busy seconds one sample costs at full
    clock; ``membound_fraction`` of it is insensitive to the clock.
    ``base_util`` is the device utilization the workload sustains, which
    also scales how much power its kernels demand.
    """

    name: str
    samples_per_epoch: int
    compute_intensity: float
    membound_fraction: float
    base_util: float

    def __post_init__(self) -> None:
        if self.samples_per_epoch <= 0:
            raise ValueError("samples_per_epoch must be positive")
        if self.compute_intensity <= 0:
            raise ValueError("compute_intensity must be positive")
        if not (0.0 <= self.membound_fraction <= 1.0):
            raise ValueError("membound_fraction must lie in [0, 1]")
        if not (0.0 < self.base_util <= 1.0):
            raise ValueError("base_util must lie in (0, 1]")


@dataclass(frozen=True, slots=True)
class EpochResult:
    """Outcome of one simulated epoch."""

    trace: PowerTrace
    duration_s: float
    samples_processed: int
    mean_util: float

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("epoch duration must be positive")


def _solve_clock(model: DeviceModel, budget_w: float) -> float:
    """Largest clock whose dynamic draw stays within ``budget_w`` (bisection)."""
    if budget_w <= 0:
        return 0.0
    if model.dyn_power_w(model.f_max) <= budget_w:
        return model.f_max
    lo, hi = 0.0, model.f_max
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if model.dyn_power_w(mid) <= budget_w:
            lo = mid
        else:
            hi = mid
    return lo


def _degrade(model: DeviceModel, f_stable: float, cap_fraction: float) -> float:
    """Sustained clock below the instability floor: sharply degraded."""
    ratio = cap_fraction / model.instability_floor
    return f_stable * ratio**INSTABILITY_EXPONENT / INSTABILITY_PENALTY


def frequency_at(model: DeviceModel, cap_fraction: float) -> float:
    """Sustainable clock at a cap, assuming a fully demanding workload.

    Solves ``dyn_power(f) <= cap * TDP`` for the largest ``f``. Monotone
    non-decreasing in the cap. Below the instability floor the returned
    clock is degraded; the throughput hit lands downstream.
    """
    if not (0 < cap_fraction <= 1):
        raise ValueError("cap_fraction must lie in (0, 1]")
    f = _solve_clock(model, cap_fraction * model.tdp_w)
    if cap_fraction < model.instability_floor:
        f = _degrade(model, f, cap_fraction)
    return f


def effective_clock(model: DeviceModel, workload: WorkloadSpec, cap_fraction: float) -> float:
    """Clock the device actually sustains for this workload at this cap.

    The board draws ``idle + util * (dyn(f) - idle)``; the limiter only
    throttles when that demand exceeds the cap. Light workloads therefore
    run at full clock under any stable cap.
    """
    if not (0 < cap_fraction <= 1):
        raise ValueError("cap_fraction must lie in (0, 1]")
    idle = model.idle_gpu_w()
    u = workload.base_util
    demand_full = idle + u * (model.dyn_power_w(model.f_max) - idle)
    cap_w = cap_fraction * model.tdp_w
    if demand_full <= cap_w:
        f = model.f_max
    else:
        # Invert the demand for the dynamic budget the cap leaves available.
        budget = idle + (cap_w - idle) / u
        f = _solve_clock(model, budget)
    if cap_fraction < model.instability_floor:
        # Forcing the rails this low destabilises the part no matter how
        # light the workload is.
        f = _degrade(model, f, cap_fraction)
    return f


def busy_power_w(model: DeviceModel, workload: WorkloadSpec, cap_fraction: float) -> float:
    """Mean board draw while the workload is executing at this cap."""
    f = effective_clock(model, workload, cap_fraction)
    f_for_power = min(f, model.f_max)
    idle = model.idle_gpu_w()
    if cap_fraction < model.instability_floor:
        # Voltage instability wastes the whole budget regardless of clock.
        return cap_fraction * model.tdp_w
    return idle + workload.base_util * (model.dyn_power_w(f_for_power) - idle)


def throughput_at(model: DeviceModel, workload: WorkloadSpec, cap_fraction: float) -> float:
    """Samples per second at a cap.

    ``rate = 1 / (membound_time + compute_time * f_max / f(cap))`` with the
    workload-effective clock; saturates when memory-bound dominates and
    collapses below the instability floor.
    """
    f = effective_clock(model, workload, cap_fraction)
    t_mem = workload.membound_fraction * workload.compute_intensity
    t_cmp = (1.0 - workload.membound_fraction) * workload.compute_intensity
    if t_cmp == 0.0:
        return 1.0 / t_mem
    return 1.0 / (t_mem + t_cmp * (model.f_max / f))


class SimBackend(Backend):
    """Virtual-clock backend over a :class:`DeviceModel`.

    Sampling sessions register clock hooks; the backend guarantees a hook
    call at every internal power-state boundary, so base power is constant
    between calls and grid-stamped samples are exact. Running the sampler
    consumes no simulated time, mirroring an out-of-band sensor poll.
    """

    name = "simulated"

    def __init__(self, device: DeviceModel, dimms: DimmSpec = DimmSpec(4, 16.0)):
        super().__init__(dimms=dimms)
        self.device = device
        self._rng = np.random.default_rng(device.seed)
        self._t = 0.0
        self._limit = 1.0
        self._busy = False
        self._busy_base_w = 0.0
        self._busy_elapsed = 0.0
        self._bursting = False
        self._cap_binds = False
        self._unstable = False
        self._hooks: list[Callable[[float], None]] = []
        # Test-injection knobs: countdowns to a forced failure.
        self.fail_apply_after: int | None = None
        self.fail_reads_remaining: int = 0

    # -- clock ----------------------------------------------------------
    def now(self) -> float:
        return self._t

    def register_clock_hook(self, hook: Callable[[float], None]) -> None:
        self._hooks.append(hook)

    def unregister_clock_hook(self, hook: Callable[[float], None]) -> None:
        self._hooks.remove(hook)

    def _fire_hooks(self) -> None:
        for hook in list(self._hooks):
            hook(self._t)

    def sleep(self, duration_s: float) -> None:
        """Let idle time pass on the virtual clock."""
        self._advance(duration_s, busy=False)

    # -- sensors / actuation ---------------------------------------------
    @property
    def current_limit(self) -> float:
        return self._limit

    def apply_limit(self, fraction: float) -> None:
        if self.fail_apply_after is not None:
            self.fail_apply_after -= 1
            if self.fail_apply_after < 0:
                # Single-shot transient failure, then the actuator recovers.
                self.fail_apply_after = None
                raise ActuationFailed("injected actuation failure")
        self._limit = fraction

    def read_domain_w(self, domain: PowerDomain) -> float:
        if self.fail_reads_remaining > 0:
            self.fail_reads_remaining -= 1
            raise BackendUnavailable("injected sensor failure")
        sigma = self.device.noise_sigma
        if domain is PowerDomain.CPU:
            base = self.device.idle_w.get(PowerDomain.CPU, 0.0)
            if self._busy:
                base *= CPU_BUSY_FACTOR
            return max(0.0, base * (1.0 + sigma * self._rng.standard_normal()))
        if domain is PowerDomain.GPU:
            if self._busy:
                base = self._busy_base_w
                if self._unstable:
                    sigma = sigma * 3.0
                if self._bursting and self._cap_binds:
                    base = min(base * BOOST_MULTIPLIER, BOOST_CEILING * self._limit * self.device.tdp_w)
            else:
                base = self.device.idle_gpu_w()
            return max(0.0, base * (1.0 + sigma * self._rng.standard_normal()))
        raise NotImplementedError("DRAM is reported via the capacity estimate")

    # -- workload execution ----------------------------------------------
    def _advance(self, duration_s: float, busy: bool) -> None:
        """Advance the virtual clock, splitting at boost-burst boundaries."""
        if duration_s < 0:
            raise ValueError("cannot advance backwards")
        self._busy = busy
        remaining = duration_s
        while remaining > 1e-12:
            if busy and self._cap_binds:
                phase = self._busy_elapsed % BOOST_PERIOD_S
                burst_start = BOOST_PERIOD_S - BOOST_LEN_S
                if phase < burst_start:
                    self._bursting = False
                    seg = min(remaining, burst_start - phase)
                else:
                    self._bursting = True
                    seg = min(remaining, BOOST_PERIOD_S - phase)
            else:
                self._bursting = False
                seg = remaining
            self._t += seg
            if busy:
                self._busy_elapsed += seg
            remaining -= seg
            self._fire_hooks()
        self._bursting = False

    def _enter_busy(self, workload: WorkloadSpec) -> None:
        self._busy_base_w = busy_power_w(self.device, workload, self._limit)
        f = effective_clock(self.device, workload, self._limit)
        self._cap_binds = f < self.device.f_max
        self._unstable = self._limit < self.device.instability_floor

    def run_busy(self, workload: WorkloadSpec, duration_s: float) -> None:
        """Run the workload for an exact duration without counting samples."""
        self._enter_busy(workload)
        self._advance(duration_s, busy=True)
        self._busy = False

    def run_slice(self, workload: WorkloadSpec, budget_s: float) -> int:
        """Run whole samples until the next would overrun ``budget_s``.

        Returns the number of completed samples; the clock stops exactly at
        the last completion so energy and count stay consistent.
        """
        rate = throughput_at(self.device, workload, self._limit)
        sample_t = 1.0 / rate
        n = int(np.floor(budget_s / sample_t + 1e-9))
        if n > 0:
            self._enter_busy(workload)
            self._advance(n * sample_t, busy=True)
            self._busy = False
        return n

    def run_epoch(self, workload: WorkloadSpec, sampler_period_s: float = 0.1) -> EpochResult:
        """Run one full epoch under the current cap, sampling as it goes."""
        session = start_sampler(self, sampler_period_s)
        t0 = self._t
        n = workload.samples_per_epoch
        rate = throughput_at(self.device, workload, self._limit)
        self._enter_busy(workload)
        self._advance(n / rate, busy=True)
        self._busy = False
        trace = session.stop()
        return EpochResult(
            trace=trace,
            duration_s=self._t - t0,
            samples_processed=n,
            mean_util=workload.base_util,
        )


def run_epoch(
    model: DeviceModel,
    workload: WorkloadSpec,
    cap_fraction: float,
    sampler_period_s: float = 0.1,
    dimms: DimmSpec = DimmSpec(4, 16.0),
) -> EpochResult:
    """Run one epoch on a fresh backend. Deterministic for a fixed seed."""
    if not (0 < cap_fraction <= 1):
        raise ValueError("cap_fraction must lie in (0, 1]")
    backend = SimBackend(model, dimms=dimms)
    backend.apply_limit(cap_fraction)
    return backend.run_epoch(workload, sampler_period_s)


# ---------------------------------------------------------------------------
# Archetype catalogue
# ---------------------------------------------------------------------------

_ARCHETYPE_FILE = "archetypes.cfg"


def _load_catalogue() -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    text = resources.files(__package__).joinpath(_ARCHETYPE_FILE).read_text("utf-8")
    parser.read_string(text)
    return parser


def _stable_seed(name: str, setup: str) -> int:
    return zlib.crc32(f"{name}:{setup}".encode()) & 0x7FFFFFFF


def archetype_names(include_generic: bool = False) -> tuple[str, ...]:
    """The bundled archetype names, in catalogue order."""
    parser = _load_catalogue()
    names = [
        s.removeprefix("archetype.")
        for s in parser.sections()
        if s.startswith("archetype.")
    ]
    if not include_generic:
        names = [n for n in names if n != "generic"]
    return tuple(names)


def archetype(
    name: str,
    setup: str = "setup1",
    seed: int | None = None,
    noise_sigma: float | None = None,
) -> tuple[DeviceModel, WorkloadSpec]:
    """Load a calibrated (device, workload) pair from the bundled catalogue.

    Raises:
        UnknownArchetype: the name is not in the catalogue.
    """
    parser = _load_catalogue()
    dev_section = f"device.{setup}"
    wl_section = f"archetype.{name}"
    if not parser.has_section(wl_section):
        raise UnknownArchetype(
            f"unknown archetype {name!r}; known: {', '.join(archetype_names(include_generic=True))}"
        )
    if not parser.has_section(dev_section):
        raise UnknownArchetype(f"unknown device setup {setup!r}")

    dev = parser[dev_section]
    wl = parser[wl_section]

    def wl_get(key: str, fallback: str | None = None) -> str:
        # Per-setup overrides use dotted keys, e.g. "membound_fraction.setup2".
        return wl.get(f"{key}.{setup}", wl.get(key, fallback))

    device = DeviceModel(
        tdp_w=dev.getfloat("tdp_w"),
        idle_w={
            PowerDomain.CPU: dev.getfloat("idle_cpu_w"),
            PowerDomain.GPU: dev.getfloat("idle_gpu_w"),
            PowerDomain.DRAM: 0.0,
        },
        v_of_f=VoltageCurve(v0=float(wl_get("v0", "1.0")), slope=float(wl_get("v_slope"))),
        f_max=1.0,
        instability_floor=dev.getfloat("instability_floor", 0.3),
        noise_sigma=(
            noise_sigma if noise_sigma is not None else dev.getfloat("noise_sigma", 0.02)
        ),
        seed=seed if seed is not None else _stable_seed(name, setup),
    )
    workload = WorkloadSpec(
        name=name,
        samples_per_epoch=int(wl_get("samples_per_epoch")),
        compute_intensity=float(wl_get("compute_intensity")),
        membound_fraction=float(wl_get("membound_fraction")),
        base_util=float(wl_get("base_util")),
    )
    return device, workload


def setup_dimms(setup: str = "setup1") -> DimmSpec:
    """The DIMM configuration of a bundled device setup."""
    parser = _load_catalogue()
    dev_section = f"device.{setup}"
    if not parser.has_section(dev_section):
        raise UnknownArchetype(f"unknown device setup {setup!r}")
    dev = parser[dev_section]
    return DimmSpec(
        n_dimm=dev.getint("n_dimm"),
        size_gb=dev.getfloat("dimm_size_gb"),
        freq_mhz=dev.getfloat("dimm_freq_mhz", 0.0),
    )


def _sim_backend_from_options(options) -> SimBackend:
    name = options.get("archetype", "generic")
    setup = options.get("setup", "setup1")
    seed = int(options["seed"]) if "seed" in options else None
    sigma = float(options["noise_sigma"]) if "noise_sigma" in options else None
    device, _ = archetype(name, setup=setup, seed=seed, noise_sigma=sigma)
    dimms = setup_dimms(setup)
    if "dimm.count" in options:
        dimms = DimmSpec(
            n_dimm=int(options["dimm.count"]),
            size_gb=float(options.get("dimm.size_gb", "16")),
            freq_mhz=float(options.get("dimm.freq_mhz", "0")),
        )
    return SimBackend(device, dimms=dimms)


register_backend("simulated", _sim_backend_from_options)
