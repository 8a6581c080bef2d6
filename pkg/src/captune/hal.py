"""Hardware abstraction: power sensors, cap actuators, and sampling sessions.

Two backend families implement the same small surface. The command backend
shells out to operator-supplied templates (typically wrapping nvidia-smi or
a RAPL sysfs read) and runs on the wall clock. The simulated backend
(:mod:`captune.simdev`) owns a virtual clock so the whole pipeline can be
exercised deterministically without hardware.

Platforms without a DRAM energy counter fall back to a capacity-based
estimate: installed DIMMs draw roughly 3/8 W per gigabyte regardless of
load, so DRAM power is a per-configuration constant.
"""

from __future__ import annotations

import re
import subprocess
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

import numpy as np

from .errors import (
    ActuationFailed,
    AlreadyRunning,
    BackendUnavailable,
    ConfigError,
)

# Rule-of-thumb DRAM draw per installed gigabyte, in watts.
WATTS_PER_GB_DRAM = 3.0 / 8.0

# Default floor for the cap actuator. Aggressively low limits can destabilise
# the device, so anything below this is refused unless the guard is lowered
# explicitly in configuration.
DEFAULT_GUARD_FLOOR = 0.3


class PowerDomain(str, Enum):
    """The three measured power domains."""

    CPU = "cpu"
    GPU = "gpu"
    DRAM = "dram"


ALL_DOMAINS: tuple[PowerDomain, ...] = (
    PowerDomain.CPU,
    PowerDomain.GPU,
    PowerDomain.DRAM,
)


@dataclass(frozen=True, slots=True)
class PowerSample:
    """One instantaneous wattage reading at a session-relative timestamp."""

    t: float
    watts: float
    domain: PowerDomain

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ValueError(f"sample timestamp must be non-negative, got {self.t}")
        if not np.isfinite(self.watts) or self.watts < 0:
            raise ValueError(f"sample watts must be finite and >= 0, got {self.watts}")


@dataclass(slots=True)
class PowerTrace:
    """Time-ordered power samples for one sampling session.

    Samples are interleaved across domains but each domain's subsequence is
    strictly increasing in time. ``gaps`` records timestamps at which a
    sensor read failed; integration treats them as honest holes rather than
    fabricating values.
    """

    samples: list[PowerSample] = field(default_factory=list)
    session_id: str = ""
    gaps: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.session_id:
            self.session_id = uuid.uuid4().hex[:12]
        last = -np.inf
        for s in self.samples:
            if s.t < last:
                raise ValueError("trace samples must be sorted by time")
            last = s.t

    def domain_series(self, domain: PowerDomain) -> tuple[np.ndarray, np.ndarray]:
        """Return (times, watts) arrays for one domain."""
        ts = [s.t for s in self.samples if s.domain == domain]
        ws = [s.watts for s in self.samples if s.domain == domain]
        return np.asarray(ts, dtype=float), np.asarray(ws, dtype=float)

    def domains(self) -> set[PowerDomain]:
        return {s.domain for s in self.samples}

    def integrable(self, domain: PowerDomain) -> bool:
        """A domain needs at least two samples before its energy is defined."""
        count = 0
        for s in self.samples:
            if s.domain == domain:
                count += 1
                if count >= 2:
                    return True
        return False

    def span(self) -> float:
        if not self.samples:
            return 0.0
        return self.samples[-1].t - self.samples[0].t


@dataclass(frozen=True, slots=True)
class DimmSpec:
    """Installed-memory description used for the DRAM power estimate."""

    n_dimm: int
    size_gb: float
    freq_mhz: float = 0.0

    def __post_init__(self) -> None:
        if self.n_dimm < 0:
            raise ValueError("n_dimm must be >= 0")
        if self.n_dimm > 0 and self.size_gb <= 0:
            raise ValueError("size_gb must be positive when DIMMs are installed")


def estimate_dram_power(spec: DimmSpec) -> float:
    """Capacity-based DRAM power estimate in watts.

    Each DIMM draws ~3/8 W per gigabyte, essentially load-independent, so
    the estimate is a constant for a given machine. Zero DIMMs yield zero.
    """
    if spec.n_dimm == 0:
        return 0.0
    return spec.n_dimm * WATTS_PER_GB_DRAM * spec.size_gb


class Backend:
    """Base class for power backends.

    Subclasses provide ``now()`` (monotonic session time), per-domain sensor
    reads, limit actuation, and ``sleep()`` (wall or virtual). Sampler
    bookkeeping and the DRAM fallback live here.
    """

    name: str = "abstract"

    def __init__(self, dimms: DimmSpec | None = None):
        self.dimms = dimms
        self._sampler_busy = False
        self._session_counter = 0
        self._actuation_lock = threading.Lock()

    def _next_session_id(self) -> str:
        # Deterministic per backend instance so seeded runs compare equal.
        self._session_counter += 1
        return f"{self.name}-{self._session_counter:04d}"

    # -- sensor / actuator surface -------------------------------------
    def now(self) -> float:
        raise NotImplementedError

    def sleep(self, duration_s: float) -> None:
        raise NotImplementedError

    def read_domain_w(self, domain: PowerDomain) -> float:
        raise NotImplementedError

    def apply_limit(self, fraction: float) -> None:
        raise NotImplementedError

    @property
    def has_dram_counter(self) -> bool:
        return False

    # -- sampler ownership ----------------------------------------------
    def _acquire_sampler(self) -> None:
        if self._sampler_busy:
            raise AlreadyRunning(f"a sampling session is already active on {self.name!r}")
        self._sampler_busy = True

    def _release_sampler(self) -> None:
        self._sampler_busy = False


def read_power(backend: Backend, domain: PowerDomain) -> PowerSample:
    """Read one domain, stamped with the backend's monotonic session time.

    DRAM on backends without a hardware counter delegates to the
    capacity-based estimate.

    Raises:
        BackendUnavailable: the sensor read failed or returned a value that
            cannot be a power reading (negative or non-finite).
    """
    t = backend.now()
    if domain is PowerDomain.DRAM and not backend.has_dram_counter:
        if backend.dimms is None:
            raise BackendUnavailable(
                "backend has no DRAM counter and no DIMM spec was configured"
            )
        return PowerSample(t=t, watts=estimate_dram_power(backend.dimms), domain=domain)
    watts = backend.read_domain_w(domain)
    if not np.isfinite(watts) or watts < 0:
        raise BackendUnavailable(f"invalid {domain.value} reading: {watts!r}")
    return PowerSample(t=t, watts=watts, domain=domain)


@dataclass(slots=True)
class CapActuator:
    """Guarded power-limit control for one device.

    The applied fraction is always clamped into [min_fraction, max_fraction].
    The floor defaults to 0.3: pushing a device below that risks electrical
    instability, so lowering the guard is an explicit configuration choice.
    """

    backend: Backend
    min_fraction: float = DEFAULT_GUARD_FLOOR
    max_fraction: float = 1.0
    current_fraction: float = 1.0

    def __post_init__(self) -> None:
        if not (0 < self.min_fraction <= self.max_fraction <= 1.0):
            raise ValueError("actuator bounds must satisfy 0 < min <= max <= 1")
        if not (self.min_fraction <= self.current_fraction <= self.max_fraction):
            raise ValueError("current_fraction outside actuator bounds")


def set_power_limit(actuator: CapActuator, fraction: float) -> float:
    """Clamp ``fraction`` into the actuator bounds and apply it.

    Re-applying the currently active fraction is a no-op. Returns the
    fraction actually applied.

    Raises:
        ActuationFailed: the backend rejected the command; the actuator's
            recorded state is left unchanged.
    """
    if not np.isfinite(fraction) or fraction <= 0:
        raise ValueError(f"cap fraction must be positive, got {fraction}")
    applied = min(max(fraction, actuator.min_fraction), actuator.max_fraction)
    if applied == actuator.current_fraction:
        return applied
    with actuator.backend._actuation_lock:
        actuator.backend.apply_limit(applied)
    actuator.current_fraction = applied
    return applied


class SamplingSession:
    """Collects per-domain samples until stopped, then yields the trace.

    Single producer, single consumer: one tick path appends samples and
    ``stop()`` finalises. A failed sensor read marks a gap at that
    timestamp instead of inventing a value.
    """

    def __init__(self, backend: Backend, period_s: float):
        if period_s <= 0:
            raise ValueError("sampling period must be positive")
        self.backend = backend
        self.period_s = period_s
        self.session_id = backend._next_session_id()
        self._samples: list[PowerSample] = []
        self._gaps: list[float] = []
        self._last_t = -np.inf
        self._stopped = False

    def _record(self, t: float) -> None:
        if t <= self._last_t + 1e-9:
            return
        for domain in ALL_DOMAINS:
            try:
                sample = read_power(self.backend, domain)
            except BackendUnavailable:
                self._gaps.append(t)
                continue
            # Stamp at the grid time; between state changes power is constant.
            self._samples.append(PowerSample(t=t, watts=sample.watts, domain=domain))
        self._last_t = t

    def _finalize(self) -> PowerTrace:
        return PowerTrace(samples=self._samples, session_id=self.session_id, gaps=self._gaps)

    def stop(self) -> PowerTrace:
        raise NotImplementedError


class VirtualSamplingSession(SamplingSession):
    """Sampler driven by a simulated backend's clock hooks.

    The backend invokes :meth:`on_clock` at every internal state boundary;
    the session emits samples for every due grid time in between. Because it
    rides the virtual clock, it adds no simulated time to the workload.
    """

    def __init__(self, backend: Backend, period_s: float):
        super().__init__(backend, period_s)
        self._start = backend.now()
        self._tick = 0
        self.on_clock(self._start)
        backend.register_clock_hook(self._hook)  # type: ignore[attr-defined]

    def _hook(self, t: float) -> None:
        self.on_clock(t)

    def on_clock(self, t: float) -> None:
        # Grid times are computed multiplicatively so long sessions don't drift.
        due = self._start + self._tick * self.period_s
        while due <= t + 1e-12:
            self._record(due)
            self._tick += 1
            due = self._start + self._tick * self.period_s

    def stop(self) -> PowerTrace:
        if self._stopped:
            raise RuntimeError("session already stopped")
        self._stopped = True
        self.backend.unregister_clock_hook(self._hook)  # type: ignore[attr-defined]
        self._record(self.backend.now())
        self.backend._release_sampler()
        return self._finalize()


class ThreadedSamplingSession(SamplingSession):
    """Wall-clock sampler for real backends, running in a daemon thread."""

    def __init__(self, backend: Backend, period_s: float):
        super().__init__(backend, period_s)
        self._stop_event = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        next_due = self.backend.now()
        while not self._stop_event.is_set():
            self._record(self.backend.now())
            next_due += self.period_s
            delay = next_due - self.backend.now()
            if delay > 0:
                self._stop_event.wait(delay)

    def stop(self) -> PowerTrace:
        if self._stopped:
            raise RuntimeError("session already stopped")
        self._stopped = True
        self._stop_event.set()
        self._thread.join()
        self._record(self.backend.now())
        self.backend._release_sampler()
        return self._finalize()


def start_sampler(backend: Backend, period_s: float) -> SamplingSession:
    """Begin periodic collection of all three domains on ``backend``.

    Virtual-clock backends get a hook-driven session; everything else runs a
    wall-clock thread. Only one session per backend may be active.

    Raises:
        AlreadyRunning: a session is already active on this backend.
    """
    backend._acquire_sampler()
    try:
        if hasattr(backend, "register_clock_hook"):
            return VirtualSamplingSession(backend, period_s)
        return ThreadedSamplingSession(backend, period_s)
    except Exception:
        backend._release_sampler()
        raise


_FLOAT_RE = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


class CommandBackend(Backend):
    """Backend that shells out to operator-supplied command templates.

    Each domain gets a ``read_power_cmd`` whose first output line must
    contain a number (watts); ``set_limit_cmd`` receives ``{limit_pct}``.
    Anything else — nonzero exit, empty output, no parseable number — is a
    sensor failure, never a substitute value.
    """

    name = "command"

    def __init__(
        self,
        read_cmds: Mapping[PowerDomain, str],
        set_limit_cmd: str | None = None,
        dimms: DimmSpec | None = None,
        timeout_s: float = 5.0,
    ):
        super().__init__(dimms=dimms)
        self.read_cmds = dict(read_cmds)
        self.set_limit_cmd = set_limit_cmd
        self.timeout_s = timeout_s
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def sleep(self, duration_s: float) -> None:
        time.sleep(duration_s)

    @property
    def has_dram_counter(self) -> bool:
        return PowerDomain.DRAM in self.read_cmds

    def _run(self, cmd: str) -> str:
        try:
            proc = subprocess.run(
                cmd, shell=True, capture_output=True, text=True, timeout=self.timeout_s
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise BackendUnavailable(f"command failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise BackendUnavailable(
                f"command exited {proc.returncode}: {cmd!r}"
            )
        return proc.stdout

    def read_domain_w(self, domain: PowerDomain) -> float:
        cmd = self.read_cmds.get(domain)
        if cmd is None:
            raise BackendUnavailable(f"no read command configured for {domain.value}")
        out = self._run(cmd)
        first_line = out.splitlines()[0] if out.splitlines() else ""
        match = _FLOAT_RE.search(first_line)
        if match is None:
            raise BackendUnavailable(
                f"no numeric reading on first output line: {first_line!r}"
            )
        return float(match.group(0))

    def apply_limit(self, fraction: float) -> None:
        if self.set_limit_cmd is None:
            raise ActuationFailed("no set_limit_cmd configured")
        cmd = self.set_limit_cmd.format(limit_pct=round(fraction * 100))
        try:
            self._run(cmd)
        except BackendUnavailable as exc:
            raise ActuationFailed(str(exc)) from exc


BackendFactory = Callable[[Mapping[str, str]], Backend]

_REGISTRY: dict[str, BackendFactory] = {}


def register_backend(name: str, factory: BackendFactory) -> None:
    """Add a backend factory to the registry. Read-mostly after import time."""
    _REGISTRY[name] = factory


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def create_backend(name: str, options: Mapping[str, str]) -> Backend:
    """Instantiate a registered backend from flat config options."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(
            f"unknown backend {name!r}; available: {', '.join(available_backends())}"
        ) from None
    return factory(options)


def _command_backend_from_options(options: Mapping[str, str]) -> CommandBackend:
    read_cmds: dict[PowerDomain, str] = {}
    for domain in ALL_DOMAINS:
        cmd = options.get(f"read_power_cmd.{domain.value}")
        if cmd:
            read_cmds[domain] = cmd
    if not read_cmds:
        raise ConfigError("command backend needs at least one read_power_cmd.<domain>")
    dimms = None
    if "dimm.count" in options:
        dimms = DimmSpec(
            n_dimm=int(options["dimm.count"]),
            size_gb=float(options.get("dimm.size_gb", "0") or 0),
            freq_mhz=float(options.get("dimm.freq_mhz", "0") or 0),
        )
    return CommandBackend(
        read_cmds=read_cmds,
        set_limit_cmd=options.get("set_limit_cmd"),
        dimms=dimms,
        timeout_s=float(options.get("command_timeout_s", "5.0")),
    )


register_backend("command", _command_backend_from_options)
