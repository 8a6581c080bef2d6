"""captune: energy-aware GPU power-cap tuning for ML pipelines.

Measures per-domain power, accounts phase energy net of the idle baseline,
probes a ladder of power caps, fits an energy-delay cost curve, and selects
the cap minimising the policy's energy-delay score. A deterministic device
simulator makes the whole pipeline testable without hardware.
"""

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
    MissingDomain,
    NotConverged,
    NotIntegrable,
    UnknownArchetype,
    UnknownFormat,
)
from .hal import (
    ALL_DOMAINS,
    CapActuator,
    CommandBackend,
    DimmSpec,
    PowerDomain,
    PowerSample,
    PowerTrace,
    available_backends,
    create_backend,
    estimate_dram_power,
    read_power,
    register_backend,
    set_power_limit,
    start_sampler,
)
from .energy import (
    EnergyBreakdown,
    IdleBaseline,
    PipelineAccount,
    account_pipeline,
    integrate_trace,
    measure_idle,
    net_energy,
    read_trace_csv,
    sum_domains,
    write_trace_csv,
)
from .simdev import (
    DeviceModel,
    EpochResult,
    SimBackend,
    VoltageCurve,
    WorkloadSpec,
    archetype,
    archetype_names,
    busy_power_w,
    effective_clock,
    frequency_at,
    run_epoch,
    setup_dimms,
    throughput_at,
)
from .profiler import (
    ProbePoint,
    ProbeSchedule,
    default_schedule,
    fine_sweep,
    read_probes_csv,
    run_sweep,
    write_probes_csv,
)
from .fitcore import (
    CurveCoefficients,
    CurveFit,
    SimplexOptions,
    curve_value,
    fit_cost_curve,
    locate_minimum,
    mean_squared_error,
    nelder_mead_minimize,
    sample_curve,
    sigmoid,
)
from .policy import (
    Decision,
    PolicyDoc,
    compare_exponents,
    decide,
    energy_delay_score,
    pareto_front,
    select_measured,
)
from .config import RunConfig, load_run_config, parse_config_text
from .report import (
    measure_overhead,
    pearson_r,
    render_report,
    run_pipeline,
    strip_volatile,
    summary_line,
    write_report,
)

__version__ = "0.1.0"
