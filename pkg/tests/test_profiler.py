import numpy as np
import pytest

from captune.energy import measure_idle, net_energy
from captune.errors import ActuationFailed
from captune.hal import CapActuator, set_power_limit
from captune.policy import energy_delay_score
from captune.profiler import (
    ProbePoint,
    ProbeSchedule,
    default_schedule,
    fine_sweep,
    read_probes_csv,
    run_sweep,
    write_probes_csv,
)
from captune.simdev import SimBackend, archetype, setup_dimms


@pytest.fixture
def sim_context():
    device, workload = archetype("mobilenet-like")
    backend = SimBackend(device, dimms=setup_dimms())
    baseline = measure_idle(backend, 10.0)
    return backend, workload, baseline


class TestSchedule:
    def test_default_has_eight_limits_step_ten_percent(self):
        sched = default_schedule()
        assert len(sched.limits) == 8
        assert sched.limits[0] == 0.3
        assert sched.limits[-1] == 1.0
        steps = np.diff(sched.limits)
        assert np.allclose(steps, 0.1)

    def test_default_durations(self):
        sched = default_schedule()
        assert sched.probe_duration_s == 30.0
        assert sched.warmup_s == 2.0

    def test_limits_must_increase(self):
        with pytest.raises(ValueError):
            ProbeSchedule(limits=(0.5, 0.5))
        with pytest.raises(ValueError):
            ProbeSchedule(limits=(0.5, 0.4))

    def test_limits_must_be_fractions(self):
        with pytest.raises(ValueError):
            ProbeSchedule(limits=(0.5, 1.2))

    def test_warmup_shorter_than_probe(self):
        with pytest.raises(ValueError):
            ProbeSchedule(limits=(0.5,), probe_duration_s=2.0, warmup_s=2.0)


class TestProbePoint:
    def test_derived_fields(self):
        p = ProbePoint.from_measurement(limit=0.5, energy_j=900.0, duration_s=30.0, samples=300)
        assert p.energy_per_sample_j == pytest.approx(3.0)
        assert p.throughput_sps == pytest.approx(10.0)
        assert p.delay_per_sample_s == pytest.approx(0.1)

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            ProbePoint.from_measurement(limit=0.5, energy_j=0.0, duration_s=30.0, samples=300)


class TestRunSweep:
    def test_default_schedule_yields_eight_points_in_order(self, sim_context):
        backend, workload, baseline = sim_context
        points = run_sweep(backend, workload, default_schedule(), baseline)
        assert len(points) == 8
        assert [p.limit_fraction for p in points] == list(default_schedule().limits)

    def test_deterministic_given_seed(self):
        results = []
        for _ in range(2):
            device, workload = archetype("mobilenet-like")
            backend = SimBackend(device, dimms=setup_dimms())
            baseline = measure_idle(backend, 10.0)
            results.append(run_sweep(backend, workload, default_schedule(), baseline))
        assert results[0] == results[1]

    def test_cap_restored_after_sweep(self, sim_context):
        backend, workload, baseline = sim_context
        actuator = CapActuator(backend)
        set_power_limit(actuator, 0.85)
        run_sweep(backend, workload, default_schedule(), baseline, actuator)
        assert actuator.current_fraction == 0.85
        assert backend.current_limit == 0.85

    def test_actuation_failure_discards_results_and_restores(self, sim_context):
        backend, workload, baseline = sim_context
        actuator = CapActuator(backend)
        set_power_limit(actuator, 0.9)
        backend.fail_apply_after = 3
        with pytest.raises(ActuationFailed):
            run_sweep(backend, workload, default_schedule(), baseline, actuator)
        assert backend.current_limit == 0.9

    def test_energy_matches_offline_recompute(self, sim_context):
        backend, workload, baseline = sim_context
        traces = []
        points = run_sweep(
            backend, workload, default_schedule(), baseline, trace_sink=traces
        )
        for point, trace in zip(points, traces):
            offline = net_energy(trace, baseline)
            assert point.energy_j == pytest.approx(offline.total_j, rel=1e-12)

    def test_total_sweep_time_near_schedule_budget(self, sim_context):
        backend, workload, baseline = sim_context
        sched = default_schedule()
        t0 = backend.now()
        run_sweep(backend, workload, sched, baseline)
        elapsed = backend.now() - t0
        budget = len(sched.limits) * sched.probe_duration_s
        assert abs(elapsed - budget) <= 0.05 * budget

    def test_warmup_excluded_from_measurement(self, sim_context):
        backend, workload, baseline = sim_context
        sched = ProbeSchedule(limits=(0.6,), probe_duration_s=10.0, warmup_s=2.0)
        points = run_sweep(backend, workload, sched, baseline)
        assert points[0].duration_s <= 8.0 + 1e-9

    def test_measured_argmin_near_curve_bottom(self, sim_context):
        backend, workload, baseline = sim_context
        points = run_sweep(backend, workload, default_schedule(), baseline)
        scores = [energy_delay_score(p, 1) for p in points]
        best = points[int(np.argmin(scores))].limit_fraction
        assert abs(best - 0.6) <= 0.1 + 1e-9  # within one schedule step


class TestFineSweep:
    def test_point_count(self, sim_context):
        backend, workload, baseline = sim_context
        points = fine_sweep(
            backend, workload, 0.3, 1.0, 0.01, baseline, probe_duration_s=2.0, warmup_s=0.0
        )
        assert len(points) == 71
        assert points[0].limit_fraction == 0.3
        assert points[-1].limit_fraction == 1.0

    def test_zero_step_rejected(self, sim_context):
        backend, workload, baseline = sim_context
        with pytest.raises(ValueError):
            fine_sweep(backend, workload, 0.3, 1.0, 0.0, baseline)

    def test_dense_argmin_close_to_fitted_choice(self):
        from captune.policy import PolicyDoc, decide

        device, workload = archetype("mobilenet-like")
        backend = SimBackend(device, dimms=setup_dimms())
        baseline = measure_idle(backend, 10.0)
        coarse = run_sweep(backend, workload, default_schedule(), baseline)
        decision = decide(coarse, PolicyDoc(m=1))
        dense = fine_sweep(
            backend, workload, 0.3, 1.0, 0.01, baseline, probe_duration_s=6.0, warmup_s=0.5
        )
        scores = [energy_delay_score(p, 1) for p in dense]
        dense_best = dense[int(np.argmin(scores))].limit_fraction
        assert abs(decision.chosen_limit - dense_best) <= 0.05


class TestProbesCsv:
    def test_round_trip_and_header(self, tmp_path, sim_context):
        backend, workload, baseline = sim_context
        points = run_sweep(backend, workload, default_schedule(), baseline)
        path = tmp_path / "probes.csv"
        write_probes_csv(points, path)
        header = path.read_text().splitlines()[0]
        assert header == "limit,energy_j,duration_s,samples,energy_per_sample_j,throughput_sps"
        assert read_probes_csv(path) == points
