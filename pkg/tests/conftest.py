import pytest

from captune.hal import DimmSpec, PowerDomain
from captune.simdev import DeviceModel, SimBackend, VoltageCurve, WorkloadSpec


@pytest.fixture
def quiet_device() -> DeviceModel:
    """A noiseless device so contracts can be checked exactly."""
    return DeviceModel(
        tdp_w=320.0,
        idle_w={PowerDomain.CPU: 15.0, PowerDomain.GPU: 25.0, PowerDomain.DRAM: 0.0},
        v_of_f=VoltageCurve(1.0, 0.5),
        noise_sigma=0.0,
        seed=7,
    )


@pytest.fixture
def noisy_device() -> DeviceModel:
    return DeviceModel(
        tdp_w=320.0,
        idle_w={PowerDomain.CPU: 15.0, PowerDomain.GPU: 25.0, PowerDomain.DRAM: 0.0},
        v_of_f=VoltageCurve(1.0, 0.5),
        noise_sigma=0.02,
        seed=11,
    )


@pytest.fixture
def heavy_workload() -> WorkloadSpec:
    return WorkloadSpec(
        name="heavy", samples_per_epoch=200, compute_intensity=0.05,
        membound_fraction=0.3, base_util=0.95,
    )


@pytest.fixture
def quiet_backend(quiet_device) -> SimBackend:
    return SimBackend(quiet_device, dimms=DimmSpec(4, 16.0))
