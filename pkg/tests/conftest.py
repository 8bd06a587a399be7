import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.core.deps import get_worker_count
from app.schemas.grid import CarrierConfig, DDGrid
from app.schemas.scenario import ScenarioConfig, TargetSpec
from main import app


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-size runs; deselect with -m \"not slow\"")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return DDGrid(M=8, N=4, delta_f=6e3)


@pytest.fixture
def reference_grid():
    return DDGrid(M=128, N=20, delta_f=6e3)


@pytest.fixture
def carrier():
    return CarrierConfig(f_c=3e9)


@pytest.fixture
def scenario_factory():
    """
    Scenario on a 16x8 grid with 8-element BS arrays. The default target
    sits at comm delay bin 1 and echo delay bin 2, about 14 degrees off
    boresight.
    """

    def _make(**overrides) -> ScenarioConfig:
        values = dict(
            M=16,
            N=8,
            n_tx=8,
            n_rx=8,
            n_ue=2,
            snr_grid_db=[0.0, 6.0],
            trials=2,
            blocks_per_trial=3,
            seed=11,
            pilot_max_delay=2,
            pilot_max_doppler=1,
            targets=[TargetSpec(position=(600.0, 2400.0))],
        )
        values.update(overrides)
        return ScenarioConfig(**values)

    return _make


@pytest.fixture
def client():
    app.dependency_overrides[get_worker_count] = lambda: 1
    with TestClient(app) as test_client:
        yield test_client
    app.dependency_overrides.clear()
