import numpy as np
import pytest
from config import get_settings
from routes.carbon.controller import constant_timeline
from routes.carbon.model import EnergyProfile
from routes.engine.model import SimConfig
from routes.trace.model import Invocation


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return

    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    monkeypatch.setenv("KEEPALIVE_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.delenv("KEEPALIVE_PROFILES_FILE", raising=False)
    monkeypatch.delenv("KEEPALIVE_SENTRY_DSN", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def profile() -> EnergyProfile:
    # j_cpu = 3 W/core, j_dram = 0.001 W/MB: 3.1 W active for 100 MB on one core
    return EnergyProfile(name="test", j_cpu_core_w=3.0, j_dram_mb_w=0.001, lambda_idle=0.2, p_cold_w_per_core=3.0)


@pytest.fixture
def make_cfg(profile):
    def factory(**updates) -> SimConfig:
        values = {
            "profile": profile,
            "timeline": constant_timeline(500.0),
            "sigma_l": 1.0,
            "sigma_c": 1.0,
        }
        values.update(updates)
        return SimConfig(**values)

    return factory


@pytest.fixture
def sim_cfg(make_cfg) -> SimConfig:
    return make_cfg()


@pytest.fixture
def make_invocation():
    def factory(
        ts_s: float,
        pod: str = "p1",
        function: str = "f1",
        exec_ms: int = 0,
        cold_ms: float | None = 100.0,
        mem_mb: float = 100.0,
        cpu_cores: float = 1.0,
        runtime: str = "python",
        trigger: str = "http",
    ) -> Invocation:
        return Invocation(
            ts_ms=int(round(ts_s * 1000)),
            function_id=function,
            pod_id=pod,
            cpu_cores=cpu_cores,
            mem_mb=mem_mb,
            exec_ms=exec_ms,
            runtime_tag=runtime,
            trigger_tag=trigger,
            cold_ms=cold_ms,
        )

    return factory


@pytest.fixture
def random_trace():
    """Small random multi-pod traces, gaps spread across the default action set"""

    def factory(seed: int, n_pods: int = 3, max_per_pod: int = 20) -> list[Invocation]:
        rng = np.random.default_rng(seed)
        rows = []
        for p in range(n_pods):
            count = int(rng.integers(1, max_per_pod + 1))
            gaps = rng.choice([0.5, 3.0, 7.0, 20.0, 45.0, 90.0], size=count) * rng.uniform(0.8, 1.2, size=count)
            times = np.cumsum(gaps)
            cpu = round(float(rng.uniform(0.5, 2.0)), 2)
            mem = round(float(rng.uniform(128, 1024)), 1)
            for t in times:
                rows.append(
                    Invocation(
                        ts_ms=int(t * 1000),
                        function_id=f"fn-{p}",
                        pod_id=f"pod-{p}",
                        cpu_cores=cpu,
                        mem_mb=mem,
                        exec_ms=int(rng.integers(10, 300)),
                        runtime_tag="python",
                        trigger_tag="http",
                        cold_ms=round(float(rng.uniform(100, 1000)), 1),
                    )
                )
        rows.sort(key=lambda i: i.ts_ms)
        return rows

    return factory
