import functools
import os

import pytest
from hypothesis import HealthCheck, settings

from iotsynth.config import preset_kafka_attack, preset_mqttset, trace_jobs
from iotsynth.engine import run_trace
from iotsynth.topology import build_topology

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@functools.lru_cache(maxsize=None)
def attack_run(sensors: int = 40, seed: int = 1):
    tcfg, scen = preset_kafka_attack(sensors)
    topo = build_topology(tcfg, seed)
    return topo, scen, run_trace(topo, scen, seed)


@functools.lru_cache(maxsize=None)
def mqttset_run(trace: str = "legitimate", seed: int = 1):
    tcfg, scen = preset_mqttset()
    topo = build_topology(tcfg, seed)
    job = next(j for j in trace_jobs(scen) if j.name == trace)
    return topo, scen, run_trace(topo, scen, seed, job)


@pytest.fixture(scope="session")
def attack40():
    return attack_run()


@pytest.fixture(scope="session")
def mqttset_legit():
    return mqttset_run("legitimate")
