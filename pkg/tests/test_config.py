import pytest
from hypothesis import given, strategies as st

from iotsynth.config import (
    ConfigError, TopologyConfig, BrokerSpec, parse_scenario_config, parse_topology_config,
    preset_kafka_attack, preset_mqttset, render_scenario_config, render_topology_config,
)

TOPO_10 = """
sensor_count: 10
mqtt_brokers:
  - security_mode: plaintext
"""


def topo10():
    return parse_topology_config(TOPO_10)


def test_ten_sensors_one_broker():
    cfg = topo10()
    assert cfg.sensor_count == 10
    assert len(cfg.mqtt_brokers) == 1
    assert cfg.mqtt_brokers[0].security_mode == "plaintext"


def test_empty_topology_is_valid():
    cfg = parse_topology_config("sensor_count: 0\nmqtt_brokers: []\n")
    assert cfg == TopologyConfig()
    assert parse_topology_config("") == TopologyConfig()


def test_negative_sensor_count_rejected():
    with pytest.raises(ConfigError, match="sensor_count"):
        parse_topology_config("sensor_count: -1\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key 'colour'"):
        parse_topology_config("sensor_count: 1\ncolour: red\n")


def test_syntax_error_has_line_number():
    with pytest.raises(ConfigError) as ei:
        parse_topology_config("sensor_count: 1\nmqtt_brokers: [\n  - a: b\n")
    assert ei.value.line is not None
    assert str(ei.value).startswith(f"line {ei.value.line}:")


def test_bad_security_mode():
    with pytest.raises(ConfigError, match="security_mode"):
        parse_topology_config("mqtt_brokers:\n  - security_mode: rot13\n")


def test_reserved_subnet_rejected():
    with pytest.raises(ConfigError, match="sensors subnet"):
        parse_topology_config("mqtt_brokers:\n  - subnet: 192.168.18.0/24\n")


def test_periodic_60_accepted():
    sc = parse_scenario_config(
        "duration_s: 600\nsensors:\n  sensor-3:\n    schedule: {periodic: 60}\n", topo10())
    s3 = sc.sensors[2]
    assert (s3.schedule, s3.interval_s) == ("periodic", 60.0)
    assert s3.active_windows == ((0, 600),)
    assert len(sc.sensors) == 10


def test_defaults_template_with_override():
    sc = parse_scenario_config(
        "duration_s: 100\nsensor_defaults:\n  schedule: {random: 2}\n"
        "sensors:\n  sensor-1:\n    schedule: {periodic: 5}\n", topo10())
    assert sc.sensors[0].schedule == "periodic"
    assert all(s.schedule == "random" and s.interval_s == 2 for s in sc.sensors[1:])


def test_unknown_sensor_rejected():
    with pytest.raises(ConfigError, match="unknown sensor id 'sensor-11'"):
        parse_scenario_config("sensors:\n  sensor-11: {}\n", topo10())


def test_malformed_window_rejected():
    with pytest.raises(ConfigError, match="window end"):
        parse_scenario_config(
            "duration_s: 100\nsensors:\n  sensor-1:\n    active_windows: [[50, 10]]\n", topo10())
    with pytest.raises(ConfigError, match="non-overlapping"):
        parse_scenario_config(
            "duration_s: 100\nsensors:\n  sensor-1:\n    active_windows: [[0, 50], [40, 60]]\n",
            topo10())


def test_ddos_parameters_accepted():
    tcfg, _ = preset_kafka_attack(20)
    sc = parse_scenario_config(
        "duration_s: 1800\nattack:\n  ddos:\n    flood_connections: 100\n"
        "    flood_message_bytes: 10\n    slow_connections: 2400\n"
        "    target_broker_address: 192.168.2.1\n", tcfg)
    d = sc.attack.ddos
    assert (d.flood_connections, d.flood_message_bytes, d.slow_connections) == (100, 10, 2400)
    assert d.target_broker_address == "192.168.2.1"


def test_fraction_out_of_range():
    tcfg, _ = preset_kafka_attack(20)
    with pytest.raises(ConfigError, match="compromised_fraction"):
        parse_scenario_config("duration_s: 100\nattack:\n  compromised_fraction: 1.5\n", tcfg)


def test_step_chain_rules():
    tcfg, _ = preset_kafka_attack(20)
    with pytest.raises(ConfigError, match="prefix-closed"):
        parse_scenario_config("duration_s: 100\nattack:\n  enabled_steps: [1, 3]\n"
                              "  inter_step_sleep_s: [1]\n", tcfg)
    sc = parse_scenario_config("duration_s: 100\nattack:\n  skip_to_ddos: true\n", tcfg)
    assert sc.attack.enabled_steps == (6,)
    with pytest.raises(ConfigError, match=r"\[6\]"):
        parse_scenario_config("duration_s: 100\nattack:\n  skip_to_ddos: true\n"
                              "  enabled_steps: [1]\n", tcfg)


def test_dangling_attacker_rejected():
    tcfg, _ = preset_kafka_attack(20)
    with pytest.raises(ConfigError, match="unknown node 'mallory'"):
        parse_scenario_config("duration_s: 100\nattack:\n  attacker: mallory\n", tcfg)


def test_capture_needs_one_target():
    with pytest.raises(ConfigError, match="exactly one"):
        parse_scenario_config("capture:\n  - probe: p\n", topo10())


def test_mqttset_preset():
    tcfg, sc = preset_mqttset()
    assert tcfg.sensor_count == 10 and len(tcfg.mqtt_brokers) == 1
    s3, s8 = sc.sensors[2], sc.sensors[7]
    assert s3.schedule == "periodic" and s3.interval_s in (60, 120, 180)
    assert (s8.schedule, s8.interval_s) == ("random", 1.0)
    assert sum(s.schedule == "periodic" for s in sc.sensors) == 5
    kinds = [t.kind for t in sc.traces]
    assert kinds == [None, "publish_flood", "flood_dos", "slowite", "malformed",
                     "auth_bruteforce"]


def test_kafka_attack_preset():
    tcfg, sc = preset_kafka_attack()
    assert tcfg.sensor_count == 450
    assert [b.security_mode for b in tcfg.mqtt_brokers] == ["plaintext", "auth", "tls"]
    assert tcfg.kafka_broker_count == 1 and tcfg.has_kafka_connect and tcfg.has_client_connect
    assert sc.duration_s == 1800
    assert sc.attack.enabled_steps == (1, 2, 3, 4, 5, 6)
    assert sc.attack.compromised_fraction == 0.5
    assert len(sc.capture) == 3


@pytest.mark.parametrize("preset", [preset_mqttset, lambda: preset_kafka_attack(60)])
def test_preset_round_trip(preset):
    tcfg, sc = preset()
    t2 = parse_topology_config(render_topology_config(tcfg))
    assert t2 == tcfg
    assert parse_scenario_config(render_scenario_config(sc), t2) == sc


@given(n=st.integers(0, 450), modes=st.lists(st.sampled_from(["plaintext", "auth", "tls"]),
                                              max_size=4),
       kafka=st.integers(0, 1), kc=st.booleans(), cc=st.booleans())
def test_topology_round_trip_property(n, modes, kafka, kc, cc):
    cfg = TopologyConfig(n, tuple(BrokerSpec(m) for m in modes), kafka, kc, cc)
    assert parse_topology_config(render_topology_config(cfg)) == cfg


@given(period=st.floats(0.01, 1e4), mean=st.floats(0.01, 1e4),
       lo=st.integers(0, 100), span=st.integers(1, 1000))
def test_scenario_round_trip_property(period, mean, lo, span):
    text = (f"duration_s: {lo + span + 10}\nsensors:\n"
            f"  sensor-1:\n    schedule: {{periodic: {period!r}}}\n"
            f"    active_windows: [[{lo}, {lo + span}]]\n"
            f"  sensor-2:\n    schedule: {{random: {mean!r}}}\n")
    sc = parse_scenario_config(text, topo10())
    assert parse_scenario_config(render_scenario_config(sc), topo10()) == sc
