"""Topology and scenario configuration: schema, parsing, rendering and presets.

Both documents are YAML mappings. Parsing rejects unknown keys and reports the
first violated invariant; ``render_*`` emits text that parses back to an equal
configuration.
"""

from __future__ import annotations

import ipaddress
import random
from dataclasses import dataclass, field, replace

import yaml

SECURITY_MODES = ("plaintext", "auth", "tls")
ATTACK_LABELS = ("cve_exploitation", "reverse_shell", "scan_ports", "credentials_bruteforce",
                 "transfer_payload_to_iot", "mqttsa_slowite")
MQTTSET_KINDS = ("publish_flood", "flood_dos", "slowite", "malformed", "auth_bruteforce")
MQTTSET_LABELS = {
    "publish_flood": "mqttsa_slowite",
    "flood_dos": "mqttsa_slowite",
    "slowite": "mqttsa_slowite",
    "malformed": "cve_exploitation",
    "auth_bruteforce": "credentials_bruteforce",
}
FCSIZE_UNITS = {"B": 1, "KB": 1024, "MB": 1024 * 1024}
PRESET_PERIODS_S = (0.5, 1, 2, 5, 10, 12, 15, 20, 30, 60)
PRESET_SEED = 20231
MQTTSET_PERIODS_S = (60.0, 120.0, 180.0, 60.0, 120.0)


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is set for syntax errors."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class BrokerSpec:
    security_mode: str = "plaintext"
    subnet: str | None = None


@dataclass(frozen=True)
class TopologyConfig:
    sensor_count: int = 0
    mqtt_brokers: tuple[BrokerSpec, ...] = ()
    kafka_broker_count: int = 0
    has_kafka_connect: bool = False
    has_client_connect: bool = False
    router_count: int | None = None
    switch_count: int | None = None


@dataclass(frozen=True)
class SensorBehavior:
    sensor_id: str
    schedule: str = "periodic"
    interval_s: float = 60.0
    active_windows: tuple[tuple[float, float], ...] = ()
    dataset_source: str = "builtin"
    columns: tuple[str, ...] = ("temperature",)
    target_broker_id: str = "broker-1"
    messages_per_connection: int = 1


@dataclass(frozen=True)
class ScanConfig:
    port: int = 22
    max_rate_pps: float = 0.7
    target_ranges: tuple[str, ...] = ("192.168.18-20.10-150",)


@dataclass(frozen=True)
class BruteforceConfig:
    parallel_tasks: int = 2
    max_parallel_targets: int = 32
    username_dict_size: int = 5
    password_dict_size: int = 6
    success_credentials: tuple[str, str] = ("pi", "raspberry")
    auth_delay_s: float = 0.25


@dataclass(frozen=True)
class PayloadConfig:
    payload_bytes: int = 262144
    tools_bytes: int = 2_097_152


@dataclass(frozen=True)
class DdosConfig:
    flood_connections: int = 100
    flood_message_bytes: int = 10
    slow_connections: int = 2400
    target_broker_address: str = "192.168.2.1"
    fcsize_unit: str = "KB"
    flood_spacing_s: float = 0.01
    slow_spacing_s: float = 0.04
    keep_alive_s: int = 65535


@dataclass(frozen=True)
class AttackConfig:
    enabled_steps: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    start_s: float = 60.0
    inter_step_sleep_s: tuple[float, ...] = (30, 30, 30, 30, 400)
    compromised_fraction: float = 0.5
    attacker: str = "client-connect"
    pivot: str = "kafka-connect"
    scan: ScanConfig = field(default_factory=ScanConfig)
    bruteforce: BruteforceConfig = field(default_factory=BruteforceConfig)
    payload_transfer: PayloadConfig = field(default_factory=PayloadConfig)
    ddos: DdosConfig = field(default_factory=DdosConfig)
    skip_to_ddos: bool = False


@dataclass(frozen=True)
class BrokerModel:
    capacity_events_per_s: int = 500
    max_queue: int = 1000
    max_connections: int = 16384
    connect_timeout_s: float = 5.0
    give_up_after: int = 3


@dataclass(frozen=True)
class BackgroundConfig:
    ntp_period_s: float = 300.0
    dns_ttl_s: float = 300.0
    ping_period_s: float = 600.0


@dataclass(frozen=True)
class BridgeConfig:
    poll_period_s: float = 5.0
    zookeeper_period_s: float = 6.0


@dataclass(frozen=True)
class TraceJob:
    name: str
    duration_s: float
    kind: str | None = None
    attack_start_s: float = 60.0
    attack_end_s: float | None = None
    params: tuple[tuple[str, float], ...] = ()

    def param(self, key: str, default):
        return dict(self.params).get(key, default)


@dataclass(frozen=True)
class ProbeSpec:
    probe_id: str
    node: str | None = None
    link: tuple[str, str] | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    duration_s: float = 0.0
    sensors: tuple[SensorBehavior, ...] = ()
    attack: AttackConfig | None = None
    traces: tuple[TraceJob, ...] = ()
    capture: tuple[ProbeSpec, ...] = ()
    latency_us: int = 500
    bandwidth_mbps: float = 100.0
    broker_model: BrokerModel = field(default_factory=BrokerModel)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    sensor_credentials: tuple[str, str] = ("iot-sensor", "s3nsor-pass")
    connector_post_s: float = 2.0


# ---------------------------------------------------------------- helpers

def _load(text: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"syntax error: {getattr(exc, 'problem', exc)}", line) from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("document must be a mapping")
    return doc


def _keys(section: str, doc: dict, allowed) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{section}: expected a mapping")
    extra = sorted(set(doc) - set(allowed))
    if extra:
        raise ConfigError(f"{section}: unknown key {extra[0]!r}")


def _int(section: str, v, lo: int = 0) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{section} must be an integer")
    if v < lo:
        raise ConfigError(f"{section} must be >= {lo}")
    return v


def _num(section: str, v, lo: float = 0.0, strict: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{section} must be a number")
    if v < lo or (strict and v <= lo):
        raise ConfigError(f"{section} must be {'>' if strict else '>='} {lo}")
    return v


def _bool(section: str, v) -> bool:
    if not isinstance(v, bool):
        raise ConfigError(f"{section} must be true or false")
    return v


def _str_list(section: str, v) -> tuple[str, ...]:
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise ConfigError(f"{section} must be a list of strings")
    return tuple(v)


def _windows(section: str, v) -> tuple[tuple[float, float], ...]:
    if not isinstance(v, list):
        raise ConfigError(f"{section} must be a list of [start, end] pairs")
    out = []
    for w in v:
        if not isinstance(w, list) or len(w) != 2:
            raise ConfigError(f"{section}: malformed window {w!r}")
        a = _num(section, w[0])
        b = _num(section, w[1])
        if b <= a:
            raise ConfigError(f"{section}: window end must exceed start")
        if out and a < out[-1][1]:
            raise ConfigError(f"{section}: windows must be sorted and non-overlapping")
        out.append((a, b))
    return tuple(out)


def broker_ids(cfg: TopologyConfig) -> list[str]:
    return [f"broker-{i + 1}" for i in range(len(cfg.mqtt_brokers))]


def sensor_ids(cfg: TopologyConfig) -> list[str]:
    return [f"sensor-{i + 1}" for i in range(cfg.sensor_count)]


def default_broker_subnet(index: int) -> str:
    return f"192.168.{2 + index}.0/24"


RESERVED_SUBNETS = {
    "192.168.1.0/24": "infrastructure",
    "192.168.10.0/24": "kafka",
    "192.168.18.0/24": "sensors",
    "192.168.19.0/24": "sensors",
    "192.168.20.0/24": "sensors",
}


# ---------------------------------------------------------------- topology

_TOPO_KEYS = ("sensor_count", "mqtt_brokers", "kafka_broker_count", "has_kafka_connect",
              "has_client_connect", "router_count", "switch_count")


def topology_from_dict(doc: dict) -> TopologyConfig:
    _keys("topology", doc, _TOPO_KEYS)
    brokers = []
    seen = set()
    raw_brokers = doc.get("mqtt_brokers", [])
    if not isinstance(raw_brokers, list):
        raise ConfigError("mqtt_brokers must be a list")
    for i, b in enumerate(raw_brokers):
        _keys(f"mqtt_brokers[{i}]", b, ("security_mode", "subnet"))
        mode = b.get("security_mode", "plaintext")
        if mode not in SECURITY_MODES:
            raise ConfigError(f"mqtt_brokers[{i}].security_mode must be one of {SECURITY_MODES}")
        subnet = b.get("subnet")
        net_text = subnet or default_broker_subnet(i)
        try:
            net = ipaddress.ip_network(net_text)
        except ValueError as exc:
            raise ConfigError(f"mqtt_brokers[{i}].subnet is not a network: {exc}") from None
        if net.prefixlen != 24 or net.version != 4:
            raise ConfigError(f"mqtt_brokers[{i}].subnet must be an IPv4 /24")
        if str(net) in RESERVED_SUBNETS:
            raise ConfigError(f"mqtt_brokers[{i}].subnet collides with the "
                              f"{RESERVED_SUBNETS[str(net)]} subnet")
        if str(net) in seen:
            raise ConfigError(f"at most one broker per subnet ({net})")
        seen.add(str(net))
        brokers.append(BrokerSpec(mode, str(net) if subnet is not None else None))
    kafka = _int("kafka_broker_count", doc.get("kafka_broker_count", 0))
    if kafka > 1:
        raise ConfigError("kafka_broker_count must be 0 or 1")
    rc = doc.get("router_count")
    sc = doc.get("switch_count")
    return TopologyConfig(
        sensor_count=_int("sensor_count", doc.get("sensor_count", 0)),
        mqtt_brokers=tuple(brokers),
        kafka_broker_count=kafka,
        has_kafka_connect=_bool("has_kafka_connect", doc.get("has_kafka_connect", False)),
        has_client_connect=_bool("has_client_connect", doc.get("has_client_connect", False)),
        router_count=None if rc is None else _int("router_count", rc),
        switch_count=None if sc is None else _int("switch_count", sc),
    )


def parse_topology_config(text: str) -> TopologyConfig:
    return topology_from_dict(_load(text))


def topology_to_dict(cfg: TopologyConfig) -> dict:
    doc = {
        "sensor_count": cfg.sensor_count,
        "mqtt_brokers": [
            {"security_mode": b.security_mode, **({"subnet": b.subnet} if b.subnet else {})}
            for b in cfg.mqtt_brokers
        ],
        "kafka_broker_count": cfg.kafka_broker_count,
        "has_kafka_connect": cfg.has_kafka_connect,
        "has_client_connect": cfg.has_client_connect,
    }
    if cfg.router_count is not None:
        doc["router_count"] = cfg.router_count
    if cfg.switch_count is not None:
        doc["switch_count"] = cfg.switch_count
    return doc


def render_topology_config(cfg: TopologyConfig) -> str:
    return yaml.safe_dump(topology_to_dict(cfg), sort_keys=False)


# ---------------------------------------------------------------- scenario

_SENSOR_KEYS = ("schedule", "active_windows", "dataset", "columns", "broker",
                "messages_per_connection")


def _schedule(section: str, v) -> tuple[str, float]:
    if not isinstance(v, dict) or len(v) != 1:
        raise ConfigError(f"{section}.schedule must be {{periodic: s}} or {{random: s}}")
    (kind, val), = v.items()
    if kind == "periodic":
        return kind, _num(f"{section}.schedule.periodic (period_s)", val, strict=True)
    if kind == "random":
        return kind, _num(f"{section}.schedule.random (mean_s)", val, strict=True)
    raise ConfigError(f"{section}.schedule kind must be periodic or random")


def _sensor(sid: str, base: dict, override: dict, brokers: list[str], duration: float) -> SensorBehavior:
    _keys(f"sensors.{sid}", override, _SENSOR_KEYS)
    merged = {**base, **override}
    sched = merged.get("schedule", {"periodic": 60})
    kind, interval = _schedule(f"sensors.{sid}", sched)
    windows = _windows(f"sensors.{sid}.active_windows",
                       merged.get("active_windows", [[0, duration]] if duration > 0 else []))
    cols = _str_list(f"sensors.{sid}.columns", merged.get("columns", ["temperature"]))
    if not cols:
        raise ConfigError(f"sensors.{sid}.columns must be non-empty")
    broker = merged.get("broker", brokers[0] if brokers else None)
    if broker not in brokers:
        raise ConfigError(f"sensors.{sid}.broker references unknown broker {broker!r}")
    dataset = merged.get("dataset", "builtin")
    if not isinstance(dataset, str):
        raise ConfigError(f"sensors.{sid}.dataset must be a path or 'builtin'")
    mpc = _int(f"sensors.{sid}.messages_per_connection", merged.get("messages_per_connection", 1), 1)
    return SensorBehavior(sid, kind, float(interval), windows, dataset, cols, broker, mpc)


def _sub(section: str, doc, cls, casts: dict):
    if doc is None:
        return cls()
    _keys(section, doc, casts)
    kw = {}
    for k, cast in casts.items():
        if k in doc:
            kw[k] = cast(f"{section}.{k}", doc[k])
    return cls(**kw)


def _pos_num(s, v):
    return _num(s, v, strict=True)


def _nonneg_num(s, v):
    return _num(s, v)


def _pos_int(s, v):
    return _int(s, v, 1)


def _nonneg_int(s, v):
    return _int(s, v)


def _pair(s, v):
    t = _str_list(s, v)
    if len(t) != 2:
        raise ConfigError(f"{s} must be [username, password]")
    return t


def _address(s, v):
    try:
        return str(ipaddress.IPv4Address(v))
    except (ValueError, TypeError):
        raise ConfigError(f"{s} must be an IPv4 address") from None


def _unit(s, v):
    if v not in FCSIZE_UNITS:
        raise ConfigError(f"{s} must be one of {tuple(FCSIZE_UNITS)}")
    return v


def _port(s, v):
    p = _int(s, v, 1)
    if p > 65535:
        raise ConfigError(f"{s} must be <= 65535")
    return p


def _ranges(s, v):
    from .attack import expand_range
    t = _str_list(s, v)
    for r in t:
        try:
            expand_range(r)
        except ValueError as exc:
            raise ConfigError(f"{s}: {exc}") from None
    return t


_SCAN = {"port": _port, "max_rate_pps": _pos_num, "target_ranges": _ranges}
_BRUTE = {"parallel_tasks": _pos_int, "max_parallel_targets": _pos_int,
          "username_dict_size": _pos_int, "password_dict_size": _pos_int,
          "success_credentials": _pair, "auth_delay_s": _nonneg_num}
_PAYLOAD = {"payload_bytes": _pos_int, "tools_bytes": _pos_int}
_DDOS = {"flood_connections": _nonneg_int, "flood_message_bytes": _nonneg_int,
         "slow_connections": _nonneg_int, "target_broker_address": _address,
         "fcsize_unit": _unit, "flood_spacing_s": _nonneg_num, "slow_spacing_s": _pos_num,
         "keep_alive_s": _nonneg_int}
_ATTACK_KEYS = ("enabled_steps", "start_s", "inter_step_sleep_s", "compromised_fraction",
                "attacker", "pivot", "scan", "bruteforce", "payload_transfer", "ddos",
                "skip_to_ddos")


def _attack(doc, node_ids: set, duration: float) -> AttackConfig:
    _keys("attack", doc, _ATTACK_KEYS)
    skip = _bool("attack.skip_to_ddos", doc.get("skip_to_ddos", False))
    steps = doc.get("enabled_steps", [6] if skip else [1, 2, 3, 4, 5, 6])
    if not isinstance(steps, list) or not all(isinstance(s, int) and not isinstance(s, bool)
                                              for s in steps):
        raise ConfigError("attack.enabled_steps must be a list of step numbers")
    steps = tuple(steps)
    if skip:
        if steps != (6,):
            raise ConfigError("attack.enabled_steps must be [6] when skip_to_ddos is set")
    elif steps != tuple(range(1, len(steps) + 1)) or len(steps) > 6:
        raise ConfigError("attack.enabled_steps must be a prefix-closed chain 1..k of steps 1..6")
    sleeps = doc.get("inter_step_sleep_s", [30] * max(len(steps) - 1, 0))
    if not isinstance(sleeps, list) or len(sleeps) != max(len(steps) - 1, 0):
        raise ConfigError("attack.inter_step_sleep_s needs one entry per step boundary")
    sleeps = tuple(_num("attack.inter_step_sleep_s", s) for s in sleeps)
    frac = _num("attack.compromised_fraction", doc.get("compromised_fraction", 0.5))
    if frac > 1:
        raise ConfigError("attack.compromised_fraction must be in [0, 1]")
    start = _num("attack.start_s", doc.get("start_s", 60.0))
    if duration and start >= duration:
        raise ConfigError("attack.start_s must be inside the scenario duration")
    roles = {}
    for role, default in (("attacker", "client-connect"), ("pivot", "kafka-connect")):
        v = doc.get(role, default)
        if v not in node_ids:
            raise ConfigError(f"attack.{role} references unknown node {v!r}")
        roles[role] = v
    return AttackConfig(
        enabled_steps=steps, start_s=start, inter_step_sleep_s=sleeps,
        compromised_fraction=frac, skip_to_ddos=skip, **roles,
        scan=_sub("attack.scan", doc.get("scan"), ScanConfig, _SCAN),
        bruteforce=_sub("attack.bruteforce", doc.get("bruteforce"), BruteforceConfig, _BRUTE),
        payload_transfer=_sub("attack.payload_transfer", doc.get("payload_transfer"),
                              PayloadConfig, _PAYLOAD),
        ddos=_sub("attack.ddos", doc.get("ddos"), DdosConfig, _DDOS),
    )


def _trace(i: int, doc) -> TraceJob:
    _keys(f"traces[{i}]", doc, ("name", "duration_s", "kind", "attack_start_s",
                                "attack_end_s", "params"))
    name = doc.get("name")
    if not isinstance(name, str) or not name or "/" in name:
        raise ConfigError(f"traces[{i}].name must be a plain non-empty string")
    kind = doc.get("kind")
    if kind is not None and kind not in MQTTSET_KINDS:
        raise ConfigError(f"traces[{i}].kind must be one of {MQTTSET_KINDS}")
    dur = _num(f"traces[{i}].duration_s", doc.get("duration_s", 0))
    a0 = _num(f"traces[{i}].attack_start_s", doc.get("attack_start_s", 60.0))
    a1 = doc.get("attack_end_s")
    if a1 is not None:
        a1 = _num(f"traces[{i}].attack_end_s", a1)
        if a1 < a0:
            raise ConfigError(f"traces[{i}].attack_end_s must be >= attack_start_s")
    params = doc.get("params", {})
    _keys(f"traces[{i}].params", params, params.keys())
    for k, v in params.items():
        _num(f"traces[{i}].params.{k}", v)
    return TraceJob(name, dur, kind, a0, a1, tuple(sorted(params.items())))


def _capture(i: int, doc, node_ids: set, topo_links) -> ProbeSpec:
    _keys(f"capture[{i}]", doc, ("probe", "node", "link"))
    pid = doc.get("probe")
    if not isinstance(pid, str) or not pid:
        raise ConfigError(f"capture[{i}].probe must be a non-empty id")
    node, link = doc.get("node"), doc.get("link")
    if (node is None) == (link is None):
        raise ConfigError(f"capture[{i}] needs exactly one of node or link")
    if node is not None and node not in node_ids:
        raise ConfigError(f"capture[{i}].node references unknown node {node!r}")
    if link is not None:
        link = _pair(f"capture[{i}].link", link)
        for n in link:
            if n not in node_ids:
                raise ConfigError(f"capture[{i}].link references unknown node {n!r}")
    return ProbeSpec(pid, node, link)


_SCENARIO_KEYS = ("duration_s", "latency_us", "bandwidth_mbps", "sensor_defaults", "sensors",
                  "attack", "traces", "capture", "broker_model", "background", "bridge",
                  "sensor_credentials", "connector_post_s")


def scenario_from_dict(doc: dict, topo: TopologyConfig) -> ScenarioConfig:
    from .topology import node_ids as topo_node_ids
    _keys("scenario", doc, _SCENARIO_KEYS)
    duration = _num("duration_s", doc.get("duration_s", 0))
    brokers = broker_ids(topo)
    sids = sensor_ids(topo)
    base = doc.get("sensor_defaults", {}) or {}
    _keys("sensor_defaults", base, _SENSOR_KEYS)
    overrides = doc.get("sensors", {}) or {}
    if not isinstance(overrides, dict):
        raise ConfigError("sensors must map sensor ids to overrides")
    for sid in overrides:
        if sid not in sids:
            raise ConfigError(f"sensors: unknown sensor id {sid!r}")
    if sids and not brokers:
        raise ConfigError("sensors need at least one MQTT broker")
    sensors = tuple(_sensor(sid, base, overrides.get(sid) or {}, brokers, duration) for sid in sids)
    ids = set(topo_node_ids(topo))
    attack = None
    if doc.get("attack") is not None:
        if not brokers:
            raise ConfigError("attack scenario requires at least one MQTT broker")
        attack = _attack(doc["attack"], ids, duration)
    traces_doc = doc.get("traces", [])
    if not isinstance(traces_doc, list):
        raise ConfigError("traces must be a list")
    traces = tuple(_trace(i, t) for i, t in enumerate(traces_doc))
    if len({t.name for t in traces}) != len(traces):
        raise ConfigError("trace names must be unique")
    if any(t.kind for t in traces) and not ("client-connect" in ids and brokers):
        raise ConfigError("attack traces need client-connect and a broker")
    cap_doc = doc.get("capture", [])
    if not isinstance(cap_doc, list):
        raise ConfigError("capture must be a list")
    capture = tuple(_capture(i, c, ids, None) for i, c in enumerate(cap_doc))
    if len({p.probe_id for p in capture}) != len(capture):
        raise ConfigError("probe ids must be unique")
    creds = _pair("sensor_credentials", doc.get("sensor_credentials", ["iot-sensor", "s3nsor-pass"]))
    return ScenarioConfig(
        duration_s=duration, sensors=sensors, attack=attack, traces=traces, capture=capture,
        latency_us=_int("latency_us", doc.get("latency_us", 500)),
        bandwidth_mbps=_num("bandwidth_mbps", doc.get("bandwidth_mbps", 100.0), strict=True),
        broker_model=_sub("broker_model", doc.get("broker_model"), BrokerModel, {
            "capacity_events_per_s": _pos_int, "max_queue": _pos_int,
            "max_connections": _pos_int, "connect_timeout_s": _pos_num,
            "give_up_after": _pos_int}),
        background=_sub("background", doc.get("background"), BackgroundConfig, {
            "ntp_period_s": _pos_num, "dns_ttl_s": _pos_num, "ping_period_s": _pos_num}),
        bridge=_sub("bridge", doc.get("bridge"), BridgeConfig, {
            "poll_period_s": _pos_num, "zookeeper_period_s": _pos_num}),
        sensor_credentials=creds,
        connector_post_s=_num("connector_post_s", doc.get("connector_post_s", 2.0)),
    )


def parse_scenario_config(text: str, topo: TopologyConfig) -> ScenarioConfig:
    return scenario_from_dict(_load(text), topo)


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(x) for x in obj]
    return obj


def _dc_dict(obj) -> dict:
    return {k: _plain(v) for k, v in obj.__dict__.items()}


def scenario_to_dict(sc: ScenarioConfig) -> dict:
    doc: dict = {
        "duration_s": sc.duration_s,
        "latency_us": sc.latency_us,
        "bandwidth_mbps": sc.bandwidth_mbps,
        "sensor_credentials": list(sc.sensor_credentials),
        "connector_post_s": sc.connector_post_s,
        "broker_model": _dc_dict(sc.broker_model),
        "background": _dc_dict(sc.background),
        "bridge": _dc_dict(sc.bridge),
        "sensors": {
            s.sensor_id: {
                "schedule": {s.schedule: s.interval_s},
                "active_windows": [list(w) for w in s.active_windows],
                "dataset": s.dataset_source,
                "columns": list(s.columns),
                "broker": s.target_broker_id,
                "messages_per_connection": s.messages_per_connection,
            }
            for s in sc.sensors
        },
    }
    if sc.attack is not None:
        a = sc.attack
        doc["attack"] = {
            "enabled_steps": list(a.enabled_steps),
            "start_s": a.start_s,
            "inter_step_sleep_s": list(a.inter_step_sleep_s),
            "compromised_fraction": a.compromised_fraction,
            "attacker": a.attacker,
            "pivot": a.pivot,
            "skip_to_ddos": a.skip_to_ddos,
            "scan": _dc_dict(a.scan),
            "bruteforce": _dc_dict(a.bruteforce),
            "payload_transfer": _dc_dict(a.payload_transfer),
            "ddos": _dc_dict(a.ddos),
        }
    if sc.traces:
        doc["traces"] = []
        for t in sc.traces:
            td = {"name": t.name, "duration_s": t.duration_s}
            if t.kind:
                td.update(kind=t.kind, attack_start_s=t.attack_start_s)
                if t.attack_end_s is not None:
                    td["attack_end_s"] = t.attack_end_s
                td["params"] = dict(t.params)
            doc["traces"].append(td)
    if sc.capture:
        doc["capture"] = [
            {"probe": p.probe_id, **({"node": p.node} if p.node else {"link": list(p.link)})}
            for p in sc.capture
        ]
    return doc


def render_scenario_config(sc: ScenarioConfig) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)


def trace_jobs(sc: ScenarioConfig) -> tuple[TraceJob, ...]:
    """Trace list to run; a scenario without explicit traces is one trace named 'scenario'."""
    return sc.traces or (TraceJob("scenario", sc.duration_s),)


# ---------------------------------------------------------------- presets

def preset_mqttset() -> tuple[TopologyConfig, ScenarioConfig]:
    topo = TopologyConfig(sensor_count=10, mqtt_brokers=(BrokerSpec("auth"),),
                          has_client_connect=True)
    legit_s = 5400.0
    sensors = []
    for i, sid in enumerate(sensor_ids(topo)):
        if i < 5:
            sensors.append(SensorBehavior(sid, "periodic", MQTTSET_PERIODS_S[i],
                                          ((0.0, legit_s),), columns=("temperature", "humidity"),
                                          messages_per_connection=1))
        else:
            sensors.append(SensorBehavior(sid, "random", 1.0, ((0.0, legit_s),),
                                          columns=("temperature", "humidity"),
                                          messages_per_connection=100))
    traces = (
        TraceJob("legitimate", legit_s),
        TraceJob("publish_flood", 600.0, "publish_flood", 60.0, 540.0,
                 (("connections", 20), ("messages", 400), ("payload_bytes", 64),
                  ("rate_per_s", 400))),
        TraceJob("flood_dos", 600.0, "flood_dos", 60.0, 540.0,
                 (("cycles", 6), ("messages", 265), ("payload_bytes", 30700), ("processes", 1))),
        TraceJob("slowite", 600.0, "slowite", 60.0, 540.0,
                 (("connections", 1500), ("keep_alive_s", 65535), ("spacing_s", 0.04))),
        TraceJob("malformed", 600.0, "malformed", 60.0, 540.0,
                 (("count", 400), ("spacing_s", 1.0))),
        TraceJob("auth_bruteforce", 600.0, "auth_bruteforce", 60.0, 540.0,
                 (("count", 600), ("spacing_s", 0.5))),
    )
    scen = ScenarioConfig(duration_s=legit_s, sensors=tuple(sensors), traces=traces,
                          capture=(ProbeSpec("broker", node="broker-1"),))
    return topo, scen


def preset_kafka_attack(sensor_count: int = 450) -> tuple[TopologyConfig, ScenarioConfig]:
    topo = TopologyConfig(sensor_count=sensor_count,
                          mqtt_brokers=(BrokerSpec("plaintext"), BrokerSpec("auth"),
                                        BrokerSpec("tls")),
                          kafka_broker_count=1, has_kafka_connect=True, has_client_connect=True)
    rng = random.Random(PRESET_SEED)
    duration = 1800.0
    pattern = ("broker-1", "broker-2", "broker-1", "broker-3")
    sensors = []
    for i, sid in enumerate(sensor_ids(topo)):
        period = float(rng.choice(PRESET_PERIODS_S))
        sensors.append(SensorBehavior(
            sid, "periodic", period, ((0.0, duration),),
            columns=("temperature", "humidity", "pressure")[: 1 + i % 3],
            target_broker_id=pattern[i % 4],
            messages_per_connection=10 if period < 2 else 1))
    attack = AttackConfig()
    capture = (ProbeSpec("probe_a", link=("zookeeper", "kafka-broker")),
               ProbeSpec("probe_b", node="kafka-connect"),
               ProbeSpec("probe_c", node="r-iot"))
    scen = ScenarioConfig(duration_s=duration, sensors=tuple(sensors), attack=attack,
                          capture=capture)
    return topo, scen


def with_attack(sc: ScenarioConfig, **changes) -> ScenarioConfig:
    return replace(sc, attack=replace(sc.attack or AttackConfig(), **changes))
