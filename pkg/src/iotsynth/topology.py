"""Concrete addressed node graph, capture-probe plans and the RAM estimator."""

from __future__ import annotations

import hashlib
import ipaddress
import json
import random
from dataclasses import dataclass, field

from .config import ProbeSpec, TopologyConfig, broker_ids, default_broker_subnet

SENSOR_SUBNETS = (18, 19, 20)
SENSOR_HOST_FIRST = 10
SENSORS_PER_SUBNET = 150
SENSORS_PER_SWITCH = 15
KAFKA_NET = "192.168.10"
INFRA_IP = "192.168.1.2"
DOMAIN = "iot.lan"

SERVICES = {
    "sensor": ((22, "ssh"),),
    "kafka_broker": ((9092, "kafka"),),
    "zookeeper": ((2181, "zookeeper"),),
    "kafka_connect": ((8083, "http"),),
    "client_connect": ((8000, "http"), (4444, "shell"), (1389, "ldap")),
    "infra": ((53, "dns"), (123, "ntp")),
}


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    node_id: str
    kind: str
    ipv4: str | None
    mac: str | None
    listening_ports: tuple[tuple[int, str], ...] = ()
    security_mode: str | None = None
    subnet: str | None = None

    @property
    def hostname(self) -> str:
        return f"{self.node_id}.{DOMAIN}"

    def listens(self, port: int) -> bool:
        return any(p == port for p, _ in self.listening_ports)


@dataclass
class Topology:
    nodes: tuple[Node, ...]
    links: tuple[tuple[str, str], ...]
    seed: int = 0
    by_id: dict = field(default_factory=dict, repr=False)
    by_ip: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.by_id = {n.node_id: n for n in self.nodes}
        self.by_ip = {n.ipv4: n for n in self.nodes if n.ipv4}
        self._adj: dict[str, list[str]] = {n.node_id: [] for n in self.nodes}
        for a, b in self.links:
            self._adj[a].append(b)
            self._adj[b].append(a)
        self._parent: dict[str, str | None] = {}
        self._depth: dict[str, int] = {}
        for root in ([n for n in self._adj if n == "r-core"] + list(self._adj)):
            if root in self._parent:
                continue
            self._parent[root], self._depth[root] = None, 0
            stack = [root]
            while stack:
                cur = stack.pop()
                for nxt in self._adj[cur]:
                    if nxt not in self._parent:
                        self._parent[nxt] = cur
                        self._depth[nxt] = self._depth[cur] + 1
                        stack.append(nxt)
        self._paths: dict[tuple[str, str], tuple[str, ...]] = {}

    def of_kind(self, kind: str) -> list[Node]:
        return [n for n in self.nodes if n.kind == kind]

    @property
    def sensors(self) -> list[Node]:
        return self.of_kind("sensor")

    @property
    def brokers(self) -> list[Node]:
        return self.of_kind("mqtt_broker")

    def has_link(self, a: str, b: str) -> bool:
        return b in self._adj.get(a, ())

    def path(self, a: str, b: str) -> tuple[str, ...]:
        """Node ids from a to b inclusive along the tree."""
        key = (a, b)
        hit = self._paths.get(key)
        if hit is not None:
            return hit
        up, down = [a], [b]
        x, y = a, b
        while self._depth[x] > self._depth[y]:
            x = self._parent[x]
            up.append(x)
        while self._depth[y] > self._depth[x]:
            y = self._parent[y]
            down.append(y)
        while x != y:
            x, y = self._parent[x], self._parent[y]
            if x is None or y is None:
                raise TopologyError(f"no path between {a} and {b}")
            up.append(x)
            down.append(y)
        result = tuple(up + down[-2::-1])
        self._paths[key] = result
        return result

    def attach_point(self, ip: str) -> str:
        """Node that absorbs traffic for an address with no host behind it."""
        try:
            addr = ipaddress.IPv4Address(ip)
        except ValueError:
            raise TopologyError(f"bad address {ip!r}") from None
        octets = str(addr).split(".")
        net = ".".join(octets[:3])
        host = int(octets[3])
        if net.startswith("192.168.") and int(octets[2]) in SENSOR_SUBNETS:
            idx = max(host - SENSOR_HOST_FIRST, 0) // SENSORS_PER_SWITCH + 1
            candidates = [n.node_id for n in self.of_kind("switch")
                          if n.node_id.startswith(f"sw-{octets[2]}-")]
            if candidates:
                want = f"sw-{octets[2]}-{idx}"
                return want if want in self.by_id else candidates[-1]
            if "r-iot" in self.by_id:
                return "r-iot"
        for n in self.of_kind("switch"):
            if n.subnet == f"{net}.0/24":
                return n.node_id
        for rid in ("r-core",):
            if rid in self.by_id:
                return rid
        if not self.nodes:
            raise TopologyError("empty topology")
        return self.nodes[0].node_id

    def dump_text(self) -> str:
        lines = [f"{'node_id':<16} {'kind':<15} {'ipv4':<15} {'mac':<17} {'mode':<9} ports"]
        for n in self.nodes:
            ports = ",".join(f"{p}/{s}" for p, s in n.listening_ports)
            lines.append(f"{n.node_id:<16} {n.kind:<15} {n.ipv4 or '-':<15} {n.mac or '-':<17} "
                         f"{n.security_mode or '-':<9} {ports or '-'}")
        lines.append("")
        lines.append("links:")
        lines.extend(f"  {a} -- {b}" for a, b in self.links)
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "nodes": [
                {"node_id": n.node_id, "kind": n.kind, "ipv4": n.ipv4, "mac": n.mac,
                 "listening_ports": [list(p) for p in n.listening_ports],
                 "security_mode": n.security_mode, "subnet": n.subnet}
                for n in self.nodes
            ],
            "links": [list(link) for link in self.links],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        doc = json.loads(text)
        nodes = tuple(Node(d["node_id"], d["kind"], d["ipv4"], d["mac"],
                           tuple(tuple(p) for p in d["listening_ports"]),
                           d["security_mode"], d["subnet"]) for d in doc["nodes"])
        return cls(nodes, tuple(tuple(link) for link in doc["links"]), doc.get("seed", 0))


def node_ids(cfg: TopologyConfig) -> list[str]:
    """Ids the topology built from ``cfg`` will contain (cheap, no addressing)."""
    return [node_id for node_id, _, _ in _skeleton(cfg)[0]]


def _required_routers(cfg: TopologyConfig) -> list[str]:
    iot = cfg.sensor_count > 0 or bool(cfg.mqtt_brokers)
    kafka = cfg.kafka_broker_count > 0 or cfg.has_kafka_connect or cfg.has_client_connect
    if not (iot or kafka):
        return []
    out = ["r-core"]
    if iot:
        out.append("r-iot")
    if kafka:
        out.append("r-kafka")
    out.append("r-edge")
    return out


def _skeleton(cfg: TopologyConfig):
    """Node ids, kinds and links before addresses are assigned."""
    if cfg.sensor_count > len(SENSOR_SUBNETS) * SENSORS_PER_SUBNET:
        raise TopologyError(f"address space exhausted: {cfg.sensor_count} sensors exceed "
                            f"{len(SENSOR_SUBNETS) * SENSORS_PER_SUBNET} slots in 192.168.18-20.10-159")
    routers = _required_routers(cfg)
    if cfg.router_count is not None and cfg.router_count < len(routers):
        raise TopologyError(f"router_count {cfg.router_count} below the {len(routers)} required")
    spare_r = (cfg.router_count or len(routers)) - len(routers)
    nodes: list[tuple[str, str, dict]] = []
    links: list[tuple[str, str]] = []
    switches: list[tuple[str, str, str]] = []  # id, uplink router, subnet
    for r in routers:
        nodes.append((r, "router", {}))
        if r != "r-core":
            links.append(("r-core", r))
    for i in range(spare_r):
        nodes.append((f"r-spare-{i + 1}", "router", {}))
        links.append(("r-core", f"r-spare-{i + 1}"))
    if routers:
        switches.append(("sw-infra", "r-edge", "192.168.1.0/24"))
    for i in range(cfg.sensor_count):
        sub = SENSOR_SUBNETS[i // SENSORS_PER_SUBNET]
        sw = f"sw-{sub}-{(i % SENSORS_PER_SUBNET) // SENSORS_PER_SWITCH + 1}"
        if not switches or switches[-1][0] != sw:
            switches.append((sw, "r-iot", f"192.168.{sub}.0/24"))
    for i, b in enumerate(cfg.mqtt_brokers):
        switches.append((f"sw-broker-{i + 1}", "r-iot", b.subnet or default_broker_subnet(i)))
    kafka_side = cfg.kafka_broker_count > 0 or cfg.has_kafka_connect or cfg.has_client_connect
    if kafka_side:
        switches.append(("sw-kafka", "r-kafka", f"{KAFKA_NET}.0/24"))
    if cfg.switch_count is not None and cfg.switch_count < len(switches):
        raise TopologyError(f"switch_count {cfg.switch_count} below the {len(switches)} required")
    spare_s = (cfg.switch_count or len(switches)) - len(switches)
    if spare_s and not routers:
        raise TopologyError("spare switches need at least one router to attach to")
    for sw, up, sub in switches:
        nodes.append((sw, "switch", {"subnet": sub}))
        links.append((up, sw))
    for i in range(spare_s):
        nodes.append((f"sw-spare-{i + 1}", "switch", {}))
        links.append(("r-core", f"sw-spare-{i + 1}"))
    if routers:
        nodes.append(("infra", "infra", {}))
        links.append(("sw-infra", "infra"))
    for i, bid in enumerate(broker_ids(cfg)):
        nodes.append((bid, "mqtt_broker", {"index": i}))
        links.append((f"sw-broker-{i + 1}", bid))
    if cfg.kafka_broker_count:
        nodes.append(("kafka-broker", "kafka_broker", {}))
        links.append(("sw-kafka", "kafka-broker"))
        nodes.append(("zookeeper", "zookeeper", {}))
        links.append(("kafka-broker", "zookeeper"))
    if cfg.has_kafka_connect:
        nodes.append(("kafka-connect", "kafka_connect", {}))
        links.append(("sw-kafka", "kafka-connect"))
    if cfg.has_client_connect:
        nodes.append(("client-connect", "client_connect", {}))
        links.append(("sw-kafka", "client-connect"))
    for i in range(cfg.sensor_count):
        sub = SENSOR_SUBNETS[i // SENSORS_PER_SUBNET]
        sw = f"sw-{sub}-{(i % SENSORS_PER_SUBNET) // SENSORS_PER_SWITCH + 1}"
        nodes.append((f"sensor-{i + 1}", "sensor", {"index": i}))
        links.append((sw, f"sensor-{i + 1}"))
    return nodes, links


def _address(node_id: str, kind: str, extra: dict, cfg: TopologyConfig) -> tuple[str | None, str | None]:
    if kind == "sensor":
        i = extra["index"]
        sub = SENSOR_SUBNETS[i // SENSORS_PER_SUBNET]
        return f"192.168.{sub}.{SENSOR_HOST_FIRST + i % SENSORS_PER_SUBNET}", f"192.168.{sub}.0/24"
    if kind == "mqtt_broker":
        i = extra["index"]
        net = ipaddress.ip_network(cfg.mqtt_brokers[i].subnet or default_broker_subnet(i))
        return str(net.network_address + 1), str(net)
    fixed = {
        "kafka-broker": f"{KAFKA_NET}.2", "zookeeper": f"{KAFKA_NET}.3",
        "kafka-connect": f"{KAFKA_NET}.4", "client-connect": f"{KAFKA_NET}.5",
        "infra": INFRA_IP,
        "r-core": "192.168.0.1", "r-iot": "192.168.17.1", "r-kafka": f"{KAFKA_NET}.1",
        "r-edge": "192.168.1.1",
    }
    if node_id in fixed:
        sub = fixed[node_id].rsplit(".", 1)[0] + ".0/24"
        return fixed[node_id], sub
    if node_id.startswith("r-spare-"):
        return f"192.168.0.{1 + int(node_id.rsplit('-', 1)[1])}", "192.168.0.0/24"
    return None, extra.get("subnet")


def _mac_rng(seed: int) -> random.Random:
    digest = hashlib.sha256(f"{seed}:topology:mac".encode()).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))


def build_topology(cfg: TopologyConfig, seed: int = 0) -> Topology:
    skeleton, links = _skeleton(cfg)
    rng = _mac_rng(seed)
    used_macs: set[str] = set()
    nodes = []
    for node_id, kind, extra in skeleton:
        ip, subnet = _address(node_id, kind, extra, cfg)
        mac = None
        if kind != "switch":
            while mac is None or mac in used_macs:
                mac = "02:" + ":".join(f"{rng.randrange(256):02x}" for _ in range(5))
            used_macs.add(mac)
        mode = None
        ports = SERVICES.get(kind, ())
        if kind == "mqtt_broker":
            mode = cfg.mqtt_brokers[extra["index"]].security_mode
            ports = ((8883, "mqtt-tls"),) if mode == "tls" else ((1883, "mqtt"),)
        nodes.append(Node(node_id, kind, ip, mac, ports, mode, subnet))
    ips = [n.ipv4 for n in nodes if n.ipv4]
    if len(ips) != len(set(ips)):
        raise TopologyError("address collision between configured subnets")
    return Topology(tuple(nodes), tuple(links), seed)


def ram_estimate(q: int, d: int) -> int:
    """Megabytes of host RAM for q qemu VMs and d docker containers."""
    if q < 0 or d < 0:
        raise ValueError("node counts must be non-negative")
    return q * 470 + d * 37



@dataclass(frozen=True)
class Probe:
    probe_id: str
    node: str | None
    link: tuple[str, str] | None
    pcap_name: str


@dataclass(frozen=True)
class ProbePlan:
    probes: tuple[Probe, ...] = ()

    def ids(self) -> list[str]:
        return [p.probe_id for p in self.probes]


def resolve_probes(topo: Topology, capture_spec, trace: str = "scenario") -> ProbePlan:
    probes = []
    for spec in capture_spec or ():
        if not isinstance(spec, ProbeSpec):
            raise TopologyError(f"bad capture entry {spec!r}")
        if spec.node is not None:
            if spec.node not in topo.by_id:
                raise TopologyError(f"unknown node {spec.node!r} in capture spec")
        else:
            a, b = spec.link
            if a not in topo.by_id or b not in topo.by_id or not topo.has_link(a, b):
                raise TopologyError(f"unknown link {a} -- {b} in capture spec")
        probes.append(Probe(spec.probe_id, spec.node, spec.link,
                            f"{trace}-{spec.probe_id}.pcap"))
    return ProbePlan(tuple(probes))
