"""Legitimate traffic: sensors, brokers with finite capacity, the kafka-connect bridge,
Kafka/Zookeeper chatter and DNS/NTP/ICMP background."""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field

from . import appproto as ap
from . import wire
from .config import BrokerModel, SensorBehavior
from .engine import Sim, us
from .topology import INFRA_IP, Node

DNS_LEAD_US = 20_000
MIN_START_US = 100_000
BRIDGE_START_US = 150_000
ZK_START_US = 60_000
PING_OFFSET_US = 30_000_000
FORWARD_FILTER = "sensors/"


class BrokerState:
    """Single-server deterministic queue plus a bounded connection table."""

    def __init__(self, node: Node, model: BrokerModel, credentials: dict[str, bytes]):
        self.node = node
        self.service_us = max(1, round(1_000_000 / model.capacity_events_per_s))
        self.max_queue = model.max_queue
        self.max_connections = model.max_connections
        self.queue: deque[int] = deque()
        self.last_done = 0
        self.conns = 0
        self._releases: list[int] = []
        self.credentials = credentials
        self.forwards: deque = deque()
        self.has_subscriber = False
        self.received = 0
        self.dropped = 0
        self.dropped_syns = 0

    @property
    def tls(self) -> bool:
        return self.node.security_mode == "tls"

    @property
    def auth(self) -> bool:
        return self.node.security_mode == "auth"

    @property
    def port(self) -> int:
        return 8883 if self.tls else 1883

    def _expire(self, t: int) -> None:
        rel = self._releases
        while rel and rel[0] <= t:
            heapq.heappop(rel)
            self.conns -= 1

    def accept_syn(self, t: int) -> bool:
        self._expire(t)
        if self.conns >= self.max_connections:
            self.dropped_syns += 1
            return False
        self.conns += 1
        return True

    def release(self, t: int) -> None:
        heapq.heappush(self._releases, t)

    def submit(self, t: int) -> int | None:
        """Enqueue one application event arriving at t; completion time or None if dropped."""
        q = self.queue
        while q and q[0] <= t:
            q.popleft()
        self.received += 1
        if len(q) >= self.max_queue:
            self.dropped += 1
            return None
        done = max(t, self.last_done) + self.service_us
        self.last_done = done
        q.append(done)
        return done

    def queue_len(self, t: int) -> int:
        return sum(1 for d in self.queue if d > t)

    def connack_code(self, username, password) -> int:
        if not self.auth:
            return ap.CONNACK_ACCEPTED
        if username is None or password is None:
            return ap.CONNACK_NOT_AUTHORIZED
        if self.credentials.get(username) != password:
            return ap.CONNACK_BAD_CREDENTIALS
        return ap.CONNACK_ACCEPTED

    def record_publish(self, done: int, topic: str, payload: bytes) -> None:
        if self.has_subscriber and topic.startswith(FORWARD_FILTER):
            self.forwards.append((done, topic, payload))

    def take_forwards(self, t: int) -> list[tuple[str, bytes]]:
        out = []
        f = self.forwards
        while f and f[0][0] <= t:
            _, topic, payload = f.popleft()
            out.append((topic, payload))
        return out


class MqttLink:
    """One client TCP connection to a broker, frames stamped by the caller."""

    def __init__(self, sim: Sim, client: Node, broker: BrokerState, rng, origin: str = "normal",
                 entry=None):
        self.sim = sim
        self.net = sim.net
        self.cli = client
        self.b = broker
        self.srv = broker.node
        self.rng = rng
        self.origin = origin
        self.entry = entry
        self.sess = wire.TcpSession(
            wire.Endpoint(client.ipv4, sim.ephemeral(client), client.mac),
            wire.Endpoint(self.srv.ipv4, broker.port, self.srv.mac),
            isn=(rng.getrandbits(32), rng.getrandbits(32)))
        self.d = self.net.delay(client, self.srv.ipv4)
        self.t_est = 0
        self.slot = False

    def up(self, t: int, frames) -> int:
        for f in frames:
            self.net.send(t, self.cli, self.srv.ipv4, f, self.origin, self.entry)
        return t + self.d

    def down(self, t: int, frames) -> int:
        for f in frames:
            self.net.send(t, self.srv, self.cli.ipv4, f, self.origin, self.entry)
        return t + self.d

    def enc(self, msg: ap.MqttMessage) -> bytes:
        raw = ap.mqtt_encode(msg)
        return ap.tls_wrap(raw, self.rng) if self.b.tls else raw

    def syn(self, t: int):
        """Generator: SYN at t; True once the broker answered with SYN-ACK."""
        arrive = self.up(t, [self.sess.syn()])
        yield arrive
        if not self.b.accept_syn(arrive):
            return False
        self.slot = True
        self.t_est = self.down(arrive, [self.sess.syn_ack()])
        return True

    def client_close(self, t: int, disconnect: bool = True) -> int:
        frames = self.sess.data(0, self.enc(ap.MqttMessage("DISCONNECT"))) if disconnect else []
        frames.append(self.sess.fin(0))
        arrive = self.up(t, frames)
        back = self.down(arrive, [self.sess.fin(1)])
        self.up(back, [self.sess.final_ack(0)])
        if self.slot:
            self.b.release(arrive)
        return back

    def broker_close(self, t: int) -> int:
        arrive = self.down(t, [self.sess.fin(1)])
        back = self.up(arrive, [self.sess.fin(0)])
        self.down(back, [self.sess.final_ack(1)])
        if self.slot:
            self.b.release(t)
        return back

    def reset(self, t: int) -> int:
        arrive = self.up(t, [self.sess.rst(0)])
        if self.slot:
            self.b.release(arrive)
        return arrive


class Conv:
    """Alternating TCP exchange between two hosts with no capacity model; frames are built
    synchronously in time order and ``t`` tracks when the next actor may send."""

    def __init__(self, sim: Sim, t: int, client: Node, server: Node, dport: int, rng,
                 origin: str = "normal", entry=None):
        self.sim = sim
        self.net = sim.net
        self.cli = client
        self.srv = server
        self.origin = origin
        self.entry = entry
        self.rng = rng
        self.sess = wire.TcpSession(
            wire.Endpoint(client.ipv4, sim.ephemeral(client), client.mac),
            wire.Endpoint(server.ipv4, dport, server.mac),
            isn=(rng.getrandbits(32), rng.getrandbits(32)))
        self.d = self.net.delay(client, server.ipv4)
        self.t = t

    def _send(self, side: int, t: int, frames) -> int:
        src, dst = (self.cli, self.srv) if side == 0 else (self.srv, self.cli)
        for f in frames:
            self.net.send(t, src, dst.ipv4, f, self.origin, self.entry)
        return t + self.d

    def open(self) -> "Conv":
        a = self._send(0, self.t, [self.sess.syn()])
        b = self._send(1, a, [self.sess.syn_ack()])
        self._send(0, b, [self.sess.handshake_ack()])
        self.t = b
        return self

    def c2s(self, payload: bytes, think: int = 0, ack: bool = False) -> "Conv":
        return self._data(0, payload, think, ack)

    def s2c(self, payload: bytes, think: int = 0, ack: bool = False) -> "Conv":
        return self._data(1, payload, think, ack)

    def _data(self, side: int, payload: bytes, think: int, ack: bool) -> "Conv":
        if len(payload) > 4 * wire.MSS:
            return self.bulk(side, payload, think)
        self.t = self._send(side, self.t + think, self.sess.data(side, payload))
        if ack:
            self._send(1 - side, self.t, [self.sess.ack(1 - side)])
        return self

    def bulk(self, side: int, payload: bytes, think: int = 0) -> "Conv":
        """Paced segments at link rate; the receiver ACKs every second segment."""
        start = self.t + think
        segs = self.sess.data_segments(side, payload)
        arrive = start
        for i, (frame, nxt) in enumerate(segs):
            ts = start + i * self.net.tx_us(len(frame))
            arrive = self._send(side, ts, [frame])
            if i % 2 == 1 or i == len(segs) - 1:
                self._send(1 - side, arrive, [self.sess.ack(1 - side, upto=nxt)])
        self.t = arrive
        return self

    def close(self, side: int = 0, think: int = 0) -> int:
        a = self._send(side, self.t + think, [self.sess.fin(side)])
        b = self._send(1 - side, a, [self.sess.fin(1 - side)])
        self._send(side, b, [self.sess.final_ack(side)])
        self.t = b
        return b

    def reset(self, side: int = 0, think: int = 0) -> int:
        self.t = self._send(side, self.t + think, [self.sess.rst(side)])
        return self.t


# ---------------------------------------------------------------- sensors

@dataclass
class SensorState:
    behavior: SensorBehavior
    node: Node
    broker: BrokerState
    rng: object
    username: str | None = None
    password: bytes | None = None
    failures: int = 0
    gave_up: bool = False
    halted: bool = False
    in_cycle: bool = False
    cursor: int = 0
    packet_id: int = 0
    published: int = 0
    busy_until: int = 0
    dataset: object = None
    windows_us: tuple = field(default_factory=tuple)

    def next_pid(self) -> int:
        self.packet_id = self.packet_id % 65535 + 1
        return self.packet_id

    @property
    def active(self) -> bool:
        return not (self.gave_up or self.halted)


def _windows_us(beh: SensorBehavior) -> tuple[tuple[int, int], ...]:
    return tuple((us(a), us(b)) for a, b in beh.active_windows)


def clamp_to_windows(windows, t: int) -> int | None:
    for a, b in windows:
        if t < a:
            return a
        if t < b:
            return t
    return None


def next_publish_time(beh: SensorBehavior, now: int, rng, windows=None) -> int | None:
    """Next publish instant after ``now`` (µs), clamped into the active windows."""
    windows = windows if windows is not None else _windows_us(beh)
    if not any(a <= now < b for a, b in windows):
        return next((a for a, _ in windows if a > now), None)
    if beh.schedule == "periodic":
        cand = now + us(beh.interval_s)
    else:
        cand = now + max(1, round(rng.expovariate(1.0) * us(beh.interval_s)))
    return clamp_to_windows(windows, cand)


def first_fire(beh: SensorBehavior, rng, windows=None) -> int | None:
    windows = windows if windows is not None else _windows_us(beh)
    if not windows:
        return None
    start = windows[0][0]
    if beh.schedule == "periodic":
        span = us(beh.interval_s)
        t = start + MIN_START_US + rng.randrange(max(span - MIN_START_US, 1))
    else:
        t = start + MIN_START_US + max(1, round(rng.expovariate(1.0) * us(beh.interval_s)))
    return clamp_to_windows(windows, t)


def _fail(sim: Sim, st: SensorState) -> None:
    st.failures += 1
    if st.failures >= sim.scenario.broker_model.give_up_after:
        st.gave_up = True
        sim.net.silent.add(st.node.ipv4)


def _payload(st: SensorState) -> bytes:
    p = ap.make_sensor_payload(st.dataset, st.behavior.columns, st.cursor)
    st.cursor += 1
    return p


def publish_cycle(sim: Sim, st: SensorState, t0: int):
    """Generator for one sensor connection; returns (time free again, last schedule time).

    The first PUBLISH is pipelined right behind CONNECT so that, on a healthy broker,
    CONNACK and PUBACK come back almost together.
    """
    beh, b = st.behavior, st.broker
    timeout = us(sim.scenario.broker_model.connect_timeout_s)
    link = MqttLink(sim, st.node, b, st.rng)
    d = link.d
    ok = yield from link.syn(t0)
    if not ok:
        _fail(sim, st)
        return t0 + timeout, t0
    tb = link.t_est
    topic = f"sensors/{beh.sensor_id}"
    sess = link.sess
    connect = ap.MqttMessage("CONNECT", client_id=beh.sensor_id, username=st.username,
                             password=st.password, keep_alive_s=60)
    payload = _payload(st)
    pid = st.next_pid()
    frames = [sess.handshake_ack()] + sess.data(0, link.enc(connect))
    frames += sess.data(0, link.enc(ap.MqttMessage("PUBLISH", topic=topic, payload=payload,
                                                   qos=1, packet_id=pid)))
    arrive = link.up(tb, frames)
    yield arrive
    c_conn = b.submit(arrive)
    code = b.connack_code(st.username, st.password)
    c_pub = b.submit(arrive) if c_conn is not None and code == 0 else None
    deadline = tb + timeout
    if c_conn is None or c_conn + d > deadline:
        link.reset(deadline)
        _fail(sim, st)
        return deadline, t0
    if code != 0:
        link.down(c_conn, sess.data(1, link.enc(ap.MqttMessage("CONNACK", return_code=code))))
        return link.broker_close(c_conn), t0
    st.failures = 0
    pending: list = [(c_conn, 0, link.enc(ap.MqttMessage("CONNACK")))]
    missing_since = None
    if c_pub is not None:
        b.record_publish(c_pub, topic, payload)
        st.published += 1
        heapq.heappush(pending, (c_pub, 1, link.enc(ap.MqttMessage("PUBACK", packet_id=pid))))
    else:
        missing_since = tb
    order = 2
    sched = t0
    last_pub = tb
    offset = tb - t0

    def flush(upto):
        while pending and pending[0][0] <= upto:
            tc, _, raw = heapq.heappop(pending)
            link.down(tc, sess.data(1, raw))

    for _ in range(beh.messages_per_connection - 1):
        nxt = next_publish_time(beh, sched, st.rng, st.windows_us)
        if nxt is None:
            break
        t_pub = max(nxt + offset, sim.engine.now)
        if t_pub >= sim.duration or st.halted:
            break
        if missing_since is not None and t_pub > missing_since + timeout:
            break
        yield t_pub
        if st.halted:
            break
        flush(t_pub)
        sched = nxt
        payload = _payload(st)
        pid = st.next_pid()
        arrive = link.up(t_pub, sess.data(0, link.enc(ap.MqttMessage(
            "PUBLISH", topic=topic, payload=payload, qos=1, packet_id=pid))))
        last_pub = t_pub
        yield arrive
        c = b.submit(arrive)
        if c is None:
            missing_since = missing_since or t_pub
            continue
        b.record_publish(c, topic, payload)
        st.published += 1
        heapq.heappush(pending, (c, order, link.enc(ap.MqttMessage("PUBACK", packet_id=pid))))
        order += 1
    last_resp = max((p[0] for p in pending), default=last_pub)
    close_at = last_resp + d
    if missing_since is not None:
        close_at = max(close_at, last_pub + timeout)
    flush(close_at)
    end = link.client_close(close_at)
    return end, sched


def sensor_proc(sim: Sim, st: SensorState, t: int):
    beh = st.behavior
    while True:
        if not st.active:
            return
        st.in_cycle = True
        end, sched = yield from publish_cycle(sim, st, t)
        st.in_cycle = False
        st.busy_until = end
        if not st.active:
            return
        nxt = next_publish_time(beh, sched, st.rng, st.windows_us)
        while nxt is not None and nxt < end:
            nxt = next_publish_time(beh, nxt if beh.schedule == "periodic" else end,
                                    st.rng, st.windows_us)
        if nxt is None or nxt >= sim.duration:
            return
        yield nxt
        t = nxt


# ---------------------------------------------------------------- background

def _udp_exchange(sim: Sim, t: int, client: Node, server: Node, dport: int, query: bytes,
                  reply: bytes) -> int:
    net = sim.net
    sport = sim.ephemeral(client)
    arrive = net.send(t, client, server.ipv4, wire.udp_frame(
        client.mac, server.mac, client.ipv4, server.ipv4, sport, dport, query))
    return net.send(arrive, server, client.ipv4, wire.udp_frame(
        server.mac, client.mac, server.ipv4, client.ipv4, dport, sport, reply))


def dns_proc(sim: Sim, st: SensorState, t: int):
    infra = sim.topo.by_id["infra"]
    ttl = us(sim.scenario.background.dns_ttl_s)
    name = st.broker.node.hostname
    addr = wire.ip_bytes(st.broker.node.ipv4)
    while True:
        if st.gave_up:
            return
        txid = st.rng.randrange(1 << 16)
        _udp_exchange(sim, t, st.node, infra, 53, ap.dns_query(txid, name),
                      ap.dns_response(txid, name, addr, int(ttl // 1_000_000)))
        t += ttl
        yield t


def ntp_proc(sim: Sim, node: Node, rng, is_silent):
    infra = sim.topo.by_id["infra"]
    period = us(sim.scenario.background.ntp_period_s)
    for k in range(1, sim.duration // period + 1):
        t = k * period - rng.randrange(1000, 1_000_000)
        if t < sim.engine.now:
            continue
        yield t
        if is_silent():
            return
        _udp_exchange(sim, t, node, infra, 123, ap.ntp_packet(3, t),
                      ap.ntp_packet(4, t + 1000, stratum=2))


def ping_proc(sim: Sim, st: SensorState, t: int):
    period = us(sim.scenario.background.ping_period_s)
    seq = 0
    node, broker = st.node, st.broker.node
    ident = int(node.ipv4.rsplit(".", 1)[1]) << 8 | int(node.ipv4.split(".")[2])
    data = bytes(range(56))
    while True:
        if st.gave_up:
            return
        seq += 1
        arrive = sim.net.send(t, node, broker.ipv4, wire.icmp_frame(
            node.mac, broker.mac, node.ipv4, broker.ipv4, 8, ident, seq, data))
        sim.net.send(arrive, broker, node.ipv4, wire.icmp_frame(
            broker.mac, node.mac, broker.ipv4, node.ipv4, 0, ident, seq, data))
        t += period
        yield t


def zookeeper_proc(sim: Sim, t: int):
    kafka, zk = sim.node("kafka-broker"), sim.node("zookeeper")
    rng = sim.rng("zookeeper")
    period = us(sim.scenario.bridge.zookeeper_period_s)
    conv = Conv(sim, t, kafka, zk, 2181, rng).open()
    zxid = 0x100000000
    while True:
        conv.c2s(ap.zookeeper_ping(rng)).s2c(ap.zookeeper_pong(zxid))
        zxid += 1
        t += period
        yield t
        conv.t = t


def kafka_produce_size(payloads) -> int:
    """Produce request size for a batch; strictly increasing in the batch length."""
    return 72 + sum(len(p) + 24 for p in payloads)


def bridge_proc(sim: Sim, t: int):
    """kafka-connect: one subscribed MQTT connection per broker, polled on a fixed period,
    with collected messages produced to Kafka."""
    kc = sim.node("kafka-connect")
    rng = sim.rng("bridge")
    period = us(sim.scenario.bridge.poll_period_s)
    user, pwd = sim.scenario.sensor_credentials
    links = []
    for bid in sorted(sim.brokers):
        b = sim.brokers[bid]
        link = MqttLink(sim, kc, b, rng)
        ok = yield from link.syn(t)
        if not ok:
            continue
        sess = link.sess
        creds = (user, pwd.encode()) if b.auth else (None, None)
        frames = [sess.handshake_ack()] + sess.data(0, link.enc(ap.MqttMessage(
            "CONNECT", client_id=f"kafka-connect-{bid}", username=creds[0], password=creds[1],
            keep_alive_s=60, clean_session=True)))
        frames += sess.data(0, link.enc(ap.MqttMessage("SUBSCRIBE", topic="sensors/#", qos=0,
                                                       packet_id=1)))
        arrive = link.up(link.t_est, frames)
        yield arrive
        c1 = b.submit(arrive)
        c2 = b.submit(arrive) if c1 is not None else None
        if c1 is None:
            continue
        link.down(c1, sess.data(1, link.enc(ap.MqttMessage("CONNACK"))))
        if c2 is not None:
            link.down(c2, sess.data(1, link.enc(ap.MqttMessage("SUBACK", packet_id=1, qos=0))))
        b.has_subscriber = True
        links.append(link)
        t = max(c2 or c1, sim.engine.now) + link.d
    kconv = None
    if "kafka-broker" in sim.topo.by_id:
        kconv = Conv(sim, t, kc, sim.node("kafka-broker"), 9092, rng).open()
    corr = 0
    t = (t // period + 1) * period
    while True:
        yield t
        polls = sorted((link.up(t, link.sess.data(0, link.enc(ap.MqttMessage("PINGREQ")))), i)
                       for i, link in enumerate(links))
        collected = []
        done_at = t
        for arrive, i in polls:
            yield arrive
            link = links[i]
            c = link.b.submit(arrive)
            if c is None:
                continue
            batch = link.b.take_forwards(c)
            raw = b"".join(ap.mqtt_encode(ap.MqttMessage("PUBLISH", topic=tp, payload=pl))
                           for tp, pl in batch) + ap.mqtt_encode(ap.MqttMessage("PINGRESP"))
            back = link.down(c, link.sess.data(1, ap.tls_wrap(raw, rng) if link.b.tls else raw))
            collected.extend(pl for _, pl in batch)
            done_at = max(done_at, back)
        if kconv is not None and collected:
            corr += 1
            kconv.t = max(kconv.t, done_at)
            kconv.c2s(ap.kafka_produce_request(kafka_produce_size(collected), corr, rng))
            kconv.s2c(ap.kafka_produce_response(corr, rng))
        t += period


def connector_post(sim: Sim, t: int):
    """Administrator registering the MQTT source connector over the REST API."""
    client, kc = sim.node("client-connect"), sim.node("kafka-connect")
    rng = sim.rng("connector")
    body = json.dumps({"name": "mqtt-source", "config": {
        "connector.class": "io.confluent.connect.mqtt.MqttSourceConnector",
        "mqtt.server.uri": " ".join(f"tcp://{b.node.ipv4}:{b.port}"
                                    for _, b in sorted(sim.brokers.items())),
        "mqtt.topics": "sensors/#", "kafka.topic": "iot-sensors", "tasks.max": "1"}},
        sort_keys=True).encode()
    conv = Conv(sim, t, client, kc, 8083, rng).open()
    conv.c2s(ap.http_request("POST", "/connectors", "kafka-connect:8083", body))
    conv.s2c(ap.http_response("201 Created", body), think=15_000)
    conv.close(0)
    return
    yield


# ---------------------------------------------------------------- install

def install(sim: Sim) -> None:
    sc = sim.scenario
    user, pwd = sc.sensor_credentials
    creds = {user: pwd.encode()}
    for b in sim.topo.brokers:
        sim.brokers[b.node_id] = BrokerState(b, sc.broker_model, creds)
    datasets = {}
    has_infra = "infra" in sim.topo.by_id
    eng = sim.engine
    for beh in sc.sensors:
        node = sim.node(beh.sensor_id)
        b = sim.brokers[beh.target_broker_id]
        if beh.dataset_source not in datasets:
            datasets[beh.dataset_source] = ap.load_dataset(beh.dataset_source)
        rng = sim.rng(f"sensor:{beh.sensor_id}")
        st = SensorState(beh, node, b, rng, dataset=datasets[beh.dataset_source],
                         windows_us=_windows_us(beh))
        if b.auth:
            st.username, st.password = user, pwd.encode()
        st.cursor = int(node.ipv4.rsplit(".", 1)[1])
        sim.sensors[beh.sensor_id] = st
        t0 = first_fire(beh, rng, st.windows_us)
        if t0 is None:
            continue
        eng.spawn(sensor_proc(sim, st, t0), t0)
        if has_infra:
            eng.spawn(dns_proc(sim, st, t0 - DNS_LEAD_US), t0 - DNS_LEAD_US)
            eng.spawn(ntp_proc(sim, node, sim.rng(f"ntp:{node.node_id}"),
                               lambda st=st: st.gave_up), 0)
        eng.spawn(ping_proc(sim, st, t0 + PING_OFFSET_US), t0 + PING_OFFSET_US)
    if has_infra:
        for n in sim.topo.nodes:
            if n.kind in ("mqtt_broker", "kafka_broker", "kafka_connect", "client_connect"):
                eng.spawn(ntp_proc(sim, n, sim.rng(f"ntp:{n.node_id}"), lambda: False), 0)
    ids = sim.topo.by_id
    if "kafka-broker" in ids and "zookeeper" in ids:
        eng.spawn(zookeeper_proc(sim, ZK_START_US), ZK_START_US)
    if "kafka-connect" in ids and sim.brokers:
        eng.spawn(bridge_proc(sim, BRIDGE_START_US), BRIDGE_START_US)
    if "kafka-connect" in ids and "client-connect" in ids:
        t = us(sc.connector_post_s)
        eng.spawn(connector_post(sim, t), t)
