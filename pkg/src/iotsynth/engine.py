"""Discrete-event kernel with a virtual microsecond clock, seeded substreams and the
capturing network that turns transmitted frames into per-probe packet lists."""

from __future__ import annotations

import hashlib
import heapq
import itertools
import math
import random
import time
from dataclasses import dataclass, field

from . import wire
from .config import ScenarioConfig, TraceJob
from .journal import GroundTruthJournal
from .topology import Node, ProbePlan, Topology, resolve_probes

US = 1_000_000


class SimulationError(RuntimeError):
    pass


class RunTimeout(RuntimeError):
    pass


class RngStream(random.Random):
    """Independent stream keyed by (root seed, label)."""

    def __new__(cls, root_seed: int, label: str):
        return super().__new__(cls)

    def __init__(self, root_seed: int, label: str):
        self.root_seed = root_seed
        self.label = label
        digest = hashlib.sha256(f"{root_seed}\x00{label}".encode()).digest()
        super().__init__(int.from_bytes(digest[:16], "big"))


def us(seconds: float) -> int:
    return int(round(seconds * US))


class Engine:
    """Generator-driven event loop.

    A process is a generator yielding absolute resume times in microseconds.
    Equal times run in (priority, insertion sequence) order.
    """

    def __init__(self, duration_us: int, wall_timeout_s: float | None = None):
        self.duration_us = duration_us
        self.now = 0
        self._heap: list = []
        self._seq = itertools.count()
        self.events = 0
        self._deadline = None if wall_timeout_s is None else time.monotonic() + wall_timeout_s

    def spawn(self, gen, at: int, priority: int = 0) -> None:
        if at < self.now:
            raise SimulationError(f"cannot schedule at {at} before now {self.now}")
        if at >= self.duration_us:
            gen.close()
            return
        heapq.heappush(self._heap, (at, priority, next(self._seq), gen))

    def run(self) -> None:
        heap = self._heap
        while heap:
            t, prio, _, gen = heapq.heappop(heap)
            self.now = t
            self.events += 1
            if self._deadline is not None and self.events % 4096 == 0 \
                    and time.monotonic() > self._deadline:
                raise RunTimeout("wall-clock timeout exceeded")
            try:
                nxt = next(gen)
            except StopIteration:
                continue
            if nxt < t:
                raise SimulationError(f"process resumed into the past ({nxt} < {t})")
            if nxt >= self.duration_us:
                gen.close()
                continue
            heapq.heappush(heap, (nxt, prio, next(self._seq), gen))


class Network:
    """Transparent switched tree. Every frame is delivered after hops x latency and
    recorded by each probe on its path."""

    def __init__(self, topo: Topology, plan: ProbePlan, latency_us: int, bandwidth_mbps: float,
                 duration_us: int):
        self.topo = topo
        self.plan = plan
        self.latency = latency_us
        self.bandwidth = bandwidth_mbps
        self.duration = duration_us
        self.captures: dict[str, list] = {p.probe_id: [] for p in plan.probes}
        self._node_probes: dict[str, list[str]] = {}
        self._link_probes: dict[frozenset, list[str]] = {}
        for p in plan.probes:
            if p.node:
                self._node_probes.setdefault(p.node, []).append(p.probe_id)
            else:
                self._link_probes.setdefault(frozenset(p.link), []).append(p.probe_id)
        self._routes: dict[tuple[str, str], tuple] = {}
        self._arp: set[tuple[str, str]] = set()
        self.silent: set[str] = set()
        self._seq = itertools.count()
        self.sent = 0

    def route(self, src_id: str, dst_ip: str):
        key = (src_id, dst_ip)
        r = self._routes.get(key)
        if r is None:
            node = self.topo.by_ip.get(dst_ip)
            dst_id = node.node_id if node else self.topo.attach_point(dst_ip)
            path = self.topo.path(src_id, dst_id)
            taps = []
            for i, hop in enumerate(path):
                for pid in self._node_probes.get(hop, ()):
                    taps.append((pid, i))
                if i + 1 < len(path):
                    for pid in self._link_probes.get(frozenset((hop, path[i + 1])), ()):
                        taps.append((pid, i))
            r = (len(path) - 1, tuple(taps), node)
            self._routes[key] = r
        return r

    def delay(self, src: Node, dst_ip: str) -> int:
        return self.route(src.node_id, dst_ip)[0] * self.latency

    def tx_us(self, nbytes: int) -> int:
        return max(1, math.ceil(nbytes * 8 / self.bandwidth))

    def _record(self, t: int, taps, frame: bytes, origin: str) -> None:
        seq = next(self._seq)
        for pid, hop in taps:
            ts = t + hop * self.latency
            if ts < self.duration:
                self.captures[pid].append((ts, seq, frame, origin))

    def _arp_exchange(self, t: int, src: Node, dst_ip: str, hops: int, taps, dst: Node | None) -> None:
        lead = 2 * hops * self.latency + 100
        t0 = max(0, t - lead)
        self._record(t0, taps, wire.arp_frame(1, src.mac, src.ipv4, None, dst_ip), "normal")
        self._arp.add((src.ipv4, dst_ip))
        if dst is not None and dst.mac and dst.ipv4 not in self.silent:
            _, back_taps, _ = self.route(dst.node_id, src.ipv4)
            self._record(t0 + hops * self.latency, back_taps,
                         wire.arp_frame(2, dst.mac, dst_ip, src.mac, src.ipv4), "normal")
            self._arp.add((dst_ip, src.ipv4))

    def send(self, t: int, src: Node, dst_ip: str, frame: bytes, origin: str = "normal",
             entry=None) -> int:
        """Transmit at t; returns the arrival time at the destination."""
        hops, taps, dst = self.route(src.node_id, dst_ip)
        if (src.ipv4, dst_ip) not in self._arp:
            self._arp_exchange(t, src, dst_ip, hops, taps, dst)
        arrive = t + hops * self.latency
        if t < self.duration:
            self._record(t, taps, frame, origin)
            self.sent += 1
            if entry is not None:
                entry.touch(t, arrive)
        return arrive

    def finish(self) -> dict[str, list]:
        out = {}
        for pid, recs in self.captures.items():
            recs.sort(key=lambda r: (r[0], r[1]))
            out[pid] = recs
        return out


@dataclass
class RunResult:
    trace: str
    plan: ProbePlan
    captures: dict[str, list[tuple[int, bytes]]]
    oracle: dict[str, list[str]]
    journal: GroundTruthJournal
    stats: dict = field(default_factory=dict)
    settings: list[str] = field(default_factory=list)


class Sim:
    """Shared context handed to agents and attack steps."""

    def __init__(self, topo: Topology, scenario: ScenarioConfig, seed: int, job: TraceJob,
                 wall_timeout_s: float | None = None):
        self.topo = topo
        self.scenario = scenario
        self.seed = seed
        self.job = job
        self.duration = us(job.duration_s)
        self.engine = Engine(self.duration, wall_timeout_s)
        self.plan = resolve_probes(topo, scenario.capture, job.name)
        self.net = Network(topo, self.plan, scenario.latency_us, scenario.bandwidth_mbps,
                           self.duration)
        self.journal = GroundTruthJournal(trace=job.name, duration_us=self.duration)
        self.brokers: dict = {}
        self.sensors: dict = {}
        self.settings: list[str] = []
        self._ports: dict[str, int] = {}

    def rng(self, label: str) -> RngStream:
        return RngStream(self.seed, f"{self.job.name}:{label}")

    def ephemeral(self, node: Node) -> int:
        p = self._ports.get(node.node_id, 32767) + 1
        if p > 60999:
            p = 32768
        self._ports[node.node_id] = p
        return p

    def node(self, node_id: str) -> Node:
        return self.topo.by_id[node_id]


def run_trace(topo: Topology, scenario: ScenarioConfig, seed: int, job: TraceJob | None = None,
              wall_timeout_s: float | None = None) -> RunResult:
    from . import agents, attack
    from .config import trace_jobs
    job = job or trace_jobs(scenario)[0]
    sim = Sim(topo, scenario, seed, job, wall_timeout_s)
    if sim.duration > 0:
        agents.install(sim)
        attack.install(sim)
        sim.engine.run()
    sim.journal.clamp()
    recs = sim.net.finish()
    captures = {pid: [(r[0], r[2]) for r in lst] for pid, lst in recs.items()}
    oracle = {pid: [r[3] for r in lst] for pid, lst in recs.items()}
    stats = {"events": sim.engine.events, "frames_sent": sim.net.sent,
             "gave_up": sorted(s.node.ipv4 for s in sim.sensors.values() if s.gave_up)}
    for bid, b in sim.brokers.items():
        stats[f"{bid}_dropped_events"] = b.dropped
        stats[f"{bid}_dropped_syns"] = b.dropped_syns
    return RunResult(job.name, sim.plan, captures, oracle, sim.journal, stats, sim.settings)


def run_scenario(topo: Topology, scenario: ScenarioConfig, seed: int,
                 wall_timeout_s: float | None = None) -> list[RunResult]:
    from .config import trace_jobs
    return [run_trace(topo, scenario, seed, job, wall_timeout_s) for job in trace_jobs(scenario)]
