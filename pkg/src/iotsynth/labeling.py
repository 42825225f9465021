"""Rule-based labeling of packets and flows from the ground-truth journal.

Rules match on the unordered endpoint pair, so replies to malicious traffic carry the
same label as the requests. The labeler only sees the journal and the capture.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass

from . import wire
from .journal import LABEL_PRIORITY, GroundTruthJournal

LABELS = tuple(sorted(LABEL_PRIORITY, key=LABEL_PRIORITY.get))
PROTOCOLS = {"tcp": wire.PROTO_TCP, "udp": wire.PROTO_UDP, "icmp": wire.PROTO_ICMP}


class LabelingError(ValueError):
    pass


@dataclass(frozen=True)
class LabelRule:
    label: str
    t0: int
    t1: int
    initiators: frozenset
    responders: frozenset
    ports: frozenset
    protocol: int | None
    priority: int

    def matches(self, ts: int, src: str, dst: str, sport: int, dport: int, proto: int) -> bool:
        if not self.t0 <= ts <= self.t1:
            return False
        if self.protocol is not None and proto != self.protocol:
            return False
        if src in self.initiators and dst in self.responders:
            return not self.ports or dport in self.ports
        if src in self.responders and dst in self.initiators:
            return not self.ports or sport in self.ports
        return False


CATCH_ALL = LabelRule("normal", 0, 2**63 - 1, frozenset(), frozenset(), frozenset(), None, 0)


def _overlap(a: LabelRule, b: LabelRule) -> bool:
    if a.t1 < b.t0 or b.t1 < a.t0:
        return False
    if a.protocol is not None and b.protocol is not None and a.protocol != b.protocol:
        return False
    ends = (a.initiators | a.responders) & (b.initiators | b.responders)
    return bool(ends)


def derive_rules(journal: GroundTruthJournal) -> list[LabelRule]:
    """One rule per journal entry that produced packets, plus the normal catch-all;
    sorted by descending priority."""
    rules = []
    for e in journal.entries:
        if e.t_start_us is None or not e.initiators or not e.responders:
            continue
        if e.label not in LABEL_PRIORITY:
            raise LabelingError(f"unknown label {e.label!r}")
        proto = PROTOCOLS.get(e.protocol) if e.protocol else None
        rules.append(LabelRule(e.label, e.t_start_us, e.t_end_us, frozenset(e.initiators),
                               frozenset(e.responders), frozenset(e.ports), proto,
                               LABEL_PRIORITY[e.label]))
    for i, a in enumerate(rules):
        for b in rules[i + 1:]:
            if a.priority == b.priority and a.label != b.label and _overlap(a, b):
                raise LabelingError(f"ambiguous rules {a.label!r} and {b.label!r} share "
                                    f"priority {a.priority} and overlap")
    rules.sort(key=lambda r: -r.priority)
    rules.append(CATCH_ALL)
    return rules


def label_packets(packets, rules: list[LabelRule]) -> list[str]:
    """One label per captured frame, in capture order. Non-IP frames are normal."""
    active = [r for r in rules if r is not CATCH_ALL and r.label != "normal"]
    addrs = set()
    for r in active:
        addrs |= r.initiators | r.responders
    out = []
    for ts, raw in packets:
        s = wire.parse_frame(raw)
        label = "normal"
        if s.is_ip and (s.src_ip in addrs or s.dst_ip in addrs):
            for r in active:
                if r.matches(ts, s.src_ip, s.dst_ip, s.src_port, s.dst_port, s.l4_protocol):
                    label = r.label
                    break
        out.append(label)
    return out


def label_flows(flows, packet_labels: list[str]) -> Counter:
    """Give each flow the highest-priority label among its packets; returns label counts."""
    counts = Counter()
    for f in flows:
        f.label = max((packet_labels[i] for i in f.packet_indices), key=LABEL_PRIORITY.get)
        counts[f.label] += 1
    return counts


def write_packet_labels(packets, labels: list[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("packet_index", "timestamp_us", "label"))
        for i, ((ts, _), lab) in enumerate(zip(packets, labels)):
            w.writerow((i, ts, lab))


def read_packet_labels(path) -> list[tuple[int, int, str]]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["packet_index", "timestamp_us", "label"]:
            raise ValueError(f"{path}: not a label file")
        return [(int(a), int(b), c) for a, b, c in rd]
