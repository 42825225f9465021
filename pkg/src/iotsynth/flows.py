"""Bidirectional flow assembly and per-flow statistics.

A flow is keyed by the unordered (protocol, endpoint, endpoint) tuple and ends on a
completed FIN exchange, a RST, or an idle gap longer than the timeout. Direction is
fixed by whoever sent the first packet. All times are integer microseconds; means,
standard deviations and rates are computed from exact integer sums and rounded once.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

from . import wire

DEFAULT_IDLE_TIMEOUT_S = 120.0
FLAG_NAMES = (("syn", wire.SYN), ("ack", wire.ACK), ("psh", wire.PSH), ("rst", wire.RST),
              ("fin", wire.FIN))

ID_COLUMNS = ("flow_id", "src_ip", "src_port", "dst_ip", "dst_port", "protocol")
FEATURE_COLUMNS = (
    "t_first_us", "t_last_us", "duration_us",
    "fwd_packets", "bwd_packets", "fwd_bytes", "bwd_bytes",
    *(f"{d}_iat_{s}" for d in ("flow", "fwd", "bwd") for s in ("min", "max", "mean", "std")),
    *(f"{d}_{f}_count" for d in ("fwd", "bwd") for f, _ in FLAG_NAMES),
    "bytes_per_s", "packets_per_s",
)
COLUMNS = ID_COLUMNS + FEATURE_COLUMNS + ("label",)
FLOAT_COLUMNS = frozenset(c for c in FEATURE_COLUMNS
                          if c.endswith(("_mean", "_std")) or c.endswith("_per_s"))

SCHEMA_DOC = {
    "flow_id": "ordinal of the flow by first packet, starting at 0",
    "src_ip/src_port": "initiator endpoint (sender of the first packet)",
    "dst_ip/dst_port": "responder endpoint",
    "protocol": "IP protocol number (6 tcp, 17 udp, 1 icmp)",
    "t_first_us/t_last_us": "capture timestamps of first and last packet",
    "duration_us": "t_last_us - t_first_us",
    "fwd_*/bwd_*": "initiator->responder / responder->initiator",
    "*_bytes": "sum of captured frame lengths",
    "*_iat_min/max/mean/std": "inter-arrival statistics in µs over consecutive packets of "
                              "the flow or direction; 0 when fewer than two packets; std is "
                              "the population standard deviation",
    "*_<flag>_count": "packets with the TCP flag set",
    "bytes_per_s/packets_per_s": "totals * 1e6 / max(duration_us, 1)",
    "label": "class assigned by the labeler, 'unlabeled' before labeling",
}


@dataclass(frozen=True)
class PacketView:
    index: int
    ts_us: int
    length: int
    src: tuple[str, int]
    dst: tuple[str, int]
    proto: int
    flags: int
    payload_len: int


def packet_views(packets):
    """(views of IP packets, count of skipped non-IP frames) from [(ts_us, raw)]."""
    views, skipped = [], 0
    for i, (ts, raw) in enumerate(packets):
        s = wire.parse_frame(raw)
        if not s.is_ip:
            skipped += 1
            continue
        views.append(PacketView(i, ts, len(raw), (s.src_ip, s.src_port), (s.dst_ip, s.dst_port),
                                s.l4_protocol, s.tcp_flags, s.payload_len))
    return views, skipped


def flow_key(p: PacketView) -> tuple:
    a, b = sorted((p.src, p.dst))
    return (p.proto, a, b)


@dataclass
class Flow:
    initiator: tuple[str, int]
    responder: tuple[str, int]
    proto: int
    packets: list[PacketView] = field(default_factory=list)
    fins: set = field(default_factory=set)
    closing: bool = False
    label: str = "unlabeled"

    @property
    def t_first(self) -> int:
        return self.packets[0].ts_us

    @property
    def t_last(self) -> int:
        return self.packets[-1].ts_us

    @property
    def packet_indices(self) -> list[int]:
        return [p.index for p in self.packets]


def _pure_ack(p: PacketView) -> bool:
    return p.flags & (wire.SYN | wire.FIN | wire.RST) == 0 and p.flags & wire.ACK \
        and p.payload_len == 0


def assemble_flows(views, idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S,
                   split: bool = True) -> list[Flow]:
    """Group timestamp-sorted packet views into flows; ``split=False`` gives one
    conversation per tuple, ignoring teardown and timeout."""
    idle = int(round(idle_timeout_s * 1_000_000))
    active: dict[tuple, Flow] = {}
    done: list[Flow] = []
    for p in views:
        key = flow_key(p)
        f = active.get(key)
        if f is not None and split:
            if p.ts_us - f.t_last > idle:
                done.append(active.pop(key))
                f = None
            elif f.closing:
                done.append(active.pop(key))
                if _pure_ack(p):
                    f.packets.append(p)
                    continue
                f = None
        if f is None:
            f = Flow(p.src, p.dst, p.proto)
            active[key] = f
        f.packets.append(p)
        if not split or p.proto != wire.PROTO_TCP:
            continue
        if p.flags & wire.RST:
            done.append(active.pop(key))
        elif p.flags & wire.FIN:
            f.fins.add(p.src)
            if len(f.fins) == 2:
                f.closing = True
    done.extend(active.values())
    done.sort(key=lambda f: f.packets[0].index)
    return done


def _iat_stats(times: list[int]) -> tuple:
    """(min, max, mean, std) of consecutive gaps, zeros below two samples."""
    if len(times) < 2:
        return 0, 0, 0.0, 0.0
    gaps = [b - a for a, b in zip(times, times[1:])]
    n = len(gaps)
    s = sum(gaps)
    sq = sum(g * g for g in gaps)
    var = Fraction(n * sq - s * s, n * n)
    return min(gaps), max(gaps), s / n, math.sqrt(float(var))


def compute_features(flow: Flow, flow_id: int = 0) -> dict:
    pk = flow.packets
    fwd = [p for p in pk if p.src == flow.initiator]
    bwd = [p for p in pk if p.src != flow.initiator]
    dur = flow.t_last - flow.t_first
    row = {
        "flow_id": flow_id, "src_ip": flow.initiator[0], "src_port": flow.initiator[1],
        "dst_ip": flow.responder[0], "dst_port": flow.responder[1], "protocol": flow.proto,
        "t_first_us": flow.t_first, "t_last_us": flow.t_last, "duration_us": dur,
        "fwd_packets": len(fwd), "bwd_packets": len(bwd),
        "fwd_bytes": sum(p.length for p in fwd), "bwd_bytes": sum(p.length for p in bwd),
    }
    for name, group in (("flow", pk), ("fwd", fwd), ("bwd", bwd)):
        st = _iat_stats([p.ts_us for p in group])
        for suffix, v in zip(("min", "max", "mean", "std"), st):
            row[f"{name}_iat_{suffix}"] = v
    for name, group in (("fwd", fwd), ("bwd", bwd)):
        for fname, bit in FLAG_NAMES:
            row[f"{name}_{fname}_count"] = sum(1 for p in group if p.flags & bit)
    span = max(dur, 1)
    row["bytes_per_s"] = (row["fwd_bytes"] + row["bwd_bytes"]) * 1_000_000 / span
    row["packets_per_s"] = len(pk) * 1_000_000 / span
    row["label"] = flow.label
    return row


def flow_rows(flows: list[Flow]) -> list[dict]:
    return [compute_features(f, i) for i, f in enumerate(flows)]


def extract(packets, idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S, conversations: bool = False):
    """Capture -> (flows, skip report)."""
    views, skipped = packet_views(packets)
    flows = assemble_flows(views, idle_timeout_s, split=not conversations)
    return flows, {"total_packets": len(packets), "non_ip_skipped": skipped,
                   "ip_packets": len(views), "flows": len(flows)}


def _fmt(col: str, v) -> str:
    if col in FLOAT_COLUMNS:
        return repr(float(v))
    return str(v)


def write_flows_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(c, r[c]) for c in COLUMNS])


def read_flows_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(header) != COLUMNS:
            raise ValueError(f"{path}: not a flow file (unexpected header)")
        out = []
        for row in rd:
            rec = {}
            for c, v in zip(COLUMNS, row):
                if c in ("src_ip", "dst_ip", "label"):
                    rec[c] = v
                elif c in FLOAT_COLUMNS:
                    rec[c] = float(v)
                else:
                    rec[c] = int(v)
            out.append(rec)
        return out


def schema_text() -> str:
    lines = ["column order: " + ",".join(COLUMNS), ""]
    lines += [f"{k}: {v}" for k, v in SCHEMA_DOC.items()]
    return "\n".join(lines) + "\n"
