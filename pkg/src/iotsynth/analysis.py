"""Capture analyses used by `validate`: broker ACK inter-arrivals, DDoS impact,
publish timing and scan checks."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field

from . import wire

MQTT_PORTS = (1883, 8883)


@dataclass
class AckSeries:
    sensor: str
    broker: str
    points: list[tuple[int, int]] = field(default_factory=list)

    @property
    def times(self) -> list[int]:
        return [t for t, _ in self.points]


def _broker_acks(packets, broker_ip: str) -> dict[str, list[int]]:
    """Per destination, capture times of broker packets with the ACK flag and a payload."""
    out: dict[str, list[int]] = defaultdict(list)
    for ts, raw in packets:
        s = wire.parse_frame(raw)
        if (s.is_ip and s.src_ip == broker_ip and s.l4_protocol == wire.PROTO_TCP
                and s.src_port in MQTT_PORTS and s.tcp_flags & wire.ACK and s.payload_len):
            lst = out[s.dst_ip]
            if not lst or ts > lst[-1]:
                lst.append(ts)
    return out


def series_from_times(sensor: str, broker: str, times: list[int]) -> AckSeries:
    return AckSeries(sensor, broker, [(b, b - a) for a, b in zip(times, times[1:])])


def ack_interarrival(packets, sensor_ip: str, broker_ip: str) -> AckSeries:
    times = _broker_acks(packets, broker_ip).get(sensor_ip, [])
    return series_from_times(sensor_ip, broker_ip, times)


def all_ack_series(packets, broker_ip: str, sensors) -> dict[str, AckSeries]:
    acks = _broker_acks(packets, broker_ip)
    return {ip: series_from_times(ip, broker_ip, acks.get(ip, [])) for ip in sensors}


def write_ack_csv(series: dict[str, AckSeries], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sensor", "broker", "t_us", "inter_arrival_us"))
        for ip in sorted(series, key=wire.ip_bytes):
            s = series[ip]
            for t, ia in s.points:
                w.writerow((ip, s.broker, t, ia))


def ddos_impact(packets, broker_ip: str, ddos_start_us: int | None, cutoff_us: int, sensors,
                attackers=(), end_us: int | None = None) -> dict:
    """Fraction of non-attacking sensors acknowledged before the DDoS that get no broker
    ACK at all in [cutoff, end]."""
    if ddos_start_us is None:
        return {"impact": 0.0, "pre_ddos_nodes": 0, "silenced": []}
    acks = _broker_acks(packets, broker_ip)
    excluded = set(attackers)
    pre = [ip for ip in sensors if ip not in excluded
           and any(t < ddos_start_us for t in acks.get(ip, ()))]
    hi = end_us if end_us is not None else float("inf")
    silenced = [ip for ip in pre if not any(cutoff_us <= t <= hi for t in acks.get(ip, ()))]
    return {"impact": len(silenced) / len(pre) if pre else 0.0, "pre_ddos_nodes": len(pre),
            "silenced": silenced}


def shape_checks(series: dict[str, AckSeries], ddos_start_us: int, attackers,
                 near_zero_us: int = 100_000) -> dict:
    """Qualitative ACK-curve checks around the DDoS start.

    Attackers: median inter-arrival after the start is below ``near_zero_us``.
    Victims: the largest gap ending after the start (including the silence from the
    last ACK to ``end`` when the series stops) exceeds every gap before it.
    """
    att = {}
    for ip in attackers:
        post = sorted(ia for t, ia in series[ip].points if t >= ddos_start_us) if ip in series else []
        att[ip] = post[len(post) // 2] if post else None
    grew = []
    for ip, s in series.items():
        if ip in attackers or not s.points:
            continue
        pre = [ia for t, ia in s.points if t < ddos_start_us]
        post = [ia for t, ia in s.points if t >= ddos_start_us]
        if pre and post and max(post) > max(pre):
            grew.append(ip)
    return {"attacker_median_post_us": att,
            "attackers_near_zero": all(v is not None and v < near_zero_us for v in att.values()),
            "victims_with_larger_gaps": grew}


def mqtt_publish_times(packets, sensor_ip: str) -> list[int]:
    """Capture times of plaintext MQTT PUBLISH packets sent by ``sensor_ip``."""
    out = []
    for ts, raw in packets:
        s = wire.parse_frame(raw)
        if (s.is_ip and s.src_ip == sensor_ip and s.l4_protocol == wire.PROTO_TCP
                and s.dst_port == 1883 and s.payload_len and s.payload[0] >> 4 == 3):
            out.append(ts)
    return out


def scan_syns(packets, scanner_ip: str, port: int = 22) -> list[tuple[int, str]]:
    out = []
    for ts, raw in packets:
        s = wire.parse_frame(raw)
        if (s.is_ip and s.src_ip == scanner_ip and s.l4_protocol == wire.PROTO_TCP
                and s.dst_port == port and s.tcp_flags & (wire.SYN | wire.ACK) == wire.SYN):
            out.append((ts, s.dst_ip))
    return out
