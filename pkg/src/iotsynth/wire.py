"""Ethernet/ARP/IPv4/TCP/UDP/ICMP frame synthesis, parsing and classic pcap I/O."""

from __future__ import annotations

import struct
import sys
from array import array
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from typing import BinaryIO, Iterable, Iterator

ETH_P_IP = 0x0800
ETH_P_ARP = 0x0806

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

FIN = 0x01
SYN = 0x02
RST = 0x04
PSH = 0x08
ACK = 0x10
URG = 0x20

MTU = 1500
MSS = MTU - 40

PCAP_MAGIC = 0xA1B2C3D4
PCAP_SNAPLEN = 262144
LINKTYPE_ETHERNET = 1

_BROADCAST = b"\xff" * 6

# service ports used to derive the application tag of a parsed frame
PORT_TAGS = {
    1883: "mqtt",
    8883: "tls_record",
    8083: "http",
    9092: "kafka_produce",
    2181: "zookeeper_ping",
    22: "ssh",
    53: "dns",
    123: "ntp",
    8000: "http",
    4444: "shell",
    1389: "ldap",
}


class WireError(ValueError):
    pass


class PcapError(ValueError):
    pass


def ip_bytes(addr: str) -> bytes:
    return IPv4Address(addr).packed


def ip_str(raw: bytes) -> str:
    return str(IPv4Address(raw))


def mac_bytes(mac: str) -> bytes:
    return bytes.fromhex(mac.replace(":", ""))


def mac_str(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def inet_checksum(data: bytes) -> int:
    """RFC 1071 ones' complement checksum, returned as a big-endian 16-bit value."""
    if len(data) % 2:
        data += b"\x00"
    s = sum(array("H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    s = ~s & 0xFFFF
    if sys.byteorder == "little":
        s = ((s & 0xFF) << 8) | (s >> 8)
    return s


def ethernet(dst_mac: bytes, src_mac: bytes, ethertype: int, payload: bytes) -> bytes:
    return dst_mac + src_mac + struct.pack("!H", ethertype) + payload


def ipv4(src: bytes, dst: bytes, proto: int, payload: bytes, ident: int = 0, ttl: int = 64) -> bytes:
    total = 20 + len(payload)
    if total > 0xFFFF:
        raise WireError("IPv4 datagram too large")
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total, ident & 0xFFFF, 0x4000, ttl, proto, 0, src, dst)
    csum = inet_checksum(hdr)
    return hdr[:10] + struct.pack("!H", csum) + hdr[12:] + payload


def _pseudo(src: bytes, dst: bytes, proto: int, length: int) -> bytes:
    return src + dst + struct.pack("!BBH", 0, proto, length)


def tcp_segment(src: bytes, dst: bytes, sport: int, dport: int, seq: int, ack: int, flags: int,
                payload: bytes = b"", window: int = 64240, mss: int | None = None) -> bytes:
    opts = struct.pack("!BBH", 2, 4, mss) if mss else b""
    off = (20 + len(opts)) // 4
    hdr = struct.pack("!HHIIBBHHH", sport, dport, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF,
                      off << 4, flags, window, 0, 0) + opts
    seg = hdr + payload
    csum = inet_checksum(_pseudo(src, dst, PROTO_TCP, len(seg)) + seg)
    return seg[:16] + struct.pack("!H", csum) + seg[18:]


def udp_datagram(src: bytes, dst: bytes, sport: int, dport: int, payload: bytes) -> bytes:
    length = 8 + len(payload)
    dgram = struct.pack("!HHHH", sport, dport, length, 0) + payload
    csum = inet_checksum(_pseudo(src, dst, PROTO_UDP, length) + dgram) or 0xFFFF
    return dgram[:6] + struct.pack("!H", csum) + dgram[8:]


def icmp_echo(kind: int, ident: int, seq: int, payload: bytes) -> bytes:
    msg = struct.pack("!BBHHH", kind, 0, 0, ident, seq) + payload
    return msg[:2] + struct.pack("!H", inet_checksum(msg)) + msg[4:]


def arp(op: int, sha: bytes, spa: bytes, tha: bytes, tpa: bytes) -> bytes:
    return struct.pack("!HHBBH6s4s6s4s", 1, ETH_P_IP, 6, 4, op, sha, spa, tha, tpa)


def arp_frame(op: int, src_mac: str, src_ip: str, dst_mac: str | None, dst_ip: str) -> bytes:
    sha = mac_bytes(src_mac)
    tha = mac_bytes(dst_mac) if dst_mac else b"\x00" * 6
    eth_dst = tha if op == 2 else _BROADCAST
    return ethernet(eth_dst, sha, ETH_P_ARP, arp(op, sha, ip_bytes(src_ip), tha, ip_bytes(dst_ip)))


def udp_frame(src_mac: str, dst_mac: str, src_ip: str, dst_ip: str, sport: int, dport: int,
              payload: bytes, ident: int = 0) -> bytes:
    s, d = ip_bytes(src_ip), ip_bytes(dst_ip)
    return ethernet(mac_bytes(dst_mac), mac_bytes(src_mac), ETH_P_IP,
                    ipv4(s, d, PROTO_UDP, udp_datagram(s, d, sport, dport, payload), ident))


def icmp_frame(src_mac: str, dst_mac: str, src_ip: str, dst_ip: str, kind: int, ident: int,
               seq: int, payload: bytes = b"", ip_ident: int = 0) -> bytes:
    s, d = ip_bytes(src_ip), ip_bytes(dst_ip)
    return ethernet(mac_bytes(dst_mac), mac_bytes(src_mac), ETH_P_IP,
                    ipv4(s, d, PROTO_ICMP, icmp_echo(kind, ident, seq, payload), ip_ident))


@dataclass(frozen=True)
class Endpoint:
    ip: str
    port: int
    mac: str


class TcpSessionError(RuntimeError):
    pass


@dataclass
class TcpSession:
    """Sequence/acknowledgment bookkeeping for one TCP connection.

    Side 0 is the initiator (client), side 1 the responder. Every frame builder
    returns complete Ethernet frames and advances the sender's sequence space.
    """

    client: Endpoint
    server: Endpoint
    isn: tuple[int, int] = (1000, 5000)
    state: str = "closed"
    snd_nxt: list[int] = field(default_factory=list)
    sent: list[int] = field(default_factory=lambda: [0, 0])
    acked: list[int] = field(default_factory=lambda: [0, 0])
    fin_sent: list[bool] = field(default_factory=lambda: [False, False])
    ip_id: list[int] = field(default_factory=lambda: [0, 0])

    def __post_init__(self) -> None:
        self.snd_nxt = [self.isn[0] & 0xFFFFFFFF, self.isn[1] & 0xFFFFFFFF]
        self._ends = (self.client, self.server)
        self._ips = (ip_bytes(self.client.ip), ip_bytes(self.server.ip))
        self._macs = (mac_bytes(self.client.mac), mac_bytes(self.server.mac))
        self.ip_id = [self.isn[0] >> 16 & 0xFFFF, self.isn[1] >> 16 & 0xFFFF]

    def _frame(self, side: int, flags: int, payload: bytes = b"", mss: int | None = None,
               upto: int | None = None) -> bytes:
        other = 1 - side
        ack = (self.snd_nxt[other] if upto is None else upto) if flags & ACK else 0
        seg = tcp_segment(self._ips[side], self._ips[other], self._ends[side].port,
                          self._ends[other].port, self.snd_nxt[side], ack, flags, payload, mss=mss)
        ident = self.ip_id[side]
        self.ip_id[side] = (ident + 1) & 0xFFFF
        advance = len(payload) + (1 if flags & (SYN | FIN) else 0)
        self.snd_nxt[side] = (self.snd_nxt[side] + advance) & 0xFFFFFFFF
        if flags & ACK:
            if upto is None:
                self.acked[other] = self.sent[other]
            else:
                covered = (upto - self.isn[other] - 1) & 0xFFFFFFFF
                self.acked[other] = max(self.acked[other], min(self.sent[other], covered))
        return ethernet(self._macs[other], self._macs[side], ETH_P_IP,
                        ipv4(self._ips[side], self._ips[other], PROTO_TCP, seg, ident))

    def syn(self) -> bytes:
        if self.state != "closed":
            raise TcpSessionError(f"SYN in state {self.state}")
        self.state = "syn_sent"
        return self._frame(0, SYN, mss=MSS)

    def syn_ack(self) -> bytes:
        if self.state != "syn_sent":
            raise TcpSessionError(f"SYN-ACK in state {self.state}")
        self.state = "syn_received"
        return self._frame(1, SYN | ACK, mss=MSS)

    def handshake_ack(self) -> bytes:
        if self.state != "syn_received":
            raise TcpSessionError(f"handshake ACK in state {self.state}")
        self.state = "established"
        return self._frame(0, ACK)

    def refuse(self) -> bytes:
        """RST-ACK answer of a closed port to the pending SYN."""
        if self.state != "syn_sent":
            raise TcpSessionError(f"RST-ACK in state {self.state}")
        self.state = "reset"
        return self._frame(1, RST | ACK)

    def data(self, side: int, payload: bytes) -> list[bytes]:
        if self.state not in ("established", "fin_wait"):
            raise TcpSessionError(f"data in state {self.state}")
        if self.fin_sent[side]:
            raise TcpSessionError("data after FIN")
        if not payload:
            raise TcpSessionError("empty payload")
        frames = []
        for off in range(0, len(payload), MSS):
            chunk = payload[off:off + MSS]
            last = off + MSS >= len(payload)
            frames.append(self._frame(side, ACK | PSH if last else ACK, chunk))
        self.sent[side] += len(payload)
        return frames

    def ack(self, side: int, upto: int | None = None) -> bytes:
        """Pure ACK; ``upto`` acknowledges only part of the peer's stream."""
        if self.state not in ("established", "fin_wait", "syn_received"):
            raise TcpSessionError(f"ACK in state {self.state}")
        return self._frame(side, ACK, upto=upto)

    def data_segments(self, side: int, payload: bytes) -> list[tuple[bytes, int]]:
        """Like ``data`` but pairs each frame with the sender's next sequence number."""
        if self.state not in ("established", "fin_wait") or self.fin_sent[side] or not payload:
            raise TcpSessionError(f"bulk data in state {self.state}")
        out = []
        for off in range(0, len(payload), MSS):
            chunk = payload[off:off + MSS]
            flags = ACK | PSH if off + MSS >= len(payload) else ACK
            self.sent[side] += len(chunk)
            out.append((self._frame(side, flags, chunk), self.snd_nxt[side]))
        return out

    def fin(self, side: int) -> bytes:
        if self.state not in ("established", "fin_wait"):
            raise TcpSessionError(f"FIN in state {self.state}")
        self.fin_sent[side] = True
        self.state = "fin_wait" if not all(self.fin_sent) else "closing"
        return self._frame(side, FIN | ACK)

    def final_ack(self, side: int) -> bytes:
        if self.state != "closing":
            raise TcpSessionError(f"final ACK in state {self.state}")
        self.state = "closed_done"
        return self._frame(side, ACK)

    def rst(self, side: int) -> bytes:
        if self.state in ("closed", "reset", "closed_done"):
            raise TcpSessionError(f"RST in state {self.state}")
        self.state = "reset"
        return self._frame(side, RST | ACK)

    @property
    def established(self) -> bool:
        return self.state in ("established", "fin_wait")

    def fully_acked(self) -> bool:
        return self.acked == self.sent


@dataclass(frozen=True)
class PacketSummary:
    src_ip: str = ""
    dst_ip: str = ""
    src_port: int = 0
    dst_port: int = 0
    l4_protocol: int = 0
    tcp_flags: int = 0
    payload_len: int = 0
    app_tag: str = ""
    is_ip: bool = False
    payload: bytes = field(default=b"", repr=False, compare=False)


def _app_tag(proto: int, sport: int, dport: int, payload: bytes) -> str:
    if proto == PROTO_ICMP:
        return "icmp"
    tag = PORT_TAGS.get(dport) or PORT_TAGS.get(sport) or ""
    if tag == "http" and payload:
        if payload.startswith(b"POST "):
            return "http_post"
        if payload.startswith(b"GET "):
            return "http_get"
    if tag == "ssh" and len(payload) >= 6 and payload[:4] != b"SSH-" and payload[5] == 94:
        return "scp"
    return tag


def parse_frame(raw: bytes) -> PacketSummary:
    if len(raw) < 14:
        raise WireError("short Ethernet frame")
    (ethertype,) = struct.unpack_from("!H", raw, 12)
    if ethertype == ETH_P_ARP:
        return PacketSummary(app_tag="arp")
    if ethertype != ETH_P_IP:
        return PacketSummary(app_tag="")
    if len(raw) < 34:
        raise WireError("short IPv4 header")
    ihl = (raw[14] & 0x0F) * 4
    (total,) = struct.unpack_from("!H", raw, 16)
    proto = raw[23]
    src, dst = ip_str(raw[26:30]), ip_str(raw[30:34])
    l4 = raw[14 + ihl:14 + total]
    sport = dport = flags = 0
    if proto == PROTO_TCP:
        if len(l4) < 20:
            raise WireError("short TCP header")
        sport, dport = struct.unpack_from("!HH", l4)
        off = (l4[12] >> 4) * 4
        flags = l4[13]
        payload = l4[off:]
    elif proto == PROTO_UDP:
        if len(l4) < 8:
            raise WireError("short UDP header")
        sport, dport = struct.unpack_from("!HH", l4)
        payload = l4[8:]
    elif proto == PROTO_ICMP:
        payload = l4[8:]
    else:
        payload = l4
    return PacketSummary(src, dst, sport, dport, proto, flags, len(payload),
                         _app_tag(proto, sport, dport, payload), True, bytes(payload))


def checksums_valid(raw: bytes) -> bool:
    """True when every IPv4/TCP/UDP/ICMP checksum in the frame verifies."""
    (ethertype,) = struct.unpack_from("!H", raw, 12)
    if ethertype != ETH_P_IP:
        return True
    ihl = (raw[14] & 0x0F) * 4
    hdr = raw[14:14 + ihl]
    if inet_checksum(hdr) != 0:
        return False
    (total,) = struct.unpack_from("!H", raw, 16)
    proto = raw[23]
    l4 = raw[14 + ihl:14 + total]
    if proto in (PROTO_TCP, PROTO_UDP):
        if proto == PROTO_UDP and l4[6:8] == b"\x00\x00":
            return True
        return inet_checksum(_pseudo(hdr[12:16], hdr[16:20], proto, len(l4)) + l4) == 0
    if proto == PROTO_ICMP:
        return inet_checksum(l4) == 0
    return True


@dataclass
class PacketRecord:
    probe_id: str
    ts_us: int
    raw_bytes: bytes
    _summary: PacketSummary | None = field(default=None, repr=False, compare=False)

    @property
    def summary(self) -> PacketSummary:
        if self._summary is None:
            self._summary = parse_frame(self.raw_bytes)
        return self._summary


def pcap_header(snaplen: int = PCAP_SNAPLEN) -> bytes:
    return struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)


def write_pcap_stream(out: BinaryIO, packets: Iterable[tuple[int, bytes]]) -> None:
    out.write(pcap_header())
    last = 0
    for ts_us, raw in packets:
        if ts_us < last:
            raise PcapError("packets are not timestamp-sorted")
        last = ts_us
        sec, usec = divmod(ts_us, 1_000_000)
        out.write(struct.pack("<IIII", sec, usec, len(raw), len(raw)))
        out.write(raw)


def pcap_write(packets: Iterable[tuple[int, bytes]], path) -> None:
    with open(path, "wb") as fh:
        write_pcap_stream(fh, packets)


def iter_pcap(data: bytes) -> Iterator[tuple[int, bytes]]:
    if len(data) < 24:
        raise PcapError("truncated pcap global header")
    magic = struct.unpack_from("<I", data)[0]
    if magic == PCAP_MAGIC:
        end = "<"
    elif magic == 0xD4C3B2A1:
        end = ">"
    else:
        raise PcapError(f"bad pcap magic {magic:#010x}")
    major, minor, _, _, _, linktype = struct.unpack_from(end + "HHiIII", data, 4)
    if (major, minor) != (2, 4):
        raise PcapError(f"unsupported pcap version {major}.{minor}")
    if linktype != LINKTYPE_ETHERNET:
        raise PcapError(f"unsupported linktype {linktype}")
    pos = 24
    rec = struct.Struct(end + "IIII")
    while pos < len(data):
        if pos + 16 > len(data):
            raise PcapError(f"truncated record header at offset {pos}")
        sec, usec, incl, _orig = rec.unpack_from(data, pos)
        pos += 16
        if usec >= 1_000_000 or pos + incl > len(data):
            raise PcapError(f"malformed record at offset {pos - 16}")
        yield sec * 1_000_000 + usec, data[pos:pos + incl]
        pos += incl


def pcap_read(path) -> list[tuple[int, bytes]]:
    with open(path, "rb") as fh:
        return list(iter_pcap(fh.read()))


def read_records(path, probe_id: str = "") -> list[PacketRecord]:
    return [PacketRecord(probe_id, ts, raw) for ts, raw in pcap_read(path)]
