"""MQTT 3.1.1 codec, sensor payloads from CSV datasets and shaped application bytes."""

from __future__ import annotations

import csv
import random
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

CONNECT = 1
CONNACK = 2
PUBLISH = 3
PUBACK = 4
SUBSCRIBE = 8
SUBACK = 9
PINGREQ = 12
PINGRESP = 13
DISCONNECT = 14

KIND_NAMES = {
    CONNECT: "CONNECT", CONNACK: "CONNACK", PUBLISH: "PUBLISH", PUBACK: "PUBACK",
    SUBSCRIBE: "SUBSCRIBE", SUBACK: "SUBACK", PINGREQ: "PINGREQ", PINGRESP: "PINGRESP",
    DISCONNECT: "DISCONNECT",
}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}

CONNACK_ACCEPTED = 0
CONNACK_BAD_CREDENTIALS = 4
CONNACK_NOT_AUTHORIZED = 5

APP_PORTS = {
    "mqtt": 1883,
    "mqtt_tls": 8883,
    "http_post": 8083,
    "kafka_produce": 9092,
    "zookeeper_ping": 2181,
    "ssh": 22,
    "scp": 22,
    "dns": 53,
    "ntp": 123,
}

APP_TAGS = ("http_post", "http_get", "ssh", "scp", "kafka_produce", "zookeeper_ping",
            "dns", "ntp", "tls_record")

SSH_SERVER_BANNER = b"SSH-2.0-OpenSSH_8.9p1 Ubuntu-3ubuntu0.1\r\n"
SSH_CLIENT_BANNER = b"SSH-2.0-libssh_0.10.4\r\n"


class MqttDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class MqttMessage:
    kind: str
    client_id: str = ""
    topic: str = ""
    payload: bytes = b""
    qos: int = 0
    packet_id: int = 0
    username: str | None = None
    password: bytes | None = None
    keep_alive_s: int = 60
    clean_session: bool = True
    return_code: int = 0
    session_present: bool = False
    retain: bool = False


def encode_varint(n: int) -> bytes:
    if not 0 <= n <= 268_435_455:
        raise ValueError(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        byte, n = n % 128, n // 128
        if n:
            byte |= 0x80
        out.append(byte)
        if not n:
            return bytes(out)


def decode_varint(data: bytes, pos: int = 0) -> tuple[int, int]:
    """Returns (value, bytes consumed)."""
    mult, value = 1, 0
    for i in range(4):
        if pos + i >= len(data):
            raise MqttDecodeError("truncated remaining length")
        byte = data[pos + i]
        value += (byte & 0x7F) * mult
        if not byte & 0x80:
            return value, i + 1
        mult *= 128
    raise MqttDecodeError("remaining length longer than 4 bytes")


def _utf8(s: str) -> bytes:
    b = s.encode()
    if len(b) > 0xFFFF:
        raise ValueError("string too long")
    return struct.pack("!H", len(b)) + b


def _blob(b: bytes) -> bytes:
    return struct.pack("!H", len(b)) + b


def mqtt_encode(msg: MqttMessage) -> bytes:
    code = KIND_CODES.get(msg.kind)
    if code is None:
        raise ValueError(f"unsupported MQTT kind {msg.kind}")
    flags = 0
    if code == CONNECT:
        cflags = 0x02 if msg.clean_session else 0
        body = _utf8("MQTT") + bytes([4])
        tail = _utf8(msg.client_id)
        if msg.username is not None:
            cflags |= 0x80
            tail += _utf8(msg.username)
        if msg.password is not None:
            if msg.username is None:
                raise ValueError("password without username")
            cflags |= 0x40
            tail += _blob(msg.password)
        body += bytes([cflags]) + struct.pack("!H", msg.keep_alive_s) + tail
    elif code == CONNACK:
        body = bytes([1 if msg.session_present else 0, msg.return_code])
    elif code == PUBLISH:
        if not msg.topic:
            raise ValueError("PUBLISH topic must be non-empty")
        if msg.qos not in (0, 1):
            raise ValueError("only QoS 0 and 1 are supported")
        flags = (msg.qos << 1) | (1 if msg.retain else 0)
        body = _utf8(msg.topic)
        if msg.qos:
            body += struct.pack("!H", msg.packet_id)
        body += msg.payload
    elif code in (PUBACK, SUBACK):
        body = struct.pack("!H", msg.packet_id)
        if code == SUBACK:
            body += bytes([msg.qos])
    elif code == SUBSCRIBE:
        flags = 0x02
        body = struct.pack("!H", msg.packet_id) + _utf8(msg.topic) + bytes([msg.qos])
    else:
        body = b""
    return bytes([(code << 4) | flags]) + encode_varint(len(body)) + body


def _take_str(body: bytes, pos: int) -> tuple[bytes, int]:
    if pos + 2 > len(body):
        raise MqttDecodeError("truncated string length")
    (n,) = struct.unpack_from("!H", body, pos)
    if pos + 2 + n > len(body):
        raise MqttDecodeError("truncated string")
    return body[pos + 2:pos + 2 + n], pos + 2 + n


def _text(raw: bytes) -> str:
    try:
        return raw.decode()
    except UnicodeDecodeError as exc:
        raise MqttDecodeError("invalid UTF-8 string") from exc


def mqtt_decode_one(data: bytes, pos: int = 0) -> tuple[MqttMessage, int]:
    """Decode the packet starting at ``pos``; returns (message, next position)."""
    if pos >= len(data):
        raise MqttDecodeError("empty buffer")
    first = data[pos]
    code, flags = first >> 4, first & 0x0F
    if code not in KIND_NAMES:
        raise MqttDecodeError(f"unsupported or reserved packet type {code}")
    length, used = decode_varint(data, pos + 1)
    start = pos + 1 + used
    end = start + length
    if end > len(data):
        raise MqttDecodeError("packet shorter than its remaining length")
    body = data[start:end]
    kind = KIND_NAMES[code]
    if code == PUBLISH:
        qos = (flags >> 1) & 0x03
        if qos > 1 or flags & 0x08:
            raise MqttDecodeError("invalid PUBLISH flags")
        topic, p = _take_str(body, 0)
        if not topic:
            raise MqttDecodeError("empty topic")
        pid = 0
        if qos:
            if p + 2 > len(body):
                raise MqttDecodeError("missing packet identifier")
            (pid,) = struct.unpack_from("!H", body, p)
            p += 2
        return MqttMessage(kind, topic=_text(topic), payload=body[p:], qos=qos, packet_id=pid,
                           retain=bool(flags & 1)), end
    expected_flags = 0x02 if code == SUBSCRIBE else 0
    if flags != expected_flags:
        raise MqttDecodeError(f"invalid fixed-header flags for {kind}")
    if code == CONNECT:
        proto, p = _take_str(body, 0)
        if proto != b"MQTT":
            raise MqttDecodeError("bad protocol name")
        if p + 4 > len(body):
            raise MqttDecodeError("truncated CONNECT header")
        level, cflags = body[p], body[p + 1]
        (keep,) = struct.unpack_from("!H", body, p + 2)
        p += 4
        if level != 4:
            raise MqttDecodeError(f"unsupported protocol level {level}")
        if cflags & 0x01 or cflags & 0x04:
            raise MqttDecodeError("unsupported CONNECT flags")
        if cflags & 0x40 and not cflags & 0x80:
            raise MqttDecodeError("password flag without username flag")
        cid, p = _take_str(body, p)
        user = pwd = None
        if cflags & 0x80:
            raw_user, p = _take_str(body, p)
            user = _text(raw_user)
        if cflags & 0x40:
            pwd, p = _take_str(body, p)
        if p != len(body):
            raise MqttDecodeError("trailing bytes in CONNECT")
        return MqttMessage(kind, client_id=_text(cid), username=user, password=pwd,
                           keep_alive_s=keep, clean_session=bool(cflags & 0x02)), end
    if code == CONNACK:
        if length != 2 or body[0] > 1:
            raise MqttDecodeError("malformed CONNACK")
        return MqttMessage(kind, session_present=bool(body[0]), return_code=body[1]), end
    if code == PUBACK:
        if length != 2:
            raise MqttDecodeError("malformed PUBACK")
        return MqttMessage(kind, packet_id=struct.unpack("!H", body)[0]), end
    if code == SUBACK:
        if length != 3:
            raise MqttDecodeError("malformed SUBACK")
        return MqttMessage(kind, packet_id=struct.unpack_from("!H", body)[0], qos=body[2]), end
    if code == SUBSCRIBE:
        if length < 5:
            raise MqttDecodeError("malformed SUBSCRIBE")
        (pid,) = struct.unpack_from("!H", body)
        topic, p = _take_str(body, 2)
        if p + 1 != len(body) or body[p] > 1:
            raise MqttDecodeError("malformed SUBSCRIBE filter")
        return MqttMessage(kind, packet_id=pid, topic=_text(topic), qos=body[p]), end
    if length:
        raise MqttDecodeError(f"{kind} must have an empty body")
    return MqttMessage(kind), end


def mqtt_decode(data: bytes) -> MqttMessage:
    msg, end = mqtt_decode_one(data)
    if end != len(data):
        raise MqttDecodeError("trailing bytes after packet")
    return msg


def mqtt_decode_stream(data: bytes) -> list[MqttMessage]:
    out, pos = [], 0
    while pos < len(data):
        msg, pos = mqtt_decode_one(data, pos)
        out.append(msg)
    return out


MALFORMED_VARIANTS = ("varint_overflow", "reserved_type", "bad_protocol", "qos3_publish",
                      "truncated", "bad_flags")


def malformed_packet(variant: str, rng: random.Random) -> bytes:
    """Bytes that ``mqtt_decode`` rejects, one family per variant."""
    filler = rng.randbytes(rng.randint(4, 24))
    if variant == "varint_overflow":
        return bytes([0x30, 0xFF, 0xFF, 0xFF, 0xFF, 0x01]) + filler
    if variant == "reserved_type":
        return bytes([0xF0, len(filler)]) + filler
    if variant == "bad_protocol":
        body = _utf8("MQIsdp") + bytes([4, 0x02]) + struct.pack("!H", 60) + _utf8("x")
        return bytes([0x10]) + encode_varint(len(body)) + body
    if variant == "qos3_publish":
        body = _utf8("a/b") + struct.pack("!H", 1) + filler
        return bytes([0x36]) + encode_varint(len(body)) + body
    if variant == "truncated":
        body = _utf8("sensors/x") + filler
        return bytes([0x30]) + encode_varint(len(body) + 50) + body
    if variant == "bad_flags":
        return bytes([0x2F, 0x02, 0x00, 0x00])
    raise ValueError(f"unknown malformed variant {variant}")


@dataclass(frozen=True)
class SensorDataset:
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    source: str = "builtin"


def load_dataset(source: str = "builtin", delimiter: str = ",") -> SensorDataset:
    if source == "builtin":
        text = resources.files("iotsynth.data").joinpath("sensors.csv").read_text()
    else:
        text = Path(source).read_text()
    rows = list(csv.reader(text.splitlines(), delimiter=delimiter))
    if not rows:
        raise ValueError(f"dataset {source!r} is empty")
    header, body = tuple(rows[0]), tuple(tuple(r) for r in rows[1:] if r)
    if not body:
        raise ValueError(f"dataset {source!r} has no data rows")
    return SensorDataset(header, body, source)


def make_sensor_payload(dataset: SensorDataset, columns, row_index: int, delimiter: str = ",") -> bytes:
    if not dataset.rows:
        raise ValueError("empty dataset")
    idx = []
    for col in columns:
        if col not in dataset.header:
            raise KeyError(f"unknown column {col!r}")
        idx.append(dataset.header.index(col))
    if not idx:
        raise ValueError("no columns selected")
    row = dataset.rows[row_index % len(dataset.rows)]
    return delimiter.join(row[i] for i in idx).encode()


def _filler(rng: random.Random, n: int) -> bytes:
    return rng.randbytes(n) if n > 0 else b""


def http_request(method: str, path: str, host: str, body: bytes = b"",
                 content_type: str = "application/json") -> bytes:
    head = f"{method} {path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: curl/7.81.0\r\nAccept: */*\r\n"
    if body:
        head += f"Content-Type: {content_type}\r\nContent-Length: {len(body)}\r\n"
    return (head + "\r\n").encode() + body


def http_response(status: str, body: bytes, content_type: str = "application/json") -> bytes:
    head = (f"HTTP/1.1 {status}\r\nContent-Type: {content_type}\r\n"
            f"Content-Length: {len(body)}\r\nServer: Jetty(9.4.48)\r\n\r\n")
    return head.encode() + body


def ssh_record(size: int, msg_type: int, rng: random.Random) -> bytes:
    """Opaque SSH binary packet of ``size`` bytes; the message type byte stays readable."""
    if size < 16:
        raise ValueError("SSH record needs at least 16 bytes")
    pad = 4 + (size % 4)
    return struct.pack("!IBB", size - 4, pad, msg_type) + _filler(rng, size - 6)


def tls_record(size: int, rng: random.Random, content_type: int = 0x17) -> bytes:
    if size < 6:
        raise ValueError("TLS record needs at least 6 bytes")
    return struct.pack("!BHH", content_type, 0x0303, size - 5) + _filler(rng, size - 5)


def tls_wrap(data: bytes, rng: random.Random) -> bytes:
    """Opaque TLS application-data record carrying ``data`` (length plus AEAD tag overhead)."""
    return tls_record(len(data) + 5 + 8 + 16, rng)


def kafka_produce_request(size: int, correlation_id: int, rng: random.Random) -> bytes:
    client = b"connect-mqtt-source"
    head = struct.pack("!hhih", 0, 9, correlation_id, len(client)) + client
    if size < 4 + len(head):
        raise ValueError("produce request too small")
    body = head + _filler(rng, size - 4 - len(head))
    return struct.pack("!i", len(body)) + body


def kafka_produce_response(correlation_id: int, rng: random.Random) -> bytes:
    body = struct.pack("!i", correlation_id) + _filler(rng, 40)
    return struct.pack("!i", len(body)) + body


def zookeeper_ping(rng: random.Random) -> bytes:
    return struct.pack("!iii", 8, -2, 11)


def zookeeper_pong(zxid: int) -> bytes:
    return struct.pack("!iiqi", 16, -2, zxid, 0)


def dns_query(txid: int, name: str) -> bytes:
    qname = b"".join(bytes([len(p)]) + p.encode() for p in name.split(".")) + b"\x00"
    return struct.pack("!HHHHHH", txid, 0x0100, 1, 0, 0, 0) + qname + struct.pack("!HH", 1, 1)


def dns_response(txid: int, name: str, addr: bytes, ttl: int = 300) -> bytes:
    query = dns_query(txid, name)
    answer = struct.pack("!HHHIH", 0xC00C, 1, 1, ttl, 4) + addr
    return struct.pack("!HHHHHH", txid, 0x8180, 1, 1, 0, 0) + query[12:] + answer


def ntp_packet(mode: int, ts_us: int, stratum: int = 0) -> bytes:
    # NTP era offset between 1900 and the simulated epoch (2024-01-01T00:00:00Z)
    secs = 3_913_056_000 + ts_us // 1_000_000
    frac = (ts_us % 1_000_000) * (1 << 32) // 1_000_000
    li_vn_mode = (0 << 6) | (4 << 3) | mode
    head = struct.pack("!BBbb", li_vn_mode, stratum, 6, -20) + b"\x00" * 8
    ref = b"LOCL" if stratum == 1 else b"\x00" * 4
    zero = b"\x00" * 8
    xmit = struct.pack("!II", secs & 0xFFFFFFFF, frac)
    if mode == 3:
        return head + ref + zero + zero + zero + xmit
    return head + ref + xmit + xmit + xmit + xmit


def synth_app_bytes(tag: str, size: int, rng: random.Random) -> bytes:
    """``size`` bytes opening with a recognisable preamble for ``tag``, then deterministic filler."""
    if tag == "http_post":
        # Content-Length digits change the header size, so settle the body length first
        length = size
        for _ in range(4):
            head = http_request("POST", "/connectors", "kafka-connect:8083", b"x" * length)
            length = size - (len(head) - length)
            if length < 1:
                raise ValueError(f"size {size} below http_post preamble")
        head = http_request("POST", "/connectors", "kafka-connect:8083", b"x" * length)
        if len(head) != size:
            raise ValueError(f"cannot shape http_post to {size} bytes")
        return head[:size - length] + _filler(rng, length)
    if tag == "http_get":
        pre = http_request("GET", "/tools.tar.gz", "client-connect:8000")
    elif tag == "ssh":
        pre = SSH_CLIENT_BANNER
    elif tag == "scp":
        return ssh_record(size, 94, rng)
    elif tag == "kafka_produce":
        return kafka_produce_request(size, rng.randrange(1 << 31), rng)
    elif tag == "zookeeper_ping":
        pre = zookeeper_ping(rng)
    elif tag == "dns":
        pre = struct.pack("!HHHHHH", rng.randrange(1 << 16), 0x0100, 1, 0, 0, 0)
    elif tag == "ntp":
        pre = bytes([0x23])
    elif tag == "tls_record":
        return tls_record(size, rng)
    else:
        raise ValueError(f"unknown app tag {tag!r}")
    if size < len(pre):
        raise ValueError(f"size {size} below {tag} preamble length {len(pre)}")
    return pre + _filler(rng, size - len(pre))
