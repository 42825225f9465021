import random

import dpkt
import pytest
from hypothesis import given, strategies as st

from iotsynth import wire
from oracles import checksums_ok, decode_pcap, decode_pcap_exact

A = wire.Endpoint("192.168.18.10", 40000, "02:00:00:00:00:01")
B = wire.Endpoint("192.168.2.1", 1883, "02:00:00:00:00:02")


def tcp_of(frame):
    return dpkt.ethernet.Ethernet(frame).data.data


def test_handshake_flags_and_numbers():
    s = wire.TcpSession(A, B, isn=(100, 900))
    syn, synack, ack = s.syn(), s.syn_ack(), s.handshake_ack()
    t1, t2, t3 = tcp_of(syn), tcp_of(synack), tcp_of(ack)
    assert (t1.flags, t2.flags, t3.flags) == (dpkt.tcp.TH_SYN, dpkt.tcp.TH_SYN | dpkt.tcp.TH_ACK,
                                             dpkt.tcp.TH_ACK)
    assert t2.ack == t1.seq + 1 and t3.ack == t2.seq + 1 and t3.seq == t1.seq + 1
    assert s.established


def test_closed_port_gets_rst_ack():
    s = wire.TcpSession(A, B)
    s.syn()
    t = tcp_of(s.refuse())
    assert t.flags == dpkt.tcp.TH_RST | dpkt.tcp.TH_ACK
    assert not s.established
    with pytest.raises(wire.TcpSessionError):
        s.data(0, b"x")


def test_ten_byte_segment_is_acked_for_ten_bytes():
    s = wire.TcpSession(A, B, isn=(1, 2))
    s.syn(), s.syn_ack(), s.handshake_ack()
    (seg,) = s.data(0, b"0123456789")
    t = tcp_of(seg)
    assert len(t.data) == 10 and t.flags & dpkt.tcp.TH_PUSH
    ack = tcp_of(s.ack(1))
    assert ack.ack == t.seq + 10
    assert s.fully_acked()


def test_data_on_reset_session_fails():
    s = wire.TcpSession(A, B)
    s.syn(), s.syn_ack(), s.handshake_ack()
    s.rst(0)
    with pytest.raises(wire.TcpSessionError):
        s.data(0, b"late")


def test_large_payload_is_segmented_at_mss():
    s = wire.TcpSession(A, B)
    s.syn(), s.syn_ack(), s.handshake_ack()
    frames = s.data(0, bytes(4000))
    sizes = [len(tcp_of(f).data) for f in frames]
    assert sizes == [wire.MSS, wire.MSS, 4000 - 2 * wire.MSS]
    assert all(len(f) <= wire.MTU + 14 for f in frames)


def test_partial_ack_with_upto():
    s = wire.TcpSession(A, B, isn=(0, 0))
    s.syn(), s.syn_ack(), s.handshake_ack()
    segs = s.data_segments(0, bytes(3 * wire.MSS))
    s.ack(1, upto=segs[0][1])
    assert s.acked[0] == wire.MSS
    s.ack(1, upto=segs[-1][1])
    assert s.fully_acked()


def test_interleaved_sessions_keep_separate_sequence_spaces():
    s1 = wire.TcpSession(A, B, isn=(10, 20))
    s2 = wire.TcpSession(wire.Endpoint(A.ip, 40001, A.mac), B, isn=(5000, 7000))
    frames = [s1.syn(), s2.syn(), s1.syn_ack(), s2.syn_ack(), s1.handshake_ack(),
              s2.handshake_ack()]
    frames += s1.data(0, b"a" * 5) + s2.data(0, b"b" * 7) + s1.data(0, b"c" * 3)
    seqs = {}
    for f in frames:
        t = tcp_of(f)
        if t.dport == 1883 and t.data:
            seqs.setdefault(t.sport, []).append((t.seq, len(t.data)))
    assert seqs[40000] == [(11, 5), (16, 3)]
    assert seqs[40001] == [(5001, 7)]


def test_fin_sequence_and_final_ack():
    s = wire.TcpSession(A, B, isn=(0, 0))
    s.syn(), s.syn_ack(), s.handshake_ack()
    f1, f2, last = s.fin(0), s.fin(1), s.final_ack(0)
    assert tcp_of(f2).ack == tcp_of(f1).seq + 1
    assert tcp_of(last).ack == tcp_of(f2).seq + 1
    with pytest.raises(wire.TcpSessionError):
        s.fin(0)


@given(st.lists(st.tuples(st.integers(0, 3), st.binary(min_size=1, max_size=3000)), max_size=12),
       st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_checksums_valid_under_independent_parser(chunks, i0, i1):
    s = wire.TcpSession(A, B, isn=(i0, i1))
    frames = [s.syn(), s.syn_ack(), s.handshake_ack()]
    for side, payload in chunks:
        frames += s.data(side % 2, payload)
        if side >= 2:
            frames.append(s.ack(1 - side % 2))
    frames.append(wire.udp_frame(A.mac, B.mac, A.ip, B.ip, 5353, 53, b"q" * (len(chunks) + 1)))
    frames.append(wire.icmp_frame(A.mac, B.mac, A.ip, B.ip, 8, 7, len(chunks), bytes(56)))
    for f in frames:
        assert checksums_ok(f)
        assert wire.checksums_valid(f)


def test_corrupted_frame_is_detected():
    s = wire.TcpSession(A, B)
    f = bytearray(s.syn())
    f[-1] ^= 0xFF
    assert not wire.checksums_valid(bytes(f))
    assert not checksums_ok(bytes(f))


def test_parse_summary_matches_dpkt():
    s = wire.TcpSession(A, B)
    s.syn(), s.syn_ack(), s.handshake_ack()
    (f,) = s.data(0, b"POST /connectors HTTP/1.1\r\n\r\n")
    p = wire.parse_frame(f)
    ip = dpkt.ethernet.Ethernet(f).data
    assert (p.src_port, p.dst_port, p.payload_len, p.tcp_flags) == \
        (ip.data.sport, ip.data.dport, len(ip.data.data), ip.data.flags)
    assert p.src_ip == A.ip and p.dst_ip == B.ip and p.l4_protocol == 6
    arp = wire.parse_frame(wire.arp_frame(1, A.mac, A.ip, None, B.ip))
    assert not arp.is_ip and arp.app_tag == "arp"


def test_app_tags():
    def tag(dport, payload):
        s = wire.TcpSession(A, wire.Endpoint(B.ip, dport, B.mac))
        s.syn(), s.syn_ack(), s.handshake_ack()
        return wire.parse_frame(s.data(0, payload)[0]).app_tag
    assert tag(8083, b"POST /connectors HTTP/1.1\r\n") == "http_post"
    assert tag(8000, b"GET /tools HTTP/1.0\r\n") == "http_get"
    assert tag(22, b"SSH-2.0-OpenSSH_8.9\r\n") == "ssh"
    assert tag(22, b"\x00\x00\x00\x10\x04\x5e" + bytes(14)) == "scp"
    assert tag(9092, b"\x00" * 20) == "kafka_produce"
    assert tag(1883, b"\x10\x00") == "mqtt"


def test_empty_capture_is_24_bytes(tmp_path):
    p = tmp_path / "e.pcap"
    wire.pcap_write([], p)
    data = p.read_bytes()
    assert len(data) == 24
    assert data[:4] == bytes.fromhex("d4c3b2a1")
    assert wire.pcap_read(p) == []
    assert decode_pcap(data) == []


def test_pcap_round_trip_1000_packets(tmp_path):
    rng = random.Random(3)
    s = wire.TcpSession(A, B)
    frames = [s.syn(), s.syn_ack(), s.handshake_ack()]
    while len(frames) < 1000:
        frames += s.data(rng.randrange(2), rng.randbytes(rng.randrange(1, 2000)))
    frames = frames[:1000]
    ts = sorted(rng.randrange(0, 3_000_000_000) for _ in frames)
    pk = list(zip(ts, frames))
    p = tmp_path / "r.pcap"
    wire.pcap_write(pk, p)
    assert wire.pcap_read(p) == pk
    assert decode_pcap_exact(p.read_bytes()) == pk
    hdr = dpkt.pcap.Reader(open(p, "rb"))
    assert hdr.snaplen == wire.PCAP_SNAPLEN


def test_unsorted_write_and_bad_reads(tmp_path):
    with pytest.raises(wire.PcapError):
        wire.pcap_write([(5, b"x" * 60), (4, b"x" * 60)], tmp_path / "u.pcap")
    bad = tmp_path / "b.pcap"
    bad.write_bytes(b"\x00" * 24)
    with pytest.raises(wire.PcapError):
        wire.pcap_read(bad)
    good = tmp_path / "g.pcap"
    wire.pcap_write([(1, b"y" * 60)], good)
    trunc = tmp_path / "t.pcap"
    trunc.write_bytes(good.read_bytes()[:-5])
    with pytest.raises(wire.PcapError):
        wire.pcap_read(trunc)
