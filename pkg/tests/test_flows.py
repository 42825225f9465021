import random

import pytest
from hypothesis import given, settings, strategies as st

from iotsynth import wire
from iotsynth.flows import (
    COLUMNS, FEATURE_COLUMNS, ID_COLUMNS, _iat_stats, compute_features, extract, flow_rows,
    read_flows_csv, schema_text, write_flows_csv,
)

import oracles

A = wire.Endpoint("10.0.0.1", 40000, "02:00:00:00:00:01")
B = wire.Endpoint("10.0.0.2", 1883, "02:00:00:00:00:02")


def handshake_capture(t0=0, step=1000):
    s = wire.TcpSession(A, B)
    frames = [s.syn(), s.syn_ack(), s.handshake_ack(), *s.data(0, b"hello"), s.ack(1),
              s.fin(0), s.fin(1), s.final_ack(0)]
    return [(t0 + i * step, f) for i, f in enumerate(frames)]


def test_handshake_flow_counts():
    flows, report = extract(handshake_capture())
    assert len(flows) == 1
    row = compute_features(flows[0])
    assert (row["fwd_packets"], row["bwd_packets"]) == (5, 3)
    assert (row["src_ip"], row["src_port"], row["dst_port"]) == ("10.0.0.1", 40000, 1883)
    assert row["fwd_syn_count"] == 1 and row["bwd_syn_count"] == 1
    assert row["fwd_fin_count"] == 1 and row["bwd_fin_count"] == 1
    assert row["duration_us"] == 7000
    assert report == {"total_packets": 8, "non_ip_skipped": 0, "ip_packets": 8, "flows": 1}


def test_close_without_final_ack():
    flows, _ = extract(handshake_capture()[:7])
    row = compute_features(flows[0])
    assert (row["fwd_packets"], row["bwd_packets"]) == (4, 3)


def test_three_way_handshake_only():
    s = wire.TcpSession(A, B)
    cap = [(0, s.syn()), (500, s.syn_ack()), (1000, s.handshake_ack()),
           (1500, s.data(0, b"x")[0])]
    row = compute_features(extract(cap)[0][0])
    assert (row["fwd_packets"], row["bwd_packets"]) == (3, 1)


def test_idle_timeout_splits():
    s = wire.TcpSession(A, B)
    cap = [(0, s.syn()), (1000, s.syn_ack()), (1500, s.handshake_ack()),
           (1500 + 121_000_000, s.data(0, b"late")[0])]
    assert len(extract(cap)[0]) == 2
    assert len(extract(cap, idle_timeout_s=200)[0]) == 1
    assert len(extract(cap, conversations=True)[0]) == 1


def test_rst_ends_flow():
    s = wire.TcpSession(A, B)
    s2 = wire.TcpSession(A, B)
    cap = [(0, s.syn()), (10, s.rst(0)), (20, s2.syn())]
    flows, _ = extract(cap)
    assert [len(f.packets) for f in flows] == [2, 1]


def test_empty_capture():
    flows, report = extract([])
    assert flows == [] and report["flows"] == 0


def test_non_ip_skipped():
    arp = wire.arp_frame(1, A.mac, A.ip, None, B.ip)
    flows, report = extract([(0, arp)] + handshake_capture(10))
    assert report["non_ip_skipped"] == 1 and report["ip_packets"] == 8
    assert flows[0].packet_indices == list(range(1, 9))


def test_iat_example():
    mn, mx, mean, std = _iat_stats([0, 10, 30, 60])
    assert (mn, mx, mean) == (10, 30, 20.0)
    assert std == pytest.approx((200 / 3) ** 0.5, abs=0)
    assert _iat_stats([5]) == (0, 0, 0.0, 0.0)


def test_iat_milliseconds_example():
    assert _iat_stats([0, 10_000, 30_000]) == (10_000, 20_000, 15_000.0, 5_000.0)


def test_hundred_byte_packets_over_one_second():
    frames = []
    for i in range(100):
        f = wire.udp_frame(A.mac, B.mac, A.ip, B.ip, 5000, 53, b"\x00" * 58)
        assert len(f) == 100
        frames.append((i * 1_000_000 // 99, f))
    row = compute_features(extract(frames)[0][0])
    assert row["duration_us"] == 1_000_000
    assert row["bytes_per_s"] == 10000.0 and row["packets_per_s"] == 100.0


def test_rates():
    row = compute_features(extract(handshake_capture(step=1000))[0][0])
    total = row["fwd_bytes"] + row["bwd_bytes"]
    assert row["bytes_per_s"] == total * 1_000_000 / 7000
    assert row["packets_per_s"] == 8 * 1_000_000 / 7000
    single = compute_features(extract(handshake_capture()[:1])[0][0])
    assert single["packets_per_s"] == 1_000_000.0


def _compare(cap):
    flows, report = extract(cap)
    ref, skipped = oracles.brute_flows(cap)
    assert report["non_ip_skipped"] == skipped
    assert len(flows) == len(ref)
    ours = flow_rows(flows)
    for row, f in zip(ours, ref):
        exp = oracles.features(f)
        for c in ID_COLUMNS[1:] + FEATURE_COLUMNS:
            assert row[c] == exp[c], c
    # conservation: each IP packet in exactly one flow
    idx = sorted(i for f in flows for i in f.packet_indices)
    assert idx == [p.i for p in oracles.parse(cap)[0]]
    assert sum(r["fwd_packets"] + r["bwd_packets"] for r in ours) == report["ip_packets"]


@settings(max_examples=60)
@given(seed=st.integers(0, 2**32), n=st.integers(0, 300))
def test_flows_match_oracle(seed, n):
    _compare(oracles.random_capture(random.Random(seed), n))


def test_flows_match_oracle_on_simulated_capture(mqttset_legit):
    _, _, res = mqttset_legit
    _compare(res.captures["broker"][:4000])


def test_csv_round_trip(tmp_path):
    rows = flow_rows(extract(oracles.random_capture(random.Random(3), 400))[0])
    path = tmp_path / "x.flows.csv"
    write_flows_csv(rows, path)
    assert read_flows_csv(path) == rows
    assert path.read_text().splitlines()[0] == ",".join(COLUMNS)


def test_header_only_file(tmp_path):
    path = tmp_path / "e.csv"
    write_flows_csv([], path)
    assert path.read_text() == ",".join(COLUMNS) + "\n"
    assert read_flows_csv(path) == []
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n")
    with pytest.raises(ValueError):
        read_flows_csv(bad)


def test_schema_lists_every_column():
    text = schema_text()
    assert text.startswith("column order: " + ",".join(COLUMNS))
