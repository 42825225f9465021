"""End-to-end acceptance checks; each prints one PASS/FAIL line.

Tolerances are pinned in the constants below.
"""

import filecmp
import io
import json
import random
import statistics
import time
import warnings

import dpkt
import pytest
from hypothesis import given, settings

from iotsynth import appproto as ap
from iotsynth import cli, wire
from iotsynth.analysis import (
    all_ack_series, ddos_impact, mqtt_publish_times, scan_syns, shape_checks,
)
from iotsynth.attack import expand_range
from iotsynth.flows import FEATURE_COLUMNS, ID_COLUMNS, extract, flow_rows
from iotsynth.journal import LABEL_PRIORITY
from iotsynth.labeling import derive_rules, label_packets
from iotsynth.topology import ram_estimate

import oracles
from test_appproto import messages

RUNTIME_LIMIT_S = 60.0
RAM_REFERENCE_GB = 20.4
RAM_REL_TOL = 0.005
RANDOM_MEAN_REL_TOL = 0.05
MIN_RANDOM_MESSAGES = 5000
IMPACT_MIN = 0.8
NEAR_ZERO_US = 100_000
CUTOFF_S = 60
FLOW_CAPTURES = 20
ROUND_TRIPS = 10_000


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def twin_runs(tmp_path_factory):
    dirs, times = [], []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"run{k}")
        t0 = time.monotonic()
        rc = cli.main(["run-scenario", "--preset", "kafka-attack", "--sensors", "40",
                       "--seed", "7", "--out", str(out)])
        times.append(time.monotonic() - t0)
        rc |= cli.main(["extract-flows", "--out", str(out)])
        rc |= cli.main(["label", "--out", str(out)])
        assert rc == 0
        dirs.append(out)
    return dirs, times


@pytest.fixture(scope="module")
def mqttset_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("mqttset")
    rc = cli.main(["run-scenario", "--preset", "mqttset", "--seed", "1", "--out", str(out)])
    rc |= cli.main(["extract-flows", "--out", str(out)])
    rc |= cli.main(["label", "--out", str(out)])
    return out, rc


def test_1_determinism(twin_runs, capsys):
    (a, b), times = twin_runs
    files = sorted(p.name for p in a.iterdir())
    kinds = {".pcap", ".jsonl", ".csv"}
    compared = [f for f in files if any(f.endswith(k) for k in kinds)]
    same = all(filecmp.cmp(a / f, b / f, shallow=False) for f in files)
    ok = same and (b / "settings.txt").exists() and max(times) < RUNTIME_LIMIT_S
    report(capsys, 1, ok, f"{len(compared)} pcap/journal/CSV files byte-identical={same}; "
                          f"run wall time {max(times):.1f}s (< {RUNTIME_LIMIT_S:.0f}s)")


def test_2_ram_estimate(capsys):
    v = ram_estimate(4, 498)
    rel = abs(v / 1000 - RAM_REFERENCE_GB) / RAM_REFERENCE_GB
    report(capsys, 2, v == 20306 and rel < RAM_REL_TOL,
           f"ram_estimate(4, 498) = {v} MB; {rel:.2%} from 20.4 GB")


def test_3_mqttset_legitimate(mqttset_legit, capsys):
    topo, scen, res = mqttset_legit
    pk = res.captures["broker"]
    broker = topo.brokers[0].ipv4
    srcs = set()
    for _, raw in pk:
        p = wire.parse_frame(raw)
        if p.is_ip and p.l4_protocol == wire.PROTO_TCP and p.dst_port == 1883:
            srcs.add(p.src_ip)
    sensor_ips = {s.ipv4 for s in topo.sensors}
    periodic_ok, random_ok, detail = True, True, []
    for beh in scen.sensors:
        ip = topo.by_id[beh.sensor_id].ipv4
        times = mqtt_publish_times(pk, ip)
        gaps = [b - a for a, b in zip(times, times[1:])]
        if beh.schedule == "periodic":
            want = int(beh.interval_s * 1_000_000)
            good = set(gaps) == {want}
            periodic_ok &= good
            detail.append(f"{beh.sensor_id} {beh.interval_s:g}s exact={good}")
        else:
            mean = statistics.fmean(gaps) / 1_000_000
            good = len(times) >= MIN_RANDOM_MESSAGES and abs(mean - 1) <= RANDOM_MEAN_REL_TOL
            random_ok &= good
            detail.append(f"{beh.sensor_id} mean {mean:.4f}s over {len(times)}")
    addr_ok = srcs == sensor_ips and len(sensor_ips) == 10 and len(topo.brokers) == 1
    report(capsys, 3, addr_ok and periodic_ok and random_ok,
           f"{len(srcs)} sensor addresses -> 1 broker {broker}; " + "; ".join(detail))


def test_4_scan_pacing(attack40, capsys):
    topo, scen, res = attack40
    pivot = topo.by_id["kafka-connect"].ipv4
    t0, t1 = res.journal.step_window(3)
    syns = [s for s in scan_syns(res.captures["probe_b"], pivot) if t0 <= s[0] <= t1]
    gap = min(b[0] - a[0] for a, b in zip(syns, syns[1:]))
    targets = expand_range(scen.attack.scan.target_ranges[0])
    hit = sorted(ip for _, ip in syns)
    ok = gap >= 1_000_000 / 0.7 and hit == sorted(targets)
    report(capsys, 4, ok, f"{len(syns)} SYNs to {len(set(hit))}/{len(targets)} addresses; "
                          f"min gap {gap} us (>= {1_000_000 / 0.7:.1f})")


def test_5_ddos_impact(attack40, capsys):
    topo, scen, res = attack40
    pk = res.captures["probe_c"]
    broker = scen.attack.ddos.target_broker_address
    sensors = [s.ipv4 for s in topo.sensors]
    start = res.journal.step_window(6)[0]
    att = res.journal.ddos_participants
    imp = ddos_impact(pk, broker, start, start + CUTOFF_S * 1_000_000, sensors, att, pk[-1][0])
    series = all_ack_series(pk, broker, sensors)
    shape = shape_checks(series, start, att, NEAR_ZERO_US)
    ok = (imp["impact"] >= IMPACT_MIN and shape["attackers_near_zero"]
          and len(shape["victims_with_larger_gaps"]) >= 1 and len(att) == 20)
    med = statistics.median(v for v in shape["attacker_median_post_us"].values())
    report(capsys, 5, ok, f"ddos_impact {imp['impact']:.3f} over {imp['pre_ddos_nodes']} nodes "
                          f"(>= {IMPACT_MIN}); {len(att)} attackers, median post-DDoS ACK gap "
                          f"{med / 1000:.1f} ms; {len(shape['victims_with_larger_gaps'])} victims "
                          f"with larger gaps")


def test_6_labeling(attack40, capsys):
    topo, scen, res = attack40
    rules = derive_rules(res.journal)
    total = agree = 0
    seen = set()
    for probe, pk in res.captures.items():
        labels = label_packets(pk, rules)
        total += len(labels) == len(pk)
        agree += sum(a == b for a, b in zip(labels, res.oracle[probe]))
        seen |= set(labels)
    n = sum(len(pk) for pk in res.captures.values())
    ok = total == len(res.captures) and agree == n and seen == set(LABEL_PRIORITY)
    report(capsys, 6, ok, f"{agree}/{n} packets agree with the agent tags; "
                          f"labels seen: {len(seen)}/{len(LABEL_PRIORITY)}")


def test_7_flow_oracle(capsys):
    rng = random.Random(2024)
    cols = ID_COLUMNS[1:] + FEATURE_COLUMNS
    bad, packets, nflows = 0, 0, 0
    for _ in range(FLOW_CAPTURES):
        cap = oracles.random_capture(random.Random(rng.getrandbits(64)), rng.randrange(50, 3000))
        packets += len(cap)
        fl, rep = extract(cap)
        ref, skipped = oracles.brute_flows(cap)
        rows = flow_rows(fl)
        nflows += len(rows)
        if len(rows) != len(ref) or skipped != rep["non_ip_skipped"]:
            bad += 1
            continue
        if any(r[c] != oracles.features(f)[c] for r, f in zip(rows, ref) for c in cols):
            bad += 1
            continue
        idx = sorted(i for f in fl for i in f.packet_indices)
        if idx != [p.i for p in oracles.parse(cap)[0]]:
            bad += 1
    report(capsys, 7, bad == 0, f"{FLOW_CAPTURES} captures, {packets} packets, {nflows} flows, "
                                f"{len(cols)} columns compared; mismatching captures: {bad}")


def test_8_protocol_conformance(twin_runs, mqttset_out, capsys):
    count = [0]

    @settings(max_examples=ROUND_TRIPS, database=None)
    @given(messages())
    def round_trip(msg):
        count[0] += 1
        assert ap.mqtt_decode(ap.mqtt_encode(msg)) == msg

    round_trip()
    (a, _), _ = twin_runs
    out, _ = mqttset_out
    pcaps = sorted(a.glob("*.pcap")) + sorted(out.glob("*.pcap"))
    frames = bad_sum = 0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for p in pcaps:
            for ts, raw in dpkt.pcap.Reader(io.BytesIO(p.read_bytes())):
                frames += 1
                bad_sum += not oracles.checksums_ok(bytes(raw))
    ok = count[0] >= ROUND_TRIPS and bad_sum == 0 and frames > 0
    report(capsys, 8, ok, f"{count[0]} MQTT round trips; {len(pcaps)} pcaps / {frames} frames "
                          f"read by dpkt; bad checksums: {bad_sum}")


def test_9_pipeline(twin_runs, mqttset_out, capsys):
    (a, _), _ = twin_runs
    out, rc = mqttset_out
    a_pcaps = sorted(a.glob("*.pcap"))
    a_labels = sorted(a.glob("*.labels.csv"))
    m_man = json.loads((out / "manifest.json").read_text())
    m_pcaps = sorted(out.glob("*.pcap"))
    ok = (rc == 0 and len(a_pcaps) == 3 and len(a_labels) == 3 and (a / "settings.txt").exists()
          and len(m_man["traces"]) == 6 and len(m_pcaps) == 6
          and len(sorted(out.glob("*.flows.csv"))) == 6)
    report(capsys, 9, ok, f"attack preset: {len(a_pcaps)} pcaps, {len(a_labels)} label files, "
                          f"settings.txt; mqttset preset: {len(m_man['traces'])} traces, "
                          f"{len(m_pcaps)} pcaps")
