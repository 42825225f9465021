"""iotsynth command line: create-topology, run-scenario, extract-flows, label, validate, report.

Exit status: 0 success, 1 user error (bad arguments, configs or missing files),
2 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, analysis, flows, labeling, wire
from .attack import AttackPlanError
from .config import (FCSIZE_UNITS, ConfigError, parse_scenario_config, parse_topology_config,
                     preset_kafka_attack, preset_mqttset, render_scenario_config,
                     render_topology_config, trace_jobs)
from .engine import RunTimeout, run_trace
from .journal import GroundTruthJournal
from .topology import TopologyError, build_topology, ram_estimate

OUT_ENV = "IOTSYNTH_OUT"
MANIFEST = "manifest.json"


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- config loading

def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UserError(f"cannot read {path}: {exc.strerror or exc}") from None


def load_configs(args):
    """(TopologyConfig, ScenarioConfig | None) from --preset or --topology/--scenario files."""
    if args.preset:
        if args.topology or getattr(args, "scenario", None):
            raise UserError("--preset cannot be combined with --topology/--scenario")
        if args.preset == "mqttset":
            return preset_mqttset()
        return preset_kafka_attack(args.sensors if args.sensors is not None else 450)
    if not args.topology:
        raise UserError("either --preset or --topology is required")
    topo = parse_topology_config(_read(args.topology))
    scen = None
    if getattr(args, "scenario", None):
        scen = parse_scenario_config(_read(args.scenario), topo)
    return topo, scen


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UserError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------- subcommands

def cmd_create_topology(args) -> int:
    tcfg, _ = load_configs(args)
    topo = build_topology(tcfg, args.seed)
    out = _out_dir(args)
    (out / "topology.yaml").write_text(render_topology_config(tcfg))
    (out / "topology.txt").write_text(topo.dump_text())
    (out / "topology.json").write_text(topo.to_json())
    print(f"{len(topo.nodes)} nodes, {len(topo.links)} links -> {out}")
    return 0


def _run_job(tcfg, scen, seed, job, timeout):
    topo = build_topology(tcfg, seed)
    return run_trace(topo, scen, seed, job, timeout)


def _write_trace(out: Path, res) -> dict:
    (out / f"{res.trace}.journal.jsonl").write_text(res.journal.to_jsonl())
    rules = labeling.derive_rules(res.journal)
    pcaps = []
    for probe in res.plan.probes:
        caps = res.captures[probe.probe_id]
        wire.pcap_write(caps, out / probe.pcap_name)
        stem = probe.pcap_name[:-len(".pcap")]
        labels = labeling.label_packets(caps, rules)
        labeling.write_packet_labels(caps, labels, out / f"{stem}.labels.csv")
        pcaps.append({"probe": probe.probe_id, "pcap": probe.pcap_name,
                      "labels": f"{stem}.labels.csv", "packets": len(caps)})
    return {"name": res.trace, "journal": f"{res.trace}.journal.jsonl", "pcaps": pcaps,
            "stats": res.stats}


def settings_text(seed, topo_text, scen_text, scen, results) -> str:
    lines = [f"iotsynth {__version__}", f"seed: {seed}",
             f"topology_sha256: {_sha(topo_text)}", f"scenario_sha256: {_sha(scen_text)}",
             f"duration_s: {scen.duration_s:g}", f"latency_us: {scen.latency_us}",
             f"broker_capacity_events_per_s: {scen.broker_model.capacity_events_per_s}"]
    if scen.attack is not None:
        d = scen.attack.ddos
        lines.append(f"mqttsa_fcsize_unit: {d.fcsize_unit} (fcsize {d.flood_message_bytes} -> "
                     f"{d.flood_message_bytes * FCSIZE_UNITS[d.fcsize_unit]} bytes per flood message)")
        lines.append(f"compromised_fraction: {scen.attack.compromised_fraction:g}")
        lines.append(f"skip_to_ddos: {str(scen.attack.skip_to_ddos).lower()}")
    for res in results:
        lines.append("")
        lines.append(f"[trace {res.trace}]")
        lines.extend(f"command {c}" for c in res.settings)
        j = res.journal
        for e in j.entries:
            win = "-" if e.t_start_us is None else f"{e.t_start_us}..{e.t_end_us}"
            lines.append(f"step {e.step} {e.label} window_us {win} packets {e.packets}"
                         + (f" note: {e.note}" if e.note else ""))
        lines.append("compromised: " + (" ".join(j.compromised) or "-"))
        lines.append("ddos_participants: " + (" ".join(j.ddos_participants) or "-"))
        for n in j.notes:
            lines.append(f"note: {n}")
        gave = res.stats.get("gave_up") or []
        lines.append("sensors_gave_up: " + (" ".join(gave) or "-"))
    return "\n".join(lines) + "\n"


def cmd_run_scenario(args) -> int:
    tcfg, scen = load_configs(args)
    if scen is None:
        raise UserError("run-scenario needs --scenario (or --preset)")
    out = _out_dir(args)
    topo = build_topology(tcfg, args.seed)
    topo_text, scen_text = render_topology_config(tcfg), render_scenario_config(scen)
    (out / "topology.yaml").write_text(topo_text)
    (out / "scenario.yaml").write_text(scen_text)
    (out / "topology.txt").write_text(topo.dump_text())
    (out / "topology.json").write_text(topo.to_json())
    jobs = trace_jobs(scen)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            futs = [ex.submit(_run_job, tcfg, scen, args.seed, j, args.timeout) for j in jobs]
            results = [f.result() for f in futs]
    else:
        results = [run_trace(topo, scen, args.seed, j, args.timeout) for j in jobs]
    traces = [_write_trace(out, r) for r in results]
    (out / "settings.txt").write_text(settings_text(args.seed, topo_text, scen_text, scen, results))
    target = scen.attack.ddos.target_broker_address if scen.attack else None
    manifest = {"seed": args.seed, "ddos_target": target, "traces": traces}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    n = sum(len(t["pcaps"]) for t in traces)
    print(f"{len(traces)} trace(s), {n} pcap file(s) -> {out}")
    return 0


def _manifest(out: Path) -> dict:
    path = out / MANIFEST
    if not path.exists():
        raise UserError(f"{path} not found; run run-scenario first or pass capture files")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: {exc}") from None


def _pcap_list(args) -> list[Path]:
    if args.pcaps:
        paths = [Path(p) for p in args.pcaps]
    else:
        out = Path(args.out or os.environ.get(OUT_ENV) or "out")
        paths = [out / p["pcap"] for t in _manifest(out)["traces"] for p in t["pcaps"]]
    for p in paths:
        if not p.exists():
            raise UserError(f"capture file {p} not found")
    return paths


def _load_pcap(path: Path):
    try:
        return wire.pcap_read(path)
    except wire.PcapError as exc:
        raise UserError(f"{path}: {exc}") from None


def _stem(path: Path) -> Path:
    return path.with_suffix("")


def _extract_one(path: Path, idle: float, conversations: bool) -> dict:
    pk = _load_pcap(path)
    fl, rep = flows.extract(pk, idle)
    flows.write_flows_csv(flows.flow_rows(fl), f"{_stem(path)}.flows.csv")
    if conversations:
        conv, _ = flows.extract(pk, idle, conversations=True)
        flows.write_flows_csv(flows.flow_rows(conv), f"{_stem(path)}.conversations.csv")
    rep["pcap"] = str(path)
    return rep


def cmd_extract_flows(args) -> int:
    if args.schema:
        sys.stdout.write(flows.schema_text())
        return 0
    paths = _pcap_list(args)
    if args.jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            reps = list(ex.map(_extract_one, paths, [args.idle_timeout] * len(paths),
                               [args.conversations] * len(paths)))
    else:
        reps = [_extract_one(p, args.idle_timeout, args.conversations) for p in paths]
    for r in reps:
        print(f"{r['pcap']}: {r['flows']} flows, {r['ip_packets']} IP packets, "
              f"{r['non_ip_skipped']} non-IP skipped")
    return 0


def _label_one(path: Path, journal_path: Path, idle: float) -> dict:
    try:
        journal = GroundTruthJournal.from_jsonl(_read(journal_path))
    except ValueError as exc:
        raise UserError(f"{journal_path}: {exc}") from None
    pk = _load_pcap(path)
    rules = labeling.derive_rules(journal)
    labels = labeling.label_packets(pk, rules)
    labeling.write_packet_labels(pk, labels, f"{_stem(path)}.labels.csv")
    fl, _ = flows.extract(pk, idle)
    counts = labeling.label_flows(fl, labels)
    flows.write_flows_csv(flows.flow_rows(fl), f"{_stem(path)}.flows.csv")
    return {"pcap": str(path), "packets": dict(Counter(labels)), "flows": dict(counts)}


def cmd_label(args) -> int:
    if args.pcaps:
        if not args.journal:
            raise UserError("--journal is required when capture files are given")
        pairs = [(Path(p), Path(args.journal)) for p in args.pcaps]
    else:
        out = Path(args.out or os.environ.get(OUT_ENV) or "out")
        pairs = [(out / p["pcap"], out / t["journal"])
                 for t in _manifest(out)["traces"] for p in t["pcaps"]]
    for p, j in pairs:
        if not p.exists():
            raise UserError(f"capture file {p} not found")
        if not j.exists():
            raise UserError(f"journal {j} not found")
    if args.jobs > 1 and len(pairs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            reps = list(ex.map(_label_one, [p for p, _ in pairs], [j for _, j in pairs],
                               [args.idle_timeout] * len(pairs)))
    else:
        reps = [_label_one(p, j, args.idle_timeout) for p, j in pairs]
    for r in reps:
        pk = ", ".join(f"{k}={v}" for k, v in sorted(r["packets"].items()))
        fl = ", ".join(f"{k}={v}" for k, v in sorted(r["flows"].items()))
        print(f"{r['pcap']}: packets [{pk}] flows [{fl}]")
    return 0


def _sensor_ips(out: Path) -> list[str]:
    path = out / "topology.json"
    if not path.exists():
        raise UserError(f"{path} not found")
    doc = json.loads(path.read_text())
    return [n["ipv4"] for n in doc["nodes"] if n["kind"] == "sensor"]


def _broker_ips(out: Path) -> list[str]:
    doc = json.loads((out / "topology.json").read_text())
    return [n["ipv4"] for n in doc["nodes"] if n["kind"] == "mqtt_broker"]


def cmd_validate(args) -> int:
    out = Path(args.out or os.environ.get(OUT_ENV) or "out")
    man = _manifest(out)
    sensors = _sensor_ips(out)
    brokers = _broker_ips(out)
    broker = args.broker or man.get("ddos_target") or (brokers[0] if brokers else None)
    if broker is None:
        raise UserError("no MQTT broker in the topology")
    summary = {}
    for t in man["traces"]:
        journal = GroundTruthJournal.from_jsonl(_read(out / t["journal"]))
        start = next((e.t_start_us for e in journal.entries
                      if e.step == 6 and e.t_start_us is not None), None)
        best, best_n = None, -1
        for p in t["pcaps"]:
            pk = _load_pcap(out / p["pcap"])
            n = sum(len(v) for v in analysis._broker_acks(pk, broker).values())
            if n > best_n:
                best, best_n = (p, pk), n
        if best is None:
            continue
        p, pk = best
        series = analysis.all_ack_series(pk, broker, sensors)
        analysis.write_ack_csv(series, out / f"{t['name']}.ack_series.csv")
        end = pk[-1][0] if pk else 0
        doc = {"trace": t["name"], "probe": p["probe"], "broker": broker,
               "ddos_start_us": start, "participants": journal.ddos_participants}
        if start is not None:
            cutoff = start + int(args.cutoff_s * 1_000_000)
            doc.update(analysis.ddos_impact(pk, broker, start, cutoff, sensors,
                                            journal.ddos_participants, end))
            doc["cutoff_us"] = cutoff
            doc["shape"] = analysis.shape_checks(series, start, journal.ddos_participants)
        else:
            doc.update({"impact": 0.0, "pre_ddos_nodes": 0, "silenced": []})
        (out / f"{t['name']}.ddos_impact.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n")
        summary[t["name"]] = doc["impact"]
        print(f"{t['name']}: ddos_impact {doc['impact']:.3f} over {doc['pre_ddos_nodes']} "
              f"pre-DDoS nodes (probe {p['probe']}, broker {broker})")
    return 0


def cmd_report(args) -> int:
    if args.vms is not None or args.containers is not None:
        q, d = args.vms or 0, args.containers or 0
        print(f"RAM estimate for {q} VMs and {d} containers: {ram_estimate(q, d)} MB")
        return 0
    out = Path(args.out or os.environ.get(OUT_ENV) or "out")
    man = _manifest(out)
    doc = json.loads(_read(out / "topology.json"))
    kinds = Counter(n["kind"] for n in doc["nodes"])
    q = kinds.get("router", 0)
    d = sum(kinds.values()) - q
    lines = [f"nodes: " + ", ".join(f"{k}={v}" for k, v in sorted(kinds.items())),
             f"RAM estimate: {ram_estimate(q, d)} MB ({q} routers as VMs, {d} containers)"]
    for t in man["traces"]:
        for p in t["pcaps"]:
            lab = out / p["labels"]
            counts = Counter(r[2] for r in labeling.read_packet_labels(lab)) if lab.exists() else {}
            lines.append(f"{p['pcap']}: {p['packets']} packets; "
                         + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
            fpath = out / (p["pcap"][:-5] + ".flows.csv")
            if fpath.exists():
                fc = Counter(r["label"] for r in flows.read_flows_csv(fpath))
                lines.append("  flows: " + ", ".join(f"{k}={v}" for k, v in sorted(fc.items())))
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="iotsynth", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"iotsynth {__version__}")
    ap.add_argument("--print-preset", choices=("mqttset", "kafka-attack"),
                    help="print a preset's topology and scenario documents and exit")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, scenario=True):
        p.add_argument("--topology", help="topology config file")
        if scenario:
            p.add_argument("--scenario", help="scenario config file")
        p.add_argument("--preset", choices=("mqttset", "kafka-attack"))
        p.add_argument("--sensors", type=int, help="sensor count for the kafka-attack preset")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")

    p = sub.add_parser("create-topology", help="build the node graph and write its dump")
    common(p, scenario=False)
    p.set_defaults(func=cmd_create_topology)

    p = sub.add_parser("run-scenario", help="simulate and write pcaps, journal, labels, settings")
    common(p)
    p.add_argument("--timeout", type=float, help="wall-clock limit per trace in seconds")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_run_scenario)

    p = sub.add_parser("extract-flows", help="assemble flows from capture files")
    p.add_argument("pcaps", nargs="*")
    p.add_argument("--out")
    p.add_argument("--idle-timeout", type=float, default=flows.DEFAULT_IDLE_TIMEOUT_S)
    p.add_argument("--conversations", action="store_true",
                   help="also write the per-conversation view (no timeout, no teardown split)")
    p.add_argument("--schema", action="store_true", help="print the flow CSV schema and exit")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_extract_flows)

    p = sub.add_parser("label", help="label packets and flows from the journal")
    p.add_argument("pcaps", nargs="*")
    p.add_argument("--journal")
    p.add_argument("--out")
    p.add_argument("--idle-timeout", type=float, default=flows.DEFAULT_IDLE_TIMEOUT_S)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("validate", help="ACK inter-arrival series and DDoS impact")
    p.add_argument("--out")
    p.add_argument("--broker", help="broker address (default: DDoS target or first broker)")
    p.add_argument("--cutoff-s", type=float, default=60.0,
                   help="seconds after the DDoS start from which silence is measured")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="summarize a run directory and estimate testbed RAM")
    p.add_argument("--out")
    p.add_argument("--vms", type=int)
    p.add_argument("--containers", type=int)
    p.set_defaults(func=cmd_report)
    return ap


def print_preset(name: str) -> str:
    tcfg, scen = preset_mqttset() if name == "mqttset" else preset_kafka_attack()
    return ("# topology\n" + render_topology_config(tcfg) + "---\n# scenario\n"
            + render_scenario_config(scen))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_preset:
        sys.stdout.write(print_preset(args.print_preset))
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        print("iotsynth: error: a subcommand is required", file=sys.stderr)
        return 1
    if getattr(args, "jobs", 1) < 1:
        print("iotsynth: error: --jobs must be >= 1", file=sys.stderr)
        return 1
    if getattr(args, "sensors", None) is not None and args.sensors < 0:
        print("iotsynth: error: --sensors must be >= 0", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (UserError, ConfigError, TopologyError, AttackPlanError,
            labeling.LabelingError) as exc:
        print(f"iotsynth: error: {exc}", file=sys.stderr)
        return 1
    except RunTimeout as exc:
        print(f"iotsynth: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"iotsynth: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
