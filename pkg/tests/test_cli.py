import json
import subprocess
import sys

import pytest
import yaml

from iotsynth import cli, flows, wire
from iotsynth.config import parse_scenario_config, parse_topology_config, preset_mqttset


@pytest.fixture(scope="module")
def attack_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("attack")
    assert cli.main(["run-scenario", "--preset", "kafka-attack", "--sensors", "12",
                     "--seed", "3", "--out", str(out)]) == 0
    return out


def test_run_scenario_artifacts(attack_out):
    names = {p.name for p in attack_out.iterdir()}
    for probe in ("probe_a", "probe_b", "probe_c"):
        assert f"scenario-{probe}.pcap" in names
        assert f"scenario-{probe}.labels.csv" in names
    assert {"settings.txt", "manifest.json", "scenario.journal.jsonl", "topology.json",
            "topology.txt", "topology.yaml", "scenario.yaml"} <= names
    text = (attack_out / "settings.txt").read_text()
    assert "seed: 3" in text and "mqttsa -fc 100 -fcsize 10 -sc 2400 192.168.2.1" in text
    assert "mqttsa_fcsize_unit: KB" in text
    man = json.loads((attack_out / "manifest.json").read_text())
    assert man["ddos_target"] == "192.168.2.1" and len(man["traces"][0]["pcaps"]) == 3


def test_extract_label_validate_report(attack_out, capsys):
    assert cli.main(["extract-flows", "--out", str(attack_out)]) == 0
    rows = flows.read_flows_csv(attack_out / "scenario-probe_c.flows.csv")
    assert rows and {r["label"] for r in rows} == {"unlabeled"}
    assert cli.main(["label", "--out", str(attack_out)]) == 0
    rows = flows.read_flows_csv(attack_out / "scenario-probe_c.flows.csv")
    assert "mqttsa_slowite" in {r["label"] for r in rows}
    for pcap in attack_out.glob("*.pcap"):
        labels = {r["label"] for r in flows.read_flows_csv(pcap.with_suffix(".flows.csv"))}
        assert "unlabeled" not in labels
    assert cli.main(["validate", "--out", str(attack_out)]) == 0
    doc = json.loads((attack_out / "scenario.ddos_impact.json").read_text())
    assert doc["broker"] == "192.168.2.1" and 0 <= doc["impact"] <= 1
    assert (attack_out / "scenario.ack_series.csv").exists()
    assert cli.main(["report", "--out", str(attack_out)]) == 0
    assert "RAM estimate" in (attack_out / "report.txt").read_text()


def test_label_explicit_pcap(attack_out, tmp_path):
    pcap = tmp_path / "c.pcap"
    pcap.write_bytes((attack_out / "scenario-probe_a.pcap").read_bytes())
    assert cli.main(["label", str(pcap), "--journal",
                     str(attack_out / "scenario.journal.jsonl")]) == 0
    assert (tmp_path / "c.labels.csv").exists() and (tmp_path / "c.flows.csv").exists()
    assert cli.main(["label", str(pcap)]) == 1


def test_rerun_from_written_configs(attack_out, tmp_path):
    out = tmp_path / "again"
    assert cli.main(["run-scenario", "--topology", str(attack_out / "topology.yaml"),
                     "--scenario", str(attack_out / "scenario.yaml"), "--seed", "3",
                     "--out", str(out)]) == 0
    for probe in ("probe_a", "probe_b", "probe_c"):
        name = f"scenario-{probe}.pcap"
        assert (out / name).read_bytes() == (attack_out / name).read_bytes()


def test_create_topology(tmp_path):
    assert cli.main(["create-topology", "--preset", "mqttset", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "topology.json").read_text())
    assert sum(n["kind"] == "sensor" for n in doc["nodes"]) == 10


def test_env_var_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("IOTSYNTH_OUT", str(tmp_path / "envout"))
    assert cli.main(["create-topology", "--preset", "mqttset"]) == 0
    assert (tmp_path / "envout" / "topology.json").exists()


def test_schema(capsys):
    assert cli.main(["extract-flows", "--schema"]) == 0
    assert capsys.readouterr().out == flows.schema_text()


def test_print_preset_parses_back(capsys):
    assert cli.main(["--print-preset", "mqttset"]) == 0
    topo_doc, scen_doc = yaml.safe_load_all(capsys.readouterr().out)
    tcfg, scen = preset_mqttset()
    t2 = parse_topology_config(yaml.safe_dump(topo_doc))
    assert t2 == tcfg and parse_scenario_config(yaml.safe_dump(scen_doc), t2) == scen


def test_user_errors(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["run-scenario"]) == 1
    assert cli.main(["run-scenario", "--topology", str(tmp_path / "missing.yaml")]) == 1
    bad = tmp_path / "t.yaml"
    bad.write_text("sensor_count: -1\n")
    assert cli.main(["create-topology", "--topology", str(bad), "--out", str(tmp_path)]) == 1
    assert "sensor_count" in capsys.readouterr().err
    assert cli.main(["extract-flows", str(tmp_path / "none.pcap")]) == 1
    assert cli.main(["validate", "--out", str(tmp_path / "empty")]) == 1
    junk = tmp_path / "junk.pcap"
    junk.write_bytes(b"not a pcap at all, definitely not")
    assert cli.main(["extract-flows", str(junk)]) == 1
    assert cli.main(["run-scenario", "--preset", "mqttset", "--jobs", "0"]) == 1


def test_unknown_subcommand_exit_status():
    r = subprocess.run([sys.executable, "-m", "iotsynth", "frobnicate"], capture_output=True)
    assert r.returncode != 0
    r = subprocess.run([sys.executable, "-m", "iotsynth", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and r.stdout.startswith("iotsynth ")


def test_extract_empty_pcap(tmp_path):
    p = tmp_path / "empty.pcap"
    wire.pcap_write([], p)
    assert cli.main(["extract-flows", str(p)]) == 0
    assert (tmp_path / "empty.flows.csv").read_text() == ",".join(flows.COLUMNS) + "\n"


def test_report_ram_only(capsys):
    assert cli.main(["report", "--vms", "4", "--containers", "498"]) == 0
    assert "20306 MB" in capsys.readouterr().out
