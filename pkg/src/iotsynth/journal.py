"""Ground-truth journal: what the attack actually did, serialized as JSON lines."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

LABEL_PRIORITY = {
    "normal": 0,
    "cve_exploitation": 1,
    "reverse_shell": 2,
    "scan_ports": 3,
    "credentials_bruteforce": 4,
    "transfer_payload_to_iot": 5,
    "mqttsa_slowite": 6,
}


@dataclass
class JournalEntry:
    step: int
    label: str
    initiators: list[str]
    responders: list[str]
    ports: list[int]
    protocol: str = "tcp"
    t_start_us: int | None = None
    t_end_us: int | None = None
    packets: int = 0
    note: str = ""

    def touch(self, t_send: int, t_arrive: int) -> None:
        if self.t_start_us is None or t_send < self.t_start_us:
            self.t_start_us = t_send
        if self.t_end_us is None or t_arrive > self.t_end_us:
            self.t_end_us = t_arrive
        self.packets += 1


@dataclass
class GroundTruthJournal:
    trace: str = "scenario"
    duration_us: int = 0
    entries: list[JournalEntry] = field(default_factory=list)
    ddos_participants: list[str] = field(default_factory=list)
    compromised: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, step: int, label: str, initiators, responders, ports, protocol: str = "tcp",
            note: str = "") -> JournalEntry:
        e = JournalEntry(step, label, sorted(set(initiators)), sorted(set(responders)),
                         sorted(set(ports)), protocol, note=note)
        self.entries.append(e)
        return e

    def clamp(self) -> None:
        """Trim windows to the capture horizon; packets past it were never recorded."""
        for e in self.entries:
            if e.t_start_us is not None and e.t_start_us >= self.duration_us:
                e.t_start_us = e.t_end_us = None
                e.note = (e.note + "; " if e.note else "") + "started after scenario end"
            elif e.t_end_us is not None and e.t_end_us >= self.duration_us:
                e.t_end_us = self.duration_us - 1

    def step_window(self, step: int) -> tuple[int, int] | None:
        wins = [(e.t_start_us, e.t_end_us) for e in self.entries
                if e.step == step and e.t_start_us is not None]
        if not wins:
            return None
        return min(w[0] for w in wins), max(w[1] for w in wins)

    def to_jsonl(self) -> str:
        meta = {"type": "meta", "trace": self.trace, "duration_us": self.duration_us,
                "ddos_participants": self.ddos_participants, "compromised": self.compromised,
                "notes": self.notes}
        lines = [json.dumps(meta, sort_keys=True)]
        for e in self.entries:
            lines.append(json.dumps({"type": "entry", **asdict(e)}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "GroundTruthJournal":
        j = cls()
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"journal line {n}: {exc}") from None
            kind = doc.pop("type", None)
            if kind == "meta":
                j.trace = doc["trace"]
                j.duration_us = doc["duration_us"]
                j.ddos_participants = doc.get("ddos_participants", [])
                j.compromised = doc.get("compromised", [])
                j.notes = doc.get("notes", [])
            elif kind == "entry":
                if doc.get("label") not in LABEL_PRIORITY:
                    raise ValueError(f"journal line {n}: unknown label {doc.get('label')!r}")
                j.entries.append(JournalEntry(**doc))
            else:
                raise ValueError(f"journal line {n}: unknown record type {kind!r}")
        return j
