"""
Simulation events and the length-prefixed binary event log.

Each event is encoded as ``lp(u64 round) ‖ lp(u64 seq) ‖ lp(kind) ‖
lp(payload JSON)`` where the payload JSON is canonical (sorted keys, no
whitespace, ASCII). The log file is ``b"BLSIMLOG"`` + u32 version + one
``u32 length ‖ event`` record per event. The event-log digest is SHA-256 over
the record section.
"""

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

from modules.utils import EventLogFormatError, Utils


class EventKind(str, Enum):
    RUN_STARTED = "run_started"
    NODE_JOINED = "node_joined"
    NODE_LEFT = "node_left"
    MODE_CHANGED = "mode_changed"
    DEFECTION = "defection"
    SUPPRESSION = "suppression"
    ELECTION = "election"
    BLOCK_PRODUCED = "block_produced"
    FORK_PUBLISHED = "fork_published"
    TIP_CHANGED = "tip_changed"
    FINALIZED = "finalized"
    SAFETY_VIOLATION = "safety_violation"
    FREEZE_CONFLICT = "freeze_conflict"
    PERMANENT_SPLIT = "permanent_split"
    SHUTDOWN_STEP = "shutdown_step"
    FINAL_BLOCK_DISPLACED = "final_block_displaced"
    FORK_ACTIVATED = "fork_activated"
    SNAPSHOT_TAKEN = "snapshot_taken"
    COMMITMENT_PUBLISHED = "commitment_published"
    RUN_FINISHED = "run_finished"


def canonical_json(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class SimEvent:
    round: int
    seq: int
    kind: EventKind
    payload: dict = field(default_factory=dict, hash=False)

    def serialize(self):
        return (
            Utils.lp_int(self.round)
            + Utils.lp_int(self.seq)
            + Utils.lp_str(self.kind.value)
            + Utils.lp_str(canonical_json(self.payload))
        )

    @classmethod
    def deserialize(cls, data):
        round_, offset = Utils.read_lp_int(data, 0)
        seq, offset = Utils.read_lp_int(data, offset)
        kind, offset = Utils.read_lp_str(data, offset)
        payload, offset = Utils.read_lp_str(data, offset)
        if offset != len(data):
            raise ValueError("trailing bytes after event")
        return cls(round_, seq, EventKind(kind), json.loads(payload))

    def to_json(self):
        return canonical_json({"round": self.round, "seq": self.seq, "kind": self.kind.value, "payload": self.payload})


class EventLog:
    """
    Append-only, totally ordered list of events for one run.
    """

    MAGIC = b"BLSIMLOG"
    VERSION = 1

    def __init__(self, events=None):
        self.events = list(events or [])

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def emit(self, round_, kind, **payload):
        event = SimEvent(round_, len(self.events), EventKind(kind), payload)
        self.events.append(event)
        return event

    def of_kind(self, kind):
        kind = EventKind(kind)
        return [e for e in self.events if e.kind is kind]

    def record_section(self):
        return b"".join(Utils.lp_bytes(e.serialize()) for e in self.events)

    def digest(self):
        return Utils.sha256(self.record_section())

    def to_bytes(self):
        return self.MAGIC + struct.pack("<I", self.VERSION) + self.record_section()

    @classmethod
    def from_bytes(cls, data):
        header = len(cls.MAGIC) + 4
        if len(data) < header or not data.startswith(cls.MAGIC):
            raise EventLogFormatError("not an event log (bad magic)")
        (version,) = struct.unpack_from("<I", data, len(cls.MAGIC))
        if version != cls.VERSION:
            raise EventLogFormatError(f"unsupported event log version {version}")
        events = []
        offset = header
        try:
            while offset < len(data):
                raw, offset = Utils.read_lp(data, offset)
                events.append(SimEvent.deserialize(raw))
        except (ValueError, KeyError) as e:
            raise EventLogFormatError(f"corrupt event record at byte {offset}: {e}") from e
        return cls(events)

    def to_jsonl(self):
        return "".join(e.to_json() + "\n" for e in self.events)
