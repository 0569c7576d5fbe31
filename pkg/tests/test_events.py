import pytest

from modules.events import EventKind, EventLog, canonical_json
from modules.utils import EventLogFormatError


def sample_log():
    log = EventLog()
    log.emit(0, EventKind.RUN_STARTED, scenario={"name": "x"}, seed=3)
    log.emit(0, EventKind.ELECTION, network="main", willing=["a", "b"], winner="a")
    log.emit(4, EventKind.NODE_LEFT, node="b", reason="churn")
    return log


def test_sequence_numbers_follow_emission_order():
    log = sample_log()
    assert [e.seq for e in log] == [0, 1, 2]
    assert [e.kind for e in log.of_kind("election")] == [EventKind.ELECTION]


def test_canonical_json_is_sorted_and_compact():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


def test_binary_log_reloads_with_the_same_digest():
    log = sample_log()
    loaded = EventLog.from_bytes(log.to_bytes())
    assert loaded.digest() == log.digest()
    assert loaded.events == log.events


def test_digest_changes_with_any_payload_change():
    log = sample_log()
    other = sample_log()
    other.events[1] = other.events[1].__class__(0, 1, EventKind.ELECTION, {"network": "main", "willing": ["a"],
                                                                             "winner": "a"})
    assert log.digest() != other.digest()


def test_corrupt_logs_are_rejected():
    data = sample_log().to_bytes()
    with pytest.raises(EventLogFormatError):
        EventLog.from_bytes(b"NOTALOG!" + data[8:])
    with pytest.raises(EventLogFormatError):
        EventLog.from_bytes(data[:-3])


def test_jsonl_has_one_line_per_event():
    lines = sample_log().to_jsonl().splitlines()
    assert len(lines) == 3
    assert lines[2] == '{"kind":"node_left","payload":{"node":"b","reason":"churn"},"round":4,"seq":2}'
