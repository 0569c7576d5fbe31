import json

import pandas as pd
import pytest

from conftest import make_chain, view_of
from modules.archive import Archive, Bulletin, Snapshot
from modules.chain_core import Record, RecordKind
from modules.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION, UsageError, main, parse_seeds, run_batch
from modules.consensus import ConsensusRule
from modules.data_loader import DataLoader


@pytest.fixture
def scenario_file(tmp_path, minimal_scenario):
    path = tmp_path / "minimal.json"
    path.write_text(json.dumps(minimal_scenario))
    return str(path)


def test_parse_seeds():
    assert parse_seeds("3") == [0, 1, 2]
    assert parse_seeds("5,2,5") == [5, 2, 5]
    assert parse_seeds("") == []
    with pytest.raises(UsageError):
        parse_seeds("many")
    with pytest.raises(UsageError):
        parse_seeds(str(2 ** 64))
    with pytest.raises(UsageError):
        parse_seeds(str(2 ** 64 + 1))
    with pytest.raises(UsageError):
        parse_seeds("-1")


def test_simulate_writes_per_seed_outputs(tmp_path, scenario_file, capsys):
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", scenario_file, "--seeds", "2", "--out", str(out)]) == EXIT_OK
    assert "minimal: 2 seeds" in capsys.readouterr().out
    for seed in (0, 1):
        seed_dir = out / f"seed-{seed}"
        for name in ("metrics.csv", "events.bin", "events.jsonl", "report.md", "bulletin.json"):
            assert (seed_dir / name).exists()
    summary = pd.read_csv(out / "summary.csv")
    assert list(summary["seed"]) == [0, 1]
    assert (out / "summary.md").read_text().startswith("# minimal")


def test_empty_seed_list_runs_nothing(tmp_path, scenario_file, capsys):
    assert main(["simulate", "--scenario", scenario_file, "--seeds", "", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert "no seeds run" in capsys.readouterr().out


def test_analyze_matches_the_original_run(tmp_path, scenario_file, capsys):
    out = tmp_path / "out"
    main(["simulate", "--scenario", scenario_file, "--seeds", "1", "--out", str(out)])
    capsys.readouterr()
    summary = pd.read_csv(out / "summary.csv", dtype={"log_digest": str})

    assert main(["analyze", "--events", str(out / "seed-0" / "events.bin"), "--out", str(tmp_path / "re")]) == EXIT_OK
    line = capsys.readouterr().out.strip()
    assert line.endswith(f"digest={summary['log_digest'][0]}")
    assert line.startswith(f"stable={str(bool(summary['stable'][0])).lower()}")
    original = pd.read_csv(out / "seed-0" / "metrics.csv")
    pd.testing.assert_frame_equal(pd.read_csv(tmp_path / "re" / "metrics.csv"), original)


def test_archive_verify_reports_tampering(tmp_path, capsys):
    rule = ConsensusRule.unstable(2)
    snapshot = Archive.snapshot_chain(view_of(make_chain(6, producer="h")), 4, "h", 9, rule)
    bulletin = Bulletin()
    bulletin.publish(snapshot.digest, 9, "h")
    bulletin.save(tmp_path / "bulletin.json")

    victim = snapshot.blocks[2]
    forged = victim.tampered(records=(Record(victim.records[0].record_id, RecordKind.DATA, b"forged"),))
    blocks = snapshot.blocks[:2] + (forged,) + snapshot.blocks[3:]
    Snapshot(snapshot.archivist, snapshot.taken_round, snapshot.height, blocks, snapshot.digest).save(
        tmp_path / "bad.snap"
    )
    snapshot.save(tmp_path / "good.snap")

    args = ["archive", "verify", "--snapshot", str(tmp_path / "bad.snap"), "--bulletin", str(tmp_path / "bulletin.json")]
    assert main(args) == EXIT_OK
    output = capsys.readouterr().out
    assert output.startswith("tampered archivist=h height=4")
    assert "failing_height=2" in output

    args = ["archive", "compare", "--snapshots", str(tmp_path / "good.snap"), str(tmp_path / "good.snap")]
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out.strip() == "consistent"


def test_exit_codes(tmp_path, minimal_scenario, scenario_file):
    assert main(["simulate", "--scenario", scenario_file]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["simulate", "--scenario", scenario_file, "--seeds", "x", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["simulate", "--scenario", scenario_file, "--seeds", str(2 ** 64), "--out", str(tmp_path)]) == EXIT_USAGE

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(dict(minimal_scenario, horizon=-1)))
    assert main(["simulate", "--scenario", str(bad), "--seeds", "1", "--out", str(tmp_path)]) == EXIT_VALIDATION

    assert main(["analyze", "--events", str(tmp_path / "missing.bin")]) == EXIT_RUNTIME
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"junk")
    assert main(["analyze", "--events", str(junk)]) == EXIT_RUNTIME
    assert main(["archive", "verify", "--snapshot", str(junk)]) == EXIT_RUNTIME


def test_run_batch_dedupes_and_sorts(minimal_scenario):
    scenario = DataLoader.scenario_from_dict(minimal_scenario)
    seed_df, summary = run_batch(scenario, [3, 1, 3])
    assert list(seed_df["seed"]) == [1, 3]
    assert summary["seeds"] == 2
