"""
Command-line surface: ``simulate``, ``analyze`` and ``archive verify|compare``.

Exit codes: 0 success, 1 usage, 2 scenario parse/validation, 3 runtime
(I/O, corrupt event log or snapshot).
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from modules.analysis import Analysis
from modules.archive import Archive, Bulletin, Snapshot
from modules.data_loader import DataLoader
from modules.events import EventKind, EventLog
from modules.insights import Insights
from modules.sim_engine import SimEngine, SimResult
from modules.utils import (
    EventLogFormatError,
    ScenarioParseError,
    ScenarioValidationError,
    SimulationError,
    SnapshotFormatError,
    Utils,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

MAX_SEED = 2 ** 64 - 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_seeds(text):
    """
    ``"n"`` expands to 0..n-1; ``"a,b,c"`` is an explicit list.
    """
    text = text.strip()
    if not text:
        return []
    try:
        if "," in text:
            seeds = [int(part) for part in text.split(",") if part.strip()]
        else:
            count = int(text)
            if not 0 <= count <= MAX_SEED + 1:
                raise UsageError(f"--seeds: count {count} is outside 0..2^64")
            seeds = list(range(count))
    except ValueError as e:
        raise UsageError(f"--seeds: not a count or a comma-separated list: {text!r}") from e
    except (OverflowError, MemoryError) as e:
        raise UsageError(f"--seeds: count {text} is too large to run") from e
    for seed in seeds:
        if not 0 <= seed <= MAX_SEED:
            raise UsageError(f"--seeds: {seed} is not an unsigned 64-bit integer")
    return seeds


def write_run_outputs(result, seed_dir):
    """Write one seed's metrics, event log, report, bulletin and snapshots."""
    outputs = result.scenario.outputs
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    result.metrics.to_csv(seed_dir / outputs["metrics"], index=False)
    events_path = seed_dir / outputs["events"]
    events_path.write_bytes(result.log.to_bytes())
    events_path.with_suffix(".jsonl").write_text(result.log.to_jsonl())
    (seed_dir / outputs["report"]).write_text(Insights.run_report(result))
    result.bulletin.save(seed_dir / "bulletin.json")
    snapshot_dir = seed_dir / "snapshots"
    snapshot_dir.mkdir(exist_ok=True)
    for snapshot in result.archives:
        snapshot.save(snapshot_dir / f"{snapshot.archivist}-r{snapshot.taken_round}-h{snapshot.height}.snap")
    for snapshot in result.horizon_snapshots:
        snapshot.save(snapshot_dir / f"{snapshot.archivist}-horizon.snap")


def _run_seed(scenario, seed, out_dir):
    result = SimEngine.run(scenario, seed)
    if out_dir is not None:
        write_run_outputs(result, Path(out_dir) / f"seed-{seed}")
    return Analysis.seed_row(result)


def run_batch(scenario, seeds, out_dir=None, workers=1):
    """
    Run a scenario once per seed and aggregate the outcomes.

    Parameters:
    -----------
    scenario : Scenario
        A validated scenario
    seeds : list of int
        Seeds to run; duplicates are run once
    out_dir : str, optional
        Where per-seed outputs and the summary go; nothing is written if None
    workers : int
        Worker processes; 1 runs in-process

    Returns:
    --------
    tuple
        (seed table DataFrame, summary dict)
    """
    seeds = sorted(set(seeds))
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_seed, [scenario] * len(seeds), seeds, [out_dir] * len(seeds)))
    else:
        rows = [_run_seed(scenario, seed, out_dir) for seed in seeds]

    seed_df = Analysis.seed_table_from_rows(rows)
    summary = Analysis.batch_summary(seed_df)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        seed_df.to_csv(out / "summary.csv", index=False)
        (out / "summary.md").write_text(Insights.batch_report(scenario.name, seed_df, summary))
        logger.info("batch summary for %d seeds written to %s", len(seeds), out)
    return seed_df, summary


def load_result(events_path):
    """Rebuild a run from its binary event log alone."""
    log = EventLog.from_bytes(Path(events_path).read_bytes())
    if not log.events or log.events[0].kind is not EventKind.RUN_STARTED:
        raise EventLogFormatError("event log does not start with run_started")
    started = log.events[0].payload
    try:
        scenario = DataLoader.scenario_from_dict(started["scenario"])
    except (ScenarioValidationError, KeyError) as e:
        raise EventLogFormatError(f"embedded scenario is unusable: {e}") from e
    return SimResult.from_log(log, scenario, started["seed"])


def build_parser():
    parser = _Parser(prog="blsim", description="Deterministic blockchain lifecycle simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    simulate = sub.add_parser("simulate", help="run a scenario over seeds")
    simulate.add_argument("--scenario", required=True, help="scenario JSON path or name under data/scenarios")
    simulate.add_argument("--seeds", required=True, help="seed count n (0..n-1) or comma-separated list")
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    analyze = sub.add_parser("analyze", help="recompute metrics and verdict from an event log")
    analyze.add_argument("--events", required=True, help="binary event log")
    analyze.add_argument("--out", help="directory for recomputed metrics and report")

    archive = sub.add_parser("archive", help="snapshot tooling")
    archive_sub = archive.add_subparsers(dest="archive_command", required=True, parser_class=_Parser)
    verify = archive_sub.add_parser("verify", help="verify one snapshot against a bulletin")
    verify.add_argument("--snapshot", required=True)
    verify.add_argument("--bulletin", help="bulletin JSON; omitted means unreachable")
    compare = archive_sub.add_parser("compare", help="classify several snapshots")
    compare.add_argument("--snapshots", required=True, nargs="+")
    compare.add_argument("--bulletin", help="bulletin JSON; omitted means unreachable")
    return parser


def _simulate(args):
    seeds = parse_seeds(args.seeds)
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    scenario = DataLoader().load_scenario(args.scenario)
    _, summary = run_batch(scenario, seeds, args.out, args.workers)
    if summary:
        print(f"{scenario.name}: {summary['seeds']} seeds, good-ending rate {summary['good_ending_rate']:.3f}, "
              f"rewrite-success frequency {summary['rewrite_success_frequency']:.3f}")
    else:
        print(f"{scenario.name}: no seeds run")
    return EXIT_OK


def _analyze(args):
    result = load_result(args.events)
    verdict = result.verdict
    print(f"stable={str(verdict.stable).lower()} cheap={str(verdict.cheap).lower()} "
          f"digest={result.log_digest.hex()}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        result.metrics.to_csv(out / result.scenario.outputs["metrics"], index=False)
        (out / result.scenario.outputs["report"]).write_text(Insights.run_report(result))
    return EXIT_OK


def _bulletin(path):
    return Bulletin.load(path) if path else Bulletin(reachable=False)


def _archive(args):
    bulletin = _bulletin(args.bulletin)
    if args.archive_command == "verify":
        snapshot = Snapshot.load(args.snapshot)
        verdict = Archive.verify_snapshot(snapshot, bulletin)
        report = Archive.internal_consistency_check(snapshot)
        line = f"{verdict.value} archivist={snapshot.archivist} height={snapshot.height}"
        if not report.ok:
            line += f" failing_height={report.failing_height} reason={report.reason}"
        print(line)
        return EXIT_OK
    snapshots = [Snapshot.load(p) for p in args.snapshots]
    if len(snapshots) < 2:
        raise UsageError("archive compare needs at least two snapshots")
    print(Archive.compare_archives(snapshots, bulletin).value)
    return EXIT_OK


def main(argv=None):
    """
    Run the command line and return its exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    Utils.configure_logging(args.verbose)
    handlers = {"simulate": _simulate, "analyze": _analyze, "archive": _archive}
    try:
        return handlers[args.command](args)
    except UsageError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except (ScenarioParseError, ScenarioValidationError) as e:
        logger.error("invalid scenario: %s", e)
        return EXIT_VALIDATION
    except (EventLogFormatError, SnapshotFormatError) as e:
        logger.error("corrupt input: %s", e)
        return EXIT_RUNTIME
    except (OSError, SimulationError) as e:
        logger.error("%s", e)
        return EXIT_RUNTIME


cli = main

if __name__ == "__main__":
    sys.exit(main())
