import pandas as pd
import pytest

from modules.chain_core import GENESIS_BLOCK
from modules.data_loader import DataLoader
from modules.events import EventKind, EventLog
from modules.sim_engine import SimEngine, SimResult


@pytest.fixture
def minimal(minimal_scenario):
    return DataLoader.scenario_from_dict(minimal_scenario)


def test_same_seed_same_log(minimal):
    first = SimEngine.run(minimal, 7)
    second = SimEngine.run(minimal, 7)
    assert first.log_digest == second.log_digest
    assert first.log.to_bytes() == second.log.to_bytes()
    pd.testing.assert_frame_equal(first.metrics, second.metrics)


def test_different_seeds_elect_differently(minimal):
    assert SimEngine.run(minimal, 1).log_digest != SimEngine.run(minimal, 2).log_digest


def test_log_opens_and_closes_the_run(minimal):
    result = SimEngine.run(minimal, 3)
    events = result.log.events
    assert events[0].kind is EventKind.RUN_STARTED
    assert events[0].payload["seed"] == 3
    assert events[-1].kind is EventKind.RUN_FINISHED
    assert events[-1].round == minimal.horizon
    assert len(result.log.of_kind(EventKind.ELECTION)) == minimal.horizon


def test_every_produced_block_is_somewhere(minimal):
    result = SimEngine.run(minimal, 5)
    held = set()
    for view in result.views.values():
        held.update(view.blocks)
    for fork in result.private_forks.values():
        held.update(b.id for b in fork)
    produced = [bytes.fromhex(e.payload["id"]) for e in result.log.of_kind(EventKind.BLOCK_PRODUCED)]
    assert produced
    assert set(produced) <= held


def test_metrics_have_one_row_per_sampled_round(minimal):
    result = SimEngine.run(minimal, 0)
    assert list(result.metrics["round"]) == list(range(minimal.horizon))
    assert (result.metrics["honest_weight"] == 3).all()
    assert result.metrics["tip_height"].is_monotonic_increasing


def test_rebuilding_from_the_log_gives_the_same_answers(minimal):
    result = SimEngine.run(minimal, 11)
    log = EventLog.from_bytes(result.log.to_bytes())
    rebuilt = SimResult.from_log(log, minimal, 11)
    assert rebuilt.verdict == result.verdict
    pd.testing.assert_frame_equal(rebuilt.metrics, result.metrics)


def test_step_can_be_driven_by_hand(minimal):
    state = SimEngine.initial_state(minimal, 4)
    for round_ in range(minimal.horizon):
        SimEngine.step(state, round_)
    by_hand = SimEngine.finish(state)
    assert by_hand.log_digest == SimEngine.run(minimal, 4).log_digest


def test_gap_game_leaves_empty_stretches(load):
    scenario = load("gap_game")
    metrics = SimEngine.run(scenario, 0).metrics.set_index("round")
    block_rounds = [10, 21, 32, 43, 54]
    assert list(metrics.index[metrics["blocks_this_round"] > 0]) == block_rounds
    for produced in block_rounds:
        gap = metrics.loc[produced + 1: min(produced + 10, scenario.horizon - 1)]
        assert (gap["blocks_this_round"] == 0).all()
        assert (gap["production_thin"] == 1).all()
        assert (gap["thin"] == 0).all()


def tips_by_round(result, nodes, rounds):
    """Each node's tip at the end of every round, rebuilt from tip_changed events."""
    by_round = {}
    for event in result.log.of_kind(EventKind.TIP_CHANGED):
        by_round.setdefault(event.round, []).append(event)
    tips = {n: GENESIS_BLOCK.id for n in nodes}
    for round_ in rounds:
        for event in sorted(by_round.get(round_, []), key=lambda e: e.seq):
            if event.payload["node"] in tips:
                tips[event.payload["node"]] = bytes.fromhex(event.payload["tip"])
        yield round_, dict(tips)


def check_honest_views_agree(result, honest, rounds):
    blocks = result.replay.blocks
    for round_, tips in tips_by_round(result, honest, rounds):
        top = max(tips.values(), key=lambda t: blocks[t].height)
        for node_id, tip in tips.items():
            # only the block produced this round may still be in flight
            assert tip in (top, blocks[top].parent_id), (round_, node_id)


@pytest.mark.parametrize("seed", range(3))
def test_honest_views_agree_within_a_round(minimal, seed):
    result = SimEngine.run(minimal, seed)
    check_honest_views_agree(result, ["a", "b", "c"], range(minimal.horizon))


def test_honest_views_agree_before_shutdown(load):
    scenario = load("good_ending_baseline")
    result = SimEngine.run(scenario, 0)
    honest = [n.id for n in scenario.universe.nodes if n.id.startswith("h")]
    check_honest_views_agree(result, honest, range(scenario.plan.trigger_round))


@pytest.mark.parametrize("seed", range(3))
def test_eclipsed_node_lags_for_the_whole_suppression(load, seed):
    scenario = load("eclipse_lag")
    until = 20
    result = SimEngine.run(scenario, seed)

    eclipsed = [(e.round, e.payload["height"]) for e in result.log.of_kind(EventKind.TIP_CHANGED)
                if e.payload["node"] == "a"]
    assert all(height == 0 for round_, height in eclipsed if round_ < until)
    majority = max(e.payload["height"] for e in result.log.of_kind(EventKind.BLOCK_PRODUCED) if e.round < until)
    assert majority >= until - 1

    caught_round, caught_height = next((r, h) for r, h in eclipsed if h > 0)
    assert caught_round >= until
    assert caught_height >= majority

    dropped = [e for e in result.log.of_kind(EventKind.SUPPRESSION) if e.payload["victim"] == "a"]
    assert dropped
    assert all(e.round <= until for e in dropped)
