from fractions import Fraction

import pytest

from conftest import make_chain, view_of
from modules.data_loader import DataLoader
from modules.events import EventKind
from modules.shutdown import Procedure, Shutdown, ShutdownPlan
from modules.sim_engine import SimEngine


def test_hard_fork_plan_defaults():
    plan = ShutdownPlan(Procedure.HARD_FORK_TO_STABLE, trigger_round=20)
    assert plan.adoption_threshold == Fraction(2, 3)
    assert plan.adoption_window == 20
    assert plan.end_round == 30


@pytest.mark.parametrize("kwargs", [
    {"procedure": "final_block", "adoption_threshold": Fraction(1, 2)},
    {"procedure": "hard_fork_to_stable", "adoption_threshold": 2},
    {"procedure": "none", "freeze_depth": 0},
    {"procedure": "none", "trigger_round": -1},
])
def test_invalid_plans(kwargs):
    with pytest.raises(ValueError):
        ShutdownPlan(**kwargs)


def test_freeze_rule_locks_the_prefix():
    honest = make_chain(5, producer="h")
    view = view_of(honest)
    assert Shutdown.apply_freeze_rule(view, 2)
    assert view.frozen_height == 3
    assert not Shutdown.apply_freeze_rule(view, 2)

    longer = make_chain(6, producer="x", start_round=20)
    results = [view.add_block(block, 30) for block in longer]
    assert results[-1].conflict
    assert view.tip == honest[-1].id
    with pytest.raises(ValueError):
        Shutdown.apply_freeze_rule(view, 0)


def test_adoption_threshold_is_inclusive():
    assert Shutdown.adoption_met(2, 3, Fraction(2, 3))
    assert not Shutdown.adoption_met(1, 3, Fraction(2, 3))
    assert not Shutdown.adoption_met(0, 0, Fraction(1, 10))


def test_final_block_run_ends_well(load):
    scenario = load("good_ending_baseline")
    result = SimEngine.run(scenario, 0)
    steps = [e.payload["step"] for e in result.log.of_kind(EventKind.SHUTDOWN_STEP)]
    assert "final_block" in steps
    left = {e.payload["node"]: e for e in result.log.of_kind(EventKind.NODE_LEFT)}
    honest = [n.id for n in scenario.universe.nodes if n.id.startswith("h")]
    for node_id in honest:
        assert left[node_id].payload["reason"] == "departed"
        assert left[node_id].round <= scenario.plan.end_round
    assert result.verdict.stable and result.verdict.cheap
    assert result.verdict.detail.cost_after == 0


def test_hard_fork_activates_for_adopters_only(load):
    scenario = load("hard_fork_split")
    result = SimEngine.run(scenario, 0)
    activated = result.log.of_kind(EventKind.FORK_ACTIVATED)
    assert len(activated) == 1
    event = activated[0]
    assert event.payload["adopters"] == ["h1", "h2", "h3", "h4"]
    assert scenario.plan.trigger_round <= event.round < scenario.plan.trigger_round + scenario.plan.adoption_window
    fork = event.payload["network"]
    assert any(e.payload["network"] == fork and e.round > event.round
               for e in result.log.of_kind(EventKind.FINALIZED))
    assert result.views["h5"].tip_height > 0


def test_censored_fork_fails_at_window_end(load):
    scenario = load("hard_fork_censored")
    result = SimEngine.run(scenario, 0)
    assert not result.log.of_kind(EventKind.FORK_ACTIVATED)
    failed = [e for e in result.log.of_kind(EventKind.SHUTDOWN_STEP) if e.payload["step"] == "failed"]
    assert [e.round for e in failed] == [scenario.plan.trigger_round + scenario.plan.adoption_window - 1]


def test_final_block_ends_well_with_nobody_left():
    scenario = DataLoader.scenario_from_dict({
        "name": "all_honest_final_block",
        "horizon": 100,
        "consensus": {"kind": "stable", "quorum_fraction": "2/3"},
        "universe": [{"id": f"h{i:02d}", "weight": 1} for i in range(1, 13)],
        "fees_per_round": 1,
        "shutdown": {"procedure": "final_block", "trigger_round": 50, "grace_rounds": 10},
    })
    result = SimEngine.run(scenario, 0)
    left = {e.payload["node"] for e in result.log.of_kind(EventKind.NODE_LEFT)}
    assert left == {f"h{i:02d}" for i in range(1, 13)}
    verdict = result.verdict
    assert verdict.detail.records_checked > 0
    assert verdict.detail.unresolved == ()
    assert verdict.stable and verdict.cheap
