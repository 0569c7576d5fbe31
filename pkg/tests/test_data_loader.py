import copy
import json
from fractions import Fraction

import pytest

from modules.community import StrategyId
from modules.data_loader import DataLoader
from modules.shutdown import Procedure
from modules.utils import ScenarioParseError, ScenarioValidationError


def with_changes(document, **changes):
    document = copy.deepcopy(document)
    document.update(changes)
    return document


def test_minimal_scenario_loads(minimal_scenario):
    scenario = DataLoader.scenario_from_dict(minimal_scenario)
    assert scenario.name == "minimal"
    assert scenario.rule.confirmation_depth == 3
    assert scenario.universe.ids == ["a", "b", "c"]
    assert scenario.plan.procedure is Procedure.NONE
    assert scenario.outputs == {"metrics": "metrics.csv", "events": "events.bin", "report": "report.md"}


def test_source_reparses_to_an_equal_scenario(minimal_scenario):
    scenario = DataLoader.scenario_from_dict(minimal_scenario)
    again = DataLoader.scenario_from_dict(json.loads(json.dumps(scenario.source)))
    assert again == scenario


def test_fee_waiter_without_threshold_names_the_node(minimal_scenario):
    document = copy.deepcopy(minimal_scenario)
    document["universe"][1]["strategy"] = "fee_waiter"
    with pytest.raises(ScenarioValidationError) as info:
        DataLoader.scenario_from_dict(document)
    assert info.value.path == "universe.1.params.fee_threshold"
    assert "node b" in info.value.reason


def test_adoption_threshold_out_of_range(minimal_scenario):
    document = with_changes(minimal_scenario, shutdown={
        "procedure": "hard_fork_to_stable", "trigger_round": 5, "adoption_threshold": 1.5,
    })
    with pytest.raises(ScenarioValidationError) as info:
        DataLoader.scenario_from_dict(document)
    assert info.value.path == "shutdown.adoption_threshold"


@pytest.mark.parametrize("change, path", [
    ({"bogus": 1}, "bogus"),
    ({"horizon": 0}, "horizon"),
    ({"consensus": {"kind": "stable", "quorum_fraction": "1/2"}}, "consensus.quorum_fraction"),
    ({"consensus": {"kind": "stable", "confirmation_depth": 3}}, "consensus.confirmation_depth"),
    ({"shutdown": {"procedure": "final_block", "trigger_round": 25, "grace_rounds": 10}}, "shutdown.trigger_round"),
    ({"shutdown": {"procedure": "final_block", "adoption_window": 5}}, "shutdown.adoption_window"),
    ({"shutdown": {"archivists": ["ghost"]}}, "shutdown.archivists"),
    ({"fee_phases": [{"start": 5, "end": 9, "fees_per_round": 0}, {"start": 8, "end": 12, "fees_per_round": 0}]},
     "fee_phases.1"),
])
def test_cross_field_rules(minimal_scenario, change, path):
    with pytest.raises(ScenarioValidationError) as info:
        DataLoader.scenario_from_dict(with_changes(minimal_scenario, **change))
    assert info.value.path == path


def test_hard_fork_needs_unstable_consensus(minimal_scenario):
    document = with_changes(
        minimal_scenario,
        consensus={"kind": "stable"},
        shutdown={"procedure": "hard_fork_to_stable", "trigger_round": 5},
    )
    with pytest.raises(ScenarioValidationError) as info:
        DataLoader.scenario_from_dict(document)
    assert info.value.path == "shutdown.procedure"


def test_node_rules(minimal_scenario):
    duplicate = copy.deepcopy(minimal_scenario)
    duplicate["universe"][2]["id"] = "a"
    with pytest.raises(ScenarioValidationError, match="duplicate"):
        DataLoader.scenario_from_dict(duplicate)

    foreign = copy.deepcopy(minimal_scenario)
    foreign["universe"][0]["params"] = {"fee_threshold": 3}
    with pytest.raises(ScenarioValidationError) as info:
        DataLoader.scenario_from_dict(foreign)
    assert info.value.path == "universe.0.params.fee_threshold"

    victims = copy.deepcopy(minimal_scenario)
    victims["universe"][2].update(strategy="suppressor", disposition="dishonest", params={"victims": ["zz"]})
    with pytest.raises(ScenarioValidationError, match="unknown victim"):
        DataLoader.scenario_from_dict(victims)

    window = copy.deepcopy(minimal_scenario)
    window["universe"][0].update(join_round=9, leave_round=4)
    with pytest.raises(ScenarioValidationError):
        DataLoader.scenario_from_dict(window)


def test_late_dominator_joins_at_attack_start(minimal_scenario):
    document = copy.deepcopy(minimal_scenario)
    document["universe"].append({
        "id": "late", "weight": 5, "disposition": "dishonest", "strategy": "late_dominator",
        "params": {"attack_start_round": 12},
    })
    scenario = DataLoader.scenario_from_dict(document)
    late = scenario.universe["late"]
    assert late.strategy is StrategyId.LATE_DOMINATOR
    assert late.join_round == 12


def test_weights_and_fees(minimal_scenario):
    document = with_changes(minimal_scenario, fee_phases=[{"start": 10, "end": 20, "fees_per_round": 0}])
    document["universe"][0]["weight"] = "1/3"
    document["universe"][1]["weight"] = 0.1
    scenario = DataLoader.scenario_from_dict(document)
    assert scenario.universe["a"].weight == Fraction(1, 3)
    assert scenario.universe["b"].weight == Fraction(1, 10)
    assert scenario.fee_at(9) == 1 and scenario.fee_at(10) == 0 and scenario.fee_at(20) == 1


def test_load_scenario_files(tmp_path, loader):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ScenarioParseError):
        loader.load_scenario(str(path))
    assert "gap_game" in loader.available_scenarios()
    assert loader.load_scenario("gap_game").horizon == 60


def test_every_committed_scenario_validates(loader):
    for name in loader.available_scenarios():
        assert loader.load_scenario(name).name == name
