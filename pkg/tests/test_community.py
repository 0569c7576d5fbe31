from fractions import Fraction

import pytest

from modules.community import (
    ChurnPhase,
    ChurnSchedule,
    Community,
    Disposition,
    MembershipOverrides,
    NodeSpec,
    Thickness,
    Universe,
)
from modules.consensus import Consensus, ConsensusRule
from modules.utils import RngStreams


def unit_universe(h, d):
    nodes = [NodeSpec(f"h{i:02d}", 1) for i in range(h)]
    nodes += [NodeSpec(f"d{i:02d}", 1, Disposition.DISHONEST) for i in range(d)]
    return Universe(tuple(nodes))


def brute_force_lumpy(universe, active, rule):
    """Toggle every node in turn and recompute the mode from scratch."""
    def mode(members):
        honest = sum((universe[n].weight for n in members if universe[n].disposition is Disposition.HONEST), Fraction(0))
        dishonest = sum((universe[n].weight for n in members if universe[n].disposition is Disposition.DISHONEST),
                        Fraction(0))
        return Consensus.mode_predicate(rule, honest, dishonest).mode

    base = mode(active)
    return any(mode(active ^ {node.id}) is not base for node in universe.nodes)


def test_lumpiness_matches_brute_force_for_unit_weights():
    rule = ConsensusRule.unstable(6)
    for h in range(0, 41):
        for d in range(0, 41 - h):
            if h + d == 0:
                continue
            universe = unit_universe(h, d)
            active = set(universe.ids)
            snapshot = Community.snapshot_of(universe, 0, active, {})
            lumpy, witness = Community.is_lumpy(universe, snapshot, rule)
            assert lumpy == brute_force_lumpy(universe, active, rule), (h, d)
            if lumpy:
                assert witness in universe
            if h > d:
                assert lumpy == (h - d <= 1), (h, d)


def test_lumpy_witness_is_the_smallest_flipping_id():
    universe = unit_universe(3, 2)
    snapshot = Community.snapshot_of(universe, 0, set(universe.ids), {})
    assert Community.is_lumpy(universe, snapshot, ConsensusRule.unstable()) == (True, "h00")


def test_thickness_uses_safety_factor():
    rule = ConsensusRule.unstable()
    universe = unit_universe(8, 0)
    snapshot = Community.snapshot_of(universe, 0, set(universe.ids), {})
    report = Community.thickness(universe, snapshot, rule, 2.0)
    assert report.label is Thickness.THICK
    assert report.margin == 8
    assert Community.thickness(universe, snapshot, rule, 8.0).label is Thickness.THIN
    with pytest.raises(ValueError):
        Community.thickness(universe, snapshot, rule, 0.5)


def test_empty_producing_set_is_thin():
    universe = unit_universe(8, 0)
    empty = Community.snapshot_of(universe, 0, set(), {})
    report = Community.thickness(universe, empty, ConsensusRule.unstable(), 2.0)
    assert report.thin and report.lumpy


def test_scheduled_members_follow_their_window():
    universe = Universe((
        NodeSpec("a", 1),
        NodeSpec("b", 1, join_round=5, leave_round=10),
    ))
    rng = RngStreams(0).get("churn")
    assert Community.active_set(universe, ChurnSchedule(), 4, rng).active == {"a"}
    assert Community.active_set(universe, ChurnSchedule(), 5, rng).active == {"a", "b"}
    assert Community.active_set(universe, ChurnSchedule(), 10, rng).active == {"a"}


def test_overrides_remove_departed_and_flip_dispositions():
    universe = Universe((NodeSpec("a", 1), NodeSpec("b", 2)))
    overrides = MembershipOverrides(frozenset({"a"}), {"b": Disposition.DISHONEST})
    snapshot = Community.active_set(universe, ChurnSchedule(), 3, RngStreams(0).get("churn"), overrides)
    assert snapshot.active == {"b"}
    assert snapshot.honest_weight == 0 and snapshot.dishonest_weight == 2


def test_churn_ramp_is_deterministic_and_monotone():
    universe = Universe(tuple(NodeSpec(f"n{i:02d}", 1) for i in range(12)))
    schedule = ChurnSchedule((ChurnPhase(0, 30, join_rate=0.5),), initial_members=2)
    runs = []
    for _ in range(2):
        rng = RngStreams(11).get("churn")
        previous = None
        sizes = []
        for round_ in range(30):
            previous = Community.active_set(universe, schedule, round_, rng, previous=previous)
            sizes.append(len(previous.active))
        runs.append(sizes)
    assert runs[0] == runs[1]
    assert runs[0][0] == 2
    assert all(a <= b for a, b in zip(runs[0], runs[0][1:]))


def test_churn_phases_must_be_ordered():
    with pytest.raises(ValueError):
        ChurnSchedule((ChurnPhase(5, 10), ChurnPhase(8, 12)))


def churn_sizes(universe, schedule, rounds, seed=0):
    rng = RngStreams(seed).get("churn")
    previous = None
    sizes = []
    for round_ in range(rounds):
        previous = Community.active_set(universe, schedule, round_, rng, previous=previous)
        sizes.append(len(previous.active))
    return sizes


def test_air_drop_ramp_reaches_twenty_by_round_four():
    universe = Universe(tuple(NodeSpec(f"n{i:02d}", 1) for i in range(30)))
    schedule = ChurnSchedule((ChurnPhase(0, 4, join_rate=5),), initial_members=0)
    assert churn_sizes(universe, schedule, 6) == [0, 5, 10, 15, 20, 20]


def test_ramp_down_at_rate_one_falls_to_zero():
    universe = Universe(tuple(NodeSpec(f"n{i:02d}", 1) for i in range(10)))
    schedule = ChurnSchedule((ChurnPhase(0, 10, leave_rate=1),))
    sizes = churn_sizes(universe, schedule, 12)
    assert sizes == [10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0, 0]


def test_whale_outside_the_community_makes_it_lumpy():
    nodes = [NodeSpec(f"h{i:02d}", 1) for i in range(6)]
    nodes += [NodeSpec(f"d{i:02d}", 1, Disposition.DISHONEST) for i in range(5)]
    nodes.append(NodeSpec("big", 10, Disposition.DISHONEST))
    universe = Universe(tuple(nodes))
    inside = {n.id for n in nodes if n.id != "big"}
    snapshot = Community.snapshot_of(universe, 0, inside, {})
    assert Community.is_lumpy(universe, snapshot, ConsensusRule.unstable()) == (True, "big")


def test_small_margin_against_heavy_nodes_is_thin():
    universe = Universe((
        NodeSpec("a", 2),
        NodeSpec("b", 2),
        NodeSpec("c", 1),
        NodeSpec("d", 2, Disposition.DISHONEST),
    ))
    snapshot = Community.snapshot_of(universe, 0, set(universe.ids), {})
    report = Community.thickness(universe, snapshot, ConsensusRule.unstable(), 2.0)
    assert not report.lumpy
    assert report.margin == 3 and report.max_weight == 2
    assert report.thin
    assert Community.thickness(universe, snapshot, ConsensusRule.unstable(), 1.0).label is Thickness.THICK
