"""
Universe vs. community membership, churn, and the smooth/lumpy and
thick/thin analyzers.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from modules.consensus import Consensus
from modules.utils import Utils


class Disposition(str, Enum):
    HONEST = "honest"
    DISHONEST = "dishonest"


class StrategyId(str, Enum):
    HONEST_DEFAULT = "honest_default"
    REWRITE_ATTACKER = "rewrite_attacker"
    SUPPRESSOR = "suppressor"
    FEE_WAITER = "fee_waiter"
    DEFECTOR = "defector"
    LATE_DOMINATOR = "late_dominator"


class Thickness(str, Enum):
    THICK = "thick"
    THIN = "thin"


@dataclass(frozen=True)
class NodeSpec:
    id: str
    weight: Fraction
    disposition: Disposition = Disposition.HONEST
    strategy: StrategyId = StrategyId.HONEST_DEFAULT
    join_round: Optional[int] = None
    leave_round: Optional[int] = None
    params: dict = field(default_factory=dict, hash=False)
    adopts_fork: bool = True

    def __post_init__(self):
        object.__setattr__(self, "weight", Utils.as_weight(self.weight))
        object.__setattr__(self, "disposition", Disposition(self.disposition))
        object.__setattr__(self, "strategy", StrategyId(self.strategy))
        if self.weight <= 0:
            raise ValueError(f"node {self.id}: weight must be positive")
        if self.join_round is not None and self.leave_round is not None and self.join_round >= self.leave_round:
            raise ValueError(f"node {self.id}: join_round must precede leave_round")

    @property
    def scheduled(self):
        """True when the node follows its own join/leave window instead of churn."""
        return self.join_round is not None or self.leave_round is not None

    def in_window(self, round_):
        start = self.join_round if self.join_round is not None else 0
        return start <= round_ and (self.leave_round is None or round_ < self.leave_round)


@dataclass(frozen=True)
class Universe:
    nodes: tuple
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: n.id))
        index = {}
        for node in nodes:
            if node.id in index:
                raise ValueError(f"duplicate node id {node.id}")
            index[node.id] = node
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "_index", index)

    def __getitem__(self, node_id):
        return self._index[node_id]

    def __contains__(self, node_id):
        return node_id in self._index

    @property
    def ids(self):
        return [n.id for n in self.nodes]

    @property
    def max_weight(self):
        return max((n.weight for n in self.nodes), default=Fraction(0))


@dataclass(frozen=True)
class ChurnPhase:
    start: int
    end: int
    join_rate: float = 0.0
    leave_rate: float = 0.0


@dataclass(frozen=True)
class ChurnSchedule:
    phases: tuple = ()
    initial_members: Optional[int] = None

    def __post_init__(self):
        phases = tuple(self.phases)
        previous_end = None
        for phase in phases:
            if phase.start >= phase.end:
                raise ValueError("churn phase must have start < end")
            if phase.join_rate < 0 or phase.leave_rate < 0:
                raise ValueError("churn rates must be non-negative")
            if previous_end is not None and phase.start < previous_end:
                raise ValueError("churn phases must be ordered and non-overlapping")
            previous_end = phase.end
        object.__setattr__(self, "phases", phases)

    def phase_at(self, round_):
        for phase in self.phases:
            if phase.start <= round_ < phase.end:
                return phase
        return None


@dataclass(frozen=True)
class MembershipOverrides:
    """Strategy- or shutdown-driven departures and disposition changes."""

    departed: frozenset = frozenset()
    dispositions: dict = field(default_factory=dict, hash=False)


@dataclass(frozen=True)
class CommunitySnapshot:
    round: int
    active: frozenset
    honest_weight: Fraction
    dishonest_weight: Fraction
    dispositions: dict = field(default_factory=dict, hash=False, compare=False)
    # churn bookkeeping for schedule-free members
    churn_active: frozenset = field(default=frozenset(), compare=False)
    churn_seen: frozenset = field(default=frozenset(), compare=False)

    @property
    def total_weight(self):
        return self.honest_weight + self.dishonest_weight


@dataclass(frozen=True)
class ThicknessReport:
    label: Thickness
    lumpy: bool
    witness: Optional[str]
    margin: Fraction
    max_weight: Fraction

    @property
    def thin(self):
        return self.label is Thickness.THIN


class Community:
    """
    A class to evaluate community membership and its analyzers
    """

    @staticmethod
    def snapshot_of(universe, round_, active, dispositions):
        """
        Build a snapshot from an explicit member set.

        Parameters:
        -----------
        universe : Universe
            All potential nodes
        round_ : int
            Round the snapshot describes
        active : iterable of str
            Active member ids
        dispositions : dict
            Current disposition per node id (missing ids use the NodeSpec's)
        """
        dispositions = {n.id: Disposition(dispositions.get(n.id, n.disposition)) for n in universe.nodes}
        honest = Fraction(0)
        dishonest = Fraction(0)
        for node_id in active:
            if dispositions[node_id] is Disposition.HONEST:
                honest += universe[node_id].weight
            else:
                dishonest += universe[node_id].weight
        return CommunitySnapshot(round_, frozenset(active), honest, dishonest, dispositions)

    @staticmethod
    def _realize(rate, rng):
        count = math.floor(rate)
        fraction = rate - count
        if fraction > 0 and float(rng.random()) < fraction:
            count += 1
        return count

    @staticmethod
    def _pick(pool, count, rng):
        if count <= 0 or not pool:
            return []
        if count >= len(pool):
            return list(pool)
        picked = rng.choice(len(pool), size=count, replace=False)
        return [pool[i] for i in sorted(int(i) for i in picked)]

    @staticmethod
    def _churn_step(schedule, round_, churn_active, churn_seen, free_ids, departed, rng):
        phase = schedule.phase_at(round_) if schedule is not None else None
        if phase is None:
            return churn_active, churn_seen
        leaves = Community._realize(phase.leave_rate, rng)
        joins = Community._realize(phase.join_rate, rng)
        present = sorted(i for i in churn_active if i not in departed)
        leaving = set(Community._pick(present, leaves, rng))
        pool = [i for i in free_ids if i not in churn_seen and i not in departed]
        joining = set(Community._pick(pool, joins, rng))
        return (churn_active - leaving) | joining, churn_seen | joining

    @staticmethod
    def active_set(universe, schedule, round_, rng, overrides=None, previous=None):
        """
        Community at ``round_``.

        Members with an explicit join/leave window follow it exactly.
        Schedule-free members start active (or the first ``initial_members``
        of them by id) and then join/leave at the phase rates; phase round
        ``t`` takes effect from round ``t + 1``. Departures in ``overrides``
        win over both. Pass the previous round's snapshot to advance one step;
        without it the churn is replayed from round 0 using ``rng``.
        """
        overrides = overrides or MembershipOverrides()
        departed = overrides.departed
        free_ids = [n.id for n in universe.nodes if not n.scheduled]

        if previous is None:
            has_churn = schedule is not None and (schedule.phases or schedule.initial_members is not None)
            count = len(free_ids)
            if has_churn and schedule.initial_members is not None:
                count = schedule.initial_members
            churn_active = frozenset(free_ids[:count])
            churn_seen = churn_active
            start = 0
        else:
            churn_active, churn_seen = previous.churn_active, previous.churn_seen
            start = previous.round
        for t in range(start, round_):
            churn_active, churn_seen = Community._churn_step(
                schedule, t, churn_active, churn_seen, free_ids, departed, rng
            )

        active = {n.id for n in universe.nodes if n.scheduled and n.in_window(round_)}
        active |= churn_active
        active -= departed
        snapshot = Community.snapshot_of(universe, round_, active, overrides.dispositions)
        return CommunitySnapshot(
            round_, snapshot.active, snapshot.honest_weight, snapshot.dishonest_weight,
            snapshot.dispositions, frozenset(churn_active), frozenset(churn_seen),
        )

    @staticmethod
    def is_lumpy(universe, snapshot, rule):
        """
        Exact search for a single node whose membership toggle flips the mode.

        Returns:
        --------
        tuple
            (lumpy, smallest flipping node id or None)
        """
        base = Consensus.mode_predicate(rule, snapshot.honest_weight, snapshot.dishonest_weight).mode
        for node in universe.nodes:
            disposition = snapshot.dispositions.get(node.id, node.disposition)
            delta = -node.weight if node.id in snapshot.active else node.weight
            honest, dishonest = snapshot.honest_weight, snapshot.dishonest_weight
            if disposition is Disposition.HONEST:
                honest += delta
            else:
                dishonest += delta
            if Consensus.mode_predicate(rule, honest, dishonest).mode is not base:
                return True, node.id
        return False, None

    @staticmethod
    def thickness(universe, snapshot, rule, safety_factor=2.0):
        factor = Utils.as_weight(safety_factor)
        if factor < 1:
            raise ValueError("safety_factor must be at least 1")
        lumpy, witness = Community.is_lumpy(universe, snapshot, rule)
        state = Consensus.mode_predicate(rule, snapshot.honest_weight, snapshot.dishonest_weight)
        max_weight = universe.max_weight
        thin = lumpy or state.margin_to_flip <= factor * max_weight
        label = Thickness.THIN if thin else Thickness.THICK
        return ThicknessReport(label, lumpy, witness, state.margin_to_flip, max_weight)


active_set = Community.active_set
is_lumpy = Community.is_lumpy
thickness = Community.thickness
