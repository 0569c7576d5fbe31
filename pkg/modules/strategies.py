"""
Per-round node behaviour: what each strategy wants to do, and how the block it
produces is put together.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from modules.chain_core import Block, Marker, Record, RecordKind
from modules.community import Disposition, StrategyId

logger = logging.getLogger(__name__)

DEFAULT_DEFECT_THRESHOLD = Fraction(33, 100)

STRATEGY_PARAMS = {
    StrategyId.HONEST_DEFAULT: frozenset(),
    StrategyId.REWRITE_ATTACKER: frozenset({"attack_start_round", "target_height"}),
    StrategyId.SUPPRESSOR: frozenset({"victims", "suppress_from", "suppress_until", "censor"}),
    StrategyId.FEE_WAITER: frozenset({"fee_threshold"}),
    StrategyId.DEFECTOR: frozenset({"defect_threshold", "target_height"}),
    StrategyId.LATE_DOMINATOR: frozenset({"attack_start_round", "target_height"}),
}

REQUIRED_PARAMS = {
    StrategyId.FEE_WAITER: frozenset({"fee_threshold"}),
    StrategyId.LATE_DOMINATOR: frozenset({"attack_start_round"}),
}


class Action(str, Enum):
    PRODUCE_ON = "produce_on"
    WITHHOLD = "withhold"
    PUBLISH_FORK = "publish_fork"
    SUPPRESS = "suppress"
    APPROVE = "approve"
    SIGNAL_ADOPTION = "signal_adoption"
    DEPART = "depart"


class Directive(str, Enum):
    """Shutdown-procedure instructions handed to honest nodes for one round."""

    FINAL_BLOCK = "final_block"
    SIGNAL_ADOPTION = "signal_adoption"
    DEPART = "depart"


@dataclass
class StrategyState:
    strategy: StrategyId
    params: dict = field(default_factory=dict)
    private_fork: list = field(default_factory=list)
    fork_base: Optional[bytes] = None
    attacking: bool = False
    defected: bool = False

    @classmethod
    def for_node(cls, node):
        return cls(StrategyId(node.strategy), dict(node.params))

    @property
    def is_attacker(self):
        return self.strategy in (StrategyId.REWRITE_ATTACKER, StrategyId.LATE_DOMINATOR)

    def private_height(self, view):
        if self.private_fork:
            return self.private_fork[-1].height
        if self.fork_base is not None:
            return view.blocks[self.fork_base].height
        return -1

    def reset_fork(self):
        self.private_fork = []
        self.fork_base = None
        self.attacking = False


@dataclass(frozen=True)
class Decision:
    actions: frozenset
    parent: Optional[bytes] = None
    private: bool = False
    victims: frozenset = frozenset()
    exclude_kinds: frozenset = frozenset()
    defected: bool = False

    def wants(self, action):
        return action in self.actions

    @property
    def willing(self):
        return Action.PRODUCE_ON in self.actions


@dataclass(frozen=True)
class RoundContext:
    """What a node may read about the world besides its own view."""

    round: int
    active_weight: Fraction
    depth: int = 6
    directives: frozenset = frozenset()
    community_thin: bool = False


class Mempool:
    """
    Pending records of one network plus the fee mass accrued since the last
    public block.
    """

    def __init__(self):
        self.records = OrderedDict()
        self.fee_pool = 0.0

    def __contains__(self, record_id):
        return record_id in self.records

    def __len__(self):
        return len(self.records)

    def add(self, record):
        self.records.setdefault(record.record_id, record)

    def accrue(self, fees):
        self.fee_pool += float(fees)

    def pending_for(self, view, parent_id, exclude_kinds=frozenset()):
        included = set()
        for block in view.path_to(parent_id):
            included.update(r.record_id for r in block.records)
        return [
            r for r in self.records.values()
            if r.record_id not in included and r.kind not in exclude_kinds
        ]

    def claim(self, block):
        for record in block.records:
            self.records.pop(record.record_id, None)
        self.fee_pool = 0.0


class Strategies:
    """
    A class to evaluate node strategies
    """

    @staticmethod
    def decide_action(node, view, round_, mempool, state, context=None):
        """
        Decide one node's actions for a round.

        Parameters:
        -----------
        node : NodeSpec
            The deciding node
        view : ChainView
            Its local view after this round's deliveries
        round_ : int
            Current round
        mempool : Mempool
            Pending records and fee pool of the node's network
        state : StrategyState
            Mutable per-node strategy memory
        context : RoundContext
            Community weight, shutdown directives and (optionally) thickness

        Returns:
        --------
        Decision
        """
        context = context or RoundContext(round_, node.weight)
        if Directive.DEPART in context.directives:
            return Decision(frozenset({Action.DEPART}))

        if state.strategy is StrategyId.DEFECTOR and not state.defected:
            if Strategies._should_defect(node, state, context):
                Strategies._defect(state, view, round_, context.depth)
                logger.debug("round %d: node %s defects", round_, node.id)
                decision = Strategies._attack(view, round_, state)
                return Decision(decision.actions, decision.parent, decision.private, defected=True)
            return Strategies._honest(view, mempool, state, context)

        if state.is_attacker:
            return Strategies._attack(view, round_, state)
        if state.strategy is StrategyId.SUPPRESSOR:
            return Strategies._suppress(view, round_, state)
        return Strategies._honest(view, mempool, state, context)

    @staticmethod
    def _honest(view, mempool, state, context):
        actions = {Action.APPROVE}
        if Directive.SIGNAL_ADOPTION in context.directives:
            actions.add(Action.SIGNAL_ADOPTION)
        eager = Directive.FINAL_BLOCK in context.directives
        if state.strategy is StrategyId.FEE_WAITER and not eager:
            threshold = float(state.params["fee_threshold"])
            if mempool.fee_pool < threshold:
                actions.add(Action.WITHHOLD)
                return Decision(frozenset(actions))
        actions.add(Action.PRODUCE_ON)
        return Decision(frozenset(actions), parent=view.tip)

    @staticmethod
    def _should_defect(node, state, context):
        threshold = Fraction(str(state.params.get("defect_threshold", DEFAULT_DEFECT_THRESHOLD)))
        if context.active_weight > 0 and node.weight / context.active_weight >= threshold:
            return True
        return context.community_thin

    @staticmethod
    def _defect(state, view, round_, depth):
        state.defected = True
        state.strategy = StrategyId.REWRITE_ATTACKER
        state.params.setdefault("target_height", max(0, view.tip_height - depth))
        state.params["attack_start_round"] = round_

    @staticmethod
    def _attack(view, round_, state):
        """
        Rewrite attacker: camouflage as an honest producer until the attack
        starts, then grow a private fork from ``target_height`` and publish it
        as soon as it is strictly longer than the public chain.
        """
        actions = {Action.APPROVE, Action.PRODUCE_ON}
        if round_ < int(state.params.get("attack_start_round", 0)):
            return Decision(frozenset(actions), parent=view.tip)
        if not state.attacking:
            target = min(int(state.params.get("target_height", 0)), view.tip_height)
            state.fork_base = view.ancestor_at(view.tip, target)
            state.private_fork = []
            state.attacking = True
        if state.private_fork and state.private_height(view) > view.tip_height:
            actions.add(Action.PUBLISH_FORK)
        parent = state.private_fork[-1].id if state.private_fork else state.fork_base
        return Decision(frozenset(actions), parent=parent, private=True)

    @staticmethod
    def _suppress(view, round_, state):
        actions = {Action.APPROVE}
        victims = frozenset(state.params.get("victims", ()))
        start = int(state.params.get("suppress_from", 0))
        until = state.params.get("suppress_until")
        if victims and start <= round_ and (until is None or round_ < int(until)):
            actions.add(Action.SUPPRESS)
        else:
            victims = frozenset()
        if state.params.get("censor"):
            actions.add(Action.PRODUCE_ON)
            return Decision(
                frozenset(actions), parent=Strategies.censor_parent(view), victims=victims,
                exclude_kinds=frozenset({RecordKind.ADOPTION_SIGNAL}),
            )
        actions.add(Action.WITHHOLD)
        return Decision(frozenset(actions), victims=victims)

    @staticmethod
    def censor_parent(view):
        """Best-ranked block whose ancestry carries no adoption signal."""
        tainted = {}
        for block in sorted(view.blocks.values(), key=lambda b: b.height):
            own = any(r.kind is RecordKind.ADOPTION_SIGNAL for r in block.records)
            tainted[block.id] = own or tainted.get(block.parent_id, False)
        clean = [block_id for block_id, bad in tainted.items() if not bad and view.is_compatible(block_id)]
        return min(clean, key=view.rank)

    @staticmethod
    def forged_records(view, height, producer, round_, max_bytes):
        """Copies of the public records at ``height`` with rewritten bodies."""
        path = view.tip_path()
        if height < len(path) and path[height].records:
            return tuple(
                Record(r.record_id, r.kind, (b"forged:" + r.body)[:max_bytes])
                for r in path[height].records
            )
        return (Record(f"{producer}-r{round_}", RecordKind.DATA, f"{producer}:{round_}".encode()),)

    @staticmethod
    def compose_block(node_id, view, state, decision, round_, mempool, final_payload=None, final_block=None):
        """
        Build the block a freshly elected producer publishes (or keeps).

        Parameters:
        -----------
        final_payload : bytes or None
            When set, the producer is under a final-block directive
        final_block : bytes or None
            Id of the network's first final block, if one exists
        """
        if decision.private:
            parent = view.blocks[decision.parent] if decision.parent in view.blocks else None
            if parent is None:
                parent = state.private_fork[-1]
            height = parent.height + 1
            records = Strategies.forged_records(view, height, node_id, round_, view.max_record_bytes)
            return Block.create(parent.id, height, node_id, round_, records)

        parent = view.blocks[decision.parent]
        if final_payload is not None:
            if final_block is not None and view.descends_from(parent.id, final_block):
                return Block.child_of(parent, node_id, round_)
            record = Record(f"final-{node_id}-r{round_}", RecordKind.FINAL_MARKER_PAYLOAD, final_payload)
            return Block.child_of(parent, node_id, round_, (record,), Marker.FINAL)
        records = mempool.pending_for(view, parent.id, decision.exclude_kinds)
        return Block.child_of(parent, node_id, round_, records)

    @staticmethod
    def approves(disposition, view, block, node_id):
        """Honest nodes approve proposals extending their tip; dishonest ones approve everything."""
        if Disposition(disposition) is Disposition.DISHONEST:
            return True
        return block.producer == node_id or block.parent_id == view.tip


decide_action = Strategies.decide_action
