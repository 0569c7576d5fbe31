import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional

from modules.utils import Utils

logger = logging.getLogger(__name__)

DEFAULT_CONFIRMATION_DEPTH = 6
DEFAULT_QUORUM = Fraction(2, 3)


class ConsensusKind(str, Enum):
    UNSTABLE = "unstable"
    STABLE = "stable"


class Mode(str, Enum):
    HONEST = "honest"
    DISHONEST = "dishonest"


class Confirmation(str, Enum):
    UNCONFIRMED = "unconfirmed"
    CONFIRMED = "confirmed"


class FinalizeStatus(str, Enum):
    FINALIZED = "finalized"
    PENDING = "pending"


@dataclass(frozen=True)
class ConsensusRule:
    """
    Unstable (longest chain, depth-k confirmation) or stable (quorum finality).

    Exactly the fields of the rule's kind are set.
    """

    kind: ConsensusKind
    confirmation_depth: Optional[int] = None
    quorum_fraction: Optional[Fraction] = None

    def __post_init__(self):
        kind = ConsensusKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ConsensusKind.UNSTABLE:
            if self.quorum_fraction is not None:
                raise ValueError("unstable rule takes no quorum_fraction")
            if self.confirmation_depth is None or self.confirmation_depth < 1:
                raise ValueError("confirmation_depth must be a positive integer")
        else:
            if self.confirmation_depth is not None:
                raise ValueError("stable rule takes no confirmation_depth")
            if self.quorum_fraction is None:
                raise ValueError("stable rule needs quorum_fraction")
            q = Utils.as_weight(self.quorum_fraction)
            if not Fraction(1, 2) < q <= 1:
                raise ValueError("quorum_fraction must lie in (1/2, 1]")
            object.__setattr__(self, "quorum_fraction", q)

    @classmethod
    def unstable(cls, k=DEFAULT_CONFIRMATION_DEPTH):
        return cls(ConsensusKind.UNSTABLE, confirmation_depth=k)

    @classmethod
    def stable(cls, q=DEFAULT_QUORUM):
        return cls(ConsensusKind.STABLE, quorum_fraction=Utils.as_weight(q))

    @property
    def is_stable(self):
        return self.kind is ConsensusKind.STABLE

    def settled_height(self, view):
        """Height up to which the view's tip path is settled (k-confirmed or finalized)."""
        if self.is_stable:
            return view.finalized_height
        return max(0, view.tip_height - self.confirmation_depth)


@dataclass(frozen=True)
class ModeState:
    """
    Operating mode plus the distance to the mode threshold.

    In honest mode ``margin_to_flip`` is the least weight whose addition or
    removal flips the mode. In dishonest mode it is the infimum of the flipping
    weights: the threshold counts as dishonest, so exactly the margin does not
    flip and anything strictly beyond it does. It is 0 only on the threshold.
    """

    mode: Mode
    margin_to_flip: Fraction

    @property
    def honest(self):
        return self.mode is Mode.HONEST


@dataclass(frozen=True)
class FinalizeOutcome:
    status: FinalizeStatus
    approving_weight: Fraction
    required_weight: Fraction

    @property
    def finalized(self):
        return self.status is FinalizeStatus.FINALIZED


class FinalityTracker:
    """
    Network-wide ledger of explicit finalizations; a second, different block
    finalized at an already-finalized height is a safety violation.
    """

    def __init__(self):
        self.by_height = {}

    def record(self, block):
        """Return the id of a conflicting finalized block, or None."""
        existing = self.by_height.get(block.height)
        if existing is None:
            self.by_height[block.height] = block.id
            return None
        if existing != block.id:
            logger.warning("conflicting finalization at height %d", block.height)
            return existing
        return None


class Consensus:
    """
    The two consensus families and the honest/dishonest mode predicate.
    """

    @staticmethod
    def mode_predicate(rule, honest_weight, dishonest_weight):
        """
        Evaluate the operating mode.

        Parameters:
        -----------
        rule : ConsensusRule
            Unstable: honest iff honest > dishonest (a tie is dishonest).
            Stable: honest iff dishonest < (1 - q) * total.
        honest_weight, dishonest_weight : number
            Non-negative weights

        Returns:
        --------
        ModeState
        """
        h = Utils.as_weight(honest_weight)
        d = Utils.as_weight(dishonest_weight)
        if h < 0 or d < 0:
            raise ValueError("weights must be non-negative")
        if rule.is_stable:
            q = rule.quorum_fraction
            slack = (1 - q) * h - q * d
            mode = Mode.HONEST if slack > 0 else Mode.DISHONEST
            # adding dishonest weight moves the slack fastest (q >= 1 - q)
            return ModeState(mode, abs(slack) / q)
        mode = Mode.HONEST if h > d else Mode.DISHONEST
        return ModeState(mode, abs(h - d))

    @staticmethod
    def elect_producer(willing, rng):
        """
        Weight-proportional lottery over (node id, weight) pairs.

        Consumes exactly one draw from ``rng`` unless the list is empty.
        """
        if not willing:
            return None
        total = sum((Utils.as_weight(w) for _, w in willing), Fraction(0))
        target = Fraction(float(rng.random())) * total
        acc = Fraction(0)
        for node_id, weight in willing:
            acc += Utils.as_weight(weight)
            if target < acc:
                return node_id
        return willing[-1][0]

    @staticmethod
    def finalize_step(rule, proposal, approvals, active_weight):
        if not rule.is_stable:
            raise ValueError("finalize_step needs a stable rule")
        approvers = {}
        for node_id, weight in approvals:
            approvers[node_id] = Utils.as_weight(weight)
        approving = sum(approvers.values(), Fraction(0))
        required = rule.quorum_fraction * Utils.as_weight(active_weight)
        if required > 0 and approving >= required:
            return FinalizeOutcome(FinalizeStatus.FINALIZED, approving, required)
        return FinalizeOutcome(FinalizeStatus.PENDING, approving, required)

    @staticmethod
    def confirmation_status(view, block_id, k):
        block = view.blocks[block_id]
        if view.on_tip_path(block_id) and view.tip_height - block.height >= k:
            return Confirmation.CONFIRMED
        return Confirmation.UNCONFIRMED


mode_predicate = Consensus.mode_predicate
elect_producer = Consensus.elect_producer
finalize_step = Consensus.finalize_step
confirmation_status = Consensus.confirmation_status
