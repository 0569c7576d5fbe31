"""
Shutdown procedures, the fixed-depth freeze rule and the good-ending verdict.

The procedures are callbacks run by the engine once per round, after
finalization. They read and update the engine state directly: ``state`` must
provide ``scenario``, ``plan``, ``nodes``, ``networks``, ``bulletin``,
``archives``, ``block_store``, ``log``, ``snapshot``, ``shutdown`` and
``open_fork_network``.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from modules.archive import Archive, QueryPolicy
from modules.chain_core import Marker, RecordKind
from modules.community import Disposition
from modules.consensus import DEFAULT_QUORUM, Confirmation, Consensus
from modules.events import EventKind
from modules.strategies import Directive
from modules.utils import Utils

logger = logging.getLogger(__name__)

DEFAULT_GRACE_ROUNDS = 10
DEFAULT_ADOPTION_THRESHOLD = Fraction(2, 3)
DEFAULT_ADOPTION_WINDOW = 20


class Procedure(str, Enum):
    NONE = "none"
    FINAL_BLOCK = "final_block"
    HARD_FORK_TO_STABLE = "hard_fork_to_stable"
    ABANDON_AND_ARCHIVE = "abandon_and_archive"


class ForkStatus(str, Enum):
    PENDING = "pending"
    ACTIVATED = "activated"
    FAILED = "failed"


@dataclass(frozen=True)
class ShutdownPlan:
    procedure: Procedure = Procedure.NONE
    trigger_round: int = 0
    grace_rounds: int = DEFAULT_GRACE_ROUNDS
    adoption_threshold: Optional[Fraction] = None
    adoption_window: Optional[int] = None
    freeze_depth: Optional[int] = None
    archivists: tuple = ()
    cost_budget: int = 0
    reference_round: Optional[int] = None

    def __post_init__(self):
        procedure = Procedure(self.procedure)
        object.__setattr__(self, "procedure", procedure)
        if procedure is Procedure.HARD_FORK_TO_STABLE:
            threshold = self.adoption_threshold
            threshold = DEFAULT_ADOPTION_THRESHOLD if threshold is None else Utils.as_weight(threshold)
            if not 0 < threshold <= 1:
                raise ValueError("adoption_threshold must lie in (0, 1]")
            object.__setattr__(self, "adoption_threshold", threshold)
            if self.adoption_window is None:
                object.__setattr__(self, "adoption_window", DEFAULT_ADOPTION_WINDOW)
        elif self.adoption_threshold is not None or self.adoption_window is not None:
            raise ValueError("adoption fields only apply to hard_fork_to_stable")
        if self.freeze_depth is not None and self.freeze_depth < 1:
            raise ValueError("freeze_depth must be at least 1")
        if self.trigger_round < 0 or self.grace_rounds < 0:
            raise ValueError("trigger_round and grace_rounds must be non-negative")

    @property
    def end_round(self):
        """T + g, the round after which honest cost must stop."""
        return self.trigger_round + self.grace_rounds


@dataclass
class ShutdownRuntime:
    leaving: set = field(default_factory=set)
    archived: bool = False
    fork_status: Optional[ForkStatus] = None
    fork_network: Optional[str] = None
    displaced_logged: set = field(default_factory=set)
    split_logged: set = field(default_factory=set)


@dataclass(frozen=True)
class VerdictDetail:
    reference_round: int
    reference_height: int
    records_checked: int
    mismatched: tuple = ()
    unresolved: tuple = ()
    archive_disagreements: tuple = ()
    cost_after: int = 0


@dataclass(frozen=True)
class GoodEndingVerdict:
    stable: bool
    cheap: bool
    detail: VerdictDetail

    @property
    def good(self):
        return self.stable and self.cheap


class Shutdown:
    """
    A class to run shutdown procedures and judge how a chain ended
    """

    # -- directives ----------------------------------------------------------

    @staticmethod
    def directives_for(state, node_id, round_):
        """Directives a node follows this round (honest nodes only)."""
        plan = state.plan
        node = state.nodes[node_id]
        if node.disposition is not Disposition.HONEST:
            return frozenset()
        if node_id in state.shutdown.leaving:
            return frozenset({Directive.DEPART})
        if round_ < plan.trigger_round or node.network != "main":
            return frozenset()
        if plan.procedure is Procedure.FINAL_BLOCK:
            return frozenset({Directive.FINAL_BLOCK})
        if plan.procedure is Procedure.HARD_FORK_TO_STABLE:
            if state.shutdown.fork_status is ForkStatus.PENDING and node.spec.adopts_fork:
                return frozenset({Directive.SIGNAL_ADOPTION})
        return frozenset()

    @staticmethod
    def final_marker_payload(state, view, rule):
        """Latest bulletin commitment, else the digest of the producer's settled prefix."""
        latest = state.bulletin.latest()
        if latest is not None:
            return b"commitment:" + latest.digest.hex().encode()
        height = rule.settled_height(view)
        digest = Archive.snapshot_chain(view, height, view.owner, 0, rule).digest
        return f"settled:{height}:".encode() + digest.hex().encode()

    # -- per-round procedure steps -------------------------------------------

    @staticmethod
    def step(state, round_):
        plan = state.plan
        if plan.procedure is Procedure.NONE:
            return
        archive_round = plan.trigger_round
        if plan.procedure is Procedure.FINAL_BLOCK:
            archive_round = max(0, plan.trigger_round - 1)
        if round_ == archive_round and not state.shutdown.archived:
            if plan.archivists or plan.procedure is Procedure.ABANDON_AND_ARCHIVE:
                Shutdown.take_archives(state, round_)
            state.shutdown.archived = True
        if round_ < plan.trigger_round:
            return
        if plan.procedure is Procedure.FINAL_BLOCK:
            Shutdown.run_final_block(state, plan, round_)
        elif plan.procedure is Procedure.HARD_FORK_TO_STABLE:
            Shutdown.run_hard_fork(state, plan, round_)
        elif plan.procedure is Procedure.ABANDON_AND_ARCHIVE:
            Shutdown.run_abandon(state, plan, round_)

    @staticmethod
    def _honest_members(state, network="main"):
        return [
            node for node_id, node in sorted(state.nodes.items())
            if node.active and node.network == network and node.disposition is Disposition.HONEST
        ]

    @staticmethod
    def _leave(state, plan, node_id, round_, step):
        if node_id in state.shutdown.leaving:
            return
        state.shutdown.leaving.add(node_id)
        state.log.emit(round_, EventKind.SHUTDOWN_STEP, procedure=plan.procedure.value, step=step, node=node_id)

    @staticmethod
    def take_archives(state, round_):
        """Archivists snapshot their settled prefix and publish its digest."""
        rule = state.networks["main"].rule
        archivists = state.plan.archivists or tuple(n.spec.id for n in Shutdown._honest_members(state))
        for node_id in archivists:
            node = state.nodes[node_id]
            if not node.active or node.view is None:
                continue
            snapshot = Archive.snapshot_chain(node.view, rule.settled_height(node.view), node_id, round_, rule)
            state.archives.append(snapshot)
            state.log.emit(
                round_, EventKind.SNAPSHOT_TAKEN, archivist=node_id, height=snapshot.height,
                digest=snapshot.digest.hex(), snapshot=snapshot.to_bytes().hex(),
            )
            commitment = state.bulletin.publish(snapshot.digest, round_, node_id)
            state.log.emit(
                round_, EventKind.COMMITMENT_PUBLISHED, digest=commitment.digest.hex(),
                taken_round=commitment.taken_round, publisher=commitment.publisher, index=commitment.index,
            )

    @staticmethod
    def final_block_on_path(view):
        for block in view.tip_path():
            if block.marker is Marker.FINAL:
                return block
        return None

    @staticmethod
    def run_final_block(state, plan, round_):
        """
        Depart every honest node whose final block is settled, and report a
        final block that dropped off an active node's tip path.
        """
        network = state.networks["main"]
        rule = network.rule
        for node in Shutdown._honest_members(state):
            final = Shutdown.final_block_on_path(node.view)
            if final is None:
                continue
            if rule.is_stable:
                settled = node.view.finalized_height >= final.height
            else:
                status = Consensus.confirmation_status(node.view, final.id, rule.confirmation_depth)
                settled = status is Confirmation.CONFIRMED
            if settled:
                Shutdown._leave(state, plan, node.spec.id, round_, "depart")

        final_id = network.final_block
        if final_id is None or final_id in state.shutdown.displaced_logged:
            return
        for node_id, node in sorted(state.nodes.items()):
            if node.active and node.network == "main" and final_id in node.view and not node.view.on_tip_path(final_id):
                state.shutdown.displaced_logged.add(final_id)
                logger.warning("round %d: final block displaced at node %s", round_, node_id)
                state.log.emit(round_, EventKind.FINAL_BLOCK_DISPLACED, network="main", block=final_id.hex(), node=node_id)
                return

    @staticmethod
    def adoption_met(signal_weight, active_weight, threshold):
        return active_weight > 0 and Utils.as_weight(signal_weight) >= Utils.as_weight(threshold) * active_weight

    @staticmethod
    def run_hard_fork(state, plan, round_):
        """
        Count adoption signals on the honest consensus's confirmed chain and
        activate the stable fork once they carry enough weight.

        Returns:
        --------
        ForkStatus
        """
        runtime = state.shutdown
        if runtime.fork_status is None:
            runtime.fork_status = ForkStatus.PENDING
        if runtime.fork_status is not ForkStatus.PENDING:
            return runtime.fork_status

        rule = state.networks["main"].rule
        honest = Shutdown._honest_members(state)
        if honest:
            view = Shutdown.consensus_view(honest)
            confirmed = max(0, view.tip_height - rule.confirmation_depth)
            prefix = view.tip_path()[: confirmed + 1]
            signalers = set()
            for block in prefix:
                signalers.update(r.body.decode() for r in block.records if r.kind is RecordKind.ADOPTION_SIGNAL)
            members = [n for n in state.nodes.values() if n.active and n.network == "main"]
            active_weight = sum((n.spec.weight for n in members), Fraction(0))
            adopters = sorted(n.spec.id for n in members if n.spec.id in signalers)
            signal_weight = sum((state.nodes[a].spec.weight for a in adopters), Fraction(0))
            if Shutdown.adoption_met(signal_weight, active_weight, plan.adoption_threshold):
                fork_point = prefix[-1]
                network_id = "fork-" + fork_point.id.hex()[:8]
                state.open_fork_network(network_id, prefix, adopters, round_, DEFAULT_QUORUM)
                runtime.fork_status = ForkStatus.ACTIVATED
                runtime.fork_network = network_id
                state.log.emit(
                    round_, EventKind.FORK_ACTIVATED, network=network_id, fork_point=fork_point.id.hex(),
                    height=fork_point.height, adopters=adopters, quorum=Utils.weight_str(DEFAULT_QUORUM),
                    signal_weight=Utils.weight_str(signal_weight), active_weight=Utils.weight_str(active_weight),
                )
                state.log.emit(round_, EventKind.SHUTDOWN_STEP, procedure=plan.procedure.value,
                               step="activated", network=network_id)
                logger.info("round %d: hard fork activated as %s", round_, network_id)
                return runtime.fork_status
        if round_ >= plan.trigger_round + plan.adoption_window - 1:
            runtime.fork_status = ForkStatus.FAILED
            state.log.emit(round_, EventKind.SHUTDOWN_STEP, procedure=plan.procedure.value, step="failed")
            logger.info("round %d: hard fork adoption window expired", round_)
        return runtime.fork_status

    @staticmethod
    def consensus_view(members):
        """View of the smallest-id holder of the weighted-plurality tip."""
        weights = {}
        for node in members:
            weights[node.view.tip] = weights.get(node.view.tip, Fraction(0)) + node.spec.weight
        tip = min(weights, key=lambda t: (-weights[t], t))
        return next(n.view for n in members if n.view.tip == tip)

    @staticmethod
    def run_abandon(state, plan, round_):
        if round_ != plan.trigger_round:
            return
        for node in Shutdown._honest_members(state):
            Shutdown._leave(state, plan, node.spec.id, round_, "depart")

    # -- freeze rule ---------------------------------------------------------

    @staticmethod
    def apply_freeze_rule(view, freeze_depth):
        """
        Freeze the tip-path block ``freeze_depth`` below the local tip.

        Returns:
        --------
        bool
            True if the frozen prefix grew
        """
        if freeze_depth < 1:
            raise ValueError("freeze_depth must be at least 1")
        return view.freeze(freeze_depth)

    @staticmethod
    def _related(store, a, b):
        """True when one block is an ancestor-or-self of the other."""
        low, high = sorted((store[a], store[b]), key=lambda blk: blk.height)
        block = high
        while block.height > low.height:
            block = store[block.parent_id]
        return block.id == low.id

    @staticmethod
    def detect_permanent_split(state, round_):
        """Log the first pair of active nodes per network whose frozen prefixes conflict."""
        store = state.block_store
        by_network = {}
        for node_id, node in sorted(state.nodes.items()):
            if node.active and node.view is not None:
                by_network.setdefault(node.network, []).append((node_id, node.view.frozen_anchor))
        for network, anchors in sorted(by_network.items()):
            if network in state.shutdown.split_logged:
                continue
            pair = next(
                ((a, b) for i, a in enumerate(anchors) for b in anchors[i + 1:]
                 if not Shutdown._related(store, a[1], b[1])),
                None,
            )
            if pair is None:
                continue
            (_, anchor_a), (_, anchor_b) = pair
            group_a = [n for n, anc in anchors if Shutdown._related(store, anc, anchor_a)
                       and not Shutdown._related(store, anc, anchor_b)]
            group_b = [n for n, anc in anchors if Shutdown._related(store, anc, anchor_b)
                       and not Shutdown._related(store, anc, anchor_a)]
            state.shutdown.split_logged.add(network)
            logger.warning("round %d: permanent split on %s: %s vs %s", round_, network, group_a, group_b)
            state.log.emit(
                round_, EventKind.PERMANENT_SPLIT, network=network, groups=[group_a, group_b],
                anchors=[anchor_a.hex(), anchor_b.hex()],
            )

    # -- verdict -------------------------------------------------------------

    @staticmethod
    def evaluate_good_ending(result, plan, reference_round=None):
        """
        Judge a finished run as stable and/or cheap.

        Parameters:
        -----------
        result : SimResult
            Finished run (only its event-log replay is read)
        plan : ShutdownPlan
            Supplies T, g and the cost budget
        reference_round : int, optional
            Round whose honest consensus defines the reference records
            (default: the plan's reference_round, else T + g)

        Returns:
        --------
        GoodEndingVerdict
        """
        replay = result.replay
        if reference_round is None:
            reference_round = plan.reference_round if plan.reference_round is not None else plan.end_round
        reference = replay.reference_chain(reference_round)
        records = {}
        reference_height = 0
        network = "main"
        if reference is not None:
            tip, network = reference
            path = replay.path(tip)
            reference_height = path[-1].height
            for block in path:
                for record in block.records:
                    records.setdefault(record.record_id, record.body)

        live = replay.live_view(network)
        mismatched, unresolved, disagreements = [], [], []
        for record_id, body in records.items():
            naive = Archive.resolve_query(record_id, live, replay.snapshots, replay.bulletin, QueryPolicy.NAIVE)
            if not naive.resolved:
                unresolved.append(record_id)
            elif naive.body != body:
                mismatched.append(record_id)
            aware = Archive.resolve_query(record_id, live, replay.snapshots, replay.bulletin,
                                          QueryPolicy.ARCHIVE_AWARE)
            if aware.body != naive.body:
                disagreements.append(record_id)

        cost = replay.cost_after(plan.end_round)
        detail = VerdictDetail(
            reference_round, reference_height, len(records), tuple(mismatched), tuple(unresolved),
            tuple(disagreements), cost,
        )
        return GoodEndingVerdict(not mismatched and not unresolved, cost <= plan.cost_budget, detail)


run_final_block = Shutdown.run_final_block
run_hard_fork = Shutdown.run_hard_fork
apply_freeze_rule = Shutdown.apply_freeze_rule
evaluate_good_ending = Shutdown.evaluate_good_ending
