"""
Deterministic round-based simulation kernel.

One round runs, in order: delivery of the previous round's messages (with
suppression and the freeze rule applied), the community update, mempool
influx, strategy evaluation in ascending node id, one producer election per
network, block propagation and in-round stable finalization, the shutdown
procedure, split detection, analyzer sampling, and tip bookkeeping.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from modules.analysis import LogReplay, MAIN_NETWORK
from modules.archive import Archive, Bulletin
from modules.chain_core import GENESIS_BLOCK, ChainCore, ChainView, Marker, Record, RecordKind
from modules.community import Community, Disposition, MembershipOverrides
from modules.consensus import Consensus, ConsensusRule, FinalityTracker
from modules.events import EventKind, EventLog
from modules.shutdown import Shutdown, ShutdownRuntime
from modules.strategies import Action, Directive, Mempool, RoundContext, StrategyState, Strategies
from modules.utils import RngStreams, Utils

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Message:
    network: str
    sender: str
    sent_round: int
    blocks: tuple = ()
    certificates: tuple = ()


@dataclass
class Network:
    id: str
    rule: ConsensusRule
    mempool: Mempool = field(default_factory=Mempool)
    published: list = field(default_factory=list)
    certificates: list = field(default_factory=list)
    finality: FinalityTracker = field(default_factory=FinalityTracker)
    outbox: list = field(default_factory=list)
    inbox: list = field(default_factory=list)
    final_block: Optional[bytes] = None


@dataclass
class NodeRuntime:
    spec: object
    disposition: Disposition
    strategy: StrategyState
    network: str = MAIN_NETWORK
    view: Optional[ChainView] = None
    active: bool = False
    last_tip: Optional[bytes] = None


@dataclass
class SimState:
    scenario: object
    seed: int
    rngs: RngStreams
    log: EventLog
    nodes: dict
    networks: dict
    snapshot: object = None
    mode: object = None
    report: object = None
    departed: set = field(default_factory=set)
    dispositions: dict = field(default_factory=dict)
    suppression: dict = field(default_factory=dict)
    bulletin: Bulletin = field(default_factory=Bulletin)
    archives: list = field(default_factory=list)
    block_store: dict = field(default_factory=lambda: {GENESIS_BLOCK.id: GENESIS_BLOCK})
    shutdown: ShutdownRuntime = field(default_factory=ShutdownRuntime)

    @property
    def plan(self):
        return self.scenario.plan

    def new_view(self, owner):
        return ChainView(owner, tie_break=self.scenario.tie_break, max_record_bytes=self.scenario.max_record_bytes)

    def open_fork_network(self, network_id, prefix, adopters, round_, quorum):
        """Start a stable-rule network seeded with ``prefix`` and move the adopters onto it."""
        network = Network(network_id, ConsensusRule.stable(quorum))
        fork_point = prefix[-1]
        network.published = [(round_, block) for block in prefix[1:]]
        network.mempool.add(
            Record(f"redirect-{network_id}", RecordKind.REDIRECT, b"fork-of:" + fork_point.id.hex().encode())
        )
        self.networks[network_id] = network
        for node_id in adopters:
            node = self.nodes[node_id]
            node.view = self.new_view(node_id)
            for block in prefix[1:]:
                node.view.add_block(block, round_)
            node.view.finalize(fork_point.id)
            node.network = network_id
            node.strategy.reset_fork()
        network.certificates.append(fork_point.id)
        network.finality.record(fork_point)
        self.log.emit(
            round_, EventKind.FINALIZED, network=network_id, block=fork_point.id.hex(), height=fork_point.height,
            approvers=list(adopters), approving="0", required="0",
        )


@dataclass
class SimResult:
    scenario: object
    seed: int
    log: EventLog
    replay: LogReplay
    metrics: object
    views: dict = field(default_factory=dict)
    private_forks: dict = field(default_factory=dict)
    horizon_snapshots: list = field(default_factory=list)
    verdict: object = None

    @property
    def log_digest(self):
        return self.log.digest()

    @property
    def bulletin(self):
        return self.replay.bulletin

    @property
    def archives(self):
        return self.replay.snapshots

    @classmethod
    def from_log(cls, log, scenario, seed):
        """Rebuild metrics and verdict from an event log alone."""
        replay = LogReplay(log.events, scenario)
        result = cls(scenario, seed, log, replay, replay.metrics())
        result.verdict = Shutdown.evaluate_good_ending(result, scenario.plan)
        return result


class SimEngine:
    """
    A class to run a scenario round by round
    """

    @staticmethod
    def initial_state(scenario, seed):
        main = Network(MAIN_NETWORK, scenario.rule)
        nodes = {
            spec.id: NodeRuntime(spec, spec.disposition, StrategyState.for_node(spec))
            for spec in scenario.universe.nodes
        }
        state = SimState(scenario, int(seed), RngStreams(seed), EventLog(), nodes, {MAIN_NETWORK: main})
        state.log.emit(0, EventKind.RUN_STARTED, scenario=scenario.source, seed=int(seed))
        return state

    @staticmethod
    def run(scenario, seed):
        """
        Run one scenario under one seed.

        Parameters:
        -----------
        scenario : Scenario
            A validated scenario
        seed : int
            Unsigned 64-bit run seed

        Returns:
        --------
        SimResult
        """
        state = SimEngine.initial_state(scenario, seed)
        logger.debug("run %s seed %d: %d rounds", scenario.name, seed, scenario.horizon)
        for round_ in range(scenario.horizon):
            SimEngine.step(state, round_)
        return SimEngine.finish(state)

    @staticmethod
    def step(state, round_, rng=None):
        """Advance the state through one round; ``rng`` overrides the run's streams."""
        rngs = rng or state.rngs
        SimEngine._deliver(state, round_)
        SimEngine._update_community(state, round_, rngs)
        SimEngine._accrue(state, round_)
        decisions, directives = SimEngine._decide(state, round_)
        SimEngine._produce(state, round_, decisions, directives, rngs)
        Shutdown.step(state, round_)
        if state.plan.freeze_depth:
            Shutdown.detect_permanent_split(state, round_)
        SimEngine._analyze(state, round_)
        SimEngine._end_round(state, round_)
        return state

    @staticmethod
    def finish(state):
        scenario = state.scenario
        horizon = scenario.horizon
        snapshots = []
        for node_id, node in sorted(state.nodes.items()):
            if node.active and node.view is not None:
                rule = state.networks[node.network].rule
                snapshots.append(
                    Archive.snapshot_chain(node.view, rule.settled_height(node.view), node_id, horizon, rule)
                )
        state.log.emit(horizon, EventKind.RUN_FINISHED, rounds=horizon, blocks=len(state.block_store) - 1)
        replay = LogReplay(state.log.events, scenario)
        result = SimResult(
            scenario, state.seed, state.log, replay, replay.metrics(),
            views={n: node.view for n, node in state.nodes.items() if node.view is not None},
            private_forks={n: list(node.strategy.private_fork) for n, node in state.nodes.items()
                           if node.strategy.private_fork},
            horizon_snapshots=snapshots,
        )
        result.verdict = Shutdown.evaluate_good_ending(result, scenario.plan)
        logger.info(
            "seed %d finished: %d events, stable=%s cheap=%s, digest %s",
            state.seed, len(state.log), result.verdict.stable, result.verdict.cheap, result.log_digest.hex()[:16],
        )
        return result

    # -- delivery --------------------------------------------------------------

    @staticmethod
    def _suppressed_by(state, rules, sender, recipient):
        for suppressor, victims in sorted(rules.items()):
            if sender in victims and state.nodes[recipient].disposition is Disposition.HONEST:
                return suppressor, sender
            if recipient in victims and state.nodes[sender].disposition is Disposition.HONEST:
                return suppressor, recipient
        return None

    @staticmethod
    def _sync(view, block, lookup, round_):
        """Add ``block`` plus any ancestors the view lacks; True if a freeze conflict arose."""
        missing = []
        current = block
        while current is not None and current.id not in view.blocks:
            missing.append(current)
            current = lookup.get(current.parent_id)
        conflict = False
        for b in reversed(missing):
            conflict |= view.add_block(b, round_).conflict
        return conflict

    @staticmethod
    def _deliver(state, round_):
        rules = state.suppression.pop(round_ - 1, {})
        dropped = Counter()
        conflicts = {}
        for network_id in sorted(state.networks):
            network = state.networks[network_id]
            messages, network.inbox = network.inbox, []
            recipients = [
                node for _, node in sorted(state.nodes.items())
                if node.active and node.network == network_id and node.view is not None
            ]
            for message in messages:
                for node in recipients:
                    node_id = node.spec.id
                    if node_id == message.sender:
                        continue
                    hit = SimEngine._suppressed_by(state, rules, message.sender, node_id)
                    if hit is not None:
                        dropped[hit] += 1
                        continue
                    for block in message.blocks:
                        if SimEngine._sync(node.view, block, state.block_store, round_):
                            conflicts.setdefault(node_id, block)
                    for block_id in message.certificates:
                        node.view.finalize(block_id)

        for (suppressor, victim), count in sorted(dropped.items()):
            state.log.emit(round_, EventKind.SUPPRESSION, suppressor=suppressor, victim=victim, dropped=count)

        depth = state.plan.freeze_depth
        if depth:
            for node_id, block in sorted(conflicts.items()):
                state.log.emit(round_, EventKind.FREEZE_CONFLICT, node=node_id, block=block.id.hex(),
                               height=block.height)
            for _, node in sorted(state.nodes.items()):
                if node.active and node.view is not None:
                    Shutdown.apply_freeze_rule(node.view, depth)

    # -- community ---------------------------------------------------------------

    @staticmethod
    def _update_community(state, round_, rngs):
        scenario = state.scenario
        overrides = MembershipOverrides(frozenset(state.departed), dict(state.dispositions))
        snapshot = Community.active_set(
            scenario.universe, scenario.churn, round_, rngs.get("churn"), overrides, previous=state.snapshot
        )
        previous = state.snapshot.active if state.snapshot is not None else frozenset()

        for node_id in sorted(previous - snapshot.active):
            node = state.nodes[node_id]
            node.active = False
            if node_id in state.departed:
                reason = "departed"
            elif node.spec.scheduled:
                reason = "schedule"
            else:
                reason = "churn"
            state.log.emit(round_, EventKind.NODE_LEFT, node=node_id, reason=reason)

        for node_id in sorted(snapshot.active - previous):
            node = state.nodes[node_id]
            node.active = True
            if node.view is None:
                network = state.networks[node.network]
                node.view = Archive.fresh_view(
                    network.published, network.certificates, stable=network.rule.is_stable, owner=node_id,
                    tie_break=scenario.tie_break, max_record_bytes=scenario.max_record_bytes,
                )
            state.log.emit(
                round_, EventKind.NODE_JOINED, node=node_id, network=node.network,
                weight=Utils.weight_str(node.spec.weight), disposition=node.disposition.value,
            )

        state.snapshot = snapshot
        mode = Consensus.mode_predicate(scenario.rule, snapshot.honest_weight, snapshot.dishonest_weight)
        if mode.mode is not state.mode:
            state.log.emit(
                round_, EventKind.MODE_CHANGED, mode=mode.mode.value,
                previous=state.mode.value if state.mode is not None else None,
                honest_weight=Utils.weight_str(snapshot.honest_weight),
                dishonest_weight=Utils.weight_str(snapshot.dishonest_weight),
            )
            state.mode = mode.mode

    @staticmethod
    def _accrue(state, round_):
        scenario = state.scenario
        fees = scenario.fee_at(round_)
        for network_id in sorted(state.networks):
            network = state.networks[network_id]
            network.mempool.accrue(fees)
            record_id = f"tx-{round_}" if network_id == MAIN_NETWORK else f"{network_id}-tx-{round_}"
            body = f"{scenario.name}|{network_id}|{round_}".encode()[: scenario.max_record_bytes]
            network.mempool.add(Record(record_id, RecordKind.DATA, body))

    # -- strategies ----------------------------------------------------------------

    @staticmethod
    def _decide(state, round_):
        scenario = state.scenario
        rule = scenario.rule
        depth = rule.confirmation_depth if not rule.is_stable else 6
        thin = bool(scenario.analyzers.nodes_see_thickness and state.report is not None and state.report.thin)
        decisions = {}
        directives = {}
        for node_id in sorted(state.snapshot.active):
            node = state.nodes[node_id]
            network = state.networks[node.network]
            node_directives = Shutdown.directives_for(state, node_id, round_)
            context = RoundContext(round_, state.snapshot.total_weight, depth, node_directives, thin)
            decision = Strategies.decide_action(node.spec, node.view, round_, network.mempool, node.strategy, context)

            if decision.defected:
                node.disposition = Disposition.DISHONEST
                state.dispositions[node_id] = Disposition.DISHONEST
                state.log.emit(
                    round_, EventKind.DEFECTION, node=node_id,
                    share=Utils.weight_str(node.spec.weight / state.snapshot.total_weight),
                )
            if decision.wants(Action.PUBLISH_FORK):
                SimEngine._publish_fork(state, node, round_)
                decision = Strategies.decide_action(node.spec, node.view, round_, network.mempool, node.strategy, context)
            if decision.wants(Action.DEPART):
                state.departed.add(node_id)
            if decision.wants(Action.SUPPRESS) and decision.victims:
                state.suppression.setdefault(round_, {})[node_id] = decision.victims
            if decision.wants(Action.SIGNAL_ADOPTION):
                record_id = f"adopt-{node_id}"
                if record_id not in network.mempool and ChainCore.locate_record(node.view, record_id) is None:
                    network.mempool.add(Record(record_id, RecordKind.ADOPTION_SIGNAL, node_id.encode()))
            decisions[node_id] = decision
            directives[node_id] = node_directives
        return decisions, directives

    # -- production ----------------------------------------------------------------

    @staticmethod
    def _produce(state, round_, decisions, directives, rngs):
        for network_id in sorted(state.networks):
            network = state.networks[network_id]
            willing = [
                (node_id, state.nodes[node_id].spec.weight) for node_id in sorted(decisions)
                if state.nodes[node_id].network == network_id and decisions[node_id].willing
            ]
            winner = Consensus.elect_producer(willing, rngs.get("election", network_id))
            state.log.emit(round_, EventKind.ELECTION, network=network_id,
                           willing=[w for w, _ in willing], winner=winner)
            if winner is None:
                continue
            node = state.nodes[winner]
            decision = decisions[winner]
            payload = None
            if not decision.private and Directive.FINAL_BLOCK in directives[winner]:
                payload = Shutdown.final_marker_payload(state, node.view, network.rule)
            block = Strategies.compose_block(
                winner, node.view, node.strategy, decision, round_, network.mempool, payload, network.final_block
            )
            state.block_store[block.id] = block
            state.log.emit(
                round_, EventKind.BLOCK_PRODUCED, network=network_id, producer=winner,
                disposition=node.disposition.value, private=decision.private, id=block.id.hex(),
                height=block.height, block=block.serialize().hex(),
            )
            if decision.private:
                node.strategy.private_fork.append(block)
                if block.height > node.view.tip_height:
                    SimEngine._publish_fork(state, node, round_)
                continue

            node.view.add_block(block, round_)
            network.mempool.claim(block)
            network.published.append((round_, block))
            network.outbox.append(Message(network_id, winner, round_, (block,)))
            if block.marker is Marker.FINAL and network.final_block is None:
                network.final_block = block.id
                state.log.emit(round_, EventKind.SHUTDOWN_STEP, procedure=state.plan.procedure.value,
                               step="final_block", block=block.id.hex(), height=block.height)
            if network.rule.is_stable:
                SimEngine._finalize(state, network, block, round_, decisions)

    @staticmethod
    def _members(state, network_id):
        return [node for _, node in sorted(state.nodes.items()) if node.active and node.network == network_id]

    @staticmethod
    def _finalize(state, network, block, round_, decisions):
        members = SimEngine._members(state, network.id)
        active_weight = sum(n.spec.weight for n in members)
        approvals = []
        for node in members:
            decision = decisions.get(node.spec.id)
            if decision is None or not decision.wants(Action.APPROVE):
                continue
            if Strategies.approves(node.disposition, node.view, block, node.spec.id):
                approvals.append((node.spec.id, node.spec.weight))
        outcome = Consensus.finalize_step(network.rule, block, approvals, active_weight)
        if outcome.finalized:
            SimEngine._certify(state, network, block, [a for a, _ in approvals], round_, outcome)
        return outcome

    @staticmethod
    def _certify(state, network, block, approvers, round_, outcome):
        for node_id in approvers:
            view = state.nodes[node_id].view
            SimEngine._sync(view, block, state.block_store, round_)
            view.finalize(block.id)
        network.certificates.append(block.id)
        network.outbox.append(Message(network.id, block.producer, round_, (), (block.id,)))
        state.log.emit(
            round_, EventKind.FINALIZED, network=network.id, block=block.id.hex(), height=block.height,
            approvers=list(approvers), approving=Utils.weight_str(outcome.approving_weight),
            required=Utils.weight_str(outcome.required_weight),
        )
        conflicting = network.finality.record(block)
        if conflicting is not None:
            logger.warning("round %d: safety violation on %s at height %d", round_, network.id, block.height)
            state.log.emit(
                round_, EventKind.SAFETY_VIOLATION, network=network.id, height=block.height,
                blocks=[conflicting.hex(), block.id.hex()],
            )

    @staticmethod
    def _publish_fork(state, node, round_):
        """Release a private fork: into the attacker's view, onto the wire, and to its coalition."""
        network = state.networks[node.network]
        blocks = list(node.strategy.private_fork)
        public_height = node.view.tip_height
        for block in blocks:
            node.view.add_block(block, round_)
            network.published.append((round_, block))
        network.outbox.append(Message(network.id, node.spec.id, round_, tuple(blocks)))
        state.log.emit(
            round_, EventKind.FORK_PUBLISHED, network=network.id, producer=node.spec.id,
            blocks=[b.id.hex() for b in blocks], tip_height=blocks[-1].height, public_height=public_height,
        )
        logger.debug("round %d: %s publishes a %d-block fork", round_, node.spec.id, len(blocks))
        node.strategy.reset_fork()

        if network.rule.is_stable:
            members = SimEngine._members(state, network.id)
            active_weight = sum(n.spec.weight for n in members)
            coalition = [(n.spec.id, n.spec.weight) for n in members if n.disposition is Disposition.DISHONEST]
            for block in blocks:
                outcome = Consensus.finalize_step(network.rule, block, coalition, active_weight)
                if outcome.finalized:
                    SimEngine._certify(state, network, block, [c for c, _ in coalition], round_, outcome)

    # -- analyzers and bookkeeping ---------------------------------------------------

    @staticmethod
    def _analyze(state, round_):
        scenario = state.scenario
        if round_ % scenario.analyzers.sample_every:
            return
        if scenario.analyzers.nodes_see_thickness:
            state.report = Community.thickness(
                scenario.universe, state.snapshot, scenario.rule, scenario.analyzers.safety_factor
            )
        logger.debug(
            "round %d: mode %s, %d active", round_, state.mode.value if state.mode else None,
            len(state.snapshot.active),
        )

    @staticmethod
    def _end_round(state, round_):
        for node_id, node in sorted(state.nodes.items()):
            if node.active and node.view is not None and node.view.tip != node.last_tip:
                node.last_tip = node.view.tip
                state.log.emit(
                    round_, EventKind.TIP_CHANGED, node=node_id, network=node.network,
                    tip=node.view.tip.hex(), height=node.view.tip_height,
                )
        for network in state.networks.values():
            network.inbox, network.outbox = network.outbox, []


run = SimEngine.run
step = SimEngine.step
