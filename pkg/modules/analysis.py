import logging
from collections import defaultdict
from fractions import Fraction

import numpy as np
import pandas as pd

from modules.archive import Archive, Bulletin, Snapshot
from modules.chain_core import GENESIS_BLOCK, Block
from modules.community import Community, Disposition
from modules.consensus import Consensus, ConsensusRule
from modules.events import EventKind

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "round",
    "mode",
    "honest_weight",
    "dishonest_weight",
    "lumpy",
    "thin",
    "margin_to_flip",
    "tip_height",
    "finalized_height",
    "blocks_this_round",
    "honest_cost_cum",
    "producing_weight",
    "production_thin",
]

MAIN_NETWORK = "main"


class LogReplay:
    """
    Rebuild a run's observable history from its event log.

    Everything downstream of a run (metrics rows, the good-ending verdict,
    archive resolution) is computed from this replay, both right after the run
    and when a saved log is analyzed later.
    """

    def __init__(self, events, scenario):
        self.scenario = scenario
        self.universe = scenario.universe
        self.rule = scenario.rule
        self.blocks = {GENESIS_BLOCK.id: GENESIS_BLOCK}
        self.published = defaultdict(list)
        self.certificates = defaultdict(list)
        self.finalized_ids = set()
        self.network_rules = {MAIN_NETWORK: scenario.rule}
        self.active = set()
        self.dispositions = {}
        self.networks = {}
        self.tips = {}
        self.snapshots = []
        self.bulletin = Bulletin()
        self.fork_published_rounds = []
        self.safety_violations = 0
        self.honest_cost = {}
        self.consensus = {}
        self.rows = []
        self._willing = {}
        self._round_blocks = 0
        self._round_honest_blocks = 0
        self._last_tip_height = 0
        self._replay(list(events))

    # -- event handling ------------------------------------------------------

    def _replay(self, events):
        by_round = defaultdict(list)
        for event in events:
            by_round[event.round].append(event)
        horizon = self.scenario.horizon
        for round_ in range(horizon):
            for event in sorted(by_round.get(round_, []), key=lambda e: e.seq):
                self._apply(event)
            self._close_round(round_)
        for round_ in sorted(r for r in by_round if r >= horizon):
            for event in sorted(by_round[round_], key=lambda e: e.seq):
                self._apply(event)

    def _apply(self, event):
        p = event.payload
        kind = event.kind
        if kind is EventKind.NODE_JOINED:
            self.active.add(p["node"])
            self.dispositions[p["node"]] = Disposition(p["disposition"])
            self.networks[p["node"]] = p["network"]
        elif kind is EventKind.NODE_LEFT:
            self.active.discard(p["node"])
        elif kind is EventKind.DEFECTION:
            self.dispositions[p["node"]] = Disposition.DISHONEST
        elif kind is EventKind.ELECTION:
            self._willing.setdefault(event.round, set()).update(p["willing"])
        elif kind is EventKind.BLOCK_PRODUCED:
            block = Block.deserialize(bytes.fromhex(p["block"]))
            self.blocks[block.id] = block
            self._round_blocks += 1
            if not p["private"]:
                self.published[p["network"]].append((event.round, block))
                if p["disposition"] == Disposition.HONEST.value:
                    self._round_honest_blocks += 1
        elif kind is EventKind.FORK_PUBLISHED:
            for block_hex in p["blocks"]:
                self.published[p["network"]].append((event.round, self.blocks[bytes.fromhex(block_hex)]))
            self.fork_published_rounds.append(event.round)
        elif kind is EventKind.TIP_CHANGED:
            self.tips[p["node"]] = bytes.fromhex(p["tip"])
        elif kind is EventKind.FINALIZED:
            block_id = bytes.fromhex(p["block"])
            self.certificates[p["network"]].append(block_id)
            self.finalized_ids.add(block_id)
        elif kind is EventKind.SAFETY_VIOLATION:
            self.safety_violations += 1
        elif kind is EventKind.FORK_ACTIVATED:
            network = p["network"]
            self.network_rules[network] = ConsensusRule.stable(Fraction(p["quorum"]))
            prefix = self.path(bytes.fromhex(p["fork_point"]))[1:]
            self.published[network].extend((event.round, b) for b in prefix)
            for node_id in p["adopters"]:
                self.networks[node_id] = network
        elif kind is EventKind.SNAPSHOT_TAKEN:
            self.snapshots.append(Snapshot.from_bytes(bytes.fromhex(p["snapshot"])))
        elif kind is EventKind.COMMITMENT_PUBLISHED:
            self.bulletin.publish(bytes.fromhex(p["digest"]), p["taken_round"], p["publisher"])

    def _honest_active(self):
        return sorted(n for n in self.active if self.dispositions.get(n) is Disposition.HONEST)

    def _plurality_tip(self, holders):
        weights = defaultdict(Fraction)
        for node_id in holders:
            if node_id in self.tips:
                weights[self.tips[node_id]] += self.universe[node_id].weight
        if not weights:
            return None
        return min(weights, key=lambda tip: (-weights[tip], tip))

    def _close_round(self, round_):
        honest = self._honest_active()
        self.honest_cost[round_] = self._round_honest_blocks + len(honest)
        tip = self._plurality_tip(honest)
        if tip is not None:
            network = next(self.networks[n] for n in honest if self.tips.get(n) == tip)
            self.consensus[round_] = (tip, network)
        if round_ % self.scenario.analyzers.sample_every == 0:
            self.rows.append(self._metrics_row(round_, tip))
        self._round_blocks = 0
        self._round_honest_blocks = 0

    def _metrics_row(self, round_, honest_tip):
        analyzers = self.scenario.analyzers
        snapshot = Community.snapshot_of(self.universe, round_, self.active, self.dispositions)
        state = Consensus.mode_predicate(self.rule, snapshot.honest_weight, snapshot.dishonest_weight)
        report = Community.thickness(self.universe, snapshot, self.rule, analyzers.safety_factor)

        willing = self._willing.get(round_, set())
        producing = Community.snapshot_of(self.universe, round_, willing, self.dispositions)
        production = Community.thickness(self.universe, producing, self.rule, analyzers.safety_factor)

        tip = honest_tip if honest_tip is not None else self._plurality_tip(sorted(self.active))
        if tip is not None:
            self._last_tip_height = self.blocks[tip].height
        return {
            "round": round_,
            "mode": state.mode.value,
            "honest_weight": float(snapshot.honest_weight),
            "dishonest_weight": float(snapshot.dishonest_weight),
            "lumpy": int(report.lumpy),
            "thin": int(report.thin),
            "margin_to_flip": float(state.margin_to_flip),
            "tip_height": self._last_tip_height,
            "finalized_height": self._finalized_height(tip),
            "blocks_this_round": self._round_blocks,
            "honest_cost_cum": sum(self.honest_cost.values()),
            "producing_weight": float(producing.total_weight),
            "production_thin": int(production.thin),
        }

    def _finalized_height(self, tip):
        if tip is None or not self.finalized_ids:
            return 0
        block = self.blocks[tip]
        while block.id not in self.finalized_ids and not block.is_genesis:
            block = self.blocks[block.parent_id]
        return block.height

    # -- queries -------------------------------------------------------------

    def path(self, block_id):
        path = []
        block = self.blocks[block_id]
        while True:
            path.append(block)
            if block.is_genesis:
                break
            block = self.blocks[block.parent_id]
        path.reverse()
        return path

    def reference_chain(self, reference_round):
        """
        Honest-consensus tip at the reference round, or at the latest earlier
        round that still had honest members.
        """
        for round_ in range(min(reference_round, self.scenario.horizon - 1), -1, -1):
            if round_ in self.consensus:
                return self.consensus[round_]
        return None

    def live_view(self, network=MAIN_NETWORK):
        """
        Fresh verifier over a network at horizon.

        Reads the network's published blocks and certificates, which stay
        readable after every node has left. None only when nothing was ever
        published on the network.
        """
        if not self.published.get(network):
            return None
        rule = self.network_rules.get(network, self.rule)
        return Archive.fresh_view(
            self.published[network], self.certificates[network], stable=rule.is_stable,
            max_record_bytes=self.scenario.max_record_bytes,
        )

    def cost_after(self, round_):
        return sum(cost for r, cost in self.honest_cost.items() if r > round_)

    def metrics(self):
        return Analysis.metrics_frame(self.rows)

    @property
    def first_lumpy_round(self):
        for row in self.rows:
            if row["lumpy"]:
                return row["round"]
        return None


class Analysis:
    """
    A class to turn simulation logs into metrics and batch summaries
    """

    @staticmethod
    def metrics_frame(rows):
        """
        Build the fixed-column metrics table.

        Parameters:
        -----------
        rows : list of dict
            One dict per sampled round

        Returns:
        --------
        pandas.DataFrame
            Columns in METRIC_COLUMNS order
        """
        return pd.DataFrame(rows, columns=METRIC_COLUMNS)

    @staticmethod
    def seed_row(result):
        verdict = result.verdict
        return {
            "seed": result.seed,
            "stable": bool(verdict.stable),
            "cheap": bool(verdict.cheap),
            "good_ending": bool(verdict.stable and verdict.cheap),
            "rewrite_success": bool(result.replay.fork_published_rounds),
            "first_lumpy_round": result.replay.first_lumpy_round,
            "safety_violations": result.replay.safety_violations,
            "log_digest": result.log_digest.hex(),
        }

    @staticmethod
    def seed_table(results):
        return Analysis.seed_table_from_rows([Analysis.seed_row(r) for r in results])

    @staticmethod
    def seed_table_from_rows(rows):
        columns = ["seed", "stable", "cheap", "good_ending", "rewrite_success",
                   "first_lumpy_round", "safety_violations", "log_digest"]
        return pd.DataFrame(rows, columns=columns).sort_values("seed").reset_index(drop=True)

    @staticmethod
    def batch_summary(seed_df):
        """
        Aggregate per-seed outcomes.

        Parameters:
        -----------
        seed_df : pandas.DataFrame
            Output of ``seed_table``

        Returns:
        --------
        dict
            Rates, counts and the first-lumpy-round distribution; empty for
            an empty batch
        """
        if seed_df.empty:
            return {}
        lumpy = seed_df["first_lumpy_round"].dropna().astype(float)
        summary = {
            "seeds": int(len(seed_df)),
            "good_ending_rate": float(seed_df["good_ending"].mean()),
            "stable_rate": float(seed_df["stable"].mean()),
            "cheap_rate": float(seed_df["cheap"].mean()),
            "rewrite_success_frequency": float(seed_df["rewrite_success"].mean()),
            "safety_violation_seeds": int((seed_df["safety_violations"] > 0).sum()),
            "lumpy_seeds": int(len(lumpy)),
        }
        if len(lumpy):
            summary.update({
                "first_lumpy_round_min": float(lumpy.min()),
                "first_lumpy_round_median": float(np.median(lumpy)),
                "first_lumpy_round_max": float(lumpy.max()),
            })
        return summary

    @staticmethod
    def outcome_breakdown(seed_df):
        """Seed counts per (stable, cheap) outcome."""
        if seed_df.empty:
            return pd.DataFrame(columns=["stable", "cheap", "seeds"])
        grouped = seed_df.groupby(["stable", "cheap"])["seed"].agg(["count"]).reset_index()
        grouped.columns = ["stable", "cheap", "seeds"]
        return grouped

    @staticmethod
    def mode_share(metrics_df):
        """Share of sampled rounds spent in each mode."""
        if metrics_df.empty:
            return {}
        return metrics_df["mode"].value_counts(normalize=True).to_dict()
