import json
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from modules.chain_core import DEFAULT_MAX_RECORD_BYTES, TieBreak
from modules.community import ChurnPhase, ChurnSchedule, NodeSpec, StrategyId, Universe
from modules.consensus import DEFAULT_CONFIRMATION_DEPTH, DEFAULT_QUORUM, ConsensusRule
from modules.shutdown import Procedure, ShutdownPlan
from modules.strategies import REQUIRED_PARAMS, STRATEGY_PARAMS
from modules.utils import ScenarioParseError, ScenarioValidationError, Utils

logger = logging.getLogger(__name__)

Number = Union[int, float, str]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConsensusConfig(_Strict):
    kind: Literal["unstable", "stable"]
    confirmation_depth: Optional[int] = Field(default=None, ge=1)
    quorum_fraction: Optional[Number] = None
    tie_break: Literal["first_seen", "smallest_digest"] = "first_seen"


class NodeParams(_Strict):
    fee_threshold: Optional[float] = Field(default=None, ge=0)
    defect_threshold: Optional[float] = None
    attack_start_round: Optional[int] = Field(default=None, ge=0)
    target_height: Optional[int] = Field(default=None, ge=0)
    victims: Optional[List[str]] = None
    suppress_from: Optional[int] = Field(default=None, ge=0)
    suppress_until: Optional[int] = Field(default=None, ge=0)
    censor: Optional[bool] = None


class NodeConfig(_Strict):
    id: str = Field(min_length=1)
    weight: Number
    disposition: Literal["honest", "dishonest"] = "honest"
    strategy: Literal[
        "honest_default", "rewrite_attacker", "suppressor", "fee_waiter", "defector", "late_dominator"
    ] = "honest_default"
    join_round: Optional[int] = Field(default=None, ge=0)
    leave_round: Optional[int] = Field(default=None, ge=0)
    params: NodeParams = Field(default_factory=NodeParams)
    adopts_fork: bool = True


class ChurnPhaseConfig(_Strict):
    start: int = Field(ge=0)
    end: int = Field(ge=0)
    join_rate: float = Field(default=0.0, ge=0)
    leave_rate: float = Field(default=0.0, ge=0)


class ChurnConfig(_Strict):
    initial_members: Optional[int] = Field(default=None, ge=0)
    phases: List[ChurnPhaseConfig] = Field(default_factory=list)


class ShutdownConfig(_Strict):
    procedure: Literal["none", "final_block", "hard_fork_to_stable", "abandon_and_archive"] = "none"
    trigger_round: int = Field(default=0, ge=0)
    grace_rounds: int = Field(default=10, ge=0)
    adoption_threshold: Optional[Number] = None
    adoption_window: Optional[int] = Field(default=None, ge=1)
    freeze_depth: Optional[int] = Field(default=None, ge=1)
    archivists: List[str] = Field(default_factory=list)
    cost_budget: int = Field(default=0, ge=0)
    reference_round: Optional[int] = Field(default=None, ge=0)


class FeePhaseConfig(_Strict):
    start: int = Field(ge=0)
    end: int = Field(ge=0)
    fees_per_round: float = Field(ge=0)


class AnalyzersConfig(_Strict):
    safety_factor: float = Field(default=2.0, ge=1.0)
    sample_every: int = Field(default=1, ge=1)
    nodes_see_thickness: bool = False


class OutputsConfig(_Strict):
    metrics: str = "metrics.csv"
    events: str = "events.bin"
    report: str = "report.md"


class ScenarioConfig(_Strict):
    name: str = Field(min_length=1)
    horizon: int = Field(ge=1)
    consensus: ConsensusConfig
    universe: List[NodeConfig] = Field(min_length=1)
    churn: ChurnConfig = Field(default_factory=ChurnConfig)
    shutdown: ShutdownConfig = Field(default_factory=ShutdownConfig)
    fees_per_round: float = Field(default=0.0, ge=0)
    fee_phases: List[FeePhaseConfig] = Field(default_factory=list)
    analyzers: AnalyzersConfig = Field(default_factory=AnalyzersConfig)
    outputs: OutputsConfig = Field(default_factory=OutputsConfig)
    max_record_bytes: int = Field(default=DEFAULT_MAX_RECORD_BYTES, ge=1)

    @field_validator("name")
    @classmethod
    def name_is_path_safe(cls, value):
        if "/" in value or "\\" in value:
            raise ValueError("name must not contain path separators")
        return value


@dataclass(frozen=True)
class AnalyzerSettings:
    safety_factor: float = 2.0
    sample_every: int = 1
    nodes_see_thickness: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str
    horizon: int
    rule: ConsensusRule
    tie_break: TieBreak
    universe: Universe
    churn: ChurnSchedule
    plan: ShutdownPlan
    fees_per_round: float = 0.0
    fee_phases: tuple = ()
    analyzers: AnalyzerSettings = AnalyzerSettings()
    outputs: dict = field(default_factory=dict, hash=False)
    max_record_bytes: int = DEFAULT_MAX_RECORD_BYTES
    source: dict = field(default_factory=dict, hash=False, compare=False)

    def fee_at(self, round_):
        for start, end, fees in self.fee_phases:
            if start <= round_ < end:
                return fees
        return self.fees_per_round


class DataLoader:
    """
    A class to load and validate scenario files
    """

    def __init__(self, data_dir="data"):
        """
        Initialize the DataLoader with the data directory path
        """
        self.data_dir = data_dir
        self.scenario_dir = os.path.join(data_dir, "scenarios")

    def available_scenarios(self):
        if not os.path.isdir(self.scenario_dir):
            return []
        return sorted(Path(p).stem for p in os.listdir(self.scenario_dir) if p.endswith(".json"))

    def scenario_path(self, name_or_path):
        """Resolve a bare scenario name against the data directory."""
        if os.path.exists(name_or_path):
            return name_or_path
        candidate = os.path.join(self.scenario_dir, f"{name_or_path}.json")
        return candidate if os.path.exists(candidate) else name_or_path

    def load_scenario(self, path):
        """
        Load, parse and cross-validate a scenario file.

        Parameters:
        -----------
        path : str
            Scenario JSON file, or the name of one under data/scenarios

        Returns:
        --------
        Scenario

        Raises:
        -------
        ScenarioParseError
            The file is not valid JSON
        ScenarioValidationError
            The document breaks the schema or a cross-field rule
        """
        path = self.scenario_path(path)
        with open(path, "r") as f:
            text = f.read()
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioParseError(f"{path}: {e}") from e
        scenario = DataLoader.scenario_from_dict(document)
        logger.info("loaded scenario %s (%d nodes, horizon %d)", scenario.name, len(scenario.universe.nodes),
                    scenario.horizon)
        return scenario

    @staticmethod
    def scenario_from_dict(document):
        if not isinstance(document, dict):
            raise ScenarioValidationError("", "scenario must be a JSON object")
        try:
            config = ScenarioConfig.model_validate(document)
        except ValidationError as e:
            error = e.errors()[0]
            path = ".".join(str(part) for part in error["loc"])
            raise ScenarioValidationError(path, error["msg"]) from e
        DataLoader._cross_validate(config)
        return DataLoader._build(config)

    @staticmethod
    def _fraction(value, path):
        try:
            return Utils.as_weight(value)
        except (ValueError, ZeroDivisionError) as e:
            raise ScenarioValidationError(path, f"not a number: {value!r}") from e

    @staticmethod
    def _cross_validate(config):
        consensus = config.consensus
        if consensus.kind == "unstable" and consensus.quorum_fraction is not None:
            raise ScenarioValidationError("consensus.quorum_fraction", "only valid for stable consensus")
        if consensus.kind == "stable":
            if consensus.confirmation_depth is not None:
                raise ScenarioValidationError("consensus.confirmation_depth", "only valid for unstable consensus")
            if consensus.quorum_fraction is not None:
                q = DataLoader._fraction(consensus.quorum_fraction, "consensus.quorum_fraction")
                if not Fraction(1, 2) < q <= 1:
                    raise ScenarioValidationError("consensus.quorum_fraction", "must lie in (1/2, 1]")

        ids = set()
        for i, node in enumerate(config.universe):
            base = f"universe.{i}"
            if node.id in ids:
                raise ScenarioValidationError(f"{base}.id", f"duplicate node id {node.id}")
            ids.add(node.id)
            if DataLoader._fraction(node.weight, f"{base}.weight") <= 0:
                raise ScenarioValidationError(f"{base}.weight", f"node {node.id}: weight must be positive")
            if node.join_round is not None and node.leave_round is not None and node.join_round >= node.leave_round:
                raise ScenarioValidationError(f"{base}.leave_round", f"node {node.id}: join_round must precede leave_round")
            strategy = StrategyId(node.strategy)
            given = {k for k, v in node.params.model_dump().items() if v is not None}
            foreign = sorted(given - STRATEGY_PARAMS[strategy])
            if foreign:
                key = foreign[0]
                raise ScenarioValidationError(f"{base}.params.{key}", f"node {node.id}: {strategy.value} takes no {key}")
            missing = sorted(REQUIRED_PARAMS.get(strategy, frozenset()) - given)
            if missing:
                key = missing[0]
                raise ScenarioValidationError(f"{base}.params.{key}", f"node {node.id}: {strategy.value} requires {key}")
            if strategy is StrategyId.SUPPRESSOR and not (node.params.victims or node.params.censor):
                raise ScenarioValidationError(f"{base}.params.victims", f"node {node.id}: suppressor needs victims or censor")
            threshold = node.params.defect_threshold
            if threshold is not None and not 0 < threshold <= 1:
                raise ScenarioValidationError(f"{base}.params.defect_threshold", f"node {node.id}: must lie in (0, 1]")
            p = node.params
            if p.suppress_from is not None and p.suppress_until is not None and p.suppress_from >= p.suppress_until:
                raise ScenarioValidationError(f"{base}.params.suppress_until", f"node {node.id}: window is empty")

        for i, node in enumerate(config.universe):
            for victim in node.params.victims or []:
                if victim not in ids:
                    raise ScenarioValidationError(f"universe.{i}.params.victims", f"node {node.id}: unknown victim {victim}")

        shutdown = config.shutdown
        for archivist in shutdown.archivists:
            if archivist not in ids:
                raise ScenarioValidationError("shutdown.archivists", f"unknown node {archivist}")
        if shutdown.trigger_round + shutdown.grace_rounds > config.horizon:
            raise ScenarioValidationError("shutdown.trigger_round", "trigger_round + grace_rounds exceeds horizon")
        hard_fork = shutdown.procedure == "hard_fork_to_stable"
        if not hard_fork:
            for key in ("adoption_threshold", "adoption_window"):
                if getattr(shutdown, key) is not None:
                    raise ScenarioValidationError(f"shutdown.{key}", "only valid for hard_fork_to_stable")
        else:
            if consensus.kind != "unstable":
                raise ScenarioValidationError("shutdown.procedure", "hard fork starts from unstable consensus")
            if shutdown.adoption_threshold is not None:
                threshold = DataLoader._fraction(shutdown.adoption_threshold, "shutdown.adoption_threshold")
                if not 0 < threshold <= 1:
                    raise ScenarioValidationError("shutdown.adoption_threshold", "must lie in (0, 1]")

        DataLoader._check_phases(config.churn.phases, "churn.phases")
        DataLoader._check_phases(config.fee_phases, "fee_phases")
        free = sum(1 for n in config.universe if n.join_round is None and n.leave_round is None
                   and n.strategy != "late_dominator")
        if config.churn.initial_members is not None and config.churn.initial_members > free:
            raise ScenarioValidationError("churn.initial_members", f"only {free} schedule-free nodes")

    @staticmethod
    def _check_phases(phases, path):
        previous_end = None
        for i, phase in enumerate(phases):
            if phase.start >= phase.end:
                raise ScenarioValidationError(f"{path}.{i}", "start must precede end")
            if previous_end is not None and phase.start < previous_end:
                raise ScenarioValidationError(f"{path}.{i}", "phases must be ordered and non-overlapping")
            previous_end = phase.end

    @staticmethod
    def _build(config):
        consensus = config.consensus
        if consensus.kind == "stable":
            q = DEFAULT_QUORUM if consensus.quorum_fraction is None else Utils.as_weight(consensus.quorum_fraction)
            rule = ConsensusRule.stable(q)
        else:
            rule = ConsensusRule.unstable(consensus.confirmation_depth or DEFAULT_CONFIRMATION_DEPTH)

        nodes = []
        for node in config.universe:
            params = {k: v for k, v in node.params.model_dump().items() if v is not None}
            join_round = node.join_round
            if node.strategy == "late_dominator" and join_round is None:
                join_round = params["attack_start_round"]
            nodes.append(NodeSpec(
                node.id, Utils.as_weight(node.weight), node.disposition, node.strategy,
                join_round, node.leave_round, params, node.adopts_fork,
            ))

        churn = ChurnSchedule(
            tuple(ChurnPhase(p.start, p.end, p.join_rate, p.leave_rate) for p in config.churn.phases),
            config.churn.initial_members,
        )
        shutdown = config.shutdown
        plan = ShutdownPlan(
            Procedure(shutdown.procedure), shutdown.trigger_round, shutdown.grace_rounds,
            None if shutdown.adoption_threshold is None else Utils.as_weight(shutdown.adoption_threshold),
            shutdown.adoption_window, shutdown.freeze_depth, tuple(shutdown.archivists), shutdown.cost_budget,
            shutdown.reference_round,
        )
        return Scenario(
            name=config.name,
            horizon=config.horizon,
            rule=rule,
            tie_break=TieBreak(consensus.tie_break),
            universe=Universe(tuple(nodes)),
            churn=churn,
            plan=plan,
            fees_per_round=config.fees_per_round,
            fee_phases=tuple((p.start, p.end, p.fees_per_round) for p in config.fee_phases),
            analyzers=AnalyzerSettings(**config.analyzers.model_dump()),
            outputs=config.outputs.model_dump(),
            max_record_bytes=config.max_record_bytes,
            source=config.model_dump(mode="json", exclude_none=True),
        )


def load_scenario(path):
    return DataLoader().load_scenario(path)
