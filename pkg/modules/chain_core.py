"""
Digest-linked blocks and per-node chain views.

A block's id is the SHA-256 of its canonical serialization (every field except
the id itself, little-endian length-prefixed, in declaration order). Producer
"signatures" are simulated as (producer id, digest) stamps: the producer field
is hashed into the id, which is all the chaining needs.
"""

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from modules.utils import HeightOutOfRange, Utils

GENESIS = bytes(32)
DEFAULT_MAX_RECORD_BYTES = 1024
ORPHAN_LIMIT = 64


class RecordKind(str, Enum):
    DATA = "data"
    ADOPTION_SIGNAL = "adoption_signal"
    REDIRECT = "redirect"
    FINAL_MARKER_PAYLOAD = "final_marker_payload"


class Marker(str, Enum):
    NORMAL = "normal"
    FINAL = "final"


class RejectReason(str, Enum):
    UNKNOWN_PARENT = "unknown-parent"
    BAD_DIGEST = "bad-digest"
    BAD_HEIGHT = "bad-height"
    OVERSIZE_RECORD = "oversize-record"
    DUPLICATE_RECORD = "duplicate-record"


class TieBreak(str, Enum):
    FIRST_SEEN = "first_seen"
    SMALLEST_DIGEST = "smallest_digest"


@dataclass(frozen=True)
class Record:
    record_id: str
    kind: RecordKind
    body: bytes

    def serialize(self):
        return Utils.lp_str(self.record_id) + Utils.lp_str(self.kind.value) + Utils.lp_bytes(self.body)

    @classmethod
    def deserialize(cls, data):
        record_id, offset = Utils.read_lp_str(data, 0)
        kind, offset = Utils.read_lp_str(data, offset)
        body, offset = Utils.read_lp(data, offset)
        if offset != len(data):
            raise ValueError("trailing bytes after record")
        return cls(record_id, RecordKind(kind), body)


@dataclass(frozen=True)
class Block:
    id: bytes
    parent_id: bytes
    height: int
    producer: str
    round: int
    records: tuple = ()
    marker: Marker = Marker.NORMAL

    @staticmethod
    def header_bytes(parent_id, height, producer, round_, records, marker):
        encoded_records = Utils.lp_int(len(records)) + b"".join(
            Utils.lp_bytes(r.serialize()) for r in records
        )
        return (
            Utils.lp_bytes(parent_id)
            + Utils.lp_int(height)
            + Utils.lp_str(producer)
            + Utils.lp_int(round_)
            + Utils.lp_bytes(encoded_records)
            + Utils.lp_str(marker.value)
        )

    @classmethod
    def compute_id(cls, parent_id, height, producer, round_, records, marker):
        return Utils.sha256(cls.header_bytes(parent_id, height, producer, round_, records, marker))

    @classmethod
    def create(cls, parent_id, height, producer, round_, records=(), marker=Marker.NORMAL):
        records = tuple(records)
        block_id = cls.compute_id(parent_id, height, producer, round_, records, marker)
        return cls(block_id, parent_id, height, producer, round_, records, marker)

    @classmethod
    def child_of(cls, parent, producer, round_, records=(), marker=Marker.NORMAL):
        return cls.create(parent.id, parent.height + 1, producer, round_, records, marker)

    def recomputed_id(self):
        return self.compute_id(self.parent_id, self.height, self.producer, self.round, self.records, self.marker)

    def serialize(self):
        return Utils.lp_bytes(self.id) + self.header_bytes(
            self.parent_id, self.height, self.producer, self.round, self.records, self.marker
        )

    @classmethod
    def deserialize(cls, data):
        """Parse a serialized block, keeping the stored id even if it no longer matches."""
        block_id, offset = Utils.read_lp(data, 0)
        parent_id, offset = Utils.read_lp(data, offset)
        height, offset = Utils.read_lp_int(data, offset)
        producer, offset = Utils.read_lp_str(data, offset)
        round_, offset = Utils.read_lp_int(data, offset)
        encoded_records, offset = Utils.read_lp(data, offset)
        marker, offset = Utils.read_lp_str(data, offset)
        if offset != len(data):
            raise ValueError("trailing bytes after block")
        count, inner = Utils.read_lp_int(encoded_records, 0)
        records = []
        for _ in range(count):
            raw, inner = Utils.read_lp(encoded_records, inner)
            records.append(Record.deserialize(raw))
        if inner != len(encoded_records):
            raise ValueError("trailing bytes after records")
        return cls(block_id, parent_id, height, producer, round_, tuple(records), Marker(marker))

    def tampered(self, **changes):
        """Copy with fields changed but the stored id left alone."""
        return replace(self, **changes)

    @property
    def is_genesis(self):
        return self.parent_id == GENESIS

    def find_record(self, record_id):
        for record in self.records:
            if record.record_id == record_id:
                return record
        return None


GENESIS_BLOCK = Block.create(GENESIS, 0, "genesis", 0)


@dataclass(frozen=True)
class BlockVerdict:
    ok: bool
    reason: Optional[RejectReason] = None


ACCEPT = BlockVerdict(True)


@dataclass
class AddResult:
    status: str  # accepted | duplicate | orphaned | rejected
    reason: Optional[RejectReason] = None
    accepted: list = field(default_factory=list)
    tip_changed: bool = False
    conflict: bool = False


class ChainView:
    """
    One node's local version of the chain.

    The tip is maintained incrementally; ``ChainCore.fork_choice`` recomputes it
    from scratch and always agrees. Finalized and frozen prefixes are anchors on
    the tip path: fork choice never leaves them.
    """

    def __init__(self, owner, genesis=GENESIS_BLOCK, tie_break=TieBreak.FIRST_SEEN,
                 max_record_bytes=DEFAULT_MAX_RECORD_BYTES):
        self.owner = owner
        self.genesis = genesis
        self.tie_break = TieBreak(tie_break)
        self.max_record_bytes = max_record_bytes
        self.blocks = {genesis.id: genesis}
        self.arrival = {genesis.id: 0}
        self.tip = genesis.id
        self.finalized_anchor = genesis.id
        self.frozen_anchor = genesis.id
        self.orphans = OrderedDict()

    # -- read side ---------------------------------------------------------

    @property
    def tip_block(self):
        return self.blocks[self.tip]

    @property
    def tip_height(self):
        return self.blocks[self.tip].height

    @property
    def finalized_height(self):
        return self.blocks[self.finalized_anchor].height

    @property
    def frozen_height(self):
        return self.blocks[self.frozen_anchor].height

    @property
    def anchor(self):
        """Highest locked block (finalized or frozen); both lie on the tip path."""
        if self.frozen_height > self.finalized_height:
            return self.frozen_anchor
        return self.finalized_anchor

    def __contains__(self, block_id):
        return block_id in self.blocks

    def ancestor_at(self, block_id, height):
        block = self.blocks[block_id]
        if height > block.height or height < 0:
            return None
        while block.height > height:
            block = self.blocks[block.parent_id]
        return block.id

    def descends_from(self, block_id, ancestor_id):
        ancestor = self.blocks.get(ancestor_id)
        if ancestor is None or block_id not in self.blocks:
            return False
        return self.ancestor_at(block_id, ancestor.height) == ancestor_id

    def path_to(self, block_id):
        path = []
        block = self.blocks[block_id]
        while True:
            path.append(block)
            if block.is_genesis:
                break
            block = self.blocks[block.parent_id]
        path.reverse()
        return path

    def tip_path(self):
        return self.path_to(self.tip)

    def on_tip_path(self, block_id):
        return self.descends_from(self.tip, block_id)

    def is_compatible(self, block_id):
        anchor = self.anchor
        if anchor == self.genesis.id:
            return block_id in self.blocks
        return self.descends_from(block_id, anchor) or self.descends_from(anchor, block_id)

    def rank(self, block_id):
        block = self.blocks[block_id]
        if self.tie_break is TieBreak.FIRST_SEEN:
            return (-block.height, self.arrival[block_id], block.id)
        return (-block.height, block.id)

    # -- write side --------------------------------------------------------

    def add_block(self, block, round_):
        """
        Validate and insert a block, reconnecting any buffered orphans.
        """
        if block.id in self.blocks:
            return AddResult("duplicate")
        if block.is_genesis:
            return AddResult("rejected", RejectReason.UNKNOWN_PARENT)
        verdict = ChainCore.validate_block(block, self)
        if not verdict.ok:
            if verdict.reason is RejectReason.UNKNOWN_PARENT:
                self._buffer_orphan(block, round_)
                return AddResult("orphaned", verdict.reason)
            return AddResult("rejected", verdict.reason)

        result = AddResult("accepted")
        pending = [block]
        while pending:
            current = pending.pop(0)
            self._insert(current, round_, result)
            children = [b for b, _ in self.orphans.values() if b.parent_id == current.id]
            for child in sorted(children, key=lambda b: b.id):
                del self.orphans[child.id]
                if ChainCore.validate_block(child, self).ok:
                    pending.append(child)
        return result

    def _insert(self, block, round_, result):
        self.blocks[block.id] = block
        self.arrival[block.id] = round_
        result.accepted.append(block.id)
        if not self.is_compatible(block.id):
            if block.height > self.tip_height:
                result.conflict = True
            return
        if self.rank(block.id) < self.rank(self.tip):
            self.tip = block.id
            result.tip_changed = True

    def _buffer_orphan(self, block, round_):
        if block.id in self.orphans:
            return
        self.orphans[block.id] = (block, round_)
        while len(self.orphans) > ORPHAN_LIMIT:
            self.orphans.popitem(last=False)

    def finalize(self, block_id):
        """
        Mark a block (and so its ancestors) irreversible in this view.

        Returns False when the block is unknown or conflicts with the current
        locked prefix.
        """
        if block_id not in self.blocks or not self.is_compatible(block_id):
            return False
        if self.blocks[block_id].height <= self.finalized_height:
            return self.descends_from(self.finalized_anchor, block_id)
        self.finalized_anchor = block_id
        if not self.descends_from(self.tip, block_id):
            self.tip = ChainCore.fork_choice(self)
        return True

    def freeze(self, depth):
        """Freeze the tip-path block ``depth`` below the tip; True if the frozen prefix grew."""
        height = self.tip_height - depth
        if height <= self.frozen_height:
            return False
        self.frozen_anchor = self.ancestor_at(self.tip, height)
        return True


class ChainCore:
    """
    Validation, fork choice and digests over chain views.
    """

    @staticmethod
    def validate_block(block, view):
        """
        Check a block against a view.

        Parameters:
        -----------
        block : Block
            Candidate block
        view : ChainView
            View supplying the parent and the record size limit

        Returns:
        --------
        BlockVerdict
            ``ok`` or the first failing reason, checked in the order digest,
            records, parent, height
        """
        if block.recomputed_id() != block.id:
            return BlockVerdict(False, RejectReason.BAD_DIGEST)
        seen = set()
        for record in block.records:
            if len(record.body) > view.max_record_bytes:
                return BlockVerdict(False, RejectReason.OVERSIZE_RECORD)
            if record.record_id in seen:
                return BlockVerdict(False, RejectReason.DUPLICATE_RECORD)
            seen.add(record.record_id)
        if block.parent_id == GENESIS:
            return ACCEPT if block.height == 0 else BlockVerdict(False, RejectReason.BAD_HEIGHT)
        parent = view.blocks.get(block.parent_id)
        if parent is None:
            return BlockVerdict(False, RejectReason.UNKNOWN_PARENT)
        if block.height != parent.height + 1:
            return BlockVerdict(False, RejectReason.BAD_HEIGHT)
        return ACCEPT

    @staticmethod
    def fork_choice(view, tie_break=None):
        """
        Longest-chain tip that never leaves the locked prefix.

        Ties go to the earliest arrival round, then the smallest digest
        (``first_seen``), or straight to the smallest digest
        (``smallest_digest``).
        """
        rule = TieBreak(tie_break) if tie_break is not None else view.tie_break
        best = None
        best_key = None
        for block_id, block in view.blocks.items():
            if not view.descends_from(block_id, view.anchor):
                continue
            if rule is TieBreak.FIRST_SEEN:
                key = (-block.height, view.arrival[block_id], block_id)
            else:
                key = (-block.height, block_id)
            if best_key is None or key < best_key:
                best, best_key = block_id, key
        return best

    @staticmethod
    def prefix_digest(blocks):
        return Utils.sha256(ChainCore.serialize_prefix(blocks))

    @staticmethod
    def serialize_prefix(blocks):
        return b"".join(Utils.lp_bytes(block.serialize()) for block in blocks)

    @staticmethod
    def chain_digest(view, up_to_height):
        if up_to_height < 0 or up_to_height > view.tip_height:
            raise HeightOutOfRange(f"height {up_to_height} outside 0..{view.tip_height}")
        return ChainCore.prefix_digest(view.tip_path()[: up_to_height + 1])

    @staticmethod
    def locate_record(view, record_id):
        """First occurrence of a record on the tip path, walking from genesis."""
        for block in view.tip_path():
            if block.find_record(record_id) is not None:
                return block.id, block.height
        return None


validate_block = ChainCore.validate_block
fork_choice = ChainCore.fork_choice
chain_digest = ChainCore.chain_digest
locate_record = ChainCore.locate_record
