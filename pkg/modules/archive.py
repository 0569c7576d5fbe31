"""
Archival snapshots, commitments on the public bulletin, multi-archivist
comparison and the fresh-verifier resolution procedure.

Snapshot file layout (little-endian)::

    b"BLSIMSNP" ‖ u32 version ‖ lp(archivist) ‖ lp(u64 taken_round)
    ‖ lp(u64 height) ‖ lp(digest) ‖ lp(block 0) ‖ … ‖ lp(block height)

The digest is ``ChainCore.prefix_digest`` over the block stream, so it equals
``chain_digest`` of the view the snapshot was taken from.
"""

import json
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from modules.chain_core import GENESIS, Block, ChainCore, ChainView, TieBreak
from modules.utils import HeightExceedsSettled, SnapshotFormatError, Utils

logger = logging.getLogger(__name__)


class SnapshotVerdict(str, Enum):
    AUTHENTIC = "authentic"
    TAMPERED = "tampered"
    UNCOMMITTED = "uncommitted"


class ArchiveClassification(str, Enum):
    CONSISTENT = "consistent"
    DIVERGENT_RESOLVABLE = "divergent_resolvable"
    DIVERGENT_UNRESOLVABLE = "divergent_unresolvable"


class QueryPolicy(str, Enum):
    NAIVE = "naive"
    ARCHIVE_AWARE = "archive_aware"


@dataclass(frozen=True)
class ConsistencyReport:
    ok: bool
    failing_height: Optional[int] = None
    reason: Optional[str] = None


@dataclass(frozen=True)
class Snapshot:
    archivist: str
    taken_round: int
    height: int
    blocks: tuple
    digest: bytes

    MAGIC = b"BLSIMSNP"
    VERSION = 1

    @property
    def block_ids(self):
        return tuple(b.id for b in self.blocks)

    def find_record(self, record_id):
        for block in self.blocks:
            record = block.find_record(record_id)
            if record is not None:
                return record
        return None

    def to_bytes(self):
        header = (
            self.MAGIC
            + struct.pack("<I", self.VERSION)
            + Utils.lp_str(self.archivist)
            + Utils.lp_int(self.taken_round)
            + Utils.lp_int(self.height)
            + Utils.lp_bytes(self.digest)
        )
        return header + ChainCore.serialize_prefix(self.blocks)

    @classmethod
    def from_bytes(cls, data):
        start = len(cls.MAGIC) + 4
        if len(data) < start or not data.startswith(cls.MAGIC):
            raise SnapshotFormatError("not a snapshot file (bad magic)")
        (version,) = struct.unpack_from("<I", data, len(cls.MAGIC))
        if version != cls.VERSION:
            raise SnapshotFormatError(f"unsupported snapshot version {version}")
        try:
            archivist, offset = Utils.read_lp_str(data, start)
            taken_round, offset = Utils.read_lp_int(data, offset)
            height, offset = Utils.read_lp_int(data, offset)
            digest, offset = Utils.read_lp(data, offset)
            blocks = []
            while offset < len(data):
                raw, offset = Utils.read_lp(data, offset)
                blocks.append(Block.deserialize(raw))
        except ValueError as e:
            raise SnapshotFormatError(f"corrupt snapshot: {e}") from e
        return cls(archivist, taken_round, height, tuple(blocks), digest)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class Commitment:
    digest: bytes
    taken_round: int
    publisher: str
    index: int

    def to_dict(self):
        return {
            "digest": self.digest.hex(),
            "taken_round": self.taken_round,
            "publisher": self.publisher,
            "index": self.index,
        }


class Bulletin:
    """
    The append-only public registry of snapshot digests.
    """

    def __init__(self, reachable=True):
        self._entries = []
        self.reachable = reachable

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    @property
    def entries(self):
        return tuple(self._entries)

    def publish(self, digest, taken_round, publisher):
        commitment = Commitment(bytes(digest), int(taken_round), publisher, len(self._entries))
        self._entries.append(commitment)
        logger.debug("commitment %d published by %s", commitment.index, publisher)
        return commitment

    def contains(self, digest):
        return self.reachable and any(c.digest == digest for c in self._entries)

    def latest(self):
        return self._entries[-1] if self._entries else None

    def to_json(self):
        return json.dumps([c.to_dict() for c in self._entries], indent=2)

    @classmethod
    def from_json(cls, text):
        bulletin = cls()
        for i, entry in enumerate(json.loads(text)):
            if entry.get("index", i) != i:
                raise SnapshotFormatError(f"bulletin index {entry.get('index')} out of order at position {i}")
            bulletin.publish(bytes.fromhex(entry["digest"]), entry["taken_round"], entry["publisher"])
        return bulletin

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        try:
            return cls.from_json(Path(path).read_text())
        except (ValueError, KeyError) as e:
            raise SnapshotFormatError(f"corrupt bulletin {path}: {e}") from e


@dataclass(frozen=True)
class QueryResult:
    resolved: bool
    body: Optional[bytes] = None
    source: Optional[str] = None


UNRESOLVED = QueryResult(False)


class Archive:
    """
    A class to take, check and compare archival snapshots
    """

    @staticmethod
    def snapshot_chain(view, up_to_height, archivist_id, round_, rule):
        """
        Snapshot the settled tip-path prefix of a view.

        Parameters:
        -----------
        view : ChainView
            The archivist's view
        up_to_height : int
            Last height to include
        archivist_id : str
            Who takes the snapshot
        round_ : int
            Round the snapshot is taken in
        rule : ConsensusRule
            Decides the settled height (k-confirmed or finalized)

        Returns:
        --------
        Snapshot
        """
        settled = rule.settled_height(view)
        if up_to_height > settled:
            raise HeightExceedsSettled(f"height {up_to_height} exceeds settled height {settled}")
        blocks = tuple(view.tip_path()[: up_to_height + 1])
        return Snapshot(archivist_id, round_, up_to_height, blocks, ChainCore.prefix_digest(blocks))

    @staticmethod
    def internal_consistency_check(snapshot):
        """
        Replay block validation over the prefix.

        Returns:
        --------
        ConsistencyReport
            ok, or the first failing height and why
        """
        if not snapshot.blocks:
            return ConsistencyReport(False, 0, "empty")
        previous = None
        for expected_height, block in enumerate(snapshot.blocks):
            if block.recomputed_id() != block.id:
                return ConsistencyReport(False, expected_height, "bad-digest")
            if block.height != expected_height:
                return ConsistencyReport(False, expected_height, "bad-height")
            parent = GENESIS if previous is None else previous.id
            if block.parent_id != parent:
                return ConsistencyReport(False, expected_height, "bad-parent")
            if len({r.record_id for r in block.records}) != len(block.records):
                return ConsistencyReport(False, expected_height, "duplicate-record")
            previous = block
        if previous.height != snapshot.height:
            return ConsistencyReport(False, previous.height, "bad-height")
        return ConsistencyReport(True)

    @staticmethod
    def verify_snapshot(snapshot, bulletin):
        if not Archive.internal_consistency_check(snapshot).ok:
            return SnapshotVerdict.TAMPERED
        recomputed = ChainCore.prefix_digest(snapshot.blocks)
        if recomputed != snapshot.digest:
            return SnapshotVerdict.TAMPERED
        if bulletin is not None and bulletin.contains(recomputed):
            return SnapshotVerdict.AUTHENTIC
        return SnapshotVerdict.UNCOMMITTED

    @staticmethod
    def _is_prefix(shorter, longer):
        return len(shorter) <= len(longer) and longer[: len(shorter)] == shorter

    @staticmethod
    def versions(snapshots):
        """
        Group snapshots into versions: one per maximal chain, holding every
        snapshot whose chain is a prefix of it.
        """
        chains = sorted({s.block_ids for s in snapshots}, key=lambda c: (len(c), c))
        maximal = [c for c in chains if not any(c != o and Archive._is_prefix(c, o) for o in chains)]
        return [[s for s in snapshots if Archive._is_prefix(s.block_ids, top)] for top in maximal]

    @staticmethod
    def compare_archives(snapshots, bulletin=None):
        snapshots = list(snapshots)
        if len(snapshots) < 2:
            raise ValueError("compare_archives needs at least two snapshots")
        versions = Archive.versions(snapshots)
        if len(versions) == 1:
            return ArchiveClassification.CONSISTENT
        committed = sum(
            1 for members in versions
            if any(Archive.verify_snapshot(s, bulletin) is SnapshotVerdict.AUTHENTIC for s in members)
        )
        if committed == 1:
            return ArchiveClassification.DIVERGENT_RESOLVABLE
        return ArchiveClassification.DIVERGENT_UNRESOLVABLE

    @staticmethod
    def fresh_view(published, certificates=(), stable=False, owner="verifier",
                   tie_break=TieBreak.SMALLEST_DIGEST, max_record_bytes=None):
        """
        The view of a protocol-faithful newcomer.

        Parameters:
        -----------
        published : iterable of (round, Block)
            Every block ever published on the network, in publication order
        certificates : iterable of bytes
            Finalized block ids in publication order; conflicting ones are
            skipped
        stable : bool
            Whether finality certificates are honoured
        """
        kwargs = {"tie_break": tie_break}
        if max_record_bytes is not None:
            kwargs["max_record_bytes"] = max_record_bytes
        view = ChainView(owner, **kwargs)
        for round_, block in published:
            view.add_block(block, round_)
        if stable:
            for block_id in certificates:
                view.finalize(block_id)
        return view

    @staticmethod
    def resolve_query(record_id, live_view, archives, bulletin, policy=QueryPolicy.NAIVE):
        """
        Resolve a record the way a querier would.

        ``live_view`` is the fresh verifier's view of the network's published
        history (None when nothing was published on it). The archive-aware policy prefers archives whose
        digest is on a reachable bulletin (highest first, then smallest
        digest) and falls back to the live network.
        """
        policy = QueryPolicy(policy)
        if policy is QueryPolicy.ARCHIVE_AWARE and bulletin is not None and bulletin.reachable:
            authentic = [s for s in archives if Archive.verify_snapshot(s, bulletin) is SnapshotVerdict.AUTHENTIC]
            for snapshot in sorted(authentic, key=lambda s: (-s.height, s.digest)):
                record = snapshot.find_record(record_id)
                if record is not None:
                    return QueryResult(True, record.body, "archive")
        if live_view is None:
            return UNRESOLVED
        located = ChainCore.locate_record(live_view, record_id)
        if located is None:
            return UNRESOLVED
        record = live_view.blocks[located[0]].find_record(record_id)
        return QueryResult(True, record.body, "live")


snapshot_chain = Archive.snapshot_chain
verify_snapshot = Archive.verify_snapshot
internal_consistency_check = Archive.internal_consistency_check
compare_archives = Archive.compare_archives
resolve_query = Archive.resolve_query
