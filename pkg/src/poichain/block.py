"""Three-lane blocks: header, per-lane Merkle roots, block and chain validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

from .crypto import (
    TAG_HEADER,
    ZERO_HASH,
    KeyPair,
    SchemaError,
    canonical_bytes,
    from_hex,
    sha256,
    sign,
    to_hex,
    verify,
)
from .records import (
    DataRecord,
    ModelRecord,
    ProofRecord,
    Record,
    ValidationError,
    admit,
    record_from_json,
)

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
EMPTY_ROOT = sha256(b"")


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    """Domain-separated Merkle root; an odd node at any level is paired with itself."""
    if not leaves:
        return EMPTY_ROOT
    level = [sha256(LEAF_PREFIX + leaf) for leaf in leaves]
    while True:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(NODE_PREFIX + level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        if len(level) == 1:
            return level[0]


def lane_root(records: Iterable[Record]) -> bytes:
    return merkle_root([canonical_bytes(r) for r in records])


class BlockErrorKind(str, Enum):
    BAD_HEIGHT = "BadHeight"
    BAD_PREV_HASH = "BadPrevHash"
    BAD_DATA_ROOT = "BadDataRoot"
    BAD_MODEL_ROOT = "BadModelRoot"
    BAD_PROOF_ROOT = "BadProofRoot"
    BAD_RECORD = "BadRecord"
    BAD_BLOCK_SIGNATURE = "BadBlockSignature"


class BlockError(Exception):
    def __init__(self, kind: BlockErrorKind, detail: str = ""):
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)
        self.kind = kind
        self.detail = detail


class RecordInvalid(ValueError):
    def __init__(self, record: Any, error: ValidationError):
        super().__init__(f"record rejected: {error}")
        self.record = record
        self.error = error


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    timestamp: int
    data_root: bytes
    model_root: bytes
    proof_root: bytes
    proposer_id: bytes
    proposer_public_key: bytes = b""
    signature: bytes = b""

    TAG = TAG_HEADER
    FIELDS = (
        ("height", "u64"),
        ("prev_hash", "hash"),
        ("timestamp", "u64"),
        ("data_root", "hash"),
        ("model_root", "hash"),
        ("proof_root", "hash"),
        ("proposer_id", "hash"),
    )

    def to_json(self) -> dict[str, Any]:
        return {
            f.name: to_hex(v) if isinstance(v := getattr(self, f.name), bytes) else v
            for f in dataclasses.fields(self)
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "BlockHeader":
        values = {}
        for f in dataclasses.fields(cls):
            v = obj[f.name]
            values[f.name] = from_hex(v) if f.name not in ("height", "timestamp") else v
        return cls(**values)


@dataclass(frozen=True)
class BlockBody:
    data_lane: tuple[DataRecord, ...] = ()
    model_lane: tuple[ModelRecord, ...] = ()
    proof_lane: tuple[ProofRecord, ...] = ()

    def records(self) -> list[Record]:
        return [*self.data_lane, *self.model_lane, *self.proof_lane]

    def __len__(self) -> int:
        return len(self.data_lane) + len(self.model_lane) + len(self.proof_lane)


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    body: BlockBody = field(default_factory=BlockBody)

    @property
    def block_hash(self) -> bytes:
        return sha256(canonical_bytes(self.header))

    @property
    def height(self) -> int:
        return self.header.height

    def to_json(self) -> dict[str, Any]:
        return {
            "block_hash": to_hex(self.block_hash),
            "header": self.header.to_json(),
            "body": {
                "data_lane": [r.to_json() for r in self.body.data_lane],
                "model_lane": [r.to_json() for r in self.body.model_lane],
                "proof_lane": [r.to_json() for r in self.body.proof_lane],
            },
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Block":
        body = obj["body"]
        return cls(
            BlockHeader.from_json(obj["header"]),
            BlockBody(
                tuple(record_from_json("DATA", r) for r in body["data_lane"]),
                tuple(record_from_json("MODEL", r) for r in body["model_lane"]),
                tuple(record_from_json("PROOF", r) for r in body["proof_lane"]),
            ),
        )


def make_genesis(timestamp: int = 0) -> Block:
    header = BlockHeader(
        height=0,
        prev_hash=ZERO_HASH,
        timestamp=timestamp,
        data_root=EMPTY_ROOT,
        model_root=EMPTY_ROOT,
        proof_root=EMPTY_ROOT,
        proposer_id=ZERO_HASH,
    )
    return Block(header)


def sign_header(header: BlockHeader, proposer: KeyPair) -> BlockHeader:
    header = dataclasses.replace(header, proposer_id=proposer.node_id, proposer_public_key=proposer.public_key)
    return dataclasses.replace(header, signature=sign(proposer, canonical_bytes(header)))


def build_block(prev: Block, records: Iterable[Record], proposer: KeyPair, timestamp: int) -> Block:
    """Sign a block on top of ``prev`` holding ``records``, sorted into their lanes.

    Raises RecordInvalid if any record fails admission.
    """
    lanes: dict[type, list] = {DataRecord: [], ModelRecord: [], ProofRecord: []}
    for record in records:
        err = admit(record)
        if err is not None:
            raise RecordInvalid(record, err)
        lanes[type(record)].append(record)
    body = BlockBody(*(tuple(sorted(lanes[t], key=lambda r: r.sort_key)) for t in (DataRecord, ModelRecord, ProofRecord)))
    header = BlockHeader(
        height=prev.height + 1,
        prev_hash=prev.block_hash,
        timestamp=timestamp,
        data_root=lane_root(body.data_lane),
        model_root=lane_root(body.model_lane),
        proof_root=lane_root(body.proof_lane),
        proposer_id=proposer.node_id,
    )
    return Block(sign_header(header, proposer), body)


_LANES = (
    ("data_lane", "data_root", DataRecord, BlockErrorKind.BAD_DATA_ROOT),
    ("model_lane", "model_root", ModelRecord, BlockErrorKind.BAD_MODEL_ROOT),
    ("proof_lane", "proof_root", ProofRecord, BlockErrorKind.BAD_PROOF_ROOT),
)


def _check_roots(block: Block) -> BlockError | None:
    for lane, root, _, kind in _LANES:
        try:
            ok = lane_root(getattr(block.body, lane)) == getattr(block.header, root)
        except (SchemaError, AttributeError, TypeError):
            ok = False
        if not ok:
            return BlockError(kind, f"{root} does not match {lane}")
    return None


def _check_records(block: Block) -> BlockError | None:
    for lane, _, record_type, _ in _LANES:
        seen = set()
        for i, record in enumerate(getattr(block.body, lane)):
            if type(record) is not record_type:
                return BlockError(BlockErrorKind.BAD_RECORD, f"{lane}[{i}] has wrong type")
            err = admit(record)
            if err is not None:
                return BlockError(BlockErrorKind.BAD_RECORD, f"{lane}[{i}]: {err}")
            if record.record_id in seen:
                return BlockError(BlockErrorKind.BAD_RECORD, f"{lane}[{i}] duplicated")
            seen.add(record.record_id)
    return None


def _check_signature(header: BlockHeader) -> BlockError | None:
    try:
        ok = sha256(bytes(header.proposer_public_key)) == header.proposer_id and verify(
            header.proposer_public_key, canonical_bytes(header), header.signature
        )
    except (SchemaError, TypeError):
        ok = False
    return None if ok else BlockError(BlockErrorKind.BAD_BLOCK_SIGNATURE)


def validate_block(block: Block, prev: Block) -> BlockError | None:
    """First failing check, in the fixed order height, linkage, roots, records, signature."""
    h = block.header
    if isinstance(h.height, bool) or not isinstance(h.height, int) or h.height != prev.height + 1:
        return BlockError(BlockErrorKind.BAD_HEIGHT, f"expected {prev.height + 1}, got {h.height!r}")
    if h.prev_hash != prev.block_hash:
        return BlockError(BlockErrorKind.BAD_PREV_HASH)
    return _check_roots(block) or _check_records(block) or _check_signature(h)


def _validate_genesis(block: Block) -> BlockError | None:
    h = block.header
    if h.height != 0:
        return BlockError(BlockErrorKind.BAD_HEIGHT, "genesis height must be 0")
    if h.prev_hash != ZERO_HASH:
        return BlockError(BlockErrorKind.BAD_PREV_HASH, "genesis prev_hash must be zero")
    return _check_roots(block) or _check_records(block)


def validate_chain(blocks: Sequence[Block]) -> tuple[int, BlockError] | None:
    if not blocks:
        return (0, BlockError(BlockErrorKind.BAD_HEIGHT, "empty chain"))
    err = _validate_genesis(blocks[0])
    if err is not None:
        return (0, err)
    for i in range(1, len(blocks)):
        err = validate_block(blocks[i], blocks[i - 1])
        if err is not None:
            return (i, err)
    return None
