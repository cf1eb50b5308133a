"""DATA, MODEL and PROOF records and the two-stage admission gate.

A record is admitted only if it passes schema validation and then signature
verification. Both checks report the first failure as a
:class:`ValidationError`; they return it rather than raising so that callers
can count verdicts without exception handling.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, ClassVar, Union

from .crypto import (
    HASH_LEN,
    PUBKEY_LEN,
    SIG_LEN,
    TAG_DATA,
    TAG_MODEL,
    TAG_PROOF,
    U64_MAX,
    ZERO_HASH,
    KeyPair,
    canonical_bytes,
    from_hex,
    sha256,
    sign,
    to_hex,
    verify,
)

MAX_METADATA_BYTES = 4096
MAX_MODEL_ID_BYTES = 128
MAX_SCORE = 1_000_000
VERSION_PATTERN = re.compile(r"[A-Za-z0-9._-]{1,64}")


class ErrorKind(str, Enum):
    MISSING_FIELD = "MissingField"
    BAD_LENGTH = "BadLength"
    BAD_TYPE = "BadType"
    BAD_PATTERN = "BadPattern"
    SCORE_OUT_OF_RANGE = "ScoreOutOfRange"
    BAD_SIGNATURE = "BadSignature"
    DUPLICATE = "Duplicate"


class ValidationError(Exception):
    def __init__(self, kind: ErrorKind, detail: str = ""):
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)
        self.kind = kind
        self.detail = detail

    def __eq__(self, other):
        return isinstance(other, ValidationError) and (self.kind, self.detail) == (other.kind, other.detail)

    def __hash__(self):
        return hash((self.kind, self.detail))


class DecodeError(ValueError):
    """JSON that does not have the shape of the requested record type."""


class _Record:
    TAG: ClassVar[int]
    KIND: ClassVar[str]
    FIELDS: ClassVar[tuple[tuple[str, str], ...]]
    # Per-field constraints beyond the base kind: max UTF-8 length or a pattern.
    LIMITS: ClassVar[dict[str, int]] = {}
    PATTERNS: ClassVar[dict[str, re.Pattern]] = {}

    def signing_bytes(self) -> bytes:
        return canonical_bytes(self)

    @property
    def record_id(self) -> bytes:
        """Identity hash used for deduplication and lane ordering."""
        return sha256(canonical_bytes(self))

    @property
    def sort_key(self) -> tuple:
        return (self.timestamp, getattr(self, self.FIELDS[0][0]), self.record_id)

    def signed_by(self, keypair: KeyPair):
        unsigned = dataclasses.replace(
            self, sender_id=keypair.node_id, sender_public_key=keypair.public_key, signature=None
        )
        return dataclasses.replace(unsigned, signature=sign(keypair, unsigned.signing_bytes()))

    def to_json(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = to_hex(value) if isinstance(value, (bytes, bytearray)) else value
        return out


@dataclass(frozen=True)
class DataRecord(_Record):
    content_hash: bytes | None = None
    timestamp: int | None = None
    sender_id: bytes | None = None
    metadata: str | None = ""
    signature: bytes | None = None
    sender_public_key: bytes | None = None

    TAG: ClassVar[int] = TAG_DATA
    KIND: ClassVar[str] = "DATA"
    FIELDS: ClassVar = (
        ("content_hash", "hash"),
        ("timestamp", "u64"),
        ("sender_id", "hash"),
        ("metadata", "str"),
    )
    LIMITS: ClassVar = {"metadata": MAX_METADATA_BYTES}

    @classmethod
    def create(cls, content_hash: bytes, timestamp: int, keypair: KeyPair, metadata: str = "") -> "DataRecord":
        return cls(content_hash=content_hash, timestamp=timestamp, metadata=metadata).signed_by(keypair)


@dataclass(frozen=True)
class ModelRecord(_Record):
    model_hash: bytes | None = None
    model_version: str | None = None
    model_id: str | None = None
    config_metadata: str | None = ""
    timestamp: int | None = None
    sender_id: bytes | None = None
    signature: bytes | None = None
    sender_public_key: bytes | None = None

    TAG: ClassVar[int] = TAG_MODEL
    KIND: ClassVar[str] = "MODEL"
    FIELDS: ClassVar = (
        ("model_hash", "hash"),
        ("model_version", "str"),
        ("model_id", "str"),
        ("config_metadata", "str"),
        ("timestamp", "u64"),
        ("sender_id", "hash"),
    )
    LIMITS: ClassVar = {"model_id": MAX_MODEL_ID_BYTES, "config_metadata": MAX_METADATA_BYTES}
    PATTERNS: ClassVar = {"model_version": VERSION_PATTERN}

    @classmethod
    def create(
        cls,
        model_hash: bytes,
        model_version: str,
        model_id: str,
        timestamp: int,
        keypair: KeyPair,
        config_metadata: str = "",
    ) -> "ModelRecord":
        return cls(
            model_hash=model_hash,
            model_version=model_version,
            model_id=model_id,
            config_metadata=config_metadata,
            timestamp=timestamp,
        ).signed_by(keypair)


@dataclass(frozen=True)
class ProofRecord(_Record):
    dataset_hash: bytes | None = None
    model_hash: bytes | None = None
    validation_score: int | None = None
    task_id: bytes | None = None
    proof_id: bytes | None = None
    timestamp: int | None = None
    sender_id: bytes | None = None
    signature: bytes | None = None
    sender_public_key: bytes | None = None

    TAG: ClassVar[int] = TAG_PROOF
    KIND: ClassVar[str] = "PROOF"
    FIELDS: ClassVar = (
        ("dataset_hash", "hash"),
        ("model_hash", "hash"),
        ("validation_score", "u64"),
        ("task_id", "hash"),
        ("proof_id", "hash"),
        ("timestamp", "u64"),
        ("sender_id", "hash"),
    )

    @property
    def record_id(self) -> bytes:
        return self.proof_id

    @property
    def sort_key(self) -> tuple:
        return (self.timestamp, self.proof_id)

    def expected_proof_id(self) -> bytes:
        return sha256(canonical_bytes(dataclasses.replace(self, proof_id=ZERO_HASH)))

    def signed_by(self, keypair: KeyPair) -> "ProofRecord":
        unsigned = dataclasses.replace(
            self, sender_id=keypair.node_id, sender_public_key=keypair.public_key, signature=None
        )
        unsigned = dataclasses.replace(unsigned, proof_id=unsigned.expected_proof_id())
        return dataclasses.replace(unsigned, signature=sign(keypair, unsigned.signing_bytes()))

    @classmethod
    def create(
        cls,
        dataset_hash: bytes,
        model_hash: bytes,
        validation_score: int,
        task_id: bytes,
        timestamp: int,
        keypair: KeyPair,
    ) -> "ProofRecord":
        return cls(
            dataset_hash=dataset_hash,
            model_hash=model_hash,
            validation_score=validation_score,
            task_id=task_id,
            timestamp=timestamp,
        ).signed_by(keypair)


Record = Union[DataRecord, ModelRecord, ProofRecord]
RECORD_TYPES: dict[str, type] = {"DATA": DataRecord, "MODEL": ModelRecord, "PROOF": ProofRecord}


def _check_field(cls, name: str, kind: str, value: Any) -> ValidationError | None:
    if value is None:
        return ValidationError(ErrorKind.MISSING_FIELD, name)
    if kind == "hash":
        if not isinstance(value, (bytes, bytearray)):
            return ValidationError(ErrorKind.BAD_TYPE, name)
        if len(value) != HASH_LEN:
            return ValidationError(ErrorKind.BAD_LENGTH, f"{name}: {len(value)} bytes")
    elif kind == "u64":
        if isinstance(value, bool) or not isinstance(value, int):
            return ValidationError(ErrorKind.BAD_TYPE, name)
        if not 0 <= value <= U64_MAX:
            return ValidationError(ErrorKind.BAD_TYPE, f"{name}: out of u64 range")
    elif kind == "str":
        if not isinstance(value, str):
            return ValidationError(ErrorKind.BAD_TYPE, name)
        try:
            size = len(value.encode("utf-8"))
        except UnicodeEncodeError:
            return ValidationError(ErrorKind.BAD_TYPE, f"{name}: not UTF-8")
        limit = cls.LIMITS.get(name)
        if limit is not None and size > limit:
            return ValidationError(ErrorKind.BAD_LENGTH, f"{name}: {size} > {limit} bytes")
        pattern = cls.PATTERNS.get(name)
        if pattern is not None and not pattern.fullmatch(value):
            return ValidationError(ErrorKind.BAD_PATTERN, name)
    return None


def validate_schema(record: Any) -> ValidationError | None:
    """First structural violation of ``record``, or None if it is well-formed."""
    cls = type(record)
    if cls not in RECORD_TYPES.values():
        return ValidationError(ErrorKind.BAD_TYPE, f"not a record: {cls.__name__}")
    for name, kind in cls.FIELDS:
        err = _check_field(cls, name, kind, getattr(record, name))
        if err is not None:
            return err
        if cls is ProofRecord and name == "validation_score" and record.validation_score > MAX_SCORE:
            return ValidationError(ErrorKind.SCORE_OUT_OF_RANGE, str(record.validation_score))
    for name, size in (("signature", SIG_LEN), ("sender_public_key", PUBKEY_LEN)):
        value = getattr(record, name)
        if value is None:
            return ValidationError(ErrorKind.MISSING_FIELD, name)
        if not isinstance(value, (bytes, bytearray)):
            return ValidationError(ErrorKind.BAD_TYPE, name)
        if len(value) != size:
            return ValidationError(ErrorKind.BAD_LENGTH, f"{name}: {len(value)} bytes")
    return None


def validate_signature(record: Record) -> ValidationError | None:
    """Authenticity and integrity; assumes ``validate_schema`` already passed."""
    try:
        return _signature_error(record)
    except Exception as exc:  # malformed input that skipped the schema stage
        return ValidationError(ErrorKind.BAD_SIGNATURE, f"unverifiable: {exc}")


def _signature_error(record: Record) -> ValidationError | None:
    if sha256(bytes(record.sender_public_key)) != record.sender_id:
        return ValidationError(ErrorKind.BAD_SIGNATURE, "sender_id does not match public key")
    if isinstance(record, ProofRecord) and record.proof_id != record.expected_proof_id():
        return ValidationError(ErrorKind.BAD_SIGNATURE, "proof_id does not match content")
    if not verify(record.sender_public_key, record.signing_bytes(), record.signature):
        return ValidationError(ErrorKind.BAD_SIGNATURE, "signature does not verify")
    return None


def admit(record: Any) -> ValidationError | None:
    return validate_schema(record) or validate_signature(record)


def _decode_value(kind: str, value: Any) -> Any:
    # Hex strings become bytes; anything else is passed through so that the
    # schema stage can report it as BadType.
    if kind in ("hash", "bytes") and isinstance(value, str):
        try:
            return from_hex(value)
        except ValueError:
            return value
    return value


_BYTES_EXTRA = {"signature", "sender_public_key"}
_OPTIONAL_STR = {"metadata", "config_metadata"}


def record_from_json(kind: str, obj: Any) -> Record:
    """Decode a record's JSON form. Missing keys become None; unknown keys are an error."""
    cls = RECORD_TYPES.get(kind)
    if cls is None:
        raise DecodeError(f"unknown record type {kind!r}")
    if not isinstance(obj, dict):
        raise DecodeError("record must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - names
    if unknown:
        raise DecodeError(f"unexpected keys for {kind}: {sorted(unknown)}")
    kinds = dict(cls.FIELDS)
    values = {}
    for name in names:
        if name not in obj:
            values[name] = "" if name in _OPTIONAL_STR else None
            continue
        kind_of = "bytes" if name in _BYTES_EXTRA else kinds[name]
        values[name] = _decode_value(kind_of, obj[name])
    return cls(**values)


def record_kind(record: Any) -> str:
    return type(record).KIND
