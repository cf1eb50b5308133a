"""Deterministic inference tasks, the mock backend, and proof checking by recomputation."""

from __future__ import annotations

import base64
import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Any, Protocol

from .crypto import (
    TAG_INFERENCE,
    TAG_TASK,
    KeyPair,
    SchemaError,
    canonical_bytes,
    encode_pairs,
    from_hex,
    sha256,
    to_hex,
)
from .records import MAX_SCORE, VERSION_PATTERN, ProofRecord

MAX_PAYLOAD_BYTES = 64 * 1024
SCORE_MODULUS = MAX_SCORE + 1


@dataclass(frozen=True)
class InferenceTask:
    task_id: bytes
    dataset_hash: bytes
    model_hash: bytes
    model_version: str
    input_payload: bytes
    decoding_params: tuple[tuple[str, str], ...]
    deadline: int

    TAG = TAG_TASK
    FIELDS = (
        ("dataset_hash", "hash"),
        ("model_hash", "hash"),
        ("model_version", "str"),
        ("input_payload", "bytes"),
        ("decoding_params", "pairs"),
        ("deadline", "u64"),
    )

    @classmethod
    def create(
        cls,
        dataset_hash: bytes,
        model_hash: bytes,
        model_version: str,
        input_payload: bytes,
        decoding_params=(),
        deadline: int = 0,
    ) -> "InferenceTask":
        params = tuple((str(k), str(v)) for k, v in decoding_params)
        task = cls(b"", dataset_hash, model_hash, model_version, input_payload, params, deadline)
        return dataclasses.replace(task, task_id=task.expected_id())

    def expected_id(self) -> bytes:
        return sha256(canonical_bytes(self))

    def with_deadline(self, deadline: int) -> "InferenceTask":
        """Same work under a new deadline; the task id changes with it."""
        return InferenceTask.create(
            self.dataset_hash, self.model_hash, self.model_version, self.input_payload, self.decoding_params, deadline
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": to_hex(self.task_id),
            "dataset_hash": to_hex(self.dataset_hash),
            "model_hash": to_hex(self.model_hash),
            "model_version": self.model_version,
            "input_payload": base64.b64encode(self.input_payload).decode(),
            "decoding_params": [list(p) for p in self.decoding_params],
            "deadline": self.deadline,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "InferenceTask":
        return cls(
            task_id=from_hex(obj["task_id"]),
            dataset_hash=from_hex(obj["dataset_hash"]),
            model_hash=from_hex(obj["model_hash"]),
            model_version=obj["model_version"],
            input_payload=base64.b64decode(obj["input_payload"], validate=True),
            decoding_params=tuple((k, v) for k, v in obj["decoding_params"]),
            deadline=obj["deadline"],
        )


def validate_task(task: InferenceTask) -> str | None:
    """Reason the task is malformed, or None."""
    try:
        canonical_bytes(task)
    except SchemaError as exc:
        return str(exc)
    if len(task.input_payload) > MAX_PAYLOAD_BYTES:
        return "input_payload exceeds 64 KiB"
    if not VERSION_PATTERN.fullmatch(task.model_version):
        return "model_version is not a valid identifier"
    if task.task_id != task.expected_id():
        return "task_id does not match content"
    return None


@dataclass(frozen=True)
class InferenceResult:
    task_id: bytes
    output_hash: bytes
    validation_score: int
    executor_id: bytes

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": to_hex(self.task_id),
            "output_hash": to_hex(self.output_hash),
            "validation_score": self.validation_score,
            "executor_id": to_hex(self.executor_id),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "InferenceResult":
        return cls(
            from_hex(obj["task_id"]),
            from_hex(obj["output_hash"]),
            int(obj["validation_score"]),
            from_hex(obj["executor_id"]),
        )


class InferenceBackend(Protocol):
    def run(self, task: InferenceTask) -> tuple[bytes, int]:
        """Return ``(output_hash, validation_score)`` for ``task``."""


class MockBackend:
    """Hash-based stand-in for a model forward pass: pure, cheap, bit-identical everywhere."""

    def run(self, task: InferenceTask) -> tuple[bytes, int]:
        output_hash = sha256(
            bytes([TAG_INFERENCE])
            + task.model_hash
            + task.dataset_hash
            + task.input_payload
            + encode_pairs(task.decoding_params)
        )
        return output_hash, int.from_bytes(output_hash[:8], "big") % SCORE_MODULUS


DEFAULT_BACKEND = MockBackend()


def execute(task: InferenceTask, executor_id: bytes = bytes(32), backend: InferenceBackend = DEFAULT_BACKEND) -> InferenceResult:
    problem = validate_task(task)
    if problem is not None:
        raise ValueError(f"invalid task: {problem}")
    output_hash, score = backend.run(task)
    return InferenceResult(task.task_id, output_hash, score, executor_id)


def make_proof(result: InferenceResult, task: InferenceTask, executor: KeyPair, timestamp: int) -> ProofRecord:
    return ProofRecord.create(
        dataset_hash=task.dataset_hash,
        model_hash=task.model_hash,
        validation_score=result.validation_score,
        task_id=task.task_id,
        timestamp=timestamp,
        keypair=executor,
    )


class ProofCheck(str, Enum):
    SCORE_MISMATCH = "ScoreMismatch"
    TASK_MISMATCH = "TaskMismatch"


@dataclass(frozen=True)
class ProofVerdict:
    problem: ProofCheck | None
    submitted: int | None = None
    recomputed: int | None = None

    @property
    def ok(self) -> bool:
        return self.problem is None

    @property
    def deviation(self) -> int | None:
        if self.submitted is None or self.recomputed is None:
            return None
        return abs(self.submitted - self.recomputed)


def verify_proof(
    proof: ProofRecord, task: InferenceTask, tolerance: int = 0, backend: InferenceBackend = DEFAULT_BACKEND
) -> ProofVerdict:
    """Re-execute ``task`` and compare against the proof's claims.

    ``tolerance`` is in score micro-units; the default demands exact equality.
    """
    if (
        validate_task(task) is not None
        or proof.task_id != task.task_id
        or proof.dataset_hash != task.dataset_hash
        or proof.model_hash != task.model_hash
    ):
        return ProofVerdict(ProofCheck.TASK_MISMATCH, proof.validation_score)
    _, score = backend.run(task)
    if abs(proof.validation_score - score) > tolerance:
        return ProofVerdict(ProofCheck.SCORE_MISMATCH, proof.validation_score, score)
    return ProofVerdict(None, proof.validation_score, score)
