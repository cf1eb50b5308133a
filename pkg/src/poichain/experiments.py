"""Fixed validation case mixes (baseline and combined) and wall-clock latency summaries.

Each case is one validation call with a known expected outcome. A case
passes detection when an invalid input is rejected with the expected error
kind; a valid input that gets rejected is a false positive. Latency is timed
in a separate pass so that detection results never depend on timing.
"""

from __future__ import annotations

import dataclasses
import statistics
import time
from dataclasses import dataclass
from typing import Any, Callable

from .block import Block, build_block, make_genesis, validate_block
from .crypto import KeyPair, sha256
from .mempool import Mempool
from .network import Hub, Packet, PacketKind
from .records import DataRecord, ModelRecord, ProofRecord, ValidationError, admit
from .simulation import MetricsReport

BASELINE_COUNTS = {
    "record": (3, 8),
    "block": (2, 5),
    "hub": (5, 2),
    "pool": (3, 1),
}
SCALE_RECORDS = 1000
TIMESTAMP = 1_700_000_000_000


@dataclass
class Case:
    component: str
    name: str
    expect_valid: bool
    expected_error: str | None = None
    outcome: str = ""  # error kind, or "ok"

    @property
    def accepted(self) -> bool:
        return self.outcome == "ok"

    @property
    def correct(self) -> bool:
        if self.expect_valid:
            return self.accepted
        return not self.accepted and (self.expected_error is None or self.outcome.startswith(self.expected_error))

    def to_json(self) -> dict[str, Any]:
        return {
            "component": self.component,
            "name": self.name,
            "expected": "valid" if self.expect_valid else f"invalid:{self.expected_error}",
            "outcome": self.outcome,
            "correct": self.correct,
        }


def _keys() -> tuple[KeyPair, KeyPair]:
    return KeyPair.derive("baseline", "alice"), KeyPair.derive("baseline", "bob")


def valid_records(offset: int = 0, count: int = 3, keypair: KeyPair | None = None) -> list:
    """``count`` signed records cycling DATA, MODEL, PROOF, deterministic in ``offset``."""
    key = keypair or _keys()[0]
    out = []
    for i in range(offset, offset + count):
        ts = TIMESTAMP + i
        digest = sha256(f"item:{i}".encode())
        if i % 3 == 0:
            out.append(DataRecord.create(digest, ts, key, metadata=f"shard {i}"))
        elif i % 3 == 1:
            out.append(ModelRecord.create(digest, "v1.0", f"model-{i}", ts, key, config_metadata="temperature=0"))
        else:
            out.append(ProofRecord.create(sha256(b"ds" + digest), digest, (i * 7919) % 1_000_001, sha256(b"task" + digest), ts, key))
    return out


def invalid_records() -> list[tuple[str, str, Any]]:
    """(name, expected error kind, record) for each record-level tamper category."""
    alice, bob = _keys()
    data, model, proof = valid_records()
    forged = bytearray(model.signature)
    forged[0] ^= 0xFF
    return [
        ("data_missing_timestamp", "MissingField", dataclasses.replace(data, timestamp=None)),
        ("proof_short_dataset_hash", "BadLength", dataclasses.replace(proof, dataset_hash=proof.dataset_hash[:31])),
        ("model_timestamp_as_string", "BadType", dataclasses.replace(model, timestamp=str(model.timestamp))),
        ("model_version_pattern", "BadPattern", dataclasses.replace(model, model_version="v 1/0")),
        ("proof_score_out_of_range", "ScoreOutOfRange", dataclasses.replace(proof, validation_score=1_000_001)),
        ("data_metadata_tampered", "BadSignature", dataclasses.replace(data, metadata="shard 0 (edited)")),
        ("proof_sender_mismatch", "BadSignature", dataclasses.replace(proof, sender_id=bob.node_id)),
        ("model_forged_signature", "BadSignature", dataclasses.replace(model, signature=bytes(forged))),
    ]


def _admit_outcome(record: Any) -> str:
    err = admit(record)
    return "ok" if err is None else err.kind.value


def _block_fixtures() -> tuple[Block, list[tuple[str, bool, str | None, Block, Block]]]:
    """(name, valid, expected error, block, prev) for the block cases."""
    alice, _ = _keys()
    genesis = make_genesis()
    b1 = build_block(genesis, valid_records(100, 6), alice, TIMESTAMP + 100)
    b2 = build_block(b1, valid_records(106, 6), alice, TIMESTAMP + 200)

    def tamper(**changes) -> Block:
        return Block(dataclasses.replace(b2.header, **changes), b2.body)

    wrong = sha256(b"tampered")
    cases = [
        ("block_1_on_genesis", True, None, b1, genesis),
        ("block_2_linked", True, None, b2, b1),
        ("bad_height", False, "BadHeight", tamper(height=7), b1),
        ("bad_prev_hash", False, "BadPrevHash", tamper(prev_hash=wrong), b1),
        ("bad_data_root", False, "BadDataRoot", tamper(data_root=wrong), b1),
        ("bad_model_root", False, "BadModelRoot", tamper(model_root=wrong), b1),
        ("bad_proof_root", False, "BadProofRoot", tamper(proof_root=wrong), b1),
    ]
    return genesis, cases


def _block_outcome(block: Block, prev: Block) -> str:
    err = validate_block(block, prev)
    return "ok" if err is None else err.kind.value


def _record_packet(record: Any) -> Packet:
    kind = {DataRecord: PacketKind.NEW_DATA_RECORD, ModelRecord: PacketKind.NEW_MODEL_RECORD, ProofRecord: PacketKind.NEW_PROOF_RECORD}
    return Packet(kind[type(record)], record.sender_id, bytes(32), {"record": record.to_json()})


def _hub_fixtures() -> list[tuple[str, bool, str | None, Packet]]:
    # index mod 3 picks the kind: data, model, proof, data, proof
    records = [valid_records(i, 1)[0] for i in (201, 202, 203, 204, 206)]
    cases = [(f"hub_valid_{r.KIND.lower()}_{i}", True, None, _record_packet(r)) for i, r in enumerate(records)]
    good = valid_records(210, 1)[0]
    wrong_kind = Packet(PacketKind.NEW_MODEL_RECORD, good.sender_id, bytes(32), {"record": good.to_json()})
    tampered = dataclasses.replace(valid_records(211, 1)[0], model_id="model-swapped")
    cases += [
        ("hub_record_under_wrong_kind", False, "MalformedPacket", wrong_kind),
        ("hub_bad_signature", False, "ValidationError", _record_packet(tampered)),
    ]
    return cases


def _hub_outcome(hub: Hub, packet: Packet) -> str:
    verdict = hub.ingest(packet)
    return "ok" if verdict.routed else verdict.reason


def _pool_fixtures() -> list[tuple[str, bool, str | None, Any]]:
    records = valid_records(300, 3)
    forged = bytearray(records[0].signature)
    forged[10] ^= 0x01
    bad = dataclasses.replace(valid_records(303, 1)[0], signature=bytes(forged))
    return [(f"pool_valid_{i}", True, None, r) for i, r in enumerate(records)] + [("pool_bad_signature", False, "BadSignature", bad)]


def _pool_outcome(pool: Mempool, record: Any) -> str:
    try:
        pool.insert(record)
    except ValidationError as exc:
        return exc.kind.value
    return "ok"


def _time(fn: Callable[[], Any]) -> float:
    start = time.perf_counter()
    fn()
    return (time.perf_counter() - start) * 1000.0


def _run_cases(extra_records: int, timing_repeats: int, name: str) -> MetricsReport:
    cases: list[Case] = []
    samples: dict[str, list[float]] = {"record": [], "block": [], "hub": [], "pool": []}

    # records
    record_inputs = [(f"record_valid_{r.KIND.lower()}", True, None, r) for r in valid_records()]
    record_inputs += [(n, False, e, r) for n, e, r in invalid_records()]
    scale = valid_records(10_000, extra_records) if extra_records else []
    record_inputs += [(f"scale_record_{i}", True, None, r) for i, r in enumerate(scale)]
    for n, ok, err, rec in record_inputs:
        cases.append(Case("record", n, ok, err, _admit_outcome(rec)))

    # blocks
    _, block_inputs = _block_fixtures()
    for n, ok, err, block, prev in block_inputs:
        cases.append(Case("block", n, ok, err, _block_outcome(block, prev)))

    # hub: one hub receives the fixed packets, then the scale packets
    hub_inputs = _hub_fixtures() + [(f"scale_hub_{i}", True, None, _record_packet(r)) for i, r in enumerate(scale)]
    hub = Hub(Mempool(capacity=max(10_000, 2 * extra_records)))
    for n, ok, err, packet in hub_inputs:
        cases.append(Case("hub", n, ok, err, _hub_outcome(hub, packet)))

    # pool
    pool = Mempool()
    pool_inputs = _pool_fixtures()
    for n, ok, err, rec in pool_inputs:
        cases.append(Case("pool", n, ok, err, _pool_outcome(pool, rec)))

    # timing pass: accepted and rejected inputs go to separate classes, since a
    # rejection short-circuits and says little about the cost of the full check.
    # Stateful operations get fresh state per repetition.
    def bucket(op: str, ok: bool) -> list[float]:
        return samples.setdefault(op if ok else f"{op}_reject", [])

    for _ in range(timing_repeats):
        for _, ok, _, rec in record_inputs[: 3 + 8]:
            bucket("record", ok).append(_time(lambda: admit(rec)))
        for _, ok, _, block, prev in block_inputs:
            bucket("block", ok).append(_time(lambda: validate_block(block, prev)))
        fresh = Hub(Mempool())
        for _, ok, _, packet in hub_inputs[:7]:
            bucket("hub", ok).append(_time(lambda: fresh.ingest(packet)))
        fresh_pool = Mempool()
        for _, ok, _, rec in pool_inputs:
            if ok:
                bucket("pool", ok).append(_time(lambda: fresh_pool.insert(rec, admitted=True)))
    for rec in scale:
        samples["record"].append(_time(lambda: admit(rec)))
    scale_hub = Hub(Mempool(capacity=max(10_000, extra_records)))
    for rec in scale:
        packet = _record_packet(rec)
        samples["hub"].append(_time(lambda: scale_hub.ingest(packet)))

    report = MetricsReport(name)
    counts: dict[str, list[int]] = {}
    for case in cases:
        c = counts.setdefault(case.component, [0, 0])
        c[0 if case.expect_valid else 1] += 1
        if case.expect_valid:
            report.valid_cases += 1
            report.rejected_valid += not case.accepted
        else:
            report.invalid_cases += 1
            report.detected_invalid += not case.accepted
    expected_counts = {k: [v + (extra_records if k in ("record", "hub") else 0), i] for k, (v, i) in BASELINE_COUNTS.items()}
    report.details = {
        "counts": {k: {"valid": v[0], "invalid": v[1]} for k, v in sorted(counts.items())},
        "cases": [c.to_json() for c in cases if not c.name.startswith("scale_")],
        "scale_cases": extra_records,
        "timing_repeats": timing_repeats,
    }
    report.assertions = {
        "detection_rate_is_1": report.detection_rate == 1.0,
        "false_positive_rate_is_0": report.false_positive_rate == 0.0,
        "case_counts_match": counts == expected_counts,
        "error_kinds_match": all(c.correct for c in cases),
    }
    report.latency_samples = samples
    return report


def run_baseline_suite(timing_repeats: int = 20) -> MetricsReport:
    """13 valid and 16 invalid cases across records, blocks, hub and pool."""
    return _run_cases(0, timing_repeats, "baseline")


def run_combined_suite(timing_repeats: int = 20, scale: int = SCALE_RECORDS) -> MetricsReport:
    """The baseline mix plus ``scale`` extra valid record validations and hub submissions."""
    return _run_cases(scale, timing_repeats, "combined")


def measure_latency(report: MetricsReport) -> dict[str, dict[str, float | int]]:
    """Wall-clock min/median/p99 in milliseconds per operation class."""
    summary = {}
    for op, values in sorted(report.latency_samples.items()):
        if not values:
            continue
        ordered = sorted(values)
        p99 = ordered[min(len(ordered) - 1, max(0, -(-99 * len(ordered) // 100) - 1))]
        summary[op] = {
            "n": len(ordered),
            "min_ms": ordered[0],
            "median_ms": statistics.median(ordered),
            "p99_ms": p99,
        }
    return summary
