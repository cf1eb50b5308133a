from __future__ import annotations

import dataclasses
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import encode_data, encode_model, encode_proof, sha256_ref
from poichain.crypto import KeyPair, sha256
from poichain.records import (
    MAX_SCORE,
    DataRecord,
    DecodeError,
    ErrorKind,
    ModelRecord,
    ProofRecord,
    ValidationError,
    admit,
    record_from_json,
    validate_schema,
)

SID = bytes(range(32))
DS = sha256(b"dataset-0")
MH = sha256(b"model-0")
TASK = bytes.fromhex("026baa11290af7688cb56365418c71e04569e4fba804e2d12692bb85840500b6")

alice = KeyPair.derive("records", "alice")
bob = KeyPair.derive("records", "bob")


def make_all():
    return (
        DataRecord.create(DS, 1_700_000_000_000, alice, metadata="shard 0"),
        ModelRecord.create(MH, "v1.0", "llama-7b", 1_700_000_000_001, alice, config_metadata="temperature=0"),
        ProofRecord.create(DS, MH, 835561, TASK, 1_700_000_000_002, alice),
    )


def test_record_ids_match_frozen_vectors():
    # golden values from the reference encoder in tests/oracles.py
    data = DataRecord(content_hash=DS, timestamp=1_700_000_000_000, sender_id=SID, metadata="shard 0")
    model = ModelRecord(model_hash=MH, model_version="v1.0", model_id="llama-7b", config_metadata="temperature=0",
                        timestamp=1_700_000_000_001, sender_id=SID)
    proof = ProofRecord(dataset_hash=DS, model_hash=MH, validation_score=835561, task_id=TASK,
                        timestamp=1_700_000_000_002, sender_id=SID)
    assert data.record_id.hex() == "7ca7805f878e35a9584e62cfcddfbff2c34a81969a28fbd2b8eb70a866aa40f4"
    assert model.record_id.hex() == "1c93118bb5d75942a89adc0a61bee63fa10c56ac23454b4b98d115284f9d7d6c"
    assert proof.expected_proof_id().hex() == "66f0ad16b8b205fb0fbac3c34c14907d58209bc313614b256ca4a31c06cf478b"


def test_record_ids_follow_reference_encoder():
    data, model, proof = make_all()
    assert data.record_id == sha256_ref(encode_data(DS, data.timestamp, alice.node_id, "shard 0"))
    assert model.record_id == sha256_ref(
        encode_model(MH, "v1.0", "llama-7b", "temperature=0", model.timestamp, alice.node_id)
    )
    zeroed = encode_proof(DS, MH, 835561, TASK, bytes(32), proof.timestamp, alice.node_id)
    assert proof.proof_id == sha256_ref(zeroed)


def test_valid_records_are_admitted():
    for rec in make_all():
        assert admit(rec) is None


def _forge(sig: bytes) -> bytes:
    b = bytearray(sig)
    b[0] ^= 0xFF
    return bytes(b)


data0, model0, proof0 = make_all()

INVALID = [
    (dataclasses.replace(data0, timestamp=None), ErrorKind.MISSING_FIELD),
    (dataclasses.replace(data0, signature=None), ErrorKind.MISSING_FIELD),
    (dataclasses.replace(proof0, dataset_hash=DS[:31]), ErrorKind.BAD_LENGTH),
    (dataclasses.replace(data0, metadata="x" * 4097), ErrorKind.BAD_LENGTH),
    (dataclasses.replace(model0, model_id="m" * 129), ErrorKind.BAD_LENGTH),
    (dataclasses.replace(data0, signature=b"\x00" * 63), ErrorKind.BAD_LENGTH),
    (dataclasses.replace(model0, timestamp="1700000000001"), ErrorKind.BAD_TYPE),
    (dataclasses.replace(model0, timestamp=True), ErrorKind.BAD_TYPE),
    (dataclasses.replace(proof0, validation_score=-1), ErrorKind.BAD_TYPE),
    (dataclasses.replace(model0, model_version="v 1"), ErrorKind.BAD_PATTERN),
    (dataclasses.replace(model0, model_version=""), ErrorKind.BAD_PATTERN),
    (dataclasses.replace(proof0, validation_score=MAX_SCORE + 1), ErrorKind.SCORE_OUT_OF_RANGE),
    (dataclasses.replace(data0, metadata="edited"), ErrorKind.BAD_SIGNATURE),
    (dataclasses.replace(proof0, sender_id=bob.node_id), ErrorKind.BAD_SIGNATURE),
    (dataclasses.replace(model0, signature=_forge(model0.signature)), ErrorKind.BAD_SIGNATURE),
    (dataclasses.replace(proof0, validation_score=1), ErrorKind.BAD_SIGNATURE),  # proof_id no longer matches
    (dataclasses.replace(data0, sender_public_key=bob.public_key), ErrorKind.BAD_SIGNATURE),
]


@pytest.mark.parametrize("record,kind", INVALID)
def test_invalid_records_report_expected_kind(record, kind):
    err = admit(record)
    assert isinstance(err, ValidationError)
    assert err.kind is kind


def test_score_boundaries():
    assert admit(ProofRecord.create(DS, MH, MAX_SCORE, TASK, 1, alice)) is None
    assert admit(ProofRecord.create(DS, MH, 0, TASK, 1, alice)) is None


def test_schema_stage_precedes_signature_stage():
    # tampered AND malformed: the schema error wins
    rec = dataclasses.replace(data0, metadata="edited", timestamp=None)
    assert admit(rec).kind is ErrorKind.MISSING_FIELD


def test_non_record_is_bad_type():
    assert validate_schema({"content_hash": DS}).kind is ErrorKind.BAD_TYPE


@pytest.mark.parametrize("record", make_all(), ids=["data", "model", "proof"])
def test_json_roundtrip(record):
    text = json.dumps(record.to_json())
    back = record_from_json(record.KIND, json.loads(text))
    assert back == record
    assert admit(back) is None


def test_json_decoding_errors():
    obj = data0.to_json()
    with pytest.raises(DecodeError):
        record_from_json("DATA", {**obj, "extra": 1})
    with pytest.raises(DecodeError):
        record_from_json("BLOB", obj)
    with pytest.raises(DecodeError):
        record_from_json("DATA", [obj])
    missing = dict(obj)
    del missing["timestamp"]
    assert admit(record_from_json("DATA", missing)).kind is ErrorKind.MISSING_FIELD
    bad_hex = {**obj, "content_hash": "zz"}
    assert admit(record_from_json("DATA", bad_hex)).kind is ErrorKind.BAD_TYPE


def test_optional_metadata_defaults_to_empty():
    obj = DataRecord.create(DS, 5, alice).to_json()
    del obj["metadata"]
    assert admit(record_from_json("DATA", obj)) is None


@settings(max_examples=30, deadline=None)
@given(
    content=st.binary(min_size=32, max_size=32),
    ts=st.integers(0, 2**64 - 1),
    meta=st.text(max_size=40),
)
def test_any_signed_data_record_roundtrips_and_admits(content, ts, meta):
    rec = DataRecord.create(content, ts, alice, metadata=meta)
    assert admit(rec) is None
    assert record_from_json("DATA", json.loads(json.dumps(rec.to_json()))) == rec


@settings(max_examples=30, deadline=None)
@given(score=st.integers(0, MAX_SCORE), flip=st.integers(0, 63))
def test_any_single_bit_signature_flip_is_caught(score, flip):
    rec = ProofRecord.create(DS, MH, score, TASK, 9, alice)
    sig = bytearray(rec.signature)
    sig[flip] ^= 0x01
    assert admit(dataclasses.replace(rec, signature=bytes(sig))).kind is ErrorKind.BAD_SIGNATURE
