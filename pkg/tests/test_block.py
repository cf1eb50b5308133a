from __future__ import annotations

import dataclasses
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import merkle_ref
from poichain.block import (
    EMPTY_ROOT,
    Block,
    BlockBody,
    BlockErrorKind,
    RecordInvalid,
    build_block,
    lane_root,
    make_genesis,
    merkle_root,
    validate_block,
    validate_chain,
)
from poichain.crypto import KeyPair, canonical_bytes, sha256
from poichain.records import DataRecord, ModelRecord, ProofRecord

proposer = KeyPair.derive("block", "proposer")
author = KeyPair.derive("block", "author")


def records(offset: int, n: int = 6):
    out = []
    for i in range(offset, offset + n):
        h = sha256(f"r{i}".encode())
        if i % 3 == 0:
            out.append(DataRecord.create(h, 1000 + i, author, metadata=str(i)))
        elif i % 3 == 1:
            out.append(ModelRecord.create(h, "v2", f"m{i}", 1000 + i, author))
        else:
            out.append(ProofRecord.create(h, h, i, h, 1000 + i, author))
    return out


@pytest.fixture(scope="module")
def chain():
    g = make_genesis()
    b1 = build_block(g, records(0), proposer, 2000)
    b2 = build_block(b1, records(6), proposer, 3000)
    return [g, b1, b2]


def test_merkle_frozen_vectors():
    assert merkle_root([]) == EMPTY_ROOT == sha256(b"")
    assert merkle_root([b"a", b"b", b"c"]).hex() == "e9636069c740c9ff51625b01a0b040396d265a9b920cc6febdfa5ecc9f58ecce"


def test_single_leaf_is_paired_with_itself():
    h = sha256(b"\x00L")
    assert merkle_root([b"L"]) == sha256(b"\x01" + h + h)


@given(st.lists(st.binary(max_size=8), min_size=2, max_size=8, unique=True), st.randoms())
def test_merkle_is_order_sensitive(leaves, rnd):
    shuffled = list(leaves)
    rnd.shuffle(shuffled)
    if shuffled != leaves:
        assert merkle_root(shuffled) != merkle_root(leaves)


@given(st.lists(st.binary(max_size=40), max_size=17))
def test_merkle_matches_bruteforce(leaves):
    assert merkle_root(leaves) == merkle_ref(leaves)


@given(st.lists(st.binary(max_size=8), min_size=1, max_size=9), st.data())
def test_merkle_detects_any_leaf_change(leaves, data):
    i = data.draw(st.integers(0, len(leaves) - 1))
    changed = list(leaves)
    changed[i] = changed[i] + b"!"
    assert merkle_root(changed) != merkle_root(leaves)


def test_leaf_and_node_prefixes_differ():
    # a two-leaf root must not equal the single leaf that is the concatenation of their hashes
    a, b = sha256(b"\x00a"), sha256(b"\x00b")
    assert merkle_root([b"a", b"b"]) != merkle_root([a + b])


def test_valid_chain(chain):
    g, b1, b2 = chain
    assert validate_block(b1, g) is None
    assert validate_block(b2, b1) is None
    assert validate_chain(chain) is None
    assert b1.height == 1 and b2.header.prev_hash == b1.block_hash


def test_lanes_are_sorted_and_rooted(chain):
    b1 = chain[1]
    for lane in (b1.body.data_lane, b1.body.model_lane, b1.body.proof_lane):
        assert list(lane) == sorted(lane, key=lambda r: r.sort_key)
    assert b1.header.data_root == merkle_ref([canonical_bytes(r) for r in b1.body.data_lane])


def test_block_hash_covers_header_only(chain):
    b1 = chain[1]
    assert b1.block_hash == sha256(canonical_bytes(b1.header))


def _with_header(block, **changes):
    return Block(dataclasses.replace(block.header, **changes), block.body)


def _swap_lane(block, lane, fn):
    body = dataclasses.replace(block.body, **{lane: fn(getattr(block.body, lane))})
    return Block(block.header, body)


def test_header_tamper_matrix(chain):
    _, b1, b2 = chain
    wrong = sha256(b"wrong")
    bad_sig = bytearray(b2.header.signature)
    bad_sig[3] ^= 1
    cases = {
        BlockErrorKind.BAD_HEIGHT: _with_header(b2, height=3),
        BlockErrorKind.BAD_PREV_HASH: _with_header(b2, prev_hash=wrong),
        BlockErrorKind.BAD_DATA_ROOT: _with_header(b2, data_root=wrong),
        BlockErrorKind.BAD_MODEL_ROOT: _with_header(b2, model_root=wrong),
        BlockErrorKind.BAD_PROOF_ROOT: _with_header(b2, proof_root=wrong),
        BlockErrorKind.BAD_BLOCK_SIGNATURE: _with_header(b2, signature=bytes(bad_sig)),
    }
    for kind, block in cases.items():
        assert validate_block(block, b1).kind is kind


def test_lane_tampering_maps_to_lane_root(chain):
    _, b1, b2 = chain
    extra = records(30, 3)
    for lane, kind, rec in (
        ("data_lane", BlockErrorKind.BAD_DATA_ROOT, extra[0]),
        ("model_lane", BlockErrorKind.BAD_MODEL_ROOT, extra[1]),
        ("proof_lane", BlockErrorKind.BAD_PROOF_ROOT, extra[2]),
    ):
        assert validate_block(_swap_lane(b2, lane, lambda xs: xs + (rec,)), b1).kind is kind
        assert validate_block(_swap_lane(b2, lane, lambda xs: xs[1:]), b1).kind is kind
        assert validate_block(_swap_lane(b2, lane, lambda xs: tuple(reversed(xs))), b1).kind is kind


def test_signature_by_other_key_is_rejected(chain):
    _, b1, b2 = chain
    other = KeyPair.derive("block", "other")
    assert validate_block(_with_header(b2, proposer_public_key=other.public_key), b1).kind is BlockErrorKind.BAD_BLOCK_SIGNATURE


def test_invalid_record_inside_consistent_roots(chain):
    _, b1, _ = chain
    bad = dataclasses.replace(records(0)[0], metadata="edited")
    g = chain[0]
    body = BlockBody((bad,), (), ())
    header = dataclasses.replace(b1.header, data_root=lane_root(body.data_lane), model_root=EMPTY_ROOT, proof_root=EMPTY_ROOT)
    assert validate_block(Block(header, body), g).kind is BlockErrorKind.BAD_RECORD


def test_duplicate_and_misplaced_records(chain):
    g = chain[0]
    r = records(0, 1)[0]
    dup = build_block(g, [r], proposer, 5)
    body = BlockBody((r, r), (), ())
    header = dataclasses.replace(dup.header, data_root=lane_root(body.data_lane))
    assert validate_block(Block(header, body), g).kind is BlockErrorKind.BAD_RECORD
    wrong_lane = BlockBody((), (r,), ())
    header = dataclasses.replace(dup.header, data_root=EMPTY_ROOT, model_root=lane_root(wrong_lane.model_lane))
    assert validate_block(Block(header, wrong_lane), g).kind is BlockErrorKind.BAD_RECORD


def test_build_block_refuses_invalid_records(chain):
    bad = dataclasses.replace(records(0)[1], model_version="bad version")
    with pytest.raises(RecordInvalid):
        build_block(chain[0], [bad], proposer, 1)


def test_validate_chain_reports_first_bad_index(chain):
    g, b1, b2 = chain
    assert validate_chain([g, b1, _with_header(b2, height=9)])[0] == 2
    assert validate_chain([])[0] == 0
    assert validate_chain([_with_header(g, height=1)])[0] == 0


def test_block_json_roundtrip(chain):
    b2 = chain[2]
    back = Block.from_json(json.loads(json.dumps(b2.to_json())))
    assert back == b2 and back.block_hash == b2.block_hash
    assert validate_block(back, chain[1]) is None


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5))
def test_any_lane_sizes_validate(nd, nm, np_):
    recs = [r for r in records(0, 18) if isinstance(r, DataRecord)][:nd]
    recs += [r for r in records(0, 18) if isinstance(r, ModelRecord)][:nm]
    recs += [r for r in records(0, 18) if isinstance(r, ProofRecord)][:np_]
    g = make_genesis()
    block = build_block(g, recs, proposer, 1)
    assert validate_block(block, g) is None
    assert len(block.body) == nd + nm + np_
