from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poichain.block import build_block, make_genesis
from poichain.crypto import KeyPair, sha256
from poichain.mempool import Mempool, PoolFull
from poichain.records import DataRecord, ErrorKind, ModelRecord, ProofRecord, ValidationError

key = KeyPair.derive("mempool")


def data(i: int) -> DataRecord:
    return DataRecord.create(sha256(str(i).encode()), i, key)


def proof(i: int) -> ProofRecord:
    h = sha256(f"p{i}".encode())
    return ProofRecord.create(h, h, i, h, i, key)


def test_insert_and_select_fifo():
    pool = Mempool()
    recs = [data(i) for i in (5, 1, 3)]
    for r in recs:
        pool.insert(r)
    d, m, p = pool.select_for_block(2)
    assert d == recs[:2] and m == [] and p == []
    assert len(pool) == 3  # selection does not remove
    assert pool.depth() == {"data": 3, "model": 0, "proof": 0}


def test_duplicate_rejected():
    pool = Mempool()
    pool.insert(data(1))
    with pytest.raises(ValidationError) as exc:
        pool.insert(data(1))
    assert exc.value.kind is ErrorKind.DUPLICATE


def test_invalid_rejected_before_storage():
    pool = Mempool()
    with pytest.raises(ValidationError) as exc:
        pool.insert(dataclasses.replace(data(1), metadata="x"))
    assert exc.value.kind is ErrorKind.BAD_SIGNATURE
    assert len(pool) == 0


def test_capacity_is_per_lane():
    pool = Mempool(capacity=2)
    pool.insert(data(1))
    pool.insert(data(2))
    with pytest.raises(PoolFull):
        pool.insert(data(3))
    pool.insert(proof(1))
    assert pool.depth() == {"data": 2, "model": 0, "proof": 1}


def test_commit_purges_and_remembers():
    pool = Mempool()
    recs = [data(1), data(2), proof(3)]
    for r in recs:
        pool.insert(r)
    block = build_block(make_genesis(), recs[:2], key, 10)
    pool.commit(block)
    assert recs[0] not in pool and recs[2] in pool
    with pytest.raises(ValidationError) as exc:
        pool.insert(recs[0])
    assert exc.value.kind is ErrorKind.DUPLICATE


def test_remove_without_commit_allows_reinsert():
    pool = Mempool()
    r = proof(1)
    pool.insert(r)
    pool.remove([r])
    pool.insert(r)
    assert pool.get("PROOF", r.proof_id) == r


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 15), max_size=40))
def test_pool_never_holds_duplicates(ids):
    pool = Mempool()
    cache = {i: data(i) for i in set(ids)}
    accepted = 0
    for i in ids:
        try:
            pool.insert(cache[i], admitted=True)
            accepted += 1
        except ValidationError:
            pass
    assert accepted == len(set(ids)) == len(pool)
    keys = [r.record_id for r in pool.all_records()]
    assert len(keys) == len(set(keys))
