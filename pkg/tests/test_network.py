from __future__ import annotations

import dataclasses
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import replay_delivery_times
from poichain.crypto import KeyPair, sha256
from poichain.inference import InferenceTask
from poichain.mempool import Mempool
from poichain.network import (
    Hub,
    MalformedPacket,
    Packet,
    PacketKind,
    SimNetwork,
    UnknownRecipient,
    check_payload,
)
from poichain.records import DataRecord, ProofRecord

key = KeyPair.derive("network")
A, B = sha256(b"A"), sha256(b"B")


def data_packet(i: int = 0) -> Packet:
    rec = DataRecord.create(sha256(str(i).encode()), i, key)
    return Packet(PacketKind.NEW_DATA_RECORD, key.node_id, A, {"record": rec.to_json()})


def test_packet_json_roundtrip():
    p = data_packet()
    assert Packet.from_json(json.loads(json.dumps(p.to_json()))) == p
    with pytest.raises(MalformedPacket):
        Packet.from_json({"kind": "NOPE", "from": "00", "to": "00", "payload": {}})


def test_check_payload_key_sets():
    check_payload(PacketKind.HEARTBEAT_PING, {"round": 1})
    check_payload(PacketKind.NEW_PROOF_RECORD, {"record": {}, "task": {}})
    with pytest.raises(MalformedPacket):
        check_payload(PacketKind.HEARTBEAT_PING, {})
    with pytest.raises(MalformedPacket):
        check_payload(PacketKind.HEARTBEAT_PING, {"round": 1, "x": 2})
    with pytest.raises(MalformedPacket):
        check_payload(PacketKind.TASK_RESULT, [1, 2])


def test_hub_routes_valid_records_to_mempool():
    hub = Hub(Mempool())
    assert hub.ingest(data_packet(1)).routed
    assert len(hub.mempool) == 1
    dup = hub.ingest(data_packet(1))
    assert not dup.routed and "Duplicate" in dup.reason


def test_hub_rejections():
    hub = Hub(Mempool())
    p = data_packet(2)
    tampered = dict(p.payload["record"], metadata="edited")
    assert str(hub.ingest(dataclasses.replace(p, payload={"record": tampered}))).startswith("rejected:ValidationError")
    assert str(hub.ingest(dataclasses.replace(p, kind=PacketKind.NEW_MODEL_RECORD))).startswith("rejected:MalformedPacket")
    assert str(hub.ingest(dataclasses.replace(p, payload={}))).startswith("rejected:MalformedPacket")
    assert str(hub.ingest(Packet(PacketKind.HEARTBEAT_PING, A, B, {"round": 1}))) == "rejected:NoHandler: HEARTBEAT_PING"
    assert len(hub.mempool) == 0


def test_hub_dispatches_handlers_and_wraps_errors():
    seen = []
    hub = Hub(Mempool(), {PacketKind.HEARTBEAT_PING: lambda p: seen.append(p.payload["round"])})
    assert hub.ingest(Packet(PacketKind.HEARTBEAT_PING, A, B, {"round": 3})).routed
    assert seen == [3]
    hub.handlers[PacketKind.HEARTBEAT_PONG] = lambda p: int("x")
    assert "MalformedPacket" in hub.ingest(Packet(PacketKind.HEARTBEAT_PONG, A, B, {"round": 3})).reason


def test_hub_stores_task_only_when_it_matches_the_proof():
    t = InferenceTask.create(sha256(b"d"), sha256(b"m"), "v1", b"x", [], 10)
    other = InferenceTask.create(sha256(b"d"), sha256(b"m"), "v1", b"y", [], 10)
    proof = ProofRecord.create(t.dataset_hash, t.model_hash, 1, t.task_id, 1, key)
    hub = Hub(Mempool())
    pkt = Packet(PacketKind.NEW_PROOF_RECORD, key.node_id, A, {"record": proof.to_json(), "task": other.to_json()})
    assert hub.ingest(pkt).routed and hub.tasks == {}
    proof2 = ProofRecord.create(t.dataset_hash, t.model_hash, 2, t.task_id, 1, key)
    pkt = Packet(PacketKind.NEW_PROOF_RECORD, key.node_id, A, {"record": proof2.to_json(), "task": t.to_json()})
    assert hub.ingest(pkt).routed and hub.tasks == {t.task_id: t}


def test_unknown_recipient():
    net = SimNetwork()
    with pytest.raises(UnknownRecipient):
        net.send(Packet(PacketKind.HEARTBEAT_PING, A, B, {"round": 0}))


@settings(max_examples=25)
@given(seed=st.integers(0, 2**32), loss=st.sampled_from([0.0, 0.3, 1.0]), jitter=st.integers(0, 20),
       delays=st.lists(st.integers(0, 50), max_size=12))
def test_delivery_times_replay_from_seed(seed, loss, jitter, delays):
    net = SimNetwork(seed, base_latency_ms=7, jitter_ms=jitter, loss_rate=loss)
    net.register(B)
    got = [net.send(Packet(PacketKind.HEARTBEAT_PING, A, B, {"round": i}), d) for i, d in enumerate(delays)]
    assert got == replay_delivery_times(seed, delays, 7, jitter, loss)
    net.run()
    assert net.stats["sent"] == len(delays)
    assert net.stats["delivered"] + net.stats["dropped"] == len(delays)
    assert len(net.inboxes[B]) == sum(t is not None for t in got)
    assert [p.payload["round"] for p in net.inboxes[B]] == [
        i for _, i in sorted((t, i) for i, t in enumerate(got) if t is not None)
    ]


def test_simultaneous_events_keep_insertion_order():
    net = SimNetwork(0, base_latency_ms=5, jitter_ms=0)
    order = []
    net.register(B, lambda p: order.append(p.payload["round"]))
    for i in range(5):
        net.send(Packet(PacketKind.HEARTBEAT_PING, A, B, {"round": i}))
    net.schedule(5, lambda: order.append("timer"))
    net.run()
    assert order == [0, 1, 2, 3, 4, "timer"]


def test_link_latency_override_and_run_until():
    net = SimNetwork(0, base_latency_ms=5, jitter_ms=0, link_latency={(A, B): 100})
    net.register(B)
    net.register(A)
    assert net.send(Packet(PacketKind.HEARTBEAT_PING, A, B, {"round": 0})) == 100
    assert net.send(Packet(PacketKind.HEARTBEAT_PING, B, A, {"round": 0})) == 5
    net.run(until=50)
    assert net.clock == 50 and len(net.inboxes[A]) == 1 and not net.inboxes[B]
    net.run()
    assert len(net.inboxes[B]) == 1 and net.trace[-1]["t"] == 100


def test_bad_network_parameters():
    with pytest.raises(ValueError):
        SimNetwork(loss_rate=1.5)
    with pytest.raises(ValueError):
        SimNetwork(base_latency_ms=-1)
