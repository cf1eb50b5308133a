"""Typed packets, the information hub, and a seeded discrete-event network.

The network delivers packets between registered nodes after
``base_latency + jitter`` simulated milliseconds, dropping each with
probability ``loss_rate``. All randomness comes from one ``random.Random``
seeded at construction, and simultaneous events are delivered in insertion
order, so a (scenario, seed) pair always yields the same trace.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .crypto import from_hex, to_hex
from .inference import InferenceTask, validate_task
from .mempool import Mempool, PoolFull
from .records import DecodeError, ValidationError, admit, record_from_json

logger = logging.getLogger(__name__)


class PacketKind(str, Enum):
    NEW_DATA_RECORD = "NEW_DATA_RECORD"
    NEW_MODEL_RECORD = "NEW_MODEL_RECORD"
    NEW_PROOF_RECORD = "NEW_PROOF_RECORD"
    TASK_ASSIGN = "TASK_ASSIGN"
    TASK_RESULT = "TASK_RESULT"
    HEARTBEAT_PING = "HEARTBEAT_PING"
    HEARTBEAT_PONG = "HEARTBEAT_PONG"
    VOTE_REQUEST = "VOTE_REQUEST"
    VOTE_RESPONSE = "VOTE_RESPONSE"
    BLOCK_ANNOUNCE = "BLOCK_ANNOUNCE"
    AGENT_REQUEST = "AGENT_REQUEST"
    AGENT_RESPONSE = "AGENT_RESPONSE"


RECORD_PACKETS = {
    PacketKind.NEW_DATA_RECORD: "DATA",
    PacketKind.NEW_MODEL_RECORD: "MODEL",
    PacketKind.NEW_PROOF_RECORD: "PROOF",
}

# (required keys, optional keys) of each payload.
PAYLOAD_KEYS: dict[PacketKind, tuple[frozenset, frozenset]] = {
    PacketKind.NEW_DATA_RECORD: (frozenset({"record"}), frozenset()),
    PacketKind.NEW_MODEL_RECORD: (frozenset({"record"}), frozenset()),
    PacketKind.NEW_PROOF_RECORD: (frozenset({"record"}), frozenset({"task"})),
    PacketKind.TASK_ASSIGN: (frozenset({"task"}), frozenset()),
    PacketKind.TASK_RESULT: (frozenset({"result", "proof"}), frozenset()),
    PacketKind.HEARTBEAT_PING: (frozenset({"round"}), frozenset()),
    PacketKind.HEARTBEAT_PONG: (frozenset({"round"}), frozenset()),
    PacketKind.VOTE_REQUEST: (frozenset({"round", "block"}), frozenset({"tasks"})),
    PacketKind.VOTE_RESPONSE: (frozenset({"vote"}), frozenset()),
    PacketKind.BLOCK_ANNOUNCE: (frozenset({"block", "votes"}), frozenset()),
    PacketKind.AGENT_REQUEST: (
        frozenset({"request_id", "dataset_hash", "model_hash", "model_version", "input_payload", "decoding_params"}),
        frozenset(),
    ),
    PacketKind.AGENT_RESPONSE: (frozenset({"request_id", "status"}), frozenset({"task_id", "output_hash", "validation_score", "path"})),
}


class MalformedPacket(ValueError):
    pass


class UnknownRecipient(KeyError):
    pass


@dataclass(frozen=True)
class Packet:
    kind: PacketKind
    sender_id: bytes
    recipient_id: bytes
    payload: dict[str, Any]
    sent_at: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "from": to_hex(self.sender_id),
            "to": to_hex(self.recipient_id),
            "sent_at": self.sent_at,
            "payload": self.payload,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Packet":
        try:
            return cls(
                PacketKind(obj["kind"]), from_hex(obj["from"]), from_hex(obj["to"]), obj["payload"], obj.get("sent_at", 0)
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedPacket(str(exc)) from exc


def check_payload(kind: PacketKind, payload: Any) -> None:
    """Raise MalformedPacket unless ``payload`` has exactly the key set of ``kind``."""
    if not isinstance(payload, dict):
        raise MalformedPacket(f"{kind.value}: payload must be an object")
    required, optional = PAYLOAD_KEYS[kind]
    keys = set(payload)
    if not required <= keys:
        raise MalformedPacket(f"{kind.value}: missing {sorted(required - keys)}")
    if not keys <= required | optional:
        raise MalformedPacket(f"{kind.value}: unexpected {sorted(keys - required - optional)}")


@dataclass(frozen=True)
class HubVerdict:
    routed: bool
    reason: str = ""

    def __str__(self) -> str:
        return "routed" if self.routed else f"rejected:{self.reason}"


Handler = Callable[[Packet], Any]


class Hub:
    """Entry point for a node's incoming packets.

    Record packets are decoded, admitted and inserted into the mempool; every
    other kind is checked against its payload schema and passed to the
    handler registered for it.
    """

    def __init__(self, mempool: Mempool, handlers: dict[PacketKind, Handler] | None = None):
        self.mempool = mempool
        self.handlers: dict[PacketKind, Handler] = dict(handlers or {})
        self.tasks: dict[bytes, InferenceTask] = {}
        self.on_record: Callable[[Any, Packet], None] | None = None

    def ingest(self, packet: Packet) -> HubVerdict:
        try:
            kind = PacketKind(packet.kind)
            check_payload(kind, packet.payload)
        except (MalformedPacket, ValueError) as exc:
            return HubVerdict(False, f"MalformedPacket: {exc}")
        if kind in RECORD_PACKETS:
            return self._ingest_record(kind, packet)
        handler = self.handlers.get(kind)
        if handler is None:
            return HubVerdict(False, f"NoHandler: {kind.value}")
        try:
            outcome = handler(packet)
        except (MalformedPacket, DecodeError, KeyError, TypeError, ValueError) as exc:
            return HubVerdict(False, f"MalformedPacket: {exc}")
        if isinstance(outcome, HubVerdict):
            return outcome
        return HubVerdict(True, "" if outcome is None else str(outcome))

    def _ingest_record(self, kind: PacketKind, packet: Packet) -> HubVerdict:
        try:
            record = record_from_json(RECORD_PACKETS[kind], packet.payload["record"])
            task = InferenceTask.from_json(packet.payload["task"]) if "task" in packet.payload else None
        except (DecodeError, KeyError, TypeError, ValueError) as exc:
            return HubVerdict(False, f"MalformedPacket: {exc}")
        err = admit(record)
        if err is not None:
            return HubVerdict(False, f"ValidationError: {err}")
        try:
            self.mempool.insert(record, admitted=True)
        except ValidationError as exc:
            return HubVerdict(False, f"ValidationError: {exc}")
        except PoolFull as exc:
            return HubVerdict(False, f"PoolFull: {exc}")
        if task is not None and task.task_id == record.task_id and validate_task(task) is None:
            self.tasks[task.task_id] = task
        if self.on_record is not None:
            self.on_record(record, packet)
        return HubVerdict(True)


@dataclass(order=True)
class _Event:
    t: int
    seq: int
    packet: Packet | None = field(compare=False, default=None)
    callback: Callable[[], None] | None = field(compare=False, default=None)
    label: str = field(compare=False, default="")


@dataclass
class Delivery:
    packet: Packet
    t: int
    verdict: str = ""


class SimNetwork:
    """Single-threaded discrete-event network keyed by node id.

    A delivered packet goes to the recipient's handler if one is registered,
    otherwise it is appended to the recipient's inbox.
    """

    def __init__(
        self,
        seed: int = 0,
        base_latency_ms: int = 5,
        jitter_ms: int = 5,
        loss_rate: float = 0.0,
        link_latency: dict[tuple[bytes, bytes], int] | None = None,
    ):
        if not 0.0 <= loss_rate <= 1.0:
            raise ValueError("loss_rate must be within [0, 1]")
        if base_latency_ms < 0 or jitter_ms < 0:
            raise ValueError("latencies must be non-negative")
        self.rng = random.Random(seed)
        self.base_latency_ms = base_latency_ms
        self.jitter_ms = jitter_ms
        self.loss_rate = loss_rate
        self.link_latency = dict(link_latency or {})
        self.clock = 0
        self.inboxes: dict[bytes, list[Packet]] = {}
        self.handlers: dict[bytes, Handler | None] = {}
        self.trace: list[dict[str, Any]] = []
        self.stats = {"sent": 0, "delivered": 0, "dropped": 0}
        self._queue: list[_Event] = []
        self._seq = itertools.count()

    def register(self, node_id: bytes, handler: Handler | None = None) -> None:
        self.inboxes[node_id] = []
        self.handlers[node_id] = handler

    def send(self, packet: Packet, delay_ms: int = 0) -> int | None:
        """Schedule delivery; returns the delivery time, or None if the packet was lost."""
        if packet.recipient_id not in self.inboxes:
            raise UnknownRecipient(to_hex(packet.recipient_id))
        self.stats["sent"] += 1
        lost = self.rng.random() < self.loss_rate
        jitter = self.rng.randint(0, self.jitter_ms) if self.jitter_ms else 0
        if lost:
            self.stats["dropped"] += 1
            return None
        base = self.link_latency.get((packet.sender_id, packet.recipient_id), self.base_latency_ms)
        t = self.clock + delay_ms + base + jitter
        if packet.sent_at != self.clock + delay_ms:
            packet = Packet(packet.kind, packet.sender_id, packet.recipient_id, packet.payload, self.clock + delay_ms)
        heapq.heappush(self._queue, _Event(t, next(self._seq), packet=packet))
        return t

    def schedule(self, delay_ms: int, callback: Callable[[], None], label: str = "") -> int:
        t = self.clock + delay_ms
        heapq.heappush(self._queue, _Event(t, next(self._seq), callback=callback, label=label))
        return t

    def schedule_at(self, t: int, callback: Callable[[], None], label: str = "") -> int:
        return self.schedule(max(0, t - self.clock), callback, label)

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> Delivery | str | None:
        """Advance to the earliest event and process it; None when idle."""
        if not self._queue:
            return None
        event = heapq.heappop(self._queue)
        self.clock = event.t
        if event.callback is not None:
            event.callback()
            return event.label or "timer"
        packet = event.packet
        self.stats["delivered"] += 1
        handler = self.handlers.get(packet.recipient_id)
        if handler is None:
            self.inboxes[packet.recipient_id].append(packet)
            verdict = "queued"
        else:
            outcome = handler(packet)
            verdict = "handled" if outcome is None else str(outcome)
        self.trace.append(
            {
                "t": event.t,
                "kind": packet.kind.value,
                "from": to_hex(packet.sender_id),
                "to": to_hex(packet.recipient_id),
                "verdict": verdict,
            }
        )
        return Delivery(packet, event.t, verdict)

    def run(self, until: int | None = None) -> int:
        """Process events up to and including time ``until`` (or until idle)."""
        n = 0
        while self._queue and (until is None or self._queue[0].t <= until):
            self.step()
            n += 1
        if until is not None and until > self.clock:
            self.clock = until
        return n
