"""Master-node side of Proof-of-Inference: routing, evaluation, audits, voting, commit.

A :class:`MasterNode` is a deterministic state machine. In the simulator it
is driven by packets arriving through its :class:`~poichain.network.Hub`;
the same methods can be called directly, which is what
:func:`propose_and_vote` does for synchronous use.
"""

from __future__ import annotations

import base64
import dataclasses
import logging
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Iterable, Sequence

from .block import Block, BlockBody, BlockHeader, build_block, lane_root, make_genesis, sign_header, validate_block
from .crypto import TAG_VOTE, KeyPair, canonical_bytes, from_hex, sha256, sign, to_hex, verify
from .harness import HarnessState, Submission, Tier
from .inference import InferenceResult, InferenceTask, validate_task, verify_proof
from .mempool import Mempool
from .network import Hub, HubVerdict, Packet, PacketKind, SimNetwork
from .records import DataRecord, ErrorKind, ModelRecord, ProofRecord, ValidationError, admit, record_from_json

logger = logging.getLogger(__name__)


def quorum_for(masters: int) -> int:
    return masters // 2 + 1


@dataclass(frozen=True)
class ConsensusParams:
    verify_interval_rounds: int = 1
    audit_fraction: Fraction = Fraction(1, 5)
    quorum: int | None = None  # None means floor(M/2) + 1
    max_per_lane: int = 256
    rng_seed: int = 0
    task_timeout_ms: int = 200
    score_tolerance: int = 0
    commit_wait_rounds: int = 3
    max_reassignments: int = 3

    def __post_init__(self):
        fraction = Fraction(self.audit_fraction) if not isinstance(self.audit_fraction, float) else Fraction(str(self.audit_fraction))
        object.__setattr__(self, "audit_fraction", fraction)
        if not 0 < fraction <= 1:
            raise ValueError("audit_fraction must lie in (0, 1]")
        if self.verify_interval_rounds < 1:
            raise ValueError("verify_interval_rounds must be at least 1")

    def quorum_of(self, masters: int) -> int:
        q = quorum_for(masters) if self.quorum is None else self.quorum
        if not masters / 2 < q <= masters:
            raise ValueError(f"quorum {q} must exceed half of {masters} masters")
        return q


class Verdict(str, Enum):
    APPROVE = "Approve"
    REJECT = "Reject"


@dataclass(frozen=True)
class Vote:
    voter_id: bytes
    round: int
    proposed_block_hash: bytes
    audited_task_ids: tuple[bytes, ...]
    verdict: Verdict
    voter_public_key: bytes = b""
    signature: bytes = b""

    TAG = TAG_VOTE
    FIELDS = (
        ("voter_id", "hash"),
        ("round", "u64"),
        ("proposed_block_hash", "hash"),
        ("audited_task_ids", "hashes"),
        ("verdict_text", "str"),
    )

    @property
    def verdict_text(self) -> str:
        return Verdict(self.verdict).value

    @classmethod
    def cast(cls, keypair: KeyPair, round_no: int, block_hash: bytes, audited: Iterable[bytes], verdict: Verdict) -> "Vote":
        vote = cls(keypair.node_id, round_no, block_hash, tuple(audited), verdict, keypair.public_key)
        return dataclasses.replace(vote, signature=sign(keypair, canonical_bytes(vote)))

    def is_authentic(self) -> bool:
        try:
            return sha256(self.voter_public_key) == self.voter_id and verify(
                self.voter_public_key, canonical_bytes(self), self.signature
            )
        except Exception:
            return False

    def to_json(self) -> dict[str, Any]:
        return {
            "voter_id": to_hex(self.voter_id),
            "round": self.round,
            "proposed_block_hash": to_hex(self.proposed_block_hash),
            "audited_task_ids": [to_hex(t) for t in self.audited_task_ids],
            "verdict": self.verdict_text,
            "voter_public_key": to_hex(self.voter_public_key),
            "signature": to_hex(self.signature),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Vote":
        return cls(
            from_hex(obj["voter_id"]),
            obj["round"],
            from_hex(obj["proposed_block_hash"]),
            tuple(from_hex(t) for t in obj["audited_task_ids"]),
            Verdict(obj["verdict"]),
            from_hex(obj["voter_public_key"]),
            from_hex(obj["signature"]),
        )


def count_approvals(votes: Iterable[Vote], block_hash: bytes, round_no: int, masters: Iterable[bytes]) -> int:
    """Distinct authentic Approve votes for ``block_hash`` from known masters."""
    members = set(masters)
    approvers = set()
    for vote in votes:
        if (
            vote.verdict is Verdict.APPROVE
            and vote.round == round_no
            and vote.proposed_block_hash == block_hash
            and vote.voter_id in members
            and vote.is_authentic()
        ):
            approvers.add(vote.voter_id)
    return len(approvers)


def audit_sample(proof_ids: Iterable[bytes], fraction: Fraction, seed: int, round_no: int) -> list[bytes]:
    """Seeded uniform sample without replacement, identical on every master for (seed, round)."""
    ids = sorted(set(proof_ids))
    if not ids:
        return []
    k = min(len(ids), max(1, math.ceil(fraction * len(ids))))
    derived = sha256(str(seed).encode() + b"|" + str(round_no).encode())
    rng = random.Random(int.from_bytes(derived[:8], "big"))
    return sorted(rng.sample(ids, k))


class NoAvailableExecutor(Exception):
    pass


class UnknownTask(Exception):
    pass


class WrongExecutor(Exception):
    pass


class MasterBehavior(str, Enum):
    HONEST = "honest"
    REJECT_VOTES = "reject_votes"  # votes Reject on everything, never proposes
    COLLUDE = "collude"  # accepts and approves everything without checking
    SILENT = "silent"  # neither proposes nor votes


@dataclass
class PendingTask:
    task: InferenceTask
    executor_id: bytes
    tier_at_assignment: Tier
    request_id: str
    requester: bytes | None
    requested_at: int
    attempts: int = 1
    tried: set = field(default_factory=set)


@dataclass(frozen=True)
class RejectedResult:
    task_id: bytes
    executor_id: bytes
    reason: str
    submitted: int | None = None
    recomputed: int | None = None


@dataclass
class AuditEntry:
    proof_id: bytes
    task_id: bytes
    ok: bool
    reason: str = ""


@dataclass
class AuditReport:
    round: int
    sampled: list[bytes] = field(default_factory=list)
    entries: list[AuditEntry] = field(default_factory=list)

    @property
    def mismatches(self) -> list[AuditEntry]:
        return [e for e in self.entries if not e.ok]


@dataclass
class RoundLog:
    round: int
    leader: bytes
    proposed_block: bytes | None = None
    votes: list[Vote] = field(default_factory=list)
    committed: bool = False
    audit_mismatches: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "leader": to_hex(self.leader),
            "proposed_block": to_hex(self.proposed_block) if self.proposed_block else None,
            "votes": [{"voter": to_hex(v.voter_id), "verdict": v.verdict_text} for v in self.votes],
            "committed": self.committed,
            "audit_mismatches": self.audit_mismatches,
        }


def leader_for(round_no: int, masters: Sequence[bytes]) -> bytes:
    ordered = sorted(masters)
    return ordered[round_no % len(ordered)]


def request_payload(
    request_id: str,
    dataset_hash: bytes,
    model_hash: bytes,
    model_version: str,
    input_payload: bytes,
    decoding_params: Iterable[tuple[str, str]] = (),
) -> dict[str, Any]:
    return {
        "request_id": request_id,
        "dataset_hash": to_hex(dataset_hash),
        "model_hash": to_hex(model_hash),
        "model_version": model_version,
        "input_payload": base64.b64encode(input_payload).decode(),
        "decoding_params": [[k, v] for k, v in decoding_params],
    }


Observer = Callable[..., None]


class MasterNode:
    """One master: routes tasks, evaluates results, audits, proposes and votes.

    ``masters`` is the full fixed master set (ids, including this node). The
    trust table in ``harness`` is read for executor selection and fed with
    every evaluated submission.
    """

    def __init__(
        self,
        keypair: KeyPair,
        masters: Sequence[bytes],
        harness: HarnessState,
        params: ConsensusParams | None = None,
        *,
        net: SimNetwork | None = None,
        behavior: MasterBehavior = MasterBehavior.HONEST,
        genesis: Block | None = None,
        observer: Observer | None = None,
    ):
        self.keypair = keypair
        self.node_id = keypair.node_id
        self.masters = sorted(masters)
        self.params = params or ConsensusParams()
        self.quorum = self.params.quorum_of(len(self.masters))
        self.harness = harness
        self.net = net
        self.behavior = MasterBehavior(behavior)
        self.chain: list[Block] = [genesis or make_genesis()]
        self.mempool = Mempool()
        self.hub = Hub(
            self.mempool,
            {
                PacketKind.AGENT_REQUEST: self._on_agent_request,
                PacketKind.TASK_RESULT: self._on_task_result,
                PacketKind.VOTE_REQUEST: self._on_vote_request,
                PacketKind.VOTE_RESPONSE: self._on_vote_response,
                PacketKind.BLOCK_ANNOUNCE: self._on_block_announce,
                PacketKind.HEARTBEAT_PONG: self._on_pong,
            },
        )
        self.tasks = self.hub.tasks  # off-chain task store, shared with the hub
        self.hub.on_record = self._on_gossiped_record
        self.pending: dict[bytes, PendingTask] = {}
        self.awaiting_commit: dict[bytes, tuple[PendingTask, ProofRecord, int]] = {}
        self.round = 0
        self.observe = observer or (lambda *a, **k: None)
        self.logs: dict[int, RoundLog] = {}
        self._cursor = {Tier.TRUSTED: 0, Tier.NON_TRUSTED: 0}
        self._proposal: tuple[Block, list[Vote]] | None = None
        self._ping: tuple[int, int] | None = None  # (round, sent at)

    # -- helpers -----------------------------------------------------------

    @property
    def tip(self) -> Block:
        return self.chain[-1]

    @property
    def honest(self) -> bool:
        return self.behavior is MasterBehavior.HONEST

    def now(self) -> int:
        return self.net.clock if self.net is not None else 0

    def _send(self, kind: PacketKind, recipient: bytes, payload: dict[str, Any]) -> None:
        if self.net is not None:
            self.net.send(Packet(kind, self.node_id, recipient, payload, self.net.clock))

    def _broadcast(self, kind: PacketKind, payload: dict[str, Any]) -> None:
        for peer in self.masters:
            if peer != self.node_id:
                self._send(kind, peer, payload)

    def handle(self, packet: Packet) -> HubVerdict:
        verdict = self.hub.ingest(packet)
        if (
            not verdict.routed
            and packet.kind is PacketKind.NEW_PROOF_RECORD
            and verdict.reason.startswith("ValidationError")
            and "Duplicate" not in verdict.reason
            and isinstance(packet.payload.get("record"), dict)
        ):
            self.observe("detect", master=self.node_id, proof=packet.payload["record"].get("proof_id"), where="hub")
        return verdict

    # -- routing -----------------------------------------------------------

    def _busy(self) -> set[bytes]:
        return {p.executor_id for p in self.pending.values()}

    def choose_executor(self, exclude: Iterable[bytes] = ()) -> bytes:
        """Trusted nodes first, round-robin, preferring ones with no task in flight here."""
        excluded = set(exclude)
        busy = self._busy()
        groups = []
        for tier in (Tier.TRUSTED, Tier.NON_TRUSTED):
            members = [n for n in self.harness.nodes_in(tier) if n not in excluded]
            if members:
                start = self._cursor[tier] % len(members)
                groups.append((tier, members[start:] + members[:start], members))
        if not groups:
            raise NoAvailableExecutor("no eligible secondary node")
        for tier, rotated, members in groups:
            for node in rotated:
                if node not in busy:
                    self._cursor[tier] = members.index(node) + 1
                    return node
        tier, rotated, members = groups[0]
        self._cursor[tier] = members.index(rotated[0]) + 1
        return rotated[0]

    def route_task(
        self,
        request: dict[str, Any],
        now: int | None = None,
        requester: bytes | None = None,
    ) -> Packet:
        """Turn an agent request into a task and a TASK_ASSIGN for the chosen executor."""
        now = self.now() if now is None else now
        task = InferenceTask.create(
            from_hex(request["dataset_hash"]),
            from_hex(request["model_hash"]),
            request["model_version"],
            base64.b64decode(request["input_payload"], validate=True),
            [tuple(p) for p in request["decoding_params"]],
            deadline=now + self.params.task_timeout_ms,
        )
        problem = validate_task(task)
        if problem is not None:
            raise ValueError(problem)
        executor = self.choose_executor()
        entry = PendingTask(task, executor, self.harness.tier(executor), request["request_id"], requester, now)
        entry.tried.add(executor)
        return self._assign(entry)

    def _assign(self, entry: PendingTask) -> Packet:
        self.pending[entry.task.task_id] = entry
        self.tasks[entry.task.task_id] = entry.task
        if self.net is not None:
            self.net.schedule_at(entry.task.deadline + 1, self._expire_and_send, "expire")
        self.observe("assign", master=self.node_id, task=entry.task.task_id, executor=entry.executor_id,
                     tier=entry.tier_at_assignment, request=entry.request_id)
        return Packet(PacketKind.TASK_ASSIGN, self.node_id, entry.executor_id, {"task": entry.task.to_json()}, self.now())

    def reassign(self, entry: PendingTask, now: int | None = None, reason: str = "") -> Packet | None:
        """Give ``entry``'s work to another executor under a fresh deadline.

        Returns the TASK_ASSIGN packet, or None after sending TaskFailed when
        no executor is left or the attempt budget is spent.
        """
        now = self.now() if now is None else now
        self.pending.pop(entry.task.task_id, None)
        if entry.attempts > self.params.max_reassignments:
            self._respond_failed(entry, f"TaskFailed: {reason}")
            return None
        try:
            executor = self.choose_executor(exclude=entry.tried)
        except NoAvailableExecutor:
            self._respond_failed(entry, f"TaskFailed: {reason}")
            return None
        task = entry.task.with_deadline(now + self.params.task_timeout_ms)
        fresh = dataclasses.replace(
            entry, task=task, executor_id=executor, tier_at_assignment=self.harness.tier(executor),
            attempts=entry.attempts + 1, tried=entry.tried | {executor},
        )
        return self._assign(fresh)

    def reassign_from(self, node_id: bytes, reason: str) -> list[Packet]:
        out = []
        for entry in [p for p in self.pending.values() if p.executor_id == node_id]:
            packet = self.reassign(entry, reason=reason)
            if packet is not None:
                out.append(packet)
        return out

    def expire_tasks(self, now: int | None = None) -> list[Packet]:
        """Timeout evidence and reassignment for every pending task past its deadline."""
        now = self.now() if now is None else now
        out = []
        for entry in sorted(self.pending.values(), key=lambda p: p.task.task_id):
            if entry.task.deadline < now:
                self.harness.report_timeout(entry.executor_id)
                self.observe("timeout", master=self.node_id, task=entry.task.task_id, executor=entry.executor_id)
                packet = self.reassign(entry, now, "timeout")
                if packet is not None:
                    out.append(packet)
        return out

    def _expire_and_send(self) -> None:
        for packet in self.expire_tasks():
            self.net.send(packet)

    def _on_gossiped_record(self, record: Any, packet: Packet) -> None:
        """Honest masters recheck a gossiped proof on arrival and drop it if it does not recompute."""
        if not self.honest or not isinstance(record, ProofRecord) or record.task_id not in self.tasks:
            return
        ok, _ = self._check_proof(record)
        if not ok:
            self.mempool.remove([record])
            self.observe("detect", master=self.node_id, proof=record.proof_id, where="gossip")

    # -- heartbeats --------------------------------------------------------

    def send_pings(self, round_no: int, targets: Iterable[bytes]) -> None:
        self._ping = (round_no, self.now())
        for node in targets:
            self._send(PacketKind.HEARTBEAT_PING, node, {"round": round_no})

    def _on_pong(self, packet: Packet) -> str:
        if self._ping is None or packet.payload["round"] != self._ping[0]:
            return "stale"
        if self.now() - self._ping[1] > self.harness.params.heartbeat_timeout_ms:
            return "late"
        self.harness.heard_from(packet.sender_id)
        return "alive"

    # -- evaluation --------------------------------------------------------

    def evaluate_result(self, packet: Packet, now: int | None = None) -> ProofRecord | RejectedResult:
        """Check a TASK_RESULT by recomputation; on success queue the proof and derived records."""
        now = self.now() if now is None else now
        result = InferenceResult.from_json(packet.payload["result"])
        proof = record_from_json("PROOF", packet.payload["proof"])
        entry = self.pending.get(result.task_id)
        if entry is None:
            raise UnknownTask(to_hex(result.task_id))
        if packet.sender_id != entry.executor_id:
            raise WrongExecutor(to_hex(packet.sender_id))
        del self.pending[result.task_id]
        task = entry.task

        if now > task.deadline:
            self.harness.report_timeout(entry.executor_id)
            return RejectedResult(task.task_id, entry.executor_id, "Timeout")

        if self.behavior is MasterBehavior.COLLUDE:
            self._queue_proof(proof, task, now, admitted=True)
            return proof

        self.harness.submit(Submission(entry.executor_id, proof, task))
        err = admit(proof)
        if err is not None:
            return RejectedResult(task.task_id, entry.executor_id, err.kind.value, proof.validation_score)
        if proof.sender_id != entry.executor_id:
            return RejectedResult(task.task_id, entry.executor_id, "ExecutorMismatch", proof.validation_score)
        verdict = verify_proof(proof, task, self.params.score_tolerance)
        if not verdict.ok:
            return RejectedResult(task.task_id, entry.executor_id, verdict.problem.value, verdict.submitted, verdict.recomputed)
        if result.validation_score != proof.validation_score or result.task_id != proof.task_id:
            return RejectedResult(task.task_id, entry.executor_id, "ResultProofMismatch", result.validation_score)
        self._queue_proof(proof, task, now)
        return proof

    def derived_records(self, task: InferenceTask, now: int) -> tuple[DataRecord, ModelRecord]:
        link = f"task:{to_hex(task.task_id)}"
        data = DataRecord.create(task.dataset_hash, now, self.keypair, metadata=link)
        params = ";".join(f"{k}={v}" for k, v in task.decoding_params)
        model = ModelRecord.create(
            task.model_hash, task.model_version, f"model-{to_hex(task.model_hash)[:16]}", now, self.keypair,
            config_metadata=f"{link};{params}",
        )
        return data, model

    def _queue_proof(self, proof: ProofRecord, task: InferenceTask, now: int, admitted: bool = False) -> None:
        data, model = self.derived_records(task, now)
        self.mempool.insert(proof, admitted=admitted)
        for derived in (data, model):
            try:
                self.mempool.insert(derived, admitted=True)
            except ValidationError as exc:  # identical task already linked this instant
                if exc.kind is not ErrorKind.DUPLICATE:
                    raise
        self._broadcast(PacketKind.NEW_PROOF_RECORD, {"record": proof.to_json(), "task": task.to_json()})
        self._broadcast(PacketKind.NEW_DATA_RECORD, {"record": data.to_json()})
        self._broadcast(PacketKind.NEW_MODEL_RECORD, {"record": model.to_json()})

    # -- agent responses ---------------------------------------------------

    def serve_agent(self, entry: PendingTask, proof: ProofRecord, committed: bool) -> Packet | None:
        """AGENT_RESPONSE for an accepted proof, or None while a verified-path result awaits commit."""
        if entry.tier_at_assignment is Tier.TRUSTED:
            path = "optimistic"
        elif committed:
            path = "verified"
        else:
            return None
        payload = {
            "request_id": entry.request_id,
            "status": "ok",
            "task_id": to_hex(proof.task_id),
            "validation_score": proof.validation_score,
            "path": path,
        }
        return Packet(PacketKind.AGENT_RESPONSE, self.node_id, entry.requester or bytes(32), payload, self.now())

    def _deliver(self, packet: Packet | None) -> None:
        if packet is not None and self.net is not None and packet.recipient_id in self.net.inboxes:
            self.net.send(packet)
            self.observe("response", master=self.node_id, request=packet.payload["request_id"],
                         status=packet.payload["status"], path=packet.payload.get("path"))

    def _respond_failed(self, entry: PendingTask, reason: str) -> None:
        self.observe("task_failed", master=self.node_id, request=entry.request_id, reason=reason)
        if entry.requester is None:
            return
        payload = {"request_id": entry.request_id, "status": reason}
        self._deliver(Packet(PacketKind.AGENT_RESPONSE, self.node_id, entry.requester, payload, self.now()))

    def expire_waiting(self, round_no: int) -> None:
        for proof_id, (entry, proof, since) in sorted(self.awaiting_commit.items()):
            if round_no - since >= self.params.commit_wait_rounds:
                del self.awaiting_commit[proof_id]
                self._respond_failed(entry, "TaskFailed: not committed in time")

    # -- audits, proposals and votes --------------------------------------

    def run_verification_interval(self, round_no: int) -> AuditReport:
        report = AuditReport(round_no)
        if round_no % self.params.verify_interval_rounds:
            return report
        proofs = {p.proof_id: p for p in self.mempool.proofs()}
        report.sampled = audit_sample(proofs, self.params.audit_fraction, self.params.rng_seed, round_no)
        for proof_id in report.sampled:
            proof = proofs[proof_id]
            ok, reason = self._check_proof(proof)
            report.entries.append(AuditEntry(proof_id, proof.task_id, ok, reason))
            if not ok and self.honest:
                self.mempool.remove([proof])
                self.observe("detect", master=self.node_id, proof=proof_id, where="audit")
                task = self.tasks.get(proof.task_id)
                if task is not None:
                    self.harness.submit(Submission(proof.sender_id, proof, task))
        return report

    def _check_proof(self, proof: ProofRecord, extra_tasks: dict[bytes, InferenceTask] | None = None) -> tuple[bool, str]:
        err = admit(proof)
        if err is not None:
            return False, err.kind.value
        task = self.tasks.get(proof.task_id) or (extra_tasks or {}).get(proof.task_id)
        if task is None:
            return False, "UnknownTask"
        verdict = verify_proof(proof, task, self.params.score_tolerance)
        return verdict.ok, "" if verdict.ok else verdict.problem.value

    def propose(self, round_no: int, now: int | None = None) -> Block | None:
        """Leader step: block of pool records whose proofs recompute correctly, or None if nothing to commit."""
        now = self.now() if now is None else now
        if self.behavior in (MasterBehavior.REJECT_VOTES, MasterBehavior.SILENT):
            return None
        data, model, proofs = self.mempool.select_for_block(self.params.max_per_lane)
        if self.behavior is MasterBehavior.COLLUDE:
            return _unchecked_block(self.tip, [*data, *model, *proofs], self.keypair, now) if (data or model or proofs) else None
        good = []
        for proof in proofs:
            ok, _ = self._check_proof(proof)
            if ok:
                good.append(proof)
            else:
                self.mempool.remove([proof])
                self.observe("detect", master=self.node_id, proof=proof.proof_id, where="proposal")
        if not (data or model or good):
            return None
        return build_block(self.tip, [*data, *model, *good], self.keypair, now)

    def vote_on(self, block: Block, round_no: int, tasks: dict[bytes, InferenceTask] | None = None) -> Vote | None:
        audited = tuple(p.task_id for p in block.body.proof_lane if isinstance(p.task_id, bytes) and len(p.task_id) == 32)
        if self.behavior is MasterBehavior.SILENT:
            return None
        if self.behavior is MasterBehavior.REJECT_VOTES:
            return Vote.cast(self.keypair, round_no, block.block_hash, audited, Verdict.REJECT)
        if self.behavior is MasterBehavior.COLLUDE:
            return Vote.cast(self.keypair, round_no, block.block_hash, audited, Verdict.APPROVE)
        verdict = Verdict.APPROVE
        err = validate_block(block, self.tip)
        if err is not None:
            verdict = Verdict.REJECT
            self.observe("block_rejected", master=self.node_id, round=round_no, reason=err.kind.value)
        else:
            for proof in block.body.proof_lane:
                ok, reason = self._check_proof(proof, tasks)
                if not ok:
                    verdict = Verdict.REJECT
                    self.observe("detect", master=self.node_id, proof=proof.proof_id, where="vote")
        return Vote.cast(self.keypair, round_no, block.block_hash, audited, verdict)

    def accept_block(self, block: Block, votes: Sequence[Vote], round_no: int) -> bool:
        """Append a block carrying a quorum certificate; False if it does not qualify."""
        if self.honest:
            if count_approvals(votes, block.block_hash, round_no, self.masters) < self.quorum:
                return False
            if validate_block(block, self.tip) is not None:
                return False
        elif block.header.prev_hash != self.tip.block_hash:
            return False
        self.chain.append(block)
        self.mempool.commit(block)
        self._serve_committed(block)
        return True

    def _serve_committed(self, block: Block) -> None:
        for proof in block.body.proof_lane:
            waiting = self.awaiting_commit.pop(proof.record_id, None)
            if waiting is not None:
                self._deliver(self.serve_agent(waiting[0], proof, committed=True))

    # -- packet handlers ---------------------------------------------------

    def _on_agent_request(self, packet: Packet) -> str:
        try:
            assign = self.route_task(packet.payload, requester=packet.sender_id)
        except NoAvailableExecutor:
            payload = {"request_id": packet.payload["request_id"], "status": "TaskFailed: no executor"}
            self._deliver(Packet(PacketKind.AGENT_RESPONSE, self.node_id, packet.sender_id, payload, self.now()))
            return "no_executor"
        self.net.send(assign)
        return "assigned"

    def _on_task_result(self, packet: Packet) -> str:
        try:
            entry = self.pending.get(from_hex(packet.payload["result"]["task_id"]))
            outcome = self.evaluate_result(packet)
        except (UnknownTask, WrongExecutor) as exc:
            return f"{type(exc).__name__}"
        if isinstance(outcome, RejectedResult):
            self.observe("rejected", master=self.node_id, task=outcome.task_id, executor=outcome.executor_id,
                         reason=outcome.reason, proof=packet.payload["proof"].get("proof_id"))
            packet_out = self.reassign(entry, reason=outcome.reason)
            if packet_out is not None:
                self.net.send(packet_out)
            return f"rejected:{outcome.reason}"
        self.observe("accepted", master=self.node_id, task=outcome.task_id, executor=entry.executor_id, proof=outcome.proof_id)
        response = self.serve_agent(entry, outcome, committed=False)
        if response is not None:
            self._deliver(response)
        else:
            self.awaiting_commit[outcome.proof_id] = (entry, outcome, self.round)
        return "accepted"

    def start_round(self, round_no: int) -> None:
        self.round = round_no
        self.expire_waiting(round_no)

    def open_proposal(self, round_no: int) -> RoundLog | None:
        """Leader: audit, propose, self-vote and request peer votes. Returns the round log."""
        audit = self.run_verification_interval(round_no)
        log = RoundLog(round_no, self.node_id, audit_mismatches=len(audit.mismatches))
        self.logs[round_no] = log
        if audit.sampled == [] and round_no % self.params.verify_interval_rounds:
            return log
        block = self.propose(round_no)
        if block is None:
            return log
        log.proposed_block = block.block_hash
        own = self.vote_on(block, round_no)
        votes = [own] if own is not None else []
        log.votes = list(votes)
        self._proposal = (block, votes)
        tasks = [self.tasks[p.task_id].to_json() for p in block.body.proof_lane if p.task_id in self.tasks]
        self._broadcast(PacketKind.VOTE_REQUEST, {"round": round_no, "block": block.to_json(), "tasks": tasks})
        self._try_commit(round_no)
        return log

    def _try_commit(self, round_no: int) -> None:
        if self._proposal is None:
            return
        block, votes = self._proposal
        if count_approvals(votes, block.block_hash, round_no, self.masters) < self.quorum:
            return
        self._proposal = None
        self.chain.append(block)
        self.mempool.commit(block)
        self.logs[round_no].committed = True
        self._broadcast(PacketKind.BLOCK_ANNOUNCE, {"block": block.to_json(), "votes": [v.to_json() for v in votes]})
        self.observe("commit", master=self.node_id, round=round_no, block=block.block_hash, height=block.height)
        self._serve_committed(block)

    def close_proposal(self, round_no: int) -> None:
        """Vote window over: an uncommitted proposal is abandoned and its records stay pooled."""
        if self._proposal is not None:
            self._proposal = None
            self.observe("no_quorum", master=self.node_id, round=round_no)

    def _on_vote_request(self, packet: Packet) -> str:
        round_no = packet.payload["round"]
        block = Block.from_json(packet.payload["block"])
        if block.header.proposer_id != leader_for(round_no, self.masters) or packet.sender_id != block.header.proposer_id:
            return "not_leader"
        tasks = {}
        for obj in packet.payload.get("tasks", []):
            task = InferenceTask.from_json(obj)
            if validate_task(task) is None:
                tasks[task.task_id] = task
        vote = self.vote_on(block, round_no, tasks)
        if vote is None:
            return "silent"
        self._send(PacketKind.VOTE_RESPONSE, packet.sender_id, {"vote": vote.to_json()})
        return vote.verdict_text

    def _on_vote_response(self, packet: Packet) -> str:
        vote = Vote.from_json(packet.payload["vote"])
        if vote.voter_id != packet.sender_id:
            return "spoofed"
        log = self.logs.get(vote.round)
        if log is None or log.proposed_block != vote.proposed_block_hash:
            return "stale"
        log.votes.append(vote)
        if self._proposal is not None and self._proposal[0].block_hash == vote.proposed_block_hash:
            self._proposal[1].append(vote)
            self._try_commit(vote.round)
        return vote.verdict_text

    def _on_block_announce(self, packet: Packet) -> str:
        block = Block.from_json(packet.payload["block"])
        votes = [Vote.from_json(v) for v in packet.payload["votes"]]
        round_no = votes[0].round if votes else -1
        return "appended" if self.accept_block(block, votes, round_no) else "refused"


def _unchecked_block(prev: Block, records: list, proposer: KeyPair, timestamp: int) -> Block:
    """Block assembly that skips admission; only a dishonest proposer uses this."""
    lanes = {DataRecord: [], ModelRecord: [], ProofRecord: []}
    for r in records:
        lanes[type(r)].append(r)
    body = BlockBody(*(tuple(lanes[t]) for t in (DataRecord, ModelRecord, ProofRecord)))
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


def propose_and_vote(leader: MasterNode, masters: Sequence[MasterNode], round_no: int, now: int = 0) -> tuple[Block | None, list[Vote]]:
    """Synchronous round: leader proposes, every master votes, all append on quorum.

    Returns ``(committed_block, votes)``; the block is None on NoQuorum or an
    empty proposal.
    """
    leader.run_verification_interval(round_no)
    block = leader.propose(round_no, now)
    if block is None:
        return None, []
    tasks = {p.task_id: leader.tasks[p.task_id] for p in block.body.proof_lane if p.task_id in leader.tasks}
    votes = [v for m in masters if (v := m.vote_on(block, round_no, tasks)) is not None]
    if count_approvals(votes, block.block_hash, round_no, leader.masters) < leader.quorum:
        return None, votes
    for m in masters:
        if m is leader:
            leader.chain.append(block)
            leader.mempool.commit(block)
            leader._serve_committed(block)
        else:
            m.accept_block(block, votes, round_no)
    return block, votes
