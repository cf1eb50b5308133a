"""Secondary-node trust tiers and the per-round harness.

Each round ends with three phases run strictly in order: heartbeat (who is
alive), anomaly detection (re-execute every submitted proof), and trust
update (move nodes between tiers on consecutive-round counters).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping

from .crypto import from_hex, to_hex
from .inference import InferenceTask, ProofCheck, verify_proof
from .records import ProofRecord, admit


class Tier(str, Enum):
    TRUSTED = "trusted"
    NON_TRUSTED = "non_trusted"
    EXCLUDED = "excluded"


class Evidence(str, Enum):
    PROOF_OK = "ProofOk"
    PROOF_ANOMALY = "ProofAnomaly"
    TIMEOUT = "Timeout"
    HEARTBEAT_MISS = "HeartbeatMiss"


FAILURES = frozenset({Evidence.PROOF_ANOMALY, Evidence.TIMEOUT, Evidence.HEARTBEAT_MISS})


@dataclass
class NodeProfile:
    node_id: bytes
    tier: Tier = Tier.NON_TRUSTED
    consecutive_failures: int = 0
    consecutive_successes: int = 0
    last_heartbeat: int = 0


@dataclass(frozen=True)
class HarnessParams:
    tau_d: int = 2
    tau_p: int = 5
    heartbeat_timeout_ms: int = 500
    anomaly_tolerance: int = 0

    def __post_init__(self):
        if self.tau_d < 1 or self.tau_p < 1:
            raise ValueError("tau_d and tau_p must be at least 1")
        if self.heartbeat_timeout_ms < 0 or self.anomaly_tolerance < 0:
            raise ValueError("timeouts and tolerances must be non-negative")


# node_id -> events observed this round
RoundEvidence = dict


def new_evidence() -> RoundEvidence:
    return defaultdict(list)


@dataclass(frozen=True)
class Submission:
    """A proof as handed in by ``submitter`` for ``task``."""

    submitter: bytes
    proof: ProofRecord
    task: InferenceTask


@dataclass(frozen=True)
class Anomaly:
    node: bytes
    task: bytes
    submitted: int | None
    recomputed: int | None
    reason: str = ProofCheck.SCORE_MISMATCH.value

    def to_json(self) -> dict[str, Any]:
        return {
            "node": to_hex(self.node),
            "task": to_hex(self.task),
            "submitted": self.submitted,
            "recomputed": self.recomputed,
            "reason": self.reason,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Anomaly":
        return cls(from_hex(obj["node"]), from_hex(obj["task"]), obj["submitted"], obj["recomputed"], obj["reason"])


@dataclass(frozen=True)
class Transition:
    node: bytes
    from_tier: Tier
    to_tier: Tier

    def to_json(self) -> dict[str, Any]:
        return {"node": to_hex(self.node), "from": self.from_tier.value, "to": self.to_tier.value}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Transition":
        return cls(from_hex(obj["node"]), Tier(obj["from"]), Tier(obj["to"]))


def heartbeat_phase(
    profiles: Mapping[bytes, NodeProfile], responders: Iterable[bytes], now: int = 0
) -> tuple[RoundEvidence, list[bytes]]:
    """HeartbeatMiss for every non-excluded node absent from ``responders``.

    Returns the evidence and the missed node ids in sorted order; the caller
    reassigns their pending tasks.
    """
    alive = set(responders)
    evidence = new_evidence()
    missed = []
    for node_id in sorted(profiles):
        profile = profiles[node_id]
        if profile.tier is Tier.EXCLUDED:
            continue
        if node_id in alive:
            profile.last_heartbeat = now
        else:
            evidence[node_id].append(Evidence.HEARTBEAT_MISS)
            missed.append(node_id)
    return evidence, missed


def anomaly_phase(
    profiles: Mapping[bytes, NodeProfile], round_proofs: Iterable[Submission], tolerance: int = 0
) -> tuple[RoundEvidence, list[Anomaly]]:
    """Re-execute every submitted proof; ProofAnomaly if it fails admission or deviates beyond ``tolerance``."""
    evidence = new_evidence()
    anomalies = []
    for sub in round_proofs:
        if sub.submitter not in profiles:
            continue
        err = admit(sub.proof)
        if err is not None:
            anomalies.append(Anomaly(sub.submitter, sub.task.task_id, None, None, err.kind.value))
            evidence[sub.submitter].append(Evidence.PROOF_ANOMALY)
            continue
        verdict = verify_proof(sub.proof, sub.task, tolerance)
        if verdict.ok:
            evidence[sub.submitter].append(Evidence.PROOF_OK)
        else:
            anomalies.append(
                Anomaly(sub.submitter, sub.task.task_id, verdict.submitted, verdict.recomputed, verdict.problem.value)
            )
            evidence[sub.submitter].append(Evidence.PROOF_ANOMALY)
    return evidence, anomalies


def trust_update_phase(
    profiles: Mapping[bytes, NodeProfile], evidence: Mapping[bytes, list[Evidence]], params: HarnessParams
) -> list[Transition]:
    transitions = []
    for node_id in sorted(profiles):
        profile = profiles[node_id]
        if profile.tier is Tier.EXCLUDED:
            continue
        events = evidence.get(node_id, ())
        if any(e in FAILURES for e in events):
            profile.consecutive_failures += 1
            profile.consecutive_successes = 0
        elif Evidence.PROOF_OK in events:
            profile.consecutive_successes += 1
            profile.consecutive_failures = 0
        else:
            continue

        before = profile.tier
        if profile.consecutive_failures >= params.tau_d:
            profile.tier = Tier.NON_TRUSTED if before is Tier.TRUSTED else Tier.EXCLUDED
        elif profile.consecutive_successes >= params.tau_p and before is Tier.NON_TRUSTED:
            profile.tier = Tier.TRUSTED
        if profile.tier is not before:
            profile.consecutive_failures = profile.consecutive_successes = 0
            transitions.append(Transition(node_id, before, profile.tier))
    return transitions


def merge_evidence(*parts: Mapping[bytes, list[Evidence]]) -> RoundEvidence:
    merged = new_evidence()
    for part in parts:
        for node_id, events in part.items():
            merged[node_id].extend(events)
    return merged


@dataclass
class HarnessReport:
    round: int
    misses: list[bytes] = field(default_factory=list)
    anomalies: list[Anomaly] = field(default_factory=list)
    transitions: list[Transition] = field(default_factory=list)
    timeouts: list[bytes] = field(default_factory=list)

    def is_quiet(self) -> bool:
        return not (self.misses or self.anomalies or self.transitions or self.timeouts)

    def to_json(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "misses": [to_hex(n) for n in self.misses],
            "timeouts": [to_hex(n) for n in self.timeouts],
            "anomalies": [a.to_json() for a in self.anomalies],
            "transitions": [t.to_json() for t in self.transitions],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "HarnessReport":
        return cls(
            round=obj["round"],
            misses=[from_hex(n) for n in obj["misses"]],
            anomalies=[Anomaly.from_json(a) for a in obj["anomalies"]],
            transitions=[Transition.from_json(t) for t in obj["transitions"]],
            timeouts=[from_hex(n) for n in obj.get("timeouts", [])],
        )


def run_harness_round(
    profiles: Mapping[bytes, NodeProfile],
    responders: Iterable[bytes],
    round_proofs: Iterable[Submission],
    params: HarnessParams,
    round_no: int,
    *,
    timeouts: Iterable[bytes] = (),
    now: int = 0,
    on_phase: Callable[[str], None] | None = None,
) -> HarnessReport:
    """Heartbeat, then anomaly detection, then trust update.

    ``timeouts`` lists executors whose tasks expired during the round (one
    entry per expired task). ``on_phase`` is called as each phase finishes.
    """
    notify = on_phase or (lambda _: None)
    beat, missed = heartbeat_phase(profiles, responders, now)
    notify("heartbeat")
    checked, anomalies = anomaly_phase(profiles, round_proofs, params.anomaly_tolerance)
    notify("anomaly")
    timeouts = [n for n in timeouts if n in profiles]
    late = new_evidence()
    for node_id in timeouts:
        late[node_id].append(Evidence.TIMEOUT)
    transitions = trust_update_phase(profiles, merge_evidence(beat, checked, late), params)
    notify("trust_update")
    return HarnessReport(round_no, missed, anomalies, transitions, sorted(set(timeouts)))


class HarnessState:
    """Trust table plus the evidence gathered since the last harness round.

    One instance is shared by the master set: every honest master runs the
    same deterministic harness over the same evidence, so a single replica
    stands in for all of them.
    """

    def __init__(self, params: HarnessParams | None = None):
        self.params = params or HarnessParams()
        self.profiles: dict[bytes, NodeProfile] = {}
        self.reports: list[HarnessReport] = []
        self._submissions: list[Submission] = []
        self._seen: set[bytes] = set()
        self._timeouts: list[bytes] = []
        self._responders: set[bytes] = set()

    def add_node(self, node_id: bytes, tier: Tier = Tier.NON_TRUSTED) -> NodeProfile:
        profile = NodeProfile(node_id, tier)
        self.profiles[node_id] = profile
        return profile

    def tier(self, node_id: bytes) -> Tier:
        return self.profiles[node_id].tier

    def nodes_in(self, tier: Tier) -> list[bytes]:
        return sorted(n for n, p in self.profiles.items() if p.tier is tier)

    def submit(self, submission: Submission) -> None:
        """Queue a proof for this round's anomaly check (once per proof id)."""
        key = submission.proof.proof_id if isinstance(submission.proof.proof_id, bytes) else id(submission.proof)
        if key in self._seen:
            return
        self._seen.add(key)
        self._submissions.append(submission)

    def report_timeout(self, node_id: bytes) -> None:
        self._timeouts.append(node_id)

    def heard_from(self, node_id: bytes) -> None:
        self._responders.add(node_id)

    def pending_submissions(self) -> list[Submission]:
        return list(self._submissions)

    def close_round(self, round_no: int, now: int = 0, on_phase: Callable[[str], None] | None = None) -> HarnessReport:
        report = run_harness_round(
            self.profiles,
            self._responders,
            self._submissions,
            self.params,
            round_no,
            timeouts=self._timeouts,
            now=now,
            on_phase=on_phase,
        )
        self.reports.append(report)
        self._submissions = []
        self._timeouts = []
        self._responders = set()
        return report
