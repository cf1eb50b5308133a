"""Deterministic multi-node scenarios: masters, secondaries with scripted behaviors, and an agent.

Every round follows the same simulated-time schedule (offsets from the
round start, in ms)::

    0     agent requests go to the round leader, which assigns tasks
    400   leader audits and proposes; votes and commit follow over the network
    800   vote window closes
    900   heartbeat pings
    1400  harness round (heartbeat, anomaly, trust update)

After the last round one settle round runs proposals only, so results
accepted late in the final round still get a chance to commit.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any

from .block import validate_chain
from .consensus import ConsensusParams, MasterBehavior, MasterNode, leader_for, request_payload
from .crypto import KeyPair, sha256, to_hex
from .harness import HarnessParams, HarnessState, Tier
from .inference import InferenceResult, InferenceTask, execute, make_proof, verify_proof
from .network import Packet, PacketKind, SimNetwork
from .records import MAX_SCORE

logger = logging.getLogger(__name__)

PROPOSE_AT = 400
VOTE_CLOSE_AT = 800
PING_AT = 900


class ConfigError(ValueError):
    pass


class SecondaryBehavior(str, Enum):
    HONEST = "honest"
    FABRICATOR = "fabricator"
    LAGGARD = "laggard"
    CRASHER = "crasher"
    SIGNATURE_FORGER = "signature_forger"


@dataclass(frozen=True)
class SecondarySpec:
    behavior: SecondaryBehavior = SecondaryBehavior.HONEST
    initial_tier: Tier = Tier.NON_TRUSTED
    delta: int = 500  # fabricator score offset, micro-units
    delay_ms: int = 300  # laggard delay on results and pongs
    crash_at_round: int = 1

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "SecondarySpec":
        _no_extra(obj, {"behavior", "initial_tier", "delta", "delay_ms", "crash_at_round"}, "secondary")
        try:
            spec = cls(
                behavior=SecondaryBehavior(obj.get("behavior", "honest")),
                initial_tier=Tier(obj.get("initial_tier", "non_trusted")),
                delta=int(obj.get("delta", 500)),
                delay_ms=int(obj.get("delay_ms", 300)),
                crash_at_round=int(obj.get("crash_at_round", 1)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if spec.initial_tier is Tier.EXCLUDED:
            raise ConfigError("a secondary cannot start excluded")
        if spec.delta <= 0 or spec.delay_ms < 0:
            raise ConfigError("fabricator delta must be positive and laggard delay non-negative")
        return spec

    def to_json(self) -> dict[str, Any]:
        return {
            "behavior": self.behavior.value,
            "initial_tier": self.initial_tier.value,
            "delta": self.delta,
            "delay_ms": self.delay_ms,
            "crash_at_round": self.crash_at_round,
        }


@dataclass(frozen=True)
class NetConfig:
    base_latency_ms: int = 5
    jitter_ms: int = 5
    loss_rate: float = 0.0

    def __post_init__(self):
        if self.base_latency_ms < 0 or self.jitter_ms < 0:
            raise ConfigError("latency and jitter must be non-negative")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ConfigError("loss_rate must lie in [0, 1]")


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    masters: int = 3
    byzantine_masters: tuple[MasterBehavior, ...] = ()
    secondaries: tuple[SecondarySpec, ...] = ()
    rounds: int = 10
    requests_per_round: int = 4
    seed: int = 0
    net: NetConfig = NetConfig()
    consensus: ConsensusParams = ConsensusParams()
    harness: HarnessParams = HarnessParams()
    round_ms: int = 2000

    def __post_init__(self):
        if self.masters < 1:
            raise ConfigError("masters must be at least 1")
        if self.rounds < 0 or self.requests_per_round < 0:
            raise ConfigError("rounds and requests_per_round must be non-negative")
        if len(self.byzantine_masters) > self.masters:
            raise ConfigError("more byzantine masters than masters")
        if any(MasterBehavior(b) is MasterBehavior.HONEST for b in self.byzantine_masters):
            raise ConfigError("byzantine master behavior cannot be honest")
        try:
            self.consensus.quorum_of(self.masters)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.round_ms <= PING_AT + self.harness.heartbeat_timeout_ms:
            raise ConfigError("round_ms too short for the heartbeat window")
        if self.consensus.task_timeout_ms >= PROPOSE_AT:
            raise ConfigError("task_timeout_ms must end before the proposal step")

    @property
    def honest_masters(self) -> int:
        return self.masters - len(self.byzantine_masters)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Scenario":
        _no_extra(
            obj,
            {"name", "masters", "byzantine_masters", "secondaries", "rounds", "requests_per_round", "seed", "net",
             "consensus", "harness", "round_ms"},
            "scenario",
        )
        try:
            seed = int(obj.get("seed", 0))
            consensus = dict(obj.get("consensus", {}))
            consensus.setdefault("rng_seed", seed)
            if "audit_fraction" in consensus:
                consensus["audit_fraction"] = Fraction(str(consensus["audit_fraction"]))
            return cls(
                name=str(obj.get("name", "scenario")),
                masters=int(obj.get("masters", 3)),
                byzantine_masters=tuple(MasterBehavior(b) for b in obj.get("byzantine_masters", [])),
                secondaries=tuple(SecondarySpec.from_json(s) for s in obj.get("secondaries", [])),
                rounds=int(obj.get("rounds", 10)),
                requests_per_round=int(obj.get("requests_per_round", 4)),
                seed=seed,
                net=NetConfig(**obj.get("net", {})),
                consensus=ConsensusParams(**consensus),
                harness=HarnessParams(**obj.get("harness", {})),
                round_ms=int(obj.get("round_ms", 2000)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> dict[str, Any]:
        consensus = dataclasses.asdict(self.consensus)
        consensus["audit_fraction"] = str(self.consensus.audit_fraction)
        return {
            "name": self.name,
            "masters": self.masters,
            "byzantine_masters": [MasterBehavior(b).value for b in self.byzantine_masters],
            "secondaries": [s.to_json() for s in self.secondaries],
            "rounds": self.rounds,
            "requests_per_round": self.requests_per_round,
            "seed": self.seed,
            "net": dataclasses.asdict(self.net),
            "consensus": consensus,
            "harness": dataclasses.asdict(self.harness),
            "round_ms": self.round_ms,
        }

    def with_seed(self, seed: int) -> "Scenario":
        return dataclasses.replace(self, seed=seed, consensus=dataclasses.replace(self.consensus, rng_seed=seed))


def _no_extra(obj: Any, allowed: set[str], what: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{what} must be a JSON object")
    extra = set(obj) - allowed
    if extra:
        raise ConfigError(f"unknown {what} keys: {sorted(extra)}")


def _rate(numerator: int, denominator: int) -> float | None:
    return numerator / denominator if denominator else None


@dataclass
class MetricsReport:
    """Outcome of a run. ``to_json`` is byte-stable for a fixed input; wall-clock samples are kept apart."""

    name: str
    valid_cases: int = 0
    invalid_cases: int = 0
    detected_invalid: int = 0
    rejected_valid: int = 0
    committed_blocks: int = 0
    chain_valid: bool = True
    transitions: list[dict[str, Any]] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)
    assertions: dict[str, bool] = field(default_factory=dict)
    latency_samples: dict[str, list[float]] = field(default_factory=dict, repr=False)

    @property
    def detection_rate(self) -> float | None:
        return _rate(self.detected_invalid, self.invalid_cases)

    @property
    def false_positive_rate(self) -> float | None:
        return _rate(self.rejected_valid, self.valid_cases)

    @property
    def ok(self) -> bool:
        return all(self.assertions.values())

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "valid_cases": self.valid_cases,
            "invalid_cases": self.invalid_cases,
            "detected_invalid": self.detected_invalid,
            "rejected_valid": self.rejected_valid,
            "detection_rate": self.detection_rate,
            "false_positive_rate": self.false_positive_rate,
            "committed_blocks": self.committed_blocks,
            "chain_valid": self.chain_valid,
            "transitions": self.transitions,
            "details": self.details,
            "assertions": self.assertions,
            "ok": self.ok,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


class SecondaryNode:
    """Executes assigned tasks, misbehaving as configured, and answers pings."""

    def __init__(self, keypair: KeyPair, spec: SecondarySpec, sim: "Simulation", label: str):
        self.keypair = keypair
        self.node_id = keypair.node_id
        self.spec = spec
        self.sim = sim
        self.label = label

    @property
    def crashed(self) -> bool:
        return self.spec.behavior is SecondaryBehavior.CRASHER and self.sim.round >= self.spec.crash_at_round

    @property
    def delay(self) -> int:
        return self.spec.delay_ms if self.spec.behavior is SecondaryBehavior.LAGGARD else 0

    def handle(self, packet: Packet) -> str:
        if self.crashed:
            return "crashed"
        if packet.kind is PacketKind.HEARTBEAT_PING:
            self.sim.net.send(Packet(PacketKind.HEARTBEAT_PONG, self.node_id, packet.sender_id, dict(packet.payload)), self.delay)
            return "pong"
        if packet.kind is not PacketKind.TASK_ASSIGN:
            return "ignored"
        task = InferenceTask.from_json(packet.payload["task"])
        try:
            result = execute(task, self.node_id)
        except ValueError:
            return "invalid_task"
        behavior = self.spec.behavior
        if behavior is SecondaryBehavior.FABRICATOR:
            shift = self.spec.delta if result.validation_score + self.spec.delta <= MAX_SCORE else -self.spec.delta
            result = dataclasses.replace(result, validation_score=result.validation_score + shift)
        proof = make_proof(result, task, self.keypair, self.sim.net.clock)
        if behavior is SecondaryBehavior.SIGNATURE_FORGER:
            sig = bytearray(proof.signature)
            sig[5] ^= 0x01
            proof = dataclasses.replace(proof, signature=bytes(sig))
        if behavior in (SecondaryBehavior.FABRICATOR, SecondaryBehavior.SIGNATURE_FORGER):
            self.sim.injections[proof.proof_id] = behavior.value
            self.sim.injected_tasks.add(to_hex(task.task_id))
        payload = {"result": result.to_json(), "proof": proof.to_json()}
        self.sim.net.send(Packet(PacketKind.TASK_RESULT, self.node_id, packet.sender_id, payload), self.delay)
        return "executed"


class AgentNode:
    """Sends inference requests and records what comes back."""

    def __init__(self, keypair: KeyPair, sim: "Simulation"):
        self.keypair = keypair
        self.node_id = keypair.node_id
        self.sim = sim
        self.sent: dict[str, int] = {}
        self.responses: dict[str, dict[str, Any]] = {}

    def request(self, round_no: int, index: int) -> None:
        seed = self.sim.scenario.seed
        request_id = f"r{round_no}-{index}"
        payload = request_payload(
            request_id,
            sha256(f"dataset:{seed}:{round_no}:{index}".encode()),
            sha256(f"model:{index % 2}".encode()),
            "v1.0",
            f"prompt {round_no}.{index}".encode(),
            [("max_tokens", "64"), ("temperature", "0")],
        )
        leader = leader_for(round_no, self.sim.master_ids)
        self.sent[request_id] = self.sim.net.clock
        self.sim.net.send(Packet(PacketKind.AGENT_REQUEST, self.node_id, leader, payload))

    def handle(self, packet: Packet) -> str:
        if packet.kind is not PacketKind.AGENT_RESPONSE:
            return "ignored"
        rid = packet.payload["request_id"]
        if rid in self.responses:
            return "duplicate"
        self.responses[rid] = {
            **packet.payload,
            "at": self.sim.net.clock,
            "latency_ms": self.sim.net.clock - self.sent.get(rid, self.sim.net.clock),
        }
        return "received"


class Simulation:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        sc = scenario
        self.net = SimNetwork(sc.seed, sc.net.base_latency_ms, sc.net.jitter_ms, sc.net.loss_rate)
        self.harness = HarnessState(sc.harness)
        self.events: list[dict[str, Any]] = []
        self.injections: dict[bytes, str] = {}
        self.injected_tasks: set[str] = set()
        self.round = 0
        self.round_logs: list[dict[str, Any]] = []

        keys = [KeyPair.derive("master", sc.seed, i) for i in range(sc.masters)]
        self.master_ids = sorted(k.node_id for k in keys)
        first_byzantine = sc.masters - len(sc.byzantine_masters)
        self.masters: list[MasterNode] = []
        for i, key in enumerate(keys):
            behavior = MasterBehavior.HONEST if i < first_byzantine else sc.byzantine_masters[i - first_byzantine]
            master = MasterNode(key, self.master_ids, self.harness, sc.consensus, net=self.net,
                                behavior=behavior, observer=self._observe)
            self.net.register(master.node_id, master.handle)
            self.masters.append(master)
        self.by_id = {m.node_id: m for m in self.masters}

        self.secondaries: list[SecondaryNode] = []
        for i, spec in enumerate(sc.secondaries):
            node = SecondaryNode(KeyPair.derive("secondary", sc.seed, i), spec, self, f"s{i}-{spec.behavior.value}")
            self.harness.add_node(node.node_id, spec.initial_tier)
            self.net.register(node.node_id, node.handle)
            self.secondaries.append(node)
        self.labels = {s.node_id: s.label for s in self.secondaries}
        self.labels.update({m.node_id: f"m{i}-{m.behavior.value}" for i, m in enumerate(self.masters)})

        self.agent = AgentNode(KeyPair.derive("agent", sc.seed), self)
        self.net.register(self.agent.node_id, self.agent.handle)

    @property
    def honest_masters(self) -> list[MasterNode]:
        return [m for m in self.masters if m.honest]

    def _observe(self, kind: str, **fields: Any) -> None:
        event = {"t": self.net.clock, "round": self.round, "event": kind}
        for k, v in fields.items():
            event[k] = to_hex(v) if isinstance(v, bytes) else (v.value if isinstance(v, Enum) else v)
        self.events.append(event)

    # -- schedule ----------------------------------------------------------

    def run(self) -> MetricsReport:
        sc = self.scenario
        for r in range(1, sc.rounds + 2):
            t0 = (r - 1) * sc.round_ms
            settle = r == sc.rounds + 1
            self.net.schedule_at(t0, lambda r=r, settle=settle: self._start_round(r, settle), "round_start")
            self.net.schedule_at(t0 + PROPOSE_AT, lambda r=r: self._propose(r), "propose")
            self.net.schedule_at(t0 + VOTE_CLOSE_AT, lambda r=r: self._close_votes(r), "vote_close")
            if not settle:
                self.net.schedule_at(t0 + PING_AT, lambda r=r: self._ping(r), "ping")
                self.net.schedule_at(t0 + PING_AT + sc.harness.heartbeat_timeout_ms, lambda r=r: self._harness(r), "harness")
        self.net.run((sc.rounds + 1) * sc.round_ms)
        return self.metrics()

    def _start_round(self, r: int, settle: bool) -> None:
        self.round = r
        for m in self.masters:
            m.start_round(r)
        if not settle:
            for i in range(self.scenario.requests_per_round):
                self.agent.request(r, i)

    def leader(self, r: int) -> MasterNode:
        return self.by_id[leader_for(r, self.master_ids)]

    def _propose(self, r: int) -> None:
        self.leader(r).open_proposal(r)

    def _close_votes(self, r: int) -> None:
        leader = self.leader(r)
        leader.close_proposal(r)
        log = leader.logs.get(r)
        if log is not None:
            self.round_logs.append(log.to_json())

    def _pinger(self) -> MasterNode:
        honest = self.honest_masters
        return min(honest or self.masters, key=lambda m: m.node_id)

    def _ping(self, r: int) -> None:
        targets = [n for n in sorted(self.harness.profiles) if self.harness.tier(n) is not Tier.EXCLUDED]
        self._pinger().send_pings(r, targets)

    def _harness(self, r: int) -> None:
        report = self.harness.close_round(r, self.net.clock, on_phase=lambda name: self._observe("phase", phase=name))
        for t in report.transitions:
            self._observe("transition", node=t.node, label=self.labels[t.node], **{"from": t.from_tier.value, "to": t.to_tier.value})
        for node in report.misses:
            for m in self.masters:
                for packet in m.reassign_from(node, "HeartbeatMiss"):
                    self.net.send(packet)

    # -- metrics -----------------------------------------------------------

    def metrics(self) -> MetricsReport:
        sc = self.scenario
        report = MetricsReport(sc.name)
        cases: dict[str, bool] = {}  # proof id -> flagged invalid by some master
        for e in self.events:
            if e["event"] == "accepted":
                cases.setdefault(e["proof"], False)
            elif e["event"] == "rejected" and e["reason"] != "Timeout" and e.get("proof"):
                cases[e["proof"]] = True
            elif e["event"] == "detect":
                cases[e["proof"]] = True
        injected = {to_hex(p) for p in self.injections}
        undetected = sorted(p for p in injected if not cases.get(p))
        for proof_id, flagged in cases.items():
            if proof_id in injected:
                continue
            report.valid_cases += 1
            report.rejected_valid += flagged
        report.invalid_cases = len(injected)
        report.detected_invalid = report.invalid_cases - len(undetected)

        honest = self.honest_masters
        reference = honest[0] if honest else self.masters[0]
        report.committed_blocks = len(reference.chain) - 1
        report.chain_valid = all(validate_chain(m.chain) is None for m in honest)
        heads = {tuple(b.block_hash for b in m.chain) for m in honest}
        consistent = len(heads) <= 1
        violations = self.safety_violations()
        gating = self.gating_violations()

        report.transitions = [
            {"round": e["round"], "node": e["node"], "label": e["label"], "from": e["from"], "to": e["to"]}
            for e in self.events
            if e["event"] == "transition"
        ]
        responses = self.agent.responses
        by_path: dict[str, list[int]] = {}
        for resp in responses.values():
            by_path.setdefault(resp.get("path") or resp["status"], []).append(resp["latency_ms"])
        report.details = {
            "scenario": sc.to_json(),
            "undetected_injections": undetected,
            # responses already delivered for a fabricated result; agents are not notified retroactively
            "optimistic_discrepancies": sum(
                1 for r in responses.values() if r["status"] == "ok" and r.get("task_id") in self.injected_tasks
            ),
            "chains_consistent": consistent,
            "safety_violations": violations,
            "gating_violations": gating,
            "final_tiers": dict(sorted((self.labels[n], p.tier.value) for n, p in self.harness.profiles.items())),
            "nodes": {label: to_hex(n) for n, label in sorted(self.labels.items(), key=lambda kv: kv[1])},
            "agent": {
                "requests": len(self.agent.sent),
                "responses": len(responses),
                "by_path": {
                    k: {"count": len(v), "mean_latency_ms": sum(v) / len(v), "max_latency_ms": max(v)}
                    for k, v in sorted(by_path.items())
                },
            },
            "mempool_depth": reference.mempool.depth(),
            "network": dict(self.net.stats),
            "rounds_committed": sum(1 for log in self.round_logs if log["committed"]),
        }
        report.assertions = {
            "all_injections_detected": not undetected,
            "no_false_positives": report.rejected_valid == 0,
            "gating_parity": gating == 0,
        }
        if sc.honest_masters >= sc.consensus.quorum_of(sc.masters):
            report.assertions.update(
                {
                    "chain_valid": report.chain_valid,
                    "chains_consistent": consistent or sc.net.loss_rate > 0,
                    "no_unsound_commits": violations == 0,
                }
            )
        return report

    def all_tasks(self) -> dict[bytes, InferenceTask]:
        tasks: dict[bytes, InferenceTask] = {}
        for m in self.masters:
            tasks.update(m.tasks)
        return tasks

    def safety_violations(self) -> int:
        """Committed proofs (on honest chains) whose stored score does not recompute."""
        tasks = self.all_tasks()
        bad = set()
        for m in self.honest_masters:
            for block in m.chain[1:]:
                for proof in block.body.proof_lane:
                    task = tasks.get(proof.task_id)
                    if task is None or not verify_proof(proof, task, self.scenario.consensus.score_tolerance).ok:
                        bad.add(proof.proof_id)
        return len(bad)

    def gating_violations(self) -> int:
        """Responses whose serving path disagrees with the executor's tier at assignment."""
        tier_at: dict[str, str] = {}
        for e in self.events:
            if e["event"] == "assign":
                tier_at[e["task"]] = e["tier"]
        committed_at: dict[str, int] = {}
        for e in self.events:
            if e["event"] == "commit":
                m = self.by_id[bytes.fromhex(e["master"])]
                block = next(b for b in m.chain if b.block_hash.hex() == e["block"])
                for proof in block.body.proof_lane:
                    committed_at.setdefault(proof.task_id.hex(), e["t"])
        violations = 0
        for resp in self.agent.responses.values():
            path = resp.get("path")
            if path is None:
                continue
            tier = tier_at.get(resp["task_id"])
            if path == "optimistic" and tier != Tier.TRUSTED.value:
                violations += 1
            elif path == "verified" and (tier == Tier.TRUSTED.value or resp["at"] < committed_at.get(resp["task_id"], 1 << 62)):
                violations += 1
        return violations

    # -- output ------------------------------------------------------------

    def write_outputs(self, report: MetricsReport, out_dir: Path, trace: bool = False) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(report.dumps())
        _write_jsonl(out_dir / "consensus.jsonl", self.round_logs)
        _write_jsonl(out_dir / "harness.jsonl", [r.to_json() for r in self.harness.reports])
        if trace:
            _write_jsonl(out_dir / "trace.jsonl", self.net.trace)
            _write_jsonl(out_dir / "events.jsonl", self.events)


def _write_jsonl(path: Path, rows: list[dict[str, Any]]) -> None:
    path.write_text("".join(json.dumps(row, sort_keys=True) + "\n" for row in rows))


def run_scenario(scenario: Scenario, out_dir: str | Path | None = None, trace: bool = False) -> MetricsReport:
    """Run ``scenario`` to completion; write outputs to ``out_dir`` when given."""
    sim = Simulation(scenario)
    report = sim.run()
    if out_dir is not None:
        sim.write_outputs(report, Path(out_dir), trace)
    return report
