"""Proof-of-Inference blockchain node library, deterministic simulator and CLI."""

from .block import Block, BlockError, BlockErrorKind, build_block, make_genesis, merkle_root, validate_block, validate_chain
from .consensus import ConsensusParams, MasterNode, Vote, propose_and_vote
from .crypto import KeyPair, canonical_bytes, sha256, sign, verify
from .harness import HarnessParams, HarnessState, Tier, run_harness_round
from .inference import InferenceTask, MockBackend, execute, verify_proof
from .mempool import Mempool
from .network import Hub, Packet, PacketKind, SimNetwork
from .records import DataRecord, ErrorKind, ModelRecord, ProofRecord, ValidationError, admit
from .simulation import ConfigError, MetricsReport, Scenario, run_scenario

__all__ = [
    "Block", "BlockError", "BlockErrorKind", "build_block", "make_genesis", "merkle_root", "validate_block",
    "validate_chain", "ConsensusParams", "MasterNode", "Vote", "propose_and_vote", "KeyPair", "canonical_bytes",
    "sha256", "sign", "verify", "HarnessParams", "HarnessState", "Tier", "run_harness_round", "InferenceTask",
    "MockBackend", "execute", "verify_proof", "Mempool", "Hub", "Packet", "PacketKind", "SimNetwork", "DataRecord",
    "ErrorKind", "ModelRecord", "ProofRecord", "ValidationError", "admit", "ConfigError", "MetricsReport", "Scenario",
    "run_scenario",
]
