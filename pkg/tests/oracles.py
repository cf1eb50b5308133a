"""Independent reference implementations used only by the tests.

Nothing here imports the package under test. Golden values in the test
modules were produced by these functions and then frozen.
"""

from __future__ import annotations

import random
import struct

# --- SHA-256 from the FIPS 180-4 definition ---------------------------------

_K = [
    0x428A2F98, 0x71374491, 0xB5C0FBCF, 0xE9B5DBA5, 0x3956C25B, 0x59F111F1, 0x923F82A4, 0xAB1C5ED5,
    0xD807AA98, 0x12835B01, 0x243185BE, 0x550C7DC3, 0x72BE5D74, 0x80DEB1FE, 0x9BDC06A7, 0xC19BF174,
    0xE49B69C1, 0xEFBE4786, 0x0FC19DC6, 0x240CA1CC, 0x2DE92C6F, 0x4A7484AA, 0x5CB0A9DC, 0x76F988DA,
    0x983E5152, 0xA831C66D, 0xB00327C8, 0xBF597FC7, 0xC6E00BF3, 0xD5A79147, 0x06CA6351, 0x14292967,
    0x27B70A85, 0x2E1B2138, 0x4D2C6DFC, 0x53380D13, 0x650A7354, 0x766A0ABB, 0x81C2C92E, 0x92722C85,
    0xA2BFE8A1, 0xA81A664B, 0xC24B8B70, 0xC76C51A3, 0xD192E819, 0xD6990624, 0xF40E3585, 0x106AA070,
    0x19A4C116, 0x1E376C08, 0x2748774C, 0x34B0BCB5, 0x391C0CB3, 0x4ED8AA4A, 0x5B9CCA4F, 0x682E6FF3,
    0x748F82EE, 0x78A5636F, 0x84C87814, 0x8CC70208, 0x90BEFFFA, 0xA4506CEB, 0xBEF9A3F7, 0xC67178F2,
]
_H0 = [0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A, 0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19]
_M = 0xFFFFFFFF


def _rotr(x: int, n: int) -> int:
    return ((x >> n) | (x << (32 - n))) & _M


def sha256_ref(data: bytes) -> bytes:
    msg = bytes(data) + b"\x80"
    msg += b"\x00" * ((56 - len(msg) % 64) % 64)
    msg += struct.pack(">Q", len(data) * 8)
    h = list(_H0)
    for off in range(0, len(msg), 64):
        w = list(struct.unpack(">16I", msg[off : off + 64]))
        for i in range(16, 64):
            s0 = _rotr(w[i - 15], 7) ^ _rotr(w[i - 15], 18) ^ (w[i - 15] >> 3)
            s1 = _rotr(w[i - 2], 17) ^ _rotr(w[i - 2], 19) ^ (w[i - 2] >> 10)
            w.append((w[i - 16] + s0 + w[i - 7] + s1) & _M)
        a, b, c, d, e, f, g, hh = h
        for i in range(64):
            t1 = (hh + (_rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)) + ((e & f) ^ (~e & g)) + _K[i] + w[i]) & _M
            t2 = ((_rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c))) & _M
            a, b, c, d, e, f, g, hh = (t1 + t2) & _M, a, b, c, (d + t1) & _M, e, f, g
        h = [(x + y) & _M for x, y in zip(h, [a, b, c, d, e, f, g, hh])]
    return b"".join(struct.pack(">I", x) for x in h)


# --- canonical encoding, written from the wire format -------------------------


def lp(raw: bytes) -> bytes:
    return len(raw).to_bytes(4, "big") + raw


def u64(n: int) -> bytes:
    return n.to_bytes(8, "big")


def pairs(items) -> bytes:
    return b"".join(lp(k.encode()) + lp(v.encode()) for k, v in items)


def encode_data(content_hash, timestamp, sender_id, metadata) -> bytes:
    return b"\x01" + lp(content_hash) + lp(u64(timestamp)) + lp(sender_id) + lp(metadata.encode())


def encode_model(model_hash, version, model_id, config, timestamp, sender_id) -> bytes:
    return (
        b"\x02" + lp(model_hash) + lp(version.encode()) + lp(model_id.encode()) + lp(config.encode())
        + lp(u64(timestamp)) + lp(sender_id)
    )


def encode_proof(dataset_hash, model_hash, score, task_id, proof_id, timestamp, sender_id) -> bytes:
    return (
        b"\x03" + lp(dataset_hash) + lp(model_hash) + lp(u64(score)) + lp(task_id) + lp(proof_id)
        + lp(u64(timestamp)) + lp(sender_id)
    )


def encode_task(dataset_hash, model_hash, version, payload, params, deadline) -> bytes:
    return (
        b"\x21" + lp(dataset_hash) + lp(model_hash) + lp(version.encode()) + lp(payload) + lp(pairs(params))
        + lp(u64(deadline))
    )


def mock_inference(model_hash, dataset_hash, payload, params) -> tuple[bytes, int]:
    out = sha256_ref(b"\x20" + model_hash + dataset_hash + payload + pairs(params))
    return out, int.from_bytes(out[:8], "big") % 1_000_001


# --- Merkle root by explicit level-by-level construction ----------------------


def merkle_ref(leaves: list[bytes]) -> bytes:
    if not leaves:
        return sha256_ref(b"")
    level = [sha256_ref(b"\x00" + leaf) for leaf in leaves]
    while True:  # at least one pairing, so a lone leaf is hashed with itself
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1] if i + 1 < len(level) else level[i]
            nxt.append(sha256_ref(b"\x01" + left + right))
        level = nxt
        if len(level) == 1:
            return level[0]


# --- network RNG replay -------------------------------------------------------


def replay_delivery_times(seed: int, sends: list[int], base: int, jitter: int, loss: float) -> list[int | None]:
    """Delivery time of each send issued at clock 0 (None when lost), one loss draw then one jitter draw each."""
    rng = random.Random(seed)
    out = []
    for delay in sends:
        lost = rng.random() < loss
        j = rng.randint(0, jitter) if jitter else 0
        out.append(None if lost else delay + base + j)
    return out
