"""Hashing, canonical binary encoding, keys and signatures.

Everything that gets hashed or signed goes through :func:`canonical_bytes`,
which emits a tag byte followed by every schema field as a 4-byte big-endian
length prefix and the raw field bytes. Signatures are compact 64-byte
``r || s`` ECDSA over secp256k1 with RFC 6979 nonces and low-s normalization
(libsecp256k1 via ``coincurve``).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Iterable

import coincurve
from coincurve.ecdsa import cdata_to_der, der_to_cdata, deserialize_compact, serialize_compact

# Domain-separation tags. Kept together so the protocol constants live in one place.
TAG_DATA = 0x01
TAG_MODEL = 0x02
TAG_PROOF = 0x03
TAG_HEADER = 0x10
TAG_INFERENCE = 0x20
TAG_TASK = 0x21
TAG_VOTE = 0x30

HASH_LEN = 32
PUBKEY_LEN = 33
SIG_LEN = 64
U64_MAX = 2**64 - 1
ZERO_HASH = bytes(HASH_LEN)


class SchemaError(ValueError):
    """A value cannot be canonically encoded: a field is missing or mistyped."""


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def to_hex(b: bytes) -> str:
    return b.hex()


def from_hex(s: str) -> bytes:
    return bytes.fromhex(s)


def _len_prefixed(raw: bytes) -> bytes:
    return struct.pack(">I", len(raw)) + raw


def encode_field(kind: str, value: Any, name: str = "?") -> bytes:
    """Raw bytes of one field (without its length prefix).

    ``kind`` is one of ``hash``, ``u64``, ``str``, ``bytes``, ``pairs``, ``hashes``.
    """
    if value is None:
        raise SchemaError(f"missing field {name!r}")
    if kind == "hash":
        if not isinstance(value, (bytes, bytearray)) or len(value) != HASH_LEN:
            raise SchemaError(f"field {name!r} must be {HASH_LEN} bytes")
        return bytes(value)
    if kind == "u64":
        if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= U64_MAX:
            raise SchemaError(f"field {name!r} must be an unsigned 64-bit integer")
        return struct.pack(">Q", value)
    if kind == "str":
        if not isinstance(value, str):
            raise SchemaError(f"field {name!r} must be a string")
        try:
            return value.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise SchemaError(f"field {name!r} is not valid UTF-8") from exc
    if kind == "bytes":
        if not isinstance(value, (bytes, bytearray)):
            raise SchemaError(f"field {name!r} must be bytes")
        return bytes(value)
    if kind == "pairs":
        return encode_pairs(value, name)
    if kind == "hashes":
        if not isinstance(value, (list, tuple)):
            raise SchemaError(f"field {name!r} must be a list of hashes")
        return b"".join(encode_field("hash", h, name) for h in value)
    raise SchemaError(f"unknown field kind {kind!r}")


def encode_pairs(pairs: Iterable[tuple[str, str]], name: str = "pairs") -> bytes:
    """Ordered key/value list: each key and value length-prefixed, in order."""
    if not isinstance(pairs, (list, tuple)):
        raise SchemaError(f"field {name!r} must be a list of pairs")
    out = bytearray()
    for pair in pairs:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise SchemaError(f"field {name!r} must contain (key, value) pairs")
        for part in pair:
            out += _len_prefixed(encode_field("str", part, name))
    return bytes(out)


def canonical_bytes(obj: Any) -> bytes:
    """Deterministic encoding of a record, header, task or vote.

    ``obj`` declares ``TAG`` (one byte) and ``FIELDS``, an ordered tuple of
    ``(attribute, kind)`` pairs. Signature and public-key attributes are not
    listed in ``FIELDS`` and therefore never encoded.
    """
    out = bytearray([obj.TAG])
    for name, kind in obj.FIELDS:
        out += _len_prefixed(encode_field(kind, getattr(obj, name, None), name))
    return bytes(out)


@lru_cache(maxsize=4096)
def _parse_pubkey(raw: bytes) -> coincurve.PublicKey:
    return coincurve.PublicKey(raw)


@dataclass(frozen=True)
class KeyPair:
    private_key: bytes
    public_key: bytes
    node_id: bytes
    _signer: coincurve.PrivateKey = field(repr=False, compare=False)

    @classmethod
    def from_secret(cls, secret: bytes | int) -> "KeyPair":
        if isinstance(secret, int):
            secret = secret.to_bytes(32, "big")
        signer = coincurve.PrivateKey(secret)
        pub = signer.public_key.format(compressed=True)
        return cls(signer.secret, pub, sha256(pub), signer)

    @classmethod
    def derive(cls, *labels: bytes | str | int) -> "KeyPair":
        """Deterministic key from a label path, e.g. ``derive(b"master", seed, 0)``."""
        material = b"".join(_len_prefixed(_label_bytes(x)) for x in labels)
        counter = 0
        while True:
            candidate = sha256(material + struct.pack(">I", counter))
            try:
                return cls.from_secret(candidate)
            except ValueError:  # zero or >= curve order; astronomically rare
                counter += 1

    @classmethod
    def generate(cls) -> "KeyPair":
        signer = coincurve.PrivateKey()
        return cls.from_secret(signer.secret)


def _label_bytes(x: bytes | str | int) -> bytes:
    if isinstance(x, bytes):
        return x
    if isinstance(x, str):
        return x.encode()
    return str(x).encode()


def sign(keypair: KeyPair, message: bytes) -> bytes:
    """Compact low-s signature over SHA-256(message)."""
    der = keypair._signer.sign(message, hasher=sha256)
    return serialize_compact(der_to_cdata(der))


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` is a valid low-s signature by ``public_key``.

    Malformed inputs of any shape return False.
    """
    try:
        if len(public_key) != PUBKEY_LEN or len(signature) != SIG_LEN:
            return False
        pub = _parse_pubkey(bytes(public_key))
        der = cdata_to_der(deserialize_compact(bytes(signature)))
        return pub.verify(der, message, hasher=sha256)
    except Exception:
        return False
