"""Per-type staging pools for admitted records awaiting block inclusion."""

from __future__ import annotations

import threading
from typing import TYPE_CHECKING, Iterable

from .records import DataRecord, ErrorKind, ModelRecord, ProofRecord, Record, ValidationError, admit, record_kind

if TYPE_CHECKING:
    from .block import Block

DEFAULT_CAPACITY = 10_000


class PoolFull(Exception):
    pass


class Mempool:
    """Three insertion-ordered pools keyed by record identity.

    Selection does not remove records; :meth:`commit` does, so a proposal
    that fails to reach quorum leaves its records available. Committed ids are
    remembered and rejected as duplicates if they show up again.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        self.capacity = capacity
        self._pools: dict[str, dict[bytes, Record]] = {"DATA": {}, "MODEL": {}, "PROOF": {}}
        self._committed: set[bytes] = set()
        self._lock = threading.Lock()

    def insert(self, record: Record, *, admitted: bool = False) -> None:
        """Admit and store ``record``.

        Raises ValidationError (including kind Duplicate) or PoolFull. Pass
        ``admitted=True`` only when the caller has just run ``admit`` itself.
        """
        if not admitted:
            err = admit(record)
            if err is not None:
                raise err
        key = record.record_id
        with self._lock:
            pool = self._pools[record_kind(record)]
            if key in pool or key in self._committed:
                raise ValidationError(ErrorKind.DUPLICATE, key.hex())
            if len(pool) >= self.capacity:
                raise PoolFull(record_kind(record))
            pool[key] = record

    def select_for_block(
        self, max_per_lane: int
    ) -> tuple[list[DataRecord], list[ModelRecord], list[ProofRecord]]:
        with self._lock:
            return tuple(list(self._pools[k].values())[:max_per_lane] for k in ("DATA", "MODEL", "PROOF"))

    def commit(self, block: "Block") -> None:
        self.remove(block.body.records(), committed=True)

    def remove(self, records: Iterable[Record], *, committed: bool = False) -> None:
        with self._lock:
            for record in records:
                key = record.record_id
                self._pools[record_kind(record)].pop(key, None)
                if committed:
                    self._committed.add(key)

    def get(self, kind: str, key: bytes) -> Record | None:
        return self._pools[kind].get(key)

    def proofs(self) -> list[ProofRecord]:
        return list(self._pools["PROOF"].values())

    def all_records(self) -> list[Record]:
        return [r for pool in self._pools.values() for r in pool.values()]

    def depth(self) -> dict[str, int]:
        return {k.lower(): len(v) for k, v in self._pools.items()}

    def __len__(self) -> int:
        return sum(len(p) for p in self._pools.values())

    def __contains__(self, record: Record) -> bool:
        return record.record_id in self._pools[record_kind(record)]
