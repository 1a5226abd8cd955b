"""Ledger data model shared by every protocol.

Digests are plain 32-byte ``bytes`` values.  When a digest has to be ordered or
reduced modulo the concurrency level it is read as an unsigned big-endian
integer.

Canonical encodings (all integers big-endian):

* block header: ``b"BLK1" | u32 proposer | u64 round | u32 bucket |
  prev_macro_hash | seed_proposal | u32 len(seed_proof) | seed_proof |
  u32 n_tx | tx ids ... | u64 body_size``; the block digest is SHA-256 of it.
* decision vector: ``b"VEC1" | u64 round | u32 cl | slot digests``.
* macroblock: ``b"MAC1" | u64 round | u32 cl | slot digests``, EMPTY slots
  encoded as 32 zero bytes.
"""

from __future__ import annotations

import hashlib
import struct
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Optional, Sequence

DIGEST_SIZE = 32
EMPTY = bytes(DIGEST_SIZE)
GENESIS_HASH = hashlib.sha256(b"muxchain/genesis").digest()


def sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


def digest_int(d: bytes) -> int:
    return int.from_bytes(d, "big")


def u32(x: int) -> bytes:
    return struct.pack(">I", x)


def u64(x: int) -> bytes:
    return struct.pack(">Q", x)


class ValidationError(Exception):
    """A received block failed one of the fabrication checks."""

    check = "validation"


class BucketViolation(ValidationError):
    check = "bucket"


class ChainingViolation(ValidationError):
    check = "chaining"


class SizeViolation(ValidationError):
    check = "size"


class MissingBlocks(Exception):
    def __init__(self, missing: Iterable[bytes]):
        self.missing = frozenset(missing)
        super().__init__(f"{len(self.missing)} block(s) unknown")


@dataclass(frozen=True)
class Transaction:
    id: bytes
    payload_size: int

    def __post_init__(self):
        if self.payload_size <= 0:
            raise ValueError("payload_size must be positive")

    @classmethod
    def from_payload(cls, payload: bytes) -> "Transaction":
        return cls(sha256(payload), len(payload))


@dataclass(frozen=True)
class BucketSpec:
    cl: int

    def __post_init__(self):
        if self.cl < 1:
            raise ValueError(f"concurrency level must be >= 1, got {self.cl}")


def tx_bucket(tx_id: bytes, spec: BucketSpec) -> int:
    return digest_int(tx_id) % spec.cl


@dataclass(frozen=True, eq=False)
class Block:
    proposer: int
    round: int
    bucket: int
    prev_macro_hash: bytes
    txs: tuple[Transaction, ...]
    body_size: int
    seed_proposal: bytes = EMPTY
    seed_proof: bytes = b""

    @property
    def tx_ids(self) -> tuple[bytes, ...]:
        return tuple(t.id for t in self.txs)

    def header_bytes(self) -> bytes:
        parts = [
            b"BLK1",
            u32(self.proposer),
            u64(self.round),
            u32(self.bucket),
            self.prev_macro_hash,
            self.seed_proposal,
            u32(len(self.seed_proof)),
            self.seed_proof,
            u32(len(self.txs)),
        ]
        parts.extend(t.id for t in self.txs)
        parts.append(u64(self.body_size))
        return b"".join(parts)

    @cached_property
    def digest(self) -> bytes:
        return sha256(self.header_bytes())

    def __repr__(self) -> str:
        return (f"Block(proposer={self.proposer}, round={self.round}, bucket={self.bucket}, "
                f"n_tx={len(self.txs)}, digest={self.digest.hex()[:12]})")


def make_block(proposer: int, round: int, bucket: int, prev_macro_hash: bytes,
               pool: Iterable[Transaction], bs: int, spec: BucketSpec,
               seed_proposal: bytes = EMPTY, seed_proof: bytes = b"") -> Block:
    """Greedily fill a block with pool transactions that map to ``bucket``.

    Stops at the first matching transaction that would push the body past
    ``bs``; ``pool`` may be an unbounded iterator.
    """
    txs = []
    size = 0
    for tx in pool:
        if tx_bucket(tx.id, spec) != bucket:
            continue
        if size + tx.payload_size > bs:
            break
        txs.append(tx)
        size += tx.payload_size
    return Block(proposer, round, bucket, prev_macro_hash, tuple(txs), size,
                 seed_proposal, seed_proof)


_validated: dict[tuple, Optional[ValidationError]] = {}


def validate_block(b: Block, spec: BucketSpec, expected_prev: bytes, bs: int) -> None:
    """Raise the first failing check, or return None when the block is well formed.

    The bucket scan is memoised per (block, cl, bs) since every simulated node
    re-validates the same object.
    """
    if b.prev_macro_hash != expected_prev:
        raise ChainingViolation(
            f"block {b.digest.hex()[:12]} extends {b.prev_macro_hash.hex()[:12]}, "
            f"expected {expected_prev.hex()[:12]}")
    key = (b.digest, spec.cl, bs)
    if key not in _validated:
        _validated[key] = _content_check(b, spec, bs)
    err = _validated[key]
    if err is not None:
        raise err


def _content_check(b: Block, spec: BucketSpec, bs: int) -> Optional[ValidationError]:
    if not 0 <= b.bucket < spec.cl:
        return BucketViolation(f"bucket {b.bucket} outside [0, {spec.cl})")
    for t in b.txs:
        if tx_bucket(t.id, spec) != b.bucket:
            return BucketViolation(
                f"tx {t.id.hex()[:12]} maps to bucket {tx_bucket(t.id, spec)}, block claims {b.bucket}")
    if sum(t.payload_size for t in b.txs) != b.body_size:
        return SizeViolation("body_size does not match the included payloads")
    if b.body_size > bs:
        return SizeViolation(f"body of {b.body_size} bytes exceeds block size {bs}")
    return None


@dataclass(frozen=True)
class DecisionVector:
    round: int
    slots: tuple[bytes, ...]

    @property
    def cl(self) -> int:
        return len(self.slots)

    @cached_property
    def digest(self) -> bytes:
        return sha256(b"VEC1", u64(self.round), u32(len(self.slots)), *self.slots)

    def non_empty(self) -> int:
        return sum(1 for s in self.slots if s != EMPTY)


@dataclass(frozen=True, eq=False)
class MacroBlock:
    round: int
    blocks: tuple[Optional[Block], ...]

    @property
    def cl(self) -> int:
        return len(self.blocks)

    @property
    def slot_hashes(self) -> tuple[bytes, ...]:
        return tuple(EMPTY if b is None else b.digest for b in self.blocks)

    @cached_property
    def macro_hash(self) -> bytes:
        return macro_hash(self)

    @property
    def payload_size(self) -> int:
        return sum(b.body_size for b in self.blocks if b is not None)

    def tx_ids(self, proposer: Optional[int] = None) -> list[bytes]:
        """All transaction ids in slot order, or only those of ``proposer``'s blocks."""
        return [t.id for b in self.blocks
                if b is not None and (proposer is None or b.proposer == proposer) for t in b.txs]


def macro_hash(m: MacroBlock) -> bytes:
    return slots_macro_hash(m.round, m.slot_hashes)


def slots_macro_hash(round: int, slots: Sequence[bytes]) -> bytes:
    """Macro hash straight from a decided vector, before its blocks are at hand."""
    return sha256(b"MAC1", u64(round), u32(len(slots)), *slots)


def assemble_macroblock(d: DecisionVector, known_blocks: Mapping[bytes, Block]) -> MacroBlock:
    missing = [s for s in d.slots if s != EMPTY and s not in known_blocks]
    if missing:
        raise MissingBlocks(missing)
    blocks = []
    for i, s in enumerate(d.slots):
        if s == EMPTY:
            blocks.append(None)
            continue
        b = known_blocks[s]
        if b.bucket != i:
            raise BucketViolation(f"slot {i} references a bucket-{b.bucket} block")
        blocks.append(b)
    return MacroBlock(d.round, tuple(blocks))


class ChainStore:
    """Append-only macroblock chain owned by one simulated node."""

    def __init__(self, genesis: bytes = GENESIS_HASH):
        self.genesis = genesis
        self.blocks: list[MacroBlock] = []
        self.index: dict[bytes, int] = {}

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].macro_hash if self.blocks else self.genesis

    def append(self, m: MacroBlock) -> None:
        if m.round != len(self.blocks):
            raise ChainingViolation(f"expected round {len(self.blocks)}, got {m.round}")
        tip = self.tip_hash
        for b in m.blocks:
            if b is not None and b.prev_macro_hash != tip:
                raise ChainingViolation(f"member block {b.digest.hex()[:12]} does not extend the tip")
        self.index[m.macro_hash] = len(self.blocks)
        self.blocks.append(m)

    def hashes(self) -> list[bytes]:
        return [m.macro_hash for m in self.blocks]

    def replay(self) -> bool:
        """Re-derive every stored hash and link from genesis."""
        prev = self.genesis
        for r, m in enumerate(self.blocks):
            if m.round != r or macro_hash(m) != m.macro_hash or self.index.get(m.macro_hash) != r:
                return False
            if any(b is not None and b.prev_macro_hash != prev for b in m.blocks):
                return False
            prev = m.macro_hash
        return True


class TxPool:
    """Deterministic per-node transaction source, bucketed lazily.

    Payloads are ``tag|index`` padded with zeros to ``tx_size`` bytes, so ids
    are genuine payload digests and different tags never collide.
    """

    def __init__(self, tag: bytes, tx_size: int, spec: BucketSpec):
        self.tag = tag
        self.tx_size = tx_size
        self.spec = spec
        self._queues: list[list[Transaction]] = [[] for _ in range(spec.cl)]
        self._heads = [0] * spec.cl
        self._where: dict[bytes, tuple[int, int]] = {}
        self._gone: set[bytes] = set()
        self._next = 0

    def _generate(self) -> None:
        payload = (self.tag + b"|" + u64(self._next)).ljust(self.tx_size, b"\0")
        self._next += 1
        tx = Transaction.from_payload(payload)
        b = tx_bucket(tx.id, self.spec)
        self._where[tx.id] = (b, len(self._queues[b]))
        self._queues[b].append(tx)

    def iter_bucket(self, bucket: int) -> Iterator[Transaction]:
        q = self._queues[bucket]
        i = self._heads[bucket]
        while True:
            while i >= len(q):
                self._generate()
            tx = q[i]
            i += 1
            if tx.id not in self._gone:
                yield tx

    def take(self, bucket: int, bs: int) -> list[Transaction]:
        """Longest prefix of the bucket's queue that fits in ``bs`` bytes."""
        out, size = [], 0
        for tx in self.iter_bucket(bucket):
            if size + tx.payload_size > bs:
                break
            out.append(tx)
            size += tx.payload_size
        return out

    def remove(self, tx_ids: Iterable[bytes]) -> None:
        """Drop committed transactions; ids this pool never produced are ignored."""
        touched = set()
        for i in tx_ids:
            if i in self._where and i not in self._gone:
                self._gone.add(i)
                touched.add(self._where[i][0])
        for b in touched:
            q, h = self._queues[b], self._heads[b]
            while h < len(q) and q[h].id in self._gone:
                h += 1
            self._heads[b] = h

    def restore(self, tx_ids: Iterable[bytes]) -> None:
        """Make transactions available again after their block was orphaned."""
        for i in tx_ids:
            if i in self._gone:
                self._gone.discard(i)
                b, pos = self._where[i]
                self._heads[b] = min(self._heads[b], pos)


def disjoint_slots(m: MacroBlock) -> bool:
    seen: set[bytes] = set()
    for b in m.blocks:
        if b is None:
            continue
        ids = set(b.tx_ids)
        if ids & seen:
            return False
        seen |= ids
    return True


def empty_vector(round: int, cl: int) -> DecisionVector:
    return DecisionVector(round, (EMPTY,) * cl)


def vector_of(round: int, slots: Sequence[Optional[bytes]]) -> DecisionVector:
    return DecisionVector(round, tuple(EMPTY if s is None else s for s in slots))
