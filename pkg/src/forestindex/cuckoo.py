"""Cuckoo-filter index mapping entity labels to forest addresses.

The structure is a partial-key cuckoo filter extended in three ways:

* every stored fingerprint carries a head record holding the full label,
  an access counter (the entry's "temperature"), and a linked list of
  fixed-capacity address blocks listing every occurrence of the entity;
* bucket slots are kept in descending temperature order, so frequently
  queried entities are found on the first fingerprint comparison;
* the table doubles its bucket count when load crosses a threshold,
  rehashing from the stored labels so lookups never degrade.

Lookups verify the full label behind any fingerprint match, which makes
query answers exact even though fingerprints may collide.
"""

from __future__ import annotations

import enum
import json
import random
import zlib
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from .forest import NodeAddress

FINGERPRINT_BITS = 12
FINGERPRINT_MASK = (1 << FINGERPRINT_BITS) - 1
BUCKET_SLOTS = 4
BLOCK_CAPACITY = 8
DEFAULT_BUCKET_COUNT = 1024
DEFAULT_MAX_KICKS = 500
DEFAULT_GROW_THRESHOLD = 0.85

# Salt prefixes for the two crc32 halves of the 64-bit label hash. Fixed
# values published here so index layouts reproduce across runs and hosts.
_SALT_HI = b"\x9e\x37\x79\xb9"
_SALT_LO = b"\x85\xeb\xca\x6b"


class ExpansionFailedError(RuntimeError):
    """Rehashing could not place every entry even after a second doubling."""


def _hash64_bytes(data: bytes) -> int:
    return (zlib.crc32(_SALT_HI + data) << 32) | zlib.crc32(_SALT_LO + data)


def hash64(label: str) -> int:
    """Primary 64-bit hash of a label. Deterministic across runs."""
    return _hash64_bytes(label.encode("utf-8"))


def fingerprint_of(h64: int) -> int:
    """12-bit fingerprint from the high bits of the primary hash.

    Zero is reserved as the empty-slot sentinel, so a zero fingerprint is
    remapped to 1 (a deliberate, tiny bias).
    """
    fp = (h64 >> 52) & FINGERPRINT_MASK
    return fp or 1


def fingerprint(label: str) -> int:
    return fingerprint_of(hash64(label))


# Partner offsets: hash of the fingerprint value itself, one per possible
# fingerprint. i2 = (i1 XOR _FP_XOR[fp]) mod bucket_count, which is its own
# inverse for power-of-two bucket counts, so an entry found in either
# candidate bucket can always recover the other.
_FP_XOR = tuple(
    _hash64_bytes(value.to_bytes(2, "big")) for value in range(FINGERPRINT_MASK + 1)
)


def candidate_indices(label: str, bucket_count: int) -> tuple[int, int]:
    """Both candidate bucket indices for a label. bucket_count: power of 2."""
    mask = bucket_count - 1
    h = hash64(label)
    i1 = h & mask
    fp = fingerprint_of(h)
    return i1, (i1 ^ _FP_XOR[fp]) & mask


class AddressBlock:
    """Fixed-capacity chunk of a head's address list."""

    __slots__ = ("addresses", "next")

    def __init__(self):
        self.addresses: list[NodeAddress] = []
        self.next: AddressBlock | None = None

    @property
    def used(self) -> int:
        return len(self.addresses)


class BlockListHead:
    """Per-entity record: label, temperature, and the address block chain.

    Blocks are append-only; every block except possibly the last is full.
    The full label lives here so lookups can reject fingerprint collisions
    and expansion can rehash without an external label store.
    """

    __slots__ = ("label", "temperature", "first", "_last", "count")

    def __init__(self, label: str):
        self.label = label
        self.temperature = 0
        self.first: AddressBlock | None = None
        self._last: AddressBlock | None = None
        self.count = 0

    def addresses(self) -> list[NodeAddress]:
        """All addresses in append order."""
        out: list[NodeAddress] = []
        block = self.first
        while block is not None:
            out.extend(block.addresses)
            block = block.next
        return out

    def iter_addresses(self) -> Iterator[NodeAddress]:
        block = self.first
        while block is not None:
            yield from block.addresses
            block = block.next

    def contains(self, addr: NodeAddress) -> bool:
        block = self.first
        while block is not None:
            if addr in block.addresses:
                return True
            block = block.next
        return False

    def _append_new(self, addr: NodeAddress) -> None:
        # Caller guarantees addr is not already in the chain.
        last = self._last
        if last is None or len(last.addresses) == BLOCK_CAPACITY:
            block = AddressBlock()
            if last is None:
                self.first = block
            else:
                last.next = block
            self._last = block
            last = block
        last.addresses.append(addr)
        self.count += 1

    def block_count(self) -> int:
        n = 0
        block = self.first
        while block is not None:
            n += 1
            block = block.next
        return n


def append_address(head: BlockListHead, addr: NodeAddress) -> bool:
    """Append one occurrence address; duplicates are a no-op.

    Returns True when the address was new.
    """
    if head.contains(addr):
        return False
    head._append_new(addr)
    return True


class InsertResult(enum.Enum):
    INSERTED = "inserted"
    APPENDED_EXISTING = "appended_existing"
    FAILED = "failed"


@dataclass(frozen=True)
class IndexStats:
    bucket_count: int
    entry_count: int
    load_factor: float
    total_addresses: int
    kick_histogram: dict[int, int]


class CuckooIndex:
    """Temperature-sorted cuckoo filter over entity labels.

    Each occupied slot is a (fingerprint, head) pair. A label's two
    candidate buckets come from ``candidate_indices``; displacement on
    insert follows the classic random-victim kick-out walk, except that a
    placement journal lets a failed insert restore the exact prior state,
    so no previously stored entity is ever lost.

    With ``sort_on_touch`` enabled (the default), buckets stay sorted by
    descending temperature: new entries are placed at their sorted
    position and each lookup bubbles the hit entry past colder ones.
    Disabling it keeps insertion order and makes touches pure counters,
    which is the ablation baseline.
    """

    def __init__(
        self,
        bucket_count: int = DEFAULT_BUCKET_COUNT,
        max_kicks: int = DEFAULT_MAX_KICKS,
        grow_threshold: float = DEFAULT_GROW_THRESHOLD,
        expansion_enabled: bool = True,
        sort_on_touch: bool = True,
        seed: int = 0,
    ):
        if bucket_count < 1 or bucket_count & (bucket_count - 1):
            raise ValueError("bucket_count must be a power of two")
        if not (0.0 < grow_threshold <= 1.0):
            raise ValueError("grow_threshold must be in (0, 1]")
        if max_kicks < 1:
            raise ValueError("max_kicks must be positive")
        self.bucket_count = bucket_count
        self.max_kicks = max_kicks
        self.grow_threshold = grow_threshold
        self.expansion_enabled = expansion_enabled
        self.sort_on_touch = sort_on_touch
        self.seed = seed
        self._rng = random.Random(seed)
        self._mask = bucket_count - 1
        self._buckets: list[list[tuple[int, BlockListHead]]] = [
            [] for _ in range(bucket_count)
        ]
        self.entry_count = 0
        self.slot_probes = 0  # cumulative slots examined by lookups
        self._kick_histogram: dict[int, int] = {}

    # -- placement ---------------------------------------------------

    def _sorted_pos(self, bucket: list[tuple[int, BlockListHead]], temp: int) -> int:
        # Descending temperature; equal temperatures keep arrival order.
        pos = len(bucket)
        while pos > 0 and bucket[pos - 1][1].temperature < temp:
            pos -= 1
        return pos

    def _place(self, index: int, entry: tuple[int, BlockListHead]) -> None:
        bucket = self._buckets[index]
        if self.sort_on_touch:
            bucket.insert(self._sorted_pos(bucket, entry[1].temperature), entry)
        else:
            bucket.append(entry)

    def _find(self, label: str, fp: int, i1: int, i2: int) -> BlockListHead | None:
        for fpx, head in self._buckets[i1]:
            if fpx == fp and head.label == label:
                return head
        if i2 != i1:
            for fpx, head in self._buckets[i2]:
                if fpx == fp and head.label == label:
                    return head
        return None

    def _place_with_kicks(self, entry: tuple[int, BlockListHead], i1: int, i2: int) -> int:
        """Place entry, kicking victims as needed.

        Returns the number of kicks used, or -1 after undoing everything
        when the relocation budget runs out.
        """
        buckets = self._buckets
        if len(buckets[i1]) < BUCKET_SLOTS:
            self._place(i1, entry)
            return 0
        if i2 != i1 and len(buckets[i2]) < BUCKET_SLOTS:
            self._place(i2, entry)
            return 0

        rng = self._rng
        mask = self._mask
        index = rng.choice((i1, i2))
        journal: list[tuple[int, tuple[int, BlockListHead], int, tuple[int, BlockListHead]]] = []
        for kick in range(self.max_kicks):
            bucket = buckets[index]
            victim_pos = rng.randrange(BUCKET_SLOTS)
            victim = bucket.pop(victim_pos)
            self._place(index, entry)
            journal.append((index, victim, victim_pos, entry))
            entry = victim
            index = (index ^ _FP_XOR[victim[0]]) & mask
            if len(buckets[index]) < BUCKET_SLOTS:
                self._place(index, entry)
                return kick + 1
        # Budget exhausted: the last victim is still in hand. Unwind the
        # journal so the table returns to its exact pre-insert state.
        for index, victim, victim_pos, placed in reversed(journal):
            bucket = buckets[index]
            bucket.remove(placed)
            bucket.insert(victim_pos, victim)
        return -1

    def insert(self, label: str, addresses: Iterable[NodeAddress]) -> InsertResult:
        """Insert an entity with its occurrence addresses.

        When the label is already present the new addresses are appended
        to its block list (duplicates skipped) and no slot changes. A
        fresh entity is placed with up to ``max_kicks`` displacements;
        if that fails and expansion is enabled, the table doubles once
        and the placement is retried before giving up.
        """
        addrs = list(dict.fromkeys(addresses))
        if not addrs:
            raise ValueError("insert requires at least one address")
        h = hash64(label)
        fp = fingerprint_of(h)
        i1 = h & self._mask
        i2 = (i1 ^ _FP_XOR[fp]) & self._mask

        existing = self._find(label, fp, i1, i2)
        if existing is not None:
            present = set(existing.addresses())
            for addr in addrs:
                if addr not in present:
                    existing._append_new(addr)
            return InsertResult.APPENDED_EXISTING

        head = BlockListHead(label)
        for addr in addrs:
            head._append_new(addr)
        kicks = self._place_with_kicks((fp, head), i1, i2)
        if kicks < 0:
            if not self.expansion_enabled:
                return InsertResult.FAILED
            self.expand()
            i1 = h & self._mask
            i2 = (i1 ^ _FP_XOR[fp]) & self._mask
            kicks = self._place_with_kicks((fp, head), i1, i2)
            if kicks < 0:
                return InsertResult.FAILED
        self._kick_histogram[kicks] = self._kick_histogram.get(kicks, 0) + 1
        self.entry_count += 1
        if (
            self.expansion_enabled
            and self.entry_count > self.grow_threshold * self.bucket_count * BUCKET_SLOTS
        ):
            self.expand()
        return InsertResult.INSERTED

    # -- lookup ------------------------------------------------------

    def lookup_and_touch(self, label: str) -> BlockListHead | None:
        """Find a label, increment its temperature, restore bucket order.

        Probes bucket i1 then i2 in stored slot order. A fingerprint match
        with a different stored label is skipped, so answers are exact.
        On a hit the entry's temperature rises by one and, when sorting is
        enabled, the entry bubbles toward slot 0 past strictly colder
        entries.
        """
        h = hash64(label)
        fp = fingerprint_of(h)
        i1 = h & self._mask
        i2 = (i1 ^ _FP_XOR[fp]) & self._mask
        probes = 0
        bucket = self._buckets[i1]
        pos = -1
        for pos, (fpx, head) in enumerate(bucket):
            probes += 1
            if fpx == fp and head.label == label:
                break
        else:
            head = None
        if head is None and i2 != i1:
            bucket = self._buckets[i2]
            for pos, (fpx, head) in enumerate(bucket):
                probes += 1
                if fpx == fp and head.label == label:
                    break
            else:
                head = None
        self.slot_probes += probes
        if head is None:
            return None
        temp = head.temperature + 1
        head.temperature = temp
        if self.sort_on_touch:
            while pos > 0 and bucket[pos - 1][1].temperature < temp:
                bucket[pos - 1], bucket[pos] = bucket[pos], bucket[pos - 1]
                pos -= 1
        return head

    def lookup(self, label: str) -> BlockListHead | None:
        """Read-only lookup: no temperature change, no reordering."""
        h = hash64(label)
        fp = fingerprint_of(h)
        i1 = h & self._mask
        i2 = (i1 ^ _FP_XOR[fp]) & self._mask
        return self._find(label, fp, i1, i2)

    def raw_fingerprint_match(self, label: str) -> bool:
        """Whether any candidate slot matches on fingerprint alone.

        Skips the label verification on purpose; this measures the raw
        filter false-positive behavior that the label check then hides.
        """
        h = hash64(label)
        fp = fingerprint_of(h)
        i1 = h & self._mask
        i2 = (i1 ^ _FP_XOR[fp]) & self._mask
        for fpx, _head in self._buckets[i1]:
            if fpx == fp:
                return True
        if i2 != i1:
            for fpx, _head in self._buckets[i2]:
                if fpx == fp:
                    return True
        return False

    def candidate_fill(self, label: str) -> int:
        """Occupied slots across the label's candidate buckets.

        This is the number of fingerprint comparisons a lookup of the
        label would perform in the worst case (8 when both candidate
        buckets are full, fewer at lower occupancy or when the two
        candidates coincide).
        """
        h = hash64(label)
        fp = fingerprint_of(h)
        i1 = h & self._mask
        i2 = (i1 ^ _FP_XOR[fp]) & self._mask
        if i2 == i1:
            return len(self._buckets[i1])
        return len(self._buckets[i1]) + len(self._buckets[i2])

    def remove(self, label: str) -> bool:
        """Delete a label's entry and release its block list."""
        h = hash64(label)
        fp = fingerprint_of(h)
        i1 = h & self._mask
        i2 = (i1 ^ _FP_XOR[fp]) & self._mask
        candidates = (i1,) if i2 == i1 else (i1, i2)
        for bi in candidates:
            bucket = self._buckets[bi]
            for pos, (fpx, head) in enumerate(bucket):
                if fpx == fp and head.label == label:
                    del bucket[pos]
                    head.first = head._last = None
                    head.count = 0
                    self.entry_count -= 1
                    return True
        return False

    # -- growth ------------------------------------------------------

    def expand(self) -> None:
        """Double the bucket count and rehash every entry from its label.

        Head records (and therefore temperatures and address chains) are
        carried over untouched. If some entry cannot be placed even in the
        doubled table, a second doubling is attempted from the original
        table before ExpansionFailedError is raised.
        """
        for factor in (2, 4):
            if self._rehash_into(self.bucket_count * factor):
                return
        raise ExpansionFailedError(
            f"could not rehash {self.entry_count} entries into "
            f"{self.bucket_count * 4} buckets"
        )

    def _rehash_into(self, new_count: int) -> bool:
        old_buckets = self._buckets
        old_mask = self._mask
        new_buckets: list[list[tuple[int, BlockListHead]]] = [
            [] for _ in range(new_count)
        ]
        self._buckets = new_buckets
        self._mask = new_count - 1
        for bucket in old_buckets:
            for entry in bucket:
                fp, head = entry
                h = hash64(head.label)
                i1 = h & self._mask
                i2 = (i1 ^ _FP_XOR[fp]) & self._mask
                if self._place_with_kicks(entry, i1, i2) < 0:
                    self._buckets = old_buckets
                    self._mask = old_mask
                    return False
        self.bucket_count = new_count
        return True

    # -- inspection --------------------------------------------------

    def load_factor(self) -> float:
        return self.entry_count / (self.bucket_count * BUCKET_SLOTS)

    def stats(self) -> IndexStats:
        total = 0
        for bucket in self._buckets:
            for _fp, head in bucket:
                total += head.count
        return IndexStats(
            bucket_count=self.bucket_count,
            entry_count=self.entry_count,
            load_factor=self.load_factor(),
            total_addresses=total,
            kick_histogram=dict(sorted(self._kick_histogram.items())),
        )

    def items(self) -> Iterator[tuple[str, BlockListHead]]:
        """(label, head) pairs in bucket order."""
        for bucket in self._buckets:
            for _fp, head in bucket:
                yield head.label, head

    def assert_invariants(self) -> None:
        """Full-scan audit used by tests; raises AssertionError on damage."""
        count = 0
        for bi, bucket in enumerate(self._buckets):
            assert len(bucket) <= BUCKET_SLOTS, f"bucket {bi} over capacity"
            if self.sort_on_touch:
                temps = [head.temperature for _fp, head in bucket]
                assert temps == sorted(temps, reverse=True), (
                    f"bucket {bi} out of temperature order: {temps}"
                )
            for fp, head in bucket:
                count += 1
                assert 1 <= fp <= FINGERPRINT_MASK, f"fingerprint {fp} out of range"
                assert fp == fingerprint(head.label), "stored fingerprint mismatch"
                i1, i2 = candidate_indices(head.label, self.bucket_count)
                assert bi in (i1, i2), (
                    f"entry {head.label!r} in bucket {bi}, candidates {(i1, i2)}"
                )
                seen: set[NodeAddress] = set()
                block = head.first
                total = 0
                while block is not None:
                    assert block.addresses, "empty block in chain"
                    if block.next is not None:
                        assert len(block.addresses) == BLOCK_CAPACITY, (
                            "non-final block not full"
                        )
                    assert len(block.addresses) <= BLOCK_CAPACITY
                    for addr in block.addresses:
                        assert addr not in seen, f"duplicate address {addr}"
                        seen.add(addr)
                    total += len(block.addresses)
                    block = block.next
                assert total == head.count, "head count disagrees with chain"
                assert total > 0, "entry with no addresses"
        assert count == self.entry_count, "entry_count disagrees with table"

    # -- persistence -------------------------------------------------

    def to_snapshot(self) -> dict:
        entries = sorted(
            (
                (head.label, head.temperature, [[a, b] for a, b in head.iter_addresses()])
                for _label, head in self.items()
            ),
            key=lambda e: e[0],
        )
        return {
            "format": "forestindex-cuckoo-v1",
            "bucket_count": self.bucket_count,
            "max_kicks": self.max_kicks,
            "grow_threshold": self.grow_threshold,
            "expansion_enabled": self.expansion_enabled,
            "sort_on_touch": self.sort_on_touch,
            "seed": self.seed,
            "entries": entries,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_snapshot(), ensure_ascii=False, separators=(",", ":"))

    def dump(self, fh: IO[str]) -> None:
        fh.write(self.dumps())

    @classmethod
    def from_snapshot(cls, snap: dict) -> CuckooIndex:
        if snap.get("format") != "forestindex-cuckoo-v1":
            raise ValueError(f"unsupported snapshot format {snap.get('format')!r}")
        index = cls(
            bucket_count=snap["bucket_count"],
            max_kicks=snap["max_kicks"],
            grow_threshold=snap["grow_threshold"],
            expansion_enabled=snap["expansion_enabled"],
            sort_on_touch=snap["sort_on_touch"],
            seed=snap["seed"],
        )
        for label, temperature, addrs in snap["entries"]:
            result = index.insert(label, [NodeAddress(a, b) for a, b in addrs])
            if result != InsertResult.INSERTED:
                raise ValueError(f"snapshot entry {label!r} failed to load: {result}")
            head = index.lookup(label)
            head.temperature = temperature
        if index.sort_on_touch:
            for bucket in index._buckets:
                bucket.sort(key=lambda e: e[1].temperature, reverse=True)
        return index

    @classmethod
    def loads(cls, text: str) -> CuckooIndex:
        return cls.from_snapshot(json.loads(text))

    @classmethod
    def load(cls, fh: IO[str]) -> CuckooIndex:
        return cls.from_snapshot(json.load(fh))
