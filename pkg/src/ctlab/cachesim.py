"""Deterministic set-associative cache model with true-LRU replacement.

Addresses are plain byte addresses. A block number is address divided by
line_size; its set is block mod num_sets. Replacement state lives per
set as a most-recently-used-last list of block numbers, so equal blocks
are equal (tag, set) pairs and no separate tag math is needed.

run_encryption replays an AES access trace against a table layout,
optionally interleaving countermeasure accesses, and charges
hit_cycles/miss_cycles per access plus any flat disturbance cycles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .aes import TABLE_BYTES, TABLE_IDS


class LayoutError(ValueError):
    """Raised for addresses or indices outside the configured table regions."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class CacheConfig:
    line_size: int = 64
    num_sets: int = 64
    assoc: int = 4
    hit_cycles: int = 2
    miss_cycles: int = 50
    cold_flush_per_encryption: bool = True

    def __post_init__(self) -> None:
        if not _is_pow2(self.line_size):
            raise ValueError("line_size must be a power of two")
        if not _is_pow2(self.num_sets):
            raise ValueError("num_sets must be a power of two")
        if self.assoc < 1:
            raise ValueError("assoc must be at least 1")
        if self.hit_cycles < 0 or self.miss_cycles < 0:
            raise ValueError("cycle costs must be non-negative")

    @property
    def capacity_bytes(self) -> int:
        return self.line_size * self.num_sets * self.assoc


@dataclass(frozen=True)
class MemoryLayout:
    """Byte base addresses for Te0..Te4; each table occupies 1024 bytes."""

    bases: tuple[int, int, int, int, int]

    def __post_init__(self) -> None:
        regions = sorted((b, b + TABLE_BYTES) for b in self.bases)
        for b, _ in regions:
            if b < 0:
                raise LayoutError("table base addresses must be non-negative")
        for (_, end), (nxt, _) in zip(regions, regions[1:]):
            if nxt < end:
                raise LayoutError("table regions overlap")

    def element_address(self, table_id: int, index: int) -> int:
        if table_id not in TABLE_IDS:
            raise LayoutError(f"unknown table id {table_id}")
        if not 0 <= index < 256:
            raise LayoutError(f"table index {index} out of range")
        return self.bases[table_id] + 4 * index


PACKED_BASE = 0x40000

# Partition alignments: Te0 on 0x10, then each further table on the next
# 16x coarser boundary, giving every table a private address stripe.
PARTITION_BASES = (0x10, 0x1000, 0x10000, 0x100000, 0x1000000)


def packed_layout(base: int = PACKED_BASE) -> MemoryLayout:
    """Five tables contiguous at a 64-byte-aligned base."""
    if base % 64:
        raise LayoutError("packed base must be 64-byte aligned")
    return MemoryLayout(tuple(base + i * TABLE_BYTES for i in range(5)))


def partitioned_layout() -> MemoryLayout:
    """Each table isolated on its own progressively coarser alignment."""
    return MemoryLayout(PARTITION_BASES)


def layout_by_name(name: str) -> MemoryLayout:
    if name == "packed":
        return packed_layout()
    if name == "partitioned":
        return partitioned_layout()
    raise LayoutError(f"unknown layout {name!r}")


@dataclass
class SimResult:
    hits: int
    misses: int
    cycles: int

    @property
    def accesses(self) -> int:
        return self.hits + self.misses


class CacheState:
    """Mutable cache contents plus lifetime hit/miss statistics."""

    def __init__(self, config: CacheConfig) -> None:
        self.config = config
        self._line_shift = config.line_size.bit_length() - 1
        self._set_mask = config.num_sets - 1
        self.hits = 0
        self.misses = 0
        self._sets: list[list[int]] = [[] for _ in range(config.num_sets)]

    @property
    def accesses(self) -> int:
        return self.hits + self.misses

    def flush(self) -> None:
        """Drop all cached lines; statistics are preserved."""
        for s in self._sets:
            s.clear()

    def access(self, address: int) -> bool:
        """Touch one address; returns True on hit. LRU within the set."""
        block = address >> self._line_shift
        lru = self._sets[block & self._set_mask]
        if block in lru:
            lru.remove(block)
            lru.append(block)
            self.hits += 1
            return True
        lru.append(block)
        if len(lru) > self.config.assoc:
            lru.pop(0)
        self.misses += 1
        return False

    def access_all(self, addresses: list[int]) -> SimResult:
        """Touch a pre-resolved address list; returns the per-call delta."""
        h0, m0 = self.hits, self.misses
        shift, mask, assoc = self._line_shift, self._set_mask, self.config.assoc
        sets = self._sets
        hits = 0
        for address in addresses:
            block = address >> shift
            lru = sets[block & mask]
            if block in lru:
                lru.remove(block)
                lru.append(block)
                hits += 1
            else:
                lru.append(block)
                if len(lru) > assoc:
                    lru.pop(0)
        misses = len(addresses) - hits
        self.hits = h0 + hits
        self.misses = m0 + misses
        cfg = self.config
        return SimResult(hits, misses, hits * cfg.hit_cycles + misses * cfg.miss_cycles)

    def resident(self, address: int) -> bool:
        """Peek without touching; used by tests and diagnostics."""
        block = address >> self._line_shift
        return block in self._sets[block & self._set_mask]


def interleave_accesses(
    trace: list[tuple[int, int]], extra: list[tuple[int, int]]
) -> list[tuple[int, int]]:
    """Weave countermeasure accesses into an encryption trace.

    Extra accesses arrive as one flat fragment carrying equal blocks for
    the five main-loop iterations. Each block lands ahead of its
    iteration's lookups: rounds (1,2), (3,4), (5,6), (7,8) and finally
    round 9 plus the Te4 round, mirroring where the main loop runs.
    """
    if not extra:
        return trace
    if len(extra) % 5:
        raise ValueError("disturbance fragment must split across 5 injection points")
    step = len(extra) // 5
    merged: list[tuple[int, int]] = []
    for i in range(5):
        merged.extend(extra[i * step : (i + 1) * step])
        merged.extend(trace[i * 32 : (i + 1) * 32 if i < 4 else len(trace)])
    return merged


def run_encryption(
    state: CacheState,
    trace: list[tuple[int, int]],
    layout: MemoryLayout,
    disturbance=None,
    extra_cycles: int = 0,
) -> SimResult:
    """Replay one encryption's table accesses through the cache.

    disturbance is any object carrying extra_accesses, extra_cycles and
    layout_override (or None). Flushes first when the config says each
    encryption starts cold. cycles = hits*hit + misses*miss + extras.
    """
    cfg = state.config
    if cfg.cold_flush_per_encryption:
        state.flush()
    extra = extra_cycles
    accesses = trace
    if disturbance is not None:
        if disturbance.layout_override is not None:
            layout = layout_by_name(disturbance.layout_override)
        if disturbance.extra_accesses:
            accesses = interleave_accesses(trace, disturbance.extra_accesses)
        extra += disturbance.extra_cycles
    bases = layout.bases
    addresses = []
    push = addresses.append
    for tid, idx in accesses:
        if not 0 <= idx < 256 or tid not in TABLE_IDS:
            raise LayoutError(f"trace entry ({tid}, {idx}) outside table regions")
        push(bases[tid] + 4 * idx)
    res = state.access_all(addresses)
    res.cycles += extra
    return res
