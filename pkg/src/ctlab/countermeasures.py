"""Timing-attack countermeasures as pure disturbance generators.

Each countermeasure describes what it would add to one encryption:
flat extra cycles, extra table accesses to interleave, or a table
layout override. Ciphertexts are never touched, so every variant is
semantics-preserving by construction.

In native mode the same decisions drive real executed code (busy loops,
actual table reads) inside the timed window; see execute_disturbance.
Cache partitioning is simulation-only there: CPython offers no control
over where list storage lands, so the native variant is a documented
no-op while layout_override carries the semantics in the simulator.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from .aes import TTABLES, TTableSet


class Kind(enum.Enum):
    NONE = "none"
    RANDOM_LOOP = "random_loop"
    SPECIFIED_LOOP = "specified_loop"
    PREFETCH = "prefetch"
    CACHE_PARTITION = "cache_partition"


class StateError(ValueError):
    """Countermeasure state object does not match the requested kind."""


@dataclass(frozen=True)
class CostModel:
    """Flat cycle charges for disturbance work outside the cache model."""

    rng_cycles: int = 3800       # one PRNG draw
    loop_iter_cycles: int = 7    # one dummy loop iteration
    div_cycles: int = 20         # one integer division

    def __post_init__(self) -> None:
        if min(self.rng_cycles, self.loop_iter_cycles, self.div_cycles) < 0:
            raise ValueError("cycle costs must be non-negative")


RANDOM_LOOP_BOUND = 20

SPECIFIED_SEED = 1777
SPECIFIED_DIVISOR = 17
SPECIFIED_RESET_BELOW = 6

PREFETCH_WINDOW = 16


@dataclass
class SpecifiedLoopState:
    gen: int = SPECIFIED_SEED
    divisor: int = SPECIFIED_DIVISOR
    reset_below: int = SPECIFIED_RESET_BELOW


@dataclass
class PrefetchState:
    window_start: int = 0

    def __post_init__(self) -> None:
        if self.window_start % PREFETCH_WINDOW or not 0 <= self.window_start < 256:
            raise ValueError("window_start must be a multiple of 16 below 256")


@dataclass
class DisturbanceReport:
    extra_cycles: int = 0
    extra_accesses: list[tuple[int, int]] = field(default_factory=list)
    layout_override: str | None = None


def random_loop_next(prng: random.Random) -> int:
    """Draw the per-encryption dummy-loop iteration count, 0..19."""
    return prng.randrange(RANDOM_LOOP_BOUND)


def specified_loop_next(state: SpecifiedLoopState) -> int:
    """Advance the deterministic loop-count generator.

    Each call divides the generator by 17 (truncating). A quotient below
    6 reloads the seed value and yields a zero count, so the emitted
    sequence is 104, 6, 0 repeating.
    """
    nxt = state.gen // state.divisor
    if nxt < state.reset_below:
        state.gen = SPECIFIED_SEED
        return 0
    state.gen = nxt
    return nxt


def prefetch_next(state: PrefetchState) -> list[tuple[int, int]]:
    """Return the current 16-entry window across Te0..Te3, then advance.

    One window is 64 accesses (16 consecutive indices on each of the
    four main-round tables); 16 consecutive windows sweep every index
    of every table exactly once.
    """
    start = state.window_start
    window = [
        (tid, (start + i) % 256) for tid in range(4) for i in range(PREFETCH_WINDOW)
    ]
    state.window_start = (start + PREFETCH_WINDOW) % 256
    return window


def random_loop_cycles(n: int, cost: CostModel) -> int:
    return cost.rng_cycles + n * cost.loop_iter_cycles


def specified_loop_cycles(count: int, cost: CostModel) -> int:
    return cost.div_cycles + count * cost.loop_iter_cycles


def make_state(kind: Kind):
    """Fresh per-server countermeasure state; None for stateless kinds."""
    if kind is Kind.SPECIFIED_LOOP:
        return SpecifiedLoopState()
    if kind is Kind.PREFETCH:
        return PrefetchState()
    return None


def _check_state(kind: Kind, state, expected: type | None):
    if expected is None:
        if state is not None:
            raise StateError(f"{kind.value} takes no state, got {type(state).__name__}")
        return None
    if not isinstance(state, expected):
        raise StateError(f"{kind.value} requires {expected.__name__}")
    return state


def apply(
    kind: Kind,
    state=None,
    cost: CostModel = CostModel(),
    prng: random.Random | None = None,
) -> DisturbanceReport:
    """Produce one encryption's disturbance for the given countermeasure."""
    if kind is Kind.NONE:
        _check_state(kind, state, None)
        return DisturbanceReport()
    if kind is Kind.RANDOM_LOOP:
        _check_state(kind, state, None)
        if prng is None:
            raise StateError("random_loop requires a PRNG")
        n = random_loop_next(prng)
        return DisturbanceReport(extra_cycles=random_loop_cycles(n, cost))
    if kind is Kind.SPECIFIED_LOOP:
        st = _check_state(kind, state, SpecifiedLoopState)
        count = specified_loop_next(st)
        return DisturbanceReport(extra_cycles=specified_loop_cycles(count, cost))
    if kind is Kind.PREFETCH:
        st = _check_state(kind, state, PrefetchState)
        accesses: list[tuple[int, int]] = []
        for _ in range(5):  # once per main-loop iteration
            accesses.extend(prefetch_next(st))
        return DisturbanceReport(extra_accesses=accesses)
    if kind is Kind.CACHE_PARTITION:
        _check_state(kind, state, None)
        return DisturbanceReport(layout_override="partitioned")
    raise StateError(f"unknown countermeasure kind {kind!r}")


def execute_disturbance(
    kind: Kind,
    state=None,
    prng: random.Random | None = None,
    tables: TTableSet = TTABLES,
) -> None:
    """Run the countermeasure's real work for native timing.

    The busy loops and table reads execute here so a hardware timer sees
    them; the decisions (loop counts, window positions) are shared with
    apply() through the same helpers.
    """
    if kind is Kind.NONE or kind is Kind.CACHE_PARTITION:
        return
    if kind is Kind.RANDOM_LOOP:
        if prng is None:
            raise StateError("random_loop requires a PRNG")
        n = random_loop_next(prng)
        acc = 0
        for i in range(n):
            acc += i
        return
    if kind is Kind.SPECIFIED_LOOP:
        st = _check_state(kind, state, SpecifiedLoopState)
        count = specified_loop_next(st)
        acc = 0
        for i in range(count):
            acc += i
        return
    if kind is Kind.PREFETCH:
        st = _check_state(kind, state, PrefetchState)
        sink = [0] * PREFETCH_WINDOW
        for _ in range(5):
            for tid, idx in prefetch_next(st):
                sink[idx % PREFETCH_WINDOW] = tables[tid][idx]
        return
    raise StateError(f"unknown countermeasure kind {kind!r}")
