"""Brute-force search over reduced key spaces, with rate benchmarking.

Candidate keys are enumerated in a canonical mixed-radix order (position
0 most significant, best-scored value first) and tested in bulk with a
vectorized encryption kernel.  Any key that survives the bulk screen is
re-verified pair-by-pair with the scalar cipher before being accepted,
so the two implementations cross-check each other.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import aes
from .attack import CandidateReport

log = logging.getLogger("ctlab.keysearch")

DEFAULT_CHUNK = 1 << 16
DEFAULT_FIT_THRESHOLD = 10**8

# Wall-clock measurements of this search on a slower baseline machine,
# kept as a fixture for the rate model.  The flat 0.01-0.02 s readings
# below 10^6 are timer-floor artifacts, which is why the default fit
# threshold starts at 10^8.
REFERENCE_SEARCH_TIMINGS: tuple[tuple[int, float], ...] = (
    (10**2, 0.01),
    (10**3, 0.02),
    (10**4, 0.02),
    (10**5, 0.02),
    (10**6, 0.09),
    (10**7, 0.53),
    (10**8, 4.58),
    (10**9, 40.23),
    (10**10, 348.23),
    (10**11, 2977.83),
    (10**12, 24512.69),
)
REFERENCE_ALPHA = 2.4e-8  # gradient of the reference timings, seconds per key


class SearchError(RuntimeError):
    """Search could not be carried out as requested."""


class FitError(ValueError):
    """No usable points for the rate fit."""


@dataclass(frozen=True)
class SearchModel:
    """Linear search-time model: seconds = alpha * keyspace."""

    alpha: float
    fit_points: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class SearchOutcome:
    found: bytes | None
    keys_tested: int
    elapsed: float


_SBOX32 = np.array(aes.SBOX, dtype=np.uint32)
_TE = tuple(np.array(aes.TTABLES.table(t), dtype=np.uint32) for t in range(4))
_RCON32 = np.array([r << 24 for r in aes.RCON], dtype=np.uint32)
_B8 = np.uint32(8)
_B16 = np.uint32(16)
_B24 = np.uint32(24)
_MASK = np.uint32(0xFF)


def expand_batch(keys: np.ndarray) -> np.ndarray:
    """Vectorized key schedule: (n, 16) uint8 keys -> (n, 44) uint32 words."""
    if keys.ndim != 2 or keys.shape[1] != 16 or keys.dtype != np.uint8:
        raise ValueError("keys must be an (n, 16) uint8 array")
    k = keys.astype(np.uint32)
    w = np.empty((keys.shape[0], 44), dtype=np.uint32)
    for i in range(4):
        w[:, i] = (k[:, 4 * i] << _B24) | (k[:, 4 * i + 1] << _B16) | (
            k[:, 4 * i + 2] << _B8
        ) | k[:, 4 * i + 3]
    for i in range(4, 44):
        t = w[:, i - 1]
        if i % 4 == 0:
            t = (t << _B8) | (t >> _B24)
            t = (
                (_SBOX32[(t >> _B24) & _MASK] << _B24)
                | (_SBOX32[(t >> _B16) & _MASK] << _B16)
                | (_SBOX32[(t >> _B8) & _MASK] << _B8)
                | _SBOX32[t & _MASK]
            )
            t = t ^ _RCON32[i // 4 - 1]
        w[:, i] = w[:, i - 4] ^ t
    return w


def encrypt_batch(plaintext: bytes, schedule: np.ndarray) -> np.ndarray:
    """Encrypt one plaintext under many schedules; returns (n, 4) uint32
    ciphertext words."""
    if len(plaintext) != 16:
        raise ValueError("plaintext must be 16 bytes")
    p = [int.from_bytes(plaintext[4 * i : 4 * i + 4], "big") for i in range(4)]
    s = [np.uint32(p[i]) ^ schedule[:, i] for i in range(4)]
    te0, te1, te2, te3 = _TE
    for rnd in range(1, 10):
        base = 4 * rnd
        s = [
            te0[s[i] >> _B24]
            ^ te1[(s[(i + 1) & 3] >> _B16) & _MASK]
            ^ te2[(s[(i + 2) & 3] >> _B8) & _MASK]
            ^ te3[s[(i + 3) & 3] & _MASK]
            ^ schedule[:, base + i]
            for i in range(4)
        ]
    out = np.empty((schedule.shape[0], 4), dtype=np.uint32)
    for i in range(4):
        out[:, i] = (
            (_SBOX32[s[i] >> _B24] << _B24)
            | (_SBOX32[(s[(i + 1) & 3] >> _B16) & _MASK] << _B16)
            | (_SBOX32[(s[(i + 2) & 3] >> _B8) & _MASK] << _B8)
            | _SBOX32[s[(i + 3) & 3] & _MASK]
        ) ^ schedule[:, 40 + i]
    return out


def _ordered_values(cands: CandidateReport, order: str) -> list[tuple[int, ...]]:
    if order == "score":
        return [tuple(vals) for vals in cands.values]
    if order == "lex":
        return [tuple(sorted(vals)) for vals in cands.values]
    raise ValueError(f"unknown enumeration order {order!r}")


def _chunk_keys(
    values: list[tuple[int, ...]], sizes: list[int], start: int, count: int
) -> np.ndarray:
    # mixed-radix decode: position 15 is the fastest-varying digit
    idx = np.uint64(start) + np.arange(count, dtype=np.uint64)
    out = np.empty((count, 16), dtype=np.uint8)
    for j in range(15, -1, -1):
        radix = np.uint64(sizes[j])
        digit = (idx % radix).astype(np.int64)
        out[:, j] = np.asarray(values[j], dtype=np.uint8)[digit]
        idx //= radix
    return out


def _check_pairs(pairs) -> list[tuple[bytes, bytes]]:
    if not pairs:
        raise ValueError("at least one (plaintext, ciphertext) pair is required")
    checked = []
    for pt, ct in pairs:
        if len(pt) != 16 or len(ct) != 16:
            raise ValueError("verification pairs must be 16-byte pt/ct")
        checked.append((bytes(pt), bytes(ct)))
    return checked


def _verify_scalar(key: bytes, pairs: list[tuple[bytes, bytes]]) -> bool:
    rk = aes.expand_key(key)
    return all(aes.encrypt(pt, rk) == ct for pt, ct in pairs)


def brute_force(
    cands: CandidateReport,
    pairs,
    *,
    order: str = "score",
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> SearchOutcome:
    """Search the candidate product for a key matching every pair.

    Deterministic regardless of ``threads``: the accepted key is the
    first full match in canonical enumeration order, and keys_tested is
    its 1-based rank (or the whole space size when nothing matches).
    """
    pairs = _check_pairs(pairs)
    if len(pairs) < 2:
        log.warning("single verification pair; a second removes any false-positive doubt")
    if threads < 1 or chunk_size < 1:
        raise ValueError("threads and chunk_size must be positive")
    values = _ordered_values(cands, order)
    sizes = [len(v) for v in values]
    total = math.prod(sizes)
    started = time.perf_counter()

    pt0, ct0 = pairs[0]
    expected = np.array(
        [int.from_bytes(ct0[4 * i : 4 * i + 4], "big") for i in range(4)],
        dtype=np.uint32,
    )

    def scan(start: int, count: int) -> list[tuple[int, bytes]]:
        keys = _chunk_keys(values, sizes, start, count)
        words = encrypt_batch(pt0, expand_batch(keys))
        matching = np.nonzero((words == expected).all(axis=1))[0]
        return [(start + int(i), keys[i].tobytes()) for i in matching]

    def chunks():
        start = 0
        while start < total:
            if start >= 1 << 62:
                raise SearchError("key space too large to enumerate exhaustively")
            count = min(chunk_size, total - start)
            yield start, count
            start += count

    def settle(hits: list[tuple[int, bytes]]) -> SearchOutcome | None:
        for rank, key in sorted(hits):
            if _verify_scalar(key, pairs):
                return SearchOutcome(key, rank + 1, time.perf_counter() - started)
        return None

    chunk_iter = chunks()
    if threads == 1:
        for start, count in chunk_iter:
            outcome = settle(scan(start, count))
            if outcome is not None:
                return outcome
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            while True:
                wave = [c for _, c in zip(range(threads), chunk_iter)]
                if not wave:
                    break
                hits: list[tuple[int, bytes]] = []
                for part in pool.map(lambda c: scan(*c), wave):
                    hits.extend(part)
                outcome = settle(hits)
                if outcome is not None:
                    return outcome
    return SearchOutcome(None, total, time.perf_counter() - started)


_BENCH_KEY = bytes([0xFF]) * 16
_BENCH_PT = bytes(range(16))


def _no_match_space(size: int) -> CandidateReport:
    """A candidate product of exactly ``size`` keys, none of them _BENCH_KEY."""
    if size < 1:
        raise SearchError("size must be >= 1")
    factors: list[int] = []
    remaining = size
    divisor = 2
    while divisor * divisor <= remaining:
        while remaining % divisor == 0:
            factors.append(divisor)
            remaining //= divisor
        divisor += 1
    if remaining > 1:
        factors.append(remaining)
    radices = [1] * 16
    for f in sorted(factors, reverse=True):
        packed = False
        for j in range(16):
            if radices[j] * f <= 256:
                radices[j] *= f
                packed = True
                break
        if not packed:
            raise SearchError(f"cannot shape a key space of size {size}")
    if all(r == 256 for r in radices):
        raise SearchError("full key space cannot be made match-free")
    values = tuple(tuple(range(r)) for r in radices)  # 0xFF never included
    scores = tuple(tuple(float(r - i) for i in range(r)) for r in radices)
    return CandidateReport(values, scores)


def measure_search_rate(sizes, *, threads: int = 1) -> list[tuple[int, float]]:
    """Worst-case (no match) search wall time per key-space size."""
    schedule = aes.expand_key(_BENCH_KEY)
    second = bytes(reversed(_BENCH_PT))
    pairs = [
        (_BENCH_PT, aes.encrypt(_BENCH_PT, schedule)),
        (second, aes.encrypt(second, schedule)),
    ]
    points: list[tuple[int, float]] = []
    for raw in sizes:
        size = int(raw)
        outcome = brute_force(_no_match_space(size), pairs, threads=threads)
        if outcome.found is not None or outcome.keys_tested != size:
            raise SearchError("benchmark space unexpectedly produced a match")
        points.append((size, outcome.elapsed))
        log.info("bench size=%d elapsed=%.4fs (%.3g keys/s)",
                 size, outcome.elapsed, size / max(outcome.elapsed, 1e-9))
    return points


def fit_rate(points, min_size: float = DEFAULT_FIT_THRESHOLD) -> float:
    """Through-origin least squares on (size, seconds): Σxy / Σx²."""
    kept = [(s, t) for s, t in points if s >= min_size]
    if not kept:
        raise FitError(f"no points at or above size {min_size}")
    num = math.fsum(float(s) * t for s, t in kept)
    den = math.fsum(float(s) ** 2 for s, _ in kept)
    return num / den


def fit_model(points, min_size: float = DEFAULT_FIT_THRESHOLD) -> SearchModel:
    alpha = fit_rate(points, min_size)
    kept = tuple((int(s), float(t)) for s, t in points if s >= min_size)
    return SearchModel(alpha, kept)


def fit_residual_r2(points, alpha: float) -> float:
    """Through-origin coefficient of determination for the given slope."""
    xs = np.array([float(s) for s, _ in points])
    ys = np.array([t for _, t in points])
    residual = ys - alpha * xs
    total = float((ys**2).sum())
    if total == 0:
        raise FitError("all observations are zero")
    return 1.0 - float((residual**2).sum()) / total


def estimate_search_time(keyspace: int, alpha: float) -> float:
    if keyspace < 0:
        raise ValueError("keyspace must be non-negative")
    return alpha * float(keyspace)
