"""T-table AES-128 encryption core with an access-trace hook.

Word convention, fixed once for the whole package: state and round-key
words are big-endian 32-bit integers. Te0[x] packs the column
(2*S[x], S[x], S[x], 3*S[x]) with the 2*S[x] byte in the high lane, and
Te1..Te3 are successive 8-bit right rotations of Te0. Te4 replicates
S[x] into all four lanes and serves the final round.

Encryption only. Ten rounds, 44-word key schedule. When a trace sink is
supplied, every table lookup appends one (table_id, index) entry; one
encryption always produces exactly 160 entries (16 lookups per round for
rounds 1..9 on Te0..Te3, then 16 final-round Te4 lookups).
"""

from __future__ import annotations

from typing import NamedTuple

TE0, TE1, TE2, TE3, TE4 = 0, 1, 2, 3, 4
TABLE_IDS = (TE0, TE1, TE2, TE3, TE4)
TABLE_NAMES = ("Te0", "Te1", "Te2", "Te3", "Te4")
TABLE_BYTES = 1024          # 256 entries of 4 bytes each
TRACE_LEN = 160
ROUNDS = 10

SBOX = (
    0x63, 0x7C, 0x77, 0x7B, 0xF2, 0x6B, 0x6F, 0xC5, 0x30, 0x01, 0x67, 0x2B,
    0xFE, 0xD7, 0xAB, 0x76, 0xCA, 0x82, 0xC9, 0x7D, 0xFA, 0x59, 0x47, 0xF0,
    0xAD, 0xD4, 0xA2, 0xAF, 0x9C, 0xA4, 0x72, 0xC0, 0xB7, 0xFD, 0x93, 0x26,
    0x36, 0x3F, 0xF7, 0xCC, 0x34, 0xA5, 0xE5, 0xF1, 0x71, 0xD8, 0x31, 0x15,
    0x04, 0xC7, 0x23, 0xC3, 0x18, 0x96, 0x05, 0x9A, 0x07, 0x12, 0x80, 0xE2,
    0xEB, 0x27, 0xB2, 0x75, 0x09, 0x83, 0x2C, 0x1A, 0x1B, 0x6E, 0x5A, 0xA0,
    0x52, 0x3B, 0xD6, 0xB3, 0x29, 0xE3, 0x2F, 0x84, 0x53, 0xD1, 0x00, 0xED,
    0x20, 0xFC, 0xB1, 0x5B, 0x6A, 0xCB, 0xBE, 0x39, 0x4A, 0x4C, 0x58, 0xCF,
    0xD0, 0xEF, 0xAA, 0xFB, 0x43, 0x4D, 0x33, 0x85, 0x45, 0xF9, 0x02, 0x7F,
    0x50, 0x3C, 0x9F, 0xA8, 0x51, 0xA3, 0x40, 0x8F, 0x92, 0x9D, 0x38, 0xF5,
    0xBC, 0xB6, 0xDA, 0x21, 0x10, 0xFF, 0xF3, 0xD2, 0xCD, 0x0C, 0x13, 0xEC,
    0x5F, 0x97, 0x44, 0x17, 0xC4, 0xA7, 0x7E, 0x3D, 0x64, 0x5D, 0x19, 0x73,
    0x60, 0x81, 0x4F, 0xDC, 0x22, 0x2A, 0x90, 0x88, 0x46, 0xEE, 0xB8, 0x14,
    0xDE, 0x5E, 0x0B, 0xDB, 0xE0, 0x32, 0x3A, 0x0A, 0x49, 0x06, 0x24, 0x5C,
    0xC2, 0xD3, 0xAC, 0x62, 0x91, 0x95, 0xE4, 0x79, 0xE7, 0xC8, 0x37, 0x6D,
    0x8D, 0xD5, 0x4E, 0xA9, 0x6C, 0x56, 0xF4, 0xEA, 0x65, 0x7A, 0xAE, 0x08,
    0xBA, 0x78, 0x25, 0x2E, 0x1C, 0xA6, 0xB4, 0xC6, 0xE8, 0xDD, 0x74, 0x1F,
    0x4B, 0xBD, 0x8B, 0x8A, 0x70, 0x3E, 0xB5, 0x66, 0x48, 0x03, 0xF6, 0x0E,
    0x61, 0x35, 0x57, 0xB9, 0x86, 0xC1, 0x1D, 0x9E, 0xE1, 0xF8, 0x98, 0x11,
    0x69, 0xD9, 0x8E, 0x94, 0x9B, 0x1E, 0x87, 0xE9, 0xCE, 0x55, 0x28, 0xDF,
    0x8C, 0xA1, 0x89, 0x0D, 0xBF, 0xE6, 0x42, 0x68, 0x41, 0x99, 0x2D, 0x0F,
    0xB0, 0x54, 0xBB, 0x16,
)

RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)


class TTableSet(NamedTuple):
    te0: tuple[int, ...]
    te1: tuple[int, ...]
    te2: tuple[int, ...]
    te3: tuple[int, ...]
    te4: tuple[int, ...]

    def table(self, table_id: int) -> tuple[int, ...]:
        return self[table_id]


def xtime(b: int) -> int:
    """Multiply by x in GF(2^8) with the AES reduction polynomial."""
    b <<= 1
    if b & 0x100:
        b ^= 0x11B
    return b


def _ror8(w: int) -> int:
    return ((w >> 8) | (w << 24)) & 0xFFFFFFFF


def generate_ttables() -> TTableSet:
    """Derive Te0..Te4 from the S-box and xtime."""
    te0, te4 = [], []
    for x in range(256):
        s = SBOX[x]
        s2 = xtime(s)
        s3 = s2 ^ s
        te0.append((s2 << 24) | (s << 16) | (s << 8) | s3)
        te4.append((s << 24) | (s << 16) | (s << 8) | s)
    te1 = [_ror8(w) for w in te0]
    te2 = [_ror8(w) for w in te1]
    te3 = [_ror8(w) for w in te2]
    return TTableSet(tuple(te0), tuple(te1), tuple(te2), tuple(te3), tuple(te4))


TTABLES = generate_ttables()


def _check16(data: bytes, what: str) -> None:
    if not isinstance(data, (bytes, bytearray)) or len(data) != 16:
        raise ValueError(f"{what} must be exactly 16 bytes")


def _subword(w: int) -> int:
    return (
        (SBOX[(w >> 24) & 0xFF] << 24)
        | (SBOX[(w >> 16) & 0xFF] << 16)
        | (SBOX[(w >> 8) & 0xFF] << 8)
        | SBOX[w & 0xFF]
    )


def expand_key(key: bytes) -> list[int]:
    """Expand a 16-byte key into the 44-word round-key schedule."""
    _check16(key, "key")
    w = [int.from_bytes(key[i : i + 4], "big") for i in range(0, 16, 4)]
    for i in range(4, 44):
        t = w[i - 1]
        if i % 4 == 0:
            t = _subword(((t << 8) | (t >> 24)) & 0xFFFFFFFF) ^ (RCON[i // 4 - 1] << 24)
        w.append(w[i - 4] ^ t)
    return w


def encrypt(
    plaintext: bytes,
    round_keys: list[int],
    tables: TTableSet = TTABLES,
    trace: list[tuple[int, int]] | None = None,
) -> bytes:
    """Encrypt one block; optionally record every table lookup into trace.

    The trace sink is an append-only list. Passing None selects a
    lookup loop with no tracing code at all, so the untraced path pays
    nothing for the hook.
    """
    _check16(plaintext, "plaintext")
    if len(round_keys) != 44:
        raise ValueError("round_keys must hold 44 words")
    if trace is None:
        return _encrypt_plain(plaintext, round_keys, tables)
    return _encrypt_traced(plaintext, round_keys, tables, trace)


def _load_state(pt: bytes, rk: list[int]) -> tuple[int, int, int, int]:
    return (
        int.from_bytes(pt[0:4], "big") ^ rk[0],
        int.from_bytes(pt[4:8], "big") ^ rk[1],
        int.from_bytes(pt[8:12], "big") ^ rk[2],
        int.from_bytes(pt[12:16], "big") ^ rk[3],
    )


def _final_round(s0: int, s1: int, s2: int, s3: int, rk: list[int], te4) -> bytes:
    c0 = (
        (te4[(s0 >> 24) & 0xFF] & 0xFF000000)
        ^ (te4[(s1 >> 16) & 0xFF] & 0x00FF0000)
        ^ (te4[(s2 >> 8) & 0xFF] & 0x0000FF00)
        ^ (te4[s3 & 0xFF] & 0x000000FF)
        ^ rk[40]
    )
    c1 = (
        (te4[(s1 >> 24) & 0xFF] & 0xFF000000)
        ^ (te4[(s2 >> 16) & 0xFF] & 0x00FF0000)
        ^ (te4[(s3 >> 8) & 0xFF] & 0x0000FF00)
        ^ (te4[s0 & 0xFF] & 0x000000FF)
        ^ rk[41]
    )
    c2 = (
        (te4[(s2 >> 24) & 0xFF] & 0xFF000000)
        ^ (te4[(s3 >> 16) & 0xFF] & 0x00FF0000)
        ^ (te4[(s0 >> 8) & 0xFF] & 0x0000FF00)
        ^ (te4[s1 & 0xFF] & 0x000000FF)
        ^ rk[42]
    )
    c3 = (
        (te4[(s3 >> 24) & 0xFF] & 0xFF000000)
        ^ (te4[(s0 >> 16) & 0xFF] & 0x00FF0000)
        ^ (te4[(s1 >> 8) & 0xFF] & 0x0000FF00)
        ^ (te4[s2 & 0xFF] & 0x000000FF)
        ^ rk[43]
    )
    return b"".join(c.to_bytes(4, "big") for c in (c0, c1, c2, c3))


def _encrypt_plain(pt: bytes, rk: list[int], tables: TTableSet) -> bytes:
    te0, te1, te2, te3, te4 = tables
    s0, s1, s2, s3 = _load_state(pt, rk)
    k = 4
    for _ in range(ROUNDS - 1):
        t0 = te0[(s0 >> 24) & 0xFF] ^ te1[(s1 >> 16) & 0xFF] ^ te2[(s2 >> 8) & 0xFF] ^ te3[s3 & 0xFF] ^ rk[k]
        t1 = te0[(s1 >> 24) & 0xFF] ^ te1[(s2 >> 16) & 0xFF] ^ te2[(s3 >> 8) & 0xFF] ^ te3[s0 & 0xFF] ^ rk[k + 1]
        t2 = te0[(s2 >> 24) & 0xFF] ^ te1[(s3 >> 16) & 0xFF] ^ te2[(s0 >> 8) & 0xFF] ^ te3[s1 & 0xFF] ^ rk[k + 2]
        t3 = te0[(s3 >> 24) & 0xFF] ^ te1[(s0 >> 16) & 0xFF] ^ te2[(s1 >> 8) & 0xFF] ^ te3[s2 & 0xFF] ^ rk[k + 3]
        s0, s1, s2, s3 = t0, t1, t2, t3
        k += 4
    return _final_round(s0, s1, s2, s3, rk, te4)


def _encrypt_traced(
    pt: bytes, rk: list[int], tables: TTableSet, trace: list[tuple[int, int]]
) -> bytes:
    te0, te1, te2, te3, te4 = tables
    push = trace.append
    s0, s1, s2, s3 = _load_state(pt, rk)
    k = 4
    for _ in range(ROUNDS - 1):
        t = [0, 0, 0, 0]
        srow = (s0, s1, s2, s3)
        for col in range(4):
            i0 = (srow[col] >> 24) & 0xFF
            i1 = (srow[(col + 1) & 3] >> 16) & 0xFF
            i2 = (srow[(col + 2) & 3] >> 8) & 0xFF
            i3 = srow[(col + 3) & 3] & 0xFF
            push((TE0, i0))
            push((TE1, i1))
            push((TE2, i2))
            push((TE3, i3))
            t[col] = te0[i0] ^ te1[i1] ^ te2[i2] ^ te3[i3] ^ rk[k + col]
        s0, s1, s2, s3 = t
        k += 4
    srow = (s0, s1, s2, s3)
    for col in range(4):
        push((TE4, (srow[col] >> 24) & 0xFF))
        push((TE4, (srow[(col + 1) & 3] >> 16) & 0xFF))
        push((TE4, (srow[(col + 2) & 3] >> 8) & 0xFF))
        push((TE4, srow[(col + 3) & 3] & 0xFF))
    return _final_round(s0, s1, s2, s3, rk, te4)


def first_round_indices(plaintext: bytes, key: bytes) -> list[int]:
    """Table indices leaked by round 1: index j is plaintext[j] XOR key[j]."""
    _check16(plaintext, "plaintext")
    _check16(key, "key")
    return [p ^ k for p, k in zip(plaintext, key)]
