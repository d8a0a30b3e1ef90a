"""UDP timing channel: wire format, victim server, measurement client.

Wire format (datagrams):
  request   = type(1) || plaintext(16) || zero padding to packet_size
  response  = (type | 0x80)(1) || plaintext echo(16) || payload
  payload   : type 0x01 -> cycles as 8-byte little-endian unsigned
              type 0x02 -> 16-byte ciphertext
Anything shorter than 17 bytes or with an unknown type is dropped and
logged; the server never dies on malformed input.

Two interchangeable backends answer timing requests. The native backend
times real encryptions with the highest-resolution monotonic counter
available (perf_counter_ns). The simulated backend replays the
encryption's table accesses through the deterministic cache model and
reports exactly the SimResult cycles under encrypt_only scope.

The simulated handler also walks its own working set through the same
cache on every request: the datagram buffer (packet_size bytes at a
fixed base) and scratch_lines fixed scattered lines. With per-request
cold flushing this is invisible in encrypt_only timings; with a
persistent cache it evicts table lines set by set between encryptions,
which is the deterministic stand-in for the ambient eviction a real
victim's memory traffic causes. whole_handler scope adds the working
set's own hit/miss cycles, so packet size shows up in timings the way
it does on hardware.
"""

from __future__ import annotations

import logging
import os
import random
import socket
import struct
import threading
import time
from dataclasses import dataclass, replace

from .aes import TTABLES, encrypt, expand_key
from .cachesim import CacheConfig, CacheState, layout_by_name, run_encryption
from .countermeasures import CostModel, Kind, apply, execute_disturbance, make_state

log = logging.getLogger("ctlab.channel")

MSG_TIMING = 0x01
MSG_CIPHERTEXT = 0x02
RESP_FLAG = 0x80
HEADER_LEN = 17
DEFAULT_PACKET_SIZE = 800

PARSE_BASE = 0xA01800    # receive buffer
SCRATCH_BASE = 0x800000  # other per-request handler state


def default_port() -> int:
    return int(os.environ.get("CTLAB_PORT", "41717"))


class WireError(ValueError):
    """Datagram does not parse under the channel wire format."""


class ChannelError(RuntimeError):
    """Measurement against a timing server failed."""


class ChannelTimeout(ChannelError):
    """No response arrived within the client timeout."""


def encode_request(msg_type: int, plaintext: bytes, packet_size: int = DEFAULT_PACKET_SIZE) -> bytes:
    if msg_type not in (MSG_TIMING, MSG_CIPHERTEXT):
        raise WireError(f"unknown request type {msg_type:#x}")
    if len(plaintext) != 16:
        raise WireError("plaintext must be 16 bytes")
    if packet_size < HEADER_LEN:
        raise WireError("packet_size below header length")
    return bytes([msg_type]) + plaintext + bytes(packet_size - HEADER_LEN)


def decode_request(datagram: bytes) -> tuple[int, bytes]:
    if len(datagram) < HEADER_LEN:
        raise WireError(f"short datagram ({len(datagram)} bytes)")
    msg_type = datagram[0]
    if msg_type not in (MSG_TIMING, MSG_CIPHERTEXT):
        raise WireError(f"unknown request type {msg_type:#x}")
    return msg_type, datagram[1:17]


def encode_response(msg_type: int, plaintext: bytes, payload: bytes) -> bytes:
    return bytes([msg_type | RESP_FLAG]) + plaintext + payload


def decode_response(datagram: bytes) -> tuple[int, bytes, bytes]:
    if len(datagram) < HEADER_LEN:
        raise WireError(f"short response ({len(datagram)} bytes)")
    rtype = datagram[0]
    if not rtype & RESP_FLAG:
        raise WireError("response flag missing")
    msg_type = rtype & ~RESP_FLAG
    payload = datagram[17:]
    if msg_type == MSG_TIMING and len(payload) != 8:
        raise WireError("timing payload must be 8 bytes")
    if msg_type == MSG_CIPHERTEXT and len(payload) != 16:
        raise WireError("ciphertext payload must be 16 bytes")
    if msg_type not in (MSG_TIMING, MSG_CIPHERTEXT):
        raise WireError(f"unknown response type {rtype:#x}")
    return msg_type, datagram[1:17], payload


@dataclass(frozen=True)
class ChannelConfig:
    """Everything a timing server needs; the key never crosses the wire."""

    key: bytes
    countermeasure: Kind = Kind.NONE
    backend: str = "simulated"            # simulated | native
    packet_size: int = DEFAULT_PACKET_SIZE
    timing_scope: str = "encrypt_only"    # encrypt_only | whole_handler
    cache: CacheConfig = CacheConfig()
    layout: str = "packed"
    scratch_lines: int = 0
    scratch_seed: int = 1
    prng_seed: int | None = 1             # None -> wall-clock seeding (native live mode)
    cost: CostModel = CostModel()

    def __post_init__(self) -> None:
        if len(self.key) != 16:
            raise ValueError("key must be 16 bytes")
        if self.backend not in ("simulated", "native"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.timing_scope not in ("encrypt_only", "whole_handler"):
            raise ValueError(f"unknown timing_scope {self.timing_scope!r}")
        if self.packet_size < HEADER_LEN:
            raise ValueError("packet_size below header length")
        if self.scratch_lines < 0 or self.scratch_lines > self.cache.num_sets:
            raise ValueError("scratch_lines must be within 0..num_sets")
        layout_by_name(self.layout)


def equal_except_key(a: ChannelConfig, b: ChannelConfig) -> bool:
    return replace(a, key=b.key) == b


class SimulatedBackend:
    """Serial request handler over the deterministic cache model."""

    def __init__(self, config: ChannelConfig) -> None:
        self.config = config
        self.round_keys = expand_key(config.key)
        self.cache = CacheState(config.cache)
        self.layout = layout_by_name(config.layout)
        self.kind = config.countermeasure
        self.cm_state = make_state(config.countermeasure)
        self.prng = random.Random(config.prng_seed)
        line = config.cache.line_size
        period = line * config.cache.num_sets
        if SCRATCH_BASE + period > PARSE_BASE:
            raise ValueError("cache period too large for the fixed handler address map")
        n_parse = -(-config.packet_size // line)
        self.parse_addrs = [PARSE_BASE + i * line for i in range(n_parse)]
        scatter = random.Random(config.scratch_seed)
        offsets = sorted(scatter.sample(range(config.cache.num_sets), config.scratch_lines))
        self.scratch_addrs = [SCRATCH_BASE + o * line for o in offsets]

    def handle(self, plaintext: bytes) -> tuple[int, bytes]:
        """Serve one timing request; returns (cycles, ciphertext)."""
        disturbance = apply(self.kind, self.cm_state, self.config.cost, self.prng)
        overhead = self.cache.access_all(self.parse_addrs)
        scratch = self.cache.access_all(self.scratch_addrs)
        trace: list[tuple[int, int]] = []
        ct = encrypt(plaintext, self.round_keys, TTABLES, trace)
        sim = run_encryption(self.cache, trace, self.layout, disturbance)
        cycles = sim.cycles
        if self.config.timing_scope == "whole_handler":
            cycles += overhead.cycles + scratch.cycles
        return cycles, ct

    def ciphertext(self, plaintext: bytes) -> bytes:
        return encrypt(plaintext, self.round_keys)


class NativeBackend:
    """Times real encryptions with the monotonic nanosecond counter."""

    def __init__(self, config: ChannelConfig) -> None:
        self.config = config
        self.round_keys = expand_key(config.key)
        self.kind = config.countermeasure
        self.cm_state = make_state(config.countermeasure)
        self.prng = random.Random(config.prng_seed)

    def handle(self, plaintext: bytes) -> tuple[int, bytes]:
        whole = self.config.timing_scope == "whole_handler"
        buf = bytes(self.config.packet_size)
        start = time.perf_counter_ns()
        if whole:
            acc = 0
            for b in buf:
                acc ^= b
        execute_disturbance(self.kind, self.cm_state, self.prng)
        ct = encrypt(plaintext, self.round_keys)
        return time.perf_counter_ns() - start, ct

    def ciphertext(self, plaintext: bytes) -> bytes:
        return encrypt(plaintext, self.round_keys)


def make_backend(config: ChannelConfig):
    if config.backend == "simulated":
        return SimulatedBackend(config)
    return NativeBackend(config)


@dataclass(frozen=True)
class TimerCalibration:
    resolution_ns: int
    overhead_ns: int


def calibrate_timer(samples: int = 2000) -> TimerCalibration:
    """Report the granularity and per-read cost of the native timer."""
    deltas = []
    for _ in range(samples):
        t0 = time.perf_counter_ns()
        t1 = time.perf_counter_ns()
        deltas.append(t1 - t0)
    positive = sorted(d for d in deltas if d > 0) or [1]
    deltas.sort()
    return TimerCalibration(positive[0], deltas[len(deltas) // 2])


class TimingServer:
    """Strictly serial UDP victim; one request, one response."""

    def __init__(self, config: ChannelConfig, host: str = "127.0.0.1", port: int | None = None) -> None:
        self.config = config
        self.backend = make_backend(config)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, default_port() if port is None else port))
        self.sock.settimeout(0.2)
        self.address: tuple[str, int] = self.sock.getsockname()
        self.requests_served = 0
        self.dropped = 0
        self._stop = threading.Event()

    def serve_forever(self) -> None:
        while not self._stop.is_set():
            try:
                datagram, peer = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                msg_type, pt = decode_request(datagram)
            except WireError as exc:
                self.dropped += 1
                log.warning("dropped datagram from %s: %s", peer, exc)
                continue
            if msg_type == MSG_TIMING:
                cycles, _ = self.backend.handle(pt)
                payload = struct.pack("<Q", cycles)
            else:
                payload = self.backend.ciphertext(pt)
            self.sock.sendto(encode_response(msg_type, pt, payload), peer)
            self.requests_served += 1

    def stop(self) -> None:
        self._stop.set()

    def close(self) -> None:
        self.stop()
        self.sock.close()

    def __enter__(self) -> "TimingServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def start_server_thread(config: ChannelConfig, host: str = "127.0.0.1", port: int = 0):
    """Spawn a server on an ephemeral port; returns (server, thread)."""
    server = TimingServer(config, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


@dataclass(frozen=True)
class TimingSample:
    plaintext: bytes
    cycles: int


def _roundtrip(
    endpoint: tuple[str, int],
    msg_type: int,
    plaintext: bytes,
    packet_size: int,
    timeout: float,
    sock: socket.socket | None,
) -> bytes:
    own = sock is None
    if own:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.settimeout(timeout)
        sock.sendto(encode_request(msg_type, plaintext, packet_size), endpoint)
        try:
            datagram, _ = sock.recvfrom(65535)
        except socket.timeout as exc:
            raise ChannelTimeout(f"no response from {endpoint}") from exc
        rtype, echo, payload = decode_response(datagram)
        if rtype != msg_type or echo != plaintext:
            raise ChannelError("response does not match request")
        return payload
    finally:
        if own:
            sock.close()


def measure_once(
    endpoint: tuple[str, int],
    plaintext: bytes,
    packet_size: int = DEFAULT_PACKET_SIZE,
    timeout: float = 1.0,
    sock: socket.socket | None = None,
) -> TimingSample:
    """One timing probe: send a 0x01 request, return the reported cycles."""
    payload = _roundtrip(endpoint, MSG_TIMING, plaintext, packet_size, timeout, sock)
    return TimingSample(plaintext, struct.unpack("<Q", payload)[0])


def ciphertext_query(
    endpoint: tuple[str, int],
    plaintext: bytes,
    packet_size: int = DEFAULT_PACKET_SIZE,
    timeout: float = 1.0,
    sock: socket.socket | None = None,
) -> bytes:
    """Fetch the ciphertext for one plaintext via a 0x02 request."""
    return _roundtrip(endpoint, MSG_CIPHERTEXT, plaintext, packet_size, timeout, sock)


class UdpOracle:
    """Callable plaintext -> cycles against a server, reusing one socket."""

    def __init__(
        self,
        endpoint: tuple[str, int],
        packet_size: int = DEFAULT_PACKET_SIZE,
        timeout: float = 1.0,
        retries: int = 2,
    ) -> None:
        self.endpoint = endpoint
        self.packet_size = packet_size
        self.timeout = timeout
        self.retries = retries
        self.timeouts = 0
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def __call__(self, plaintext: bytes) -> int:
        last: ChannelError | None = None
        for _ in range(self.retries + 1):
            try:
                return measure_once(
                    self.endpoint, plaintext, self.packet_size, self.timeout, self.sock
                ).cycles
            except ChannelTimeout as exc:
                self.timeouts += 1
                last = exc
        raise last if last is not None else ChannelError("measurement failed")

    def ciphertext(self, plaintext: bytes) -> bytes:
        return ciphertext_query(
            self.endpoint, plaintext, self.packet_size, self.timeout, self.sock
        )

    def close(self) -> None:
        self.sock.close()

    def __enter__(self) -> "UdpOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
