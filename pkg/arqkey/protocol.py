"""ARQ key exchange between Alice and Bob with a passive eavesdropper.

Alice sends one frame per coherence interval. Bob ACKs it iff he decodes it
(idealized error detection), and a NACKed frame is discarded: Alice replaces
it with a freshly drawn payload, so nothing Eve learned from it ever enters
the key. After k ACKs the key parts are the k ACKed payloads. Eve compromises
the key only if she intercepted every one of them.

``replace_on_nack=False`` switches to ordinary message ARQ, where the NACKed
part is retransmitted unchanged and any interception of it counts.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import fading
from .analysis import OperatingPoint, check_power
from .errors import DomainError, IncompleteExchangeError

logger = logging.getLogger(__name__)

DEFAULT_PAYLOAD_BITS = 128
MAX_FRAMES_PER_KEY_FRAME = 1000
BATCH_SIZE = 2048


@dataclass(frozen=True)
class ProtocolParams:
    point: OperatingPoint
    payload_bits: int = DEFAULT_PAYLOAD_BITS
    max_frames: int | None = None
    seed: int = 0
    replace_on_nack: bool = True

    def __post_init__(self) -> None:
        if self.max_frames is None:
            object.__setattr__(self, "max_frames", MAX_FRAMES_PER_KEY_FRAME * self.point.k)
        if self.payload_bits < 1:
            raise DomainError(f"payload_bits must be >= 1, got {self.payload_bits}")
        if self.max_frames < self.point.k:
            raise DomainError(
                f"max_frames ({self.max_frames}) must be >= k ({self.point.k})"
            )
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True, eq=False)
class FrameRecord:
    index: int
    part: int
    gains: fading.BlockGains
    payload: np.ndarray
    bob_acked: bool
    eve_intercepted: bool


@dataclass(eq=False)
class ExchangeTrace:
    frames: list[FrameRecord] = field(default_factory=list)
    acked_indices: list[int] = field(default_factory=list)
    key_alice: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))
    key_bob: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))
    eve_full_intercept: bool = False
    complete: bool = False

    def acked_frames(self) -> list[FrameRecord]:
        return [self.frames[i] for i in self.acked_indices]


class Alice:
    """Sender: keeps the current part's payload until Bob ACKs it."""

    def __init__(self, payload_bits: int, replace_on_nack: bool, stream: np.random.Generator):
        self.payload_bits = payload_bits
        self.replace_on_nack = replace_on_nack
        self.stream = stream
        self.parts: list[np.ndarray] = []
        self._pending: np.ndarray | None = None

    def next_payload(self) -> np.ndarray:
        if self._pending is None or self.replace_on_nack:
            self._pending = self.stream.integers(0, 2, self.payload_bits, dtype=np.uint8)
        return self._pending

    def feedback(self, acked: bool) -> None:
        if acked:
            self.parts.append(self._pending)
            self._pending = None


class Bob:
    """Legitimate receiver with perfect error detection and memoryless decoding."""

    def __init__(self, point: OperatingPoint):
        self.point = point
        self.parts: list[np.ndarray] = []

    def receive(self, gains: fading.BlockGains, payload: np.ndarray) -> bool:
        if fading.bob_decodes(self.point.r0, gains.h_b, self.point.power):
            self.parts.append(payload.copy())
            return True
        return False


class Eve:
    """Passive eavesdropper; hears every frame and the public ACK/NACK bits."""

    def __init__(self, point: OperatingPoint):
        self.point = point

    def intercepts(self, gains: fading.BlockGains) -> bool:
        return not fading.eve_erased(
            self.point.r0, self.point.rc, gains.h_e, self.point.power
        )


def derive_eve_full_intercept(frames: list[FrameRecord], replace_on_nack: bool = True) -> bool:
    """True iff Eve knows every ACKed key part, judged from frame records alone."""
    acked = [f for f in frames if f.bob_acked]
    if replace_on_nack:
        return all(f.eve_intercepted for f in acked)
    seen_parts = {f.part for f in frames if f.eve_intercepted}
    return all(f.part in seen_parts for f in acked)


def _finish(trace: ExchangeTrace, alice: Alice, bob: Bob, replace_on_nack: bool) -> ExchangeTrace:
    empty = np.zeros(0, dtype=np.uint8)
    trace.key_alice = np.concatenate(alice.parts) if alice.parts else empty
    trace.key_bob = np.concatenate(bob.parts) if bob.parts else empty
    trace.eve_full_intercept = derive_eve_full_intercept(trace.frames, replace_on_nack)
    return trace


def run_exchange(
    params: ProtocolParams, spec: fading.ChannelSpec, stream: np.random.Generator
) -> ExchangeTrace:
    """Run one key exchange until k ACKs; raises IncompleteExchangeError at the cap.

    spec supplies the fading law; its power must match the operating point.
    """
    point = params.point
    check_power(point, spec)
    alice = Alice(params.payload_bits, params.replace_on_nack, stream)
    bob = Bob(point)
    eve = Eve(point)
    trace = ExchangeTrace()

    for index in range(params.max_frames):
        gains = fading.sample_block(spec, stream)
        payload = alice.next_payload()
        acked = bob.receive(gains, payload)
        trace.frames.append(
            FrameRecord(index, len(alice.parts), gains, payload, acked, eve.intercepts(gains))
        )
        alice.feedback(acked)
        if acked:
            trace.acked_indices.append(index)
            if len(trace.acked_indices) == point.k:
                trace.complete = True
                return _finish(trace, alice, bob, params.replace_on_nack)

    raise IncompleteExchangeError(
        _finish(trace, alice, bob, params.replace_on_nack), params.max_frames
    )


def exchange_stream(seed: int, index: int) -> np.random.Generator:
    """Stream for exchange ``index``; independent of scheduling and worker count."""
    return np.random.default_rng([seed, index])


def iter_exchanges(
    params: ProtocolParams, spec: fading.ChannelSpec, count: int, start: int = 0
) -> Iterator[tuple[int, ExchangeTrace]]:
    """Yield (index, trace); incomplete exchanges yield their partial trace."""
    for index in range(start, start + count):
        try:
            trace = run_exchange(params, spec, exchange_stream(params.seed, index))
        except IncompleteExchangeError as exc:
            trace = exc.trace
        yield index, trace


@dataclass
class ExchangeTally:
    """Order-independent counts over a batch of exchanges."""

    completed: int = 0
    incomplete: int = 0
    full_intercepts: int = 0
    frames: int = 0
    frames_sq: int = 0

    def add(self, other: "ExchangeTally") -> None:
        self.completed += other.completed
        self.incomplete += other.incomplete
        self.full_intercepts += other.full_intercepts
        self.frames += other.frames
        self.frames_sq += other.frames_sq


@dataclass(frozen=True)
class OutageEstimate:
    probability: float
    std_error: float
    completed: int
    incomplete: int


@dataclass(frozen=True)
class ThroughputEstimate:
    rate: float
    std_error: float
    mean_transmissions: float
    transmissions_std_error: float
    raw_rate: float
    completed: int
    incomplete: int


def _run_batch(
    params: ProtocolParams, spec: fading.ChannelSpec, start: int, stop: int
) -> ExchangeTally:
    tally = ExchangeTally()
    for _, trace in iter_exchanges(params, spec, stop - start, start):
        if not trace.complete:
            tally.incomplete += 1
            continue
        n = len(trace.frames)
        tally.completed += 1
        tally.full_intercepts += int(trace.eve_full_intercept)
        tally.frames += n
        tally.frames_sq += n * n
    return tally


def run_exchanges(
    params: ProtocolParams, spec: fading.ChannelSpec, exchanges: int, workers: int = 1
) -> ExchangeTally:
    """Run exchanges 0..exchanges-1, optionally across worker processes."""
    if exchanges < 1:
        raise DomainError(f"exchanges must be >= 1, got {exchanges}")
    check_power(params.point, spec)
    bounds = [(s, min(s + BATCH_SIZE, exchanges)) for s in range(0, exchanges, BATCH_SIZE)]
    tally = ExchangeTally()
    if workers <= 1:
        for start, stop in bounds:
            tally.add(_run_batch(params, spec, start, stop))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_batch, params, spec, s, e) for s, e in bounds]
            for future in futures:
                tally.add(future.result())
    if tally.incomplete:
        logger.warning(
            "%d of %d exchanges hit max_frames=%d and were excluded",
            tally.incomplete, exchanges, params.max_frames,
        )
    return tally


def outage_from_tally(tally: ExchangeTally) -> OutageEstimate:
    n = tally.completed
    if n == 0:
        return OutageEstimate(math.nan, math.inf, 0, tally.incomplete)
    p = tally.full_intercepts / n
    return OutageEstimate(p, math.sqrt(p * (1.0 - p) / n), n, tally.incomplete)


def throughput_from_tally(tally: ExchangeTally, point: OperatingPoint) -> ThroughputEstimate:
    n = tally.completed
    if n == 0:
        return ThroughputEstimate(0.0, math.inf, math.inf, math.inf, 0.0, 0, tally.incomplete)
    mean_n = tally.frames / n
    if n > 1:
        var_n = max(tally.frames_sq - n * mean_n * mean_n, 0.0) / (n - 1)
        se_n = math.sqrt(var_n / n)
    else:
        se_n = math.inf
    rate = point.r0 / mean_n
    return ThroughputEstimate(
        rate=rate,
        std_error=rate * se_n / mean_n,
        mean_transmissions=mean_n,
        transmissions_std_error=se_n,
        raw_rate=point.r0 * point.k / mean_n,
        completed=n,
        incomplete=tally.incomplete,
    )


def estimate_outage(
    params: ProtocolParams, spec: fading.ChannelSpec, exchanges: int, workers: int = 1
) -> OutageEstimate:
    """Fraction of completed exchanges in which Eve intercepted every key part."""
    return outage_from_tally(run_exchanges(params, spec, exchanges, workers))


def estimate_key_throughput(
    params: ProtocolParams, spec: fading.ChannelSpec, exchanges: int, workers: int = 1
) -> ThroughputEstimate:
    """Distilled key bits per channel use: R0 * completed / total frames."""
    tally = run_exchanges(params, spec, exchanges, workers)
    return throughput_from_tally(tally, params.point)


def replay(frames: list[FrameRecord], params: ProtocolParams) -> tuple[ExchangeTrace, list[str]]:
    """Rebuild a trace from recorded frames and list disagreements with the PHY rules."""
    point = params.point
    problems: list[str] = []
    trace = ExchangeTrace(frames=list(frames))
    alice_parts, bob_parts = [], []
    for frame in frames:
        acked = fading.bob_decodes(point.r0, frame.gains.h_b, point.power)
        intercepted = not fading.eve_erased(point.r0, point.rc, frame.gains.h_e, point.power)
        if acked != frame.bob_acked:
            problems.append(f"frame {frame.index}: recorded acked={frame.bob_acked}, gains say {acked}")
        if intercepted != frame.eve_intercepted:
            problems.append(
                f"frame {frame.index}: recorded intercepted={frame.eve_intercepted}, gains say {intercepted}"
            )
        if acked:
            trace.acked_indices.append(frame.index)
            alice_parts.append(frame.payload)
            bob_parts.append(frame.payload.copy())
    trace.complete = len(trace.acked_indices) == point.k
    if len(trace.acked_indices) > point.k:
        problems.append(f"{len(trace.acked_indices)} ACKs recorded for k={point.k}")
    empty = np.zeros(0, dtype=np.uint8)
    trace.key_alice = np.concatenate(alice_parts) if alice_parts else empty
    trace.key_bob = np.concatenate(bob_parts) if bob_parts else empty
    trace.eve_full_intercept = derive_eve_full_intercept(frames, params.replace_on_nack)
    return trace, problems
