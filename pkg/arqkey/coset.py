"""Rate-(k-1)/k syndrome key distillation and Eve's posterior over the key.

The k ACKed payloads are the key parts. The distilled key is their bitwise
XOR, i.e. the syndrome of the single-parity-check code applied column by
column. As long as Eve lacks at least one part, every key value is
consistent with exactly the same number of completions of the parts she
is missing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError, EnumerationBoundError
from .protocol import ExchangeTrace

logger = logging.getLogger(__name__)

ENUMERATION_BOUND = 2**20
MAX_ENUMERATION_WIDTH = ENUMERATION_BOUND.bit_length() - 1


@dataclass(frozen=True, eq=False)
class KeyParts:
    """k equal-width key parts and which of them Eve has lost."""

    parts: np.ndarray
    erased_mask: tuple[bool, ...]

    def __post_init__(self) -> None:
        widths = {len(p) for p in self.parts}
        if len(widths) > 1:
            raise DomainError(f"key parts differ in width: {sorted(widths)}")
        if len(self.parts) < 1:
            raise DomainError("at least one key part is required")
        parts = np.asarray(np.vstack(self.parts), dtype=np.uint8)
        if np.any(parts > 1):
            raise DomainError("key parts must be bit vectors")
        object.__setattr__(self, "parts", parts)
        mask = tuple(bool(m) for m in self.erased_mask)
        if len(mask) != parts.shape[0]:
            raise DomainError(f"erased_mask has {len(mask)} entries for {parts.shape[0]} parts")
        object.__setattr__(self, "erased_mask", mask)

    @property
    def k(self) -> int:
        return self.parts.shape[0]

    @property
    def width(self) -> int:
        return self.parts.shape[1]

    @property
    def erased_count(self) -> int:
        return sum(self.erased_mask)


@dataclass(frozen=True, eq=False)
class DistilledKey:
    bits: np.ndarray

    def hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()


@dataclass(frozen=True)
class UniformityTest:
    statistic: float
    pvalue: float
    buckets: int
    samples: int


def distill(parts: KeyParts) -> DistilledKey:
    """Modulo-2 sum of all k parts."""
    return DistilledKey(np.bitwise_xor.reduce(parts.parts, axis=0))


def _to_int(bits: np.ndarray) -> int:
    # Big-endian: bit 0 is the most significant.
    value = 0
    for bit in bits:
        value = (value << 1) | int(bit)
    return value


def _known_xor(parts: KeyParts) -> np.ndarray:
    known = parts.parts[[not m for m in parts.erased_mask]]
    if len(known) == 0:
        return np.zeros(parts.width, dtype=np.uint8)
    return np.bitwise_xor.reduce(known, axis=0)


def _check_bound(parts: KeyParts) -> None:
    if parts.width > MAX_ENUMERATION_WIDTH:
        raise EnumerationBoundError(
            f"width {parts.width} exceeds the exact enumeration bound of "
            f"{MAX_ENUMERATION_WIDTH} bits; use sampled_posterior_uniformity"
        )


def posterior_counts(parts: KeyParts) -> np.ndarray:
    """Number of completions of the erased parts that yield each key value.

    Index i of the result is the key whose big-endian bit pattern is i.
    All 2^(e w) completions are enumerated when that fits the bound;
    otherwise each bit column is enumerated exhaustively (2^e cases) and
    the per-column counts multiplied exactly, which is valid because the
    columns of the erased parts are free independently.
    """
    _check_bound(parts)
    w, e = parts.width, parts.erased_count
    known = _to_int(_known_xor(parts))
    if e == 0:
        counts = np.zeros(2**w, dtype=np.int64)
        counts[known] = 1
        return counts

    if e * w <= MAX_ENUMERATION_WIDTH:
        assignments = np.arange(2 ** (e * w), dtype=np.int64)
        mask = (1 << w) - 1
        keys = np.full(assignments.shape, known, dtype=np.int64)
        for j in range(e):
            keys ^= (assignments >> (j * w)) & mask
        return np.bincount(keys, minlength=2**w)

    known_bits = _known_xor(parts)
    column_cases = np.arange(2**e)
    column_parity = np.zeros(2**e, dtype=np.int64)
    for j in range(e):
        column_parity ^= (column_cases >> j) & 1
    ones = int(column_parity.sum())
    zeros = 2**e - ones
    counts = np.array([1], dtype=object)
    for bit in known_bits:
        per_value = [zeros, ones] if bit == 0 else [ones, zeros]
        counts = np.multiply.outer(counts, np.array(per_value, dtype=object)).ravel()
    return counts


def eve_posterior_support(parts: KeyParts) -> int:
    """How many distinct keys remain possible given Eve's known parts."""
    return int(np.count_nonzero(posterior_counts(parts)))


def posterior_is_uniform(counts: np.ndarray) -> bool:
    return bool(np.all(counts == counts[0]))


def sampled_posterior_uniformity(
    parts: KeyParts,
    samples: int,
    stream: np.random.Generator,
    bucket_bits: int = 8,
) -> UniformityTest:
    """Chi-square test that sampled completions give uniform keys.

    Keys are bucketed on their leading ``bucket_bits`` bits, so any width
    works.
    """
    if samples < 1:
        raise DomainError(f"samples must be >= 1, got {samples}")
    b = min(bucket_bits, parts.width)
    known = _known_xor(parts)[:b]
    keys = np.tile(known, (samples, 1))
    for _ in range(parts.erased_count):
        keys ^= stream.integers(0, 2, (samples, b), dtype=np.uint8)
    weights = 1 << np.arange(b - 1, -1, -1)
    buckets = keys.astype(np.int64) @ weights
    observed = np.bincount(buckets, minlength=2**b)
    result = stats.chisquare(observed)
    logger.debug("chi-square over %d buckets: stat=%.3f p=%.3g", 2**b, result.statistic, result.pvalue)
    return UniformityTest(float(result.statistic), float(result.pvalue), 2**b, samples)


def eve_key_parts(trace: ExchangeTrace, replace_on_nack: bool = True) -> KeyParts:
    """Key parts of a completed trace, erased where Eve lacks the part."""
    acked = trace.acked_frames()
    if not acked:
        raise DomainError("trace has no ACKed frames")
    if replace_on_nack:
        erased = [not f.eve_intercepted for f in acked]
    else:
        seen = {f.part for f in trace.frames if f.eve_intercepted}
        erased = [f.part not in seen for f in acked]
    return KeyParts(np.vstack([f.payload for f in acked]), tuple(erased))
