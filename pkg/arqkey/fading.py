"""Block-fading channel gains and the threshold tests that stand in for the PHY.

Both links are Rayleigh faded, so the power gains h_b = |g_b|^2 and
h_e = |g_e|^2 are exponentially distributed and redrawn independently for
every coherence interval. Noise has unit variance, so the transmit power P
doubles as the average SNR.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)

RAYLEIGH = "rayleigh"
DISTRIBUTIONS = (RAYLEIGH,)


@dataclass(frozen=True)
class ChannelSpec:
    """Fading law and transmit power for the Alice->Bob and Alice->Eve links."""

    mean_gain_bob: float = 1.0
    mean_gain_eve: float = 1.0
    power: float = 1.0
    distribution: str = RAYLEIGH

    def __post_init__(self) -> None:
        if not self.mean_gain_bob > 0:
            raise DomainError(f"mean_gain_bob must be > 0, got {self.mean_gain_bob}")
        if not self.mean_gain_eve > 0:
            raise DomainError(f"mean_gain_eve must be > 0, got {self.mean_gain_eve}")
        if not self.power >= 0:
            raise DomainError(f"power must be >= 0, got {self.power}")
        if self.distribution not in DISTRIBUTIONS:
            raise DomainError(f"unsupported fading distribution {self.distribution!r}")

    @classmethod
    def from_snr_db(
        cls, snr_db: float, mean_gain_bob: float = 1.0, mean_gain_eve: float = 1.0
    ) -> "ChannelSpec":
        return cls(mean_gain_bob, mean_gain_eve, snr_db_to_power(snr_db))


@dataclass(frozen=True)
class BlockGains:
    """Power gains seen by Bob and Eve during one coherence interval."""

    h_b: float
    h_e: float

    def __post_init__(self) -> None:
        if self.h_b < 0 or self.h_e < 0:
            raise DomainError(f"power gains must be >= 0, got ({self.h_b}, {self.h_e})")


def snr_db_to_power(snr_db: float) -> float:
    if not math.isfinite(snr_db):
        raise DomainError(f"SNR must be finite, got {snr_db}")
    return 10.0 ** (snr_db / 10.0)


def power_to_snr_db(power: float) -> float:
    return 10.0 * math.log10(power)


def _exponential(mean: float, stream: np.random.Generator, size=None):
    # Inverse CDF on u in (0, 1]; Generator.random() is [0, 1).
    u = 1.0 - stream.random(size)
    return -mean * np.log(u)


def sample_block(spec: ChannelSpec, stream: np.random.Generator) -> BlockGains:
    """Draw one coherence interval's gains (h_b first, then h_e)."""
    h_b = float(_exponential(spec.mean_gain_bob, stream))
    h_e = float(_exponential(spec.mean_gain_eve, stream))
    return BlockGains(h_b, h_e)


def sample_gains(
    spec: ChannelSpec, stream: np.random.Generator, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized sample_block: ``size`` Bob gains, then ``size`` Eve gains."""
    h_b = _exponential(spec.mean_gain_bob, stream, size)
    h_e = _exponential(spec.mean_gain_eve, stream, size)
    return h_b, h_e


def mutual_info(h, power):
    """log2(1 + h P) in bits per channel use."""
    value = np.log2(1.0 + np.multiply(h, power))
    return float(value) if np.ndim(value) == 0 else value


def bob_decodes(r0: float, h_b, power):
    """Idealized capacity-achieving decoding: success iff R0 <= log2(1 + h_b P)."""
    ok = np.less_equal(r0, mutual_info(h_b, power))
    return bool(ok) if np.ndim(ok) == 0 else ok


def eve_erased(r0: float, rc: float, h_e, power):
    """Genie-aided erasure at Eve: R0 - Rc > log2(1 + h_e P). Rc = 0 is plain ML."""
    erased = np.greater(r0 - rc, mutual_info(h_e, power))
    return bool(erased) if np.ndim(erased) == 0 else erased


def bob_success_probability(r0: float, power: float, mean_gain: float = 1.0) -> float:
    """Pr(bob_decodes) under Rayleigh fading: exp(-(2^R0 - 1) / (P mean))."""
    threshold = 2.0 ** r0 - 1.0
    if threshold <= 0:
        return 1.0
    if power * mean_gain == 0:
        return 0.0
    return math.exp(-threshold / (power * mean_gain))


def eve_erasure_probability(
    r0: float, rc: float, power: float, mean_gain: float = 1.0
) -> float:
    """Pr(eve_erased) under Rayleigh fading; exactly 0 when Rc >= R0."""
    if rc >= r0:
        return 0.0
    if power * mean_gain == 0:
        return 1.0
    return -math.expm1(-(2.0 ** (r0 - rc) - 1.0) / (power * mean_gain))
