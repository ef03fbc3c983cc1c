"""Finite-length PHY: punctured K=7 (133, 171) convolutional code over block fading.

Shift-register convention: the newest input bit is the most significant of
the K register bits, so a generator's octal value read MSB first is its
impulse response. The encoder is zero-terminated with K-1 flush bits and
the Viterbi decoder ends in state 0.

Everything is batched along a leading axis so one call simulates many
packets. Soft metrics are LLRs, positive favouring bit 0; punctured
positions carry 0.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import fading
from .errors import DomainError

logger = logging.getLogger(__name__)

GENIE_BUDGET = 50
GENIE_MODES = ("post", "pre")
MIN_FEC_TRIALS = 10_000
TARGET_POUT = 1e-10
CHUNK = 1000

PUNCTURE_PATTERNS = {
    "rate-1/2": ((1,), (1,)),
    "rate-2/3": ((1, 1), (1, 0)),
    "rate-3/4": ((1, 1, 0), (1, 0, 1)),
}
MODULATIONS = {"bpsk": 1, "qpsk": 2}


@dataclass(frozen=True)
class ConvCodeSpec:
    constraint_length: int = 7
    generators: tuple[int, ...] = (0o133, 0o171)
    puncture_pattern: tuple[tuple[int, ...], ...] = PUNCTURE_PATTERNS["rate-1/2"]

    def __post_init__(self) -> None:
        k = self.constraint_length
        if k < 2:
            raise DomainError(f"constraint_length must be >= 2, got {k}")
        for g in self.generators:
            if not 0 < g < 2**k:
                raise DomainError(f"generator {g:o} is not a nonzero {k}-tap polynomial")
        if len(self.puncture_pattern) != len(self.generators):
            raise DomainError("puncture pattern needs one row per generator")
        periods = {len(row) for row in self.puncture_pattern}
        if len(periods) != 1 or 0 in periods:
            raise DomainError("puncture pattern rows must share a nonzero period")
        if sum(map(sum, self.puncture_pattern)) < 1:
            raise DomainError("puncture pattern must keep at least one bit per period")

    @classmethod
    def named(cls, pattern: str) -> "ConvCodeSpec":
        try:
            return cls(puncture_pattern=PUNCTURE_PATTERNS[pattern])
        except KeyError:
            raise DomainError(
                f"unknown puncture pattern {pattern!r}; choose from {sorted(PUNCTURE_PATTERNS)}"
            ) from None

    @property
    def n_out(self) -> int:
        return len(self.generators)

    @property
    def period(self) -> int:
        return len(self.puncture_pattern[0])

    @property
    def rate(self) -> float:
        return self.period / sum(map(sum, self.puncture_pattern))


@dataclass(frozen=True)
class PacketSpec:
    info_bits: int = 240
    modulation: str = "bpsk"
    coded: bool = True

    def __post_init__(self) -> None:
        if self.info_bits < 1:
            raise DomainError(f"info_bits must be >= 1, got {self.info_bits}")
        if self.modulation not in MODULATIONS:
            raise DomainError(f"modulation must be one of {sorted(MODULATIONS)}")

    @property
    def bits_per_symbol(self) -> int:
        return MODULATIONS[self.modulation]

    @property
    def name(self) -> str:
        return f"{'coded' if self.coded else 'uncoded'}-{self.modulation}-{self.info_bits}"

    @classmethod
    def parse(cls, name: str) -> "PacketSpec":
        """Inverse of ``name``: e.g. 'coded-qpsk-480'."""
        try:
            coding, modulation, bits = name.lower().split("-")
        except ValueError:
            raise DomainError(f"scheme {name!r} is not <coded|uncoded>-<bpsk|qpsk>-<bits>") from None
        if coding not in ("coded", "uncoded") or not bits.isdigit():
            raise DomainError(f"scheme {name!r} is not <coded|uncoded>-<bpsk|qpsk>-<bits>")
        return cls(int(bits), modulation, coding == "coded")

    def r0_eff(self, code: ConvCodeSpec) -> float:
        """Information bits per channel use, ignoring the flush tail."""
        return self.bits_per_symbol * (code.rate if self.coded else 1.0)


@dataclass(frozen=True)
class LinkOutcome:
    bob_ok: bool
    eve_ok: bool
    eve_residual_symbol_errors: int


@dataclass(frozen=True)
class LinkBatch:
    bob_ok: np.ndarray
    eve_ok: np.ndarray
    eve_symbol_errors: np.ndarray


@dataclass(frozen=True)
class Fig4Point:
    scheme: str
    snr_db: float
    p: float
    q: float
    k_star: int
    key_rate: float
    feasible: bool


# ---------------------------------------------------------------------------
# Trellis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Trellis:
    next_state: np.ndarray   # (S, 2)
    outputs: np.ndarray      # (S, 2, n_out) bits
    signs: np.ndarray        # (S*2, n_out) +-1 for correlation metrics
    prev_state: np.ndarray   # (S, 2) predecessor for survivor bit x
    in_bit: np.ndarray       # (S,) input bit that leads into the state


@lru_cache(maxsize=None)
def _trellis(spec: ConvCodeSpec) -> _Trellis:
    k = spec.constraint_length
    n_states = 1 << (k - 1)
    next_state = np.zeros((n_states, 2), dtype=np.int64)
    outputs = np.zeros((n_states, 2, spec.n_out), dtype=np.uint8)
    for s in range(n_states):
        for b in (0, 1):
            register = (b << (k - 1)) | s
            next_state[s, b] = register >> 1
            for j, g in enumerate(spec.generators):
                outputs[s, b, j] = bin(register & g).count("1") & 1
    ns = np.arange(n_states)
    prev_state = np.stack([((ns << 1) & (n_states - 1)) | x for x in (0, 1)], axis=1)
    in_bit = ns >> (k - 2)
    signs = (1.0 - 2.0 * outputs).reshape(n_states * 2, spec.n_out)
    return _Trellis(next_state, outputs, signs, prev_state, in_bit)


@lru_cache(maxsize=None)
def _keep_mask(spec: ConvCodeSpec, steps: int) -> np.ndarray:
    pattern = np.asarray(spec.puncture_pattern, dtype=bool)  # (n_out, period)
    cols = np.arange(steps) % spec.period
    return pattern[:, cols].T.ravel()  # time-major, outputs interleaved


def _steps_for_length(spec: ConvCodeSpec, length: int) -> int:
    per_period = int(np.sum(spec.puncture_pattern))
    k = spec.constraint_length
    steps = max(k, (length // per_period) * spec.period - spec.period)
    while True:
        kept = int(_keep_mask(spec, steps).sum())
        if kept == length:
            return steps
        if kept > length:
            raise DomainError(
                f"{length} received metrics do not match any zero-terminated "
                f"codeword length for this puncture pattern"
            )
        steps += 1


def _encode_batch(spec: ConvCodeSpec, info: np.ndarray) -> np.ndarray:
    trellis = _trellis(spec)
    n, length = info.shape
    steps = length + spec.constraint_length - 1
    bits = np.zeros((n, steps), dtype=np.int64)
    bits[:, :length] = info
    state = np.zeros(n, dtype=np.int64)
    out = np.empty((n, steps, spec.n_out), dtype=np.uint8)
    for t in range(steps):
        out[:, t] = trellis.outputs[state, bits[:, t]]
        state = trellis.next_state[state, bits[:, t]]
    return out.reshape(n, -1)[:, _keep_mask(spec, steps)]


def conv_encode(spec: ConvCodeSpec, info: np.ndarray) -> np.ndarray:
    """Zero-terminated mother-code output, punctured. Accepts one packet or a batch."""
    info = np.asarray(info, dtype=np.uint8)
    if info.shape[-1] == 0:
        raise DomainError("cannot encode an empty packet")
    if info.ndim == 1:
        return _encode_batch(spec, info[None, :])[0]
    return _encode_batch(spec, info)


def viterbi_decode(
    spec: ConvCodeSpec, received: np.ndarray, hard_decision: bool = False
) -> np.ndarray:
    """Maximum-likelihood information bits for LLR metrics (one packet or a batch)."""
    metrics = np.asarray(received, dtype=float)
    single = metrics.ndim == 1
    if single:
        metrics = metrics[None, :]
    n, length = metrics.shape
    steps = _steps_for_length(spec, length)
    info_len = steps - (spec.constraint_length - 1)
    if hard_decision:
        metrics = np.sign(metrics)

    full = np.zeros((n, steps * spec.n_out))
    full[:, _keep_mask(spec, steps)] = metrics
    full = full.reshape(n, steps, spec.n_out)

    trellis = _trellis(spec)
    n_states = trellis.next_state.shape[0]
    prev0, prev1 = trellis.prev_state[:, 0], trellis.prev_state[:, 1]
    b_in = trellis.in_bit
    path = np.full((n, n_states), -np.inf)
    path[:, 0] = 0.0
    survivors = np.empty((steps, n, n_states), dtype=np.uint8)
    for t in range(steps):
        branch = (full[:, t] @ trellis.signs.T).reshape(n, n_states, 2)
        cand0 = path[:, prev0] + branch[:, prev0, b_in]
        cand1 = path[:, prev1] + branch[:, prev1, b_in]
        take1 = cand1 > cand0
        path = np.where(take1, cand1, cand0)
        path -= path.max(axis=1, keepdims=True)
        survivors[t] = take1

    rows = np.arange(n)
    state = np.zeros(n, dtype=np.int64)
    decoded = np.empty((n, steps), dtype=np.uint8)
    shift = spec.constraint_length - 2
    for t in range(steps - 1, -1, -1):
        decoded[:, t] = state >> shift
        state = ((state << 1) & (n_states - 1)) | survivors[t, rows, state]
    decoded = decoded[:, :info_len]
    return decoded[0] if single else decoded


# ---------------------------------------------------------------------------
# Modulation and channel
# ---------------------------------------------------------------------------

def _modulate(bits: np.ndarray, modulation: str) -> np.ndarray:
    signs = 1.0 - 2.0 * bits
    if modulation == "bpsk":
        return signs.astype(complex)
    if signs.shape[1] % 2:
        signs = np.concatenate([signs, np.ones((signs.shape[0], 1))], axis=1)
    return (signs[:, 0::2] + 1j * signs[:, 1::2]) / math.sqrt(2.0)


def _llrs(y: np.ndarray, amplitude: np.ndarray, modulation: str, n_bits: int) -> np.ndarray:
    # Unit-variance complex noise: each real dimension has variance 1/2.
    a = amplitude[:, None]
    if modulation == "bpsk":
        return 4.0 * a * y.real
    scale = 4.0 / math.sqrt(2.0)
    llr = np.empty((y.shape[0], 2 * y.shape[1]))
    llr[:, 0::2] = scale * a * y.real
    llr[:, 1::2] = scale * a * y.imag
    return llr[:, :n_bits]


def _receive(symbols: np.ndarray, h: np.ndarray, power: float, stream: np.random.Generator):
    amplitude = np.sqrt(power * np.asarray(h, dtype=float))
    # Symbol-major draws: symbol s of every packet sees the same noise
    # whatever the packet length, so schemes sharing a stream stay paired.
    draws = stream.standard_normal((symbols.shape[1], symbols.shape[0], 2))
    noise = (draws[..., 0] + 1j * draws[..., 1]).T
    return amplitude[:, None] * symbols + noise / math.sqrt(2.0), amplitude


def _symbol_errors(
    decoded: np.ndarray, sent_symbols: np.ndarray, pkt: PacketSpec, code: ConvCodeSpec
) -> np.ndarray:
    bits = _encode_batch(code, decoded) if pkt.coded else decoded
    return np.count_nonzero(_modulate(bits, pkt.modulation) != sent_symbols, axis=1)


def _genie_correct(llr: np.ndarray, coded_bits: np.ndarray, pkt: PacketSpec, budget: int) -> np.ndarray:
    """Flip the LLRs of Eve's first ``budget`` wrong channel symbols."""
    m = pkt.bits_per_symbol
    wrong_bits = (llr < 0) != (coded_bits == 1)
    pad = (-wrong_bits.shape[1]) % m
    padded = np.pad(wrong_bits, ((0, 0), (0, pad)))
    wrong_symbols = padded.reshape(padded.shape[0], -1, m).any(axis=2)
    fix = wrong_symbols & (np.cumsum(wrong_symbols, axis=1) <= budget)
    fix_bits = np.repeat(fix, m, axis=1)[:, : llr.shape[1]]
    return np.where(fix_bits & wrong_bits, -llr, llr)


def simulate_links(
    pkt: PacketSpec,
    code: ConvCodeSpec,
    h_b: np.ndarray,
    h_e: np.ndarray,
    power: float,
    stream: np.random.Generator,
    *,
    genie_budget: int = GENIE_BUDGET,
    genie_mode: str = "post",
    hard_decision: bool = False,
) -> LinkBatch:
    """Send one packet per gain pair to Bob and to a Genie-aided Eve.

    Info bits, Bob's noise and Eve's noise come from three streams spawned
    off ``stream``, each drawn bit- or symbol-major. Two schemes run from
    equal streams therefore share the leading info bits and the noise on
    the leading symbols.
    """
    if genie_mode not in GENIE_MODES:
        raise DomainError(f"genie_mode must be one of {GENIE_MODES}, got {genie_mode!r}")
    h_b = np.atleast_1d(np.asarray(h_b, dtype=float))
    h_e = np.atleast_1d(np.asarray(h_e, dtype=float))
    n = h_b.shape[0]
    info_stream, bob_stream, eve_stream = stream.spawn(3)

    info = (info_stream.random((pkt.info_bits, n)) < 0.5).astype(np.uint8).T
    sent_bits = _encode_batch(code, info) if pkt.coded else info
    symbols = _modulate(sent_bits, pkt.modulation)
    n_bits = sent_bits.shape[1]

    def decode(llr: np.ndarray) -> np.ndarray:
        if pkt.coded:
            return viterbi_decode(code, llr, hard_decision)
        return (llr < 0).astype(np.uint8)

    y_b, a_b = _receive(symbols, h_b, power, bob_stream)
    bob_bits = decode(_llrs(y_b, a_b, pkt.modulation, n_bits))
    bob_ok = np.all(bob_bits == info, axis=1)

    y_e, a_e = _receive(symbols, h_e, power, eve_stream)
    llr_e = _llrs(y_e, a_e, pkt.modulation, n_bits)
    if genie_mode == "pre":
        eve_bits = decode(_genie_correct(llr_e, sent_bits, pkt, genie_budget))
        errors = _symbol_errors(eve_bits, symbols, pkt, code)
        eve_ok = np.all(eve_bits == info, axis=1)
    else:
        eve_bits = decode(llr_e)
        errors = _symbol_errors(eve_bits, symbols, pkt, code)
        eve_ok = errors <= genie_budget
    return LinkBatch(bob_ok, eve_ok, errors)


def simulate_link(
    pkt: PacketSpec,
    code: ConvCodeSpec,
    gains: fading.BlockGains,
    power: float,
    stream: np.random.Generator,
    **options,
) -> LinkOutcome:
    batch = simulate_links(pkt, code, [gains.h_b], [gains.h_e], power, stream, **options)
    return LinkOutcome(
        bool(batch.bob_ok[0]), bool(batch.eve_ok[0]), int(batch.eve_symbol_errors[0])
    )


# ---------------------------------------------------------------------------
# Key rate at a fixed outage target
# ---------------------------------------------------------------------------

def frames_for_outage(q: float, target_pout: float) -> int:
    """Smallest k with q^k <= target."""
    if q <= 0:
        return 1
    if q >= 1:
        raise DomainError("Eve decodes every frame; no k reaches the outage target")
    k = max(1, math.ceil(math.log(target_pout) / math.log(q)))
    while k > 1 and q ** (k - 1) <= target_pout:
        k -= 1
    while q**k > target_pout:
        k += 1
    return k


def _link_counts(
    pkt: PacketSpec, code: ConvCodeSpec, power: float, trials: int, seed: tuple[int, ...], options: dict
) -> tuple[int, int]:
    stream = np.random.default_rng(list(seed))
    spec = fading.ChannelSpec(1.0, 1.0, power)
    bob = eve = 0
    for start in range(0, trials, CHUNK):
        m = min(CHUNK, trials - start)
        h_b, h_e = fading.sample_gains(spec, stream, m)
        batch = simulate_links(pkt, code, h_b, h_e, power, stream, **options)
        bob += int(batch.bob_ok.sum())
        eve += int(batch.eve_ok.sum())
    return bob, eve


def fig4_experiment(
    schemes: list[PacketSpec],
    snr_db_list: list[float],
    trials_per_point: int,
    seed: int = 0,
    *,
    code: ConvCodeSpec | None = None,
    target_pout: float = TARGET_POUT,
    r0_bits_per_use: float | None = None,
    workers: int = 1,
    **options,
) -> list[Fig4Point]:
    """Key rate needed for a given outage, per (scheme, SNR), by Monte Carlo.

    Per point, p and q are the fractions of independent fading trials in
    which Bob and Eve decode. Frames fade independently, so Eve gets all k
    with probability q^k and k* is the smallest k with q^k <= target.
    The key rate is R0_eff * p / k*, where R0_eff is the scheme's
    information bits per channel use unless ``r0_bits_per_use`` overrides it.

    Every scheme at SNR index j runs from the stream seeded (seed, j): the
    schemes see the same fades and, on their common leading symbols, the
    same noise. A scheme's rows do not depend on which other schemes are
    in the list.
    """
    if trials_per_point < MIN_FEC_TRIALS:
        raise DomainError(f"trials_per_point must be >= {MIN_FEC_TRIALS}, got {trials_per_point}")
    code = code or ConvCodeSpec()
    tasks = [
        (j, pkt, fading.snr_db_to_power(snr))
        for pkt in schemes
        for j, snr in enumerate(snr_db_list)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_link_counts, pkt, code, p, trials_per_point, (seed, j), options)
                for j, pkt, p in tasks
            ]
            counts = [f.result() for f in futures]
    else:
        counts = [
            _link_counts(pkt, code, p, trials_per_point, (seed, j), options)
            for j, pkt, p in tasks
        ]

    points = []
    for (j, pkt, _), (bob, eve) in zip(tasks, counts):
        p, q = bob / trials_per_point, eve / trials_per_point
        r0 = r0_bits_per_use if r0_bits_per_use is not None else pkt.r0_eff(code)
        if q >= 1.0 - 1.0 / trials_per_point:
            logger.info("%s at %g dB: Eve decoded every sampled frame", pkt.name, snr_db_list[j])
            points.append(Fig4Point(pkt.name, snr_db_list[j], p, q, 0, 0.0, False))
            continue
        k_star = frames_for_outage(q, target_pout)
        points.append(Fig4Point(pkt.name, snr_db_list[j], p, q, k_star, r0 * p / k_star, True))
    return points
