import itertools

import numpy as np
import pytest

from arqkey import analysis, coset, fading, protocol
from arqkey.analysis import OperatingPoint
from arqkey.coset import KeyParts
from arqkey.errors import DomainError, EnumerationBoundError


def _brute_counts(parts: KeyParts) -> np.ndarray:
    counts = np.zeros(2**parts.width, dtype=np.int64)
    erased = [i for i, m in enumerate(parts.erased_mask) if m]
    for fill in itertools.product(range(2**parts.width), repeat=len(erased)):
        rows = parts.parts.copy()
        for i, value in zip(erased, fill):
            rows[i] = [(value >> (parts.width - 1 - b)) & 1 for b in range(parts.width)]
        counts[coset._to_int(np.bitwise_xor.reduce(rows, axis=0))] += 1
    return counts


def test_distill_is_xor_of_parts():
    parts = KeyParts(np.array([[1, 0, 1, 1], [0, 1, 1, 0], [1, 1, 0, 0]]), (False,) * 3)
    assert coset.distill(parts).bits.tolist() == [0, 0, 0, 1]
    assert coset.distill(parts).hex() == "10"


def test_conditional_key_is_exactly_uniform_for_every_erasure_pattern():
    rng = np.random.default_rng(0)
    for k in range(1, 5):
        for width in range(1, 9):
            bits = rng.integers(0, 2, (k, width))
            for mask in itertools.product((False, True), repeat=k):
                if not any(mask):
                    continue
                parts = KeyParts(bits, mask)
                counts = coset.posterior_counts(parts)
                assert len(counts) == 2**width
                assert coset.posterior_is_uniform(counts), (k, width, mask)
                assert int(sum(counts)) == 2 ** (width * parts.erased_count)


def test_all_parts_known_pins_the_key():
    bits = np.array([[1, 0, 1], [1, 1, 0]])
    counts = coset.posterior_counts(KeyParts(bits, (False, False)))
    key = coset._to_int(coset.distill(KeyParts(bits, (False, False))).bits)
    assert counts[key] == 1
    assert int(sum(counts)) == 1
    assert coset.eve_posterior_support(KeyParts(bits, (False, False))) == 1


@pytest.mark.parametrize("mask", [(True, False, False), (False, True, True)])
def test_counts_match_brute_force(mask):
    parts = KeyParts(np.array([[1, 0, 1], [0, 0, 1], [1, 1, 1]]), mask)
    assert np.array_equal(coset.posterior_counts(parts).astype(np.int64), _brute_counts(parts))


def test_column_product_path_beyond_assignment_bound():
    # 4 erased parts of 8 bits: 2^32 assignments, counted per column.
    rng = np.random.default_rng(1)
    parts = KeyParts(rng.integers(0, 2, (5, 8)), (True, True, False, True, True))
    counts = coset.posterior_counts(parts)
    assert coset.posterior_is_uniform(counts)
    assert counts[0] == 2 ** (4 * 8 - 8)


def test_width_beyond_bound_raises():
    with pytest.raises(EnumerationBoundError):
        coset.posterior_counts(KeyParts(np.zeros((2, 21), dtype=np.uint8), (True, False)))


def test_sampled_uniformity_for_wide_keys():
    rng = np.random.default_rng(2)
    parts = KeyParts(rng.integers(0, 2, (3, 128)), (False, True, False))
    result = coset.sampled_posterior_uniformity(parts, 50_000, np.random.default_rng(3))
    assert result.buckets == 256
    assert result.pvalue > 1e-3


def test_sampled_uniformity_detects_known_key():
    parts = KeyParts(np.ones((2, 16), dtype=np.uint8), (False, False))
    result = coset.sampled_posterior_uniformity(parts, 5_000, np.random.default_rng(3))
    assert result.pvalue < 1e-6


@pytest.mark.parametrize(
    "bits, mask",
    [
        (np.zeros((2, 4)), (True,)),
        (np.full((2, 4), 2), (True, False)),
    ],
)
def test_key_parts_reject_invalid(bits, mask):
    with pytest.raises(DomainError):
        KeyParts(bits, mask)


def test_key_parts_reject_ragged_widths():
    with pytest.raises(DomainError):
        KeyParts([np.zeros(3), np.zeros(4)], (False, False))


def test_eve_key_parts_from_trace():
    params = protocol.ProtocolParams(OperatingPoint(3.0, 1.0, 10.0, 4), payload_bits=8)
    trace = protocol.run_exchange(params, fading.ChannelSpec(power=10.0), np.random.default_rng(4))
    parts = coset.eve_key_parts(trace)
    assert parts.k == 4
    assert parts.width == 8
    assert parts.erased_mask == tuple(not f.eve_intercepted for f in trace.acked_frames())
    assert np.array_equal(coset.distill(parts).bits, np.bitwise_xor.reduce(trace.key_bob.reshape(4, 8), axis=0))
    assert (parts.erased_count == 0) == trace.eve_full_intercept


@pytest.mark.parametrize("replace_on_nack", [True, False])
def test_single_key_candidate_exactly_when_eve_holds_every_part(replace_on_nack):
    point = OperatingPoint(3.0, 1.0, 10.0, 3)
    params = protocol.ProtocolParams(point, payload_bits=4, seed=31, replace_on_nack=replace_on_nack)
    pinned = completed = 0
    for _, trace in protocol.iter_exchanges(params, fading.ChannelSpec(power=10.0), 3000):
        assert trace.complete
        support = coset.eve_posterior_support(coset.eve_key_parts(trace, replace_on_nack))
        assert (support == 1) == trace.eve_full_intercept
        assert support in (1, 2**params.payload_bits)
        completed += 1
        pinned += support == 1
    freq = pinned / completed
    if replace_on_nack:
        expected = analysis.p_out(point)
        assert abs(freq - expected) < 3 * np.sqrt(expected * (1 - expected) / completed)
    else:
        assert freq >= analysis.p_out(point) - 3 * np.sqrt(freq * (1 - freq) / completed)
