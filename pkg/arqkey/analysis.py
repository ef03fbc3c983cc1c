"""Closed-form secrecy rates for ARQ key sharing over Rayleigh block fading.

Quantities at an operating point (R0, Rc, P, k):

    C_s   Pr(R0 <= log2(1 + h_b P)) * E[R0 - log2(1 + h_e P)]^+
    C_e   R0 * Pr(R0 <= log2(1 + h_b P)) * Pr(R0 - Rc > log2(1 + h_e P))
    P_out exp(-(k / P) * (2^(R0 - Rc) - 1))
    N0    k * exp((2^R0 - 1) / P)
    R_k   R0 / N0

Every exponential of a possibly huge negative argument is formed in log
space and exponentiated last. Anything below UNDERFLOW_FLOOR is reported as
0 and flagged on the RateReport.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import fading
from .errors import DomainError

logger = logging.getLogger(__name__)

UNDERFLOW_FLOOR = 1e-300
LOG_UNDERFLOW_FLOOR = math.log(UNDERFLOW_FLOOR)
LOG_FLOAT_MAX = math.log(np.finfo(float).max)

E1_DIRECT_MAX = 50.0
GEOMETRIC_MIN_SUCCESS = 1e-9

R0_MAX = 25.0
R0_GRID_POINTS = 500
POWER_GRID_POINTS = 16
POWER_GRID_DECADES = 4.0
OBJECTIVES = ("cs", "ce")


@dataclass(frozen=True)
class OperatingPoint:
    """Transmission rate R0, Genie side information Rc, power P, key frames k."""

    r0: float
    rc: float = 0.0
    power: float = 1.0
    k: int = 1

    def __post_init__(self) -> None:
        if not self.r0 > 0:
            raise DomainError(f"R0 must be > 0, got {self.r0}")
        if not self.rc >= 0:
            raise DomainError(f"Rc must be >= 0, got {self.rc}")
        if not self.power >= 0:
            raise DomainError(f"P must be >= 0, got {self.power}")
        if int(self.k) != self.k or self.k < 1:
            raise DomainError(f"k must be a positive integer, got {self.k}")
        object.__setattr__(self, "k", int(self.k))


@dataclass(frozen=True)
class RateReport:
    cs: float
    ce: float
    p_out: float
    n0: float
    rk: float
    underflow: bool = False


@dataclass
class Optimum:
    objective: str
    argmax_r0: float
    argmax_power: float
    value: float
    trace: list[tuple[float, float, float]] = field(default_factory=list)
    degenerate: bool = False


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Sample mean with its standard error.

    ``scale`` bounds the magnitude of a single sample. When every sample is
    equal the standard error is 0 and z_score falls back to scale / trials,
    so |z| < 3 reads as the rule-of-three bound 3 * scale / trials.
    """

    estimate: float
    std_error: float
    trials: int
    scale: float = 1.0

    def z_score(self, expected: float) -> float:
        if self.estimate == expected:
            return 0.0
        if self.std_error == 0:
            return (self.estimate - expected) / (self.scale / self.trials)
        if not math.isfinite(self.std_error):
            return math.inf
        return (self.estimate - expected) / self.std_error


@dataclass(frozen=True)
class TradeoffPoint:
    """One (R0, Rc, k) row of an outage / key-rate tradeoff curve."""

    r0: float
    rc: float
    k: int
    key_rate: float
    p_out: float
    feasible: bool = True


# ---------------------------------------------------------------------------
# Exponential integral
# ---------------------------------------------------------------------------

def exp_integral_e1_scaled(x: float) -> float:
    """e^x * E1(x) without forming e^x.

    Direct product up to E1_DIRECT_MAX; beyond it the Tricomi function
    U(1, 1, x), which equals e^x E1(x) and tends to 1/x.
    """
    if not x > 0:
        raise DomainError(f"E1 is defined for x > 0, got {x}")
    if x <= E1_DIRECT_MAX:
        return math.exp(x) * float(special.exp1(x))
    value = float(special.hyperu(1.0, 1.0, x))
    if not (math.isfinite(value) and value > 0):
        logger.debug("hyperu(1, 1, %g) = %r, using 1/x", x, value)
        return 1.0 / x
    return value


def exp_integral_e1(x: float) -> float:
    """E1(x) = integral from x to infinity of exp(-t)/t dt, for x > 0."""
    if not x > 0:
        raise DomainError(f"E1 is defined for x > 0, got {x}")
    return float(special.exp1(x))


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def _exp_floor(log_value: float) -> tuple[float, bool]:
    """exp(log_value), with results below UNDERFLOW_FLOOR returned as (0, True)."""
    if log_value < LOG_UNDERFLOW_FLOOR:
        return 0.0, True
    return math.exp(log_value), False


def _log_bob_success(r0: float, power: float, mean_gain: float) -> float:
    threshold = 2.0 ** r0 - 1.0
    if threshold <= 0:
        return 0.0
    if power * mean_gain == 0:
        return -math.inf
    return -threshold / (power * mean_gain)


def expected_rate_gap(
    r0: float, power: float, mean_gain_eve: float = 1.0
) -> float:
    """E[R0 - log2(1 + h_e P)]^+ for exponential h_e, in bits per channel use."""
    if r0 == 0:
        return 0.0
    pe = power * mean_gain_eve
    a = 1.0 / pe
    b = 2.0 ** r0 / pe
    # e^a [E1(a) - E1(b)] = s(a) - e^(a - b) s(b), s(x) = e^x E1(x)
    gap = exp_integral_e1_scaled(a) - math.exp(a - b) * exp_integral_e1_scaled(b)
    return max(r0 - gap / math.log(2.0), 0.0)


def cs_rayleigh(
    r0: float,
    power: float,
    mean_gain_bob: float = 1.0,
    mean_gain_eve: float = 1.0,
) -> float:
    """The secrecy-rate objective at fixed R0 (no maximization) for Rayleigh links."""
    if not power > 0:
        raise DomainError(f"P must be > 0, got {power}")
    if r0 < 0:
        raise DomainError(f"R0 must be >= 0, got {r0}")
    if r0 == 0:
        return 0.0
    success, underflow = _exp_floor(_log_bob_success(r0, power, mean_gain_bob))
    if underflow:
        return 0.0
    return success * expected_rate_gap(r0, power, mean_gain_eve)


def erasure_probability(pt: OperatingPoint, mean_gain_eve: float = 1.0) -> float:
    """Eve's frame erasure probability; Rc = 0 gives the ML-decoder case."""
    return fading.eve_erasure_probability(pt.r0, pt.rc, pt.power, mean_gain_eve)


def ce_rate(
    pt: OperatingPoint, mean_gain_bob: float = 1.0, mean_gain_eve: float = 1.0
) -> float:
    """Erasure-wiretap secrecy objective at pt: R0 * Pr(Bob ok) * Pr(Eve erased)."""
    erasure = erasure_probability(pt, mean_gain_eve)
    if erasure == 0:
        return 0.0
    success, _ = _exp_floor(_log_bob_success(pt.r0, pt.power, mean_gain_bob))
    return pt.r0 * success * erasure


def _log_p_out(pt: OperatingPoint, mean_gain_eve: float) -> float:
    if pt.r0 <= pt.rc:
        return 0.0
    if pt.power * mean_gain_eve == 0:
        return -math.inf
    return -(pt.k / (pt.power * mean_gain_eve)) * (2.0 ** (pt.r0 - pt.rc) - 1.0)


def p_out(pt: OperatingPoint, mean_gain_eve: float = 1.0) -> float:
    """Secrecy outage probability: Eve decodes all k key-carrying frames."""
    return _exp_floor(_log_p_out(pt, mean_gain_eve))[0]


def avg_transmissions(pt: OperatingPoint, mean_gain_bob: float = 1.0) -> float:
    """Expected frames needed for k ACKs; math.inf when Bob can never decode."""
    log_success = _log_bob_success(pt.r0, pt.power, mean_gain_bob)
    if -log_success > LOG_FLOAT_MAX - math.log(pt.k):
        return math.inf
    return pt.k * math.exp(-log_success)


def key_rate(pt: OperatingPoint, mean_gain_bob: float = 1.0) -> float:
    """Distilled key bits per channel use, R0 / N0."""
    success, _ = _exp_floor(_log_bob_success(pt.r0, pt.power, mean_gain_bob))
    return (pt.r0 / pt.k) * success


def rate_report(
    pt: OperatingPoint, mean_gain_bob: float = 1.0, mean_gain_eve: float = 1.0
) -> RateReport:
    log_success = _log_bob_success(pt.r0, pt.power, mean_gain_bob)
    underflow = log_success < LOG_UNDERFLOW_FLOOR or (
        _log_p_out(pt, mean_gain_eve) < LOG_UNDERFLOW_FLOOR
    )
    cs = cs_rayleigh(pt.r0, pt.power, mean_gain_bob, mean_gain_eve) if pt.power > 0 else 0.0
    return RateReport(
        cs=cs,
        ce=ce_rate(pt, mean_gain_bob, mean_gain_eve),
        p_out=p_out(pt, mean_gain_eve),
        n0=avg_transmissions(pt, mean_gain_bob),
        rk=key_rate(pt, mean_gain_bob),
        underflow=underflow,
    )


# ---------------------------------------------------------------------------
# Monte Carlo oracles
# ---------------------------------------------------------------------------

def _estimate(samples: np.ndarray, scale: float = 1.0) -> MonteCarloEstimate:
    n = samples.size
    # Normalized first so sums and squares of huge frame counts stay finite.
    peak = float(np.max(np.abs(samples)))
    unit = samples / peak if peak > 0 else samples
    mean = float(unit.mean()) * peak if peak > 0 else 0.0
    if n < 2:
        return MonteCarloEstimate(mean, math.inf, n, scale)
    spread = float(unit.std(ddof=1)) * peak if peak > 0 else 0.0
    return MonteCarloEstimate(mean, spread / math.sqrt(n), n, scale)


def check_power(pt: OperatingPoint, spec: fading.ChannelSpec) -> None:
    """Raise DomainError unless pt and spec agree on the transmit power."""
    if not math.isclose(pt.power, spec.power, rel_tol=1e-12, abs_tol=0.0):
        raise DomainError(
            f"operating point power {pt.power} does not match channel power {spec.power}"
        )


def cs_objective_mc(
    r0: float, spec: fading.ChannelSpec, trials: int, stream: np.random.Generator
) -> MonteCarloEstimate:
    """Monte Carlo estimate of the C_s objective; any mean gains."""
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    h_b, h_e = fading.sample_gains(spec, stream, trials)
    decoded = fading.bob_decodes(r0, h_b, spec.power)
    gap = np.maximum(r0 - fading.mutual_info(h_e, spec.power), 0.0)
    return _estimate(np.where(decoded, gap, 0.0), scale=r0)


def ce_objective_mc(
    pt: OperatingPoint, spec: fading.ChannelSpec, trials: int, stream: np.random.Generator
) -> MonteCarloEstimate:
    """Monte Carlo estimate of the C_e objective at pt; spec.power must equal pt.power."""
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    check_power(pt, spec)
    h_b, h_e = fading.sample_gains(spec, stream, trials)
    hit = fading.bob_decodes(pt.r0, h_b, pt.power) & fading.eve_erased(
        pt.r0, pt.rc, h_e, pt.power
    )
    return _estimate(pt.r0 * hit.astype(float), scale=pt.r0)


def p_out_mc(
    pt: OperatingPoint,
    trials: int,
    stream: np.random.Generator,
    mean_gain_eve: float = 1.0,
) -> MonteCarloEstimate:
    """Pr(min_j log2(1 + h_e(j) P) > R0 - Rc) over k i.i.d. Eve gains."""
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    h_e = -mean_gain_eve * np.log(1.0 - stream.random((trials, pt.k)))
    weakest = fading.mutual_info(h_e.min(axis=1), pt.power)
    return _estimate((weakest > pt.r0 - pt.rc).astype(float))


def avg_transmissions_mc(
    pt: OperatingPoint,
    trials: int,
    stream: np.random.Generator,
    mean_gain_bob: float = 1.0,
) -> MonteCarloEstimate:
    """Frames needed for k ACKs as a sum of k geometric trials."""
    success = fading.bob_success_probability(pt.r0, pt.power, mean_gain_bob)
    if success == 0 or math.isinf(avg_transmissions(pt, mean_gain_bob)):
        return MonteCarloEstimate(math.inf, math.inf, trials, pt.k)
    if success >= GEOMETRIC_MIN_SUCCESS:
        counts = stream.geometric(success, size=(trials, pt.k)).astype(float)
    else:
        # Counts past int64 range: inverse CDF of the geometric law in floats.
        draws = np.log1p(-stream.random((trials, pt.k))) / math.log1p(-success)
        counts = np.maximum(np.ceil(draws), 1.0)
    return _estimate(counts.sum(axis=1), scale=pt.k)


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(
    f: Callable[[float], float], a: float, b: float, tol: float = 1e-9
) -> tuple[float, float]:
    """Maximize a unimodal f on [a, b]; returns (x, f(x)) of the best point evaluated."""
    a, b = min(a, b), max(a, b)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def _objective(
    name: str, rc: float, mean_gain_bob: float, mean_gain_eve: float
) -> Callable[[float, float], float]:
    if name == "cs":
        return lambda r0, p: cs_rayleigh(r0, p, mean_gain_bob, mean_gain_eve)
    if name == "ce":
        return lambda r0, p: ce_rate(
            OperatingPoint(r0, rc, p, 1), mean_gain_bob, mean_gain_eve
        )
    raise DomainError(f"objective must be one of {OBJECTIVES}, got {name!r}")


def _best(trace: list[tuple[float, float, float]]) -> tuple[float, float, float]:
    # Highest value; ties go to the smallest R0, then the smallest P.
    return max(trace, key=lambda t: (t[2], -t[0], -t[1]))


def optimize_rate(
    objective: str,
    p_max: float,
    rc: float = 0.0,
    *,
    r0_max: float = R0_MAX,
    r0_points: int = R0_GRID_POINTS,
    power_points: int = POWER_GRID_POINTS,
    mean_gain_bob: float = 1.0,
    mean_gain_eve: float = 1.0,
) -> Optimum:
    """Maximize C_s or C_e over R0 in (0, r0_max] and P in (0, p_max].

    Coarse grid (uniform in R0, log-spaced in P ending at p_max), then
    alternating golden-section refinement on R0 at the best P and on log P
    at that R0, ending with R0.
    """
    if not p_max > 0:
        raise DomainError(f"P_max must be > 0, got {p_max}")
    f = _objective(objective, rc, mean_gain_bob, mean_gain_eve)
    trace: list[tuple[float, float, float]] = []

    def evaluate(r0: float, p: float) -> float:
        value = f(r0, p)
        trace.append((r0, p, value))
        return value

    r0_grid = r0_max * np.arange(1, r0_points + 1) / r0_points
    if power_points > 1:
        p_grid = p_max * np.logspace(-POWER_GRID_DECADES, 0.0, power_points)
    else:
        p_grid = np.array([p_max])
    for p in p_grid:
        for r0 in r0_grid:
            evaluate(float(r0), float(p))

    best_r0, best_p, best_value = _best(trace)
    if best_value <= 0:
        logger.info("%s objective is zero on the whole box (Rc=%g)", objective, rc)
        return Optimum(objective, best_r0, best_p, 0.0, trace, degenerate=True)

    step = r0_max / r0_points
    log_p_grid = np.log10(p_grid)

    def refine_r0(r0: float, p: float) -> None:
        lo, hi = max(r0 - step, step * 1e-3), min(r0 + step, r0_max)
        golden_section_max(lambda r: evaluate(r, p), lo, hi)

    for _ in range(2):
        refine_r0(best_r0, best_p)
        best_r0, best_p, best_value = _best(trace)
        if len(p_grid) > 1:
            i = int(np.argmin(np.abs(log_p_grid - math.log10(best_p))))
            lo, hi = log_p_grid[max(i - 1, 0)], log_p_grid[min(i + 1, len(p_grid) - 1)]
            golden_section_max(
                lambda lp: evaluate(best_r0, min(10.0 ** lp, p_max)), lo, hi
            )
            best_r0, best_p, best_value = _best(trace)
    refine_r0(best_r0, best_p)
    best_r0, best_p, best_value = _best(trace)

    logger.debug(
        "%s optimum %.6g at R0=%.6g P=%.6g (%d evaluations)",
        objective, best_value, best_r0, best_p, len(trace),
    )
    return Optimum(objective, best_r0, best_p, best_value, trace)


# ---------------------------------------------------------------------------
# Outage / key-rate tradeoff
# ---------------------------------------------------------------------------

def tradeoff_sweep(
    rc: float,
    power: float,
    r0_list: list[float],
    target_pout: float,
    *,
    k_max: int = 100_000,
    mean_gain_bob: float = 1.0,
    mean_gain_eve: float = 1.0,
) -> list[TradeoffPoint]:
    """For each R0, emit (R_k, P_out) for k = 1, 2, ... until P_out <= target."""
    if not 0 < target_pout <= 1:
        raise DomainError(f"target outage must be in (0, 1], got {target_pout}")
    points: list[TradeoffPoint] = []
    for r0 in r0_list:
        if r0 <= rc:
            pt = OperatingPoint(r0, rc, power, 1)
            points.append(
                TradeoffPoint(r0, rc, 1, key_rate(pt, mean_gain_bob), 1.0, feasible=False)
            )
            continue
        for k in range(1, k_max + 1):
            pt = OperatingPoint(r0, rc, power, k)
            outage = p_out(pt, mean_gain_eve)
            points.append(TradeoffPoint(r0, rc, k, key_rate(pt, mean_gain_bob), outage))
            if outage <= target_pout:
                break
        else:
            logger.warning(
                "R0=%g Rc=%g: outage %.3g still above %.3g at k_max=%d",
                r0, rc, outage, target_pout, k_max,
            )
    return points
