"""Secret key rates: Eve's information bound, decoy-state estimates, RRDPS baseline.

Eve's information per sifted bit is bounded by ``h2(Q' / (2 Q))`` where ``Q``
is the mean matched-setting yield and ``Q'`` the mean yield for settings
disjoint from the sent pair. Substituting the definitions of the two means
into the pair-resolved ratio

    sum_{disjoint} p(m,n|i,j) / ((L-2)(L-3) sum_{i<j} p(i,j|i,j))

gives exactly ``Q' / (2 Q)`` because ``binom(L-2, 2) = (L-2)(L-3)/2``. The
argument is clipped at 1/2, which can only overstate Eve's knowledge.

Weak coherent sources use the vacuum+weak two-decoy estimators under Poisson
photon statistics, applied both to the matched yields and to the disjoint
yields (upper bound). The per-packet rate is::

    R = p_mu * s * [Q1 (1 - h2(Y1'/(2 Y1))) - f_ec * Q_mu * h2(E_mu)]

with ``s`` the sift factor of the chosen conditioning convention.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .qmath import binary_entropy, check_probability, clip

SETTING_CONDITIONED = "setting_conditioned"
UNCONDITIONED = "unconditioned"
CONVENTIONS = (SETTING_CONDITIONED, UNCONDITIONED)


class UndefinedBoundError(ValueError):
    pass


class InfeasibleStatisticsError(ValueError):
    """Decoy statistics admit no consistent photon-number yields."""


def iae_bound(Q: float, Q_prime: float) -> float:
    """Upper bound on Eve's information per sifted bit, ``h2(min(Q'/(2Q), 1/2))``."""
    if not Q > 0:
        raise UndefinedBoundError("information bound needs a positive matched yield Q")
    if Q_prime < 0:
        raise ValueError("Q' must be non-negative")
    return binary_entropy(clip(Q_prime / (2.0 * Q), 0.0, 0.5))


def iae_argument_from_matrix(p, L: int) -> float:
    """Pair-resolved argument of the bound, computed directly from ``p(m,n|i,j)``."""
    from .protocol import MATCHED, DISJOINT, overlap_matrix

    p = np.asarray(p, dtype=float)
    ov = overlap_matrix(L)
    return float(p[ov == DISJOINT].sum() / ((L - 2) * (L - 3) * p[ov == MATCHED].sum()))


def keyrate_sifted(E: float, iae: float, f_ec: float = 1.0) -> float:
    """Secret bits per sifted bit, ``1 - f_ec h2(E) - I_AE`` (may be negative)."""
    if f_ec < 1.0:
        raise ValueError("f_ec must be at least 1")
    return 1.0 - f_ec * binary_entropy(E) - iae


def rrdps_keyrate(e_bit: float, L: int) -> float:
    """Single-photon RRDPS rate ``1 - h2(e) - h2(1/(L-1))`` for comparison."""
    if L < 3:
        raise ValueError("RRDPS needs L >= 3")
    return 1.0 - binary_entropy(e_bit) - binary_entropy(1.0 / (L - 1))


def _tolerable(rate) -> float:
    if rate(0.0) <= 0:
        return 0.0
    if rate(0.5) > 0:
        return 0.5
    return float(brentq(rate, 0.0, 0.5, xtol=1e-14))


def tolerable_error(iae: float = 0.0, f_ec: float = 1.0) -> float:
    """Largest bit error rate with a positive sifted key rate."""
    return _tolerable(lambda e: keyrate_sifted(e, iae, f_ec))


def rrdps_tolerable_error(L: int) -> float:
    return _tolerable(lambda e: rrdps_keyrate(e, L))


@dataclass(frozen=True)
class IntensityStats:
    mean: float
    probability: float
    Q: float
    Q_prime: float
    E: Optional[float] = None

    def __post_init__(self):
        check_probability(self.Q, "gain Q")
        check_probability(self.Q_prime, "gain Q'")
        check_probability(self.probability, "class probability")
        if self.E is not None:
            check_probability(self.E, "error rate")


@dataclass(frozen=True)
class DecoyInputs:
    signal: IntensityStats
    decoy1: IntensityStats
    decoy2: IntensityStats

    def __post_init__(self):
        mu, n1, n2 = self.signal.mean, self.decoy1.mean, self.decoy2.mean
        if not mu > n1 > n2 >= 0:
            raise ValueError(f"need mu > nu1 > nu2 >= 0, got {mu}, {n1}, {n2}")
        if not n1 + n2 < mu:
            raise ValueError("need nu1 + nu2 < mu")
        if self.signal.E is None:
            raise ValueError("the signal error rate E_mu is required")

    @classmethod
    def from_classes(cls, stats: dict) -> "DecoyInputs":
        """Build from three labelled classes, ordered by mean intensity."""
        if len(stats) != 3:
            raise ValueError(f"two-decoy analysis needs exactly 3 intensity classes, got {len(stats)}")
        ordered = sorted(stats.values(), key=lambda s: s.mean, reverse=True)
        return cls(*ordered)


@dataclass(frozen=True)
class DecoyEstimate:
    Y0_lower: float
    Y1_lower: float
    Y1_upper: float
    e1_upper: float
    Y1p_upper: float
    Q1_lower: float

    def to_dict(self) -> dict:
        return asdict(self)


def decoy_bounds(inputs: DecoyInputs) -> DecoyEstimate:
    """Vacuum+weak decoy bounds on single-photon yields.

    ``Y1_lower`` and ``Y1p_upper`` are the quantities entering the key rate;
    ``e1_upper`` uses decoy error rates when given and otherwise falls back to
    the signal-state bound with dark-count error 1/2.
    """
    s, d1, d2 = inputs.signal, inputs.decoy1, inputs.decoy2
    mu, n1, n2 = s.mean, d1.mean, d2.mean
    g1, g2, gs = d1.Q * math.exp(n1), d2.Q * math.exp(n2), s.Q * math.exp(mu)

    Y0 = max(0.0, (n1 * d2.Q * math.exp(n2) - n2 * d1.Q * math.exp(n1)) / (n1 - n2))
    Y1_lo = mu / (mu * n1 - mu * n2 - n1**2 + n2**2) * (g1 - g2 - (n1**2 - n2**2) / mu**2 * (gs - Y0))
    Y1_hi = (g1 - g2) / (n1 - n2)
    Y1p_hi = (d1.Q_prime * math.exp(n1) - d2.Q_prime * math.exp(n2)) / (n1 - n2)
    if Y1_lo > Y1_hi * (1 + 1e-12) + 1e-300:
        raise InfeasibleStatisticsError(f"single-photon yield bounds cross: {Y1_lo:.3e} > {Y1_hi:.3e}")
    if Y1p_hi < 0:
        raise InfeasibleStatisticsError(f"disjoint single-photon yield upper bound is negative ({Y1p_hi:.3e})")
    Y1_lo = min(max(Y1_lo, 0.0), 1.0)

    if Y1_lo <= 0:
        e1 = 1.0
    elif d1.E is not None and d2.E is not None:
        e1 = (d1.E * g1 - d2.E * g2) / ((n1 - n2) * Y1_lo)
    else:
        e1 = (s.E * gs - 0.5 * Y0) / (mu * Y1_lo)
    return DecoyEstimate(
        Y0_lower=min(Y0, 1.0),
        Y1_lower=Y1_lo,
        Y1_upper=min(Y1_hi, 1.0),
        e1_upper=clip(e1, 0.0, 1.0),
        Y1p_upper=min(Y1p_hi, 1.0),
        Q1_lower=mu * math.exp(-mu) * Y1_lo,
    )


@dataclass(frozen=True)
class KeyRateResult:
    R_packet: float
    R_packet_raw: float
    R_sifted: float
    R_sifted_raw: float
    I_AE: float
    components: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "R_packet": self.R_packet,
            "R_packet_raw": self.R_packet_raw,
            "R_sifted": self.R_sifted,
            "R_sifted_raw": self.R_sifted_raw,
            "I_AE": self.I_AE,
            "components": dict(self.components),
        }

    CSV_FIELDS = (
        "R_packet",
        "R_packet_raw",
        "R_sifted",
        "I_AE",
        "h2_E",
        "sift_factor",
        "single_photon_fraction",
        "Y1_lower",
        "Y1p_upper",
        "f_ec",
    )

    def csv_row(self) -> dict:
        flat = {**self.to_dict(), **self.components}
        return {k: flat[k] for k in self.CSV_FIELDS}


def sift_factor(params, convention: str = SETTING_CONDITIONED) -> float:
    if convention == SETTING_CONDITIONED:
        return 1.0
    if convention == UNCONDITIONED:
        if params is None:
            raise ValueError("the unconditioned convention needs protocol parameters")
        return params.match_probability()
    raise ValueError(f"unknown convention {convention!r}; choose from {CONVENTIONS}")


def keyrate_packet(inputs: DecoyInputs, estimate: Optional[DecoyEstimate] = None, params=None, f_ec: float = 1.0, convention: str = SETTING_CONDITIONED) -> KeyRateResult:
    """Asymptotic secret key rate per packet from decoy-state statistics.

    ``setting_conditioned`` reports bits per packet whose measurement setting
    matched the prepared pair (the per-packet rates quoted for the measured
    data agree with this convention); ``unconditioned`` also charges the
    probability that the settings match.
    """
    if f_ec < 1.0:
        raise ValueError("f_ec must be at least 1")
    est = estimate or decoy_bounds(inputs)
    s = inputs.signal
    sf = sift_factor(params, convention)
    if est.Y1_lower > 0:
        iae = iae_bound(est.Y1_lower, est.Y1p_upper)
    else:
        iae = 1.0
    hE = binary_entropy(s.E)
    privacy = est.Q1_lower * (1.0 - iae)
    correction = f_ec * s.Q * hE
    raw = s.probability * sf * (privacy - correction)
    per_sifted = (privacy - correction) / s.Q if s.Q > 0 else 0.0
    comps = {
        "h2_E": hE,
        "error_correction_term": correction,
        "privacy_term": privacy,
        "sift_factor": sf,
        "single_photon_fraction": est.Q1_lower / s.Q if s.Q > 0 else 0.0,
        "p_signal": s.probability,
        "Y1_lower": est.Y1_lower,
        "Y1p_upper": est.Y1p_upper,
        "f_ec": f_ec,
        "convention": convention,
    }
    return KeyRateResult(max(raw, 0.0), raw, max(per_sifted, 0.0), per_sifted, iae, comps)


def decoy_inputs_from_tally(tally, estimates=None) -> DecoyInputs:
    """Decoy inputs from a sift tally (its classes must carry means and probabilities)."""
    from .protocol import estimate as _estimate

    est = estimates or _estimate(tally)
    stats = {}
    for label, e in est.by_class.items():
        mean, prob = tally.intensities[label]
        stats[label] = IntensityStats(mean, prob, e.Q, e.Q_prime, e.E)
    return DecoyInputs.from_classes(stats)


def decoy_inputs_from_expected(params, expected) -> DecoyInputs:
    stats = {
        c.label: IntensityStats(c.mean, c.probability, expected[c.label].Q, expected[c.label].Q_prime, expected[c.label].E)
        for c in params.intensity_classes
    }
    return DecoyInputs.from_classes(stats)
