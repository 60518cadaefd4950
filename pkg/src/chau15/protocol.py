"""Protocol state: preparation and measurement choices, sifting and tallies.

Slots are numbered ``1..L``. A slot pair ``(i, j)`` with ``i < j`` is
identified by its index in :func:`pair_list`, which enumerates pairs in
lexicographic order. Bob's measurement setting is likewise a pair ``(m, n)``,
realised by the interferometer as delay ``r = n - m`` gated at slot ``n``.

Counts in a :class:`SiftTally` are kept as full ``K x K`` matrices indexed by
(Alice's pair, Bob's pair), ``K = binom(L, 2)``. Matched, disjoint and
one-common-index events are read off those matrices with the masks from
:func:`overlap_matrix`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Optional

import numpy as np

from .qmath import binom

MATCHED, PARTIAL, DISJOINT = 2, 1, 0

BOB_PAIRS = "uniform_pairs"
BOB_DELAYS = "uniform_delay"

TALLY_FORMAT = "chau15.sift_tally"
TALLY_VERSION = 1


class UndefinedEstimatorError(ValueError):
    """Raised when an estimator needs a conditional with zero trials."""


@lru_cache(maxsize=None)
def pair_list(L: int) -> tuple:
    """All slot pairs ``(i, j)``, ``1 <= i < j <= L``, in lexicographic order."""
    return tuple(combinations(range(1, L + 1), 2))


@lru_cache(maxsize=None)
def pair_lookup(L: int) -> np.ndarray:
    """``(L+1) x (L+1)`` table mapping ``(i, j)`` to its pair index (-1 if invalid)."""
    table = np.full((L + 1, L + 1), -1, dtype=np.int64)
    for k, (i, j) in enumerate(pair_list(L)):
        table[i, j] = table[j, i] = k
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def overlap_matrix(L: int) -> np.ndarray:
    """Number of common slots between Alice's pair (row) and Bob's pair (column)."""
    pairs = pair_list(L)
    out = np.array([[len(set(a) & set(b)) for b in pairs] for a in pairs], dtype=np.int8)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, order=True)
class SlotPair:
    i: int
    j: int

    def __post_init__(self):
        if not (1 <= self.i < self.j):
            raise ValueError(f"invalid slot pair ({self.i}, {self.j})")

    @classmethod
    def of(cls, a: int, b: int) -> "SlotPair":
        return cls(min(a, b), max(a, b))

    def as_tuple(self) -> tuple:
        return (self.i, self.j)


@dataclass(frozen=True)
class IntensityClass:
    label: str
    mean: float  # photons per packet
    probability: float

    def __post_init__(self):
        if self.mean < 0:
            raise ValueError(f"intensity {self.label!r} has negative mean")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"intensity {self.label!r} probability outside [0, 1]")


def _normalized(weights, size, name):
    if weights is None:
        return tuple([1.0 / size] * size)
    w = np.asarray(weights, dtype=float)
    if w.shape != (size,):
        raise ValueError(f"{name} must have {size} entries, got {w.shape}")
    if np.any(w < 0):
        raise ValueError(f"{name} has negative weights")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} must sum to 1 (got {w.sum()!r})")
    return tuple(float(v) for v in w)


@dataclass(frozen=True)
class ProtocolParams:
    """Static protocol configuration.

    ``pair_weights`` is Alice's distribution over :func:`pair_list`; every
    entry must be positive so that each conditional ``p(m,n|i,j)`` can be
    estimated. Bob either draws a pair directly (``uniform_pairs``, using
    ``bob_pair_weights``) or draws a delay from ``bob_delay_weights`` and then
    a uniformly placed start slot (``uniform_delay``).
    """

    L: int = 5
    intensity_classes: tuple = (IntensityClass("mu", 0.66, 1.0),)
    pair_weights: Optional[tuple] = None
    bob_convention: str = BOB_PAIRS
    bob_pair_weights: Optional[tuple] = None
    bob_delay_weights: Optional[tuple] = None

    def __post_init__(self):
        if self.L < 4:
            raise ValueError("packet length L must be at least 4")
        K = binom(self.L, 2)
        object.__setattr__(self, "pair_weights", _normalized(self.pair_weights, K, "pair_weights"))
        if min(self.pair_weights) <= 0:
            raise ValueError("every pair weight must be positive")
        object.__setattr__(
            self, "bob_pair_weights", _normalized(self.bob_pair_weights, K, "bob_pair_weights")
        )
        object.__setattr__(
            self,
            "bob_delay_weights",
            _normalized(self.bob_delay_weights, self.L - 1, "bob_delay_weights"),
        )
        if self.bob_convention not in (BOB_PAIRS, BOB_DELAYS):
            raise ValueError(f"unknown Bob convention {self.bob_convention!r}")
        classes = tuple(self.intensity_classes)
        if not classes:
            raise ValueError("at least one intensity class is required")
        labels = [c.label for c in classes]
        if len(set(labels)) != len(labels):
            raise ValueError("intensity labels must be unique")
        total = sum(c.probability for c in classes)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"intensity probabilities must sum to 1 (got {total!r})")
        object.__setattr__(self, "intensity_classes", classes)

    @property
    def n_pairs(self) -> int:
        return binom(self.L, 2)

    @property
    def labels(self) -> tuple:
        return tuple(c.label for c in self.intensity_classes)

    def intensity(self, label: str) -> IntensityClass:
        for c in self.intensity_classes:
            if c.label == label:
                return c
        raise KeyError(label)

    def bob_pair_probabilities(self) -> np.ndarray:
        """Probability that Bob's setting is each pair, under the chosen convention."""
        if self.bob_convention == BOB_PAIRS:
            return np.asarray(self.bob_pair_weights)
        probs = np.zeros(self.n_pairs)
        lookup = pair_lookup(self.L)
        for r, w in enumerate(self.bob_delay_weights, start=1):
            for m in range(1, self.L - r + 1):
                probs[lookup[m, m + r]] += w / (self.L - r)
        return probs

    def match_probability(self) -> float:
        """Probability that Bob's setting pair equals Alice's pair."""
        return float(np.dot(self.pair_weights, self.bob_pair_probabilities()))

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "intensity_classes": [
                {"label": c.label, "mean": c.mean, "probability": c.probability}
                for c in self.intensity_classes
            ],
            "pair_weights": list(self.pair_weights),
            "bob_convention": self.bob_convention,
            "bob_pair_weights": list(self.bob_pair_weights),
            "bob_delay_weights": list(self.bob_delay_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolParams":
        classes = tuple(IntensityClass(**c) for c in d["intensity_classes"])
        return cls(
            L=int(d["L"]),
            intensity_classes=classes,
            pair_weights=d.get("pair_weights"),
            bob_convention=d.get("bob_convention", BOB_PAIRS),
            bob_pair_weights=d.get("bob_pair_weights"),
            bob_delay_weights=d.get("bob_delay_weights"),
        )


@dataclass(frozen=True)
class Packet:
    pair: SlotPair
    key_bit: int  # 0 -> relative phase 0, 1 -> relative phase pi
    intensity_class: str
    global_phase: float

    def __post_init__(self):
        if self.key_bit not in (0, 1):
            raise ValueError("key_bit must be 0 or 1")
        if not 0.0 <= self.global_phase < 2 * math.pi:
            raise ValueError("global_phase must lie in [0, 2pi)")


@dataclass(frozen=True)
class MeasurementSetting:
    delay: int
    start_slot: int

    @property
    def pair(self) -> SlotPair:
        return SlotPair(self.start_slot, self.start_slot + self.delay)

    def validate(self, L: int):
        if not (1 <= self.delay <= L - 1 and 1 <= self.start_slot <= L - self.delay):
            raise ValueError(f"setting (r={self.delay}, m={self.start_slot}) invalid for L={L}")


def prepare_packet(rng: np.random.Generator, params: ProtocolParams) -> Packet:
    pairs = pair_list(params.L)
    k = rng.choice(len(pairs), p=params.pair_weights)
    bit = int(rng.integers(0, 2))
    c = rng.choice(len(params.intensity_classes), p=[x.probability for x in params.intensity_classes])
    phase = float(rng.random() * 2 * math.pi)
    return Packet(SlotPair(*pairs[k]), bit, params.intensity_classes[c].label, phase)


def bob_setting(rng: np.random.Generator, params: ProtocolParams) -> MeasurementSetting:
    if params.bob_convention == BOB_PAIRS:
        pairs = pair_list(params.L)
        m, n = pairs[rng.choice(len(pairs), p=params.bob_pair_weights)]
        return MeasurementSetting(n - m, m)
    r = int(rng.choice(params.L - 1, p=params.bob_delay_weights)) + 1
    m = int(rng.integers(1, params.L - r + 1))
    return MeasurementSetting(r, m)


@dataclass(frozen=True)
class SiftRecord:
    kept: bool
    error: Optional[bool] = None
    overlap: int = MATCHED  # 2 matched, 1 one common index, 0 disjoint

    @property
    def kind(self) -> str:
        return {MATCHED: "matched", PARTIAL: "partial", DISJOINT: "disjoint"}[self.overlap]


def sift(alice_pair, bob_pair, alice_bit: int, bob_bit: Optional[int]) -> SiftRecord:
    """Classify one trial.

    The bit is kept iff the two pairs coincide as sets; otherwise the record
    carries the overlap class used for tallying disjoint and one-common-index
    detections.
    """
    a = set(alice_pair.as_tuple() if isinstance(alice_pair, SlotPair) else alice_pair)
    b = set(bob_pair.as_tuple() if isinstance(bob_pair, SlotPair) else bob_pair)
    common = len(a & b)
    if common == 2:
        error = None if bob_bit is None else bool(alice_bit != bob_bit)
        return SiftRecord(True, error, MATCHED)
    return SiftRecord(False, None, PARTIAL if common == 1 else DISJOINT)


def _counts(shape):
    return np.zeros(shape, dtype=np.int64)


@dataclass
class ClassCounts:
    """Counters for one intensity class.

    ``trials[a, b]`` packets had Alice pair ``a`` and Bob setting ``b``;
    ``detections`` counts those with a click in the gated slot and
    ``errors[a]`` the matched detections with the wrong bit. ``double_clicks``
    records clicks on both output channels in the same gate.
    """

    n_pairs: int
    sent: np.ndarray = None
    trials: np.ndarray = None
    detections: np.ndarray = None
    errors: np.ndarray = None
    double_clicks: np.ndarray = None

    def __post_init__(self):
        K = self.n_pairs
        for name, shape in (
            ("sent", (K,)),
            ("trials", (K, K)),
            ("detections", (K, K)),
            ("errors", (K,)),
            ("double_clicks", (K, K)),
        ):
            value = getattr(self, name)
            value = _counts(shape) if value is None else np.asarray(value, dtype=np.int64).reshape(shape)
            setattr(self, name, value)

    def merge(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(
            self.n_pairs,
            self.sent + other.sent,
            self.trials + other.trials,
            self.detections + other.detections,
            self.errors + other.errors,
            self.double_clicks + other.double_clicks,
        )


@dataclass
class SiftTally:
    L: int
    classes: dict = field(default_factory=dict)  # label -> ClassCounts
    intensities: dict = field(default_factory=dict)  # label -> (mean, probability)

    @classmethod
    def empty(cls, params: ProtocolParams) -> "SiftTally":
        K = params.n_pairs
        return cls(
            params.L,
            {c.label: ClassCounts(K) for c in params.intensity_classes},
            {c.label: (c.mean, c.probability) for c in params.intensity_classes},
        )

    @property
    def total_sent(self) -> int:
        return int(sum(c.sent.sum() for c in self.classes.values()))

    def record(self, label, alice_pair, bob_pair, detected: bool, error: bool = False, double: bool = False):
        """Add a single trial (scalar path; the engine uses array updates)."""
        lookup = pair_lookup(self.L)
        a = lookup[alice_pair.i, alice_pair.j]
        b = lookup[bob_pair.i, bob_pair.j]
        c = self.classes[label]
        c.sent[a] += 1
        c.trials[a, b] += 1
        if detected:
            c.detections[a, b] += 1
            if a == b and error:
                c.errors[a] += 1
            if double:
                c.double_clicks[a, b] += 1

    def merge(self, other: "SiftTally") -> "SiftTally":
        if self.L != other.L or set(self.classes) != set(other.classes):
            raise ValueError("cannot merge tallies with different layouts")
        return SiftTally(
            self.L,
            {k: self.classes[k].merge(other.classes[k]) for k in sorted(self.classes)},
            dict(self.intensities),
        )

    def check(self):
        """Raise ``ValueError`` if counters are mutually inconsistent."""
        for label, c in self.classes.items():
            if np.any(c.errors > np.diag(c.detections)):
                raise ValueError(f"{label}: errors exceed matched detections")
            if np.any(c.detections > c.trials) or np.any(c.double_clicks > c.detections):
                raise ValueError(f"{label}: detections exceed trials")
            if np.any(c.trials.sum(axis=1) != c.sent):
                raise ValueError(f"{label}: trial rows do not add up to sent counts")

    def to_dict(self) -> dict:
        return {
            "format": TALLY_FORMAT,
            "version": TALLY_VERSION,
            "L": self.L,
            "pairs": [list(p) for p in pair_list(self.L)],
            "total_sent": self.total_sent,
            "classes": {
                label: {
                    "mean": self.intensities[label][0],
                    "probability": self.intensities[label][1],
                    "sent": c.sent.tolist(),
                    "trials": c.trials.tolist(),
                    "detections": c.detections.tolist(),
                    "errors": c.errors.tolist(),
                    "double_clicks": c.double_clicks.tolist(),
                }
                for label, c in sorted(self.classes.items())
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SiftTally":
        if d.get("format") != TALLY_FORMAT:
            raise ValueError(f"not a sift tally (format={d.get('format')!r})")
        L = int(d["L"])
        K = binom(L, 2)
        if [tuple(p) for p in d.get("pairs", pair_list(L))] != list(pair_list(L)):
            raise ValueError("pair ordering does not match the lexicographic convention")
        classes, intensities = {}, {}
        for label, c in d["classes"].items():
            classes[label] = ClassCounts(
                K, c["sent"], c["trials"], c["detections"], c["errors"], c.get("double_clicks")
            )
            intensities[label] = (float(c["mean"]), float(c["probability"]))
        tally = cls(L, classes, intensities)
        tally.check()
        return tally

    @classmethod
    def loads(cls, text: str) -> "SiftTally":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Estimates:
    Q: float
    Q_prime: float
    E: Optional[float]
    Q_se: float
    Q_prime_se: float
    E_se: Optional[float]
    matched_detections: int
    partial_detections: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class TallyEstimates:
    """Pooled estimates plus one :class:`Estimates` per intensity class."""

    pooled: Estimates
    by_class: dict

    @property
    def Q(self):
        return self.pooled.Q

    @property
    def Q_prime(self):
        return self.pooled.Q_prime

    @property
    def E(self):
        return self.pooled.E

    def to_dict(self) -> dict:
        return {
            "pooled": self.pooled.to_dict(),
            "by_class": {k: v.to_dict() for k, v in sorted(self.by_class.items())},
        }


def _mean_of_rates(det, trials, mask, name):
    n = trials[mask]
    if np.any(n == 0):
        raise UndefinedEstimatorError(f"{name}: some required conditionals have zero trials")
    p = det[mask] / n
    k = p.size
    return float(p.mean()), float(math.sqrt(np.sum(p * (1 - p) / n)) / k)


def _estimates_from_counts(L, trials, detections, errors) -> Estimates:
    ov = overlap_matrix(L)
    Q, Q_se = _mean_of_rates(detections, trials, ov == MATCHED, "Q")
    Qp, Qp_se = _mean_of_rates(detections, trials, ov == DISJOINT, "Q'")
    n_match = int(np.trace(detections))
    if n_match > 0:
        E = float(errors.sum() / n_match)
        E_se = math.sqrt(E * (1 - E) / n_match)
    else:
        E = E_se = None
    return Estimates(Q, Qp, E, Q_se, Qp_se, E_se, n_match, int(detections[ov == PARTIAL].sum()))


def estimate(tally: SiftTally, params: Optional[ProtocolParams] = None) -> TallyEstimates:
    """Q, Q' and E per intensity class and pooled over classes.

    ``Q`` is the unweighted mean over pairs of ``p(i,j|i,j)``; ``Q'`` the
    unweighted mean over all (sent pair, disjoint setting pair) combinations.
    Each conditional is estimated from trials with *both* settings fixed.
    Standard errors follow from independent binomial variances.
    """
    if params is not None and params.L != tally.L:
        raise ValueError("tally and params disagree on L")
    by_class = {
        label: _estimates_from_counts(tally.L, c.trials, c.detections, c.errors)
        for label, c in tally.classes.items()
    }
    cs = list(tally.classes.values())
    pooled = _estimates_from_counts(
        tally.L,
        sum(c.trials for c in cs),
        sum(c.detections for c in cs),
        sum(c.errors for c in cs),
    )
    return TallyEstimates(pooled, by_class)


def disjoint_count(L: int) -> int:
    """Number of (sent pair, disjoint setting pair) combinations."""
    return binom(L, 2) * binom(L - 2, 2)


def pair_means(p: np.ndarray, L: int) -> tuple:
    """``(Q, Q')`` as plain means of a ``K x K`` conditional matrix."""
    ov = overlap_matrix(L)
    p = np.asarray(p, dtype=float)
    return float(p[ov == MATCHED].mean()), float(p[ov == DISJOINT].mean())
