"""Monte Carlo tally versus analytic expectation.

Standard errors come from the oracle probabilities and the tally's own trial
counts, so a statistic with few observed events still gets a sensible
error bar. ``E`` is compared against the oracle error rate weighted by the
realised matched trial counts.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .analytic import ClassExpectation, ExpectedStatistics
from .protocol import DISJOINT, MATCHED, SiftTally, overlap_matrix

STATISTICS = ("Q", "Q_prime", "E")


@dataclass(frozen=True)
class Comparison:
    label: str  # intensity label or "pooled"
    statistic: str
    observed: float
    expected: float
    se: float
    z: float
    passed: bool
    skipped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _compare_counts(label, L, trials, dets, errs, oracle: ClassExpectation, sigma, min_events):
    ov = overlap_matrix(L)
    out = []
    p = oracle.p
    for stat, mask in (("Q", ov == MATCHED), ("Q_prime", ov == DISJOINT)):
        n = trials[mask]
        obs = float(np.mean(dets[mask] / n))
        exp = float(np.mean(p[mask]))
        se = math.sqrt(float(np.sum(p[mask] * (1 - p[mask]) / n))) / mask.sum()
        out.append((stat, obs, exp, se, float(np.sum(n * p[mask]))))

    n_diag = np.diag(trials).astype(float)
    det_diag = np.diag(p)
    expected_dets = float(n_diag @ det_diag)
    exp_E = float(n_diag @ oracle.err / expected_dets) if expected_dets > 0 else 0.5
    n_match = int(np.trace(dets))
    obs_E = errs.sum() / n_match if n_match else math.nan
    se_E = math.sqrt(exp_E * (1 - exp_E) / expected_dets) if expected_dets > 0 else math.inf
    out.append(("E", float(obs_E), exp_E, se_E, expected_dets))

    rows = []
    for stat, obs, exp, se, events in out:
        if events < min_events:
            rows.append(Comparison(label, stat, obs, exp, se, math.nan, True, skipped=True))
            continue
        z = (obs - exp) / se if se > 0 else (0.0 if obs == exp else math.inf)
        rows.append(Comparison(label, stat, obs, exp, se, float(z), abs(z) <= sigma))
    return rows


def compare(tally: SiftTally, expected: ExpectedStatistics, sigma: float = 3.0, min_events: float = 10.0) -> list:
    """Per-class and pooled z-scores of Q, Q' and E.

    A statistic with fewer than ``min_events`` expected detections is marked
    skipped rather than tested.
    """
    rows = []
    for label, counts in sorted(tally.classes.items()):
        rows += _compare_counts(
            label, tally.L, counts.trials, counts.detections, counts.errors, expected[label], sigma, min_events
        )
    # the pooled oracle mixes classes by design weights; rebuild it from realised counts
    cs = [tally.classes[k] for k in sorted(tally.classes)]
    trials = sum(c.trials for c in cs)
    det_counts = sum(c.trials * expected[k].p for k, c in zip(sorted(tally.classes), cs))
    err_counts = sum(np.diag(c.trials) * expected[k].err for k, c in zip(sorted(tally.classes), cs))
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(trials > 0, det_counts / np.maximum(trials, 1), 0.0)
        err = np.where(np.diag(trials) > 0, err_counts / np.maximum(np.diag(trials), 1), 0.0)
    pooled = ClassExpectation(p, err, 0.0, 0.0, 0.0)
    rows += _compare_counts(
        "pooled", tally.L, trials, sum(c.detections for c in cs), sum(c.errors for c in cs), pooled, sigma, min_events
    )
    return rows


def all_passed(rows) -> bool:
    return all(r.passed for r in rows)


def format_report(rows) -> str:
    lines = [f"{'class':<8} {'stat':<8} {'observed':>12} {'expected':>12} {'se':>10} {'z':>7}  result"]
    for r in rows:
        verdict = "skip" if r.skipped else ("PASS" if r.passed else "FAIL")
        lines.append(
            f"{r.label:<8} {r.statistic:<8} {r.observed:12.5e} {r.expected:12.5e} {r.se:10.3e} {r.z:7.2f}  {verdict}"
        )
    return "\n".join(lines)
