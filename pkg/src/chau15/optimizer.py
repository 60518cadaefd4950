"""Source-parameter optimisation of the asymptotic per-packet key rate.

The search space is ``x = (mu, nu1, nu2, p_mu, p_nu1)`` with
``p_nu2 = 1 - p_mu - p_nu1``. Points are projected onto the feasible set
(bounds, ``mu > nu1 + nu2``, ``nu1 > nu2``, every probability at least
``p_min``) before evaluation, and Nelder-Mead runs from several starts.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .analytic import expected_stats
from .devices import DeviceChain
from .protocol import IntensityClass, ProtocolParams
from .security import SETTING_CONDITIONED, decoy_inputs_from_expected, keyrate_packet

_GAP = 1e-6
_PENALTY = 1e3

# nu2 stays below the nu1 floor so the two decoys remain distinct
DEFAULT_BOUNDS = {
    "mu": (0.02, 1.0),
    "nu1": (0.01, 0.5),
    "nu2": (1e-4, 0.005),
}

CSV_FIELDS = ("length_km", "mu", "nu1", "nu2", "p_mu", "p_nu1", "p_nu2", "R_inf")


def _simplex_floor(q: np.ndarray, floor: float) -> np.ndarray:
    """Euclidean projection onto ``{q >= floor, sum(q) = 1}``."""
    v = q - floor
    total = 1.0 - floor * len(q)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    k = np.nonzero(u - css / np.arange(1, len(u) + 1) > 0)[0][-1]
    theta = css[k] / (k + 1)
    return np.maximum(v - theta, 0.0) + floor


@dataclass(frozen=True)
class OptimizationSpec:
    lengths: tuple = (50.0,)
    params: ProtocolParams = field(
        default_factory=lambda: ProtocolParams(
            intensity_classes=(
                IntensityClass("mu", 0.66, 0.9781),
                IntensityClass("nu1", 0.05, 0.014),
                IntensityClass("nu2", 0.0016, 0.0079),
            )
        )
    )
    devices: DeviceChain = field(default_factory=DeviceChain)
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    p_min: float = 0.005
    optimize_intensities: bool = True
    optimize_probabilities: bool = True
    vacuum_decoy: bool = False
    n_starts: int = 4
    xatol: float = 1e-7
    fatol: float = 1e-13
    maxiter: int = 1500
    seed: int = 0
    workers: int = 1
    f_ec: float = 1.0
    convention: str = SETTING_CONDITIONED

    def __post_init__(self):
        b = dict(DEFAULT_BOUNDS)
        b.update(self.bounds)
        if self.vacuum_decoy:
            b["nu2"] = (0.0, b["nu2"][1])
        object.__setattr__(self, "bounds", b)
        for key, (lo, hi) in b.items():
            if not 0 <= lo <= hi:
                raise ValueError(f"bounds for {key} are empty: {(lo, hi)}")
        if b["mu"][1] <= b["nu1"][0] + b["nu2"][0] + 2 * _GAP:
            raise ValueError("bounds leave no room for mu > nu1 + nu2")
        if b["nu1"][1] <= b["nu2"][0] + _GAP:
            raise ValueError("bounds leave no room for nu1 > nu2")
        if not 0 <= self.p_min < 1.0 / 3.0:
            raise ValueError("p_min must lie in [0, 1/3)")
        if len(self.params.intensity_classes) != 3:
            raise ValueError("optimisation needs exactly three intensity classes")
        if not self.lengths:
            raise ValueError("no lengths to optimise")

    def initial_point(self) -> np.ndarray:
        s, d1, d2 = sorted(self.params.intensity_classes, key=lambda c: c.mean, reverse=True)
        return np.array([s.mean, d1.mean, d2.mean, s.probability, d1.probability])

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).copy()
        fixed = self.initial_point()
        if not self.optimize_intensities:
            x[:3] = fixed[:3]
        else:
            b = self.bounds
            x[2] = np.clip(x[2], *b["nu2"])
            x[1] = np.clip(x[1], max(b["nu1"][0], x[2] + _GAP), b["nu1"][1])
            x[0] = np.clip(x[0], max(b["mu"][0], x[1] + x[2] + _GAP), b["mu"][1])
        if not self.optimize_probabilities:
            x[3:] = fixed[3:]
        else:
            q = _simplex_floor(np.array([x[3], x[4], 1.0 - x[3] - x[4]]), self.p_min)
            x[3:] = q[:2]
        return x

    def to_params(self, x) -> ProtocolParams:
        mu, n1, n2, pm, p1 = self.project(x)
        labels = [c.label for c in sorted(self.params.intensity_classes, key=lambda c: c.mean, reverse=True)]
        classes = (
            IntensityClass(labels[0], float(mu), float(pm)),
            IntensityClass(labels[1], float(n1), float(p1)),
            IntensityClass(labels[2], float(n2), float(1.0 - pm - p1)),
        )
        return replace(self.params, intensity_classes=classes)


def packet_rate(params: ProtocolParams, devices: DeviceChain, f_ec: float = 1.0, convention: str = SETTING_CONDITIONED) -> float:
    """Raw (unclamped) asymptotic key rate per packet from the analytic model."""
    expected = expected_stats(params, devices)
    inputs = decoy_inputs_from_expected(params, expected)
    return keyrate_packet(inputs, None, params, f_ec=f_ec, convention=convention).R_packet_raw


@dataclass
class MaximizeResult:
    x: np.ndarray
    value: float
    trace: list  # (x, value) for every evaluation, in order


def maximize(fun: Callable, starts: Sequence, project: Optional[Callable] = None, xatol: float = 1e-8, fatol: float = 1e-13, maxiter: int = 2000, workers: int = 1) -> MaximizeResult:
    """Multi-start Nelder-Mead maximisation of ``fun`` over ``project``-ed points."""
    project = project or (lambda x: np.asarray(x, dtype=float))

    def one(x0):
        trace = []

        def neg(x):
            px = project(x)
            try:
                val = float(fun(px))
            except (ValueError, ArithmeticError):
                val = -np.inf
            trace.append((px, val))
            if not np.isfinite(val):
                return 1e300
            return -val + _PENALTY * float(np.sum((np.asarray(x) - px) ** 2))

        x0 = project(x0)
        neg(x0)
        minimize(neg, x0, method="Nelder-Mead", options={"xatol": xatol, "fatol": fatol, "maxiter": maxiter, "maxfev": 2 * maxiter})
        return trace

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one, starts))
    else:
        traces = [one(s) for s in starts]
    trace = [t for tr in traces for t in tr]
    best = max(trace, key=lambda t: t[1])
    return MaximizeResult(best[0], best[1], trace)


@dataclass
class OptimizationResult:
    length_km: float
    params: ProtocolParams
    rate: float
    no_key: bool
    trace: list = field(repr=False, default_factory=list)

    def csv_row(self) -> dict:
        s, d1, d2 = sorted(self.params.intensity_classes, key=lambda c: c.mean, reverse=True)
        return {
            "length_km": self.length_km,
            "mu": s.mean,
            "nu1": d1.mean,
            "nu2": d2.mean,
            "p_mu": s.probability,
            "p_nu1": d1.probability,
            "p_nu2": d2.probability,
            "R_inf": max(self.rate, 0.0),
        }


def optimize(spec: OptimizationSpec) -> list:
    """Best source parameters for every length in ``spec.lengths``.

    Lengths are processed in order; each search also starts from the previous
    optimum. A length whose best rate is not positive is flagged ``no_key``.
    """
    rng = np.random.default_rng(spec.seed)
    lo = np.array([spec.bounds["mu"][0], spec.bounds["nu1"][0], spec.bounds["nu2"][0], spec.p_min, spec.p_min])
    hi = np.array([spec.bounds["mu"][1], spec.bounds["nu1"][1], spec.bounds["nu2"][1], 1.0, 0.3])
    results = []
    previous = None
    for length in spec.lengths:
        devices = spec.devices.with_length(float(length))

        def objective(x, devices=devices):
            return packet_rate(spec.to_params(x), devices, spec.f_ec, spec.convention)

        starts = [spec.initial_point()]
        if previous is not None:
            starts.append(previous)
        starts += [lo + rng.random(5) * (hi - lo) for _ in range(max(spec.n_starts - len(starts), 0))]
        res = maximize(objective, starts, spec.project, spec.xatol, spec.fatol, spec.maxiter, spec.workers)
        previous = res.x
        results.append(OptimizationResult(float(length), spec.to_params(res.x), res.value, not res.value > 0, res.trace))
    return results


def results_csv(results: Sequence[OptimizationResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in results:
        writer.writerow({k: f"{v:.10g}" for k, v in r.csv_row().items()})
    return buf.getvalue()
