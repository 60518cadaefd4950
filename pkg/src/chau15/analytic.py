"""Closed-form expected statistics for the device chain.

For every (intensity class, Alice pair ``a = (i, j)``, Bob pair ``b = (m, n)``)
the gated slot ``n`` receives light from slot ``m`` through the long arm and
from slot ``n`` through the short arm. With ``T`` the optical transmittance
and ``w(s) = 1`` for ``s`` in ``a`` (else the modulator leakage ``eps``)::

    I_long  = T * mu/2 * w(m)
    I_short = T * mu/2 * w(n)
    I_pm    = (I_long + I_short)/4 +- V * sqrt(I_long * I_short) * cos(delta)/2

Each channel clicks with ``1 - (1 - d)(1 - a_c) exp(-eta I_c)`` where ``d`` is
the per-channel dark probability and ``a_c`` the stationary after-pulse rate.
For matched settings ``delta = pi * (bit xor flip)`` with ``flip`` the
misalignment phase error; otherwise at least one contribution is leaked light
of random phase, so only the port-summed intensity ``(I_long + I_short)/2``
matters for detection and per-channel averages use
``E[exp(-x cos delta)] = I0(x)``.

After-pulses: a light or dark click on channel ``c`` seeds, with probability
``p_ap[c]``, one click at a uniformly chosen slot of the next packet window.
It lands in the next gate with probability ``1/L``, so
``a_c = p_ap[c] * P(click on c) / L`` with the click probability averaged
over all configurations. Packets are independent, which makes this additive
rate exact in expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import i0e

from .devices import DeviceChain, click_probability, port_intensities
from .protocol import MATCHED, DISJOINT, ProtocolParams, overlap_matrix, pair_list, SlotPair


@dataclass(frozen=True)
class ClassExpectation:
    p: np.ndarray  # detection probability, K x K (Alice pair, Bob pair)
    err: np.ndarray  # P(detected and wrong bit) for matched settings, length K
    Q: float
    Q_prime: float
    E: float

    def to_dict(self) -> dict:
        return {
            "Q": self.Q,
            "Q_prime": self.Q_prime,
            "E": self.E,
            "p": self.p.tolist(),
            "err": self.err.tolist(),
        }


@dataclass(frozen=True)
class ExpectedStatistics:
    by_class: dict
    pooled: ClassExpectation
    afterpulse_rates: tuple

    def __getitem__(self, label) -> ClassExpectation:
        return self.by_class[label]

    def to_dict(self) -> dict:
        return {
            "pooled": self.pooled.to_dict(),
            "by_class": {k: v.to_dict() for k, v in sorted(self.by_class.items())},
            "afterpulse_rates": list(self.afterpulse_rates),
        }


def _geometry(L: int, eps: float):
    pairs = pair_list(L)
    w_long = np.array([[1.0 if b[0] in a else eps for b in pairs] for a in pairs])
    w_short = np.array([[1.0 if b[1] in a else eps for b in pairs] for a in pairs])
    return w_long, w_short


def _primary(I_long, I_short, coherent, V, eta, dark, e_mis):
    """Per-channel click probabilities without after-pulses.

    Returns arrays shaped ``(2 bits, 2 channels, ...)`` for coherent cells
    (already averaged over the misalignment flip) and the phase-averaged
    per-channel probability for incoherent cells, broadcast the same way.
    """
    out = np.empty((2, 2) + I_long.shape)
    A = (I_long + I_short) / 4.0
    B = V * np.sqrt(I_long * I_short) / 2.0
    avg = 1.0 - (1.0 - dark) * i0e(eta * B) * np.exp(eta * (B - A))
    for bit in (0, 1):
        acc = np.zeros((2,) + I_long.shape)
        for flip, w in ((0, 1.0 - e_mis), (1, e_mis)):
            delta = math.pi * (bit ^ flip)
            ports = port_intensities(I_long, I_short, delta, V)
            for c in (0, 1):
                acc[c] += w * click_probability(ports[c], eta, dark)
        for c in (0, 1):
            out[bit, c] = np.where(coherent, acc[c], avg)
    return out


def _class_cells(mu, T, geometry, coherent, dev: DeviceChain, ap_rates, e_mis):
    V = dev.interferometer.visibility
    eta = dev.detector.efficiency
    dark = dev.detector.channel_dark
    w_long, w_short = geometry
    I_long = T * mu / 2.0 * w_long
    I_short = T * mu / 2.0 * w_short
    primary = _primary(I_long, I_short, coherent, V, eta, dark, e_mis)
    if ap_rates is None:
        return primary, None, None

    a0, a1 = ap_rates
    det_incoh = 1.0 - (1.0 - dark) ** 2 * (1.0 - a0) * (1.0 - a1) * np.exp(-eta * (I_long + I_short) / 2.0)

    # Matched cells depend on (bit, flip) jointly, so recompute with after-pulses.
    det_coh = np.zeros_like(I_long)
    err = np.zeros_like(I_long)
    for bit in (0, 1):
        for flip, w in ((0, 1.0 - e_mis), (1, e_mis)):
            ports = port_intensities(I_long, I_short, math.pi * (bit ^ flip), V)
            pc = [1.0 - (1.0 - click_probability(ports[c], eta, dark)) * (1.0 - ap_rates[c]) for c in (0, 1)]
            right, wrong = pc[bit], pc[1 - bit]
            det_coh += 0.5 * w * (1.0 - (1.0 - pc[0]) * (1.0 - pc[1]))
            err += 0.5 * w * (wrong * (1.0 - right) + 0.5 * wrong * right)
    det = np.where(coherent, det_coh, det_incoh)
    # without phase reference both ports are equally likely: half the clicks are errors
    return primary, det, np.where(coherent, err, 0.5 * det)


def expected_stats(params: ProtocolParams, devices: DeviceChain, attack: Optional[str] = None) -> ExpectedStatistics:
    """Expected ``p(m,n|i,j)``, Q, Q' and E for every intensity class.

    ``attack="intercept_resend"`` models a time-basis measure-and-resend on
    every packet, which leaves slot intensities unchanged and removes all
    inter-slot coherence.
    """
    if attack not in (None, "none", "intercept_resend"):
        raise ValueError(f"unknown attack {attack!r}")
    devices.check_packet_length(params.L)
    if devices.source.im_extinction >= 1.0:
        raise ValueError("im_extinction must be below 1")
    L = params.L
    ov = overlap_matrix(L)
    coherent = (ov == MATCHED) & (attack in (None, "none"))
    geometry = _geometry(L, devices.source.im_extinction)
    T = devices.optical_transmittance()
    e_mis = devices.channel.misalignment
    pA = np.asarray(params.pair_weights)
    pB = params.bob_pair_probabilities()
    cell_w = np.outer(pA, pB)

    # stationary per-channel click probability feeding the after-pulse rates
    mean_click = np.zeros(2)
    for c in params.intensity_classes:
        primary, _, _ = _class_cells(c.mean, T, geometry, coherent, devices, None, e_mis)
        mean_click += c.probability * 0.5 * (primary[0] + primary[1]).reshape(2, -1) @ cell_w.ravel()
    ap = tuple(float(x) for x in np.asarray(devices.detector.afterpulse_prob) * mean_click / L)

    matched = ov == MATCHED
    disjoint = ov == DISJOINT
    diag_w = np.diag(cell_w)
    by_class = {}
    pooled_p = np.zeros(cell_w.shape)
    pooled_err = np.zeros(len(pA))
    for c in params.intensity_classes:
        _, det, err = _class_cells(c.mean, T, geometry, coherent, devices, ap, e_mis)
        err_diag = np.diag(err).copy()
        by_class[c.label] = _summarize(det, err_diag, matched, disjoint, diag_w)
        pooled_p += c.probability * det
        pooled_err += c.probability * err_diag
    pooled = _summarize(pooled_p, pooled_err, matched, disjoint, diag_w)
    return ExpectedStatistics(by_class, pooled, ap)


def _summarize(det, err_diag, matched, disjoint, diag_w) -> ClassExpectation:
    det_diag = np.diag(det)
    denom = float(np.dot(diag_w, det_diag))
    E = float(np.dot(diag_w, err_diag) / denom) if denom > 0 else 0.5
    return ClassExpectation(det, err_diag, float(det[matched].mean()), float(det[disjoint].mean()), E)


def calibrate_misalignment(target_E: float, params: ProtocolParams, devices: DeviceChain, label: Optional[str] = None) -> float:
    """Misalignment probability giving error rate ``target_E`` for ``label``."""
    label = label or max(params.intensity_classes, key=lambda c: c.mean).label

    def gap(e):
        dev = replace(devices, channel=replace(devices.channel, misalignment=e))
        return expected_stats(params, dev)[label].E - target_E

    if gap(0.0) > 0:
        raise ValueError("target error rate is below the device floor")
    return float(brentq(gap, 0.0, 0.5, xtol=1e-12))


def bare_click_probabilities(L: int, pair: SlotPair, mean: float, devices: DeviceChain, transmittance: float = 1.0) -> np.ndarray:
    """Per-slot click probability when one detector channel watches Alice directly."""
    eps = devices.source.im_extinction
    photons = np.full(L, eps * mean / 2.0)
    photons[[pair.i - 1, pair.j - 1]] = mean / 2.0
    det = devices.detector
    return click_probability(transmittance * photons, det.efficiency, det.channel_dark)
