"""Event-level Monte Carlo engine.

Packets are processed in fixed-size blocks. Block ``k`` draws from its own
counter-based Philox stream keyed by ``(master_seed, k)``, so the tally is a
function of the seed alone and does not depend on how blocks are spread over
workers. After-pulses carry over between consecutive packets inside a block
only.
"""

from __future__ import annotations

import hashlib
import json
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .analytic import bare_click_probabilities
from .devices import DeviceChain, port_intensities
from .protocol import (
    BOB_PAIRS,
    ClassCounts,
    ProtocolParams,
    SiftTally,
    SlotPair,
    TallyEstimates,
    estimate,
    pair_list,
    pair_lookup,
)

DEFAULT_BLOCK = 1 << 16
ATTACKS = ("none", "intercept_resend")


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Independent counter-based stream for one block of packets."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


@dataclass(frozen=True)
class RunConfig:
    n_packets: int
    params: ProtocolParams = field(default_factory=ProtocolParams)
    devices: DeviceChain = field(default_factory=DeviceChain)
    seed: int = 0
    workers: int = 1
    attack: Optional[str] = None
    block_size: int = DEFAULT_BLOCK

    def __post_init__(self):
        if self.n_packets < 1:
            raise ValueError("n_packets must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if (self.attack or "none") not in ATTACKS:
            raise ValueError(f"unknown attack {self.attack!r}; choose from {ATTACKS}")
        self.devices.check_packet_length(self.params.L)

    @property
    def n_blocks(self) -> int:
        return -(-self.n_packets // self.block_size)

    def to_dict(self) -> dict:
        return {
            "n_packets": int(self.n_packets),
            "seed": int(self.seed),
            "workers": int(self.workers),
            "attack": self.attack or "none",
            "block_size": int(self.block_size),
            "params": self.params.to_dict(),
            "devices": self.devices.to_dict(),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class RunResult:
    tally: SiftTally
    estimates: TallyEstimates
    provenance: dict


def simulate_block(config: RunConfig, block: int) -> SiftTally:
    params, dev = config.params, config.devices
    L, K = params.L, params.n_pairs
    classes = params.intensity_classes
    C = len(classes)
    start = block * config.block_size
    n = min(config.block_size, config.n_packets - start)
    rng = block_rng(config.seed, block)
    pairs = np.asarray(pair_list(L))

    # draw order is part of the reproducibility contract
    a = rng.choice(K, size=n, p=params.pair_weights)
    bit = rng.integers(0, 2, size=n)
    cls = rng.choice(C, size=n, p=[c.probability for c in classes])
    if params.bob_convention == BOB_PAIRS:
        b = rng.choice(K, size=n, p=params.bob_pair_weights)
    else:
        r = rng.choice(L - 1, size=n, p=params.bob_delay_weights) + 1
        m0 = 1 + np.floor(rng.random(n) * (L - r)).astype(np.int64)
        b = pair_lookup(L)[m0, m0 + r]
    flip = rng.random(n) < dev.channel.misalignment
    random_phase = rng.random(n) * 2 * math.pi
    u_click = rng.random((n, 2))
    u_ap = rng.random((n, 2))
    landing = rng.integers(1, L + 1, size=n)
    coin = rng.random(n) < 0.5

    i, j = pairs[a, 0], pairs[a, 1]
    m, gate = pairs[b, 0], pairs[b, 1]
    eps = dev.source.im_extinction
    half = dev.optical_transmittance() * np.array([c.mean for c in classes])[cls] / 2.0
    I_long = half * np.where((m == i) | (m == j), 1.0, eps)
    I_short = half * np.where((gate == i) | (gate == j), 1.0, eps)
    coherent = a == b
    if config.attack == "intercept_resend":
        coherent = np.zeros(n, dtype=bool)
    delta = np.where(coherent, math.pi * (bit ^ flip), random_phase)
    ports = np.stack(port_intensities(I_long, I_short, delta, dev.interferometer.visibility), axis=1)

    det = dev.detector
    p = 1.0 - (1.0 - det.channel_dark) * np.exp(-det.efficiency * ports)
    clicks = u_click < p
    seeds = clicks & (u_ap < np.asarray(det.afterpulse_prob))
    hit = landing[:-1] == gate[1:]
    clicks[1:] |= seeds[:-1] & hit[:, None]

    c0, c1 = clicks[:, 0], clicks[:, 1]
    detected = c0 | c1
    double = c0 & c1
    bob_bit = np.where(double, coin, c1).astype(np.int64)
    error = detected & (a == b) & (bob_bit != bit)

    cell = (cls * K + a) * K + b
    size = C * K * K

    def count(mask):
        return np.bincount(cell[mask], minlength=size).reshape(C, K, K)

    trials = np.bincount(cell, minlength=size).reshape(C, K, K)
    dets = count(detected)
    errs = count(error)
    doubles = count(double)
    tally = SiftTally(L, {}, {c.label: (c.mean, c.probability) for c in classes})
    for k, c in enumerate(classes):
        tally.classes[c.label] = ClassCounts(
            K, trials[k].sum(axis=1), trials[k], dets[k], np.diag(errs[k]).copy(), doubles[k]
        )
    return tally


def _simulate_range(config: RunConfig, blocks: range) -> SiftTally:
    tally = SiftTally.empty(config.params)
    for blk in blocks:
        tally = tally.merge(simulate_block(config, blk))
    return tally


def _partition(n_blocks: int, workers: int) -> list:
    edges = np.linspace(0, n_blocks, workers + 1).round().astype(int)
    return [range(lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def run(config: RunConfig, progress: bool = False) -> RunResult:
    """Simulate ``config.n_packets`` packets and return tally, estimates, provenance.

    Any worker exception aborts the whole run; no partial tally is returned.
    """
    ranges = _partition(config.n_blocks, config.workers)
    if config.workers == 1 or len(ranges) == 1:
        tally = SiftTally.empty(config.params)
        for blk in range(config.n_blocks):
            tally = tally.merge(simulate_block(config, blk))
            if progress and (blk + 1) % 64 == 0:
                print(f"  block {blk + 1}/{config.n_blocks}", file=sys.stderr)
    else:
        with ProcessPoolExecutor(max_workers=len(ranges)) as pool:
            parts = list(pool.map(_simulate_range, [config] * len(ranges), ranges))
        tally = parts[0]
        for part in parts[1:]:
            tally = tally.merge(part)
        if progress:
            print(f"  merged {len(parts)} worker tallies", file=sys.stderr)
    tally.check()
    return RunResult(tally, estimate(tally, config.params), provenance(config))


def provenance(config: RunConfig) -> dict:
    return {
        "run_id": config.digest()[:16],
        "config_sha256": config.digest(),
        "seed": int(config.seed),
        "workers": int(config.workers),
        "n_packets": int(config.n_packets),
        "block_size": int(config.block_size),
        "attack": config.attack or "none",
        "versions": {
            "chau15": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }


def simulate_bare_detector(L: int, pair: SlotPair, mean: float, devices: DeviceChain, n_packets: int, seed: int = 0, transmittance: float = 1.0, block_size: int = DEFAULT_BLOCK) -> np.ndarray:
    """Click counts per slot when Alice's output goes straight to one detector channel.

    Every slot is gated independently; no interferometer, no after-pulses.
    """
    p = bare_click_probabilities(L, pair, mean, devices, transmittance)
    counts = np.zeros(L, dtype=np.int64)
    for blk in range(-(-n_packets // block_size)):
        n = min(block_size, n_packets - blk * block_size)
        counts += block_rng(seed, blk).binomial(n, p)
    return counts
