"""Single-photon attacks and Eve's information about the sifted key.

A collective attack acts on one photon at a time as

    U |i>|E_00> = sum_{x=0..L} c[i, x] |x>|E[i, x]>

with slot ``x = 0`` standing for loss. Amplitudes are non-negative with unit
row norm, ancilla states sharing the same input slot are orthonormal, and the
map must be an isometry, i.e. ``sum_x c[i,x] c[k,x] <E[i,x]|E[k,x]> = delta_ik``.

Eve's information per sifted bit is the Holevo quantity of her ancilla about
Alice's bit, conditioned on Bob registering the photon in Alice's pair, and
averaged over pairs with weight equal to the sift probability.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .protocol import MATCHED, DISJOINT, overlap_matrix, pair_list
from .security import iae_bound

_TOL = 1e-9


class EigensolverError(RuntimeError):
    """Raised when a density-matrix eigendecomposition fails or is unphysical."""


@dataclass(frozen=True)
class CollectiveAttack:
    """Coefficients ``c`` with shape ``(L, L + 1)`` and ancilla vectors ``(L, L + 1, D)``."""

    c: np.ndarray
    ancilla: np.ndarray
    name: str = "collective"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        anc = np.asarray(self.ancilla, dtype=complex)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "ancilla", anc)
        L = c.shape[0]
        if c.shape != (L, L + 1) or anc.shape[:2] != (L, L + 1):
            raise ValueError("attack needs c of shape (L, L+1) and ancilla of shape (L, L+1, D)")
        if np.any(c < -_TOL):
            raise ValueError("attack amplitudes must be non-negative")
        if not np.allclose((c**2).sum(axis=1), 1.0, atol=_TOL):
            raise ValueError("attack rows are not normalized")
        for i in range(L):
            gram = anc[i].conj() @ anc[i].T
            if not np.allclose(gram, np.eye(L + 1), atol=_TOL):
                raise ValueError(f"ancilla states for input slot {i + 1} are not orthonormal")
        # isometry: output states for different input slots stay orthogonal
        out = c[:, :, None] * anc
        overlaps = np.einsum("ixd,kxd->ik", out.conj(), out)
        if not np.allclose(overlaps, np.eye(L), atol=_TOL):
            raise ValueError("attack is not an isometry on the slot space")

    @property
    def L(self) -> int:
        return self.c.shape[0]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "c": self.c.tolist(),
            "ancilla_real": self.ancilla.real.tolist(),
            "ancilla_imag": self.ancilla.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CollectiveAttack":
        anc = np.asarray(d["ancilla_real"]) + 1j * np.asarray(d.get("ancilla_imag", 0.0))
        return cls(np.asarray(d["c"]), anc, d.get("name", "collective"))


def load_attack(path) -> CollectiveAttack:
    with open(path) as fh:
        return CollectiveAttack.from_dict(json.load(fh))


def _shift_basis(L, i, x):
    return (x - i) % (L + 1)


def identity_attack(L: int) -> CollectiveAttack:
    """No interaction: every photon keeps its slot and Eve's ancilla is untouched."""
    c = np.zeros((L, L + 1))
    anc = np.zeros((L, L + 1, L + 1), dtype=complex)
    for i in range(1, L + 1):
        c[i - 1, i] = 1.0
        for x in range(L + 1):
            anc[i - 1, x, _shift_basis(L, i, x)] = 1.0
    return CollectiveAttack(c, anc, "identity")


def depolarizing_attack(L: int) -> CollectiveAttack:
    """Spread each photon uniformly over all slots with orthogonal ancilla records."""
    c = np.zeros((L, L + 1))
    c[:, 1:] = 1.0 / math.sqrt(L)
    D = L * (L + 1)
    anc = np.zeros((L, L + 1, D), dtype=complex)
    for i in range(L):
        for x in range(L + 1):
            anc[i, x, i * (L + 1) + x] = 1.0
    return CollectiveAttack(c, anc, "depolarizing")


def time_basis_attack(L: int) -> CollectiveAttack:
    """Time-basis measure and resend: Eve keeps a perfect record of the slot."""
    c = np.zeros((L, L + 1))
    D = L * (L + 1)
    anc = np.zeros((L, L + 1, D), dtype=complex)
    for i in range(1, L + 1):
        c[i - 1, i] = 1.0
        for x in range(L + 1):
            anc[i - 1, x, (i - 1) * (L + 1) + _shift_basis(L, i, x)] = 1.0
    return CollectiveAttack(c, anc, "time_basis_intercept_resend")


def random_attack(L: int, rng: np.random.Generator, ancilla_dim: int = 2, strength: Optional[float] = None) -> CollectiveAttack:
    """Random valid attack.

    Ancilla states are ``|(x - i) mod (L+1)> (x) |h[i, x]>`` with random unit
    vectors ``h``, which satisfies both orthogonality constraints for any
    amplitudes. ``strength`` (0..1) scales the off-diagonal amplitudes; ``None``
    draws a generic row profile.
    """
    if strength is None:
        c = rng.random((L, L + 1)) ** rng.uniform(0.5, 6.0)
    else:
        c = strength * rng.random((L, L + 1))
        c[np.arange(L), np.arange(1, L + 1)] = 1.0
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    K = ancilla_dim
    h = rng.normal(size=(L, L + 1, K)) + 1j * rng.normal(size=(L, L + 1, K))
    if rng.random() < 0.5:
        # keep the on-slot records identical so Bob's interference survives
        h[np.arange(L), np.arange(1, L + 1)] = h[0, 1]
    h /= np.linalg.norm(h, axis=2, keepdims=True)
    anc = np.zeros((L, L + 1, (L + 1) * K), dtype=complex)
    for i in range(1, L + 1):
        for x in range(L + 1):
            s = _shift_basis(L, i, x)
            anc[i - 1, x, s * K:(s + 1) * K] = h[i - 1, x]
    return CollectiveAttack(c, anc, "random")


def apply_collective(attack: CollectiveAttack, pair, bit: int) -> np.ndarray:
    """Joint state ``psi[x, :]`` (Bob's slot ``x`` times Eve's ancilla) for one photon."""
    i, j = (pair.i, pair.j) if hasattr(pair, "i") else pair
    sign = -1.0 if bit else 1.0
    c, anc = attack.c, attack.ancilla
    return (c[i - 1][:, None] * anc[i - 1] + sign * c[j - 1][:, None] * anc[j - 1]) / math.sqrt(2.0)


def outcome_probabilities(psi: np.ndarray, setting) -> tuple:
    """``(P(+), P(-), P(no click))`` for Bob's projection onto ``|psi^+-_mn>``."""
    m, n = setting
    plus = (psi[m] + psi[n]) / math.sqrt(2.0)
    minus = (psi[m] - psi[n]) / math.sqrt(2.0)
    pp = float(np.vdot(plus, plus).real)
    pm = float(np.vdot(minus, minus).real)
    total = float(np.vdot(psi.ravel(), psi.ravel()).real)
    return pp, pm, total - pp - pm


def von_neumann_entropy(rho: np.ndarray) -> float:
    """Entropy in bits of a density matrix."""
    try:
        w = np.linalg.eigvalsh(rho)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(str(exc)) from exc
    if np.any(~np.isfinite(w)) or w.min() < -1e-9:
        raise EigensolverError(f"density matrix has eigenvalue {w.min():.3e}")
    w = w[w > 1e-15]
    return float(-(w * np.log2(w)).sum())


def holevo(weights, states) -> float:
    """Holevo quantity of an ensemble of (unnormalized) density matrices."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    mix = sum(states) / total
    chi = von_neumann_entropy(mix)
    for w, rho in zip(weights, states):
        if w > 0:
            chi -= w / total * von_neumann_entropy(rho / w)
    if chi < -1e-9:
        raise EigensolverError(f"negative Holevo quantity {chi:.3e}")
    return max(chi, 0.0)


def mutual_information(joint: np.ndarray) -> float:
    """Classical mutual information (bits) of a 2-D joint distribution."""
    joint = np.asarray(joint, dtype=float)
    joint = joint / joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log2(joint[nz] / (px @ py)[nz])).sum())


@dataclass
class AttackOutcome:
    """Bob's statistics under an attack and Eve's information per sifted bit."""

    L: int
    p: np.ndarray
    err: np.ndarray
    information: float
    kind: str
    pair_information: np.ndarray = field(default=None, repr=False)

    @property
    def Q(self) -> float:
        return float(self.p[overlap_matrix(self.L) == MATCHED].mean())

    @property
    def Q_prime(self) -> float:
        return float(self.p[overlap_matrix(self.L) == DISJOINT].mean())

    @property
    def E(self) -> float:
        d = np.diag(self.p)
        return float(self.err.sum() / d.sum()) if d.sum() > 0 else 0.5

    @property
    def bound(self) -> float:
        return iae_bound(self.Q, self.Q_prime)

    @property
    def margin(self) -> float:
        return self.bound - self.information


def induced_statistics(attack: CollectiveAttack, pair_weights=None) -> AttackOutcome:
    L = attack.L
    pairs = pair_list(L)
    K = len(pairs)
    pw = np.full(K, 1.0 / K) if pair_weights is None else np.asarray(pair_weights, dtype=float)
    p = np.zeros((K, K))
    err = np.zeros(K)
    info = np.zeros(K)
    sift_w = np.zeros(K)
    for a, (i, j) in enumerate(pairs):
        states = [apply_collective(attack, (i, j), k) for k in (0, 1)]
        for b, (m, n) in enumerate(pairs):
            for k, psi in enumerate(states):
                pp, pm, _ = outcome_probabilities(psi, (m, n))
                p[a, b] += 0.5 * (pp + pm)
                if a == b:
                    err[a] += 0.5 * (pm if k == 0 else pp)
        rhos = [sum(np.outer(psi[x], psi[x].conj()) for x in (i, j)) for psi in states]
        weights = [float(np.trace(r).real) for r in rhos]
        sift_w[a] = pw[a] * sum(weights)
        if sum(weights) > 1e-14:
            info[a] = holevo(weights, rhos)
    total = sift_w.sum()
    information = float(np.dot(sift_w, info) / total) if total > 0 else 0.0
    return AttackOutcome(L, p, err, information, "holevo", info)


def _pair_vec(L, pair, sign):
    v = np.zeros(L + 1)
    v[pair[0]] = 1 / math.sqrt(2)
    v[pair[1]] = sign / math.sqrt(2)
    return v


def pair_basis_intercept_resend(L: int) -> AttackOutcome:
    """Eve measures each photon in a random pair basis and resends what she saw.

    Her measurement for pair ``e`` is ``{|psi^+_e>, |psi^-_e>} u {|x>: x not in e}``.
    Information is the classical mutual information between Alice's bit and
    Eve's (basis, outcome) record, conditioned on Bob's sifted detection.
    """
    pairs = pair_list(L)
    K = len(pairs)
    basis = []  # (P(e), outcome vector)
    for e in pairs:
        outs = [_pair_vec(L, e, 1.0), _pair_vec(L, e, -1.0)]
        for x in range(1, L + 1):
            if x not in e:
                v = np.zeros(L + 1)
                v[x] = 1.0
                outs.append(v)
        basis.extend((1.0 / K, v) for v in outs)

    p = np.zeros((K, K))
    err = np.zeros(K)
    info = np.zeros(K)
    sift_w = np.zeros(K)
    for a, (i, j) in enumerate(pairs):
        joint = np.zeros((2, len(basis)))
        for k in (0, 1):
            psi = _pair_vec(L, (i, j), -1.0 if k else 1.0)
            for r, (pe, v) in enumerate(basis):
                w = 0.5 * pe * float(np.dot(v, psi)) ** 2
                if w == 0:
                    continue
                for b, (m, n) in enumerate(pairs):
                    pp = float(np.dot(_pair_vec(L, (m, n), 1.0), v)) ** 2
                    pm = float(np.dot(_pair_vec(L, (m, n), -1.0), v)) ** 2
                    p[a, b] += w * (pp + pm)
                    if a == b:
                        err[a] += w * (pm if k == 0 else pp)
                joint[k, r] += w * (v[i] ** 2 + v[j] ** 2)
        sift_w[a] = joint.sum() / K
        if joint.sum() > 0:
            info[a] = mutual_information(joint)
    information = float(np.dot(sift_w, info) / sift_w.sum())
    return AttackOutcome(L, p, err, information, "mutual_information", info)
