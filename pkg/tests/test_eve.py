import json
import math

import numpy as np
import pytest

from chau15.eve import (
    CollectiveAttack,
    EigensolverError,
    apply_collective,
    depolarizing_attack,
    holevo,
    identity_attack,
    induced_statistics,
    load_attack,
    mutual_information,
    outcome_probabilities,
    pair_basis_intercept_resend,
    random_attack,
    time_basis_attack,
    von_neumann_entropy,
)
from chau15.protocol import DISJOINT, overlap_matrix, pair_list


def test_identity_attack():
    for L in (4, 5):
        out = induced_statistics(identity_attack(L))
        assert np.allclose(np.diag(out.p), 1.0)
        assert out.E == 0.0 and out.Q_prime == 0.0
        assert out.information == pytest.approx(0.0, abs=1e-12)
        assert out.bound == 0.0


def test_identity_output_is_input_times_ancilla():
    psi = apply_collective(identity_attack(5), (1, 3), 1)
    bob = np.linalg.norm(psi, axis=1) ** 2
    assert np.allclose(bob, [0, 0.5, 0, 0.5, 0, 0])
    # the ancilla factor is the same for both slots, so the state is a product
    assert np.linalg.matrix_rank(psi[[1, 3]]) == 1


def test_depolarizing_disjoint_symmetry():
    out = induced_statistics(depolarizing_attack(4))
    d = out.p[overlap_matrix(4) == DISJOINT]
    assert np.ptp(d) < 1e-12 and d[0] > 0
    assert out.information == pytest.approx(1.0, abs=1e-9)
    assert out.bound == pytest.approx(1.0)


def test_time_basis_intercept_resend():
    for L in (4, 5):
        out = induced_statistics(time_basis_attack(L))
        assert out.E == pytest.approx(0.5, abs=1e-12)
        assert out.information == pytest.approx(0.0, abs=1e-12)
        assert out.margin >= -1e-9


def test_pair_basis_intercept_resend():
    for L, info in ((4, 0.2), (5, None)):
        out = pair_basis_intercept_resend(L)
        assert 0 < out.information < 1
        assert out.margin > 0
        assert 0 < out.E < 0.5
        if info is not None:
            assert out.information == pytest.approx(info, abs=1e-9)


def test_probability_conservation():
    rng = np.random.default_rng(0)
    for L in (4, 5):
        att = random_attack(L, rng)
        for pair in pair_list(L):
            for bit in (0, 1):
                psi = apply_collective(att, pair, bit)
                assert np.vdot(psi, psi).real == pytest.approx(1.0, abs=1e-9)
                for setting in pair_list(L):
                    pp, pm, none = outcome_probabilities(psi, setting)
                    assert min(pp, pm, none) >= -1e-12
                    assert pp + pm + none == pytest.approx(1.0, abs=1e-9)


def test_attack_validation():
    c = np.zeros((4, 5))
    c[:, 1:] = 0.4
    with pytest.raises(ValueError):
        CollectiveAttack(c, identity_attack(4).ancilla)
    good = identity_attack(4)
    with pytest.raises(ValueError):
        CollectiveAttack(-good.c, good.ancilla)
    bad_anc = good.ancilla.copy()
    bad_anc[0, 2] = bad_anc[0, 1]
    with pytest.raises(ValueError):
        CollectiveAttack(good.c, bad_anc)
    # orthonormal records that break the isometry: every input shares one record
    anc = np.zeros((4, 5, 5), dtype=complex)
    anc[:, :, :] = np.eye(5)
    c = np.zeros((4, 5))
    c[:, 0] = 1.0
    with pytest.raises(ValueError):
        CollectiveAttack(c, anc)


def test_attack_roundtrip(tmp_path):
    att = random_attack(5, np.random.default_rng(3))
    path = tmp_path / "attack.json"
    path.write_text(json.dumps(att.to_dict()))
    back = load_attack(path)
    assert np.allclose(back.c, att.c) and np.allclose(back.ancilla, att.ancilla)
    assert induced_statistics(back).information == pytest.approx(induced_statistics(att).information)


def test_entropy_and_holevo_known_values():
    assert von_neumann_entropy(np.eye(4) / 4) == pytest.approx(2.0)
    assert von_neumann_entropy(np.diag([1.0, 0.0])) == pytest.approx(0.0)
    e0, e1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    assert holevo([0.5, 0.5], [0.5 * e0, 0.5 * e1]) == pytest.approx(1.0)
    assert holevo([0.5, 0.5], [0.5 * e0, 0.5 * e0]) == pytest.approx(0.0)
    # non-orthogonal pure states: chi = h2((1 + |<a|b>|)/2)
    t = 0.3
    a = np.array([1.0, 0.0])
    b = np.array([math.cos(t), math.sin(t)])
    ov = abs(a @ b)
    x = (1 + ov) / 2
    h = -x * math.log2(x) - (1 - x) * math.log2(1 - x)
    assert holevo([0.5, 0.5], [0.5 * np.outer(a, a), 0.5 * np.outer(b, b)]) == pytest.approx(h, abs=1e-12)


def test_eigensolver_failure_reported():
    with pytest.raises(EigensolverError):
        von_neumann_entropy(np.diag([1.5, -0.5]))


def test_mutual_information():
    assert mutual_information(np.eye(2) / 2) == pytest.approx(1.0)
    assert mutual_information(np.full((2, 3), 1 / 6)) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("L", [4, 5])
def test_bound_dominates_random_attacks(L):
    rng = np.random.default_rng(100 + L)
    worst = math.inf
    for k in range(60):
        strength = None if k % 2 else float(rng.uniform(0, 0.3))
        out = induced_statistics(random_attack(L, rng, ancilla_dim=int(rng.integers(1, 4)), strength=strength))
        assert 0 <= out.information <= 1 + 1e-12
        assert np.all((out.p >= -1e-12) & (out.p <= 1 + 1e-12))
        worst = min(worst, out.margin)
    assert worst >= -1e-9
