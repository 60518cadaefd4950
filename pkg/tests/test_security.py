import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chau15.config import load_measured, measured_names
from chau15.eve import induced_statistics, pair_basis_intercept_resend, random_attack, time_basis_attack
from chau15.protocol import IntensityClass, ProtocolParams, pair_list, pair_means
from chau15.qmath import binary_entropy
from chau15.security import (
    SETTING_CONDITIONED,
    UNCONDITIONED,
    DecoyInputs,
    InfeasibleStatisticsError,
    IntensityStats,
    KeyRateResult,
    UndefinedBoundError,
    decoy_bounds,
    iae_argument_from_matrix,
    iae_bound,
    keyrate_packet,
    keyrate_sifted,
    rrdps_keyrate,
    rrdps_tolerable_error,
    sift_factor,
    tolerable_error,
)


def test_iae_bound_examples():
    assert iae_bound(4.36e-3, 1.10e-5) == pytest.approx(0.014, abs=1e-3)
    assert 1.10e-5 / (2 * 4.36e-3) == pytest.approx(1.26e-3, abs=1e-5)
    assert iae_bound(0.3, 0.0) == 0.0
    assert iae_bound(0.3, 0.3) == 1.0
    with pytest.raises(UndefinedBoundError):
        iae_bound(0.0, 1e-6)


@given(st.floats(1e-6, 1), st.floats(1e-6, 1), st.floats(0, 1), st.floats(0, 1))
def test_iae_bound_monotone(q1, q2, p1, p2):
    Q = min(q1, q2)
    assert iae_bound(Q, min(p1, p2)) <= iae_bound(Q, max(p1, p2)) + 1e-15
    assert iae_bound(max(q1, q2), p1) <= iae_bound(Q, p1) + 1e-15


def ratio_by_loops(p, L):
    """The pair-resolved bound argument summed term by term."""
    pairs = pair_list(L)
    num = 0.0
    den = 0.0
    for a, (i, j) in enumerate(pairs):
        den += p[a, a]
        for b, (m, n) in enumerate(pairs):
            if not {m, n} & {i, j}:
                num += p[a, b]
    return num / ((L - 2) * (L - 3) * den)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([4, 5, 6, 8]), st.integers(0, 2**32 - 1))
def test_pair_resolved_ratio_equals_mean_ratio(L, seed):
    rng = np.random.default_rng(seed)
    K = math.comb(L, 2)
    p = rng.random((K, K)) ** rng.uniform(0.2, 5)
    Q, Qp = pair_means(p, L)
    assert ratio_by_loops(p, L) == pytest.approx(Qp / (2 * Q), rel=1e-12)
    assert iae_argument_from_matrix(p, L) == pytest.approx(Qp / (2 * Q), rel=1e-12)


def test_keyrate_sifted_examples():
    assert keyrate_sifted(0.0183, 0.014) == pytest.approx(0.854, abs=1e-3)
    assert keyrate_sifted(0.0, 0.0) == 1.0
    assert keyrate_sifted(0.5, 0.0) == 0.0
    with pytest.raises(ValueError):
        keyrate_sifted(0.1, 0.0, f_ec=0.9)


@given(st.floats(1e-9, 0.5 - 1e-9), st.floats(1e-9, 0.5 - 1e-9), st.floats(0, 1))
def test_keyrate_sifted_decreasing(e1, e2, iae):
    if abs(e1 - e2) < 1e-9:
        return
    lo, hi = sorted((e1, e2))
    assert keyrate_sifted(lo, iae) > keyrate_sifted(hi, iae)


def test_rrdps_examples():
    assert rrdps_keyrate(0.0, 5) == pytest.approx(1 - binary_entropy(0.25))
    assert rrdps_keyrate(0.0, 5) == pytest.approx(0.189, abs=1e-3)
    assert rrdps_keyrate(0.0, 10**6) == pytest.approx(1.0, abs=1e-4)
    for L in (3, 5, 65):
        assert rrdps_keyrate(0.5, L) <= 0
    with pytest.raises(ValueError):
        rrdps_keyrate(0.0, 2)


def test_error_tolerance_frontier():
    for E in np.linspace(0, 0.5 - 1e-3, 200):
        assert keyrate_sifted(E, iae_bound(1e-3, 0.0)) > 0
    assert keyrate_sifted(0.5, 0.0) == 0
    assert tolerable_error() == 0.5
    assert rrdps_tolerable_error(5) < tolerable_error(iae_bound(1e-3, 1e-8))
    assert rrdps_tolerable_error(5) == pytest.approx(0.0292, abs=1e-3)


def stats(mean, Y1, Y0=0.0, E=None, Yp=None):
    Yp = Y1 * 0.01 if Yp is None else Yp
    return IntensityStats(
        mean, 1 / 3, 1 - (1 - Y0) * math.exp(-mean * Y1), 1 - (1 - Y0) * math.exp(-mean * Yp), E
    )


def test_decoy_synthetic_oracle():
    # Y_n = 1 - (1 - Y1)^n in the small-loss form exp(-n * Y1), with Y1 known
    # weak decoys (nu1 <= 0.1); the gap of the standard bound grows with nu1
    Y1 = 0.01
    for mu, n1, n2 in ((0.5, 0.1, 0.001), (0.5, 0.05, 0.001), (0.6, 0.1, 0.0)):
        inp = DecoyInputs(stats(mu, Y1, E=0.01), stats(n1, Y1), stats(n2, Y1))
        d = decoy_bounds(inp)
        y1_true = 1 - math.exp(-Y1)
        assert d.Y1_lower <= y1_true
        assert y1_true - d.Y1_lower < 0.05 * y1_true
        assert d.Y1_upper >= y1_true * (1 - 1e-12)
        assert d.Y1p_upper >= (1 - math.exp(-Y1 * 0.01)) * (1 - 1e-12)
        assert d.Q1_lower == pytest.approx(mu * math.exp(-mu) * d.Y1_lower)


def test_vacuum_decoy_recovers_dark_yield():
    dark = 2.6e-6
    inp = DecoyInputs(stats(0.5, 0.01, dark, E=0.02), stats(0.1, 0.01, dark), stats(0.0, 0.01, dark))
    assert inp.decoy2.Q == pytest.approx(dark)
    assert decoy_bounds(inp).Y0_lower == pytest.approx(dark, rel=1e-12)


def test_decoy_input_validation():
    s = stats(0.5, 0.01, E=0.02)
    with pytest.raises(ValueError):
        DecoyInputs(s, stats(0.6, 0.01), stats(0.001, 0.01))
    with pytest.raises(ValueError):
        DecoyInputs(s, stats(0.3, 0.01), stats(0.25, 0.01))
    with pytest.raises(ValueError):
        DecoyInputs(stats(0.5, 0.01), stats(0.1, 0.01), stats(0.001, 0.01))
    with pytest.raises(ValueError):
        IntensityStats(0.5, 0.5, 1.2, 0.0)
    with pytest.raises(ValueError):
        DecoyInputs.from_classes({"a": s})


def test_crossing_bounds_are_infeasible():
    # signal gain far too small for the weak-decoy gain
    inp = DecoyInputs(
        IntensityStats(0.5, 0.9, 1e-6, 1e-7, 0.02),
        IntensityStats(0.1, 0.05, 1e-3, 1e-7),
        IntensityStats(0.001, 0.05, 1e-6, 1e-7),
    )
    with pytest.raises(InfeasibleStatisticsError):
        decoy_bounds(inp)


def test_disjoint_upper_bound_negative_is_infeasible():
    inp = DecoyInputs(
        IntensityStats(0.5, 0.9, 0.005, 1e-6, 0.02),
        IntensityStats(0.1, 0.05, 1e-3, 1e-8),
        IntensityStats(0.001, 0.05, 1e-5, 1e-5),
    )
    with pytest.raises(InfeasibleStatisticsError):
        decoy_bounds(inp)


def measured_rate(name, **kw):
    row = load_measured(name)
    kw.setdefault("f_ec", row.f_ec)
    return keyrate_packet(row.inputs, None, row.params(), **kw), row


@pytest.mark.parametrize("name,factor", [("measured_50km", 2), ("measured_100km", 2), ("measured_130km", 2), ("measured_150km", 3)])
def test_measured_rows_within_factor(name, factor):
    res, row = measured_rate(name)
    ref = row.reference["R_inf"]
    assert res.R_packet > 0
    assert ref / factor <= res.R_packet <= ref * factor


def test_measured_100km_single_photon_yield_positive():
    row = load_measured("measured_100km")
    assert decoy_bounds(row.inputs).Y1_lower > 0


def test_high_error_row_positive_order_1e5():
    res, row = measured_rate("measured_50km_high_error")
    assert row.inputs.signal.E == pytest.approx(0.2032)
    assert 1e-6 < res.R_packet < 1e-4


def test_finite_key_reference_below_asymptotic():
    for name in measured_names():
        ref = load_measured(name).reference
        if ref.get("R_f") is not None:
            assert ref["R_f"] <= ref["R_inf"]


def test_conventions():
    row = load_measured("measured_50km")
    a = keyrate_packet(row.inputs, None, row.params(), convention=SETTING_CONDITIONED)
    b = keyrate_packet(row.inputs, None, row.params(), convention=UNCONDITIONED)
    assert b.R_packet_raw == pytest.approx(a.R_packet_raw / 10)
    assert sift_factor(row.params(), UNCONDITIONED) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        sift_factor(row.params(), "other")
    with pytest.raises(ValueError):
        keyrate_packet(row.inputs, None, row.params(), f_ec=0.5)


def test_negative_rate_clamped_with_raw_kept():
    inp = DecoyInputs(stats(0.5, 0.01, E=0.3), stats(0.1, 0.01), stats(0.001, 0.01))
    res = keyrate_packet(inp)
    assert res.R_packet_raw < 0 and res.R_packet == 0.0 and res.R_sifted == 0.0


def test_zero_disjoint_gain_gives_no_eve_information():
    inp = DecoyInputs(stats(0.5, 0.01, E=0.02, Yp=0.0), stats(0.1, 0.01, Yp=0.0), stats(0.001, 0.01, Yp=0.0))
    res = keyrate_packet(inp)
    assert res.I_AE == 0.0


def test_result_serialisation():
    res, _ = measured_rate("measured_50km")
    row = res.csv_row()
    assert tuple(row) == KeyRateResult.CSV_FIELDS
    assert res.to_dict()["components"]["f_ec"] == 1.16


def test_end_to_end_soundness():
    rng = np.random.default_rng(7)
    outcomes = [induced_statistics(random_attack(L, rng)) for L in (4, 5) for _ in range(20)]
    outcomes += [induced_statistics(time_basis_attack(5)), pair_basis_intercept_resend(4), pair_basis_intercept_resend(5)]
    for o in outcomes:
        claimed = keyrate_sifted(o.E, o.bound)
        assert claimed <= 1 - binary_entropy(o.E) - o.information + 1e-9
