import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chau15.qmath import binary_entropy, binom, clip, h2


def h2_reference(x):
    if x in (0.0, 1.0):
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def test_binary_entropy_examples():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.0183) == pytest.approx(0.1320, abs=5e-4)
    assert h2 is binary_entropy


def test_binary_entropy_domain():
    for bad in (-1e-9, 1.0 + 1e-9, math.nan):
        with pytest.raises(ValueError):
            binary_entropy(bad)


def test_binary_entropy_array_matches_scalar():
    xs = np.linspace(0, 1, 101)
    got = binary_entropy(xs)
    assert np.allclose(got, [h2_reference(x) for x in xs], atol=1e-15)


@given(st.floats(0.0, 1.0))
def test_binary_entropy_symmetric_and_bounded(x):
    assert binary_entropy(x) == pytest.approx(binary_entropy(1.0 - x), abs=1e-12)
    assert 0.0 <= binary_entropy(x) <= 1.0


@given(st.floats(1e-6, 1 - 1e-6).filter(lambda x: abs(x - 0.5) > 1e-6))
def test_binary_entropy_strictly_inside(x):
    assert 0.0 < binary_entropy(x) < 1.0
    assert binary_entropy(x) == pytest.approx(h2_reference(x), rel=1e-12)


def test_binary_entropy_tiny_argument():
    # below the 1e-12 branch point the x*log2(1/x) term is dropped
    assert abs(binary_entropy(1e-13) - h2_reference(1e-13)) < 1e-10
    assert binary_entropy(1e-3) == pytest.approx(h2_reference(1e-3), rel=1e-12)


def test_binom_examples():
    assert binom(5, 2) == 10
    assert binom(3, 2) == 3
    assert binom(7, 0) == 1
    assert binom(0, 0) == 1


def test_binom_errors():
    with pytest.raises(ValueError):
        binom(2, 3)
    with pytest.raises(ValueError):
        binom(-1, 0)
    with pytest.raises(OverflowError):
        binom(200, 100)


def test_binom_pascal_rule():
    for n in range(1, 65):
        for k in range(1, n):
            assert binom(n, k) == binom(n - 1, k - 1) + binom(n - 1, k)


def test_clip():
    assert clip(1.3, 0, 0.5) == 0.5
    assert clip(-0.1, 0, 1) == 0.0
    assert clip(0.2, 0, 1) == 0.2
    with pytest.raises(ValueError):
        clip(0.2, 1, 0)
