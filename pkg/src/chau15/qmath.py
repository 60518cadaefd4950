"""Small numeric kernels shared by the rest of the package."""

from __future__ import annotations

import math

import numpy as np

_UINT64_LIMIT = 2**64
_TINY = 1e-12


def check_probability(x, name="probability"):
    """Return ``x`` as a float, raising ``ValueError`` if it lies outside [0, 1]."""
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x!r}")
    return x


def _h2_scalar(x: float) -> float:
    # x*log2(1/x) form; terms below the branch point vanish to well under 1e-10
    a = x * math.log2(1.0 / x) if x > _TINY else 0.0
    y = 1.0 - x
    b = y * math.log2(1.0 / y) if y > _TINY else 0.0
    return a + b


def binary_entropy(x):
    """Binary Shannon entropy in bits.

    Accepts a scalar or an array. ``h2(0) = h2(1) = 0`` by convention.

    Raises
    ------
    ValueError
        If any input lies outside [0, 1].
    """
    if np.ndim(x) == 0:
        return _h2_scalar(check_probability(x, "h2 argument"))
    arr = np.asarray(x, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("h2 argument must lie in [0, 1]")
    out = np.zeros_like(arr)
    lo = arr > _TINY
    hi = (1.0 - arr) > _TINY
    out[lo] -= arr[lo] * np.log2(arr[lo])
    out[hi] -= (1.0 - arr[hi]) * np.log2(1.0 - arr[hi])
    return out


h2 = binary_entropy


def binom(n: int, k: int) -> int:
    """Exact binomial coefficient, limited to the unsigned 64-bit range."""
    if n < 0 or k < 0:
        raise ValueError("binom arguments must be non-negative")
    if k > n:
        raise ValueError(f"binom requires k <= n, got n={n}, k={k}")
    value = math.comb(n, k)
    if value >= _UINT64_LIMIT:
        raise OverflowError(f"binom({n}, {k}) exceeds 64-bit range")
    return value


def clip(x: float, lo: float, hi: float) -> float:
    if lo > hi:
        raise ValueError("clip requires lo <= hi")
    return min(hi, max(lo, x))
