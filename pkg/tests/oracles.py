"""Independent reference implementations used only to check the package.

The channel oracle composes the generic two-coefficient path model (direct
coefficient plus per-scatterer bounce coefficient products) in 50-digit
arithmetic; it deliberately never calls the package's channel kernel.
The metric oracles are plain-Python recomputations.
"""

import math
from fractions import Fraction

import mpmath as mp

mp.mp.dps = 50


def _dist(a, b):
    return mp.sqrt((mp.mpf(a[0]) - mp.mpf(b[0])) ** 2 + (mp.mpf(a[1]) - mp.mpf(b[1])) ** 2)


def alpha_coefficient(vi, vj, wavelength):
    """Direct-path coefficient between two points, extended precision."""
    lam = mp.mpf(wavelength)
    d = _dist(vi, vj)
    return lam / (4 * mp.pi * d) * mp.e ** (1j * 2 * mp.pi / lam * d)


def beta_coefficient(vi, vj, gain, phase, wavelength):
    """Bounce coefficient at scatterer vj seen from vi (denominator uses the
    same two points as the phase)."""
    lam = mp.mpf(wavelength)
    d = _dist(vi, vj)
    delta = mp.mpf(gain) * mp.e ** (1j * mp.mpf(phase))
    return delta / (mp.sqrt(4 * mp.pi) * d) * mp.e ** (1j * 2 * mp.pi / lam * d)


def channel_composition(user, rrh, scatterers, wavelength):
    """Direct coefficient plus bounce-times-direct products over scatterers.

    `scatterers` is a list of ((x, y), phase, gain) triples.
    """
    h = alpha_coefficient(user, rrh, wavelength)
    for (pos, phase, gain) in scatterers:
        h += beta_coefficient(user, pos, gain, phase, wavelength) * alpha_coefficient(
            pos, rrh, wavelength
        )
    return complex(h)


def brute_rmse(errors):
    """Exact rational accumulation of the (float) squares, then one rounding
    to float before the division; agrees bit-for-bit with any exactly-rounded
    float64 summation of the same squares."""
    total = sum(Fraction(float(e) * float(e)) for e in errors)
    return math.sqrt(float(total) / len(errors))


def brute_ecdf_at(errors, x):
    return sum(1 for e in errors if e <= x) / len(errors)


def brute_percentile(errors, p):
    """Smallest value v with (count of errors <= v) / n >= p."""
    ordered = sorted(errors)
    n = len(ordered)
    for k, v in enumerate(ordered, start=1):
        if k / n >= p:
            return v
    return ordered[-1]


def rel_err(a, b, floor=1e-300):
    return abs(a - b) / max(abs(a), abs(b), floor)
