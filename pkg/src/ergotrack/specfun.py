"""
Kummer confluent hypergeometric function and even Weber solutions.

Only real arguments with ``z >= 0`` are supported.  For ``z <= 50`` the
defining power series is summed directly; beyond that the large-``z``
asymptotic expansion is used, truncated at its smallest term.  A log-scale
variant is provided for the ranges where ``exp(z)`` overflows.
"""
import math
from typing import NamedTuple

import numpy as np
from scipy.special import gammasgn

from .errors import DomainError

SERIES_ZMAX = 50.0
_TERM_RTOL = 1e-16
_MAX_TERMS = 2000


class KummerParams(NamedTuple):
    """Arguments of 1F1(a; b; z).  Unpacks directly into the functions below."""

    a_param: float
    b_param: float
    z: float


def _check_b(b):
    if b <= 0 and float(b).is_integer():
        raise DomainError(f"1F1 has a pole at b={b}")


def _check_z(z):
    if np.any(np.asarray(z) < 0):
        raise DomainError("z must be nonnegative")


def _nonpos_int(a):
    return a <= 0 and float(a).is_integer()


def _series(a, b, z):
    """Taylor sum; stops after three consecutive negligible terms."""
    term = 1.0
    total = 1.0
    small = 0
    for k in range(_MAX_TERMS):
        term *= (a + k) / (b + k) * z / (k + 1)
        total += term
        if abs(term) < _TERM_RTOL * abs(total):
            small += 1
            if small >= 3:
                break
        else:
            small = 0
    return total


def _asym_sum(a, b, z):
    """Sum_s (b-a)_s (1-a)_s / (s! z^s), truncated at the smallest term."""
    term = 1.0
    total = 1.0
    prev = math.inf
    for s in range(200):
        nxt = term * (b - a + s) * (1 - a + s) / ((s + 1) * z)
        if abs(nxt) >= prev or nxt == 0.0:
            if nxt == 0.0:
                total += nxt
            break
        prev = abs(nxt)
        term = nxt
        total += term
        if abs(term) < _TERM_RTOL * abs(total):
            break
    return total


def _log_asym(a, b, z):
    """log 1F1 for large z and a > 0, b > 0 (dominant exponential part)."""
    log_main = math.lgamma(b) - math.lgamma(a) + z + (a - b) * math.log(z) + math.log(_asym_sum(a, b, z))
    if _nonpos_int(b - a):
        return log_main
    # algebraic part Gamma(b)/Gamma(b-a) cos(pi a) z^-a, combined in log space
    alg = gammasgn(b - a) * math.cos(math.pi * a) * _asym_sum(b - a, b, -z)
    if alg == 0.0:
        return log_main
    log_alg = math.lgamma(b) - math.lgamma(b - a) - a * math.log(z) + math.log(abs(alg))
    if alg > 0:
        return max(log_main, log_alg) + math.log1p(math.exp(-abs(log_main - log_alg)))
    if log_alg >= log_main:
        raise DomainError(f"1F1({a}, {b}, {z}) is not positive")
    return log_main + math.log1p(-math.exp(log_alg - log_main))


def _scalar(a, b, z):
    _check_b(b)
    if z < 0:
        raise DomainError("z must be nonnegative")
    if z == 0.0:
        return 1.0
    if z <= SERIES_ZMAX or _nonpos_int(a):
        return _series(a, b, z)
    if a > 0 and b > 0:
        lv = _log_asym(a, b, z)
        if lv > 709.0:
            raise OverflowError(f"1F1({a}, {b}, {z}) exceeds the float range")
        return math.exp(lv)
    # general signs: both parts of the expansion with explicit gamma factors
    # (log-gamma keeps 1/Gamma(a) finite for subnormal a)
    log_main = math.lgamma(b) - math.lgamma(a) + z + (a - b) * math.log(z)
    if log_main > 709.0:
        raise OverflowError(f"1F1({a}, {b}, {z}) exceeds the float range")
    main = gammasgn(b) * gammasgn(a) * math.exp(log_main) * _asym_sum(a, b, z)
    alg = 0.0
    if not _nonpos_int(b - a):
        log_alg = math.lgamma(b) - math.lgamma(b - a) - a * math.log(z)
        alg = (gammasgn(b) * gammasgn(b - a) * math.exp(log_alg) * math.cos(math.pi * a)
               * _asym_sum(b - a, b, -z))
    return main + alg


def _series_array(a, b, z):
    """Vectorized Taylor sum with the same per-element stopping rule."""
    term = np.ones_like(z)
    total = np.ones_like(z)
    small = np.zeros(z.shape, dtype=np.int64)
    active = np.ones(z.shape, dtype=bool)
    for k in range(_MAX_TERMS):
        term = np.where(active, term * ((a + k) / (b + k) / (k + 1)) * z, 0.0)
        total = total + term
        tiny = np.abs(term) < _TERM_RTOL * np.abs(total)
        small = np.where(tiny, small + 1, 0)
        active &= small < 3
        if not active.any():
            break
    return total


def _vectorize(fn, a, b, z):
    arr = np.asarray(z, dtype=float)
    if arr.ndim == 0:
        return fn(float(a), float(b), float(arr))
    if fn in (_scalar, _log_scalar) and arr.size > 8 and arr.max(initial=0.0) <= SERIES_ZMAX:
        vals = _series_array(float(a), float(b), arr)
        if fn is _scalar:
            return vals
        if np.any(vals <= 0):
            raise DomainError(f"1F1({a}, {b}, z) is not positive")
        return np.log(vals)
    out = np.empty(arr.shape)
    flat = arr.ravel()
    res = out.ravel()
    for i in range(flat.size):
        res[i] = fn(float(a), float(b), flat[i])
    return out


def kummer_1f1(a, b, z):
    """Confluent hypergeometric function 1F1(a; b; z).

    Parameters
    ----------
    a, b : float
        Parameters; ``b`` must not be a non-positive integer.
    z : float or array_like
        Evaluation point(s), ``z >= 0``.

    Raises
    ------
    DomainError
        If ``b`` is a pole or ``z < 0``.
    OverflowError
        If the value is not representable as a float.
    """
    _check_b(b)
    _check_z(z)
    return _vectorize(_scalar, a, b, z)


def _log_scalar(a, b, z):
    if z <= SERIES_ZMAX:
        v = _series(a, b, z)
        if v <= 0:
            raise DomainError(f"1F1({a}, {b}, {z}) is not positive")
        return math.log(v)
    return _log_asym(a, b, z)


def log_kummer_1f1(a, b, z):
    """Natural log of 1F1(a; b; z) for ``a > 0, b > 0`` (value is then positive).

    Unlike :func:`kummer_1f1` this never overflows, which matters for the
    root scans that probe very large ``z``.
    """
    _check_b(b)
    _check_z(z)
    if not (a > 0 and b > 0):
        # fall back to the direct value; positivity is checked
        def f(aa, bb, zz):
            v = _scalar(aa, bb, zz)
            if v <= 0:
                raise DomainError(f"1F1({aa}, {bb}, {zz}) is not positive")
            return math.log(v)
        return _vectorize(f, a, b, z)
    return _vectorize(_log_scalar, a, b, z)


def kummer_1f1_dz(a, b, z):
    """Derivative in z: (a/b) 1F1(a+1; b+1; z)."""
    _check_b(b)
    if a == 0:
        return np.zeros_like(np.asarray(z, dtype=float))[()]
    return (a / b) * kummer_1f1(a + 1, b + 1, z)


def kummer_1f1_da(a, b, z):
    """Derivative in a, from the series with harmonic-sum weights.

    Only the power series is used, so keep ``z`` moderate (``z <= 50``).
    """
    _check_b(b)
    _check_z(z)

    def f(aa, bb, zz):
        poch = 1.0       # (a)_k / (b)_k * z^k / k!
        dpoch = 0.0      # its derivative in a
        total = 0.0
        small = 0
        for k in range(_MAX_TERMS):
            fac = zz / ((bb + k) * (k + 1))
            dpoch = (dpoch * (aa + k) + poch) * fac
            poch = poch * (aa + k) * fac
            total += dpoch
            if abs(dpoch) < _TERM_RTOL * max(abs(total), 1e-300) and abs(poch) < 1e-300 + _TERM_RTOL * abs(total):
                small += 1
                if small >= 3:
                    break
            else:
                small = 0
        return total

    return _vectorize(f, a, b, z)


def weber_even(x, theta):
    """Even solution exp(-x^2/4) 1F1(theta/2 + 1/4; 1/2; x^2/2) of w'' = (x^2/4 + theta) w."""
    x = np.asarray(x, dtype=float)
    a = 0.5 * theta + 0.25
    z = 0.5 * x * x
    if a > 0:
        out = np.exp(log_kummer_1f1(a, 0.5, z) - 0.5 * z)
    else:
        out = np.exp(-0.5 * z) * kummer_1f1(a, 0.5, z)
    return out[()] if isinstance(out, np.ndarray) else out


def weber_odd(x, theta):
    """Odd solution x exp(-x^2/4) 1F1(theta/2 + 3/4; 3/2; x^2/2)."""
    x = np.asarray(x, dtype=float)
    z = 0.5 * x * x
    out = x * np.exp(-0.5 * z) * kummer_1f1(0.5 * theta + 0.75, 1.5, z)
    return out[()] if isinstance(out, np.ndarray) else out
