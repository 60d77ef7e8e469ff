"""Chi-square distribution: CDF through the regularized lower incomplete
gamma function and its numeric inverse."""

from __future__ import annotations

import math

from .errors import InvalidArgument

_EPS = 1e-16
_MAX_ITER = 1000
_TINY = 1e-300


def _gammainc_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Γ(a+1) · Σ x^n / ((a+1)...(a+n)); converges fast for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gammaincc_cf(a: float, x: float) -> float:
    # Q(a, x) by the Legendre continued fraction, modified Lentz evaluation
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise InvalidArgument(f"shape parameter must be positive, got {a}")
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _gammainc_series(a, x)
    return 1.0 - _gammaincc_cf(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 − P(a, x), accurate in the tail."""
    if a <= 0:
        raise InvalidArgument(f"shape parameter must be positive, got {a}")
    if x <= 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gammainc_series(a, x)
    return _gammaincc_cf(a, x)


def chi2_cdf(x: float, dof: int) -> float:
    if dof < 1:
        raise InvalidArgument(f"degrees of freedom must be >= 1, got {dof}")
    return gammainc_lower(dof / 2.0, x / 2.0)


def chi2_pdf(x: float, dof: int) -> float:
    if x <= 0:
        return 0.0
    k = dof / 2.0
    return math.exp((k - 1.0) * math.log(x) - x / 2.0 - k * math.log(2.0) - math.lgamma(k))


def chi2_quantile(p: float, dof: int) -> float:
    """Value x with ``chi2_cdf(x, dof) == p``.

    Newton iteration from a Wilson-Hilferty start, safeguarded by a shrinking
    bisection bracket; stops at relative step 1e-14. Near the upper tail the
    residual is measured on Q = 1 − P to keep precision.
    """
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise InvalidArgument(f"probability must lie in (0, 1), got {p}")
    if int(dof) != dof or dof < 1:
        raise InvalidArgument(f"degrees of freedom must be a positive integer, got {dof}")
    dof = int(dof)
    upper = p > 0.5
    q = 1.0 - p

    def residual(x: float) -> float:
        # positive when x is too large
        if upper:
            return q - gammainc_upper(dof / 2.0, x / 2.0)
        return gammainc_lower(dof / 2.0, x / 2.0) - p

    # Wilson-Hilferty starting point
    z = _normal_quantile(p)
    h = 2.0 / (9.0 * dof)
    x = dof * max(1.0 - h + z * math.sqrt(h), 1e-3) ** 3

    lo, hi = 0.0, max(2.0 * x, 1.0)
    while residual(hi) < 0:
        lo, hi = hi, 2.0 * hi
    for _ in range(_MAX_ITER):
        f = residual(x)
        if f == 0.0:
            return x
        if f > 0:
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        dens = chi2_pdf(x, dof)
        step = f / dens if dens > 0 else math.inf
        x_new = x - step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-14 * max(abs(x_new), _TINY) or hi - lo <= 1e-15 * hi:
            return x_new
        x = x_new
    return x


def _normal_quantile(p: float) -> float:
    # Acklam's rational approximation (|rel err| < 1.2e-9); only a starting guess
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)
    plow = 0.02425
    if p < plow:
        r = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) / \
            ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0)
    if p > 1.0 - plow:
        r = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) / \
            ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0)
    r = p - 0.5
    s = r * r
    return (((((a[0] * s + a[1]) * s + a[2]) * s + a[3]) * s + a[4]) * s + a[5]) * r / \
        (((((b[0] * s + b[1]) * s + b[2]) * s + b[3]) * s + b[4]) * s + 1.0)
