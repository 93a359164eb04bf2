"""Independent reference implementations used as test oracles."""

import math
from decimal import Decimal

from scipy import integrate


def beta_cdf_quad(q, a, b):
    """Regularized incomplete beta by adaptive quadrature of the density."""
    if q <= 0:
        return 0.0
    if q >= 1:
        return 1.0
    log_norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)

    def pdf(x):
        if x <= 0 or x >= 1:
            return 0.0
        return math.exp(log_norm + (a - 1) * math.log(x) + (b - 1) * math.log1p(-x))

    mode = (a - 1) / (a + b - 2) if a > 1 and b > 1 else None
    sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
    pts = [p for p in ([mode - 3 * sd, mode, mode + 3 * sd] if mode is not None else []) if 0 < p < q]
    val, _ = integrate.quad(pdf, 0.0, q, points=pts or None, limit=500, epsabs=1e-14, epsrel=1e-13)
    return val


def beta_quantile_quad(delta, a, b, tol=1e-13):
    """Bisection on :func:`beta_cdf_quad`."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if beta_cdf_quad(mid, a, b) < delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def threshold_rank_exact(alpha, n):
    """floor(alpha (n + 1)) in exact decimal arithmetic, alpha read as its printed form."""
    return min(int((Decimal(str(alpha)) * (n + 1)).to_integral_value(rounding="ROUND_FLOOR")), n)


def kth_smallest(values, k):
    return sorted(values)[k - 1]
