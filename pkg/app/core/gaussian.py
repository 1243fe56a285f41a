import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc


def normal_cdf(x: float) -> float:
    return 0.5 * float(erfc(-x / math.sqrt(2.0)))


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF by bracketed root finding on erfc"""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    # |z| < 40 covers every double-precision tail probability
    return float(brentq(lambda z: normal_cdf(z) - p, -40.0, 40.0, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500))


def chance_quantile(eta: float) -> float:
    """Safety factor for a single chance constraint with violation tolerance eta"""
    if not 0.0 < eta < 0.5:
        raise ValueError(f"violation tolerance must lie in (0, 0.5), got {eta}")
    return normal_quantile(1.0 - eta)
