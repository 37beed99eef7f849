from __future__ import annotations

import numpy as np

from ..core import ZERO_TOL, OperatorSystem, PLWKError


class NoValidPairs(PLWKError):
    pass


def sample_ball(sys: OperatorSystem, radius: float, rng: np.random.Generator) -> np.ndarray:
    """A point drawn uniformly in radius from the ball of ``radius`` around the domain center."""
    d = rng.standard_normal(sys.dim)
    d *= radius * rng.uniform() ** (1.0 / sys.dim) / sys.param_norm(d)
    return sys.domain_center + d


def estimate_tcc_eta(sys: OperatorSystem, n_samples: int, radius_fraction: float,
                     rng: np.random.Generator, equations=None) -> float:
    """Empirical tangential cone constant over random pairs in a sub-ball.

    For each sampled pair ``(x, xb)`` and each equation the ratio
    ``||F(xb) - F(x) - F'(x)(xb - x)|| / ||F(xb) - F(x)||`` is formed; the
    maximum is returned. This is a lower bound for the true local constant.
    Points are drawn sequentially from ``rng``, so a larger ``n_samples`` with
    the same seed extends the sample set of a smaller one.
    """
    if not 0 < radius_fraction <= 1:
        raise ValueError("radius_fraction must lie in (0, 1]")
    radius = radius_fraction * sys.domain_radius
    equations = range(sys.n_equations) if equations is None else equations
    best = None
    for _ in range(n_samples):
        x = sample_ball(sys, radius, rng)
        xb = sample_ball(sys, radius, rng)
        for i in equations:
            fx = sys.apply_forward(i, x)
            diff = sys.apply_forward(i, xb) - fx
            dn = sys.data_norm(diff)
            if dn <= ZERO_TOL * max(sys.data_norm(fx), 1.0):
                continue
            rem = diff - sys.apply_deriv(i, x, xb - x)
            ratio = sys.data_norm(rem) / dn
            best = ratio if best is None else max(best, ratio)
    if best is None:
        raise NoValidPairs("every sampled pair had numerically identical images")
    return best
