from __future__ import annotations

import numpy as np


def power_iteration(apply_normal, dim: int, param_norm, rng: np.random.Generator,
                    iters: int = 100, tol: float = 1e-12) -> float:
    """Largest singular value of a derivative from its normal operator ``T*T``.

    ``apply_normal(v)`` must return ``T*(T v)`` with the adjoint taken in the
    geometry defined by ``param_norm``.
    """
    v = rng.standard_normal(dim)
    v /= param_norm(v)
    sigma2 = 0.0
    for _ in range(iters):
        w = apply_normal(v)
        wn = param_norm(w)
        if wn == 0:
            return 0.0
        new = wn
        v = w / wn
        if abs(new - sigma2) <= tol * new:
            sigma2 = new
            break
        sigma2 = new
    return float(np.sqrt(sigma2))
