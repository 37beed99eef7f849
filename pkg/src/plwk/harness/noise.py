from __future__ import annotations

from typing import Sequence

import numpy as np

from ..core import NoisyObservations, norm


def add_noise(exact_data: Sequence, noise_percent: float, rng: np.random.Generator,
              data_norm=norm) -> NoisyObservations:
    """Perturb each data vector by Gaussian noise rescaled to an exact relative size.

    ``delta_i`` equals the norm of the perturbation, so the noise bound holds
    with equality.
    """
    if noise_percent < 0:
        raise ValueError("noise_percent must be non-negative")
    data, levels = [], []
    for y in exact_data:
        y = np.asarray(y, dtype=float)
        if noise_percent == 0:
            data.append(y.copy())
            levels.append(0.0)
            continue
        e = rng.standard_normal(y.shape)
        target = noise_percent / 100.0 * data_norm(y)
        e *= target / data_norm(e)
        data.append(y + e)
        levels.append(data_norm(e))
    return NoisyObservations(tuple(data), tuple(levels))
