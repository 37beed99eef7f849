"""Single projective Landweber-Kaczmarz step and its ingredients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    ZERO_TOL,
    IterationState,
    NewIterateLeftBall,
    NoisyObservations,
    OperatorSystem,
    SolverConfig,
    StepRecord,
    norm,
)


def compute_omega(residual_norm: float, delta_i: float, tau: float) -> int:
    """Bang-bang switch: 1 iff the residual strictly exceeds ``tau * delta_i``."""
    return 1 if residual_norm > tau * delta_i else 0


def compute_p(t: float, eta: float, delta_i: float) -> float:
    return t * ((1.0 - eta) * t - (1.0 + eta) * delta_i)


def compute_lambda(p_value: float, grad, lambda_max: Optional[float] = None, *,
                   norm_fn=norm, zero_scale: float = 1.0) -> float:
    """Step size ``p / ||g||^2``, optionally truncated at ``lambda_max``.

    ``grad`` is ``F_i'(x)^* (F_i(x) - y_i)``. A gradient whose norm is below
    ``ZERO_TOL * zero_scale`` counts as zero and gives a zero step.
    """
    gn = norm_fn(grad)
    if gn <= ZERO_TOL * zero_scale:
        return 0.0
    lam = p_value / gn**2
    if lambda_max is not None:
        lam = min(lam, lambda_max)
    return lam


@dataclass(frozen=True)
class Halfspace:
    """The closed set ``{z : <z - anchor, gradient> <= offset}``."""

    anchor: np.ndarray
    gradient: np.ndarray
    offset: float
    inner: object = None

    def _inner(self, a, b):
        return float(a @ b) if self.inner is None else self.inner(a, b)

    def contains(self, z, rtol: float = 1e-12) -> bool:
        lhs = self._inner(np.asarray(z, dtype=float) - self.anchor, self.gradient)
        scale = abs(self.offset) + abs(lhs)
        return lhs <= self.offset + rtol * scale

    def project(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        gg = self._inner(self.gradient, self.gradient)
        excess = self._inner(z - self.anchor, self.gradient) - self.offset
        if excess <= 0 or gg == 0:
            return z.copy()
        return z - (excess / gg) * self.gradient


def build_halfspace(sys: OperatorSystem, i: int, x, y_i_delta, delta_i: float, eta: float) -> Halfspace:
    x = np.asarray(x, dtype=float)
    r = sys.apply_forward(i, x) - y_i_delta
    g = sys.apply_adjoint(i, x, r)
    rn = sys.data_norm(r)
    offset = -rn * ((1 - eta) * rn - (1 + eta) * delta_i)
    return Halfspace(anchor=x.copy(), gradient=g, offset=offset, inner=sys.param_inner)


def _finish(sys: OperatorSystem, x, x_new) -> None:
    if not sys.in_ball(x_new):
        raise NewIterateLeftBall(
            f"step left the domain ball: ||x_new - x0|| = {sys.distance_to_center(x_new):.6g} "
            f"> rho = {sys.domain_radius:.6g}; the configured eta may be too small"
        )


def plwk_step(sys: OperatorSystem, state: IterationState, obs: NoisyObservations,
              cfg: SolverConfig, i: int, residual: Optional[np.ndarray] = None):
    """One PLWK step on equation ``i`` from ``state.x``.

    ``residual`` may carry a precomputed ``F_i(x) - y_i^delta`` to save the
    forward solve. Returns ``(x_new, StepRecord)``.
    """
    x = state.x
    solves = 0
    if residual is None:
        residual = sys.apply_forward(i, x) - obs.data[i]
        solves += 1
    delta = obs.noise_levels[i]
    theta = cfg.theta(state.k)
    rn = sys.data_norm(residual)
    omega = compute_omega(rn, delta, cfg.tau)
    if omega == 0:
        rec = StepRecord(state.k, i, rn, 0, theta, 0.0, 0.0, pde_solves=solves)
        return x, rec
    g = sys.apply_adjoint(i, x, residual)
    solves += 1
    gn = sys.param_norm(g)
    p = compute_p(rn, cfg.eta, delta)
    lam = compute_lambda(p, g, cfg.lambda_max, norm_fn=sys.param_norm,
                         zero_scale=1.0 + rn * sys.derivative_bound)
    x_new = x - (theta * lam) * g
    _finish(sys, x, x_new)
    rec = StepRecord(state.k, i, rn, 1, theta, lam, sys.param_norm(x_new - x), p, gn, solves)
    return x_new, rec
