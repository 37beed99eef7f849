"""Domain types, vector primitives and configuration validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

EPS = np.finfo(float).eps
ZERO_TOL = 1e2 * EPS


class PLWKError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PLWKError, ValueError):
    pass


class TauTooSmall(ConfigError):
    pass


class ThetaOutOfRange(ConfigError):
    pass


class LambdaMaxTooSmall(ConfigError):
    pass


class DimensionMismatch(PLWKError, ValueError):
    pass


class OutsideDomainBall(PLWKError):
    pass


class NewIterateLeftBall(PLWKError):
    pass


class SolveFailed(PLWKError):
    pass


def _as_vector(a) -> np.ndarray:
    return np.asarray(a, dtype=float).reshape(-1)


def inner(a, b) -> float:
    """Euclidean inner product of two real vectors."""
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot pair vectors of size {a.size} and {b.size}")
    return float(a @ b)


def norm(a) -> float:
    a = _as_vector(a)
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    # scale first so tiny or huge entries neither underflow nor overflow when squared
    return scale * float(np.sqrt((a / scale) @ (a / scale)))


def check_finite(a, what: str = "vector") -> np.ndarray:
    a = _as_vector(a)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite entries")
    return a


InnerProduct = Callable[[np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class OperatorSystem:
    """A finite family of operators F_0..F_{N-1} sharing one domain ball.

    The three per-equation actions take the equation index first:
    ``forward(i, x)``, ``deriv(i, x, h)`` and ``adjoint(i, x, r)``. The
    adjoint is the Hilbert adjoint with respect to ``param_inner`` and
    ``data_inner``; both default to the Euclidean product.
    """

    n_equations: int
    domain_center: np.ndarray
    domain_radius: float
    derivative_bound: float
    forward: Callable[[int, np.ndarray], np.ndarray]
    deriv: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    adjoint: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    param_inner: InnerProduct = inner
    data_inner: InnerProduct = inner
    name: str = "system"

    def __post_init__(self):
        if self.n_equations < 1:
            raise ValueError("n_equations must be positive")
        if not self.domain_radius > 0:
            raise ValueError("domain_radius must be positive")
        if not self.derivative_bound > 0:
            raise ValueError("derivative_bound must be positive")
        object.__setattr__(self, "domain_center", check_finite(self.domain_center, "domain_center"))

    @property
    def dim(self) -> int:
        return self.domain_center.size

    def param_norm(self, x) -> float:
        return float(np.sqrt(max(self.param_inner(x, x), 0.0)))

    def data_norm(self, r) -> float:
        return float(np.sqrt(max(self.data_inner(r, r), 0.0)))

    def distance_to_center(self, x) -> float:
        return self.param_norm(_as_vector(x) - self.domain_center)

    def in_ball(self, x) -> bool:
        return self.distance_to_center(x) <= self.domain_radius * (1 + 1e-12)

    def _check(self, i: int, x) -> np.ndarray:
        if not 0 <= i < self.n_equations:
            raise IndexError(f"equation index {i} out of range 0..{self.n_equations - 1}")
        x = check_finite(x, "parameter")
        if x.size != self.dim:
            raise DimensionMismatch(f"parameter has size {x.size}, expected {self.dim}")
        if not self.in_ball(x):
            raise OutsideDomainBall(
                f"||x - x0|| = {self.distance_to_center(x):.6g} exceeds rho = {self.domain_radius:.6g}"
            )
        return x

    def apply_forward(self, i: int, x) -> np.ndarray:
        return self.forward(i, self._check(i, x))

    def apply_deriv(self, i: int, x, h) -> np.ndarray:
        return self.deriv(i, self._check(i, x), _as_vector(h))

    def apply_adjoint(self, i: int, x, r) -> np.ndarray:
        return self.adjoint(i, self._check(i, x), _as_vector(r))


@dataclass(frozen=True)
class NoisyObservations:
    data: tuple
    noise_levels: tuple

    def __post_init__(self):
        data = tuple(check_finite(d, "data") for d in self.data)
        levels = tuple(float(d) for d in self.noise_levels)
        if len(data) != len(levels):
            raise ValueError("data and noise_levels must have the same length")
        if any(d < 0 for d in levels):
            raise ValueError("noise levels must be non-negative")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "noise_levels", levels)

    @classmethod
    def exact(cls, data: Sequence) -> "NoisyObservations":
        return cls(tuple(data), tuple(0.0 for _ in data))

    def __len__(self) -> int:
        return len(self.data)

    @property
    def is_exact(self) -> bool:
        return all(d == 0 for d in self.noise_levels)


@dataclass(frozen=True)
class ThetaSchedule:
    """Relaxation parameters theta_k, repeated periodically in k."""

    values: tuple = (1.0,)

    def __post_init__(self):
        vals = tuple(float(v) for v in np.atleast_1d(self.values))
        if not vals:
            raise ThetaOutOfRange("empty theta schedule")
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, theta: float) -> "ThetaSchedule":
        return cls((theta,))

    def __call__(self, k: int) -> float:
        return self.values[k % len(self.values)]

    @property
    def bounds(self) -> tuple:
        return min(self.values), max(self.values)


INDEX_POLICIES = ("cyclic", "randomized")


@dataclass(frozen=True)
class SolverConfig:
    eta: float = 0.45
    tau: float = 3.0
    theta: ThetaSchedule = field(default_factory=ThetaSchedule)
    lambda_max: Optional[float] = None
    index_policy: str = "cyclic"
    rng_seed: int = 0
    max_cycles: int = 500
    residual_floor: Optional[float] = 1e-12


def validate_config(cfg: SolverConfig, sys: OperatorSystem) -> SolverConfig:
    """Check ``cfg`` against the admissibility conditions of the method.

    Returns ``cfg`` unchanged when valid, otherwise raises a specific
    :class:`ConfigError` subclass.
    """
    try:
        eta = float(cfg.eta)
        tau = float(cfg.tau)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"eta and tau must be real numbers: {exc}") from None
    if not (0.0 <= eta < 1.0) or not np.isfinite(eta):
        raise ConfigError(f"eta must lie in [0, 1), got {cfg.eta!r}")
    if not np.isfinite(tau) or not tau > (1 + eta) / (1 - eta):
        raise TauTooSmall(f"tau = {tau} must exceed (1+eta)/(1-eta) = {(1 + eta) / (1 - eta):.6g}")
    if not isinstance(cfg.theta, ThetaSchedule):
        raise ThetaOutOfRange("theta must be a ThetaSchedule")
    a, b = cfg.theta.bounds
    if not (0.0 < a <= b < 2.0):
        raise ThetaOutOfRange(f"theta values must lie in (0, 2), got [{a}, {b}]")
    if cfg.lambda_max is not None:
        lam_floor = (1 - eta) / sys.derivative_bound**2
        if not np.isfinite(cfg.lambda_max) or not cfg.lambda_max > lam_floor:
            raise LambdaMaxTooSmall(f"lambda_max = {cfg.lambda_max} must exceed (1-eta)/C^2 = {lam_floor:.6g}")
    if cfg.index_policy not in INDEX_POLICIES:
        raise ConfigError(f"unknown index policy {cfg.index_policy!r}")
    if not isinstance(cfg.max_cycles, (int, np.integer)) or cfg.max_cycles < 1:
        raise ConfigError("max_cycles must be a positive integer")
    if not isinstance(cfg.rng_seed, (int, np.integer)) or not 0 <= cfg.rng_seed < 2**64:
        raise ConfigError("rng_seed must be an unsigned 64-bit integer")
    return cfg


@dataclass
class IterationState:
    x: np.ndarray
    k: int = 0
    active_index: int = 0
    cycle_permutation: Optional[np.ndarray] = None


@dataclass(frozen=True)
class StepRecord:
    k: int
    i: int
    residual_norm: float
    omega: int
    theta: float
    lam: float
    step_norm: float
    p_value: float = 0.0
    grad_norm: float = 0.0
    pde_solves: int = 0


@dataclass(frozen=True)
class CycleRow:
    cycle: int
    error_ref: float
    residual_sum: float
    residual_max: float
    skipped_steps: int
    cum_pde_solves: int


@dataclass
class RunRecord:
    method: str
    steps: list
    cycles: list
    stop_index: Optional[int]
    stop_reason: str
    x_final: np.ndarray
    step_errors: Optional[np.ndarray] = None
    initial_error: Optional[float] = None
    eta: float = 0.0
    n_equations: int = 1
    metadata: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.stop_reason == "converged"

    @property
    def cycles_executed(self) -> int:
        return len(self.cycles) - 1
